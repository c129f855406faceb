use serde::{Deserialize, Serialize};

use super::eig::symmetric_eigen;
use super::matrix::{dot, Matrix};
use crate::error::{dim_err, Result};

/// Principal axes of a point cloud. `components` holds one unit axis per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaBasis {
    pub mean: Vec<f64>,
    pub components: Matrix,
    pub explained_variance: Vec<f64>,
}

/// Fit the top-`k` principal components of the rows of `data` via the sample
/// covariance (n - 1 denominator).
pub fn pca_fit(data: &Matrix, k: usize) -> Result<PcaBasis> {
    let (n, h) = data.shape();
    if n < 2 {
        return dim_err(format!("pca needs at least 2 samples, got {n}"));
    }
    if k == 0 || k > n.min(h) {
        return dim_err(format!("k = {k} outside 1..={}", n.min(h)));
    }
    data.ensure_finite("pca input")?;
    let mut mean = vec![0.0; h];
    for i in 0..n {
        for (m, x) in mean.iter_mut().zip(data.row(i)) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let mut cov = Matrix::zeros(h, h);
    let mut centered = vec![0.0; h];
    for i in 0..n {
        for ((c, x), m) in centered.iter_mut().zip(data.row(i)).zip(&mean) {
            *c = x - m;
        }
        for a in 0..h {
            let ca = centered[a];
            if ca == 0.0 {
                continue;
            }
            let row = cov.row_mut(a);
            for b in a..h {
                row[b] += ca * centered[b];
            }
        }
    }
    let denom = (n - 1) as f64;
    for a in 0..h {
        for b in a..h {
            let v = cov[(a, b)] / denom;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    let (values, vectors) = symmetric_eigen(&cov)?;
    let components = Matrix::from_fn(k, h, |r, c| vectors[(r, c)]);
    // round-off can leave tiny negative variances on degenerate data
    let explained_variance = values[..k].iter().map(|v| v.max(0.0)).collect();
    Ok(PcaBasis { mean, components, explained_variance })
}

impl PcaBasis {
    pub fn k(&self) -> usize {
        self.components.rows()
    }

    pub fn width(&self) -> usize {
        self.mean.len()
    }

    /// Coordinates of each state row on the principal axes.
    pub fn project(&self, states: &Matrix) -> Result<Matrix> {
        if states.cols() != self.width() {
            return dim_err(format!("states have width {}, basis expects {}", states.cols(), self.width()));
        }
        let k = self.k();
        let mut out = Matrix::zeros(states.rows(), k);
        let mut centered = vec![0.0; self.width()];
        for i in 0..states.rows() {
            for ((c, x), m) in centered.iter_mut().zip(states.row(i)).zip(&self.mean) {
                *c = x - m;
            }
            for j in 0..k {
                out[(i, j)] = dot(&centered, self.components.row(j));
            }
        }
        Ok(out)
    }

    pub fn project_one(&self, state: &[f64]) -> Result<Vec<f64>> {
        let m = Matrix::from_vec(1, state.len(), state.to_vec())?;
        Ok(self.project(&m)?.into_vec())
    }

    /// Map coordinates back into state space.
    pub fn back_project(&self, coords: &Matrix) -> Result<Matrix> {
        if coords.cols() != self.k() {
            return dim_err(format!("coordinates have width {}, basis has k = {}", coords.cols(), self.k()));
        }
        let mut out = Matrix::zeros(coords.rows(), self.width());
        for i in 0..coords.rows() {
            let row = out.row_mut(i);
            row.copy_from_slice(&self.mean);
            for j in 0..self.k() {
                let c = coords[(i, j)];
                for (o, v) in row.iter_mut().zip(self.components.row(j)) {
                    *o += c * v;
                }
            }
        }
        Ok(out)
    }
}
