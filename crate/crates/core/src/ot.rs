//! Entropic optimal transport between weighted point clouds.
//!
//! Log-domain Sinkhorn with ε-scaling: the blur starts at the largest cost and
//! is halved towards the target, carrying the dual potentials along, with a
//! single sweep per intermediate blur. At the target blur the iterations run
//! until the marginal error drops below `tol`; the cross problem optionally
//! switches to over-relaxed updates with ω = 2/(1 + √(1 − r)), r being the
//! measured plain contraction rate.

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::numerics::rng::validate_probability;
use crate::numerics::{sq_dist, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Matrix,
    weights: Vec<f64>,
}

impl PointCloud {
    /// Uniform weights over the rows of `points`.
    pub fn uniform(points: Matrix) -> Result<Self> {
        let n = points.rows();
        if n == 0 {
            return Err(Error::Parameter("point cloud needs at least one point".into()));
        }
        Ok(Self { points, weights: vec![1.0 / n as f64; n] })
    }

    pub fn with_weights(points: Matrix, weights: Vec<f64>) -> Result<Self> {
        if points.rows() == 0 || weights.len() != points.rows() {
            return dim_err(format!("{} points with {} weights", points.rows(), weights.len()));
        }
        validate_probability(&weights, 1e-9, "cloud weights")?;
        Ok(Self { points, weights })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::uniform(Matrix::from_rows(rows)?)
    }

    pub fn len(&self) -> usize {
        self.points.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.cols()
    }

    pub fn points(&self) -> &Matrix {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Blur, iteration cap and marginal tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinkhornConfig {
    pub eps: f64,
    pub max_iters: usize,
    pub tol: f64,
    /// Over-relax the potentials once the plain contraction rate is known.
    /// Pays off over hundreds of iterations; the first few dozen after the
    /// switch can overshoot, so short capped runs should leave it off.
    #[serde(default = "yes")]
    pub extrapolate: bool,
}

fn yes() -> bool {
    true
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self { eps: 0.05, max_iters: 500, tol: 1e-6, extrapolate: true }
    }
}

impl SinkhornConfig {
    pub fn with_eps(eps: f64) -> Self {
        Self { eps, ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SinkhornResult {
    /// `⟨Π, C⟩ + ε·KL(Π‖a⊗b)`, evaluated in dual form.
    pub value: f64,
    /// `⟨Π, C⟩` alone.
    pub transport_cost: f64,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub coupling: Matrix,
    pub iterations: usize,
    pub marginal_error: f64,
    pub converged: bool,
}

/// `C_ij = ½‖x_i − y_j‖²`.
pub fn cost_matrix(x: &PointCloud, y: &PointCloud) -> Result<Matrix> {
    if x.dim() != y.dim() {
        return dim_err(format!("cost between clouds of dimension {} and {}", x.dim(), y.dim()));
    }
    let mut c = Matrix::zeros(x.len(), y.len());
    for i in 0..x.len() {
        let xi = x.points.row(i);
        for (j, cij) in c.row_mut(i).iter_mut().enumerate() {
            *cij = 0.5 * sq_dist(xi, y.points.row(j));
        }
    }
    Ok(c)
}

/// `-ε log Σ_k w_k exp((p_k − c_k)/ε)` with max-subtraction.
#[inline]
fn softmin(eps: f64, log_w: &[f64], p: &[f64], c: impl Iterator<Item = f64>, buf: &mut [f64]) -> f64 {
    let mut mx = f64::NEG_INFINITY;
    for (((b, lw), pk), ck) in buf.iter_mut().zip(log_w).zip(p).zip(c) {
        *b = lw + (pk - ck) / eps;
        mx = mx.max(*b);
    }
    // terms below e^-40 of the largest cannot move the sum; skipping them also avoids subnormal exp
    let s: f64 = buf.iter().map(|b| b - mx).filter(|d| *d > -40.0).map(f64::exp).sum();
    -eps * (mx + s.ln())
}

struct Solver<'a> {
    c: &'a Matrix,
    ct: Matrix,
    log_a: Vec<f64>,
    log_b: Vec<f64>,
    buf: Vec<f64>,
}

impl Solver<'_> {
    fn update_f(&mut self, eps: f64, g: &[f64], f: &mut [f64]) {
        for (i, fi) in f.iter_mut().enumerate() {
            *fi = softmin(eps, &self.log_b, g, self.c.row(i).iter().copied(), &mut self.buf[..g.len()]);
        }
    }

    fn update_g(&mut self, eps: f64, f: &[f64], g: &mut [f64]) {
        for (j, gj) in g.iter_mut().enumerate() {
            *gj = softmin(eps, &self.log_a, f, self.ct.row(j).iter().copied(), &mut self.buf[..f.len()]);
        }
    }
}

/// Entropic OT between `x` and `y` under the quadratic cost.
pub fn ot_eps(x: &PointCloud, y: &PointCloud, cfg: &SinkhornConfig) -> Result<SinkhornResult> {
    let c = cost_matrix(x, y)?;
    if x == y {
        ot_eps_symmetric(&c, x.weights(), cfg)
    } else {
        ot_eps_with_cost(&c, x.weights(), y.weights(), cfg)
    }
}

fn check_args(c: &Matrix, a: &[f64], b: &[f64], cfg: &SinkhornConfig) -> Result<()> {
    if !(cfg.eps > 0.0) || !cfg.eps.is_finite() {
        return Err(Error::Parameter(format!("blur must be positive, got {}", cfg.eps)));
    }
    if !(cfg.tol > 0.0) {
        return Err(Error::Parameter(format!("tolerance must be positive, got {}", cfg.tol)));
    }
    let (n, m) = c.shape();
    if a.len() != n || b.len() != m || n == 0 || m == 0 {
        return dim_err(format!("{n}x{m} cost with {} and {} weights", a.len(), b.len()));
    }
    c.ensure_finite("cost matrix")
}

/// Self-transport `OT_ε(X, X)` with the averaged symmetric update
/// `f ← ½(f + softmin(f))`; alternating updates crawl on this problem.
pub fn ot_eps_symmetric(c: &Matrix, a: &[f64], cfg: &SinkhornConfig) -> Result<SinkhornResult> {
    check_args(c, a, a, cfg)?;
    let eps = cfg.eps;
    let n = a.len();
    let mut s = Solver { c, ct: Matrix::zeros(0, 0), log_a: a.iter().map(|w| w.ln()).collect(), log_b: Vec::new(), buf: vec![0.0; n] };
    s.log_b = s.log_a.clone();
    let mut f = vec![0.0; n];
    let mut tf = vec![0.0; n];
    let mut iterations = 0;
    let c_max = c.data().iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    let mut stage = c_max.max(eps);
    while stage > eps {
        s.update_f(stage, &f, &mut tf);
        f.iter_mut().zip(&tf).for_each(|(u, t)| *u = 0.5 * (*u + t));
        iterations += 1;
        stage = (stage * 0.5).max(eps);
    }
    let mut row_err = f64::INFINITY;
    for _ in 0..cfg.max_iters.max(1) {
        s.update_f(eps, &f, &mut tf);
        iterations += 1;
        row_err = f
            .iter()
            .zip(&tf)
            .zip(a)
            .map(|((fi, ti), ai)| (ai * ((fi - ti) / eps).exp() - ai).abs())
            .fold(0.0, f64::max);
        if row_err <= cfg.tol {
            break;
        }
        f.iter_mut().zip(&tf).for_each(|(u, t)| *u = 0.5 * (*u + t));
    }
    finish(c, a, a, f.clone(), f, eps, iterations, row_err, cfg.tol)
}

/// Entropic OT for an explicit cost matrix.
pub fn ot_eps_with_cost(c: &Matrix, a: &[f64], b: &[f64], cfg: &SinkhornConfig) -> Result<SinkhornResult> {
    check_args(c, a, b, cfg)?;
    let eps = cfg.eps;
    let (n, m) = c.shape();
    let mut s = Solver {
        c,
        ct: c.transpose(),
        log_a: a.iter().map(|w| w.ln()).collect(),
        log_b: b.iter().map(|w| w.ln()).collect(),
        buf: vec![0.0; n.max(m)],
    };
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let mut f_next = vec![0.0; n];
    let mut iterations = 0;

    let c_max = c.data().iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    let mut stage = c_max.max(eps);
    while stage > eps {
        s.update_f(stage, &g, &mut f);
        s.update_g(stage, &f, &mut g);
        iterations += 1;
        stage = (stage * 0.5).max(eps);
        if stage == eps {
            break;
        }
    }

    s.update_f(eps, &g, &mut f);
    let mut g_plain = vec![0.0; m];
    let mut err = f64::INFINITY;
    let mut history = Vec::new();
    let mut omega = 1.0;
    // last iterate before extrapolation started, restored if it misbehaves
    let mut fallback: Option<(Vec<f64>, Vec<f64>, f64)> = None;
    let mut may_extrapolate = cfg.extrapolate;
    for k in 0..cfg.max_iters.max(1) {
        s.update_g(eps, &f, &mut g_plain);
        relax(&mut g, &g_plain, omega);
        s.update_f(eps, &g, &mut f_next);
        iterations += 1;
        // row sums of the plan (f, g) are a_i·exp((f_i − f_next_i)/ε), column sums b_j·exp((g_j − g_plain_j)/ε)
        err = marginal_gap(&f, &f_next, a, eps).max(marginal_gap(&g, &g_plain, b, eps));
        if err <= cfg.tol {
            break;
        }
        if let Some((_, _, e0)) = &fallback {
            if !err.is_finite() || err > 1e4 * e0 {
                let (f0, g0, e0) = fallback.take().expect("checked");
                (f, g, err, omega) = (f0, g0, e0, 1.0);
                may_extrapolate = false;
                continue;
            }
        }
        relax(&mut f, &f_next, omega);
        history.push(err);
        if may_extrapolate && omega == 1.0 && history.len() > RATE_WINDOW + 10 {
            let r = (err / history[history.len() - 1 - RATE_WINDOW]).powf(1.0 / RATE_WINDOW as f64);
            if r > 0.5 && r < 1.0 && k + 1 < cfg.max_iters {
                omega = (2.0 / (1.0 + (1.0 - r).sqrt())).min(1.95);
                fallback = Some((f.clone(), g.clone(), err));
            }
        }
    }
    finish(c, a, b, f, g, eps, iterations, err, cfg.tol)
}

/// Iterations used to estimate the plain contraction rate before extrapolating.
const RATE_WINDOW: usize = 10;

/// `p ← (1 − ω)·p + ω·target`: over-relaxed potential update (ω = 1 is plain Sinkhorn).
fn relax(p: &mut [f64], target: &[f64], omega: f64) {
    if omega == 1.0 {
        p.copy_from_slice(target);
    } else {
        p.iter_mut().zip(target).for_each(|(u, t)| *u += omega * (t - *u));
    }
}

fn marginal_gap(p: &[f64], plain: &[f64], w: &[f64], eps: f64) -> f64 {
    p.iter().zip(plain).zip(w).map(|((u, t), wi)| (wi * ((u - t) / eps).exp() - wi).abs()).fold(0.0, f64::max)
}

#[allow(clippy::too_many_arguments)]
fn finish(
    c: &Matrix,
    a: &[f64],
    b: &[f64],
    f: Vec<f64>,
    g: Vec<f64>,
    eps: f64,
    iterations: usize,
    row_err: f64,
    tol: f64,
) -> Result<SinkhornResult> {
    if !row_err.is_finite() || f.iter().chain(&g).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("sinkhorn potentials became non-finite".into()));
    }
    let (n, m) = c.shape();
    let (log_a, log_b): (Vec<f64>, Vec<f64>) = (a.iter().map(|w| w.ln()).collect(), b.iter().map(|w| w.ln()).collect());
    let mut coupling = Matrix::zeros(n, m);
    let mut mass = 0.0;
    let mut transport_cost = 0.0;
    for i in 0..n {
        for j in 0..m {
            let p = (log_a[i] + log_b[j] + (f[i] + g[j] - c[(i, j)]) / eps).exp();
            coupling[(i, j)] = p;
            mass += p;
            transport_cost += p * c[(i, j)];
        }
    }
    let row_marg = (0..n).map(|i| (coupling.row(i).iter().sum::<f64>() - a[i]).abs()).fold(0.0, f64::max);
    let col_marg = (0..m).map(|j| ((0..n).map(|i| coupling[(i, j)]).sum::<f64>() - b[j]).abs()).fold(0.0, f64::max);
    let dual: f64 = f.iter().zip(a).map(|(u, w)| u * w).sum::<f64>() + g.iter().zip(b).map(|(u, w)| u * w).sum::<f64>();
    Ok(SinkhornResult {
        value: dual - eps * (mass - 1.0),
        transport_cost,
        f,
        g,
        coupling,
        iterations,
        marginal_error: row_marg.max(col_marg),
        converged: row_err <= tol,
    })
}

/// Debiased divergence with the three sub-problems that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Divergence {
    pub value: f64,
    pub cross: SinkhornResult,
    pub self_x: SinkhornResult,
    pub self_y: SinkhornResult,
}

impl Divergence {
    pub fn converged(&self) -> bool {
        self.cross.converged && self.self_x.converged && self.self_y.converged
    }
}

pub fn divergence(x: &PointCloud, y: &PointCloud, cfg: &SinkhornConfig) -> Result<Divergence> {
    let cross = ot_eps(x, y, cfg)?;
    let self_x = ot_eps(x, x, cfg)?;
    let self_y = ot_eps(y, y, cfg)?;
    Ok(Divergence { value: cross.value - 0.5 * self_x.value - 0.5 * self_y.value, cross, self_x, self_y })
}

/// `S_ε(X,Y) = OT_ε(X,Y) − ½OT_ε(X,X) − ½OT_ε(Y,Y)`.
pub fn sinkhorn_divergence(x: &PointCloud, y: &PointCloud, cfg: &SinkhornConfig) -> Result<f64> {
    Ok(divergence(x, y, cfg)?.value)
}

/// `∂S/∂x` from the converged couplings of `d` (envelope form).
pub fn divergence_gradient_from(x: &PointCloud, y: &PointCloud, d: &Divergence) -> Result<Matrix> {
    let (n, dim) = x.points.shape();
    if y.dim() != dim || d.cross.coupling.shape() != (n, y.len()) || d.self_x.coupling.shape() != (n, n) {
        return dim_err("divergence couplings do not match the clouds");
    }
    let pxy = &d.cross.coupling;
    let pxx = &d.self_x.coupling;
    let mut grad = Matrix::zeros(n, dim);
    for i in 0..n {
        let xi = x.points.row(i).to_vec();
        let gi = grad.row_mut(i);
        for j in 0..y.len() {
            let w = pxy[(i, j)];
            if w == 0.0 {
                continue;
            }
            for ((g, a), b) in gi.iter_mut().zip(&xi).zip(y.points.row(j)) {
                *g += w * (a - b);
            }
        }
        for j in 0..n {
            let w = 0.5 * (pxx[(i, j)] + pxx[(j, i)]);
            if w == 0.0 || i == j {
                continue;
            }
            for ((g, a), b) in gi.iter_mut().zip(&xi).zip(x.points.row(j)) {
                *g -= w * (a - b);
            }
        }
    }
    Ok(grad)
}

/// Gradient of the divergence with respect to the points of `x`.
/// Fails with `NoConvergence` if any of the three sub-problems did not converge.
pub fn divergence_gradient(x: &PointCloud, y: &PointCloud, cfg: &SinkhornConfig) -> Result<Matrix> {
    let d = divergence(x, y, cfg)?;
    if !d.converged() {
        let iterations = d.cross.iterations.max(d.self_x.iterations).max(d.self_y.iterations);
        return Err(Error::NoConvergence { iterations });
    }
    divergence_gradient_from(x, y, &d)
}

/// For every `i`, the `j` carrying the most coupling mass (smallest `j` on ties).
pub fn align(x: &PointCloud, y: &PointCloud, cfg: &SinkhornConfig) -> Result<Vec<usize>> {
    let r = ot_eps(x, y, cfg)?;
    Ok(argmax_rows(&r.coupling))
}

pub(crate) fn argmax_rows(p: &Matrix) -> Vec<usize> {
    (0..p.rows())
        .map(|i| {
            let row = p.row(i);
            let mut best = 0;
            for (j, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
