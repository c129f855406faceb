//! Hidden Markov model families, sampling, and analytic observation statistics.
//!
//! States and observations are 0-based here; reports add 1 when printing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::rng::validate_probability;
use crate::numerics::{solve, Matrix, RngStream};

/// Number of observation symbols used throughout.
pub const N_OBS: usize = 3;

/// Transition matrix, emission matrix and initial distribution of one HMM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "HmmJson", into = "HmmJson")]
pub struct HmmSpec {
    transition: Matrix,
    emission: Matrix,
    initial: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct HmmJson {
    #[serde(rename = "M")]
    m: usize,
    #[serde(rename = "K")]
    k: usize,
    #[serde(rename = "T")]
    t: Vec<Vec<f64>>,
    #[serde(rename = "E")]
    e: Vec<Vec<f64>>,
    pi0: Vec<f64>,
}

impl TryFrom<HmmJson> for HmmSpec {
    type Error = Error;

    fn try_from(j: HmmJson) -> Result<Self> {
        let spec = HmmSpec::new(Matrix::from_rows(&j.t)?, Matrix::from_rows(&j.e)?, j.pi0)?;
        if spec.n_states() != j.m || spec.n_obs() != j.k {
            return Err(Error::Validation(format!(
                "declared M={}, K={} but matrices are {}x{} / {}x{}",
                j.m,
                j.k,
                spec.transition.rows(),
                spec.transition.cols(),
                spec.emission.rows(),
                spec.emission.cols()
            )));
        }
        Ok(spec)
    }
}

impl From<HmmSpec> for HmmJson {
    fn from(s: HmmSpec) -> Self {
        HmmJson {
            m: s.n_states(),
            k: s.n_obs(),
            t: s.transition.to_rows(),
            e: s.emission.to_rows(),
            pi0: s.initial,
        }
    }
}

/// Built-in topologies besides the linear chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    FullyConnected,
    Cyclic,
}

impl HmmSpec {
    pub fn new(transition: Matrix, emission: Matrix, initial: Vec<f64>) -> Result<Self> {
        let m = transition.rows();
        if m == 0 || !transition.is_square() {
            return Err(Error::Validation(format!(
                "transition matrix must be square and nonempty, got {}x{}",
                transition.rows(),
                transition.cols()
            )));
        }
        if emission.rows() != m || emission.cols() == 0 {
            return Err(Error::Validation(format!(
                "emission matrix must have {m} rows, got {}x{}",
                emission.rows(),
                emission.cols()
            )));
        }
        if initial.len() != m {
            return Err(Error::Validation(format!("pi0 has {} entries, expected {m}", initial.len())));
        }
        for i in 0..m {
            validate_probability(transition.row(i), 1e-12, &format!("T row {i}"))?;
            validate_probability(emission.row(i), 1e-12, &format!("E row {i}"))?;
        }
        if transition.data().iter().chain(emission.data()).any(|&x| x > 1.0) {
            return Err(Error::Validation("probabilities must lie in [0, 1]".into()));
        }
        validate_probability(&initial, 1e-12, "pi0")?;
        Ok(Self { transition, emission, initial })
    }

    pub fn n_states(&self) -> usize {
        self.transition.rows()
    }

    pub fn n_obs(&self) -> usize {
        self.emission.cols()
    }

    pub fn transition(&self) -> &Matrix {
        &self.transition
    }

    pub fn emission(&self) -> &Matrix {
        &self.emission
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// The band-diagonal chain with linearly interpolated emissions.
///
/// `q = rho^(1/(M-1))` is the step probability to each neighbour, so the far end
/// is reached in `M - 1` steps with probability `rho`.
pub fn build_linear_chain(m: usize, rho: f64, eps: f64) -> Result<HmmSpec> {
    if m < 2 {
        return Err(Error::Parameter(format!("linear chain needs M >= 2, got {m}")));
    }
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::Parameter(format!("rho must lie in (0, 1), got {rho}")));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Parameter(format!("epsilon must lie in (0, 1), got {eps}")));
    }
    let q = rho.powf(1.0 / (m - 1) as f64);
    if q >= 0.5 {
        return Err(Error::Parameter(format!(
            "step probability q = {q} must be below 1/2 for M = {m}, rho = {rho}"
        )));
    }
    let mut t = Matrix::zeros(m, m);
    for i in 0..m {
        let end = i == 0 || i == m - 1;
        t[(i, i)] = if end { 1.0 - q } else { 1.0 - 2.0 * q };
        if i > 0 {
            t[(i, i - 1)] = q;
        }
        if i + 1 < m {
            t[(i, i + 1)] = q;
        }
    }
    let e = Matrix::from_fn(m, N_OBS, |i, o| {
        let alpha = i as f64 / (m - 1) as f64;
        match o {
            0 => (1.0 - eps) * (1.0 - alpha),
            1 => eps,
            _ => (1.0 - eps) * alpha,
        }
    });
    HmmSpec::new(t, e, vec![1.0 / m as f64; m])
}

/// Default fully-connected (3 states) and cyclic (4 states) models.
pub fn build_preset(kind: Preset) -> HmmSpec {
    let (t, e) = match kind {
        Preset::FullyConnected => {
            let t = Matrix::from_fn(3, 3, |i, j| if i == j { 0.90 } else { 0.05 });
            let e = Matrix::from_fn(3, 3, |i, o| if i == o { 0.90 } else { 0.05 });
            (t, e)
        }
        Preset::Cyclic => {
            let t = Matrix::from_fn(4, 4, |i, j| {
                if i == j {
                    0.90
                } else if (i + 1) % 4 == j || (j + 1) % 4 == i {
                    0.05
                } else {
                    0.0
                }
            });
            // (dominant, weak) output per state; ring neighbours share one output
            let pairs = [(0, 1), (1, 2), (2, 1), (1, 0)];
            let e = Matrix::from_fn(4, 3, |i, o| {
                let (dom, weak) = pairs[i];
                if o == dom {
                    0.70
                } else if o == weak {
                    0.29
                } else {
                    0.01
                }
            });
            (t, e)
        }
    };
    let m = t.rows();
    HmmSpec::new(t, e, vec![1.0 / m as f64; m]).expect("preset matrices are stochastic")
}

/// A sequence of observation indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObsSequence {
    pub observations: Vec<usize>,
    pub n_symbols: usize,
}

impl ObsSequence {
    pub fn new(observations: Vec<usize>, n_symbols: usize) -> Result<Self> {
        if let Some(bad) = observations.iter().find(|&&o| o >= n_symbols) {
            return Err(Error::Validation(format!("observation {bad} >= alphabet size {n_symbols}")));
        }
        Ok(Self { observations, n_symbols })
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn one_hot(&self) -> Matrix {
        let mut m = Matrix::zeros(self.len(), self.n_symbols);
        for (t, &o) in self.observations.iter().enumerate() {
            m[(t, o)] = 1.0;
        }
        m
    }

    /// Row-major flattening of the one-hot view (length `len · n_symbols`).
    pub fn flat_one_hot(&self) -> Vec<f64> {
        self.one_hot().into_vec()
    }
}

/// Draw a hidden-state path and its observations.
pub fn sample(spec: &HmmSpec, len: usize, stream: &mut RngStream) -> (Vec<usize>, ObsSequence) {
    let mut states = Vec::with_capacity(len);
    let mut obs = Vec::with_capacity(len);
    let mut s = stream.categorical_unchecked(spec.initial());
    for t in 0..len {
        if t > 0 {
            s = stream.categorical_unchecked(spec.transition.row(s));
        }
        states.push(s);
        obs.push(stream.categorical_unchecked(spec.emission.row(s)));
    }
    let seq = ObsSequence { observations: obs, n_symbols: spec.n_obs() };
    (states, seq)
}

/// Some power of `T` strictly positive (Wielandt bound `(M-1)^2 + 1`).
fn is_primitive(t: &Matrix) -> bool {
    let m = t.rows();
    let pattern = Matrix::from_fn(m, m, |i, j| if t[(i, j)] > 0.0 { 1.0 } else { 0.0 });
    let bound = (m - 1) * (m - 1) + 1;
    let mut power = pattern.clone();
    for _ in 1..bound {
        if power.data().iter().all(|&x| x > 0.0) {
            return true;
        }
        power = power.matmul(&pattern).expect("square");
        power.data_mut().iter_mut().for_each(|x| *x = if *x > 0.0 { 1.0 } else { 0.0 });
    }
    power.data().iter().all(|&x| x > 0.0)
}

/// Left fixed point `π T = π` of an irreducible aperiodic chain.
pub fn stationary_distribution(spec: &HmmSpec) -> Result<Vec<f64>> {
    let t = &spec.transition;
    let m = t.rows();
    if !is_primitive(t) {
        return Err(Error::Structure("transition matrix is reducible or periodic".into()));
    }
    // (Tᵀ - I) π = 0 with the last equation replaced by Σπ = 1
    let mut a = Matrix::from_fn(m, m, |i, j| t[(j, i)] - if i == j { 1.0 } else { 0.0 });
    let mut b = vec![0.0; m];
    for j in 0..m {
        a[(m - 1, j)] = 1.0;
    }
    b[m - 1] = 1.0;
    let mut pi = solve(&a, &b)?;
    // one power step polishes the residual and clears tiny negative round-off
    pi = t.vec_mul(&pi)?;
    pi.iter_mut().for_each(|p| *p = p.max(0.0));
    let s: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|p| *p /= s);
    Ok(pi)
}

/// Joint probability `P(o_t = i, o_{t+1} = j)` under stationarity.
pub fn obs_joint_matrix(spec: &HmmSpec) -> Result<Matrix> {
    let pi = stationary_distribution(spec)?;
    let (m, k) = (spec.n_states(), spec.n_obs());
    let te = spec.transition.matmul(&spec.emission)?;
    let mut joint = Matrix::zeros(k, k);
    for s in 0..m {
        for i in 0..k {
            let w = pi[s] * spec.emission[(s, i)];
            if w == 0.0 {
                continue;
            }
            for j in 0..k {
                joint[(i, j)] += w * te[(s, j)];
            }
        }
    }
    Ok(joint)
}

/// `P(o_{t+1} = j | o_t = i)` under stationarity.
pub fn obs_pair_matrix(spec: &HmmSpec) -> Result<Matrix> {
    let joint = obs_joint_matrix(spec)?;
    let k = joint.rows();
    let mut out = Matrix::zeros(k, k);
    for i in 0..k {
        let z: f64 = joint.row(i).iter().sum();
        if z <= 0.0 {
            return Err(Error::UndefinedRow(i));
        }
        for j in 0..k {
            out[(i, j)] = joint[(i, j)] / z;
        }
    }
    Ok(out)
}

/// Stationary observation frequencies `πᵀ E`.
pub fn obs_frequencies(spec: &HmmSpec) -> Result<Vec<f64>> {
    let pi = stationary_distribution(spec)?;
    spec.emission.vec_mul(&pi)
}

/// Probability that consecutive observations differ, under stationarity.
pub fn obs_volatility(spec: &HmmSpec) -> Result<f64> {
    let joint = obs_joint_matrix(spec)?;
    Ok(1.0 - joint.trace())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_state_chain_matches_closed_form() {
        let s = build_linear_chain(2, 0.05, 0.01).unwrap();
        let t = Matrix::from_rows(&[vec![0.95, 0.05], vec![0.05, 0.95]]).unwrap();
        let e = Matrix::from_rows(&[vec![0.99, 0.01, 0.0], vec![0.0, 0.01, 0.99]]).unwrap();
        assert!(s.transition().max_abs_diff(&t) < 1e-15);
        assert!(s.emission().max_abs_diff(&e) < 1e-15);
    }

    #[test]
    fn five_state_chain() {
        let s = build_linear_chain(5, 0.05, 0.01).unwrap();
        let q = 0.05f64.powf(0.25);
        assert!((s.transition()[(2, 2)] - (1.0 - 2.0 * q)).abs() < 1e-15);
        let row = s.emission().row(2);
        assert!((row[0] - 0.495).abs() < 1e-15 && (row[1] - 0.01).abs() < 1e-15 && (row[2] - 0.495).abs() < 1e-15);
        assert!((q.powi(4) - 0.05).abs() < 1e-15);
    }

    #[test]
    fn rejects_out_of_simplex_chain() {
        assert!(matches!(build_linear_chain(3, 1.0, 0.01), Err(Error::Parameter(_))));
        assert!(matches!(build_linear_chain(3, 0.3, 0.01), Err(Error::Parameter(_))));
        assert!(build_linear_chain(1, 0.05, 0.01).is_err());
    }

    #[test]
    fn presets_respect_topology() {
        let fc = build_preset(Preset::FullyConnected);
        assert!(fc.transition().data().iter().all(|&x| x > 0.0));
        let mut argmax: Vec<usize> = (0..3)
            .map(|i| (0..3).max_by(|&a, &b| fc.emission()[(i, a)].total_cmp(&fc.emission()[(i, b)])).unwrap())
            .collect();
        argmax.sort();
        assert_eq!(argmax, vec![0, 1, 2]);

        let cy = build_preset(Preset::Cyclic);
        for i in 0..4 {
            for j in 0..4 {
                let neighbour = j == i || j == (i + 1) % 4 || (j + 1) % 4 == i;
                if !neighbour {
                    assert_eq!(cy.transition()[(i, j)], 0.0);
                }
            }
            let (a, b) = (cy.emission().row(i), cy.emission().row((i + 1) % 4));
            let strong = |r: &[f64]| (0..3).filter(|&o| r[o] > 0.2).collect::<Vec<_>>();
            assert!(strong(a).iter().any(|o| strong(b).contains(o)), "states {i} and {} share no output", (i + 1) % 4);
        }
    }

    #[test]
    fn stationary_cases() {
        let s = build_linear_chain(2, 0.05, 0.01).unwrap();
        let pi = stationary_distribution(&s).unwrap();
        assert!((pi[0] - 0.5).abs() < 1e-15);
        let id = HmmSpec::new(Matrix::identity(2), Matrix::from_rows(&[vec![1.0], vec![1.0]]).unwrap(), vec![0.5, 0.5]).unwrap();
        assert!(matches!(stationary_distribution(&id), Err(Error::Structure(_))));
        let flip = HmmSpec::new(
            Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap(),
            Matrix::from_rows(&[vec![1.0], vec![1.0]]).unwrap(),
            vec![0.5, 0.5],
        )
        .unwrap();
        assert!(stationary_distribution(&flip).is_err());
    }

    #[test]
    fn stationary_is_left_fixed_point() {
        let s = build_linear_chain(5, 0.05, 0.01).unwrap();
        let pi = stationary_distribution(&s).unwrap();
        let next = s.transition().vec_mul(&pi).unwrap();
        for (a, b) in pi.iter().zip(&next) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn two_state_observation_oracles() {
        let s = build_linear_chain(2, 0.05, 0.01).unwrap();
        let pair = obs_pair_matrix(&s).unwrap();
        let expect = [0.9405, 0.01, 0.0495];
        for j in 0..3 {
            assert!((pair[(0, j)] - expect[j]).abs() < 1e-12);
        }
        let f = obs_frequencies(&s).unwrap();
        assert!((f[0] - 0.495).abs() < 1e-12 && (f[1] - 0.01).abs() < 1e-12);
        let vol = obs_volatility(&s).unwrap();
        assert!((vol - 0.068805).abs() < 1e-12, "{vol}");
        for i in 0..3 {
            assert!((pair.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_state_rows_equal_emission() {
        let s = HmmSpec::new(Matrix::identity(1), Matrix::from_rows(&[vec![0.2, 0.3, 0.5]]).unwrap(), vec![1.0]).unwrap();
        let pair = obs_pair_matrix(&s).unwrap();
        let expected = Matrix::from_fn(3, 3, |_, j| [0.2, 0.3, 0.5][j]);
        assert!(pair.max_abs_diff(&expected) < 1e-15);
        let det = HmmSpec::new(Matrix::identity(1), Matrix::from_rows(&[vec![1.0]]).unwrap(), vec![1.0]).unwrap();
        assert_eq!(obs_volatility(&det).unwrap(), 0.0);
    }

    #[test]
    fn undefined_row_is_reported() {
        let s = HmmSpec::new(Matrix::identity(1), Matrix::from_rows(&[vec![0.5, 0.0, 0.5]]).unwrap(), vec![1.0]).unwrap();
        assert!(matches!(obs_pair_matrix(&s), Err(Error::UndefinedRow(1))));
    }

    #[test]
    fn sampling_edge_cases() {
        let absorbing = HmmSpec::new(
            Matrix::identity(2),
            Matrix::from_rows(&[vec![0.0, 0.0, 1.0], vec![0.0, 0.0, 1.0]]).unwrap(),
            vec![0.0, 1.0],
        )
        .unwrap();
        let (states, obs) = sample(&absorbing, 200, &mut RngStream::new(1, 1));
        assert!(states.iter().all(|&s| s == 1));
        assert!(obs.observations.iter().all(|&o| o == 2));
        let a = sample(&build_linear_chain(3, 0.05, 0.01).unwrap(), 100, &mut RngStream::new(4, 4));
        let b = sample(&build_linear_chain(3, 0.05, 0.01).unwrap(), 100, &mut RngStream::new(4, 4));
        assert_eq!(a, b);
    }

    #[test]
    fn json_round_trip() {
        let s = build_linear_chain(4, 0.05, 0.01).unwrap();
        let text = s.to_json().unwrap();
        assert!(text.contains("\"pi0\"") && text.contains("\"T\""));
        assert_eq!(HmmSpec::from_json(&text).unwrap(), s);
        let bad = text.replace("\"M\": 4", "\"M\": 3");
        assert!(HmmSpec::from_json(&bad).is_err());
    }
}
