//! Latent-dynamics analyses of a trained network: fixed points and their
//! spectra, orbit scaling with input variance, residency-time zones, noise
//! sensitivity, second-order perturbations and per-epoch sweeps.
//!
//! Jacobians follow the row-vector convention of [`crate::rnn`]: a small
//! perturbation evolves as `δh_t = δh_{t-1}·J` with `J = W_hhᵀ·D`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::numerics::stats::{linear_fit, LinearFit};
use crate::numerics::{dot, eigenvalues, norm, pca_fit, sq_dist, Matrix, PcaBasis, RngStream};
use crate::rnn::{self, argmax, step_into, GumbelSource, InputSource, RnnParams};
use crate::train::Checkpoint;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedPointReport {
    /// One row per merged fixed point.
    pub points: Matrix,
    /// Pre-activation of the last converging step for each point; fixes the gate pattern of its Jacobian.
    pub pre: Matrix,
    pub residuals: Vec<f64>,
    /// Number of initial conditions merged into each point.
    pub members: Vec<usize>,
    pub spectra: Vec<Vec<Complex64>>,
    pub converged_inits: usize,
    pub nonconverged_inits: usize,
    /// Final state and pre-activation of the first init that did not converge, if any.
    pub unconverged_state: Option<(Vec<f64>, Vec<f64>)>,
    pub tol: f64,
}

impl FixedPointReport {
    pub fn count(&self) -> usize {
        self.points.rows()
    }

    /// The point that attracted the most initial conditions.
    pub fn dominant(&self) -> Option<usize> {
        (0..self.count()).max_by(|&a, &b| self.members[a].cmp(&self.members[b]).then(b.cmp(&a)))
    }
}

struct Autonomous {
    h: Vec<f64>,
    z: Vec<f64>,
    converged: bool,
}

/// Iterate `h ← ReLU(h·W_hhᵀ)` until the step is below `tol` and the geometric
/// estimate of the remaining distance, `‖Δ‖·r/(1−r)` with `r` the ratio of
/// successive steps, is below `tol` as well.
fn settle(p: &RnnParams, h0: &[f64], max_steps: usize, tol: f64) -> Autonomous {
    let n = p.hidden();
    let zero_x = vec![0.0; p.input()];
    let mut h = h0.to_vec();
    let (mut z, mut next) = (vec![0.0; n], vec![0.0; n]);
    let mut prev_delta = f64::INFINITY;
    for _ in 0..max_steps {
        step_into(p, &h, &zero_x, &mut z, &mut next);
        let delta = sq_dist(&h, &next).sqrt();
        std::mem::swap(&mut h, &mut next);
        if delta == 0.0 {
            return Autonomous { h, z, converged: true };
        }
        let r = delta / prev_delta;
        let remaining = if r < 1.0 { delta * r / (1.0 - r) } else { f64::INFINITY };
        if delta < tol && remaining < tol {
            return Autonomous { h, z, converged: true };
        }
        if !delta.is_finite() {
            break;
        }
        prev_delta = delta;
    }
    Autonomous { h, z, converged: false }
}

/// Autonomous rollouts from Gaussian initial states; converged end points within
/// `10·tol` of each other are merged.
pub fn find_fixed_points(p: &RnnParams, n_inits: usize, max_steps: usize, tol: f64, stream: &RngStream) -> Result<FixedPointReport> {
    if n_inits == 0 {
        return Err(Error::Parameter("need at least one initial condition".into()));
    }
    if !(tol > 0.0) {
        return Err(Error::Parameter(format!("tolerance must be positive, got {tol}")));
    }
    let n = p.hidden();
    let mut reps: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    let mut members = Vec::new();
    let (mut conv, mut nonconv) = (0, 0);
    let mut unconverged_state = None;
    for i in 0..n_inits {
        let mut s = stream.split(i as u64);
        let mut h0 = vec![0.0; n];
        s.fill_gaussian(&mut h0, 1.0);
        let a = settle(p, &h0, max_steps, tol);
        if !a.converged {
            nonconv += 1;
            if unconverged_state.is_none() {
                unconverged_state = Some((a.h, a.z));
            }
            continue;
        }
        conv += 1;
        match reps.iter().position(|(r, _)| sq_dist(r, &a.h).sqrt() < 10.0 * tol) {
            Some(k) => members[k] += 1,
            None => {
                reps.push((a.h, a.z));
                members.push(1);
            }
        }
    }
    let k = reps.len();
    let mut points = Matrix::zeros(k, n);
    let mut pre = Matrix::zeros(k, n);
    let mut residuals = Vec::with_capacity(k);
    let mut spectra = Vec::with_capacity(k);
    for (i, (h, z)) in reps.iter().enumerate() {
        points.row_mut(i).copy_from_slice(h);
        pre.row_mut(i).copy_from_slice(z);
        let (_, next) = rnn::step(p, h, &vec![0.0; p.input()])?;
        residuals.push(sq_dist(h, &next).sqrt());
        spectra.push(jacobian_spectrum(p, z, &vec![1.0; n])?);
    }
    Ok(FixedPointReport {
        points,
        pre,
        residuals,
        members,
        spectra,
        converged_inits: conv,
        nonconverged_inits: nonconv,
        unconverged_state,
        tol,
    })
}

/// `J = W_hhᵀ·D`, `D = diag(1[z > 0])`.
pub fn jacobian_at(p: &RnnParams, z: &[f64]) -> Result<Matrix> {
    let ones = vec![1.0; p.hidden()];
    scaled_jacobian(p, z, &ones)
}

/// Jacobian of `h ↦ s ⊙ ReLU(h·W_hhᵀ)`: `W_hhᵀ·D·diag(s)`.
pub fn scaled_jacobian(p: &RnnParams, z: &[f64], scale: &[f64]) -> Result<Matrix> {
    let n = p.hidden();
    if z.len() != n || scale.len() != n {
        return dim_err(format!("jacobian needs width {n}, got {} and {}", z.len(), scale.len()));
    }
    Ok(Matrix::from_fn(n, n, |i, j| if z[j] > 0.0 { p.w_hh[(j, i)] * scale[j] } else { 0.0 }))
}

/// Spectrum of [`scaled_jacobian`]. Reordering active units (z > 0) first makes
/// the Jacobian block lower-triangular with a zero block, so its eigenvalues are
/// those of the active submatrix plus one zero per inactive unit.
pub fn jacobian_spectrum(p: &RnnParams, z: &[f64], scale: &[f64]) -> Result<Vec<Complex64>> {
    let n = p.hidden();
    if z.len() != n || scale.len() != n {
        return dim_err(format!("jacobian needs width {n}, got {} and {}", z.len(), scale.len()));
    }
    let active: Vec<usize> = (0..n).filter(|&j| z[j] > 0.0 && scale[j] != 0.0).collect();
    let sub = Matrix::from_fn(active.len(), active.len(), |a, b| p.w_hh[(active[b], active[a])] * scale[active[b]]);
    let mut spectrum = eigenvalues(&sub)?;
    spectrum.resize(n, Complex64::new(0.0, 0.0));
    crate::numerics::eig::sort_by_modulus(&mut spectrum);
    Ok(spectrum)
}

/// Cayley map `(λ − 1)/(λ + 1)`: the unit disk goes to the left half-plane.
pub fn mobius(lambda: Complex64) -> Result<Complex64> {
    let den = lambda + 1.0;
    if den == Complex64::new(0.0, 0.0) {
        return Err(Error::Pole);
    }
    Ok((lambda - 1.0) / den)
}

pub fn count_unstable(spectrum: &[Complex64]) -> usize {
    spectrum.iter().filter(|l| l.norm() > 1.0).count()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrbitScan {
    pub sigma2: Vec<f64>,
    pub radius: Vec<f64>,
    pub fit: LinearFit,
    pub basis: PcaBasis,
}

fn noisy_hidden(p: &RnnParams, len: usize, sigma: f64, stream: &RngStream) -> Result<Matrix> {
    let mut s = stream.clone();
    let r = rnn::rollout(p, len, InputSource::Gaussian { sigma, stream: &mut s }, &vec![0.0; p.hidden()], 1.0, GumbelSource::None)?;
    Ok(r.hidden)
}

fn tail(m: &Matrix, from: usize) -> Matrix {
    let rows: Vec<usize> = (from..m.rows()).collect();
    let cols: Vec<usize> = (0..m.cols()).collect();
    m.select(&rows, &cols)
}

/// Orbit radius in the σ² = 1 principal plane for each input variance.
///
/// Every σ² is driven by the same standard-normal draws scaled by σ, so the
/// scan isolates the effect of the variance.
pub fn orbit_radius_scan(p: &RnnParams, sigma2: &[f64], len: usize, burn_in: usize, stream: &RngStream) -> Result<OrbitScan> {
    if sigma2.is_empty() {
        return Err(Error::Parameter("empty variance grid".into()));
    }
    if len < burn_in + 1000 {
        return Err(Error::Parameter(format!("rollout length {len} must be at least burn-in + 1000")));
    }
    if sigma2.iter().any(|s| !(*s >= 0.0)) {
        return Err(Error::Parameter("variances must be non-negative".into()));
    }
    let reference = tail(&noisy_hidden(p, len, 1.0, stream)?, burn_in);
    let basis = pca_fit(&reference, 2)?;
    let mut radius = Vec::with_capacity(sigma2.len());
    for &s2 in sigma2 {
        let coords = basis.project(&tail(&noisy_hidden(p, len, s2.sqrt(), stream)?, burn_in))?;
        let n = coords.rows() as f64;
        let c = [coords.col(0).iter().sum::<f64>() / n, coords.col(1).iter().sum::<f64>() / n];
        let r = (0..coords.rows()).map(|i| sq_dist(coords.row(i), &c).sqrt()).sum::<f64>() / n;
        radius.push(r);
    }
    Ok(OrbitScan { sigma2: sigma2.to_vec(), fit: linear_fit(sigma2, &radius), radius, basis })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Zone {
    Cluster,
    Kick,
    Transition,
}

/// `RT > cluster_above` → cluster, `RT < transition_below` → transition, otherwise kick.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ZoneThresholds {
    pub cluster_above: f64,
    pub transition_below: f64,
}

impl Default for ZoneThresholds {
    fn default() -> Self {
        Self { cluster_above: 8.0, transition_below: 2.0 }
    }
}

impl ZoneThresholds {
    pub fn classify(&self, rt: f64) -> Zone {
        if rt > self.cluster_above {
            Zone::Cluster
        } else if rt < self.transition_below {
            Zone::Transition
        } else {
            Zone::Kick
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ZoneConfig {
    pub samples: usize,
    pub rollouts: usize,
    pub cap: usize,
    /// Spacing of sampled states along the base rollout; 1 keeps them contiguous.
    pub stride: usize,
    pub burn_in: usize,
    pub sigma: f64,
    pub thresholds: ZoneThresholds,
}

impl Default for ZoneConfig {
    fn default() -> Self {
        Self { samples: 2000, rollouts: 32, cap: 50, stride: 1, burn_in: 200, sigma: 1.0, thresholds: ZoneThresholds::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneMap {
    pub states: Matrix,
    pub pre: Matrix,
    /// Step index of each sampled state in the base rollout.
    pub times: Vec<usize>,
    pub rt: Vec<f64>,
    pub sign_changes: Vec<f64>,
    pub unstable: Vec<usize>,
    pub dominant: Vec<usize>,
    pub labels: Vec<Zone>,
    pub cap: usize,
    pub thresholds: ZoneThresholds,
}

impl ZoneMap {
    pub fn len(&self) -> usize {
        self.rt.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rt.is_empty()
    }

    pub fn fraction(&self, zone: Zone) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.labels.iter().filter(|&&l| l == zone).count() as f64 / self.len() as f64
    }
}

fn logits(p: &RnnParams, h: &[f64]) -> [f64; 3] {
    [dot(p.readout.row(0), h), dot(p.readout.row(1), h), dot(p.readout.row(2), h)]
}

/// Mean residency time and sign-flip count from `h` over `rollouts` noisy continuations.
fn residency_from(p: &RnnParams, h: &[f64], rollouts: usize, cap: usize, sigma: f64, stream: &RngStream) -> (f64, f64) {
    let n = p.hidden();
    let d0 = argmax(&logits(p, h));
    let (mut cur, mut z, mut next) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut x = vec![0.0; p.input()];
    let (mut rt_sum, mut flip_sum) = (0.0, 0.0);
    for r in 0..rollouts {
        let mut s = stream.split(r as u64);
        cur.copy_from_slice(h);
        let mut value = logits(p, h)[d0];
        let mut prev_diff = 0.0;
        let mut flips = 0usize;
        let mut rt = cap;
        for t in 1..=cap {
            s.fill_gaussian(&mut x, sigma);
            step_into(p, &cur, &x, &mut z, &mut next);
            std::mem::swap(&mut cur, &mut next);
            let y = logits(p, &cur);
            if argmax(&y) != d0 {
                rt = t;
                break;
            }
            let diff = y[d0] - value;
            if diff != 0.0 && prev_diff != 0.0 && (diff > 0.0) != (prev_diff > 0.0) {
                flips += 1;
            }
            if diff != 0.0 {
                prev_diff = diff;
            }
            value = y[d0];
        }
        rt_sum += rt as f64;
        flip_sum += flips as f64;
    }
    (rt_sum / rollouts as f64, flip_sum / rollouts as f64)
}

/// Residency times of states visited by a long noisy rollout.
pub fn residency_map(p: &RnnParams, cfg: &ZoneConfig, stream: &RngStream) -> Result<ZoneMap> {
    if cfg.samples == 0 || cfg.rollouts == 0 || cfg.cap == 0 || cfg.stride == 0 {
        return Err(Error::Parameter("samples, rollouts, cap and stride must be positive".into()));
    }
    let len = cfg.burn_in + cfg.samples * cfg.stride;
    let mut base_noise = stream.split(0);
    let base = rnn::rollout(
        p,
        len,
        InputSource::Gaussian { sigma: cfg.sigma, stream: &mut base_noise },
        &vec![0.0; p.hidden()],
        1.0,
        GumbelSource::None,
    )?;
    let times: Vec<usize> = (0..cfg.samples).map(|k| cfg.burn_in + k * cfg.stride).collect();
    let cols: Vec<usize> = (0..p.hidden()).collect();
    let states = base.hidden.select(&times, &cols);
    let pre = base.pre.select(&times, &cols);
    let probe = stream.split(1);
    let ones = vec![1.0; p.hidden()];
    let mut rt = Vec::with_capacity(cfg.samples);
    let mut sign_changes = Vec::with_capacity(cfg.samples);
    let mut unstable = Vec::with_capacity(cfg.samples);
    let mut dominant = Vec::with_capacity(cfg.samples);
    for k in 0..cfg.samples {
        let h = states.row(k);
        let (r, f) = residency_from(p, h, cfg.rollouts, cfg.cap, cfg.sigma, &probe.split(k as u64));
        rt.push(r);
        sign_changes.push(f);
        unstable.push(count_unstable(&jacobian_spectrum(p, pre.row(k), &ones)?));
        dominant.push(argmax(&logits(p, h)));
    }
    let zm = ZoneMap {
        states,
        pre,
        times,
        rt,
        sign_changes,
        unstable,
        dominant,
        labels: Vec::new(),
        cap: cfg.cap,
        thresholds: cfg.thresholds,
    };
    Ok(classify_zones(zm, cfg.thresholds))
}

pub fn classify_zones(mut zm: ZoneMap, thresholds: ZoneThresholds) -> ZoneMap {
    zm.labels = zm.rt.iter().map(|&r| thresholds.classify(r)).collect();
    zm.thresholds = thresholds;
    zm
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSensitivity {
    /// One `T×H` matrix per trajectory.
    pub trajectories: Vec<Matrix>,
    pub cov_trace: Vec<f64>,
    pub mean_distance: Vec<f64>,
}

/// Trajectories from a shared initial condition whose input noise is a shared
/// reference draw, independently replaced at each step with probability `gamma`.
pub fn noise_sensitivity(
    p: &RnnParams,
    ic: &[f64],
    gamma: f64,
    n_traj: usize,
    len: usize,
    sigma: f64,
    stream: &RngStream,
) -> Result<NoiseSensitivity> {
    if n_traj < 2 {
        return Err(Error::Parameter("need at least two trajectories".into()));
    }
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::Parameter(format!("gamma must lie in [0, 1], got {gamma}")));
    }
    let (n, d) = (p.hidden(), p.input());
    if ic.len() != n {
        return dim_err(format!("initial condition has width {}, network has {n}", ic.len()));
    }
    let mut reference = Matrix::zeros(len, d);
    let mut rs = stream.split(0);
    for t in 0..len {
        rs.fill_gaussian(reference.row_mut(t), sigma);
    }
    let mut trajectories = Vec::with_capacity(n_traj);
    for k in 0..n_traj {
        let mut s = stream.split(1 + k as u64);
        let mut inputs = reference.clone();
        for t in 0..len {
            if s.uniform() < gamma {
                s.fill_gaussian(inputs.row_mut(t), sigma);
            }
        }
        let r = rnn::rollout(p, len, InputSource::Given(&inputs), ic, 1.0, GumbelSource::None)?;
        trajectories.push(r.hidden);
    }
    let mut cov_trace = Vec::with_capacity(len);
    let mut mean_distance = Vec::with_capacity(len);
    // deviations are taken from the first trajectory so identical trajectories give exact zeros
    let mut centroid = vec![0.0; n];
    let mut dev = vec![0.0; n];
    for t in 0..len {
        let origin = trajectories[0].row(t);
        centroid.iter_mut().for_each(|c| *c = 0.0);
        for tr in &trajectories {
            for ((c, v), o) in centroid.iter_mut().zip(tr.row(t)).zip(origin) {
                *c += (v - o) / n_traj as f64;
            }
        }
        let sq: Vec<f64> = trajectories
            .iter()
            .map(|tr| {
                for ((d, v), o) in dev.iter_mut().zip(tr.row(t)).zip(origin) {
                    *d = v - o;
                }
                sq_dist(&dev, &centroid)
            })
            .collect();
        cov_trace.push(sq.iter().sum::<f64>() / (n_traj - 1) as f64);
        mean_distance.push(sq.iter().map(|v| v.sqrt()).sum::<f64>() / n_traj as f64);
    }
    Ok(NoiseSensitivity { trajectories, cov_trace, mean_distance })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationVector {
    pub mean: Vec<f64>,
    pub norm: f64,
    pub sigma2: f64,
    pub horizon: usize,
    pub n_traj: usize,
}

/// Mean second-order displacement after `horizon` noisy steps around the
/// autonomous reference trajectory that starts from pre-activation `z_ref`.
///
/// With `ĥ⁰_0 = z_ref`, `ĥ⁰_k = ReLU(ĥ⁰_{k-1})·W_hhᵀ`, `A_k = D(ĥ⁰_k)·W_hhᵀ`
/// and `f_k = 1[ĥ⁰_k < 0]`:
/// `dh¹_k = dh¹_{k-1}·A_k + x_k·W_ihᵀ`, `dh²_k = dh²_{k-1}·A_k + ½(dh¹_k)² ⊙ f_k`.
pub fn second_order_perturbation(
    p: &RnnParams,
    z_ref: &[f64],
    sigma2: f64,
    horizon: usize,
    n_traj: usize,
    stream: &RngStream,
) -> Result<PerturbationVector> {
    let (n, d) = (p.hidden(), p.input());
    if z_ref.len() != n {
        return dim_err(format!("reference pre-activation has width {}, network has {n}", z_ref.len()));
    }
    if horizon == 0 || n_traj == 0 || !(sigma2 >= 0.0) {
        return Err(Error::Parameter("horizon and trajectory count must be positive, variance non-negative".into()));
    }
    let mut refs = vec![z_ref.to_vec()];
    for k in 1..horizon {
        let h: Vec<f64> = refs[k - 1].iter().map(|v| v.max(0.0)).collect();
        refs.push(p.w_hh.mul_vec(&h)?);
    }
    let sigma = sigma2.sqrt();
    let mut mean = vec![0.0; n];
    let mut x = vec![0.0; d];
    let (mut dh1, mut dh2, mut tmp) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    // dh·A_k = (dh ⊙ 1[ĥ⁰_k > 0])·W_hhᵀ
    let propagate = |v: &mut Vec<f64>, zk: &[f64], tmp: &mut Vec<f64>| {
        for (i, t) in tmp.iter_mut().enumerate() {
            *t = (0..n).filter(|&j| zk[j] > 0.0).map(|j| v[j] * p.w_hh[(i, j)]).sum();
        }
        std::mem::swap(v, tmp);
    };
    for m in 0..n_traj {
        let mut s = stream.split(m as u64);
        dh1.iter_mut().for_each(|v| *v = 0.0);
        dh2.iter_mut().for_each(|v| *v = 0.0);
        for (k, zk) in refs.iter().enumerate() {
            s.fill_gaussian(&mut x, sigma);
            if k > 0 {
                propagate(&mut dh1, zk, &mut tmp);
                propagate(&mut dh2, zk, &mut tmp);
            }
            for (i, v) in dh1.iter_mut().enumerate() {
                *v += dot(p.w_ih.row(i), &x);
            }
            for i in 0..n {
                if zk[i] < 0.0 {
                    dh2[i] += 0.5 * dh1[i] * dh1[i];
                }
            }
        }
        for (acc, v) in mean.iter_mut().zip(&dh2) {
            *acc += v / n_traj as f64;
        }
    }
    Ok(PerturbationVector { norm: norm(&mean), mean, sigma2, horizon, n_traj })
}

/// [`second_order_perturbation`] averaged over several reference pre-activations
/// (rows of `refs`), each with `n_traj` trajectories from its own sub-stream.
pub fn averaged_perturbation(
    p: &RnnParams,
    refs: &Matrix,
    sigma2: f64,
    horizon: usize,
    n_traj: usize,
    stream: &RngStream,
) -> Result<PerturbationVector> {
    if refs.rows() == 0 {
        return Err(Error::Parameter("no reference states".into()));
    }
    let mut mean = vec![0.0; p.hidden()];
    for r in 0..refs.rows() {
        let v = second_order_perturbation(p, refs.row(r), sigma2, horizon, n_traj, &stream.split(r as u64))?;
        for (acc, x) in mean.iter_mut().zip(&v.mean) {
            *acc += x / refs.rows() as f64;
        }
    }
    Ok(PerturbationVector { norm: norm(&mean), mean, sigma2, horizon, n_traj: n_traj * refs.rows() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub rate_len: usize,
    pub burn_in: usize,
    pub sigma: f64,
    pub fp_inits: usize,
    pub fp_max_steps: usize,
    pub fp_tol: f64,
    pub dh2_sigma2: f64,
    pub dh2_horizon: usize,
    pub dh2_n: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            rate_len: 10_000,
            burn_in: 200,
            sigma: 1.0,
            fp_inits: 20,
            fp_max_steps: 10_000,
            fp_tol: 1e-9,
            dh2_sigma2: 1.0,
            dh2_horizon: 10,
            dh2_n: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub transition_rate: f64,
    pub unstable_fraction: f64,
    pub complex_fraction: f64,
    pub dh2_norm: f64,
    /// False when no fixed point was found; the spectrum then comes from the final autonomous state.
    pub fixed_point_found: bool,
    pub n_fixed_points: usize,
}

/// Frequency of dominant-logit changes per step along a noisy rollout, after burn-in.
pub fn transition_rate(p: &RnnParams, len: usize, burn_in: usize, sigma: f64, stream: &RngStream) -> Result<f64> {
    if len < 2 {
        return Err(Error::Parameter("transition rate needs at least two steps".into()));
    }
    let mut s = stream.clone();
    let r = rnn::rollout(p, burn_in + len, InputSource::Gaussian { sigma, stream: &mut s }, &vec![0.0; p.hidden()], 1.0, GumbelSource::None)?;
    let dom = r.dominant_logits();
    let changes = dom[burn_in..].windows(2).filter(|w| w[0] != w[1]).count();
    Ok(changes as f64 / (len - 1) as f64)
}

/// The reference pre-activation used for spectra and perturbations: the dominant
/// fixed point when one exists, otherwise the final autonomous state.
pub fn reference_pre(report: &FixedPointReport) -> Option<Vec<f64>> {
    match report.dominant() {
        Some(k) => Some(report.pre.row(k).to_vec()),
        None => report.unconverged_state.as_ref().map(|(_, z)| z.clone()),
    }
}

pub fn epoch_row(ck: &Checkpoint, cfg: &SweepConfig, root: &RngStream) -> Result<EpochRow> {
    let p = &ck.params;
    let rate = transition_rate(p, cfg.rate_len, cfg.burn_in, cfg.sigma, &root.split(1))?;
    let fp = find_fixed_points(p, cfg.fp_inits, cfg.fp_max_steps, cfg.fp_tol, &root.split(2))?;
    let z = reference_pre(&fp).ok_or_else(|| Error::Data("no fixed-point candidates".into()))?;
    let spectrum = jacobian_spectrum(p, &z, &vec![1.0; p.hidden()])?;
    let total = spectrum.len().max(1) as f64;
    let dh2 = second_order_perturbation(p, &z, cfg.dh2_sigma2, cfg.dh2_horizon, cfg.dh2_n, &root.split(3))?;
    Ok(EpochRow {
        epoch: ck.epoch,
        transition_rate: rate,
        unstable_fraction: count_unstable(&spectrum) as f64 / total,
        complex_fraction: spectrum.iter().filter(|l| l.im != 0.0).count() as f64 / total,
        dh2_norm: dh2.norm,
        fixed_point_found: fp.count() > 0,
        n_fixed_points: fp.count(),
    })
}

/// One row per checkpoint, with identical streams for every checkpoint.
pub fn epoch_sweep(checkpoints: &[Checkpoint], cfg: &SweepConfig, stream: &RngStream) -> Result<Vec<EpochRow>> {
    if checkpoints.len() < 2 {
        return Err(Error::Parameter("epoch sweep needs at least two checkpoints".into()));
    }
    checkpoints.iter().map(|c| epoch_row(c, cfg, stream)).collect()
}

pub const EPOCH_CSV_HEADER: &str = "epoch,transition_rate,unstable_fraction,complex_fraction,dh2_norm,fixed_point_found,n_fixed_points";

pub fn epoch_rows_csv(rows: &[EpochRow]) -> String {
    let mut s = format!("{EPOCH_CSV_HEADER}\n");
    for r in rows {
        s.push_str(&format!(
            "{},{:?},{:?},{:?},{:?},{},{}\n",
            r.epoch, r.transition_rate, r.unstable_fraction, r.complex_fraction, r.dh2_norm, r.fixed_point_found, r.n_fixed_points
        ));
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSubspace {
    pub pair: (usize, usize),
    /// Rows of the input used for the fit.
    pub indices: Vec<usize>,
    pub basis: PcaBasis,
    pub coords: Matrix,
}

/// Two-component PCA on the timesteps labelled with either cluster of `pair`,
/// plus unlabelled stretches lying between a visit to one and a visit to the other.
pub fn pair_subspace_pca(states: &Matrix, labels: &[Option<usize>], pair: (usize, usize)) -> Result<PairSubspace> {
    if labels.len() != states.rows() {
        return dim_err(format!("{} labels for {} states", labels.len(), states.rows()));
    }
    let (a, b) = pair;
    if a == b || !labels.contains(&Some(a)) || !labels.contains(&Some(b)) {
        return Err(Error::Data(format!("clusters {a} and {b} must both be present and distinct")));
    }
    let in_pair = |l: Option<usize>| l == Some(a) || l == Some(b);
    let mut keep = vec![false; labels.len()];
    let mut last: Option<(usize, usize)> = None;
    for (t, &l) in labels.iter().enumerate() {
        match l {
            Some(c) if in_pair(l) => {
                keep[t] = true;
                if let Some((prev_t, prev_c)) = last {
                    if prev_c != c {
                        keep[prev_t + 1..t].iter_mut().for_each(|k| *k = true);
                    }
                }
                last = Some((t, c));
            }
            Some(_) => last = None,
            None => {}
        }
    }
    let indices: Vec<usize> = (0..labels.len()).filter(|&t| keep[t]).collect();
    if indices.len() < 2 {
        return Err(Error::Data("restriction has fewer than two states".into()));
    }
    let cols: Vec<usize> = (0..states.cols()).collect();
    let sub = states.select(&indices, &cols);
    let basis = pca_fit(&sub, 2.min(states.cols()))?;
    let coords = basis.project(&sub)?;
    Ok(PairSubspace { pair, indices, basis, coords })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn net(w_hh: Matrix, d: usize) -> RnnParams {
        let h = w_hh.rows();
        let mut s = RngStream::new(3, 0);
        let w_ih = Matrix::from_fn(h, d, |_, _| s.uniform_range(-0.5, 0.5));
        let a = Matrix::from_fn(3, h, |_, _| s.uniform_range(-0.5, 0.5));
        RnnParams::new(w_hh, w_ih, a).unwrap()
    }

    #[test]
    fn zero_recurrence_has_origin_only() {
        let p = net(Matrix::zeros(4, 4), 2);
        let r = find_fixed_points(&p, 10, 100, 1e-9, &RngStream::new(1, 0)).unwrap();
        assert_eq!(r.count(), 1);
        assert_eq!(r.members[0], 10);
        assert!(r.points.row(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn half_identity_converges_geometrically() {
        let p = net(Matrix::identity(3).scale(0.5), 1);
        let r = find_fixed_points(&p, 5, 200, 1e-9, &RngStream::new(2, 0)).unwrap();
        assert_eq!(r.count(), 1);
        assert!(norm(r.points.row(0)) < 1e-8);
        assert!(r.residuals[0] < 1e-9);
    }

    #[test]
    fn jacobian_gates() {
        let p = net(Matrix::from_fn(3, 3, |i, j| (i * 3 + j) as f64), 1);
        assert_eq!(jacobian_at(&p, &[1.0; 3]).unwrap(), p.w_hh.transpose());
        assert_eq!(jacobian_at(&p, &[-1.0, 0.0, -2.0]).unwrap(), Matrix::zeros(3, 3));
    }

    #[test]
    fn mobius_examples() {
        let c = |r, i| Complex64::new(r, i);
        assert_eq!(mobius(c(0.0, 0.0)).unwrap(), c(-1.0, 0.0));
        assert!((mobius(c(0.0, 1.0)).unwrap() - c(0.0, 1.0)).norm() < 1e-15);
        assert_eq!(mobius(c(3.0, 0.0)).unwrap(), c(0.5, 0.0));
        assert!(matches!(mobius(c(-1.0, 0.0)), Err(Error::Pole)));
    }

    #[test]
    fn zone_thresholds() {
        let t = ZoneThresholds::default();
        assert_eq!(t.classify(10.0), Zone::Cluster);
        assert_eq!(t.classify(5.0), Zone::Kick);
        assert_eq!(t.classify(1.0), Zone::Transition);
        assert_eq!(t.classify(8.0), Zone::Kick);
        assert_eq!(t.classify(2.0), Zone::Kick);
    }

    #[test]
    fn gamma_zero_has_no_spread() {
        let p = net(Matrix::identity(3).scale(0.7), 2);
        let ns = noise_sensitivity(&p, &[0.1, 0.2, 0.3], 0.0, 4, 20, 1.0, &RngStream::new(1, 0)).unwrap();
        assert!(ns.cov_trace.iter().all(|&v| v == 0.0));
        assert!(noise_sensitivity(&p, &[0.0; 3], 0.5, 1, 20, 1.0, &RngStream::new(1, 0)).is_err());
    }

    #[test]
    fn no_input_path_no_second_order() {
        let mut p = net(Matrix::identity(3).scale(0.7), 2);
        p.w_ih = Matrix::zeros(3, 2);
        let v = second_order_perturbation(&p, &[-0.1, 0.2, -0.3], 1.0, 10, 20, &RngStream::new(1, 0)).unwrap();
        assert_eq!(v.norm, 0.0);
        let q = net(Matrix::identity(3).scale(0.7), 2);
        let open = second_order_perturbation(&q, &[0.1, 0.2, 0.3], 1.0, 10, 20, &RngStream::new(1, 0)).unwrap();
        assert_eq!(open.norm, 0.0);
    }

    #[test]
    fn pair_subspace_requires_both_clusters() {
        let s = Matrix::from_fn(4, 2, |i, j| (i + j) as f64);
        assert!(matches!(pair_subspace_pca(&s, &[Some(0); 4], (0, 1)), Err(Error::Data(_))));
        let r = pair_subspace_pca(&s, &[Some(0), None, Some(1), Some(2)], (0, 1)).unwrap();
        assert_eq!(r.indices, vec![0, 1, 2]);
    }
}
