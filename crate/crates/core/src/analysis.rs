//! One config record for every post-training analysis, and the glue that runs
//! the dynamics and circuit pipelines from it with fixed stream assignments.

use serde::{Deserialize, Serialize};

use crate::circuit::{
    self, control_set, detect_kick_neurons, detect_populations, intervene, outcome_critical_pairs, InterventionSpec, KickConfig, Mode,
    NeuronGroups, OutcomeRow, Target,
};
use crate::dynamics::{
    self, find_fixed_points, noise_sensitivity, orbit_radius_scan, reference_pre, residency_map, second_order_perturbation,
    FixedPointReport, NoiseSensitivity, OrbitScan, PairSubspace, PerturbationVector, SweepConfig, Zone, ZoneConfig, ZoneMap,
};
use crate::error::{Error, Result};
use crate::numerics::stats::{linear_fit, LinearFit};
use crate::numerics::RngStream;
use crate::rnn::{self, GumbelSource, InputSource, RnnParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FixedPointConfig {
    pub inits: usize,
    pub max_steps: usize,
    pub tol: f64,
}

impl Default for FixedPointConfig {
    fn default() -> Self {
        Self { inits: 100, max_steps: 10_000, tol: 1e-9 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OrbitConfig {
    pub sigma2: Vec<f64>,
    pub len: usize,
    pub burn_in: usize,
}

impl Default for OrbitConfig {
    fn default() -> Self {
        Self { sigma2: vec![0.1, 1.0, 2.0, 3.0, 4.0], len: 5200, burn_in: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub gamma: Vec<f64>,
    pub trajectories: usize,
    pub len: usize,
    pub sigma: f64,
    /// Steps of noisy rollout used to reach the shared initial condition.
    pub burn_in: usize,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { gamma: vec![0.0, 0.1, 0.5, 1.0], trajectories: 20, len: 50, sigma: 1.0, burn_in: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerturbationConfig {
    pub sigma2: Vec<f64>,
    pub horizon: usize,
    pub trajectories: usize,
    /// Kick ranking averages E[dh²] over every `kick_ref_stride`-th zone-map state.
    pub kick_ref_stride: usize,
    pub kick_ref_trajectories: usize,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        Self { sigma2: vec![0.1, 1.0, 2.0, 3.0, 4.0], horizon: 10, trajectories: 100, kick_ref_stride: 20, kick_ref_trajectories: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CircuitConfig {
    pub kick: KickConfig,
    /// Half-width of the critical band around |λ| = 1.
    pub delta: f64,
    pub mu: Vec<f64>,
    pub horizon: usize,
    pub sigma: f64,
    /// Leading steps skipped when sampling states for critical pairs.
    pub burn_in: usize,
    pub pair_stride: usize,
    pub oscillation_len: usize,
}

impl Default for CircuitConfig {
    fn default() -> Self {
        Self {
            kick: KickConfig::default(),
            delta: 0.05,
            mu: vec![0.0, 0.5, 1.0, 1.5, 2.0],
            horizon: 20_000,
            sigma: 1.0,
            burn_in: 200,
            pair_stride: 40,
            oscillation_len: 5000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    pub seed: u64,
    pub fixed_points: FixedPointConfig,
    pub orbits: OrbitConfig,
    pub zones: ZoneConfig,
    pub noise: NoiseConfig,
    pub perturbation: PerturbationConfig,
    pub sweep: SweepConfig,
    pub circuit: CircuitConfig,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            fixed_points: FixedPointConfig::default(),
            orbits: OrbitConfig::default(),
            zones: ZoneConfig::default(),
            noise: NoiseConfig::default(),
            perturbation: PerturbationConfig::default(),
            sweep: SweepConfig::default(),
            circuit: CircuitConfig::default(),
        }
    }
}

mod id {
    pub const FIXED: u64 = 1;
    pub const ORBIT: u64 = 2;
    pub const ZONES: u64 = 3;
    pub const NOISE: u64 = 4;
    pub const PERTURB: u64 = 5;
    pub const CONTROL: u64 = 6;
    pub const INTERVENE: u64 = 7;
    pub const OSCILLATE: u64 = 8;
    pub const SWEEP: u64 = 9;
}

impl AnalysisConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, why: &str| Err(Error::Config(format!("{key}: {why}")));
        if self.fixed_points.inits == 0 {
            return bad("fixed_points.inits", "must be positive");
        }
        if !(self.fixed_points.tol > 0.0) {
            return bad("fixed_points.tol", "must be positive");
        }
        if self.orbits.sigma2.is_empty() || self.orbits.sigma2.iter().any(|v| !(*v >= 0.0)) {
            return bad("orbits.sigma2", "need a non-empty grid of non-negative variances");
        }
        if self.orbits.len < self.orbits.burn_in + 1000 {
            return bad("orbits.len", "must be at least burn_in + 1000");
        }
        if self.zones.samples == 0 || self.zones.rollouts == 0 || self.zones.cap == 0 || self.zones.stride == 0 {
            return bad("zones", "samples, rollouts, cap and stride must be positive");
        }
        if self.noise.trajectories < 2 || self.noise.gamma.iter().any(|g| !(0.0..=1.0).contains(g)) {
            return bad("noise", "need ≥ 2 trajectories and gamma in [0, 1]");
        }
        let pc = &self.perturbation;
        if pc.horizon == 0 || pc.trajectories == 0 || pc.sigma2.is_empty() || pc.kick_ref_stride == 0 || pc.kick_ref_trajectories == 0 {
            return bad("perturbation", "horizon, trajectories and sigma2 must be non-empty");
        }
        if !(self.circuit.delta >= 0.0) || self.circuit.mu.iter().any(|m| !(*m >= 0.0) || !m.is_finite()) {
            return bad("circuit", "delta and mu must be finite and non-negative");
        }
        if self.circuit.horizon <= self.circuit.burn_in {
            return bad("circuit.horizon", "must exceed circuit.burn_in");
        }
        Ok(())
    }

    pub fn root(&self) -> RngStream {
        RngStream::new(self.seed, 0)
    }

    pub fn fixed_points(&self, p: &RnnParams) -> Result<FixedPointReport> {
        let f = &self.fixed_points;
        find_fixed_points(p, f.inits, f.max_steps, f.tol, &self.root().split(id::FIXED))
    }

    pub fn orbits(&self, p: &RnnParams) -> Result<OrbitScan> {
        let o = &self.orbits;
        orbit_radius_scan(p, &o.sigma2, o.len, o.burn_in, &self.root().split(id::ORBIT))
    }

    pub fn zones(&self, p: &RnnParams) -> Result<ZoneMap> {
        residency_map(p, &self.zones, &self.root().split(id::ZONES))
    }

    /// One sensitivity probe per γ, all from the state reached after a noisy burn-in.
    pub fn noise(&self, p: &RnnParams) -> Result<Vec<(f64, NoiseSensitivity)>> {
        let n = &self.noise;
        let root = self.root().split(id::NOISE);
        let mut s = root.split(0);
        let warm = rnn::rollout(
            p,
            n.burn_in.max(1),
            InputSource::Gaussian { sigma: n.sigma, stream: &mut s },
            &vec![0.0; p.hidden()],
            1.0,
            GumbelSource::None,
        )?;
        let ic = warm.last_hidden().to_vec();
        n.gamma.iter().map(|&g| Ok((g, noise_sensitivity(p, &ic, g, n.trajectories, n.len, n.sigma, &root.split(1))?))).collect()
    }

    /// Second-order vectors across the variance grid around the reference point
    /// of `fp`; every variance reuses the same standard-normal draws.
    pub fn perturbation(&self, p: &RnnParams, fp: &FixedPointReport) -> Result<(Vec<PerturbationVector>, LinearFit)> {
        let z = reference_pre(fp).ok_or_else(|| Error::Data("no fixed-point reference state".into()))?;
        let c = &self.perturbation;
        let s = self.root().split(id::PERTURB).split(0);
        let vs: Vec<PerturbationVector> =
            c.sigma2.iter().map(|&v| second_order_perturbation(p, &z, v, c.horizon, c.trajectories, &s)).collect::<Result<_>>()?;
        let norms: Vec<f64> = vs.iter().map(|v| v.norm).collect();
        let fit = linear_fit(&c.sigma2, &norms);
        Ok((vs, fit))
    }

    /// Unit-variance E[dh²] averaged over reference states along the noisy orbit,
    /// the vector used to rank kick candidates. A fixed point at the origin has
    /// no gate pattern of its own, so the orbit stands in for it.
    pub fn kick_perturbation(&self, p: &RnnParams, zm: &ZoneMap) -> Result<PerturbationVector> {
        let c = &self.perturbation;
        let rows: Vec<usize> = (0..zm.len()).step_by(c.kick_ref_stride.max(1)).collect();
        let cols: Vec<usize> = (0..p.hidden()).collect();
        dynamics::averaged_perturbation(p, &zm.pre.select(&rows, &cols), 1.0, c.horizon, c.kick_ref_trajectories, &self.root().split(id::PERTURB).split(1))
    }

    /// Kick groups and integrating populations.
    pub fn detect(&self, p: &RnnParams, zm: &ZoneMap) -> Result<NeuronGroups> {
        let dh2 = self.kick_perturbation(p, zm)?;
        let groups = detect_kick_neurons(p, zm, &dh2, &self.circuit.kick)?;
        if groups.kick.len() < 2 {
            return Ok(groups);
        }
        detect_populations(p, &groups, self.circuit.kick.population_sd)
    }

    /// Subspace of each pair of clusters seen in the zone map.
    pub fn subspaces(&self, zm: &ZoneMap) -> Result<Vec<PairSubspace>> {
        let labels: Vec<Option<usize>> =
            (0..zm.len()).map(|k| (zm.labels[k] == Zone::Cluster).then_some(zm.dominant[k])).collect();
        let present: Vec<usize> = (0..crate::hmm::N_OBS).filter(|c| labels.contains(&Some(*c))).collect();
        let mut out = Vec::new();
        for (i, &a) in present.iter().enumerate() {
            for &b in &present[i + 1..] {
                out.push(dynamics::pair_subspace_pca(&zm.states, &labels, (a, b))?);
            }
        }
        if out.is_empty() {
            return Err(Error::Data("fewer than two clusters in the zone map".into()));
        }
        Ok(out)
    }

    /// μ sweep of activity scaling on each kick group and its matched control,
    /// and of noise-drive scaling on each population and its control. Counts are
    /// transitions in the direction of the kick group concerned; every row uses
    /// the same initial condition and input draws.
    pub fn intervention_table(&self, p: &RnnParams, groups: &NeuronGroups) -> Result<Vec<OutcomeRow>> {
        let c = &self.circuit;
        let root = self.root();
        let noise = root.split(id::INTERVENE);
        let h0 = vec![0.0; p.hidden()];
        let mut rows = Vec::new();
        let mut run = |label: String, target: Target, mode: Mode, dir: (usize, usize)| -> Result<()> {
            for &mu in &c.mu {
                let mut spec = InterventionSpec::single(target.clone(), mode, mu, c.horizon, h0.clone());
                spec.sigma = c.sigma;
                let o = intervene(p, groups, &spec, &noise)?;
                let cp = outcome_critical_pairs(p, &o, c.burn_in, c.pair_stride, c.delta)?;
                rows.push(OutcomeRow {
                    mu,
                    target: label.clone(),
                    mode,
                    transition_count: o.count(dir.0, dir.1),
                    critical_pairs_mean: cp.mean,
                    critical_pairs_sd: cp.sd,
                });
            }
            Ok(())
        };
        for (k, g) in groups.kick.iter().enumerate() {
            let dir = groups.directions[k];
            run(format!("kick{k}"), Target::KickGroup(k), Mode::ActivityScale, dir)?;
            let ctrl = control_set(groups, g.len(), &root.split(id::CONTROL).split(k as u64))?;
            run(format!("control_kick{k}"), Target::Control(ctrl), Mode::ActivityScale, dir)?;
        }
        for (k, pop) in groups.populations.iter().enumerate() {
            if pop.is_empty() || k >= groups.kick.len() {
                continue;
            }
            let dir = groups.directions[k];
            run(format!("population{k}"), Target::Population(k), Mode::NoiseDriveScale, dir)?;
            if let Ok(ctrl) = control_set(groups, pop.len(), &root.split(id::CONTROL).split(100 + k as u64)) {
                run(format!("control_population{k}"), Target::Control(ctrl), Mode::NoiseDriveScale, dir)?;
            }
        }
        Ok(rows)
    }

    pub fn sweep(&self, checkpoints: &[crate::train::Checkpoint]) -> Result<Vec<dynamics::EpochRow>> {
        dynamics::epoch_sweep(checkpoints, &self.sweep, &self.root().split(id::SWEEP))
    }

    pub fn oscillations(&self, p: &RnnParams, groups: &NeuronGroups) -> Result<circuit::OscillationTraces> {
        circuit::oscillation_traces(p, self.circuit.oscillation_len, groups, self.circuit.sigma, &self.root().split(id::OSCILLATE))
    }

    pub fn alignment(&self, p: &RnnParams) -> Result<Vec<Option<f64>>> {
        circuit::readout_alignment(p, &self.orbits(p)?.basis)
    }
}
