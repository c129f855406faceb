//! Single-neuron view of the transition machinery: kick neurons, the
//! noise-integrating populations that drive them, and causal interventions.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::dynamics::{jacobian_spectrum, Zone, ZoneMap};
use crate::dynamics::PerturbationVector;
use crate::error::{dim_err, Error, Result};
use crate::numerics::stats::{mean, pearson, std_dev};
use crate::numerics::{dot, norm, Matrix, PcaBasis, RngStream};
use crate::rnn::{argmax, step_into, RnnParams};
use crate::hmm::N_OBS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuronGroups {
    /// Kick groups, largest first.
    pub kick: Vec<Vec<usize>>,
    /// Cluster-to-cluster direction (by dominant logit) on which each kick group fires.
    pub directions: Vec<(usize, usize)>,
    pub populations: Vec<Vec<usize>>,
    pub residual: Vec<usize>,
    pub hidden: usize,
}

impl NeuronGroups {
    pub fn empty(hidden: usize) -> Self {
        Self { kick: Vec::new(), directions: Vec::new(), populations: Vec::new(), residual: (0..hidden).collect(), hidden }
    }

    fn assigned(&self) -> BTreeSet<usize> {
        self.kick.iter().chain(&self.populations).flatten().copied().collect()
    }

    fn refresh_residual(&mut self) {
        let used = self.assigned();
        self.residual = (0..self.hidden).filter(|n| !used.contains(n)).collect();
    }

    pub fn validate(&self) -> Result<()> {
        for family in [&self.kick, &self.populations] {
            let mut seen = BTreeSet::new();
            for n in family.iter().flatten() {
                if *n >= self.hidden {
                    return Err(Error::Structure(format!("neuron {n} out of range for H = {}", self.hidden)));
                }
                if !seen.insert(*n) {
                    return Err(Error::Structure(format!("neuron {n} appears in two groups")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KickConfig {
    /// Minimum rise of mean z from source cluster to transitions, in units of
    /// the neuron's own z sd pooled over all sampled states.
    pub gap_sd: f64,
    /// Fraction of neurons, ranked by |E[dh²]|, eligible as kick neurons.
    pub top_q: f64,
    /// Populations keep neurons whose |s| exceeds this many sd of all scores.
    pub population_sd: f64,
}

impl Default for KickConfig {
    fn default() -> Self {
        Self { gap_sd: 1.0, top_q: 0.1, population_sd: 1.0 }
    }
}

/// Sampled states grouped as cluster visits (by dominant logit) and the
/// non-cluster stretches that connect one cluster to a different one.
struct Episodes {
    cluster: Vec<Vec<usize>>,
    transitions: Vec<((usize, usize), Vec<usize>)>,
}

fn episodes(zm: &ZoneMap) -> Episodes {
    let mut cluster = vec![Vec::new(); N_OBS];
    let mut transitions: Vec<((usize, usize), Vec<usize>)> = Vec::new();
    let mut last: Option<usize> = None;
    let mut pending = Vec::new();
    for k in 0..zm.len() {
        if zm.labels[k] != Zone::Cluster {
            pending.push(k);
            continue;
        }
        let c = zm.dominant[k];
        cluster[c].push(k);
        if let Some(a) = last {
            if a != c && !pending.is_empty() {
                match transitions.iter_mut().find(|(d, _)| *d == (a, c)) {
                    Some((_, v)) => v.append(&mut pending),
                    None => transitions.push(((a, c), std::mem::take(&mut pending))),
                }
            }
        }
        pending.clear();
        last = Some(c);
    }
    transitions.sort_by_key(|(d, _)| *d);
    Episodes { cluster, transitions }
}

fn column_mean(m: &Matrix, rows: &[usize], n: usize) -> f64 {
    rows.iter().map(|&r| m[(r, n)]).sum::<f64>() / rows.len() as f64
}

/// Kick candidates: z rises by more than `gap_sd` sd (the neuron's own, over all zones) from the source
/// cluster to the transition stretches, sits below threshold in that cluster,
/// and the neuron is among the top `top_q` components of |E[dh²]|.
/// Transition stretches are the non-cluster states between a visit to one
/// cluster and the next visit to a different one.
pub fn detect_kick_neurons(p: &RnnParams, zm: &ZoneMap, dh2: &PerturbationVector, cfg: &KickConfig) -> Result<NeuronGroups> {
    let h = p.hidden();
    if zm.pre.cols() != h || dh2.mean.len() != h || zm.labels.len() != zm.pre.rows() {
        return dim_err("zone map, perturbation vector and network disagree in width".to_string());
    }
    let mut groups = NeuronGroups::empty(h);
    if zm.is_empty() {
        return Ok(groups);
    }
    let spread: Vec<f64> = (0..h).map(|n| std_dev(&zm.pre.col(n))).collect();
    let eligible: BTreeSet<usize> = {
        let mut order: Vec<usize> = (0..h).collect();
        order.sort_by(|&a, &b| dh2.mean[b].abs().total_cmp(&dh2.mean[a].abs()).then(a.cmp(&b)));
        let take = ((cfg.top_q * h as f64).ceil() as usize).min(h);
        order.into_iter().take(take).filter(|&n| dh2.mean[n] != 0.0).collect()
    };
    let ep = episodes(zm);
    let mut best: Vec<Option<(f64, usize)>> = vec![None; h];
    for (di, ((a, _), rows)) in ep.transitions.iter().enumerate() {
        let src = &ep.cluster[*a];
        if src.is_empty() || rows.is_empty() {
            continue;
        }
        for &n in &eligible {
            let in_cluster = column_mean(&zm.pre, src, n);
            let gap = column_mean(&zm.pre, rows, n) - in_cluster;
            if in_cluster < 0.0 && gap > cfg.gap_sd * spread[n] && best[n].map_or(true, |(g, _)| gap > g) {
                best[n] = Some((gap, di));
            }
        }
    }
    let mut found: Vec<((usize, usize), Vec<usize>)> = ep
        .transitions
        .iter()
        .enumerate()
        .map(|(di, (d, _))| (*d, (0..h).filter(|&n| matches!(best[n], Some((_, k)) if k == di)).collect::<Vec<_>>()))
        .filter(|(_, g)| !g.is_empty())
        .collect();
    found.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then(a.0.cmp(&b.0)));
    groups.directions = found.iter().map(|(d, _)| *d).collect();
    groups.kick = found.into_iter().map(|(_, g)| g).collect();
    groups.refresh_residual();
    Ok(groups)
}

/// Net drive difference of every non-kick neuron onto the first two kick groups.
pub fn population_scores(p: &RnnParams, groups: &NeuronGroups) -> Result<Vec<(usize, f64)>> {
    if groups.kick.len() < 2 {
        return Err(Error::Parameter(format!("need at least two kick groups, got {}", groups.kick.len())));
    }
    let kick: BTreeSet<usize> = groups.kick.iter().flatten().copied().collect();
    Ok((0..p.hidden())
        .filter(|n| !kick.contains(n))
        .map(|n| {
            let drive = |g: &[usize]| g.iter().map(|&j| p.w_hh[(j, n)]).sum::<f64>();
            (n, drive(&groups.kick[0]) - drive(&groups.kick[1]))
        })
        .collect())
}

/// Split non-kick neurons by the sign of their score when |s| exceeds
/// `threshold_sd` sd of all scores; population 0 favours kick group 0.
pub fn detect_populations(p: &RnnParams, groups: &NeuronGroups, threshold_sd: f64) -> Result<NeuronGroups> {
    let scores = population_scores(p, groups)?;
    let mut out = groups.clone();
    let values: Vec<f64> = scores.iter().map(|(_, s)| *s).collect();
    let sd = std_dev(&values);
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(sd > 1e-12 * scale.max(1e-300)) {
        out.populations = vec![Vec::new(), Vec::new()];
    } else {
        let cut = threshold_sd * sd;
        out.populations = vec![
            scores.iter().filter(|(_, s)| *s > cut).map(|(n, _)| *n).collect(),
            scores.iter().filter(|(_, s)| *s < -cut).map(|(n, _)| *n).collect(),
        ];
    }
    out.refresh_residual();
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightEntry {
    pub from: usize,
    pub to: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectivityReport {
    /// Neurons of all kick groups, in group order, indexing the kick block.
    pub kick_order: Vec<usize>,
    pub kick_block: Matrix,
    /// Population neuron → kick neuron weights, strongest first.
    pub population_to_kick: Vec<WeightEntry>,
    pub population_order: Vec<usize>,
    pub population_block: Matrix,
    /// Mean of off-diagonal weights within each kick group; `None` for singletons.
    pub within_kick_mean: Option<f64>,
    pub cross_kick_mean: Option<f64>,
    pub within_population_mean: Option<f64>,
    pub cross_population_mean: Option<f64>,
    /// `[p][k]`: mean weight from population p onto kick group k.
    pub population_kick_means: Vec<Vec<Option<f64>>>,
}

fn block_means(p: &RnnParams, groups: &[Vec<usize>]) -> (Option<f64>, Option<f64>) {
    let (mut within, mut cross) = (Vec::new(), Vec::new());
    for (a, ga) in groups.iter().enumerate() {
        for (b, gb) in groups.iter().enumerate() {
            for &to in ga {
                for &from in gb {
                    if a == b && to != from {
                        within.push(p.w_hh[(to, from)]);
                    } else if a != b {
                        cross.push(p.w_hh[(to, from)]);
                    }
                }
            }
        }
    }
    let m = |v: Vec<f64>| (!v.is_empty()).then(|| mean(&v));
    (m(within), m(cross))
}

pub fn connectivity_report(p: &RnnParams, groups: &NeuronGroups) -> Result<ConnectivityReport> {
    groups.validate()?;
    if groups.hidden != p.hidden() {
        return dim_err(format!("groups built for H = {}, network has {}", groups.hidden, p.hidden()));
    }
    if groups.kick.is_empty() && groups.populations.is_empty() {
        return Err(Error::Parameter("no groups to report".into()));
    }
    let kick_order: Vec<usize> = groups.kick.iter().flatten().copied().collect();
    let population_order: Vec<usize> = groups.populations.iter().flatten().copied().collect();
    let mut population_to_kick: Vec<WeightEntry> = population_order
        .iter()
        .flat_map(|&from| kick_order.iter().map(move |&to| (from, to)))
        .map(|(from, to)| WeightEntry { from, to, weight: p.w_hh[(to, from)] })
        .collect();
    population_to_kick.sort_by(|a, b| b.weight.total_cmp(&a.weight).then((a.from, a.to).cmp(&(b.from, b.to))));
    let (within_kick_mean, cross_kick_mean) = block_means(p, &groups.kick);
    let (within_population_mean, cross_population_mean) = block_means(p, &groups.populations);
    let population_kick_means = groups
        .populations
        .iter()
        .map(|pop| {
            groups
                .kick
                .iter()
                .map(|k| {
                    let w: Vec<f64> = pop.iter().flat_map(|&f| k.iter().map(move |&t| p.w_hh[(t, f)])).collect();
                    (!w.is_empty()).then(|| mean(&w))
                })
                .collect()
        })
        .collect();
    Ok(ConnectivityReport {
        kick_block: p.w_hh.select(&kick_order, &kick_order),
        population_block: p.w_hh.select(&population_order, &population_order),
        kick_order,
        population_to_kick,
        population_order,
        within_kick_mean,
        cross_kick_mean,
        within_population_mean,
        cross_population_mean,
        population_kick_means,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    KickGroup(usize),
    Population(usize),
    Control(Vec<usize>),
}

impl Target {
    pub fn neurons(&self, groups: &NeuronGroups) -> Result<Vec<usize>> {
        let v = match self {
            Target::KickGroup(k) => groups.kick.get(*k).cloned().ok_or_else(|| Error::Spec(format!("no kick group {k}")))?,
            Target::Population(k) => groups.populations.get(*k).cloned().ok_or_else(|| Error::Spec(format!("no population {k}")))?,
            Target::Control(v) => v.clone(),
        };
        if let Some(n) = v.iter().find(|&&n| n >= groups.hidden) {
            return Err(Error::Spec(format!("target neuron {n} out of range")));
        }
        Ok(v)
    }

    pub fn label(&self) -> String {
        match self {
            Target::KickGroup(k) => format!("kick{k}"),
            Target::Population(k) => format!("population{k}"),
            Target::Control(_) => "control".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Multiply post-ReLU activity of the target by μ at every step.
    ActivityScale,
    /// Multiply the target's input-weight rows by μ.
    NoiseDriveScale,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Modulation {
    pub target: Target,
    pub mode: Mode,
    pub mu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionSpec {
    pub modulations: Vec<Modulation>,
    pub horizon: usize,
    pub initial: Vec<f64>,
    pub sigma: f64,
}

impl InterventionSpec {
    pub fn single(target: Target, mode: Mode, mu: f64, horizon: usize, initial: Vec<f64>) -> Self {
        Self { modulations: vec![Modulation { target, mode, mu }], horizon, initial, sigma: 1.0 }
    }
}

/// Per-neuron activity scale and the network with scaled input rows.
struct Applied {
    params: RnnParams,
    activity: Vec<f64>,
}

fn apply(p: &RnnParams, groups: &NeuronGroups, spec: &InterventionSpec) -> Result<Applied> {
    let h = p.hidden();
    if spec.initial.len() != h {
        return dim_err(format!("initial condition has width {}, network has {h}", spec.initial.len()));
    }
    if !(spec.sigma >= 0.0) || !spec.sigma.is_finite() {
        return Err(Error::Spec(format!("noise sd must be finite and non-negative, got {}", spec.sigma)));
    }
    let mut params = p.clone();
    let mut activity = vec![1.0; h];
    let mut by_mode = [BTreeSet::new(), BTreeSet::new()];
    for m in &spec.modulations {
        if !(m.mu >= 0.0) || !m.mu.is_finite() {
            return Err(Error::Spec(format!("μ must be finite and non-negative, got {}", m.mu)));
        }
        let neurons = m.target.neurons(groups)?;
        if neurons.iter().any(|&n| n >= h) {
            return Err(Error::Spec("target outside the network".into()));
        }
        let slot = match m.mode {
            Mode::ActivityScale => 0,
            Mode::NoiseDriveScale => 1,
        };
        by_mode[slot].extend(neurons.iter().copied());
        for &n in &neurons {
            match m.mode {
                Mode::ActivityScale => activity[n] *= m.mu,
                Mode::NoiseDriveScale => params.w_ih.row_mut(n).iter_mut().for_each(|w| *w *= m.mu),
            }
        }
    }
    if let Some(n) = by_mode[0].intersection(&by_mode[1]).next() {
        return Err(Error::Spec(format!("neuron {n} is targeted in both modes")));
    }
    Ok(Applied { params, activity })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionOutcome {
    pub hidden: Matrix,
    pub pre: Matrix,
    pub dominant: Vec<usize>,
    pub change_count: usize,
    /// `[a][b]`: steps whose dominant logit moved from a to b.
    pub transitions: Vec<Vec<usize>>,
    /// Dominant logits with consecutive repeats removed.
    pub visited: Vec<usize>,
    /// Per-neuron activity scale in force (1 outside activity targets).
    pub activity_scale: Vec<f64>,
}

impl InterventionOutcome {
    pub fn count(&self, from: usize, to: usize) -> usize {
        self.transitions[from][to]
    }
}

/// Noisy rollout under the intervention. Input draws follow the same order
/// as an unmodified Gaussian-input rollout, so μ = 1 reproduces it bit-exactly.
pub fn intervene(p: &RnnParams, groups: &NeuronGroups, spec: &InterventionSpec, stream: &RngStream) -> Result<InterventionOutcome> {
    let Applied { params, activity } = apply(p, groups, spec)?;
    let (h, t_len) = (p.hidden(), spec.horizon);
    let mut s = stream.clone();
    let mut hidden = Matrix::zeros(t_len, h);
    let mut pre = Matrix::zeros(t_len, h);
    let mut x = vec![0.0; p.input()];
    let (mut prev, mut z, mut cur) = (spec.initial.clone(), vec![0.0; h], vec![0.0; h]);
    let mut dominant = Vec::with_capacity(t_len);
    for t in 0..t_len {
        s.fill_gaussian(&mut x, spec.sigma);
        step_into(&params, &prev, &x, &mut z, &mut cur);
        for (v, a) in cur.iter_mut().zip(&activity) {
            if *a != 1.0 {
                *v *= a;
            }
        }
        pre.row_mut(t).copy_from_slice(&z);
        hidden.row_mut(t).copy_from_slice(&cur);
        dominant.push(argmax(&[dot(p.readout.row(0), &cur), dot(p.readout.row(1), &cur), dot(p.readout.row(2), &cur)]));
        std::mem::swap(&mut prev, &mut cur);
    }
    let mut transitions = vec![vec![0; N_OBS]; N_OBS];
    let mut visited: Vec<usize> = dominant.first().copied().into_iter().collect();
    for w in dominant.windows(2) {
        if w[0] != w[1] {
            transitions[w[0]][w[1]] += 1;
            visited.push(w[1]);
        }
    }
    Ok(InterventionOutcome {
        hidden,
        pre,
        change_count: visited.len().saturating_sub(1),
        dominant,
        transitions,
        visited,
        activity_scale: activity,
    })
}

/// A random set of `size` neurons outside every kick group and population.
pub fn control_set(groups: &NeuronGroups, size: usize, stream: &RngStream) -> Result<Vec<usize>> {
    let mut pool = groups.residual.clone();
    if pool.len() < size {
        return Err(Error::Data(format!("only {} neurons outside the circuit, need {size}", pool.len())));
    }
    let mut s = stream.clone();
    s.shuffle(&mut pool);
    pool.truncate(size);
    pool.sort_unstable();
    Ok(pool)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalPairs {
    pub mean: f64,
    pub sd: f64,
    pub counts: Vec<usize>,
    pub delta: f64,
}

/// Complex-conjugate pairs (counted once, by the member with Im > 0) whose modulus lies in `[1 − δ, 1 + δ]`.
pub fn count_critical(spectrum: &[num_complex::Complex64], delta: f64) -> usize {
    spectrum.iter().filter(|l| l.im > 0.0 && (l.norm() - 1.0).abs() <= delta).count()
}

/// Critical-pair statistics of `J = W_hhᵀ·D(z)·S` over the pre-activation rows of `pre`,
/// `S` being the activity scale of the intervention.
pub fn critical_pairs(p: &RnnParams, pre: &Matrix, activity_scale: &[f64], delta: f64) -> Result<CriticalPairs> {
    if !(delta >= 0.0) {
        return Err(Error::Parameter(format!("band half-width must be non-negative, got {delta}")));
    }
    let mut counts = Vec::with_capacity(pre.rows());
    for r in 0..pre.rows() {
        counts.push(count_critical(&jacobian_spectrum(p, pre.row(r), activity_scale)?, delta));
    }
    let c: Vec<f64> = counts.iter().map(|&v| v as f64).collect();
    let sd = if c.len() > 1 { std_dev(&c) } else { 0.0 };
    Ok(CriticalPairs { mean: if c.is_empty() { 0.0 } else { mean(&c) }, sd, counts, delta })
}

/// Critical pairs along an intervened trajectory, every `stride` steps after `burn_in`.
pub fn outcome_critical_pairs(p: &RnnParams, outcome: &InterventionOutcome, burn_in: usize, stride: usize, delta: f64) -> Result<CriticalPairs> {
    let rows: Vec<usize> = (burn_in..outcome.pre.rows()).step_by(stride.max(1)).collect();
    let cols: Vec<usize> = (0..p.hidden()).collect();
    critical_pairs(p, &outcome.pre.select(&rows, &cols), &outcome.activity_scale, delta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRow {
    pub mu: f64,
    pub target: String,
    pub mode: Mode,
    pub transition_count: usize,
    pub critical_pairs_mean: f64,
    pub critical_pairs_sd: f64,
}

pub const OUTCOME_CSV_HEADER: &str = "mu,target,mode,transition_count,critical_pairs_mean,critical_pairs_sd";

pub fn outcome_csv(rows: &[OutcomeRow]) -> String {
    let mut s = format!("{OUTCOME_CSV_HEADER}\n");
    for r in rows {
        let mode = match r.mode {
            Mode::ActivityScale => "activity_scale",
            Mode::NoiseDriveScale => "noise_drive_scale",
        };
        s.push_str(&format!("{:?},{},{},{},{:?},{:?}\n", r.mu, r.target, mode, r.transition_count, r.critical_pairs_mean, r.critical_pairs_sd));
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub start: usize,
    pub end: usize,
    pub cluster: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OscillationTraces {
    pub kick: Vec<Vec<f64>>,
    pub populations: Vec<Vec<f64>>,
    pub dominant: Vec<usize>,
    /// Maximal runs of a constant dominant logit, end exclusive.
    pub bands: Vec<Band>,
    /// Lag-0 correlation between the first two population series.
    pub population_correlation: Option<f64>,
}

pub fn group_mean_series(hidden: &Matrix, group: &[usize]) -> Vec<f64> {
    (0..hidden.rows())
        .map(|t| if group.is_empty() { 0.0 } else { group.iter().map(|&n| hidden[(t, n)]).sum::<f64>() / group.len() as f64 })
        .collect()
}

pub fn bands(dominant: &[usize]) -> Vec<Band> {
    let mut out: Vec<Band> = Vec::new();
    for (t, &c) in dominant.iter().enumerate() {
        match out.last_mut() {
            Some(b) if b.cluster == c => b.end = t + 1,
            _ => out.push(Band { start: t, end: t + 1, cluster: c }),
        }
    }
    out
}

pub fn oscillation_traces(p: &RnnParams, len: usize, groups: &NeuronGroups, sigma: f64, stream: &RngStream) -> Result<OscillationTraces> {
    if groups.kick.is_empty() && groups.populations.is_empty() {
        return Err(Error::Parameter("no groups to trace".into()));
    }
    let spec = InterventionSpec { modulations: Vec::new(), horizon: len, initial: vec![0.0; p.hidden()], sigma };
    let out = intervene(p, groups, &spec, stream)?;
    let kick: Vec<Vec<f64>> = groups.kick.iter().map(|g| group_mean_series(&out.hidden, g)).collect();
    let populations: Vec<Vec<f64>> = groups.populations.iter().map(|g| group_mean_series(&out.hidden, g)).collect();
    let population_correlation = match populations.as_slice() {
        [a, b, ..] => pearson(a, b),
        _ => None,
    };
    Ok(OscillationTraces { kick, populations, bands: bands(&out.dominant), dominant: out.dominant, population_correlation })
}

/// Fraction of each readout row lying in the span of a two-component basis;
/// `None` for an all-zero row.
pub fn readout_alignment(p: &RnnParams, basis: &PcaBasis) -> Result<Vec<Option<f64>>> {
    if basis.components.rows() != 2 {
        return Err(Error::Parameter(format!("alignment needs a 2-component basis, got {}", basis.components.rows())));
    }
    if basis.components.cols() != p.hidden() {
        return dim_err(format!("basis width {} vs H = {}", basis.components.cols(), p.hidden()));
    }
    Ok((0..p.readout.rows())
        .map(|i| {
            let a = p.readout.row(i);
            let len = norm(a);
            if len == 0.0 {
                return None;
            }
            let proj = (0..2).map(|k| dot(basis.components.row(k), a).powi(2)).sum::<f64>().sqrt();
            Some((proj / len).clamp(0.0, 1.0))
        })
        .collect())
}
