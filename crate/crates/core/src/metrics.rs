//! Emission-statistics metrics comparing network output sequences with HMM references.

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::hmm::{self, HmmSpec, ObsSequence, N_OBS};
use crate::numerics::stats::{mean, std_dev};
use crate::numerics::{Matrix, RngStream};
use crate::ot::{self, PointCloud, SinkhornConfig};
use crate::rnn::{self, GumbelSource, InputSource, RnnParams};

/// Hard Gumbel-max emissions of `n` noisy rollouts, each with its own split streams.
/// The first `burn_in` steps of every rollout are discarded.
pub fn rnn_sequences(
    p: &RnnParams,
    n: usize,
    len: usize,
    burn_in: usize,
    sigma: f64,
    stream: &RngStream,
) -> Result<Vec<ObsSequence>> {
    let h0 = vec![0.0; p.hidden()];
    (0..n)
        .map(|i| {
            let mut xs = stream.split(2 * i as u64);
            let mut gs = stream.split(2 * i as u64 + 1);
            let r = rnn::rollout(
                p,
                burn_in + len,
                InputSource::Gaussian { sigma, stream: &mut xs },
                &h0,
                1.0,
                GumbelSource::Stream(&mut gs),
            )?;
            let hard = r.hard_emissions();
            ObsSequence::new(hard.observations[burn_in..].to_vec(), N_OBS)
        })
        .collect()
}

/// `n` independent HMM samples of length `len`.
pub fn hmm_sequences(spec: &HmmSpec, n: usize, len: usize, stream: &RngStream) -> Vec<ObsSequence> {
    (0..n).map(|i| hmm::sample(spec, len, &mut stream.split(i as u64)).1).collect()
}

fn flatten(seqs: &[ObsSequence]) -> Result<PointCloud> {
    let len = seqs[0].len();
    let mut m = Matrix::zeros(seqs.len(), len * N_OBS);
    for (k, s) in seqs.iter().enumerate() {
        if s.len() != len {
            return dim_err(format!("sequence {k} has length {}, expected {len}", s.len()));
        }
        m.row_mut(k).copy_from_slice(&s.flat_one_hot());
    }
    PointCloud::uniform(m)
}

/// Mean and sd of Euclidean distances between OT-paired flattened sequences.
pub fn paired_distance(a: &[ObsSequence], b: &[ObsSequence], sk: &SinkhornConfig) -> Result<(f64, f64)> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Data("aligned distance needs nonempty sets".into()));
    }
    let (x, y) = (flatten(a)?, flatten(b)?);
    if x.dim() != y.dim() {
        return dim_err("sequence lengths differ between the two sets");
    }
    let pairing = ot::align(&x, &y, sk)?;
    let d: Vec<f64> = pairing
        .iter()
        .enumerate()
        .map(|(i, &j)| crate::numerics::sq_dist(x.points().row(i), y.points().row(j)).sqrt())
        .collect();
    Ok((mean(&d), std_dev(&d)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignedDistance {
    pub mean: f64,
    pub sd: f64,
    pub baseline_mean: f64,
    pub baseline_sd: f64,
}

/// Model-vs-reference distance and the reference self-baseline, at matched set sizes.
///
/// The reference set is split in halves `R1`, `R2`; the model term pairs the first
/// `|R2|` model sequences with `R2`, the baseline pairs `R1` with `R2`.
pub fn aligned_euclidean(rnn_seqs: &[ObsSequence], hmm_seqs: &[ObsSequence], sk: &SinkhornConfig) -> Result<AlignedDistance> {
    let half = hmm_seqs.len() / 2;
    if half == 0 || rnn_seqs.len() < half {
        return Err(Error::Data(format!(
            "need at least 2 reference and {half} model sequences, got {} and {}",
            hmm_seqs.len(),
            rnn_seqs.len()
        )));
    }
    let (r1, r2) = (&hmm_seqs[..half], &hmm_seqs[half..2 * half]);
    let (mean, sd) = paired_distance(&rnn_seqs[..half], r2, sk)?;
    let (baseline_mean, baseline_sd) = paired_distance(r1, r2, sk)?;
    Ok(AlignedDistance { mean, sd, baseline_mean, baseline_sd })
}

/// 3×3 transition estimate; `None` rows were never observed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionMatrix {
    pub rows: Vec<Option<Vec<f64>>>,
}

impl TransitionMatrix {
    pub fn from_matrix(m: &Matrix) -> Self {
        Self { rows: (0..m.rows()).map(|i| Some(m.row(i).to_vec())).collect() }
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.rows.get(i)?.as_ref().map(|r| r[j])
    }

    /// Largest entry over defined rows.
    pub fn max_entry(&self) -> Option<f64> {
        self.rows.iter().flatten().flatten().copied().reduce(f64::max)
    }
}

pub fn empirical_transition(seqs: &[ObsSequence]) -> TransitionMatrix {
    let mut counts = [[0u64; N_OBS]; N_OBS];
    for s in seqs {
        for w in s.observations.windows(2) {
            counts[w[0]][w[1]] += 1;
        }
    }
    let rows = counts
        .iter()
        .map(|c| {
            let total: u64 = c.iter().sum();
            (total > 0).then(|| c.iter().map(|&k| k as f64 / total as f64).collect())
        })
        .collect();
    TransitionMatrix { rows }
}

/// Elementwise `(a − b)²`; a row undefined in either input is undefined in the result.
pub fn transition_sq_diff(a: &TransitionMatrix, b: &TransitionMatrix) -> TransitionMatrix {
    let rows = a
        .rows
        .iter()
        .zip(&b.rows)
        .map(|(ra, rb)| match (ra, rb) {
            (Some(x), Some(y)) => Some(x.iter().zip(y).map(|(u, v)| (u - v) * (u - v)).collect()),
            _ => None,
        })
        .collect();
    TransitionMatrix { rows }
}

pub fn observation_frequencies(seqs: &[ObsSequence]) -> Result<Vec<f64>> {
    let mut counts = [0u64; N_OBS];
    for s in seqs {
        for &o in &s.observations {
            counts[o] += 1;
        }
    }
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::Data("no observations".into()));
    }
    Ok(counts.iter().map(|&c| c as f64 / total as f64).collect())
}

/// Fraction of adjacent pairs with `o_{t+1} ≠ o_t`, pooled over sequences.
pub fn volatility(seqs: &[ObsSequence]) -> Result<f64> {
    let (mut changes, mut pairs) = (0u64, 0u64);
    for s in seqs {
        for w in s.observations.windows(2) {
            pairs += 1;
            changes += u64::from(w[0] != w[1]);
        }
    }
    if pairs == 0 {
        return Err(Error::Data("no adjacent observation pairs".into()));
    }
    Ok(changes as f64 / pairs as f64)
}

/// Evaluation sampling settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub n_sequences: usize,
    pub seq_len: usize,
    pub burn_in: usize,
    pub sigma_input: f64,
    pub eps_sinkhorn: f64,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { n_sequences: 500, seq_len: 100, burn_in: 200, sigma_input: 1.0, eps_sinkhorn: 0.05, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub aligned: AlignedDistance,
    pub transition_rnn: TransitionMatrix,
    pub transition_hmm: TransitionMatrix,
    pub transition_sq_diff: TransitionMatrix,
    pub frequencies_rnn: Vec<f64>,
    pub frequencies_hmm: Vec<f64>,
    pub volatility_rnn: f64,
    pub volatility_hmm: f64,
    /// `analytic` when the reference statistics come from the HMM itself, `empirical` otherwise.
    pub reference: String,
    pub eps_sinkhorn: f64,
    pub n_sequences: usize,
    pub seq_len: usize,
}

/// All four metrics from two sequence sets, with empirical reference statistics.
pub fn metric_report(rnn_seqs: &[ObsSequence], hmm_seqs: &[ObsSequence], eps: f64) -> Result<MetricReport> {
    let aligned = aligned_euclidean(rnn_seqs, hmm_seqs, &SinkhornConfig::with_eps(eps))?;
    let transition_rnn = empirical_transition(rnn_seqs);
    let transition_hmm = empirical_transition(hmm_seqs);
    Ok(MetricReport {
        aligned,
        transition_sq_diff: transition_sq_diff(&transition_rnn, &transition_hmm),
        transition_rnn,
        transition_hmm,
        frequencies_rnn: observation_frequencies(rnn_seqs)?,
        frequencies_hmm: observation_frequencies(hmm_seqs)?,
        volatility_rnn: volatility(rnn_seqs)?,
        volatility_hmm: volatility(hmm_seqs)?,
        reference: "empirical".into(),
        eps_sinkhorn: eps,
        n_sequences: rnn_seqs.len(),
        seq_len: rnn_seqs.first().map_or(0, ObsSequence::len),
    })
}

/// Sample from the network and the HMM, then score against the analytic HMM statistics.
pub fn evaluate(p: &RnnParams, spec: &HmmSpec, cfg: &EvalConfig) -> Result<MetricReport> {
    let root = RngStream::new(cfg.seed, 0);
    let rnn_seqs = rnn_sequences(p, cfg.n_sequences, cfg.seq_len, cfg.burn_in, cfg.sigma_input, &root.split(1))?;
    let hmm_seqs = hmm_sequences(spec, cfg.n_sequences, cfg.seq_len, &root.split(2));
    let mut report = metric_report(&rnn_seqs, &hmm_seqs, cfg.eps_sinkhorn)?;
    let pair = hmm::obs_pair_matrix(spec);
    if let Ok(pair) = pair {
        report.transition_hmm = TransitionMatrix::from_matrix(&pair);
        report.transition_sq_diff = transition_sq_diff(&report.transition_rnn, &report.transition_hmm);
        report.frequencies_hmm = hmm::obs_frequencies(spec)?;
        report.volatility_hmm = hmm::obs_volatility(spec)?;
        report.reference = "analytic".into();
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(v: &[usize]) -> ObsSequence {
        ObsSequence::new(v.to_vec(), 3).unwrap()
    }

    #[test]
    fn constant_sequence() {
        let s = [seq(&[0; 10])];
        let t = empirical_transition(&s);
        assert_eq!(t.rows[0], Some(vec![1.0, 0.0, 0.0]));
        assert!(t.rows[1].is_none() && t.rows[2].is_none());
        assert_eq!(observation_frequencies(&s).unwrap(), vec![1.0, 0.0, 0.0]);
        assert_eq!(volatility(&s).unwrap(), 0.0);
    }

    #[test]
    fn strict_cycle_is_a_permutation() {
        let s = [seq(&[0, 1, 2, 0, 1, 2, 0])];
        let t = empirical_transition(&s);
        assert_eq!(t.rows[0], Some(vec![0.0, 1.0, 0.0]));
        assert_eq!(t.rows[1], Some(vec![0.0, 0.0, 1.0]));
        assert_eq!(t.rows[2], Some(vec![1.0, 0.0, 0.0]));
    }

    #[test]
    fn alternating_volatility() {
        assert_eq!(volatility(&[seq(&[0, 1, 0, 1, 0, 1])]).unwrap(), 1.0);
    }

    #[test]
    fn sq_diff_examples() {
        let a = TransitionMatrix { rows: vec![Some(vec![0.5, 0.5, 0.0]), None, Some(vec![0.0, 0.0, 1.0])] };
        let b = TransitionMatrix { rows: vec![Some(vec![0.4, 0.5, 0.1]), Some(vec![1.0, 0.0, 0.0]), Some(vec![0.0, 0.0, 1.0])] };
        let d = transition_sq_diff(&a, &b);
        assert!((d.get(0, 0).unwrap() - 0.01).abs() < 1e-15);
        assert!(d.rows[1].is_none());
        assert_eq!(d.rows[2], Some(vec![0.0; 3]));
        assert_eq!(transition_sq_diff(&b, &b).max_entry(), Some(0.0));
    }

    #[test]
    fn one_flip_is_root_two() {
        let a = [seq(&[0, 1, 2, 2])];
        let b = [seq(&[0, 1, 0, 2])];
        let (m, _) = paired_distance(&a, &b, &SinkhornConfig::default()).unwrap();
        assert!((m - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn identical_sets_have_zero_distance() {
        let s = [seq(&[0, 0, 1]), seq(&[2, 2, 2]), seq(&[1, 0, 1])];
        assert_eq!(paired_distance(&s, &s, &SinkhornConfig::with_eps(0.01)).unwrap().0, 0.0);
    }

    #[test]
    fn length_mismatch_is_dimension_error() {
        let r = paired_distance(&[seq(&[0, 1])], &[seq(&[0, 1, 2])], &SinkhornConfig::default());
        assert!(matches!(r, Err(Error::Dimension(_))));
    }
}
