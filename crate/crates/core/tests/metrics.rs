use hmmrnn::hmm::{self, build_linear_chain, build_preset, ObsSequence, Preset};
use hmmrnn::metrics::{
    aligned_euclidean, empirical_transition, evaluate, hmm_sequences, paired_distance, rnn_sequences, transition_sq_diff, EvalConfig,
    TransitionMatrix,
};
use hmmrnn::numerics::{Matrix, RngStream};
use hmmrnn::ot::SinkhornConfig;
use hmmrnn::rnn::init_params;

fn seq(v: &[usize]) -> ObsSequence {
    ObsSequence::new(v.to_vec(), 3).unwrap()
}

fn sharp() -> SinkhornConfig {
    SinkhornConfig { eps: 1e-3, max_iters: 20_000, tol: 1e-10, extrapolate: true }
}

#[test]
fn identical_sets_pair_at_zero_distance() {
    let spec = build_preset(Preset::Cyclic);
    let seqs = hmm_sequences(&spec, 30, 20, &RngStream::new(1, 0));
    let (m, sd) = paired_distance(&seqs, &seqs, &sharp()).unwrap();
    assert!(m.abs() < 1e-12 && sd.abs() < 1e-12, "{m} ± {sd}");
    let mut shuffled = seqs.clone();
    shuffled.rotate_left(7);
    let (m2, _) = paired_distance(&seqs, &shuffled, &sharp()).unwrap();
    assert!(m2.abs() < 1e-12);
}

#[test]
fn single_flip_costs_root_two() {
    let a = vec![seq(&[0, 1, 2, 2, 0]), seq(&[2, 2, 2, 2, 2])];
    let b = vec![seq(&[2, 2, 2, 2, 1]), seq(&[0, 1, 2, 0, 0])];
    let (m, sd) = paired_distance(&a, &b, &sharp()).unwrap();
    assert!((m - 2f64.sqrt()).abs() < 1e-9, "{m}");
    assert!(sd.abs() < 1e-9);
    let short = vec![seq(&[0, 1, 2])];
    assert!(paired_distance(&a, &short, &sharp()).is_err());
}

#[test]
fn hmm_against_itself_matches_its_baseline() {
    let spec = build_linear_chain(2, 0.05, 0.01).unwrap();
    let model = hmm_sequences(&spec, 200, 100, &RngStream::new(2, 0));
    let reference = hmm_sequences(&spec, 400, 100, &RngStream::new(2, 1));
    let d = aligned_euclidean(&model, &reference, &SinkhornConfig::with_eps(0.05)).unwrap();
    assert!((d.mean - d.baseline_mean).abs() < 0.1 * d.baseline_mean, "{} vs {}", d.mean, d.baseline_mean);
    assert!(d.baseline_mean > 0.0);
}

#[test]
fn transition_hand_cases() {
    let constant = empirical_transition(&[seq(&[0; 10])]);
    assert_eq!(constant.rows[0], Some(vec![1.0, 0.0, 0.0]));
    assert_eq!(constant.rows[1], None);
    assert_eq!(constant.rows[2], None);
    let cycle: Vec<usize> = (0..30).map(|t| t % 3).collect();
    let perm = empirical_transition(&[seq(&cycle)]);
    for i in 0..3 {
        for j in 0..3 {
            assert_eq!(perm.get(i, j).unwrap(), if j == (i + 1) % 3 { 1.0 } else { 0.0 });
        }
    }
    // transitions do not cross sequence boundaries
    let split = empirical_transition(&[seq(&[0, 0]), seq(&[1, 1])]);
    assert_eq!(split.get(0, 1), Some(0.0));
    assert_eq!(split.get(1, 1), Some(1.0));
}

#[test]
fn squared_differences() {
    let a = TransitionMatrix::from_matrix(&Matrix::from_rows(&[vec![0.5, 0.25, 0.25], vec![0.2, 0.3, 0.5], vec![1.0, 0.0, 0.0]]).unwrap());
    let b = TransitionMatrix::from_matrix(&Matrix::from_rows(&[vec![0.4, 0.35, 0.25], vec![0.2, 0.3, 0.5], vec![0.9, 0.0, 0.1]]).unwrap());
    let d = transition_sq_diff(&a, &b);
    let want = [[0.01, 0.01, 0.0], [0.0, 0.0, 0.0], [0.01, 0.0, 0.01]];
    for i in 0..3 {
        for j in 0..3 {
            assert!((d.get(i, j).unwrap() - want[i][j]).abs() < 1e-15);
        }
    }
    assert_eq!(transition_sq_diff(&a, &a).max_entry(), Some(0.0));
    let mut missing = a.clone();
    missing.rows[1] = None;
    let d = transition_sq_diff(&missing, &b);
    assert_eq!(d.rows[1], None);
    assert!(d.rows[0].is_some());
}

#[test]
fn evaluation_is_deterministic_and_analytic() {
    let spec = build_linear_chain(3, 0.05, 0.01).unwrap();
    let p = init_params(10, 4, &mut RngStream::new(3, 0)).unwrap();
    let cfg = EvalConfig { n_sequences: 40, seq_len: 30, burn_in: 20, ..EvalConfig::default() };
    let a = evaluate(&p, &spec, &cfg).unwrap();
    let b = evaluate(&p, &spec, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.reference, "analytic");
    assert_eq!(a.frequencies_hmm, hmm::obs_frequencies(&spec).unwrap());
    let pair = hmm::obs_pair_matrix(&spec).unwrap();
    for i in 0..3 {
        if let (Some(r), Some(d)) = (a.transition_rnn.get(i, 0), a.transition_sq_diff.get(i, 0)) {
            assert!((d - (r - pair[(i, 0)]).powi(2)).abs() < 1e-15);
        }
    }
    assert!((a.frequencies_rnn.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!((0.0..=1.0).contains(&a.volatility_rnn));
}

#[test]
fn rnn_sequences_have_requested_shape_and_burn_in() {
    let p = init_params(6, 2, &mut RngStream::new(4, 0)).unwrap();
    let root = RngStream::new(4, 1);
    let with = rnn_sequences(&p, 5, 25, 10, 1.0, &root).unwrap();
    let without = rnn_sequences(&p, 5, 35, 0, 1.0, &root).unwrap();
    for (w, wo) in with.iter().zip(&without) {
        assert_eq!(w.len(), 25);
        assert_eq!(w.observations[..], wo.observations[10..]);
    }
}
