use hmmrnn::numerics::stats::mean;
use hmmrnn::numerics::{Matrix, RngStream};
use hmmrnn::rnn::{self, bptt, clip_grad_norm, gumbel_softmax, init_params, rollout, GumbelSource, InputSource, RnnParams};
use proptest::prelude::*;

mod common;
use common::softmax;

fn net(seed: u64, h: usize, d: usize, gain: f64) -> RnnParams {
    common::scaled_net(seed, h, d, gain)
}

#[test]
fn bptt_matches_central_differences() {
    let errors: Vec<f64> = (0..24u64).filter_map(common::bptt_fd_error).collect();
    assert!(errors.len() >= 20, "only {} nets away from kinks", errors.len());
    let worst = errors.iter().cloned().fold(0.0, f64::max);
    assert!(worst < 1e-5, "{worst}");
}

#[test]
fn step_and_readout_match_loops() {
    let mut s = RngStream::new(7, 0);
    let p = net(3, 6, 4, 1.0);
    let hp: Vec<f64> = (0..6).map(|_| s.gaussian()).collect();
    let x: Vec<f64> = (0..4).map(|_| s.gaussian()).collect();
    let (z, h) = rnn::step(&p, &hp, &x).unwrap();
    for i in 0..6 {
        let mut want = 0.0;
        for j in 0..6 {
            want += hp[j] * p.w_hh[(i, j)];
        }
        for j in 0..4 {
            want += x[j] * p.w_ih[(i, j)];
        }
        assert!((z[i] - want).abs() < 1e-12);
        assert_eq!(h[i], z[i].max(0.0));
    }
    let y = rnn::readout(&p, &h).unwrap();
    for k in 0..3 {
        let want: f64 = (0..6).map(|i| h[i] * p.readout[(k, i)]).sum();
        assert!((y[k] - want).abs() < 1e-12);
    }
    assert!(rnn::step(&p, &hp[..5], &x).is_err());
    assert!(rnn::readout(&p, &h[..2]).is_err());
}


#[test]
fn gumbel_max_frequencies() {
    let mut s = RngStream::new(13, 0);
    for _ in 0..5 {
        let y: Vec<f64> = (0..3).map(|_| 2.0 * s.gaussian()).collect();
        let mut counts = [0usize; 3];
        for _ in 0..100_000 {
            let g = [s.gumbel(), s.gumbel(), s.gumbel()];
            let out = gumbel_softmax(&y, 1e-6, &g).unwrap();
            let k = (0..3).max_by(|&a, &b| out[a].total_cmp(&out[b])).unwrap();
            counts[k] += 1;
        }
        for (c, p) in counts.iter().zip(softmax(&y)) {
            assert!((*c as f64 / 1e5 - p).abs() < 0.01, "{counts:?} vs {:?}", softmax(&y));
        }
    }
}

#[test]
fn low_temperature_is_one_hot() {
    let out = gumbel_softmax(&[0.3, 0.1, -0.2], 1e-6, &[0.0, 0.25, 0.0]).unwrap();
    assert!((out[1] - 1.0).abs() < 1e-6 && out[0] < 1e-6 && out[2] < 1e-6);
    assert!(gumbel_softmax(&[0.0; 3], 0.0, &[0.0; 3]).is_err());
}

#[test]
fn init_moments() {
    let p = init_params(100, 100, &mut RngStream::new(21, 0)).unwrap();
    let all: Vec<f64> = [p.w_hh.data(), p.w_ih.data(), p.readout.data()].concat();
    let bound = 0.1;
    assert!(all.iter().all(|w| w.abs() < bound));
    // uniform(-b, b) has sd b/√3
    let se = bound / 3f64.sqrt() / (all.len() as f64).sqrt();
    assert!(mean(&all).abs() < 3.0 * se);
}

#[test]
fn homogeneous_input_path() {
    let mut p = net(5, 5, 3, 1.0);
    p.readout = Matrix::zeros(3, 5);
    let mut s = RngStream::new(5, 5);
    let h0: Vec<f64> = (0..5).map(|_| s.uniform()).collect();
    let x: Vec<f64> = (0..3).map(|_| s.gaussian()).collect();
    let (z, _) = rnn::step(&p, &h0, &x).unwrap();
    let c = 2.5;
    let mut q = p.clone();
    q.w_ih = p.w_ih.scale(c);
    let h0c: Vec<f64> = h0.iter().map(|v| v * c).collect();
    let (zc, _) = rnn::step(&q, &h0c, &x).unwrap();
    for (a, b) in z.iter().zip(&zc) {
        assert!((a * c - b).abs() < 1e-12);
    }
}

#[test]
fn clipping_preserves_direction() {
    let p = net(2, 4, 2, 1.0);
    let r = rollout(&p, 3, InputSource::Gaussian { sigma: 1.0, stream: &mut RngStream::new(1, 1) }, &[0.0; 4], 1.0, GumbelSource::Stream(&mut RngStream::new(1, 2))).unwrap();
    let g = bptt(&p, &r, &Matrix::from_fn(3, 3, |i, j| (i + 2 * j) as f64 - 2.0)).unwrap();
    let c = clip_grad_norm(&g, 0.1 * g.global_norm());
    let dot: f64 = g.as_slices().iter().zip(c.as_slices()).flat_map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| x * y)).sum();
    let cos = dot / (g.global_norm() * c.global_norm());
    assert!((cos - 1.0).abs() < 1e-12);
    assert!((c.global_norm() - 0.1 * g.global_norm()).abs() < 1e-12 * g.global_norm());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn rollout_invariants(seed in any::<u64>(), len in 1usize..30, h in 1usize..10) {
        let p = net(seed, h, 3, 1.0);
        let mut xs = RngStream::new(seed, 1);
        let mut gs = RngStream::new(seed, 2);
        let r = rollout(&p, len, InputSource::Gaussian { sigma: 1.0, stream: &mut xs }, &vec![0.0; h], 1.0, GumbelSource::Stream(&mut gs)).unwrap();
        for (z, hv) in r.pre.data().iter().zip(r.hidden.data()) {
            if *z <= 0.0 {
                prop_assert_eq!(*hv, 0.0);
            } else {
                prop_assert_eq!(*hv, *z);
            }
        }
        for t in 0..len {
            let row = r.soft.row(t);
            prop_assert!(row.iter().all(|&v| v > 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
