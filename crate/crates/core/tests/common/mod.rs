//! Oracles shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use hmmrnn::numerics::{Matrix, RngStream};
use hmmrnn::ot::{divergence_gradient, sinkhorn_divergence, PointCloud, SinkhornConfig};
use hmmrnn::rnn::{bptt, init_params, rollout, GumbelSource, InputSource, RnnParams};

pub fn cloud(n: usize, dim: usize, s: &mut RngStream) -> PointCloud {
    PointCloud::uniform(Matrix::from_fn(n, dim, |_, _| s.gaussian())).unwrap()
}

pub fn tight(eps: f64) -> SinkhornConfig {
    SinkhornConfig { eps, max_iters: 50_000, tol: 1e-12, extrapolate: true }
}

pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

/// Exact assignment optimum for uniform weights, by enumeration.
pub fn brute_force(c: &Matrix) -> f64 {
    let n = c.rows();
    permutations(n)
        .iter()
        .map(|p| p.iter().enumerate().map(|(i, &j)| c[(i, j)]).sum::<f64>() / n as f64)
        .fold(f64::INFINITY, f64::min)
}

pub fn softmax(y: &[f64]) -> Vec<f64> {
    let m = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = y.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

pub fn scaled_net(seed: u64, h: usize, d: usize, gain: f64) -> RnnParams {
    let mut p = init_params(h, d, &mut RngStream::new(seed, 0)).unwrap();
    for m in [&mut p.w_hh, &mut p.w_ih, &mut p.readout] {
        m.data_mut().iter_mut().for_each(|w| *w *= gain);
    }
    p
}

fn block_mut(p: &mut RnnParams, b: usize) -> &mut Matrix {
    match b {
        0 => &mut p.w_hh,
        1 => &mut p.w_ih,
        _ => &mut p.readout,
    }
}

/// Worst relative error of BPTT against central differences of `Σ_t ⟨w_t, soft_t⟩`
/// for one random net (H 2–8, T 1–5), with inputs and Gumbel draws replayed.
/// `None` when a pre-activation lies within the FD step of a ReLU kink.
pub fn bptt_fd_error(seed: u64) -> Option<f64> {
    let fd_h = 1e-6;
    let mut s = RngStream::new(seed, 1);
    let h = 2 + s.below(7);
    let len = 1 + s.below(5);
    let d = 1 + s.below(3);
    let tau = [1.0, 0.5, 2.0][seed as usize % 3];
    let p = scaled_net(seed, h, d, 2.0);
    let h0: Vec<f64> = (0..h).map(|_| s.uniform()).collect();
    let xs = Matrix::from_fn(len, d, |_, _| s.gaussian());
    let gs = Matrix::from_fn(len, 3, |_, _| s.gumbel());
    let w = Matrix::from_fn(len, 3, |_, _| s.gaussian());
    let loss = |q: &RnnParams| -> f64 {
        let r = rollout(q, len, InputSource::Given(&xs), &h0, tau, GumbelSource::Given(&gs)).unwrap();
        r.soft.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
    };
    let r = rollout(&p, len, InputSource::Given(&xs), &h0, tau, GumbelSource::Given(&gs)).unwrap();
    if r.pre.data().iter().any(|z| z.abs() < 1e-4) {
        return None;
    }
    let g = bptt(&p, &r, &w).unwrap();
    let analytic = g.as_slices();
    let mut worst: f64 = 0.0;
    for b in 0..3 {
        for k in 0..analytic[b].len() {
            let mut plus = p.clone();
            block_mut(&mut plus, b).data_mut()[k] += fd_h;
            let mut minus = p.clone();
            block_mut(&mut minus, b).data_mut()[k] -= fd_h;
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * fd_h);
            let a = analytic[b][k];
            worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(1e-3));
        }
    }
    Some(worst)
}

/// Worst relative error of `divergence_gradient` against central differences in `x`.
pub fn divergence_fd_error(x: &PointCloud, y: &PointCloud, cfg: &SinkhornConfig) -> f64 {
    let h = 1e-5;
    let g = divergence_gradient(x, y, cfg).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        for d in 0..x.dim() {
            let shifted = |delta: f64| {
                let mut p = x.points().clone();
                p[(i, d)] += delta;
                sinkhorn_divergence(&PointCloud::uniform(p).unwrap(), y, cfg).unwrap()
            };
            let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
            let a = g[(i, d)];
            worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(1e-3));
        }
    }
    worst
}
