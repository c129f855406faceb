//! Vanilla ReLU recurrent network with a Gumbel-Softmax emission head.
//!
//! Row-vector convention throughout: `z_t = h_{t-1}·W_hhᵀ + x_t·W_ihᵀ`,
//! `h_t = max(0, z_t)`, `y_t = h_t·Aᵀ`. A perturbation therefore propagates as
//! `δh_t = δh_{t-1}·J_t` with `J_t = W_hhᵀ·D_t`.

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::hmm::{ObsSequence, N_OBS};
use crate::numerics::{dot, Matrix, RngStream};

/// Recurrent, input and readout weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RnnParams {
    pub w_hh: Matrix,
    pub w_ih: Matrix,
    pub readout: Matrix,
}

impl RnnParams {
    pub fn new(w_hh: Matrix, w_ih: Matrix, readout: Matrix) -> Result<Self> {
        let h = w_hh.rows();
        if !w_hh.is_square() || w_ih.rows() != h || readout.cols() != h || readout.rows() != N_OBS {
            return dim_err(format!(
                "inconsistent shapes: W_hh {:?}, W_ih {:?}, A {:?}",
                w_hh.shape(),
                w_ih.shape(),
                readout.shape()
            ));
        }
        for (m, name) in [(&w_hh, "W_hh"), (&w_ih, "W_ih"), (&readout, "A")] {
            m.ensure_finite(name)?;
        }
        Ok(Self { w_hh, w_ih, readout })
    }

    pub fn hidden(&self) -> usize {
        self.w_hh.rows()
    }

    pub fn input(&self) -> usize {
        self.w_ih.cols()
    }

    pub fn block_sizes(&self) -> [usize; 3] {
        [self.w_hh.data().len(), self.w_ih.data().len(), self.readout.data().len()]
    }
}

pub const BLOCK_NAMES: [&str; 3] = ["W_hh", "W_ih", "A"];

/// Uniform(-√(1/H), √(1/H)) for every weight, drawn W_hh, W_ih, A in row-major order.
pub fn init_params(hidden: usize, input: usize, stream: &mut RngStream) -> Result<RnnParams> {
    if hidden == 0 || input == 0 {
        return Err(Error::Parameter(format!("hidden and input sizes must be positive, got {hidden}, {input}")));
    }
    let bound = (1.0 / hidden as f64).sqrt();
    let mut draw = |r, c| Matrix::from_fn(r, c, |_, _| stream.uniform_range(-bound, bound));
    let w_hh = draw(hidden, hidden);
    let w_ih = draw(hidden, input);
    let readout = draw(N_OBS, hidden);
    RnnParams::new(w_hh, w_ih, readout)
}

/// Pre-activation and hidden state after one step.
pub fn step(p: &RnnParams, h_prev: &[f64], x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if h_prev.len() != p.hidden() || x.len() != p.input() {
        return dim_err(format!(
            "step expects state {} and input {}, got {} and {}",
            p.hidden(),
            p.input(),
            h_prev.len(),
            x.len()
        ));
    }
    let mut z = vec![0.0; p.hidden()];
    let mut h = vec![0.0; p.hidden()];
    step_into(p, h_prev, x, &mut z, &mut h);
    Ok((z, h))
}

#[inline]
pub(crate) fn step_into(p: &RnnParams, h_prev: &[f64], x: &[f64], z: &mut [f64], h: &mut [f64]) {
    for i in 0..z.len() {
        let zi = dot(p.w_hh.row(i), h_prev) + dot(p.w_ih.row(i), x);
        z[i] = zi;
        h[i] = zi.max(0.0);
    }
}

pub fn readout(p: &RnnParams, h: &[f64]) -> Result<Vec<f64>> {
    p.readout.mul_vec(h)
}

#[inline]
pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// `softmax((logits + g) / τ)` with max-subtraction.
pub fn gumbel_softmax(logits: &[f64], tau: f64, g: &[f64]) -> Result<Vec<f64>> {
    if !(tau > 0.0) {
        return Err(Error::Parameter(format!("temperature must be positive, got {tau}")));
    }
    if logits.len() != g.len() {
        return dim_err(format!("{} logits but {} gumbel draws", logits.len(), g.len()));
    }
    let mut out = vec![0.0; logits.len()];
    softmax_into(logits, g, tau, &mut out);
    Ok(out)
}

#[inline]
fn softmax_into(logits: &[f64], g: &[f64], tau: f64, out: &mut [f64]) {
    let mut mx = f64::NEG_INFINITY;
    for (o, (y, gi)) in out.iter_mut().zip(logits.iter().zip(g)) {
        *o = (y + gi) / tau;
        mx = mx.max(*o);
    }
    let mut s = 0.0;
    for o in out.iter_mut() {
        *o = (*o - mx).exp();
        s += *o;
    }
    for o in out.iter_mut() {
        *o /= s;
    }
}

/// Where the per-step input vectors come from.
pub enum InputSource<'a> {
    Zeros,
    Gaussian { sigma: f64, stream: &'a mut RngStream },
    Given(&'a Matrix),
}

/// Where the per-step Gumbel draws come from.
pub enum GumbelSource<'a> {
    None,
    Stream(&'a mut RngStream),
    Given(&'a Matrix),
}

/// A forward pass with everything needed to replay it backwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub h0: Vec<f64>,
    pub tau: f64,
    pub inputs: Matrix,
    pub pre: Matrix,
    pub hidden: Matrix,
    pub logits: Matrix,
    pub gumbel: Option<Matrix>,
    pub soft: Matrix,
}

impl Rollout {
    pub fn len(&self) -> usize {
        self.pre.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Hard emissions: Gumbel-max `argmax(y + g)`, or `argmax(y)` without draws.
    pub fn hard_emissions(&self) -> ObsSequence {
        let obs = (0..self.len())
            .map(|t| {
                let y = self.logits.row(t);
                match &self.gumbel {
                    Some(g) => {
                        let u: Vec<f64> = y.iter().zip(g.row(t)).map(|(a, b)| a + b).collect();
                        argmax(&u)
                    }
                    None => argmax(y),
                }
            })
            .collect();
        ObsSequence { observations: obs, n_symbols: N_OBS }
    }

    /// Index of the largest logit at every step.
    pub fn dominant_logits(&self) -> Vec<usize> {
        (0..self.len()).map(|t| argmax(self.logits.row(t))).collect()
    }

    pub fn last_hidden(&self) -> &[f64] {
        if self.is_empty() {
            &self.h0
        } else {
            self.hidden.row(self.len() - 1)
        }
    }
}

pub fn rollout(
    p: &RnnParams,
    len: usize,
    mut inputs: InputSource<'_>,
    h0: &[f64],
    tau: f64,
    mut gumbel: GumbelSource<'_>,
) -> Result<Rollout> {
    let (hd, d) = (p.hidden(), p.input());
    if h0.len() != hd {
        return dim_err(format!("h0 has width {}, network has {hd}", h0.len()));
    }
    if !(tau > 0.0) {
        return Err(Error::Parameter(format!("temperature must be positive, got {tau}")));
    }
    if let InputSource::Given(m) = &inputs {
        if m.rows() < len || m.cols() != d {
            return dim_err(format!("given inputs {:?} cannot drive {len} steps of width {d}", m.shape()));
        }
    }
    if let GumbelSource::Given(m) = &gumbel {
        if m.rows() < len || m.cols() != N_OBS {
            return dim_err(format!("given gumbel draws {:?} cannot cover {len} steps", m.shape()));
        }
    }
    let mut xs = Matrix::zeros(len, d);
    let mut pre = Matrix::zeros(len, hd);
    let mut hidden = Matrix::zeros(len, hd);
    let mut logits = Matrix::zeros(len, N_OBS);
    let mut gs = match gumbel {
        GumbelSource::None => None,
        _ => Some(Matrix::zeros(len, N_OBS)),
    };
    let mut soft = Matrix::zeros(len, N_OBS);
    let mut h_prev = h0.to_vec();
    let (mut z, mut h) = (vec![0.0; hd], vec![0.0; hd]);
    let zero_g = [0.0; N_OBS];
    for t in 0..len {
        match &mut inputs {
            InputSource::Zeros => {}
            InputSource::Gaussian { sigma, stream } => stream.fill_gaussian(xs.row_mut(t), *sigma),
            InputSource::Given(m) => xs.row_mut(t).copy_from_slice(m.row(t)),
        }
        step_into(p, &h_prev, xs.row(t), &mut z, &mut h);
        pre.row_mut(t).copy_from_slice(&z);
        hidden.row_mut(t).copy_from_slice(&h);
        for k in 0..N_OBS {
            logits[(t, k)] = dot(p.readout.row(k), &h);
        }
        if let Some(gm) = gs.as_mut() {
            let row = gm.row_mut(t);
            match &mut gumbel {
                GumbelSource::Stream(s) => row.iter_mut().for_each(|g| *g = s.gumbel()),
                GumbelSource::Given(m) => row.copy_from_slice(m.row(t)),
                GumbelSource::None => unreachable!(),
            }
        }
        let g = gs.as_ref().map_or(&zero_g[..], |m| m.row(t));
        let mut s = [0.0; N_OBS];
        softmax_into(logits.row(t), g, tau, &mut s);
        soft.row_mut(t).copy_from_slice(&s);
        std::mem::swap(&mut h_prev, &mut h);
    }
    Ok(Rollout { h0: h0.to_vec(), tau, inputs: xs, pre, hidden, logits, gumbel: gs, soft })
}

/// Gradient blocks mirroring [`RnnParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub d_w_hh: Matrix,
    pub d_w_ih: Matrix,
    pub d_readout: Matrix,
}

impl Gradients {
    pub fn zeros_like(p: &RnnParams) -> Self {
        Self {
            d_w_hh: Matrix::zeros(p.hidden(), p.hidden()),
            d_w_ih: Matrix::zeros(p.hidden(), p.input()),
            d_readout: Matrix::zeros(N_OBS, p.hidden()),
        }
    }

    fn blocks(&self) -> [&Matrix; 3] {
        [&self.d_w_hh, &self.d_w_ih, &self.d_readout]
    }

    fn blocks_mut(&mut self) -> [&mut Matrix; 3] {
        [&mut self.d_w_hh, &mut self.d_w_ih, &mut self.d_readout]
    }

    pub fn global_norm(&self) -> f64 {
        self.blocks().iter().map(|m| m.data().iter().map(|x| x * x).sum::<f64>()).sum::<f64>().sqrt()
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.blocks_mut().into_iter().zip(other.blocks()) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for m in self.blocks_mut() {
            m.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|m| m.is_finite())
    }

    pub fn as_slices(&self) -> [&[f64]; 3] {
        [self.d_w_hh.data(), self.d_w_ih.data(), self.d_readout.data()]
    }
}

/// Reverse-mode gradient of `Σ_t ⟨dl_dsoft_t, soft_t⟩` with respect to all weights.
pub fn bptt(p: &RnnParams, r: &Rollout, dl_dsoft: &Matrix) -> Result<Gradients> {
    let len = r.len();
    let hd = p.hidden();
    let gumbel = r.gumbel.as_ref().ok_or_else(|| Error::State("rollout has no stored gumbel draws".into()))?;
    if r.pre.rows() != len || r.pre.cols() != hd || gumbel.rows() != len {
        return Err(Error::State("rollout pre-activations do not match its length".into()));
    }
    if dl_dsoft.shape() != (len, N_OBS) {
        return dim_err(format!("dL/dsoft is {:?}, rollout needs ({len}, {N_OBS})", dl_dsoft.shape()));
    }
    let mut g = Gradients::zeros_like(p);
    // carry = W_hhᵀ δ_{t+1}, the recurrent part of dL/dh_t
    let mut carry = vec![0.0; hd];
    let mut delta = vec![0.0; hd];
    for t in (0..len).rev() {
        let s = r.soft.row(t);
        let gs = dl_dsoft.row(t);
        let inner: f64 = s.iter().zip(gs).map(|(a, b)| a * b).sum();
        let mut dy = [0.0; N_OBS];
        for k in 0..N_OBS {
            dy[k] = s[k] * (gs[k] - inner) / r.tau;
        }
        let h = r.hidden.row(t);
        for k in 0..N_OBS {
            if dy[k] != 0.0 {
                for (a, hv) in g.d_readout.row_mut(k).iter_mut().zip(h) {
                    *a += dy[k] * hv;
                }
            }
        }
        let z = r.pre.row(t);
        for i in 0..hd {
            let mut dh = carry[i];
            for (k, dyk) in dy.iter().enumerate() {
                dh += p.readout[(k, i)] * dyk;
            }
            delta[i] = if z[i] > 0.0 { dh } else { 0.0 };
        }
        let h_prev = if t == 0 { &r.h0[..] } else { r.hidden.row(t - 1) };
        let x = r.inputs.row(t);
        carry.iter_mut().for_each(|c| *c = 0.0);
        for i in 0..hd {
            let di = delta[i];
            if di == 0.0 {
                continue;
            }
            for (w, hp) in g.d_w_hh.row_mut(i).iter_mut().zip(h_prev) {
                *w += di * hp;
            }
            for (w, xv) in g.d_w_ih.row_mut(i).iter_mut().zip(x) {
                *w += di * xv;
            }
            for (c, w) in carry.iter_mut().zip(p.w_hh.row(i)) {
                *c += di * w;
            }
        }
    }
    Ok(g)
}

/// Rescale all blocks together so the global L2 norm is at most `max_norm`.
pub fn clip_grad_norm(g: &Gradients, max_norm: f64) -> Gradients {
    let mut out = g.clone();
    let n = g.global_norm();
    if n > max_norm {
        out.scale(max_norm / n);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_net(seed: u64, h: usize, d: usize) -> RnnParams {
        let mut s = RngStream::new(seed, 0);
        let mut p = init_params(h, d, &mut s).unwrap();
        // larger weights so more gates switch between steps
        p.w_hh = p.w_hh.scale(2.0);
        p.readout = p.readout.scale(3.0);
        p
    }

    #[test]
    fn init_bounds_and_determinism() {
        let p = init_params(4, 3, &mut RngStream::new(1, 0)).unwrap();
        for m in [&p.w_hh, &p.w_ih, &p.readout] {
            assert!(m.data().iter().all(|x| x.abs() < 0.5));
        }
        assert_eq!(p, init_params(4, 3, &mut RngStream::new(1, 0)).unwrap());
        assert!(init_params(0, 3, &mut RngStream::new(1, 0)).is_err());
    }

    #[test]
    fn step_cases() {
        let p = small_net(2, 3, 2);
        let (z, h) = step(&p, &[0.0; 3], &[0.0; 2]).unwrap();
        assert!(z.iter().chain(&h).all(|&v| v == 0.0));
        let q = RnnParams::new(Matrix::identity(3), Matrix::zeros(3, 2), p.readout.clone()).unwrap();
        let hp = [0.5, 0.0, 2.0];
        assert_eq!(step(&q, &hp, &[1.0, -1.0]).unwrap().1, hp.to_vec());
        assert!(step(&p, &[0.0; 2], &[0.0; 2]).is_err());
    }

    #[test]
    fn readout_one_hot_rows_copy_coordinates() {
        let a = Matrix::from_rows(&[vec![0.0, 1.0, 0.0, 0.0], vec![0.0, 0.0, 0.0, 1.0], vec![1.0, 0.0, 0.0, 0.0]]).unwrap();
        let p = RnnParams::new(Matrix::zeros(4, 4), Matrix::zeros(4, 1), a).unwrap();
        assert_eq!(readout(&p, &[1.0, 2.0, 3.0, 4.0]).unwrap(), vec![2.0, 4.0, 1.0]);
        assert_eq!(readout(&p, &[0.0; 4]).unwrap(), vec![0.0; 3]);
        assert!(readout(&p, &[0.0; 3]).is_err());
    }

    #[test]
    fn gumbel_softmax_cases() {
        let s = gumbel_softmax(&[0.3; 3], 1.0, &[0.0; 3]).unwrap();
        assert!(s.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
        let s = gumbel_softmax(&[0.1, 0.5, 0.2], 1e-6, &[0.0, -0.3, 0.05]).unwrap();
        assert!((s[2] - 1.0).abs() < 1e-6);
        assert!(gumbel_softmax(&[0.0; 3], 0.0, &[0.0; 3]).is_err());
        assert!(gumbel_softmax(&[0.0; 3], 1.0, &[0.0; 2]).is_err());
    }

    #[test]
    fn autonomous_rollout_from_origin_stays_there() {
        let p = small_net(3, 5, 2);
        let r = rollout(&p, 10, InputSource::Zeros, &[0.0; 5], 1.0, GumbelSource::None).unwrap();
        assert!(r.hidden.data().iter().all(|&v| v == 0.0));
        assert!(r.logits.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn length_one_rollout_is_one_step() {
        let p = small_net(4, 5, 2);
        let h0 = [0.1, 0.0, 0.3, 0.2, 0.0];
        let x = Matrix::from_rows(&[vec![0.4, -1.2]]).unwrap();
        let r = rollout(&p, 1, InputSource::Given(&x), &h0, 1.0, GumbelSource::None).unwrap();
        let (z, h) = step(&p, &h0, x.row(0)).unwrap();
        assert_eq!(r.pre.row(0), &z[..]);
        assert_eq!(r.hidden.row(0), &h[..]);
    }

    #[test]
    fn gaussian_rollout_is_reproducible() {
        let p = small_net(5, 6, 3);
        let run = || {
            let mut s = RngStream::new(8, 1);
            let mut g = RngStream::new(8, 2);
            rollout(&p, 20, InputSource::Gaussian { sigma: 1.0, stream: &mut s }, &[0.0; 6], 1.0, GumbelSource::Stream(&mut g)).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let p = small_net(6, 4, 2);
        let mut s = RngStream::new(1, 1);
        let mut g = RngStream::new(1, 2);
        let r = rollout(&p, 5, InputSource::Gaussian { sigma: 1.0, stream: &mut s }, &[0.0; 4], 1.0, GumbelSource::Stream(&mut g)).unwrap();
        let grads = bptt(&p, &r, &Matrix::zeros(5, 3)).unwrap();
        assert_eq!(grads.global_norm(), 0.0);
    }

    #[test]
    fn single_step_from_origin_has_no_recurrent_gradient() {
        let mut p = small_net(7, 4, 2);
        p.readout = Matrix::zeros(3, 4);
        let mut s = RngStream::new(2, 1);
        let mut g = RngStream::new(2, 2);
        let r = rollout(&p, 1, InputSource::Gaussian { sigma: 1.0, stream: &mut s }, &[0.0; 4], 1.0, GumbelSource::Stream(&mut g)).unwrap();
        let up = Matrix::from_rows(&[vec![1.0, -2.0, 0.5]]).unwrap();
        let grads = bptt(&p, &r, &up).unwrap();
        assert_eq!(grads.d_w_hh.frobenius_norm(), 0.0);
        assert_eq!(grads.d_w_ih.frobenius_norm(), 0.0);
    }

    #[test]
    fn bptt_requires_gumbel_draws() {
        let p = small_net(8, 3, 1);
        let r = rollout(&p, 3, InputSource::Zeros, &[0.1; 3], 1.0, GumbelSource::None).unwrap();
        assert!(matches!(bptt(&p, &r, &Matrix::zeros(3, 3)), Err(Error::State(_))));
    }

    #[test]
    fn clipping() {
        let p = small_net(9, 2, 1);
        let mut g = Gradients::zeros_like(&p);
        g.d_w_hh[(0, 0)] = 0.3;
        g.d_w_hh[(1, 0)] = 0.4;
        assert_eq!(clip_grad_norm(&g, 0.9), g);
        g.scale(18.0);
        let c = clip_grad_norm(&g, 0.9);
        assert!((c.global_norm() - 0.9).abs() < 1e-12);
        let cos = (c.d_w_hh[(0, 0)] * g.d_w_hh[(0, 0)] + c.d_w_hh[(1, 0)] * g.d_w_hh[(1, 0)]) / (c.global_norm() * g.global_norm());
        assert!((cos - 1.0).abs() < 1e-12);
    }
}
