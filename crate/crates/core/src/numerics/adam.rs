use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};

/// Bias-corrected Adam moments for a list of parameter blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
}

impl AdamState {
    /// Zero moments shaped like `block_sizes`; β1 = 0.9, β2 = 0.999, ε = 1e-8.
    pub fn new(lr: f64, block_sizes: &[usize]) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first_moment: block_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second_moment: block_sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// One Adam update of `params` in place. `names` label the blocks in errors.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], names: &[&str]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.first_moment.len() {
            return dim_err(format!(
                "adam: {} parameter blocks, {} gradient blocks, {} moment blocks",
                params.len(),
                grads.len(),
                self.first_moment.len()
            ));
        }
        for (b, (p, g)) in params.iter().zip(grads).enumerate() {
            let name = names.get(b).copied().unwrap_or("?");
            if p.len() != g.len() || p.len() != self.first_moment[b].len() {
                return dim_err(format!("adam: block {name} has mismatched sizes"));
            }
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::Numeric(format!("gradient block {name}")));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (b, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = &mut self.first_moment[b];
            let v = &mut self.second_moment[b];
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_is_lr_times_sign() {
        let mut st = AdamState::new(0.1, &[1]);
        let mut p = [1.0];
        st.step(&mut [&mut p], &[&[2.0]], &["w"]).unwrap();
        let expected = 1.0 - 0.1 * 2.0 / (2.0 + 1e-8);
        assert!((p[0] - expected).abs() < 1e-15);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn zero_gradient_keeps_params() {
        let mut st = AdamState::new(0.01, &[3]);
        let mut p = [1.0, -2.0, 0.5];
        for _ in 0..10 {
            st.step(&mut [&mut p], &[&[0.0; 3]], &["w"]).unwrap();
        }
        assert_eq!(p, [1.0, -2.0, 0.5]);
    }

    #[test]
    fn two_steps_match_hand_recursion() {
        let (lr, b1, b2, eps, g) = (0.05, 0.9, 0.999, 1e-8, 0.7);
        let mut st = AdamState::new(lr, &[1]);
        let mut p = [0.3];
        st.step(&mut [&mut p], &[&[g]], &["w"]).unwrap();
        st.step(&mut [&mut p], &[&[g]], &["w"]).unwrap();
        let mut x = 0.3;
        let (mut m, mut v) = (0.0, 0.0);
        for t in 1..=2 {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - f64::powi(b1, t));
            let vh = v / (1.0 - f64::powi(b2, t));
            x -= lr * mh / (vh.sqrt() + eps);
        }
        assert!((p[0] - x).abs() < 1e-15);
    }

    #[test]
    fn errors_name_the_block() {
        let mut st = AdamState::new(0.1, &[2]);
        let mut p = [0.0, 0.0];
        let err = st.step(&mut [&mut p], &[&[f64::NAN, 0.0]], &["w_hh"]).unwrap_err();
        assert!(err.to_string().contains("w_hh"));
        assert!(st.step(&mut [&mut p], &[&[0.0]], &["w_hh"]).is_err());
    }
}
