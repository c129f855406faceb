//! Counter-based random streams.
//!
//! A stream is a ChaCha20 keystream addressed by `(seed, stream_id, word
//! position)`. Two streams with different ids never overlap, and a stream can
//! be rewound to any recorded cursor.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamCursor {
    pub seed: u64,
    pub stream_id: u64,
    pub word_pos: u128,
}

/// Reproducible random stream. Not `Sync`-shared: split instead.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha20Rng,
}

/// What to draw.
#[derive(Debug, Clone, PartialEq)]
pub enum DrawKind {
    Gaussian { sigma: f64 },
    Gumbel,
    Uniform,
    Categorical(Vec<f64>),
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self { seed, stream_id, rng }
    }

    pub fn from_cursor(c: StreamCursor) -> Self {
        let mut s = Self::new(c.seed, c.stream_id);
        s.rng.set_word_pos(c.word_pos);
        s
    }

    pub fn cursor(&self) -> StreamCursor {
        StreamCursor { seed: self.seed, stream_id: self.stream_id, word_pos: self.rng.get_word_pos() }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// A fresh stream with the same seed and a derived id. Splitting does not
    /// advance `self`, so the result depends only on `(seed, stream_id, key)`.
    pub fn split(&self, key: u64) -> RngStream {
        let id = mix64(self.stream_id ^ mix64(key.wrapping_add(0x9E37_79B9_7F4A_7C15)));
        RngStream::new(self.seed, id)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform on the open interval (0, 1).
    pub fn uniform(&mut self) -> f64 {
        loop {
            let u: f64 = self.rng.random();
            if u > 0.0 {
                return u;
            }
        }
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn gaussian(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    pub fn gumbel(&mut self) -> f64 {
        -(-self.uniform().ln()).ln()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    /// Index drawn from probability vector `p`, which must already be valid.
    pub fn categorical_unchecked(&mut self, p: &[f64]) -> usize {
        let u: f64 = self.rng.random();
        let mut acc = 0.0;
        for (i, &pi) in p.iter().enumerate() {
            acc += pi;
            if u < acc {
                return i;
            }
        }
        // rounding left u above the last partial sum: take the last nonzero entry
        p.iter().rposition(|&x| x > 0.0).unwrap_or(p.len() - 1)
    }

    pub fn fill_gaussian(&mut self, out: &mut [f64], sigma: f64) {
        for o in out {
            *o = sigma * self.gaussian();
        }
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, v: &mut [T]) {
        for i in (1..v.len()).rev() {
            let j = self.below(i + 1);
            v.swap(i, j);
        }
    }

    /// Draw `count` samples of the given kind. Categorical draws return indices as reals.
    pub fn draw(&mut self, kind: &DrawKind, count: usize) -> Result<Vec<f64>> {
        match kind {
            DrawKind::Gaussian { sigma } => {
                let mut v = vec![0.0; count];
                self.fill_gaussian(&mut v, *sigma);
                Ok(v)
            }
            DrawKind::Gumbel => Ok((0..count).map(|_| self.gumbel()).collect()),
            DrawKind::Uniform => Ok((0..count).map(|_| self.uniform()).collect()),
            DrawKind::Categorical(p) => {
                validate_probability(p, 1e-9, "categorical weights")?;
                Ok((0..count).map(|_| self.categorical_unchecked(p) as f64).collect())
            }
        }
    }
}

pub fn validate_probability(p: &[f64], tol: f64, what: &str) -> Result<()> {
    if p.is_empty() {
        return Err(Error::Validation(format!("{what}: empty probability vector")));
    }
    if p.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::Validation(format!("{what}: entries must be finite and nonnegative")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > tol {
        return Err(Error::Validation(format!("{what}: sums to {s}, not 1")));
    }
    Ok(())
}

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
