//! Training loop: HMM targets, Gumbel-Softmax rollouts, Sinkhorn loss, BPTT,
//! clipping and Adam, plus checkpoints and the per-epoch loss log.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::hmm::{self, HmmSpec, ObsSequence, Preset, N_OBS};
use crate::numerics::{AdamState, Matrix, RngStream, StreamCursor};
use crate::ot::{self, PointCloud, SinkhornConfig};
use crate::rnn::{self, GumbelSource, InputSource, RnnParams, BLOCK_NAMES};

/// Where the target HMM comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum HmmSource {
    LinearChain {
        #[serde(rename = "M")]
        m: usize,
        #[serde(default = "default_rho")]
        rho: f64,
        #[serde(default = "default_emission_eps")]
        eps: f64,
    },
    Preset {
        preset: Preset,
    },
    Explicit {
        spec: HmmSpec,
    },
}

fn default_rho() -> f64 {
    0.05
}

fn default_emission_eps() -> f64 {
    0.01
}

impl HmmSource {
    pub fn build(&self) -> Result<HmmSpec> {
        match self {
            HmmSource::LinearChain { m, rho, eps } => hmm::build_linear_chain(*m, *rho, *eps),
            HmmSource::Preset { preset } => Ok(hmm::build_preset(*preset)),
            HmmSource::Explicit { spec } => Ok(spec.clone()),
        }
    }

    /// 0.9 for linear chains, 0.3 otherwise.
    pub fn default_clip_norm(&self) -> f64 {
        match self {
            HmmSource::LinearChain { .. } => 0.9,
            _ => 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(rename = "H")]
    pub hidden: usize,
    #[serde(rename = "d")]
    pub input: usize,
    pub hmm: HmmSource,
    pub seq_len: usize,
    pub n_sequences: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub clip_norm: f64,
    pub epochs: usize,
    pub eps_sinkhorn: f64,
    pub sinkhorn_max_iters: usize,
    pub sinkhorn_tol: f64,
    pub tau: f64,
    pub sigma_input: f64,
    pub seed: u64,
    pub checkpoint_every: usize,
    pub val_fraction: f64,
}

impl TrainConfig {
    /// Desk-scale defaults: H = 50, d = 10, 3000 sequences of length 100, batch 256.
    pub fn desk(hmm: HmmSource) -> Self {
        Self {
            hidden: 50,
            input: 10,
            clip_norm: hmm.default_clip_norm(),
            hmm,
            seq_len: 100,
            n_sequences: 3000,
            batch_size: 256,
            lr: 1e-3,
            epochs: 300,
            eps_sinkhorn: 0.05,
            sinkhorn_max_iters: 500,
            sinkhorn_tol: 1e-6,
            tau: 1.0,
            sigma_input: 1.0,
            seed: 0,
            checkpoint_every: 10,
            val_fraction: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, why: &str| Err(Error::Config(format!("{key}: {why}")));
        if self.hidden == 0 {
            return bad("H", "must be positive");
        }
        if self.input == 0 {
            return bad("d", "must be positive");
        }
        if self.seq_len == 0 {
            return bad("seq_len", "must be positive");
        }
        if self.batch_size == 0 || self.batch_size > self.n_sequences {
            return bad("batch_size", "must lie in 1..=n_sequences");
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad("val_fraction", "must lie in (0, 1)");
        }
        let (n_train, n_val) = self.split_sizes();
        if n_val == 0 {
            return bad("val_fraction", "leaves no validation sequences");
        }
        if n_train < self.batch_size {
            return bad("batch_size", "exceeds the training split");
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr", "must be finite and non-negative");
        }
        if !(self.clip_norm > 0.0) {
            return bad("clip_norm", "must be positive");
        }
        for (key, v) in [("eps_sinkhorn", self.eps_sinkhorn), ("sinkhorn_tol", self.sinkhorn_tol), ("tau", self.tau)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(key, "must be positive");
            }
        }
        if !(self.sigma_input >= 0.0 && self.sigma_input.is_finite()) {
            return bad("sigma_input", "must be finite and non-negative");
        }
        if self.checkpoint_every == 0 {
            return bad("checkpoint_every", "must be positive");
        }
        let spec = self.hmm.build().map_err(|e| Error::Config(format!("hmm: {e}")))?;
        if spec.n_obs() != N_OBS {
            return bad("hmm", "targets must have three observation symbols");
        }
        Ok(())
    }

    /// (training, validation) sequence counts.
    pub fn split_sizes(&self) -> (usize, usize) {
        let n_val = (self.val_fraction * self.n_sequences as f64).round() as usize;
        (self.n_sequences.saturating_sub(n_val), n_val)
    }

    pub fn sinkhorn(&self) -> SinkhornConfig {
        SinkhornConfig { eps: self.eps_sinkhorn, max_iters: self.sinkhorn_max_iters, tol: self.sinkhorn_tol, extrapolate: false }
    }

    pub fn digest(&self) -> Result<String> {
        digest_of(self)
    }
}

/// SHA-256 of the canonical JSON form (object keys sorted), hex encoded.
pub fn digest_of<T: Serialize>(value: &T) -> Result<String> {
    let canonical = serde_json::to_string(&serde_json::to_value(value)?)?;
    let mut out = String::with_capacity(64);
    for b in Sha256::digest(canonical.as_bytes()).iter() {
        let _ = write!(out, "{b:02x}");
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: RnnParams,
    pub adam: AdamState,
    pub epoch: usize,
    pub digest: String,
    pub config: TrainConfig,
    pub rng: StreamCursor,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AdamHeader {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    #[serde(rename = "H")]
    hidden: usize,
    d: usize,
    epoch: usize,
    digest: String,
    config: TrainConfig,
    adam: AdamHeader,
    rng: StreamCursor,
}

const BLOCK_ORDER: [&str; 9] = ["W_hh", "W_ih", "A", "m_W_hh", "m_W_ih", "m_A", "v_W_hh", "v_W_ih", "v_A"];

impl Checkpoint {
    /// JSON header line, then one `name:base64` line per block of little-endian reals:
    /// W_hh, W_ih, A, then the Adam first and second moments in the same order.
    pub fn to_text(&self) -> Result<String> {
        let header = Header {
            hidden: self.params.hidden(),
            d: self.params.input(),
            epoch: self.epoch,
            digest: self.digest.clone(),
            config: self.config.clone(),
            adam: AdamHeader {
                lr: self.adam.lr,
                beta1: self.adam.beta1,
                beta2: self.adam.beta2,
                eps: self.adam.eps,
                step: self.adam.step,
            },
            rng: self.rng,
        };
        let mut out = serde_json::to_string(&serde_json::to_value(&header)?)?;
        out.push('\n');
        let p = &self.params;
        let blocks: [&[f64]; 9] = [
            p.w_hh.data(),
            p.w_ih.data(),
            p.readout.data(),
            &self.adam.first_moment[0],
            &self.adam.first_moment[1],
            &self.adam.first_moment[2],
            &self.adam.second_moment[0],
            &self.adam.second_moment[1],
            &self.adam.second_moment[2],
        ];
        for (name, data) in BLOCK_ORDER.iter().zip(blocks) {
            let bytes: Vec<u8> = data.iter().flat_map(|x| x.to_le_bytes()).collect();
            out.push_str(name);
            out.push(':');
            out.push_str(&B64.encode(bytes));
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let fmt = |m: &str| Error::Format(m.to_string());
        let mut lines = text.lines();
        let header: Header = serde_json::from_str(lines.next().ok_or_else(|| fmt("empty checkpoint"))?)
            .map_err(|e| Error::Format(format!("header: {e}")))?;
        let expected = header.config.digest()?;
        if expected != header.digest {
            return Err(Error::ConfigDrift { expected, found: header.digest });
        }
        let (h, d) = (header.hidden, header.d);
        if header.config.hidden != h || header.config.input != d {
            return Err(fmt("header sizes disagree with the embedded config"));
        }
        let sizes = [h * h, h * d, N_OBS * h];
        let mut blocks = Vec::with_capacity(9);
        for (k, name) in BLOCK_ORDER.iter().enumerate() {
            let line = lines.next().ok_or_else(|| Error::Format(format!("missing block {name}")))?;
            let payload = line
                .strip_prefix(name)
                .and_then(|r| r.strip_prefix(':'))
                .ok_or_else(|| Error::Format(format!("expected block {name}")))?;
            let bytes = B64.decode(payload).map_err(|e| Error::Format(format!("block {name}: {e}")))?;
            if bytes.len() != sizes[k % 3] * 8 {
                return Err(Error::Format(format!("block {name} has {} bytes, expected {}", bytes.len(), sizes[k % 3] * 8)));
            }
            let vals: Vec<f64> =
                bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8"))).collect();
            blocks.push(vals);
        }
        if lines.any(|l| !l.is_empty()) {
            return Err(fmt("trailing data after the last block"));
        }
        let mut it = blocks.into_iter();
        let mut next = || it.next().expect("nine blocks");
        let params = RnnParams::new(
            Matrix::from_vec(h, h, next())?,
            Matrix::from_vec(h, d, next())?,
            Matrix::from_vec(N_OBS, h, next())?,
        )?;
        let first_moment = vec![next(), next(), next()];
        let second_moment = vec![next(), next(), next()];
        let a = header.adam;
        Ok(Checkpoint {
            params,
            adam: AdamState { lr: a.lr, beta1: a.beta1, beta2: a.beta2, eps: a.eps, step: a.step, first_moment, second_moment },
            epoch: header.epoch,
            digest: header.digest,
            config: header.config,
            rng: header.rng,
        })
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    std::fs::write(path, ckpt.to_text()?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path)?;
    Checkpoint::from_text(&text)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub grad_norm: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossLog {
    pub rows: Vec<LossRow>,
}

impl LossLog {
    pub const HEADER: &'static str = "epoch,train_loss,val_loss,grad_norm,seconds";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(s, "{},{:?},{:?},{:?},{:?}", r.epoch, r.train_loss, r.val_loss, r.grad_norm, r.seconds);
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(Self::HEADER) {
            return Err(Error::Format("loss log header".into()));
        }
        let mut rows = Vec::new();
        for (n, line) in lines.enumerate() {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || Error::Format(format!("loss log line {}", n + 2));
            if f.len() != 5 {
                return Err(bad());
            }
            let num = |i: usize| f[i].parse::<f64>().map_err(|_| bad());
            rows.push(LossRow {
                epoch: f[0].parse().map_err(|_| bad())?,
                train_loss: num(1)?,
                val_loss: num(2)?,
                grad_norm: num(3)?,
                seconds: num(4)?,
            });
        }
        Ok(Self { rows })
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    /// Initialization first, then every `checkpoint_every` epochs and the last epoch.
    pub checkpoints: Vec<Checkpoint>,
    pub log: LossLog,
    /// Set when training stopped on a non-finite loss; the last checkpoint is then the diagnostic one.
    pub aborted: Option<String>,
}

impl TrainOutput {
    pub fn final_checkpoint(&self) -> &Checkpoint {
        self.checkpoints.last().expect("training always yields the initial checkpoint")
    }
}

/// Stream ids derived from the config seed.
mod streams {
    pub const INIT: u64 = 1;
    pub const DATA: u64 = 2;
    pub const SHUFFLE: u64 = 3;
    pub const BATCH: u64 = 4;
    pub const VALID: u64 = 5;
}

/// The fixed target dataset: `n_sequences` HMM samples, one split stream each.
pub fn target_dataset(cfg: &TrainConfig) -> Result<Vec<ObsSequence>> {
    let spec = cfg.hmm.build()?;
    let root = RngStream::new(cfg.seed, 0).split(streams::DATA);
    Ok((0..cfg.n_sequences).map(|i| hmm::sample(&spec, cfg.seq_len, &mut root.split(i as u64)).1).collect())
}

/// Soft outputs of one batch, flattened to `T·3` vectors, with the rollouts that produced them.
fn forward_batch(p: &RnnParams, cfg: &TrainConfig, batch: &RngStream, n: usize) -> Result<(Vec<rnn::Rollout>, Matrix)> {
    let h0 = vec![0.0; cfg.hidden];
    let width = cfg.seq_len * N_OBS;
    let mut flat = Matrix::zeros(n, width);
    let mut rolls = Vec::with_capacity(n);
    for k in 0..n {
        let mut xs = batch.split(2 * k as u64);
        let mut gs = batch.split(2 * k as u64 + 1);
        let r = rnn::rollout(
            p,
            cfg.seq_len,
            InputSource::Gaussian { sigma: cfg.sigma_input, stream: &mut xs },
            &h0,
            cfg.tau,
            GumbelSource::Stream(&mut gs),
        )?;
        flat.row_mut(k).copy_from_slice(r.soft.data());
        rolls.push(r);
    }
    Ok((rolls, flat))
}

fn targets_matrix(data: &[ObsSequence], idx: &[usize], width: usize) -> Matrix {
    let mut m = Matrix::zeros(idx.len(), width);
    for (k, &i) in idx.iter().enumerate() {
        m.row_mut(k).copy_from_slice(&data[i].flat_one_hot());
    }
    m
}

pub fn train(cfg: &TrainConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    let digest = cfg.digest()?;
    let root = RngStream::new(cfg.seed, 0);
    let mut params = rnn::init_params(cfg.hidden, cfg.input, &mut root.split(streams::INIT))?;
    let mut adam = AdamState::new(cfg.lr, &params.block_sizes());
    let data = target_dataset(cfg)?;
    let (n_train, n_val) = cfg.split_sizes();
    let train_idx: Vec<usize> = (0..n_train).collect();
    let val_idx: Vec<usize> = (n_train..n_train + n_val).collect();
    let width = cfg.seq_len * N_OBS;
    let sk = cfg.sinkhorn();

    let snapshot = |params: &RnnParams, adam: &AdamState, epoch: usize| Checkpoint {
        params: params.clone(),
        adam: adam.clone(),
        epoch,
        digest: digest.clone(),
        config: cfg.clone(),
        rng: root.cursor(),
    };
    let mut out = TrainOutput { checkpoints: vec![snapshot(&params, &adam, 0)], log: LossLog::default(), aborted: None };

    let val_batch = cfg.batch_size.min(n_val);
    for epoch in 1..=cfg.epochs {
        let t0 = Instant::now();
        let mut order = train_idx.clone();
        root.split(streams::SHUFFLE).split(epoch as u64).shuffle(&mut order);
        let epoch_stream = root.split(streams::BATCH).split(epoch as u64);
        let (mut loss_sum, mut norm_sum, mut n_batches) = (0.0, 0.0, 0usize);
        let mut failure = None;
        for (b, chunk) in order.chunks_exact(cfg.batch_size).enumerate() {
            let bs = epoch_stream.split(b as u64);
            let (rolls, flat) = forward_batch(&params, cfg, &bs, chunk.len())?;
            let x = PointCloud::uniform(flat)?;
            let y = PointCloud::uniform(targets_matrix(&data, chunk, width))?;
            let div = ot::divergence(&x, &y, &sk)?;
            if !div.value.is_finite() {
                failure = Some(format!("non-finite training loss at epoch {epoch}, batch {b}"));
                break;
            }
            let grad_x = ot::divergence_gradient_from(&x, &y, &div)?;
            let mut grads = rnn::Gradients::zeros_like(&params);
            for (k, r) in rolls.iter().enumerate() {
                let dl = Matrix::from_vec(cfg.seq_len, N_OBS, grad_x.row(k).to_vec())?;
                grads.add_assign(&rnn::bptt(&params, r, &dl)?);
            }
            let norm = grads.global_norm();
            if !norm.is_finite() {
                failure = Some(format!("non-finite gradient at epoch {epoch}, batch {b}"));
                break;
            }
            let clipped = rnn::clip_grad_norm(&grads, cfg.clip_norm);
            let mut blocks = [params.w_hh.data_mut(), params.w_ih.data_mut(), params.readout.data_mut()];
            adam.step(&mut blocks, &clipped.as_slices(), &BLOCK_NAMES)?;
            loss_sum += div.value;
            norm_sum += norm;
            n_batches += 1;
        }
        if let Some(msg) = failure {
            out.checkpoints.push(snapshot(&params, &adam, epoch));
            out.aborted = Some(msg);
            return Ok(out);
        }
        let val_loss = validation_loss(&params, cfg, &data, &val_idx[..val_batch], &root.split(streams::VALID).split(epoch as u64))?;
        out.log.rows.push(LossRow {
            epoch,
            train_loss: loss_sum / n_batches as f64,
            val_loss,
            grad_norm: norm_sum / n_batches as f64,
            seconds: t0.elapsed().as_secs_f64(),
        });
        if epoch % cfg.checkpoint_every == 0 || epoch == cfg.epochs {
            out.checkpoints.push(snapshot(&params, &adam, epoch));
        }
    }
    Ok(out)
}

/// Sinkhorn loss on held-out targets with fresh input noise.
pub fn validation_loss(p: &RnnParams, cfg: &TrainConfig, data: &[ObsSequence], idx: &[usize], stream: &RngStream) -> Result<f64> {
    let (_, flat) = forward_batch(p, cfg, stream, idx.len())?;
    let x = PointCloud::uniform(flat)?;
    let y = PointCloud::uniform(targets_matrix(data, idx, cfg.seq_len * N_OBS))?;
    ot::sinkhorn_divergence(&x, &y, &cfg.sinkhorn())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> TrainConfig {
        let mut c = TrainConfig::desk(HmmSource::LinearChain { m: 2, rho: 0.05, eps: 0.01 });
        c.hidden = 6;
        c.input = 2;
        c.seq_len = 8;
        c.n_sequences = 40;
        c.batch_size = 8;
        c.epochs = 2;
        c.checkpoint_every = 1;
        c
    }

    #[test]
    fn zero_epochs_gives_init_only() {
        let mut c = tiny();
        c.epochs = 0;
        let out = train(&c).unwrap();
        assert_eq!(out.checkpoints.len(), 1);
        assert!(out.log.rows.is_empty());
    }

    #[test]
    fn digest_ignores_key_order() {
        let c = tiny();
        let v = serde_json::to_value(&c).unwrap();
        let reordered: TrainConfig = serde_json::from_str(&serde_json::to_string_pretty(&v).unwrap()).unwrap();
        assert_eq!(c.digest().unwrap(), reordered.digest().unwrap());
        let mut d = c.clone();
        d.seed = 1;
        assert_ne!(c.digest().unwrap(), d.digest().unwrap());
    }

    #[test]
    fn config_validation() {
        let mut c = tiny();
        c.batch_size = 100;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = tiny();
        c.val_fraction = 1.0;
        assert!(c.validate().is_err());
        let json = r#"{"H": 3}"#;
        assert!(serde_json::from_str::<TrainConfig>(json).is_err());
    }

    #[test]
    fn loss_log_round_trip() {
        let log = LossLog {
            rows: vec![LossRow { epoch: 1, train_loss: 0.1 + 0.2, val_loss: 1e-300, grad_norm: 3.0, seconds: 0.5 }],
        };
        assert_eq!(LossLog::from_csv(&log.to_csv()).unwrap(), log);
    }
}
