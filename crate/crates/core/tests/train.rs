use hmmrnn::error::Error;
use hmmrnn::train::{load_checkpoint, save_checkpoint, train, Checkpoint, HmmSource, LossLog, TrainConfig};

fn small(seed: u64) -> TrainConfig {
    let mut c = TrainConfig::desk(HmmSource::LinearChain { m: 2, rho: 0.05, eps: 0.01 });
    c.hidden = 8;
    c.input = 3;
    c.seq_len = 12;
    c.n_sequences = 60;
    c.batch_size = 16;
    c.epochs = 4;
    c.checkpoint_every = 3;
    c.sinkhorn_max_iters = 50;
    c.seed = seed;
    c
}

/// Loss columns only; wall time is not part of the determinism contract.
fn losses(log: &LossLog) -> Vec<(usize, u64, u64, u64)> {
    log.rows.iter().map(|r| (r.epoch, r.train_loss.to_bits(), r.val_loss.to_bits(), r.grad_norm.to_bits())).collect()
}

#[test]
fn same_config_same_run() {
    let a = train(&small(5)).unwrap();
    let b = train(&small(5)).unwrap();
    assert_eq!(losses(&a.log), losses(&b.log));
    assert_eq!(a.checkpoints, b.checkpoints);
    let c = train(&small(6)).unwrap();
    assert_ne!(losses(&a.log), losses(&c.log));
}

#[test]
fn log_and_checkpoint_cadence() {
    let out = train(&small(1)).unwrap();
    assert!(out.aborted.is_none());
    assert_eq!(out.log.rows.iter().map(|r| r.epoch).collect::<Vec<_>>(), vec![1, 2, 3, 4]);
    assert!(out.log.rows.iter().all(|r| r.train_loss.is_finite() && r.val_loss.is_finite() && r.grad_norm >= 0.0));
    assert_eq!(out.checkpoints.iter().map(|c| c.epoch).collect::<Vec<_>>(), vec![0, 3, 4]);
    let digest = small(1).digest().unwrap();
    assert!(out.checkpoints.iter().all(|c| c.digest == digest));
    assert_eq!(out.final_checkpoint().adam.step as usize, 4 * (54 / 16));
}

#[test]
fn zero_learning_rate_without_clipping_freezes_parameters() {
    let mut c = small(2);
    c.lr = 0.0;
    c.clip_norm = f64::INFINITY;
    let out = train(&c).unwrap();
    let init = &out.checkpoints[0].params;
    for ck in &out.checkpoints {
        assert_eq!(&ck.params, init);
    }
    assert!(out.log.rows.iter().all(|r| r.grad_norm > 0.0));
}

#[test]
fn clipping_bounds_the_step() {
    // Adam's first step moves every weight by lr in magnitude, whatever the clip
    let mut c = small(3);
    c.epochs = 1;
    c.batch_size = 54;
    c.clip_norm = 1e-6;
    let out = train(&c).unwrap();
    let (before, after) = (&out.checkpoints[0].params, &out.final_checkpoint().params);
    let moved = before.w_hh.data().iter().zip(after.w_hh.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(moved <= c.lr * (1.0 + 1e-6), "{moved}");
}

#[test]
fn checkpoint_files_round_trip_byte_for_byte() {
    let out = train(&small(4)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    for (k, ck) in out.checkpoints.iter().enumerate() {
        let p1 = dir.path().join(format!("a{k}.ckpt"));
        let p2 = dir.path().join(format!("b{k}.ckpt"));
        save_checkpoint(&p1, ck).unwrap();
        let back = load_checkpoint(&p1).unwrap();
        assert_eq!(&back, ck);
        save_checkpoint(&p2, &back).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }
}

fn text_of(ck: &Checkpoint) -> String {
    ck.to_text().unwrap()
}

#[test]
fn edited_digest_or_config_is_drift() {
    let out = train(&small(7)).unwrap();
    let text = text_of(out.final_checkpoint());
    let digest = &out.final_checkpoint().digest;
    let forged = text.replacen(digest.as_str(), &"0".repeat(digest.len()), 1);
    assert!(matches!(Checkpoint::from_text(&forged), Err(Error::ConfigDrift { .. })));
    let reseeded = text.replacen("\"seed\":7", "\"seed\":8", 1);
    assert_ne!(reseeded, text);
    assert!(matches!(Checkpoint::from_text(&reseeded), Err(Error::ConfigDrift { .. })));
}

#[test]
fn truncated_or_damaged_files_are_format_errors() {
    let out = train(&small(8)).unwrap();
    let text = text_of(out.final_checkpoint());
    let header_len = text.find('\n').unwrap();
    for cut in [0, header_len / 2, header_len + 1, header_len + 40, text.len() / 2, text.len() - 10] {
        assert!(matches!(Checkpoint::from_text(&text[..cut]), Err(Error::Format(_))), "cut at {cut}");
    }
    let extra = format!("{text}junk\n");
    assert!(matches!(Checkpoint::from_text(&extra), Err(Error::Format(_))));
    let swapped = text.replacen("\nW_ih:", "\nA:", 1);
    assert!(matches!(Checkpoint::from_text(&swapped), Err(Error::Format(_))));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("short.ckpt");
    std::fs::write(&path, &text[..text.len() / 3]).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(Error::Format(_))));
    assert!(matches!(load_checkpoint(&dir.path().join("missing.ckpt")), Err(Error::Io(_))));
}

#[test]
fn loss_log_csv_has_the_documented_header() {
    let out = train(&small(9)).unwrap();
    let csv = out.log.to_csv();
    assert!(csv.starts_with("epoch,train_loss,val_loss,grad_norm,seconds\n"));
    assert_eq!(LossLog::from_csv(&csv).unwrap(), out.log);
}

#[test]
fn invalid_configs_are_rejected() {
    let mut c = small(0);
    c.hmm = HmmSource::LinearChain { m: 1, rho: 0.05, eps: 0.01 };
    assert!(matches!(train(&c), Err(Error::Config(_))));
    let mut c = small(0);
    c.checkpoint_every = 0;
    assert!(matches!(train(&c), Err(Error::Config(_))));
    let mut c = small(0);
    c.val_fraction = 0.001;
    assert!(matches!(train(&c), Err(Error::Config(_))));
}

#[test]
fn shorter_run_is_a_prefix_of_a_longer_one() {
    let mut long = small(10);
    long.checkpoint_every = 2;
    let mut short = long.clone();
    short.epochs = 2;
    let (a, b) = (train(&long).unwrap(), train(&short).unwrap());
    let body = |ck: &Checkpoint| text_of(ck).split_once('\n').unwrap().1.to_string();
    assert_eq!(body(&a.checkpoints[1]), body(b.final_checkpoint()));
    assert_eq!(a.checkpoints[1].epoch, 2);
    assert_eq!(losses(&a.log)[..2], losses(&b.log)[..]);
}
