use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use hmmrnn::analysis::AnalysisConfig;
use hmmrnn::circuit::{self, NeuronGroups};
use hmmrnn::dynamics::{self, count_unstable, mobius, Zone};
use hmmrnn::hmm::{self, build_linear_chain};
use hmmrnn::metrics::{self, EvalConfig};
use hmmrnn::numerics::RngStream;
use hmmrnn::train::{self, digest_of, load_checkpoint, save_checkpoint, Checkpoint, TrainConfig};

use crate::config::{chain, load, read_text, SampleConfig};
use crate::error::CliError;
use crate::Common;

struct RunDir(PathBuf);

impl RunDir {
    fn new(common: &Common, digest: &str) -> Self {
        RunDir(common.out.join(digest))
    }

    fn path(&self, sub: &str, name: &str) -> PathBuf {
        self.0.join(sub).join(name)
    }

    fn write(&self, sub: &str, name: &str, contents: &str) -> Result<PathBuf, CliError> {
        let path = self.path(sub, name);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| CliError::Other(format!("{}: {e}", dir.display())))?;
        }
        std::fs::write(&path, contents).map_err(|e| CliError::Other(format!("{}: {e}", path.display())))?;
        println!("{}", path.display());
        Ok(path)
    }

    fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write("reports", name, &text)
    }
}

fn load_ck(path: &Path) -> Result<Checkpoint, CliError> {
    if !path.is_file() {
        return Err(CliError::MissingFile(path.to_path_buf()));
    }
    Ok(load_checkpoint(path)?)
}

fn analysis_config(common: &Common) -> Result<(AnalysisConfig, String), CliError> {
    let cfg = load(AnalysisConfig::default(), common, Vec::new())?;
    cfg.validate()?;
    let digest = digest_of(&cfg)?;
    Ok((cfg, digest))
}

fn envelope(ck: &Checkpoint, config_digest: &str, seed: u64, name: &str, result: Value) -> Value {
    json!({
        "analysis": name,
        "digest": ck.digest,
        "config_digest": config_digest,
        "seed": seed,
        "epoch": ck.epoch,
        "result": result,
    })
}

pub fn hmm_sample(common: &Common, m: Option<usize>, len: Option<usize>, n: Option<usize>) -> Result<(), CliError> {
    let mut extra = Vec::new();
    if let Some(m) = m {
        extra.push(("hmm", serde_json::to_value(chain(m))?));
    }
    if let Some(len) = len {
        extra.push(("len", json!(len)));
    }
    if let Some(n) = n {
        extra.push(("n", json!(n)));
    }
    let cfg = load(SampleConfig::default(), common, extra)?;
    if cfg.len == 0 || cfg.n == 0 {
        return Err(CliError::Config("len and n must be positive".into()));
    }
    let spec = cfg.hmm.build().map_err(|e| CliError::Config(format!("hmm: {e}")))?;
    let digest = digest_of(&cfg)?;
    let root = RngStream::new(cfg.seed, 0);
    let sequences: Vec<Value> = (0..cfg.n)
        .map(|i| {
            let (states, obs) = hmm::sample(&spec, cfg.len, &mut root.split(i as u64));
            json!({ "states": states, "observations": obs.observations })
        })
        .collect();
    let dir = RunDir::new(common, &digest);
    dir.json("sequences.json", &json!({ "digest": digest, "seed": cfg.seed, "config": cfg, "spec": spec, "sequences": sequences }))?;
    Ok(())
}

/// True when the config file or a `--set` names `key` at top level.
fn mentions(common: &Common, key: &str) -> Result<bool, CliError> {
    if common.set.iter().any(|s| s.split('=').next().map(str::trim) == Some(key)) {
        return Ok(true);
    }
    match &common.config {
        Some(p) => {
            let v: Value = serde_json::from_str(&read_text(p)?).map_err(|e| CliError::Config(e.to_string()))?;
            Ok(v.get(key).is_some())
        }
        None => Ok(false),
    }
}

pub fn train(common: &Common, m: Option<usize>, epochs: Option<usize>) -> Result<(), CliError> {
    let mut extra = Vec::new();
    if let Some(m) = m {
        extra.push(("hmm", serde_json::to_value(chain(m))?));
    }
    if let Some(e) = epochs {
        extra.push(("epochs", json!(e)));
    }
    let mut cfg = load(TrainConfig::desk(chain(2)), common, extra)?;
    if !mentions(common, "clip_norm")? {
        cfg.clip_norm = cfg.hmm.default_clip_norm();
    }
    cfg.validate()?;
    let digest = cfg.digest()?;
    let dir = RunDir::new(common, &digest);
    let out = train::train(&cfg)?;
    let mut saved = Vec::new();
    for ck in &out.checkpoints {
        let path = dir.path("checkpoints", &format!("epoch_{:04}.ckpt", ck.epoch));
        std::fs::create_dir_all(path.parent().expect("checkpoint dir")).map_err(|e| CliError::Other(e.to_string()))?;
        save_checkpoint(&path, ck)?;
        println!("{}", path.display());
        saved.push(path.file_name().map(|f| f.to_string_lossy().into_owned()));
    }
    let (mut losses, mut timing) = (String::from("epoch,train_loss,val_loss,grad_norm\n"), String::from("epoch,seconds\n"));
    for r in &out.log.rows {
        let _ = writeln!(losses, "{},{:?},{:?},{:?}", r.epoch, r.train_loss, r.val_loss, r.grad_norm);
        let _ = writeln!(timing, "{},{:?}", r.epoch, r.seconds);
    }
    dir.write("reports", "loss.csv", &losses)?;
    dir.write("logs", "timing.csv", &timing)?;
    let last = out.log.rows.last();
    dir.json(
        "train.json",
        &json!({
            "digest": digest,
            "seed": cfg.seed,
            "config": cfg,
            "epochs_completed": last.map(|r| r.epoch),
            "final_train_loss": last.map(|r| r.train_loss),
            "final_val_loss": last.map(|r| r.val_loss),
            "aborted": out.aborted,
            "checkpoints": saved,
        }),
    )?;
    match out.aborted {
        Some(why) => Err(CliError::Numeric(why)),
        None => Ok(()),
    }
}

pub fn evaluate(common: &Common, checkpoint: Option<&Path>, hmm_only: bool, m: usize) -> Result<(), CliError> {
    let cfg = load(EvalConfig::default(), common, Vec::new())?;
    if cfg.n_sequences < 2 || cfg.seq_len == 0 {
        return Err(CliError::Config("n_sequences must be ≥ 2 and seq_len positive".into()));
    }
    let config_digest = digest_of(&cfg)?;
    if hmm_only {
        let spec = build_linear_chain(m, 0.05, 0.01).map_err(|e| CliError::Config(format!("M: {e}")))?;
        let root = RngStream::new(cfg.seed, 0);
        let a = metrics::hmm_sequences(&spec, cfg.n_sequences, cfg.seq_len, &root.split(1));
        let b = metrics::hmm_sequences(&spec, cfg.n_sequences, cfg.seq_len, &root.split(2));
        let report = metrics::metric_report(&a, &b, cfg.eps_sinkhorn)?;
        let digest = digest_of(&json!({ "evaluate": cfg, "hmm_only": m }))?;
        let dir = RunDir::new(common, &digest);
        dir.json("evaluate_hmm.json", &json!({ "digest": digest, "config_digest": config_digest, "seed": cfg.seed, "M": m, "report": report }))?;
        return Ok(());
    }
    let path = checkpoint.ok_or_else(|| CliError::Config("checkpoint: required unless --hmm-only".into()))?;
    let ck = load_ck(path)?;
    let spec = ck.config.hmm.build()?;
    let report = metrics::evaluate(&ck.params, &spec, &cfg)?;
    let dir = RunDir::new(common, &ck.digest);
    dir.json(&format!("evaluate_e{:04}.json", ck.epoch), &envelope(&ck, &config_digest, cfg.seed, "evaluate", serde_json::to_value(report)?))?;
    Ok(())
}

#[derive(Clone, Copy)]
pub enum Analysis {
    FixedPoints,
    Orbits,
    Zones,
    Noise,
    Perturbation,
    Subspaces,
}

fn zone_name(z: Zone) -> &'static str {
    match z {
        Zone::Cluster => "cluster",
        Zone::Kick => "kick",
        Zone::Transition => "transition",
    }
}

pub fn analyze(common: &Common, checkpoint: &Path, which: Analysis) -> Result<(), CliError> {
    let (cfg, cd) = analysis_config(common)?;
    let ck = load_ck(checkpoint)?;
    let p = &ck.params;
    let dir = RunDir::new(common, &ck.digest);
    let e = ck.epoch;
    let (name, result) = match which {
        Analysis::FixedPoints => {
            let fp = cfg.fixed_points(p)?;
            let mapped: Vec<Vec<Option<[f64; 2]>>> = fp
                .spectra
                .iter()
                .map(|s| s.iter().map(|l| mobius(*l).ok().map(|m| [m.re, m.im])).collect())
                .collect();
            let unstable: Vec<usize> = fp.spectra.iter().map(|s| count_unstable(s)).collect();
            ("fixed_points", json!({ "count": fp.count(), "report": fp, "mobius": mapped, "unstable": unstable }))
        }
        Analysis::Orbits => ("orbits", serde_json::to_value(cfg.orbits(p)?)?),
        Analysis::Zones => {
            let zm = cfg.zones(p)?;
            let mut csv = String::from("time,rt,sign_changes,unstable,dominant,zone\n");
            for k in 0..zm.len() {
                let _ = writeln!(csv, "{},{:?},{:?},{},{},{}", zm.times[k], zm.rt[k], zm.sign_changes[k], zm.unstable[k], zm.dominant[k], zone_name(zm.labels[k]));
            }
            dir.write("reports", &format!("zones_e{e:04}.csv"), &csv)?;
            let fractions = json!({
                "cluster": zm.fraction(Zone::Cluster),
                "kick": zm.fraction(Zone::Kick),
                "transition": zm.fraction(Zone::Transition),
            });
            ("zones", json!({ "fractions": fractions, "map": zm }))
        }
        Analysis::Noise => {
            let probes = cfg.noise(p)?;
            let mut csv = String::from("gamma,step,cov_trace,mean_distance\n");
            for (g, ns) in &probes {
                for t in 0..ns.cov_trace.len() {
                    let _ = writeln!(csv, "{g:?},{t},{:?},{:?}", ns.cov_trace[t], ns.mean_distance[t]);
                }
            }
            dir.write("reports", &format!("noise_e{e:04}.csv"), &csv)?;
            let summary: Vec<Value> =
                probes.iter().map(|(g, ns)| json!({ "gamma": g, "cov_trace": ns.cov_trace, "mean_distance": ns.mean_distance })).collect();
            ("noise", Value::Array(summary))
        }
        Analysis::Perturbation => {
            let fp = cfg.fixed_points(p)?;
            let (vectors, fit) = cfg.perturbation(p, &fp)?;
            ("perturbation", json!({ "fixed_point_found": fp.count() > 0, "vectors": vectors, "fit": fit }))
        }
        Analysis::Subspaces => ("subspaces", serde_json::to_value(cfg.subspaces(&cfg.zones(p)?)?)?),
    };
    dir.json(&format!("{name}_e{e:04}.json"), &envelope(&ck, &cd, cfg.seed, name, result))?;
    Ok(())
}

pub fn epochs(common: &Common, run: &Path) -> Result<(), CliError> {
    let (cfg, cd) = analysis_config(common)?;
    let ck_dir = run.join("checkpoints");
    if !ck_dir.is_dir() {
        return Err(CliError::MissingFile(ck_dir));
    }
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&ck_dir)
        .map_err(|e| CliError::Other(e.to_string()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ckpt"))
        .collect();
    paths.sort();
    let mut cks = paths.iter().map(|p| load_ck(p)).collect::<Result<Vec<_>, _>>()?;
    cks.sort_by_key(|c| c.epoch);
    let digest = match cks.first() {
        Some(c) if cks.iter().all(|o| o.digest == c.digest) => c.digest.clone(),
        Some(_) => return Err(CliError::Config("checkpoints come from different configs".into())),
        None => return Err(CliError::MissingFile(ck_dir.join("*.ckpt"))),
    };
    let rows = cfg.sweep(&cks)?;
    let dir = RunDir::new(common, &digest);
    dir.write("reports", "epochs.csv", &dynamics::epoch_rows_csv(&rows))?;
    dir.json("epochs.json", &json!({ "analysis": "epochs", "digest": digest, "config_digest": cd, "seed": cfg.seed, "result": rows }))?;
    Ok(())
}

#[derive(Clone, Copy)]
pub enum CircuitStep {
    Detect,
    Report,
    Intervene,
    Oscillations,
    Alignment,
}

fn groups_for(cfg: &AnalysisConfig, ck: &Checkpoint, path: Option<&Path>) -> Result<NeuronGroups, CliError> {
    match path {
        Some(p) => {
            let v: Value = serde_json::from_str(&read_text(p)?).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            let g = v.pointer("/result/groups").cloned().ok_or_else(|| CliError::Config(format!("{}: no result.groups", p.display())))?;
            let groups: NeuronGroups = serde_json::from_value(g).map_err(|e| CliError::Config(e.to_string()))?;
            groups.validate()?;
            if groups.hidden != ck.params.hidden() {
                return Err(CliError::Config("groups were detected on a network of another width".into()));
            }
            Ok(groups)
        }
        None => {
            let zm = cfg.zones(&ck.params)?;
            Ok(cfg.detect(&ck.params, &zm)?)
        }
    }
}

pub fn circuit(common: &Common, checkpoint: &Path, groups_path: Option<&Path>, step: CircuitStep) -> Result<(), CliError> {
    let (cfg, cd) = analysis_config(common)?;
    let ck = load_ck(checkpoint)?;
    let p = &ck.params;
    let dir = RunDir::new(common, &ck.digest);
    let e = ck.epoch;
    let (name, result) = match step {
        CircuitStep::Detect => {
            let zm = cfg.zones(p)?;
            let groups = cfg.detect(p, &zm)?;
            let sizes: Vec<usize> = groups.kick.iter().map(Vec::len).collect();
            ("groups", json!({ "groups": groups, "kick_sizes": sizes }))
        }
        CircuitStep::Report => {
            let groups = groups_for(&cfg, &ck, groups_path)?;
            ("connectivity", serde_json::to_value(circuit::connectivity_report(p, &groups)?)?)
        }
        CircuitStep::Intervene => {
            let groups = groups_for(&cfg, &ck, groups_path)?;
            let rows = cfg.intervention_table(p, &groups)?;
            dir.write("reports", &format!("interventions_e{e:04}.csv"), &circuit::outcome_csv(&rows))?;
            ("interventions", json!({ "delta": cfg.circuit.delta, "horizon": cfg.circuit.horizon, "rows": rows }))
        }
        CircuitStep::Oscillations => {
            let groups = groups_for(&cfg, &ck, groups_path)?;
            let tr = cfg.oscillations(p, &groups)?;
            let mut csv = String::from("step,dominant");
            for k in 0..tr.kick.len() {
                let _ = write!(csv, ",kick{k}");
            }
            for k in 0..tr.populations.len() {
                let _ = write!(csv, ",population{k}");
            }
            csv.push('\n');
            for t in 0..tr.dominant.len() {
                let _ = write!(csv, "{t},{}", tr.dominant[t]);
                for s in tr.kick.iter().chain(&tr.populations) {
                    let _ = write!(csv, ",{:?}", s[t]);
                }
                csv.push('\n');
            }
            dir.write("reports", &format!("oscillations_e{e:04}.csv"), &csv)?;
            ("oscillations", json!({ "population_correlation": tr.population_correlation, "bands": tr.bands }))
        }
        CircuitStep::Alignment => ("alignment", json!({ "alignment": cfg.alignment(p)? })),
    };
    dir.json(&format!("{name}_e{e:04}.json"), &envelope(&ck, &cd, cfg.seed, name, result))?;
    Ok(())
}

pub fn bundle(run: &Path) -> Result<(), CliError> {
    let reports = run.join("reports");
    if !reports.is_dir() {
        return Err(CliError::MissingFile(reports));
    }
    let mut files = BTreeMap::new();
    let mut tables = BTreeMap::new();
    for entry in std::fs::read_dir(&reports).map_err(|e| CliError::Other(e.to_string()))? {
        let path = entry.map_err(|e| CliError::Other(e.to_string()))?.path();
        let name = path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
        if name == "bundle.json" {
            continue;
        }
        match path.extension().and_then(|x| x.to_str()) {
            Some("json") => {
                let v: Value = serde_json::from_str(&read_text(&path)?).map_err(|e| CliError::Other(format!("{name}: {e}")))?;
                files.insert(name, v);
            }
            Some("csv") => {
                tables.insert(name, read_text(&path)?);
            }
            _ => {}
        }
    }
    let digest = run.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
    let mut text = serde_json::to_string_pretty(&json!({ "digest": digest, "reports": files, "tables": tables }))?;
    text.push('\n');
    let out = reports.join("bundle.json");
    std::fs::write(&out, text).map_err(|e| CliError::Other(format!("{}: {e}", out.display())))?;
    println!("{}", out.display());
    Ok(())
}
