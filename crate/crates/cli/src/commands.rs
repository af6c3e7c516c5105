//! Command implementations. Every output file except `run.log` is a pure
//! function of the configuration.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Context;
use dtn_core::config::{RunConfig, KEYS};
use dtn_core::data::{gen_synthetic, load_checkpoint, save_checkpoint, write_embeddings, Checkpoint};
use dtn_core::episodes::{sample_episode, Dataset, Split};
use dtn_core::experiment::{self, Sweep};
use dtn_core::rng::{SeededRng, Stream};
use dtn_core::schedule::Schedule;
use dtn_core::trainer::{forward_episode_eval, metrics_csv, EvalReport, Trainer};

use crate::RunArgs;

pub type Result<T> = anyhow::Result<T>;

/// Invalid invocation detected by the front end itself.
#[derive(Debug)]
pub struct ConfigError(String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn config_error(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

/// 1 for configuration and input errors anywhere in the chain, 2 otherwise.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    let config = err.chain().any(|cause| {
        cause.is::<ConfigError>()
            || matches!(
                cause.downcast_ref::<dtn_core::Error>(),
                Some(dtn_core::Error::Config(_) | dtn_core::Error::Parse { .. })
            )
    });
    if config {
        1
    } else {
        2
    }
}

pub fn format_report(r: &EvalReport) -> String {
    match r.ci95 {
        Some(ci) => format!("{:.4} ± {:.4}", r.mean_accuracy, ci),
        None => format!("{:.4} ± n/a", r.mean_accuracy),
    }
}

struct RunLog(fs::File);

impl RunLog {
    fn open(dir: &Path) -> Result<Self> {
        let path = dir.join("run.log");
        let file = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .with_context(|| format!("opening {}", path.display()))?;
        Ok(Self(file))
    }

    fn line(&mut self, msg: &str) -> std::io::Result<()> {
        let t = SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default();
        writeln!(self.0, "[{}.{:03}] {msg}", t.as_secs(), t.subsec_millis())
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn create_parent(file: &Path) -> Result<()> {
    match file.parent() {
        Some(p) if !p.as_os_str().is_empty() => create_dir(p),
        _ => Ok(()),
    }
}

fn dataset(cfg: &RunConfig) -> Result<Dataset> {
    cfg.validate()?;
    Ok(experiment::prepare_dataset(cfg)?)
}

pub fn train(cfg: &RunConfig, out: &Path, stop_before: Option<usize>) -> Result<()> {
    let ds = dataset(cfg)?;
    let schedule = experiment::build_schedule(cfg)?;
    let trainer = experiment::init_trainer(cfg, &ds)?;
    run_training(cfg, &ds, &schedule, trainer, out, stop_before)
}

pub fn resume(ckpt: &Path, out: &Path, workers: Option<usize>, stop_before: Option<usize>) -> Result<()> {
    let ckpt = read_checkpoint(ckpt)?;
    let mut cfg = RunConfig::from_text(&ckpt.config)?;
    if let Some(w) = workers {
        cfg.workers = w;
    }
    let ds = dataset(&cfg)?;
    run_training(&cfg, &ds, &ckpt.schedule, ckpt.trainer, out, stop_before)
}

fn run_training(
    cfg: &RunConfig,
    ds: &Dataset,
    schedule: &Schedule,
    mut trainer: Trainer,
    out: &Path,
    stop_before: Option<usize>,
) -> Result<()> {
    create_dir(out)?;
    let config_text = cfg.to_text();
    write(&out.join("config.txt"), &config_text)?;
    write(&out.join("schedule.txt"), &format!("{schedule}\n"))?;
    let mut log = RunLog::open(out)?;
    log.line(&format!("start at epoch {} of {} ({schedule})", trainer.next_epoch, schedule.len()))?;

    let metrics_path = out.join("metrics.csv");
    let ckpt_path = out.join("checkpoint.dtnc");
    let save = |trainer: &Trainer| -> dtn_core::Result<()> {
        fs::write(&metrics_path, metrics_csv(&trainer.log))?;
        let ckpt = Checkpoint {
            schedule: schedule.clone(),
            config: config_text.clone(),
            trainer: trainer.clone(),
        };
        save_checkpoint(&ckpt, &ckpt_path)
    };

    let result = experiment::train(cfg, ds, schedule, &mut trainer, stop_before, |t, rec| {
        let val = rec.val_accuracy.map(|a| format!(" val {a:.4}")).unwrap_or_default();
        let msg = format!(
            "epoch {:>3} {} loss {:.5}{val}",
            rec.epoch_index,
            rec.kind.symbol(),
            rec.mean_loss.unwrap_or(f64::NAN)
        );
        eprintln!("{msg}");
        log.line(&msg)?;
        save(t)
    });
    if let Err(e) = result {
        log.line(&format!("aborted: {e}"))?;
        return Err(e.into());
    }
    save(&trainer)?;

    if trainer.next_epoch < schedule.len() {
        log.line(&format!("stopped before epoch {}", trainer.next_epoch))?;
        println!("stopped before epoch {}; resume with --resume {}", trainer.next_epoch, ckpt_path.display());
        return Ok(());
    }
    let report = experiment::evaluate_test(cfg, ds, &trainer.model)?;
    let line = format_report(&report);
    write(&out.join("report.txt"), &format!("{line}\n"))?;
    log.line(&format!("test accuracy {line} over {} episodes", report.episode_count))?;
    println!("{line}");
    Ok(())
}

fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.is_file() {
        return Err(config_error(format!("checkpoint {} not found", path.display())));
    }
    load_checkpoint(path).with_context(|| format!("loading {}", path.display()))
}

/// Configuration stored in the checkpoint with the invocation's overrides on
/// top. `--seed` selects the evaluation episodes; training seeds are kept.
fn checkpoint_config(ckpt: &Checkpoint, run: &RunArgs) -> Result<RunConfig> {
    let base = RunConfig::from_text(&ckpt.config)?;
    let mut cfg = run.apply(base.clone())?;
    if let Some(seed) = run.seed {
        cfg.seed = base.seed;
        cfg.eval_seed = seed;
    }
    Ok(cfg)
}

fn checked_dataset(cfg: &RunConfig, trainer: &Trainer) -> Result<Dataset> {
    let ds = dataset(cfg)?;
    let want = trainer.model.extractor.input_dim();
    if ds.dim() != want {
        return Err(config_error(format!(
            "dataset has dimension {} but the checkpoint expects {want}",
            ds.dim()
        )));
    }
    Ok(ds)
}

pub fn eval(ckpt_path: &Path, run: &RunArgs, out: &Path) -> Result<()> {
    let ckpt = read_checkpoint(ckpt_path)?;
    let cfg = checkpoint_config(&ckpt, run)?;
    let ds = checked_dataset(&cfg, &ckpt.trainer)?;
    let report = experiment::evaluate_test(&cfg, &ds, &ckpt.trainer.model)?;
    create_dir(out)?;
    let mut csv = String::from("episode,accuracy\n");
    for (i, a) in report.per_episode.iter().enumerate() {
        csv.push_str(&format!("{i},{a}\n"));
    }
    write(&out.join("eval_episodes.csv"), &csv)?;
    println!("{}", format_report(&report));
    Ok(())
}

/// Comma-separated seeds, each a value or an inclusive range `a-b`.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let bad = || config_error(format!("invalid seed list {text:?}"));
    let mut out = Vec::new();
    for part in text.split(',').map(str::trim) {
        match part.split_once('-') {
            Some((a, b)) => {
                let a: u64 = a.trim().parse().map_err(|_| bad())?;
                let b: u64 = b.trim().parse().map_err(|_| bad())?;
                if a > b {
                    return Err(bad());
                }
                out.extend(a..=b);
            }
            None => out.push(part.parse().map_err(|_| bad())?),
        }
    }
    Ok(out)
}

pub fn ablate(cfg: &RunConfig, sweep: &str, seeds: &str, out: &Path) -> Result<()> {
    let sweep: Sweep = sweep.parse()?;
    let seeds = parse_seeds(seeds)?;
    let ds = dataset(cfg)?;
    create_dir(out)?;
    write(&out.join("config.txt"), &cfg.to_text())?;
    let summary = experiment::ablate(cfg, &ds, sweep, &seeds, |row| {
        eprintln!("{} seed {}: {:.4}", row.arm, row.seed, row.accuracy);
    })?;
    write(&out.join("results.csv"), &summary.results_csv())?;
    write(&out.join("arms.csv"), &summary.arm_csv())?;
    print!("{}", summary.arm_csv());
    Ok(())
}

pub fn gen_data(cfg: &RunConfig, out: &Path) -> Result<()> {
    let ds = gen_synthetic(&cfg.synthetic)?;
    create_parent(out)?;
    write_embeddings(&ds, out).with_context(|| format!("writing {}", out.display()))?;
    println!("{} items, {} classes, dim {} -> {}", ds.len(), ds.class_count(), ds.dim(), out.display());
    Ok(())
}

fn push_row(csv: &mut String, role: &str, class: &str, features: &[f64]) {
    csv.push_str(role);
    csv.push(',');
    csv.push_str(class);
    for v in features {
        csv.push_str(&format!(",{v}"));
    }
    csv.push('\n');
}

/// Features of test episode 0 under the evaluation seed: every item of the
/// episode's classes (`real`), the support set, and the generated features.
pub fn export(ckpt_path: &Path, run: &RunArgs, out: &Path) -> Result<()> {
    let ckpt = read_checkpoint(ckpt_path)?;
    let cfg = checkpoint_config(&ckpt, run)?;
    let ds = checked_dataset(&cfg, &ckpt.trainer)?;
    let model = &ckpt.trainer.model;
    let ep_cfg = cfg.train.episode;
    let mut rng = SeededRng::stream(cfg.eval_seed, Stream::Eval).child(0);
    let ep = sample_episode(&ds, &ep_cfg, Split::Test, &mut rng)?;
    let (g, fwd) = forward_episode_eval(model, &ds, &ep, &ep_cfg)?;

    let dim = model.extractor.feature_dim();
    let mut csv = String::from("role,class");
    for i in 0..dim {
        csv.push_str(&format!(",f{i}"));
    }
    csv.push('\n');
    for &class in &ep.classes {
        let feats = model.extractor.extract(&ds.gather(ds.class_items(class).iter().copied()))?;
        for r in 0..feats.rows() {
            push_row(&mut csv, "real", ds.label(class), feats.row(r));
        }
    }
    let (k, h) = (ep_cfg.k_shot, ep_cfg.h_gen);
    for i in 0..g.rows(fwd.support) {
        push_row(&mut csv, "support", ds.label(ep.classes[i / k]), g.row(fwd.support, i));
    }
    let generated = if h == 0 { 0 } else { g.rows(fwd.generated) };
    for j in 0..generated {
        push_row(&mut csv, "generated", ds.label(ep.classes[j / h / k]), g.row(fwd.generated, j));
    }
    create_parent(out)?;
    write(out, &csv)?;
    println!("{} support, {generated} generated rows -> {}", g.rows(fwd.support), out.display());
    Ok(())
}

pub fn keys() {
    let defaults = RunConfig::default();
    for (key, doc) in KEYS {
        println!("{key}={}  # {doc}", defaults.get(key).unwrap_or_default());
    }
}
