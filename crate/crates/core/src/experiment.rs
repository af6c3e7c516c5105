//! End-to-end runs: data preparation, training, evaluation and ablation
//! sweeps.

use std::fmt;
use std::str::FromStr;

use crate::config::RunConfig;
use crate::data::{gen_synthetic, load_embeddings};
use crate::episodes::{split_by_counts, Dataset, Split};
use crate::error::{Error, Result};
use crate::rng::{SeededRng, Stream};
use crate::schedule::{Schedule, ScheduleKind};
use crate::trainer::{evaluate, EpochRecord, EvalReport, ModelConfig, ModelState, Trainer};

/// Loads or generates the raw data and applies the class split.
pub fn prepare_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let raw = match &cfg.data_path {
        Some(path) => load_embeddings(path)?,
        None => gen_synthetic(&cfg.synthetic)?,
    };
    let s = cfg.split;
    split_by_counts(&raw, s.train, s.val, s.test, s.merge_val)
}

pub fn build_schedule(cfg: &RunConfig) -> Result<Schedule> {
    cfg.schedule_spec().build()
}

/// Fresh model and optimizer for `ds`, initialized from the run seed.
pub fn init_trainer(cfg: &RunConfig, ds: &Dataset) -> Result<Trainer> {
    let model_cfg = ModelConfig {
        input_dim: ds.dim(),
        ..cfg.model.clone()
    };
    let mut rng = SeededRng::stream(cfg.seed, Stream::Init);
    let model = ModelState::init(&model_cfg, ds.classes_in(Split::Train).len(), &mut rng)?;
    Ok(Trainer::new(model, cfg.train.momentum, cfg.seed))
}

/// Continues `trainer` through `schedule`, calling `on_epoch` after each
/// finished epoch.
pub fn train(
    cfg: &RunConfig,
    ds: &Dataset,
    schedule: &Schedule,
    trainer: &mut Trainer,
    stop_before: Option<usize>,
    mut on_epoch: impl FnMut(&Trainer, &EpochRecord) -> Result<()>,
) -> Result<()> {
    let end = stop_before.map_or(schedule.len(), |s| s.min(schedule.len()));
    while trainer.next_epoch < end {
        let epoch = trainer.next_epoch;
        let record = trainer.run_epoch(schedule.epochs()[epoch], epoch, ds, &cfg.train)?;
        trainer.log.push(record.clone());
        trainer.next_epoch += 1;
        on_epoch(trainer, &record)?;
    }
    Ok(())
}

pub fn evaluate_test(cfg: &RunConfig, ds: &Dataset, model: &ModelState) -> Result<EvalReport> {
    evaluate(
        model,
        ds,
        &cfg.train.episode,
        Split::Test,
        cfg.eval_episodes,
        cfg.eval_seed,
        cfg.workers,
    )
}

pub struct RunOutcome {
    pub schedule: Schedule,
    pub trainer: Trainer,
    pub report: EvalReport,
}

/// Full training followed by test evaluation.
pub fn run(cfg: &RunConfig, ds: &Dataset) -> Result<RunOutcome> {
    cfg.validate()?;
    let schedule = build_schedule(cfg)?;
    let mut trainer = init_trainer(cfg, ds)?;
    train(cfg, ds, &schedule, &mut trainer, None, |_, _| Ok(()))?;
    let report = evaluate_test(cfg, ds, &trainer.model)?;
    Ok(RunOutcome {
        schedule,
        trainer,
        report,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sweep {
    /// naive, two-stage, at and oat, each over every seed.
    Strategy,
    /// `h_gen` over [`H_SWEEP`], each over every seed.
    Generation,
}

pub const H_SWEEP: [usize; 6] = [0, 2, 4, 16, 32, 64];

impl FromStr for Sweep {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "strategy" => Ok(Sweep::Strategy),
            "h" | "generation" => Ok(Sweep::Generation),
            other => Err(Error::Config(format!("unknown sweep {other:?}"))),
        }
    }
}

impl fmt::Display for Sweep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sweep::Strategy => "strategy",
            Sweep::Generation => "h",
        })
    }
}

/// One configuration variant of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct Arm {
    pub name: String,
    pub config: RunConfig,
}

pub fn sweep_arms(base: &RunConfig, sweep: Sweep) -> Vec<Arm> {
    match sweep {
        Sweep::Strategy => [ScheduleKind::Naive, ScheduleKind::TwoStage, ScheduleKind::At, ScheduleKind::Oat]
            .into_iter()
            .map(|kind| {
                let mut config = base.clone();
                config.schedule.kind = kind;
                Arm {
                    name: kind.to_string(),
                    config,
                }
            })
            .collect(),
        Sweep::Generation => H_SWEEP
            .into_iter()
            .map(|h| {
                let mut config = base.clone();
                config.train.episode.h_gen = h;
                Arm {
                    name: format!("h={h}"),
                    config,
                }
            })
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub arm: String,
    pub seed: u64,
    pub accuracy: f64,
    pub ci95: Option<f64>,
}

/// Sample standard deviation; `None` with fewer than two values.
pub fn sample_std(values: &[f64]) -> Option<f64> {
    let n = values.len();
    (n >= 2).then(|| {
        let mean = values.iter().sum::<f64>() / n as f64;
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationSummary {
    pub rows: Vec<AblationRow>,
}

impl AblationSummary {
    pub fn arms(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.arm) {
                out.push(r.arm.clone());
            }
        }
        out
    }

    pub fn accuracies(&self, arm: &str) -> Vec<f64> {
        self.rows.iter().filter(|r| r.arm == arm).map(|r| r.accuracy).collect()
    }

    pub fn arm_std(&self, arm: &str) -> Option<f64> {
        sample_std(&self.accuracies(arm))
    }

    pub fn results_csv(&self) -> String {
        let mut out = String::from("arm,seed,accuracy,ci95\n");
        for r in &self.rows {
            let ci = r.ci95.map(|c| c.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{},{ci}\n", r.arm, r.seed, r.accuracy));
        }
        out
    }

    /// Per arm: mean accuracy and standard deviation across seeds.
    pub fn arm_csv(&self) -> String {
        let mut out = String::from("arm,seeds,mean_accuracy,std\n");
        for arm in self.arms() {
            let acc = self.accuracies(&arm);
            let mean = acc.iter().sum::<f64>() / acc.len() as f64;
            let std = self.arm_std(&arm).map(|s| s.to_string()).unwrap_or_default();
            out.push_str(&format!("{arm},{},{mean},{std}\n", acc.len()));
        }
        out
    }
}

/// Runs every arm for every seed on the same dataset and evaluation
/// episodes; arms and seeds differ only in the run seed and the swept field.
pub fn ablate(
    base: &RunConfig,
    ds: &Dataset,
    sweep: Sweep,
    seeds: &[u64],
    mut on_row: impl FnMut(&AblationRow),
) -> Result<AblationSummary> {
    let mut rows = Vec::new();
    for arm in sweep_arms(base, sweep) {
        for &seed in seeds {
            let cfg = RunConfig {
                seed,
                ..arm.config.clone()
            };
            let out = run(&cfg, ds)?;
            let row = AblationRow {
                arm: arm.name.clone(),
                seed,
                accuracy: out.report.mean_accuracy,
                ci95: out.report.ci95,
            };
            on_row(&row);
            rows.push(row);
        }
    }
    Ok(AblationSummary { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> RunConfig {
        RunConfig::from_text(
            "synthetic.classes=8\nsynthetic.samples=10\nsplit.train=4\nsplit.val=2\nsplit.test=2\n\
             n_way=2\nqueries=2\nh_gen=2\nhidden=8\nfeature_dim=8\nlatent_dim=6\nunit_epochs=1\ngamma=0,1\n\
             epochs=2\naux_steps=2\nmeta_episodes=2\nbatch_size=4\nepisodes=3\n",
        )
        .unwrap()
    }

    #[test]
    fn default_split_merges_validation() {
        let ds = prepare_dataset(&RunConfig::default()).unwrap();
        assert_eq!(ds.classes_in(Split::Train).len(), 15);
        assert_eq!(ds.classes_in(Split::Val).len(), 0);
        assert_eq!(ds.classes_in(Split::Test).len(), 5);
    }

    #[test]
    fn sweeps_have_expected_arms() {
        let base = RunConfig::default();
        let names: Vec<String> = sweep_arms(&base, Sweep::Strategy).into_iter().map(|a| a.name).collect();
        assert_eq!(names, ["naive", "two-stage", "at", "oat"]);
        let h: Vec<usize> = sweep_arms(&base, Sweep::Generation)
            .iter()
            .map(|a| a.config.train.episode.h_gen)
            .collect();
        assert_eq!(h, H_SWEEP);
    }

    #[test]
    fn strategy_sweep_counts_rows() {
        let cfg = tiny();
        let ds = prepare_dataset(&cfg).unwrap();
        let summary = ablate(&cfg, &ds, Sweep::Strategy, &[1, 2, 3, 4, 5], |_| {}).unwrap();
        assert_eq!(summary.rows.len(), 20);
        assert_eq!(summary.results_csv().lines().count(), 21);
        assert_eq!(summary.arm_csv().lines().count(), 5);
        assert!(summary.arm_std("oat").is_some());
    }

    #[test]
    fn runs_are_deterministic() {
        let cfg = tiny();
        let ds = prepare_dataset(&cfg).unwrap();
        let a = run(&cfg, &ds).unwrap();
        let b = run(&cfg, &ds).unwrap();
        assert_eq!(a.trainer, b.trainer);
        assert_eq!(a.report, b.report);
    }

    #[test]
    fn std_matches_hand_value() {
        assert_eq!(sample_std(&[1.0]), None);
        assert!((sample_std(&[1.0, 3.0]).unwrap() - 2f64.sqrt()).abs() < 1e-15);
    }
}
