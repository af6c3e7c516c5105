//! Flat `key=value` run configuration.
//!
//! Lines are `key = value`; blank lines and lines starting with `#` are
//! ignored. Later assignments override earlier ones, which is how command
//! line flags layer over a file.

use std::path::PathBuf;

use crate::data::SyntheticSpec;
use crate::error::{Error, Result};
use crate::schedule::{ScheduleKind, ScheduleSpec};
use crate::trainer::{ModelConfig, TrainConfig};

/// Class-count split applied to the raw dataset in first-appearance order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSpec {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    /// Fold validation classes into training for the final run.
    pub merge_val: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train: 12,
            val: 3,
            test: 5,
            merge_val: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Root seed for initialization, sampling, dropout and the schedule.
    pub seed: u64,
    /// Embedding file; synthetic data is generated when absent.
    pub data_path: Option<PathBuf>,
    pub synthetic: SyntheticSpec,
    pub split: SplitSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub schedule: ScheduleSpec,
    pub eval_episodes: usize,
    pub eval_seed: u64,
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data_path: None,
            synthetic: SyntheticSpec::default(),
            split: SplitSpec::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            schedule: ScheduleSpec::default(),
            eval_episodes: 600,
            eval_seed: 0,
            workers: 1,
        }
    }
}

/// Every key with a short description, in rendering order.
pub const KEYS: &[(&str, &str)] = &[
    ("seed", "root seed of the run"),
    ("data", "embedding file path, or 'synthetic'"),
    ("data_seed", "seed of the synthetic dataset"),
    ("synthetic.classes", "synthetic class count"),
    ("synthetic.dim", "synthetic input width"),
    ("synthetic.samples", "synthetic samples per class"),
    ("synthetic.variation_dims", "rank of the shared variation basis"),
    ("synthetic.variation_scale", "std of variation coefficients"),
    ("synthetic.noise_scale", "std of isotropic noise"),
    ("split.train", "train classes"),
    ("split.val", "validation classes"),
    ("split.test", "test classes"),
    ("split.merge_val", "merge validation into train"),
    ("n_way", "classes per episode"),
    ("k_shot", "support items per class"),
    ("queries", "query items per class"),
    ("h_gen", "reference pairs per episode"),
    ("schedule", "oat, at, naive or two-stage"),
    ("unit_epochs", "epochs per training unit"),
    ("gamma", "meta epochs per unit, comma separated"),
    ("at_decay", "annealing base of the stochastic schedule"),
    ("meta_fraction", "meta share for at and two-stage"),
    ("epochs", "length of at, naive and two-stage sequences"),
    ("lr_aux", "auxiliary learning rate"),
    ("lr_meta", "meta learning rate"),
    ("momentum", "SGD momentum"),
    ("lr_milestones", "epochs at which learning rates decay, comma separated"),
    ("lr_decay", "learning-rate factor per milestone"),
    ("batch_size", "auxiliary batch size"),
    ("aux_steps", "auxiliary steps per epoch"),
    ("meta_episodes", "episodes per meta epoch"),
    ("eval_every", "validate every this many epochs, 0 = never"),
    ("val_episodes", "episodes per validation"),
    ("max_skip_fraction", "tolerated share of degenerate episodes"),
    ("hidden", "extractor hidden widths, comma separated"),
    ("feature_dim", "feature width C"),
    ("latent_dim", "generator latent width"),
    ("dropout", "generator dropout rate"),
    ("leaky_slope", "leaky ReLU slope"),
    ("alpha_init", "initial temperatures"),
    ("normalize_aux", "normalize auxiliary weight rows"),
    ("episodes", "evaluation episodes"),
    ("eval_seed", "seed of evaluation episodes"),
    ("workers", "evaluation threads"),
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "seed" => self.seed = parse(key, v)?,
            "data" => self.data_path = (v != "synthetic").then(|| PathBuf::from(v)),
            "data_seed" => self.synthetic.seed = parse(key, v)?,
            "synthetic.classes" => self.synthetic.class_count = parse(key, v)?,
            "synthetic.dim" => self.synthetic.dim = parse(key, v)?,
            "synthetic.samples" => self.synthetic.samples_per_class = parse(key, v)?,
            "synthetic.variation_dims" => self.synthetic.variation_dims = parse(key, v)?,
            "synthetic.variation_scale" => self.synthetic.variation_scale = parse(key, v)?,
            "synthetic.noise_scale" => self.synthetic.noise_scale = parse(key, v)?,
            "split.train" => self.split.train = parse(key, v)?,
            "split.val" => self.split.val = parse(key, v)?,
            "split.test" => self.split.test = parse(key, v)?,
            "split.merge_val" => self.split.merge_val = parse(key, v)?,
            "n_way" => self.train.episode.n_way = parse(key, v)?,
            "k_shot" => self.train.episode.k_shot = parse(key, v)?,
            "queries" => self.train.episode.queries = parse(key, v)?,
            "h_gen" => self.train.episode.h_gen = parse(key, v)?,
            "schedule" => self.schedule.kind = v.parse()?,
            "unit_epochs" => self.schedule.unit_epochs = parse(key, v)?,
            "gamma" => self.schedule.gamma = parse_list(key, v)?,
            "at_decay" => self.schedule.at_decay = parse(key, v)?,
            "meta_fraction" => self.schedule.meta_fraction = parse(key, v)?,
            "epochs" => self.schedule.total_epochs = parse(key, v)?,
            "lr_aux" => self.train.lr_aux = parse(key, v)?,
            "lr_meta" => self.train.lr_meta = parse(key, v)?,
            "momentum" => self.train.momentum = parse(key, v)?,
            "lr_milestones" => self.train.lr_milestones = parse_list(key, v)?,
            "lr_decay" => self.train.lr_decay = parse(key, v)?,
            "batch_size" => self.train.batch_size = parse(key, v)?,
            "aux_steps" => self.train.aux_steps = parse(key, v)?,
            "meta_episodes" => self.train.meta_episodes = parse(key, v)?,
            "eval_every" => self.train.eval_every = parse(key, v)?,
            "val_episodes" => self.train.val_episodes = parse(key, v)?,
            "max_skip_fraction" => self.train.max_skip_fraction = parse(key, v)?,
            "hidden" => self.model.hidden = parse_list(key, v)?,
            "feature_dim" => self.model.feature_dim = parse(key, v)?,
            "latent_dim" => self.model.latent_dim = parse(key, v)?,
            "dropout" => self.model.dropout = parse(key, v)?,
            "leaky_slope" => self.model.leaky_slope = parse(key, v)?,
            "alpha_init" => self.model.alpha_init = parse(key, v)?,
            "normalize_aux" => self.model.normalize_aux_weights = parse(key, v)?,
            "episodes" => self.eval_episodes = parse(key, v)?,
            "eval_seed" => self.eval_seed = parse(key, v)?,
            "workers" => self.workers = parse(key, v)?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let s = |v: &dyn ToString| Some(v.to_string());
        match key {
            "seed" => s(&self.seed),
            "data" => Some(
                self.data_path
                    .as_ref()
                    .map_or_else(|| "synthetic".to_string(), |p| p.display().to_string()),
            ),
            "data_seed" => s(&self.synthetic.seed),
            "synthetic.classes" => s(&self.synthetic.class_count),
            "synthetic.dim" => s(&self.synthetic.dim),
            "synthetic.samples" => s(&self.synthetic.samples_per_class),
            "synthetic.variation_dims" => s(&self.synthetic.variation_dims),
            "synthetic.variation_scale" => s(&self.synthetic.variation_scale),
            "synthetic.noise_scale" => s(&self.synthetic.noise_scale),
            "split.train" => s(&self.split.train),
            "split.val" => s(&self.split.val),
            "split.test" => s(&self.split.test),
            "split.merge_val" => s(&self.split.merge_val),
            "n_way" => s(&self.train.episode.n_way),
            "k_shot" => s(&self.train.episode.k_shot),
            "queries" => s(&self.train.episode.queries),
            "h_gen" => s(&self.train.episode.h_gen),
            "schedule" => s(&self.schedule.kind),
            "unit_epochs" => s(&self.schedule.unit_epochs),
            "gamma" => Some(join(&self.schedule.gamma)),
            "at_decay" => s(&self.schedule.at_decay),
            "meta_fraction" => s(&self.schedule.meta_fraction),
            "epochs" => s(&self.schedule.total_epochs),
            "lr_aux" => s(&self.train.lr_aux),
            "lr_meta" => s(&self.train.lr_meta),
            "momentum" => s(&self.train.momentum),
            "lr_milestones" => Some(join(&self.train.lr_milestones)),
            "lr_decay" => s(&self.train.lr_decay),
            "batch_size" => s(&self.train.batch_size),
            "aux_steps" => s(&self.train.aux_steps),
            "meta_episodes" => s(&self.train.meta_episodes),
            "eval_every" => s(&self.train.eval_every),
            "val_episodes" => s(&self.train.val_episodes),
            "max_skip_fraction" => s(&self.train.max_skip_fraction),
            "hidden" => Some(join(&self.model.hidden)),
            "feature_dim" => s(&self.model.feature_dim),
            "latent_dim" => s(&self.model.latent_dim),
            "dropout" => s(&self.model.dropout),
            "leaky_slope" => s(&self.model.leaky_slope),
            "alpha_init" => s(&self.model.alpha_init),
            "normalize_aux" => s(&self.model.normalize_aux_weights),
            "episodes" => s(&self.eval_episodes),
            "eval_seed" => s(&self.eval_seed),
            "workers" => s(&self.workers),
            _ => None,
        }
    }

    /// Applies `key=value` lines on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got {line:?}", n + 1)))?;
            self.set(k.trim(), v)
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    /// Every key, one per line; parsing the result yields `self` again.
    pub fn to_text(&self) -> String {
        KEYS.iter()
            .map(|(k, _)| format!("{k}={}\n", self.get(k).unwrap_or_default()))
            .collect()
    }

    /// The schedule specification with the run seed applied.
    pub fn schedule_spec(&self) -> ScheduleSpec {
        ScheduleSpec {
            seed: self.seed,
            ..self.schedule.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.episode.validate()?;
        match &self.data_path {
            Some(p) if !p.is_file() => {
                return Err(Error::Config(format!("dataset {} not found", p.display())));
            }
            Some(_) => {}
            None => self.synthetic.validate()?,
        }
        if self.eval_episodes == 0 {
            return Err(Error::Config("episodes must be >= 1".into()));
        }
        if self.train.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.model.dropout) {
            return Err(Error::Config(format!("dropout {} not in [0, 1)", self.model.dropout)));
        }
        if self.schedule.kind == ScheduleKind::Oat && self.schedule.gamma.is_empty() {
            return Err(Error::Config("gamma must list at least one unit".into()));
        }
        Ok(())
    }
}
