//! Training loops and few-shot evaluation.
//!
//! Auxiliary epochs train the extractor and the auxiliary head on plain
//! classification over all seen classes. Meta epochs train the extractor,
//! the generator, and the meta temperature on sampled episodes. Neither kind
//! touches the other's private parameters.

use std::collections::BTreeMap;

use crate::diffcore::{Graph, Tensor, Var};
use crate::episodes::{sample_aux_batch, sample_episode, Dataset, Episode, EpisodeConfig, Phase, Split};
use crate::error::{Error, Result};
use crate::extractor::{ExtractorParams, ExtractorVars};
use crate::generator::{GeneratorParams, GeneratorVars};
use crate::layers::{Bindings, Layer};
use crate::metaclassifier::{
    argmax_rows, build_proxies, meta_loss, score_query, AuxiliaryHead, MetaTemperature, DEFAULT_TEMPERATURE,
};
use crate::rng::{SeededRng, Stream};
use crate::schedule::{EpochKind, Schedule};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub feature_dim: usize,
    pub latent_dim: usize,
    pub dropout: f64,
    pub leaky_slope: f64,
    pub alpha_init: f64,
    pub normalize_aux_weights: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_dim: 16,
            hidden: vec![128, 128],
            feature_dim: 64,
            latent_dim: 128,
            dropout: 0.3,
            leaky_slope: 0.2,
            alpha_init: DEFAULT_TEMPERATURE,
            normalize_aux_weights: true,
        }
    }
}

/// Every trainable parameter of the network.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub extractor: ExtractorParams,
    pub generator: GeneratorParams,
    pub aux_head: AuxiliaryHead,
    pub meta_alpha: MetaTemperature,
    pub step_count: u64,
}

impl ModelState {
    pub fn init(cfg: &ModelConfig, aux_classes: usize, rng: &mut SeededRng) -> Result<Self> {
        if aux_classes == 0 {
            return Err(Error::Config("auxiliary head needs at least one seen class".into()));
        }
        let extractor = ExtractorParams::new(cfg.input_dim, &cfg.hidden, cfg.feature_dim, cfg.leaky_slope, rng)?;
        let generator = GeneratorParams::new(cfg.feature_dim, cfg.latent_dim, cfg.dropout, cfg.leaky_slope, rng)?;
        let aux_head = AuxiliaryHead::new(aux_classes, cfg.feature_dim, cfg.alpha_init, cfg.normalize_aux_weights, rng);
        Ok(Self {
            extractor,
            generator,
            aux_head,
            meta_alpha: MetaTemperature::new(cfg.alpha_init),
            step_count: 0,
        })
    }

    /// Parameters in a fixed order under their checkpoint names.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.extractor.layers.iter().enumerate() {
            out.push((format!("extractor.{i}.weight"), &l.weight));
            out.push((format!("extractor.{i}.bias"), &l.bias));
        }
        out.push(("generator.phi1.weight".into(), &self.generator.phi1.weight));
        out.push(("generator.phi1.bias".into(), &self.generator.phi1.bias));
        out.push(("generator.phi2.weight".into(), &self.generator.phi2.weight));
        out.push(("generator.phi2.bias".into(), &self.generator.phi2.bias));
        out.push(("aux.weight".into(), &self.aux_head.weights));
        out.push(("aux.alpha".into(), &self.aux_head.alpha));
        out.push(("meta.alpha".into(), &self.meta_alpha.alpha));
        out
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let (head, rest) = name.split_once('.')?;
        match (head, rest) {
            ("extractor", rest) => {
                let (idx, field) = rest.split_once('.')?;
                let layer = self.extractor.layers.get_mut(idx.parse::<usize>().ok()?)?;
                layer_field(layer, field)
            }
            ("generator", rest) => {
                let (which, field) = rest.split_once('.')?;
                match which {
                    "phi1" => layer_field(&mut self.generator.phi1, field),
                    "phi2" => layer_field(&mut self.generator.phi2, field),
                    _ => None,
                }
            }
            ("aux", "weight") => Some(&mut self.aux_head.weights),
            ("aux", "alpha") => Some(&mut self.aux_head.alpha),
            ("meta", "alpha") => Some(&mut self.meta_alpha.alpha),
            _ => None,
        }
    }

    /// Rebuilds a model from named arrays, inferring the architecture from
    /// the extractor layers present.
    pub fn from_named(
        mut tensors: BTreeMap<String, Tensor>,
        dropout: f64,
        leaky_slope: f64,
        normalize_aux_weights: bool,
        step_count: u64,
    ) -> Result<Self> {
        let mut take = |name: &str| {
            tensors
                .remove(name)
                .map(Tensor::trainable)
                .ok_or_else(|| Error::Corrupt(format!("missing parameter {name}")))
        };
        let mut layers = Vec::new();
        let mut i = 0;
        while let Ok(weight) = take(&format!("extractor.{i}.weight")) {
            layers.push(Layer {
                weight,
                bias: take(&format!("extractor.{i}.bias"))?,
            });
            i += 1;
        }
        if layers.is_empty() {
            return Err(Error::Corrupt("missing parameter extractor.0.weight".into()));
        }
        let extractor = ExtractorParams::from_layers(layers, leaky_slope)?;
        let phi1 = Layer {
            weight: take("generator.phi1.weight")?,
            bias: take("generator.phi1.bias")?,
        };
        let phi2 = Layer {
            weight: take("generator.phi2.weight")?,
            bias: take("generator.phi2.bias")?,
        };
        let generator = GeneratorParams::from_layers(phi1, phi2, dropout, leaky_slope)?;
        let aux_head = AuxiliaryHead {
            weights: take("aux.weight")?,
            alpha: take("aux.alpha")?,
            normalize_rows: normalize_aux_weights,
        };
        let meta_alpha = MetaTemperature {
            alpha: take("meta.alpha")?,
        };
        if let Some(extra) = tensors.keys().next() {
            return Err(Error::Corrupt(format!("unexpected parameter {extra}")));
        }
        Ok(Self {
            extractor,
            generator,
            aux_head,
            meta_alpha,
            step_count,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.named_tensors().iter().all(|(_, t)| t.is_finite())
    }
}

fn layer_field<'a>(layer: &'a mut Layer, field: &str) -> Option<&'a mut Tensor> {
    match field {
        "weight" => Some(&mut layer.weight),
        "bias" => Some(&mut layer.bias),
        _ => None,
    }
}

/// SGD with heavy-ball momentum: `v ← μ·v + g`, `p ← p − lr·v`.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub momentum: f64,
    pub velocity: BTreeMap<String, Vec<f64>>,
}

impl OptimizerState {
    pub fn new(momentum: f64) -> Self {
        Self {
            momentum,
            velocity: BTreeMap::new(),
        }
    }

    pub fn step(&mut self, name: &str, param: &mut Tensor, grad: &[f64], lr: f64) {
        let v = self
            .velocity
            .entry(name.to_string())
            .or_insert_with(|| vec![0.0; param.numel()]);
        for ((p, vi), gi) in param.values_mut().iter_mut().zip(v.iter_mut()).zip(grad) {
            *vi = self.momentum * *vi + gi;
            *p -= lr * *vi;
        }
    }

    /// Applies one update to every bound parameter of `model`.
    pub fn apply(&mut self, model: &mut ModelState, g: &Graph, bindings: &Bindings, lr: f64) -> Result<()> {
        for (name, var) in bindings {
            let tensor = model
                .tensor_mut(name)
                .ok_or_else(|| Error::Contract(format!("unknown parameter {name}")))?;
            self.step(name, tensor, g.grad(*var), lr);
        }
        model.step_count += 1;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub episode: EpisodeConfig,
    pub lr_aux: f64,
    pub lr_meta: f64,
    pub momentum: f64,
    /// Epoch indices at which both learning rates are multiplied by
    /// `lr_decay`.
    pub lr_milestones: Vec<usize>,
    pub lr_decay: f64,
    pub batch_size: usize,
    pub aux_steps: usize,
    pub meta_episodes: usize,
    /// Validate every this many epochs; 0 disables.
    pub eval_every: usize,
    pub val_episodes: usize,
    pub max_skip_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episode: EpisodeConfig::default(),
            lr_aux: 0.05,
            lr_meta: 0.01,
            momentum: 0.9,
            lr_milestones: vec![20, 25],
            lr_decay: 0.5,
            batch_size: 64,
            aux_steps: 200,
            meta_episodes: 200,
            eval_every: 0,
            val_episodes: 100,
            max_skip_fraction: 0.01,
        }
    }
}

impl TrainConfig {
    pub fn learning_rate(&self, kind: EpochKind, epoch: usize) -> f64 {
        let base = match kind {
            EpochKind::Auxiliary => self.lr_aux,
            EpochKind::Meta => self.lr_meta,
        };
        let passed = self.lr_milestones.iter().filter(|&&m| epoch >= m).count();
        base * self.lr_decay.powi(passed as i32)
    }
}

fn check_step(model: &ModelState, loss: f64, lr: f64) -> Result<()> {
    if !loss.is_finite() {
        return Err(Error::Aborted {
            step: model.step_count,
            lr,
            reason: format!("non-finite loss {loss}"),
        });
    }
    Ok(())
}

fn check_params(model: &ModelState, lr: f64) -> Result<()> {
    if !model.is_finite() {
        return Err(Error::Aborted {
            step: model.step_count,
            lr,
            reason: "non-finite parameter after update".into(),
        });
    }
    Ok(())
}

/// Runs `steps` auxiliary minibatch updates. Returns the mean loss, or
/// `None` when `steps` is 0.
pub fn run_auxiliary_epoch(
    model: &mut ModelState,
    opt: &mut OptimizerState,
    ds: &Dataset,
    batch_size: usize,
    steps: usize,
    lr: f64,
    rng: &mut SeededRng,
) -> Result<Option<f64>> {
    check_params(model, lr)?;
    let mut total = 0.0;
    for _ in 0..steps {
        let (x, labels) = sample_aux_batch(ds, batch_size, rng)?;
        let mut g = Graph::new();
        let mut bindings = Bindings::new();
        let ev = model.extractor.bind(&mut g, Some(&mut bindings));
        let hv = model.aux_head.bind(&mut g, Some(&mut bindings));
        let xv = g.input(&x);
        let z = model.extractor.forward(&mut g, &ev, xv, true)?;
        let loss = model.aux_head.loss(&mut g, hv, z, &labels)?;
        let value = g.value(loss)[0];
        check_step(model, value, lr)?;
        g.backward(loss)?;
        opt.apply(model, &g, &bindings, lr)?;
        check_params(model, lr)?;
        total += value;
    }
    Ok((steps > 0).then(|| total / steps as f64))
}

/// Bound handles for one episode forward pass.
struct EpisodeVars {
    extractor: ExtractorVars,
    generator: GeneratorVars,
    alpha: Var,
}

/// Features, generated features and proxy scores of one episode.
pub struct EpisodeForward {
    pub support: Var,
    pub query: Var,
    pub generated: Var,
    pub scores: Var,
}

fn episode_forward(
    g: &mut Graph,
    model: &ModelState,
    vars: &EpisodeVars,
    ds: &Dataset,
    ep: &Episode,
    cfg: &EpisodeConfig,
    training: bool,
    dropout_rng: &mut SeededRng,
) -> Result<EpisodeForward> {
    let support_x = g.input(&ep.support_inputs(ds));
    let query_x = g.input(&ep.query_inputs(ds));
    let support = model.extractor.forward(g, &vars.extractor, support_x, training)?;
    let query = model.extractor.forward(g, &vars.extractor, query_x, training)?;
    let generated = if ep.references.is_empty() {
        g.leaf(vec![0, model.extractor.feature_dim()], Vec::new(), false)?
    } else {
        let (r1, r2) = ep.reference_inputs(ds);
        let (r1, r2) = (g.input(&r1), g.input(&r2));
        let z1 = model.extractor.forward(g, &vars.extractor, r1, training)?;
        let z2 = model.extractor.forward(g, &vars.extractor, r2, training)?;
        model
            .generator
            .generate_batch(g, &vars.generator, support, (z1, z2), training, dropout_rng)?
    };
    let proxies = build_proxies(g, support, generated, cfg.n_way, cfg.k_shot, ep.references.len())?;
    let scores = score_query(g, query, &proxies)?;
    Ok(EpisodeForward {
        support,
        query,
        generated,
        scores,
    })
}

/// Eval-mode forward pass of one episode on a detached graph.
pub fn forward_episode_eval(
    model: &ModelState,
    ds: &Dataset,
    ep: &Episode,
    cfg: &EpisodeConfig,
) -> Result<(Graph, EpisodeForward)> {
    let mut g = Graph::new();
    let vars = EpisodeVars {
        extractor: model.extractor.bind(&mut g, None),
        generator: model.generator.bind(&mut g, None),
        alpha: model.meta_alpha.bind(&mut g, None),
    };
    let mut unused = SeededRng::new(0);
    let fwd = episode_forward(&mut g, model, &vars, ds, ep, cfg, false, &mut unused)?;
    Ok((g, fwd))
}

/// Meta loss of one episode with gradients for the extractor, generator
/// (when the episode has reference pairs) and meta temperature.
pub fn meta_episode_graph(
    model: &ModelState,
    ds: &Dataset,
    ep: &Episode,
    cfg: &EpisodeConfig,
    training: bool,
    dropout_rng: &mut SeededRng,
) -> Result<(Graph, Bindings, Var)> {
    let mut g = Graph::new();
    let mut bindings = Bindings::new();
    let extractor = model.extractor.bind(&mut g, Some(&mut bindings));
    let generator = if ep.references.is_empty() {
        model.generator.bind(&mut g, None)
    } else {
        model.generator.bind(&mut g, Some(&mut bindings))
    };
    let alpha = model.meta_alpha.bind(&mut g, Some(&mut bindings));
    let vars = EpisodeVars {
        extractor,
        generator,
        alpha,
    };
    let fwd = episode_forward(&mut g, model, &vars, ds, ep, cfg, training, dropout_rng)?;
    let loss = meta_loss(&mut g, fwd.scores, vars.alpha, &ep.query_labels())?;
    Ok((g, bindings, loss))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetaEpochStats {
    pub mean_loss: Option<f64>,
    pub skipped: usize,
}

#[allow(clippy::too_many_arguments)]
pub fn run_meta_epoch(
    model: &mut ModelState,
    opt: &mut OptimizerState,
    ds: &Dataset,
    cfg: &EpisodeConfig,
    episodes: usize,
    lr: f64,
    max_skip_fraction: f64,
    episode_rng: &mut SeededRng,
    dropout_rng: &mut SeededRng,
) -> Result<MetaEpochStats> {
    check_params(model, lr)?;
    let mut total = 0.0;
    let mut used = 0usize;
    let mut skipped = 0usize;
    for _ in 0..episodes {
        let ep = sample_episode(ds, cfg, Split::Train, episode_rng)?;
        let (mut g, bindings, loss) = match meta_episode_graph(model, ds, &ep, cfg, true, dropout_rng) {
            Ok(built) => built,
            // A dropout mask can zero a whole generated row; such episodes
            // are skipped like degenerate proxies.
            Err(Error::DegenerateProxy { .. } | Error::DegenerateInput { .. }) => {
                skipped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let value = g.value(loss)[0];
        check_step(model, value, lr)?;
        g.backward(loss)?;
        opt.apply(model, &g, &bindings, lr)?;
        check_params(model, lr)?;
        total += value;
        used += 1;
    }
    if skipped as f64 > max_skip_fraction * episodes as f64 {
        return Err(Error::Aborted {
            step: model.step_count,
            lr,
            reason: format!("{skipped} of {episodes} episodes were degenerate"),
        });
    }
    Ok(MetaEpochStats {
        mean_loss: (used > 0).then(|| total / used as f64),
        skipped,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub mean_accuracy: f64,
    /// `1.96 · s / √E` with the sample standard deviation; undefined for a
    /// single episode.
    pub ci95: Option<f64>,
    pub episode_count: usize,
    pub per_episode: Vec<f64>,
}

impl EvalReport {
    pub fn from_accuracies(per_episode: Vec<f64>) -> Self {
        let n = per_episode.len();
        let mean = per_episode.iter().sum::<f64>() / n.max(1) as f64;
        let ci95 = (n >= 2).then(|| {
            let var = per_episode.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            1.96 * var.sqrt() / (n as f64).sqrt()
        });
        Self {
            mean_accuracy: mean,
            ci95,
            episode_count: n,
            per_episode,
        }
    }
}

/// Accuracy of one eval-mode episode.
pub fn episode_accuracy(model: &ModelState, ds: &Dataset, ep: &Episode, cfg: &EpisodeConfig) -> Result<f64> {
    let (g, fwd) = forward_episode_eval(model, ds, ep, cfg)?;
    let predicted = argmax_rows(&g, fwd.scores);
    let correct = predicted
        .iter()
        .zip(ep.query_labels())
        .filter(|(p, l)| **p == *l)
        .count();
    Ok(correct as f64 / ep.query.len() as f64)
}

/// Few-shot accuracy over `episodes` sampled from `phase`. Episode `i`
/// always uses the same derived generator, so the report does not depend on
/// `workers`.
pub fn evaluate(
    model: &ModelState,
    ds: &Dataset,
    cfg: &EpisodeConfig,
    phase: Phase,
    episodes: usize,
    seed: u64,
    workers: usize,
) -> Result<EvalReport> {
    if episodes == 0 {
        return Err(Error::Config("evaluation needs at least one episode".into()));
    }
    let root = SeededRng::stream(seed, Stream::Eval);
    let run = |i: usize| -> Result<f64> {
        let mut rng = root.child(i as u64);
        let ep = sample_episode(ds, cfg, phase, &mut rng)?;
        episode_accuracy(model, ds, &ep, cfg)
    };
    let workers = workers.clamp(1, episodes);
    let accuracies: Vec<f64> = if workers == 1 {
        (0..episodes).map(run).collect::<Result<_>>()?
    } else {
        let chunk = episodes.div_ceil(workers);
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..workers)
                .map(|w| {
                    let run = &run;
                    s.spawn(move || (w * chunk..((w + 1) * chunk).min(episodes)).map(run).collect::<Result<Vec<f64>>>())
                })
                .collect();
            let mut all = Vec::with_capacity(episodes);
            for h in handles {
                all.extend(h.join().expect("evaluation worker panicked")?);
            }
            Ok::<_, Error>(all)
        })?
    };
    Ok(EvalReport::from_accuracies(accuracies))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch_index: usize,
    pub kind: EpochKind,
    pub mean_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
    pub val_ci95: Option<f64>,
}

pub const METRICS_HEADER: &str = "epoch_index,kind,mean_loss,val_accuracy,val_ci95";

fn opt_field(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Metrics log as CSV; unevaluated fields are empty.
pub fn metrics_csv(log: &[EpochRecord]) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for r in log {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.epoch_index,
            r.kind.symbol(),
            opt_field(r.mean_loss),
            opt_field(r.val_accuracy),
            opt_field(r.val_ci95)
        ));
    }
    out
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<EpochRecord>> {
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(Error::Data("metrics log has an unexpected header".into()));
    }
    let bad = |line: &str| Error::Data(format!("malformed metrics row {line:?}"));
    let opt = |f: &str, line: &str| -> Result<Option<f64>> {
        if f.is_empty() {
            Ok(None)
        } else {
            f.parse().map(Some).map_err(|_| bad(line))
        }
    };
    lines
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(bad(line));
            }
            let kind = match f[1] {
                "A" => EpochKind::Auxiliary,
                "M" => EpochKind::Meta,
                _ => return Err(bad(line)),
            };
            Ok(EpochRecord {
                epoch_index: f[0].parse().map_err(|_| bad(line))?,
                kind,
                mean_loss: opt(f[2], line)?,
                val_accuracy: opt(f[3], line)?,
                val_ci95: opt(f[4], line)?,
            })
        })
        .collect()
}

/// Random streams consumed during training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainerRngs {
    pub episodes: SeededRng,
    pub dropout: SeededRng,
    pub auxiliary: SeededRng,
}

impl TrainerRngs {
    pub fn new(seed: u64) -> Self {
        Self {
            episodes: SeededRng::stream(seed, Stream::Episodes),
            dropout: SeededRng::stream(seed, Stream::Dropout),
            auxiliary: SeededRng::stream(seed, Stream::Auxiliary),
        }
    }
}

/// Resumable training run: model, optimizer, random streams, and progress.
#[derive(Debug, Clone, PartialEq)]
pub struct Trainer {
    pub model: ModelState,
    pub optimizer: OptimizerState,
    pub rngs: TrainerRngs,
    pub seed: u64,
    pub next_epoch: usize,
    pub log: Vec<EpochRecord>,
}

impl Trainer {
    pub fn new(model: ModelState, momentum: f64, seed: u64) -> Self {
        Self {
            model,
            optimizer: OptimizerState::new(momentum),
            rngs: TrainerRngs::new(seed),
            seed,
            next_epoch: 0,
            log: Vec::new(),
        }
    }

    /// Runs one epoch of `kind` at index `epoch`.
    pub fn run_epoch(&mut self, kind: EpochKind, epoch: usize, ds: &Dataset, cfg: &TrainConfig) -> Result<EpochRecord> {
        let lr = cfg.learning_rate(kind, epoch);
        let mean_loss = match kind {
            EpochKind::Auxiliary => run_auxiliary_epoch(
                &mut self.model,
                &mut self.optimizer,
                ds,
                cfg.batch_size,
                cfg.aux_steps,
                lr,
                &mut self.rngs.auxiliary,
            )?,
            EpochKind::Meta => {
                run_meta_epoch(
                    &mut self.model,
                    &mut self.optimizer,
                    ds,
                    &cfg.episode,
                    cfg.meta_episodes,
                    lr,
                    cfg.max_skip_fraction,
                    &mut self.rngs.episodes,
                    &mut self.rngs.dropout,
                )?
                .mean_loss
            }
        };
        let mut record = EpochRecord {
            epoch_index: epoch,
            kind,
            mean_loss,
            val_accuracy: None,
            val_ci95: None,
        };
        if cfg.eval_every > 0 && (epoch + 1).is_multiple_of(cfg.eval_every) && !ds.classes_in(Split::Val).is_empty() {
            let report = evaluate(
                &self.model,
                ds,
                &cfg.episode,
                Split::Val,
                cfg.val_episodes,
                self.seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9),
                1,
            )?;
            record.val_accuracy = Some(report.mean_accuracy);
            record.val_ci95 = report.ci95;
        }
        Ok(record)
    }

    /// Continues `schedule` from `next_epoch`, stopping before epoch
    /// `stop_before` when given.
    pub fn run_schedule(
        &mut self,
        schedule: &Schedule,
        ds: &Dataset,
        cfg: &TrainConfig,
        stop_before: Option<usize>,
    ) -> Result<()> {
        let end = stop_before.map_or(schedule.len(), |s| s.min(schedule.len()));
        while self.next_epoch < end {
            let epoch = self.next_epoch;
            let record = self.run_epoch(schedule.epochs()[epoch], epoch, ds, cfg)?;
            self.log.push(record);
            self.next_epoch += 1;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
