//! Labeled datasets with disjoint class splits, and N-way K-shot episode
//! sampling.
//!
//! Reference pairs are always drawn from the train split, including when
//! the episode itself is built from test classes.

use std::collections::HashMap;

use rand::seq::index;

use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Which split an episode's classes are drawn from.
pub type Phase = Split;

#[derive(Debug, Clone, PartialEq)]
pub struct Item {
    pub input: Vec<f64>,
    pub class: usize,
}

/// Immutable labeled collection of fixed-width input vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    labels: Vec<String>,
    items: Vec<Item>,
    class_index: Vec<Vec<usize>>,
    split: Vec<Option<Split>>,
}

impl Dataset {
    /// Builds an unsplit dataset. Class ids are assigned in order of first
    /// appearance.
    pub fn from_labeled(dim: usize, rows: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let mut labels = Vec::new();
        let mut lookup: HashMap<String, usize> = HashMap::new();
        let mut items = Vec::with_capacity(rows.len());
        for (i, (label, input)) in rows.into_iter().enumerate() {
            if input.len() != dim {
                return Err(Error::Data(format!("item {i} has {} values, expected {dim}", input.len())));
            }
            if input.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!("item {i} has a non-finite value")));
            }
            let class = *lookup.entry(label.clone()).or_insert_with(|| {
                labels.push(label);
                labels.len() - 1
            });
            items.push(Item { input, class });
        }
        let mut class_index = vec![Vec::new(); labels.len()];
        for (i, item) in items.iter().enumerate() {
            class_index[item.class].push(i);
        }
        Ok(Self {
            dim,
            split: vec![None; labels.len()],
            labels,
            items,
            class_index,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn item(&self, i: usize) -> &Item {
        &self.items[i]
    }

    pub fn class_count(&self) -> usize {
        self.labels.len()
    }

    pub fn label(&self, class: usize) -> &str {
        &self.labels[class]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn class_id(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn class_items(&self, class: usize) -> &[usize] {
        &self.class_index[class]
    }

    pub fn split_of(&self, class: usize) -> Option<Split> {
        self.split[class]
    }

    /// Class ids assigned to `split`, ascending.
    pub fn classes_in(&self, split: Split) -> Vec<usize> {
        (0..self.labels.len()).filter(|&c| self.split[c] == Some(split)).collect()
    }

    /// Stacks the inputs of `indices` into a `len × dim` tensor.
    pub fn gather(&self, indices: impl IntoIterator<Item = usize>) -> Tensor {
        let mut values = Vec::new();
        let mut rows = 0;
        for i in indices {
            values.extend_from_slice(&self.items[i].input);
            rows += 1;
        }
        Tensor::matrix(rows, self.dim, values).expect("items share the dataset width")
    }

    /// Map from train class id to auxiliary label in `[0, N′)`.
    pub fn train_label_map(&self) -> HashMap<usize, usize> {
        self.classes_in(Split::Train)
            .into_iter()
            .enumerate()
            .map(|(label, class)| (class, label))
            .collect()
    }
}

/// Assigns disjoint train/val/test class sets. With `merge_val`, the
/// validation classes are folded into train.
pub fn split_dataset(
    raw: &Dataset,
    train: &[&str],
    val: &[&str],
    test: &[&str],
    merge_val: bool,
) -> Result<Dataset> {
    let mut ds = raw.clone();
    ds.split = vec![None; ds.labels.len()];
    let val_split = if merge_val { Split::Train } else { Split::Val };
    for (names, split) in [(train, Split::Train), (val, val_split), (test, Split::Test)] {
        for name in names {
            let class = raw
                .class_id(name)
                .ok_or_else(|| Error::Config(format!("class {name:?} is not in the dataset")))?;
            if ds.split[class].is_some() {
                return Err(Error::Config(format!("class {name:?} is assigned to more than one split")));
            }
            ds.split[class] = Some(split);
        }
    }
    Ok(ds)
}

/// Splits classes by position: the first `train` classes, then `val`, then
/// `test`.
pub fn split_by_counts(raw: &Dataset, train: usize, val: usize, test: usize, merge_val: bool) -> Result<Dataset> {
    if train + val + test > raw.class_count() {
        return Err(Error::Config(format!(
            "split {train}/{val}/{test} needs {} classes, dataset has {}",
            train + val + test,
            raw.class_count()
        )));
    }
    let names: Vec<&str> = raw.labels.iter().map(String::as_str).collect();
    split_dataset(
        raw,
        &names[..train],
        &names[train..train + val],
        &names[train + val..train + val + test],
        merge_val,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpisodeConfig {
    pub n_way: usize,
    pub k_shot: usize,
    /// Queries per class.
    pub queries: usize,
    /// Reference pairs per episode.
    pub h_gen: usize,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            n_way: 5,
            k_shot: 1,
            queries: 15,
            h_gen: 64,
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_way < 2 {
            return Err(Error::Config(format!("n_way must be >= 2, got {}", self.n_way)));
        }
        if self.k_shot < 1 || self.queries < 1 {
            return Err(Error::Config("k_shot and queries must be >= 1".into()));
        }
        Ok(())
    }
}

/// One N-way K-shot task. Entries are `(dataset item index, episode class)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Episode {
    /// Class-major: support `n·K + k`.
    pub support: Vec<(usize, usize)>,
    /// Class-major: query `n·Q + q`.
    pub query: Vec<(usize, usize)>,
    pub references: Vec<(usize, usize)>,
    /// Dataset class id of each episode class.
    pub classes: Vec<usize>,
}

impl Episode {
    pub fn support_inputs(&self, ds: &Dataset) -> Tensor {
        ds.gather(self.support.iter().map(|s| s.0))
    }

    pub fn query_inputs(&self, ds: &Dataset) -> Tensor {
        ds.gather(self.query.iter().map(|q| q.0))
    }

    pub fn reference_inputs(&self, ds: &Dataset) -> (Tensor, Tensor) {
        (
            ds.gather(self.references.iter().map(|r| r.0)),
            ds.gather(self.references.iter().map(|r| r.1)),
        )
    }

    pub fn query_labels(&self) -> Vec<usize> {
        self.query.iter().map(|q| q.1).collect()
    }
}

pub fn sample_episode(ds: &Dataset, cfg: &EpisodeConfig, phase: Phase, rng: &mut SeededRng) -> Result<Episode> {
    cfg.validate()?;
    let pool = ds.classes_in(phase);
    if pool.len() < cfg.n_way {
        return Err(Error::Sampling(format!(
            "{phase:?} split has {} classes, episode needs {}",
            pool.len(),
            cfg.n_way
        )));
    }
    let per_class = cfg.k_shot + cfg.queries;
    let chosen: Vec<usize> = index::sample(rng.inner_mut(), pool.len(), cfg.n_way)
        .into_iter()
        .map(|i| pool[i])
        .collect();

    let mut support = Vec::with_capacity(cfg.n_way * cfg.k_shot);
    let mut query = Vec::with_capacity(cfg.n_way * cfg.queries);
    for (episode_class, &class) in chosen.iter().enumerate() {
        let members = ds.class_items(class);
        if members.len() < per_class {
            return Err(Error::Sampling(format!(
                "class {:?} has {} items, episode needs {per_class}",
                ds.label(class),
                members.len()
            )));
        }
        let picks = index::sample(rng.inner_mut(), members.len(), per_class);
        for (j, p) in picks.into_iter().enumerate() {
            let entry = (members[p], episode_class);
            if j < cfg.k_shot {
                support.push(entry);
            } else {
                query.push(entry);
            }
        }
    }
    let references = sample_references(ds, cfg.h_gen, rng)?;
    for &(a, b) in &references {
        assert!(
            ds.split_of(ds.item(a).class) == Some(Split::Train) && ds.split_of(ds.item(b).class) == Some(Split::Train),
            "reference item outside the train split"
        );
    }
    Ok(Episode {
        support,
        query,
        references,
        classes: chosen,
    })
}

/// `count` pairs of distinct same-class train items; classes are drawn
/// uniformly with replacement.
pub fn sample_references(ds: &Dataset, count: usize, rng: &mut SeededRng) -> Result<Vec<(usize, usize)>> {
    if count == 0 {
        return Ok(Vec::new());
    }
    let train = ds.classes_in(Split::Train);
    if train.is_empty() {
        return Err(Error::Sampling("no train classes to draw reference pairs from".into()));
    }
    (0..count)
        .map(|_| {
            let class = train[rng.below(train.len())];
            let members = ds.class_items(class);
            if members.len() < 2 {
                return Err(Error::Sampling(format!(
                    "reference class {:?} has {} items, needs 2",
                    ds.label(class),
                    members.len()
                )));
            }
            let pair = index::sample(rng.inner_mut(), members.len(), 2);
            Ok((members[pair.index(0)], members[pair.index(1)]))
        })
        .collect()
}

/// `batch` train items drawn uniformly with replacement, labeled in `[0, N′)`.
pub fn sample_aux_batch(ds: &Dataset, batch: usize, rng: &mut SeededRng) -> Result<(Tensor, Vec<usize>)> {
    if batch == 0 {
        return Err(Error::Config("auxiliary batch size must be >= 1".into()));
    }
    let train_items: Vec<usize> = ds
        .classes_in(Split::Train)
        .into_iter()
        .flat_map(|c| ds.class_items(c).iter().copied())
        .collect();
    if train_items.is_empty() {
        return Err(Error::Config("train split is empty".into()));
    }
    let map = ds.train_label_map();
    let picks: Vec<usize> = (0..batch).map(|_| train_items[rng.below(train_items.len())]).collect();
    let labels = picks.iter().map(|&i| map[&ds.item(i).class]).collect();
    Ok((ds.gather(picks), labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(classes: usize, per_class: usize) -> Dataset {
        let rows = (0..classes)
            .flat_map(|c| (0..per_class).map(move |i| (format!("c{c:02}"), vec![c as f64, i as f64])))
            .collect();
        Dataset::from_labeled(2, rows).unwrap()
    }

    #[test]
    fn split_is_disjoint_and_merges() {
        let raw = toy(20, 3);
        let ds = split_by_counts(&raw, 12, 4, 4, false).unwrap();
        let (tr, va, te) = (ds.classes_in(Split::Train), ds.classes_in(Split::Val), ds.classes_in(Split::Test));
        assert_eq!((tr.len(), va.len(), te.len()), (12, 4, 4));
        assert!(tr.iter().all(|c| !va.contains(c) && !te.contains(c)));
        assert!(va.iter().all(|c| !te.contains(c)));
        let merged = split_by_counts(&raw, 12, 4, 4, true).unwrap();
        assert_eq!(merged.classes_in(Split::Train).len(), 16);
        assert!(merged.classes_in(Split::Val).is_empty());
    }

    #[test]
    fn overlapping_split_is_rejected() {
        let raw = toy(3, 2);
        assert!(matches!(split_dataset(&raw, &["c00"], &["c00"], &[], false), Err(Error::Config(_))));
        assert!(matches!(split_dataset(&raw, &["zz"], &[], &[], false), Err(Error::Config(_))));
    }

    #[test]
    fn episode_counts_and_layout() {
        let ds = split_by_counts(&toy(20, 20), 12, 4, 4, false).unwrap();
        let cfg = EpisodeConfig { n_way: 4, k_shot: 1, queries: 15, h_gen: 3 };
        let ep = sample_episode(&ds, &cfg, Split::Test, &mut SeededRng::new(1)).unwrap();
        assert_eq!((ep.support.len(), ep.query.len(), ep.references.len()), (4, 60, 3));
        for (i, &(_, c)) in ep.query.iter().enumerate() {
            assert_eq!(c, i / 15);
        }
        for (i, &(item, c)) in ep.support.iter().enumerate() {
            assert_eq!(c, i);
            assert_eq!(ds.item(item).class, ep.classes[c]);
        }
    }

    #[test]
    fn five_way_episode_counts() {
        let ds = split_by_counts(&toy(20, 20), 12, 0, 8, false).unwrap();
        let cfg = EpisodeConfig { n_way: 5, k_shot: 1, queries: 15, h_gen: 3 };
        let ep = sample_episode(&ds, &cfg, Split::Test, &mut SeededRng::new(2)).unwrap();
        assert_eq!((ep.support.len(), ep.query.len(), ep.references.len()), (5, 75, 3));
    }

    #[test]
    fn references_come_from_train_even_in_test_phase() {
        let ds = split_by_counts(&toy(20, 20), 12, 4, 4, false).unwrap();
        let cfg = EpisodeConfig { n_way: 4, k_shot: 2, queries: 3, h_gen: 16 };
        let mut rng = SeededRng::new(3);
        for _ in 0..200 {
            let ep = sample_episode(&ds, &cfg, Split::Test, &mut rng).unwrap();
            for &(a, b) in &ep.references {
                assert_ne!(a, b);
                assert_eq!(ds.item(a).class, ds.item(b).class);
                assert_eq!(ds.split_of(ds.item(a).class), Some(Split::Train));
            }
            let sup: Vec<usize> = ep.support.iter().map(|s| s.0).collect();
            assert!(ep.query.iter().all(|q| !sup.contains(&q.0)));
        }
    }

    #[test]
    fn same_seed_same_episode() {
        let ds = split_by_counts(&toy(20, 20), 12, 4, 4, false).unwrap();
        let cfg = EpisodeConfig::default();
        let a = sample_episode(&ds, &EpisodeConfig { n_way: 4, ..cfg }, Split::Train, &mut SeededRng::new(9)).unwrap();
        let b = sample_episode(&ds, &EpisodeConfig { n_way: 4, ..cfg }, Split::Train, &mut SeededRng::new(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn small_classes_are_reported() {
        let ds = split_by_counts(&toy(10, 4), 5, 0, 5, false).unwrap();
        let cfg = EpisodeConfig { n_way: 5, k_shot: 1, queries: 15, h_gen: 0 };
        match sample_episode(&ds, &cfg, Split::Test, &mut SeededRng::new(1)) {
            Err(Error::Sampling(msg)) => assert!(msg.contains("c0"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
        let tiny = split_by_counts(&toy(4, 1), 2, 0, 2, false).unwrap();
        assert!(sample_references(&tiny, 1, &mut SeededRng::new(1)).is_err());
    }

    #[test]
    fn aux_batch_labels_are_reindexed() {
        let ds = split_by_counts(&toy(20, 5), 12, 4, 4, false).unwrap();
        let (x, labels) = sample_aux_batch(&ds, 4, &mut SeededRng::new(5)).unwrap();
        assert_eq!(x.shape(), &[4, 2]);
        assert!(labels.iter().all(|&l| l < 12));
        let map = ds.train_label_map();
        let mut seen: Vec<usize> = map.values().copied().collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..12).collect::<Vec<_>>());
        let (x2, labels2) = sample_aux_batch(&ds, 4, &mut SeededRng::new(5)).unwrap();
        assert_eq!((x, labels), (x2, labels2));
        let none = split_by_counts(&toy(4, 2), 0, 0, 4, false).unwrap();
        assert!(matches!(sample_aux_batch(&none, 4, &mut SeededRng::new(0)), Err(Error::Config(_))));
    }
}
