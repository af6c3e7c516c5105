//! Training-epoch sequences.
//!
//! An organized schedule is a list of training units of `T` epochs; unit `i`
//! runs `T - γ_i` auxiliary epochs followed by `γ_i` meta epochs. The
//! stochastic baseline instead draws each epoch's kind from an annealed
//! probability, so its sequence depends on the seed.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::rng::{SeededRng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EpochKind {
    Auxiliary,
    Meta,
}

impl EpochKind {
    pub fn symbol(self) -> char {
        match self {
            EpochKind::Auxiliary => 'A',
            EpochKind::Meta => 'M',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    Oat,
    At,
    Naive,
    TwoStage,
}

impl ScheduleKind {
    pub fn name(self) -> &'static str {
        match self {
            ScheduleKind::Oat => "oat",
            ScheduleKind::At => "at",
            ScheduleKind::Naive => "naive",
            ScheduleKind::TwoStage => "two-stage",
        }
    }
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oat" => Ok(ScheduleKind::Oat),
            "at" => Ok(ScheduleKind::At),
            "naive" => Ok(ScheduleKind::Naive),
            "two-stage" | "two_stage" => Ok(ScheduleKind::TwoStage),
            other => Err(Error::Config(format!("unknown schedule {other:?}"))),
        }
    }
}

/// Epoch sequence as one `A`/`M` character per epoch.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Schedule(pub Vec<EpochKind>);

impl Schedule {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn meta_count(&self) -> usize {
        self.0.iter().filter(|&&k| k == EpochKind::Meta).count()
    }

    pub fn epochs(&self) -> &[EpochKind] {
        &self.0
    }
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.iter().try_for_each(|k| write!(f, "{}", k.symbol()))
    }
}

impl FromStr for Schedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.chars()
            .map(|c| match c {
                'A' => Ok(EpochKind::Auxiliary),
                'M' => Ok(EpochKind::Meta),
                other => Err(Error::Config(format!("invalid epoch symbol {other:?}"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(Schedule)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleSpec {
    pub kind: ScheduleKind,
    /// Epochs per training unit (`T`).
    pub unit_epochs: usize,
    /// Meta epochs per unit (`γ`).
    pub gamma: Vec<usize>,
    pub at_decay: f64,
    /// Expected share of meta epochs under `at`; exact (rounded) share of
    /// trailing meta epochs under `two-stage`.
    pub meta_fraction: f64,
    /// Length of `at`, `naive` and `two-stage` sequences.
    pub total_epochs: usize,
    pub seed: u64,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self {
            kind: ScheduleKind::Oat,
            unit_epochs: 5,
            gamma: vec![0, 0, 1, 1, 2, 2],
            at_decay: 0.9,
            meta_fraction: 0.2,
            total_epochs: 30,
            seed: 0,
        }
    }
}

impl ScheduleSpec {
    pub fn with_kind(kind: ScheduleKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub fn build(&self) -> Result<Schedule> {
        match self.kind {
            ScheduleKind::Oat => build_oat(self.unit_epochs, &self.gamma),
            ScheduleKind::At => build_at(self),
            ScheduleKind::Naive => Ok(build_naive(self.total_epochs)),
            ScheduleKind::TwoStage => {
                check_fraction(self.meta_fraction)?;
                let meta = (self.meta_fraction * self.total_epochs as f64).round() as usize;
                Ok(build_two_stage(self.total_epochs - meta, meta))
            }
        }
    }
}

/// Concatenation over units of `(T - γ_i)` auxiliary then `γ_i` meta epochs.
pub fn build_oat(unit_epochs: usize, gamma: &[usize]) -> Result<Schedule> {
    let mut out = Vec::with_capacity(unit_epochs * gamma.len());
    for (i, &g) in gamma.iter().enumerate() {
        if g > unit_epochs {
            return Err(Error::Config(format!(
                "unit {i} has {g} meta epochs but only {unit_epochs} epochs per unit"
            )));
        }
        out.extend(std::iter::repeat_n(EpochKind::Auxiliary, unit_epochs - g));
        out.extend(std::iter::repeat_n(EpochKind::Meta, g));
    }
    Ok(Schedule(out))
}

/// Probability that epoch `e` of the stochastic schedule is auxiliary.
///
/// The meta probability ramps up as `scale · (1 − decay^(30·e/total))`, with
/// `scale` chosen so the expected meta count is `meta_fraction · total`
/// (capped at 1, where the ramp itself is the law).
pub fn at_aux_probability(epoch: usize, total: usize, decay: f64, meta_fraction: f64) -> f64 {
    let ramp = |e: usize| 1.0 - decay.powf(30.0 * e as f64 / total as f64);
    let mass: f64 = (0..total).map(ramp).sum();
    let scale = if mass > 0.0 {
        (meta_fraction * total as f64 / mass).min(1.0)
    } else {
        0.0
    };
    1.0 - scale * ramp(epoch)
}

fn check_fraction(f: f64) -> Result<()> {
    if (0.0..=1.0).contains(&f) {
        Ok(())
    } else {
        Err(Error::Config(format!("meta fraction {f} not in [0, 1]")))
    }
}

pub fn build_at(spec: &ScheduleSpec) -> Result<Schedule> {
    if spec.total_epochs == 0 {
        return Err(Error::Config("stochastic schedule needs at least one epoch".into()));
    }
    if !(spec.at_decay > 0.0 && spec.at_decay <= 1.0) {
        return Err(Error::Config(format!("decay {} not in (0, 1]", spec.at_decay)));
    }
    check_fraction(spec.meta_fraction)?;
    let mut rng = SeededRng::stream(spec.seed, Stream::Schedule);
    let out = (0..spec.total_epochs)
        .map(|e| {
            let p = at_aux_probability(e, spec.total_epochs, spec.at_decay, spec.meta_fraction);
            if rng.uniform() < p {
                EpochKind::Auxiliary
            } else {
                EpochKind::Meta
            }
        })
        .collect();
    Ok(Schedule(out))
}

pub fn build_naive(total: usize) -> Schedule {
    Schedule(vec![EpochKind::Meta; total])
}

pub fn build_two_stage(aux_epochs: usize, meta_epochs: usize) -> Schedule {
    let mut out = vec![EpochKind::Auxiliary; aux_epochs];
    out.extend(std::iter::repeat_n(EpochKind::Meta, meta_epochs));
    Schedule(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_oat_sequence() {
        let s = ScheduleSpec::default().build().unwrap();
        assert_eq!(s.to_string(), "AAAAAAAAAAAAAAMAAAAMAAAMMAAAMM");
        assert_eq!((s.len(), s.meta_count()), (30, 6));
    }

    #[test]
    fn oat_edge_cases() {
        assert_eq!(build_oat(5, &[0, 0]).unwrap().to_string(), "A".repeat(10));
        assert_eq!(build_oat(1, &[1, 1]).unwrap().to_string(), "MM");
        assert!(matches!(build_oat(2, &[3]), Err(Error::Config(_))));
    }

    #[test]
    fn oat_ignores_seed_at_varies() {
        let a = ScheduleSpec { seed: 1, ..Default::default() };
        let b = ScheduleSpec { seed: 2, ..Default::default() };
        assert_eq!(a.build().unwrap(), b.build().unwrap());
        let at: Vec<String> = (0..10)
            .map(|seed| ScheduleSpec { seed, kind: ScheduleKind::At, ..Default::default() }.build().unwrap().to_string())
            .collect();
        assert!(at.iter().any(|s| s != &at[0]));
        let again = ScheduleSpec { seed: 3, kind: ScheduleKind::At, ..Default::default() };
        assert_eq!(again.build().unwrap().to_string(), at[3]);
    }

    #[test]
    fn at_limit_is_all_auxiliary() {
        let spec = ScheduleSpec { kind: ScheduleKind::At, at_decay: 1.0, ..Default::default() };
        for seed in 0..20 {
            let s = ScheduleSpec { seed, ..spec.clone() }.build().unwrap();
            assert_eq!(s.meta_count(), 0);
        }
    }

    #[test]
    fn at_probability_starts_at_one() {
        assert_eq!(at_aux_probability(0, 30, 0.9, 0.2), 1.0);
        let expected_meta: f64 = (0..30).map(|e| 1.0 - at_aux_probability(e, 30, 0.9, 0.2)).sum();
        assert!((expected_meta - 6.0).abs() < 1e-9);
    }

    #[test]
    fn naive_and_two_stage() {
        assert_eq!(build_naive(3).to_string(), "MMM");
        assert_eq!(build_two_stage(2, 1).to_string(), "AAM");
        assert!(build_two_stage(0, 0).is_empty());
        let spec = ScheduleSpec { kind: ScheduleKind::TwoStage, ..Default::default() };
        assert_eq!(spec.build().unwrap().to_string(), format!("{}{}", "A".repeat(24), "M".repeat(6)));
    }

    #[test]
    fn string_round_trip() {
        let s: Schedule = "AAMMA".parse().unwrap();
        assert_eq!(s.to_string(), "AAMMA");
        assert!("AXM".parse::<Schedule>().is_err());
        assert_eq!("two-stage".parse::<ScheduleKind>().unwrap(), ScheduleKind::TwoStage);
    }
}
