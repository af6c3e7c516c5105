//! Gaussian class clusters that share one low-rank variation basis, so the
//! offset between two samples of a seen class is a plausible offset for an
//! unseen class too.

use rand_distr::{Distribution, StandardNormal};

use crate::diffcore::Tensor;
use crate::episodes::Dataset;
use crate::error::{Error, Result};
use crate::rng::{SeededRng, Stream};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub class_count: usize,
    pub dim: usize,
    pub samples_per_class: usize,
    pub variation_dims: usize,
    pub variation_scale: f64,
    pub noise_scale: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            class_count: 20,
            dim: 16,
            samples_per_class: 60,
            variation_dims: 6,
            variation_scale: 1.0,
            noise_scale: 0.3,
            seed: 0,
        }
    }
}

/// Radius of the sphere the class means are drawn on.
const MEAN_RADIUS: f64 = 4.0;

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.class_count == 0 || self.dim == 0 || self.samples_per_class == 0 {
            return Err(Error::Config("synthetic classes, dim and samples must be positive".into()));
        }
        if self.variation_dims > self.dim {
            return Err(Error::Config(format!(
                "variation dims {} exceed dim {}",
                self.variation_dims, self.dim
            )));
        }
        if !(self.variation_scale >= 0.0 && self.noise_scale >= 0.0)
            || !self.variation_scale.is_finite()
            || !self.noise_scale.is_finite()
        {
            return Err(Error::Config("synthetic scales must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// A generated dataset with the ground truth it was drawn from.
#[derive(Debug, Clone)]
pub struct SyntheticDraw {
    pub dataset: Dataset,
    /// `dim × V_d` with orthonormal columns.
    pub basis: Tensor,
    pub means: Vec<Vec<f64>>,
}

pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    gen_synthetic_with_truth(spec).map(|d| d.dataset)
}

pub fn gen_synthetic_with_truth(spec: &SyntheticSpec) -> Result<SyntheticDraw> {
    spec.validate()?;
    let mut rng = SeededRng::stream(spec.seed, Stream::Data);
    let (d, vd) = (spec.dim, spec.variation_dims);
    let normal = |rng: &mut SeededRng| -> f64 { StandardNormal.sample(rng) };

    // Column-major while orthonormalizing.
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(vd);
    while columns.len() < vd {
        let mut v: Vec<f64> = (0..d).map(|_| normal(&mut rng)).collect();
        for c in &columns {
            let dot: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(c).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            columns.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    let basis = Tensor::new(
        vec![d, vd],
        (0..d).flat_map(|i| columns.iter().map(move |c| c[i])).collect(),
    )?;

    let means: Vec<Vec<f64>> = (0..spec.class_count)
        .map(|_| loop {
            let v: Vec<f64> = (0..d).map(|_| normal(&mut rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-8 {
                break v.into_iter().map(|x| MEAN_RADIUS * x / norm).collect();
            }
        })
        .collect();

    let mut rows = Vec::with_capacity(spec.class_count * spec.samples_per_class);
    for (c, mu) in means.iter().enumerate() {
        for _ in 0..spec.samples_per_class {
            let a: Vec<f64> = (0..vd).map(|_| spec.variation_scale * normal(&mut rng)).collect();
            let x = (0..d)
                .map(|i| {
                    let shift: f64 = columns.iter().zip(&a).map(|(col, ai)| col[i] * ai).sum();
                    mu[i] + shift + spec.noise_scale * normal(&mut rng)
                })
                .collect();
            rows.push((format!("c{c:02}"), x));
        }
    }
    Ok(SyntheticDraw {
        dataset: Dataset::from_labeled(d, rows)?,
        basis,
        means,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_is_bit_reproducible() {
        let a = gen_synthetic(&SyntheticSpec::default()).unwrap();
        let b = gen_synthetic(&SyntheticSpec::default()).unwrap();
        assert_eq!(a, b);
        let c = gen_synthetic(&SyntheticSpec { seed: 1, ..Default::default() }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn default_shape_and_labels() {
        let ds = gen_synthetic(&SyntheticSpec::default()).unwrap();
        assert_eq!((ds.len(), ds.dim(), ds.class_count()), (1200, 16, 20));
        assert_eq!(ds.label(0), "c00");
        assert_eq!(ds.label(19), "c19");
    }

    #[test]
    fn basis_is_orthonormal_and_means_distinct() {
        let draw = gen_synthetic_with_truth(&SyntheticSpec::default()).unwrap();
        let (d, vd) = (16, 6);
        for p in 0..vd {
            for q in 0..vd {
                let dot: f64 = (0..d).map(|i| draw.basis.values()[i * vd + p] * draw.basis.values()[i * vd + q]).sum();
                assert!((dot - if p == q { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
        for (i, a) in draw.means.iter().enumerate() {
            let n = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 4.0).abs() < 1e-12);
            for b in &draw.means[i + 1..] {
                assert!(a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() > 0.0);
            }
        }
    }

    #[test]
    fn zero_scales_collapse_to_means() {
        let spec = SyntheticSpec {
            variation_scale: 0.0,
            noise_scale: 0.0,
            class_count: 3,
            samples_per_class: 4,
            ..Default::default()
        };
        let draw = gen_synthetic_with_truth(&spec).unwrap();
        for item in draw.dataset.items() {
            assert_eq!(item.input, draw.means[item.class]);
        }
    }

    #[test]
    fn rejects_invalid_specs() {
        let bad = SyntheticSpec { variation_dims: 17, ..Default::default() };
        assert!(matches!(gen_synthetic(&bad), Err(Error::Config(_))));
        let bad = SyntheticSpec { noise_scale: -1.0, ..Default::default() };
        assert!(matches!(gen_synthetic(&bad), Err(Error::Config(_))));
    }
}
