//! Averaged-proxy cosine classifier, the meta loss, and the auxiliary
//! classification head.

use crate::diffcore::{Graph, Tensor, Var, NORM_EPS};
use crate::error::{Error, Result};
use crate::layers::{glorot_uniform, Bindings};
use crate::rng::SeededRng;

pub const DEFAULT_TEMPERATURE: f64 = 10.0;

/// Unit-norm class proxies, one row per episode class.
#[derive(Debug, Clone)]
pub struct ProxyMatrix {
    pub weights: Var,
    pub class_ids: Vec<usize>,
}

/// Learnable temperature of the meta loss.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaTemperature {
    pub alpha: Tensor,
}

impl Default for MetaTemperature {
    fn default() -> Self {
        Self::new(DEFAULT_TEMPERATURE)
    }
}

impl MetaTemperature {
    pub fn new(alpha: f64) -> Self {
        Self {
            alpha: Tensor::scalar(alpha).trainable(),
        }
    }

    pub fn bind(&self, g: &mut Graph, bindings: Option<&mut Bindings>) -> Var {
        match bindings {
            Some(b) => {
                let v = g.param(&self.alpha);
                b.push(("meta.alpha".into(), v));
                v
            }
            None => g.input(&self.alpha),
        }
    }
}

/// Cosine classifier over all seen classes with its own temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxiliaryHead {
    pub weights: Tensor,
    pub alpha: Tensor,
    /// Normalize rows of `weights` before scoring.
    pub normalize_rows: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct AuxiliaryVars {
    weights: Var,
    alpha: Var,
}

impl AuxiliaryHead {
    pub fn new(classes: usize, feature_dim: usize, alpha: f64, normalize_rows: bool, rng: &mut SeededRng) -> Self {
        Self {
            weights: glorot_uniform(classes, feature_dim, rng),
            alpha: Tensor::scalar(alpha).trainable(),
            normalize_rows,
        }
    }

    pub fn classes(&self) -> usize {
        self.weights.rows()
    }

    pub fn bind(&self, g: &mut Graph, bindings: Option<&mut Bindings>) -> AuxiliaryVars {
        match bindings {
            Some(b) => {
                let weights = g.param(&self.weights);
                let alpha = g.param(&self.alpha);
                b.push(("aux.weight".into(), weights));
                b.push(("aux.alpha".into(), alpha));
                AuxiliaryVars { weights, alpha }
            }
            None => AuxiliaryVars {
                weights: g.input(&self.weights),
                alpha: g.input(&self.alpha),
            },
        }
    }

    /// Batch mean of `-log softmax(α′ · z_i w′ᵀ)[y_i]`.
    pub fn loss(&self, g: &mut Graph, vars: AuxiliaryVars, z_batch: Var, labels: &[usize]) -> Result<Var> {
        let w = if self.normalize_rows {
            g.l2_normalize(vars.weights)?
        } else {
            vars.weights
        };
        let scores = g.matmul_nt(z_batch, w)?;
        g.scaled_cross_entropy(scores, vars.alpha, labels)
    }
}

/// Row-to-class assignment of the `N·K` support rows followed by the
/// `N·K·H` generated rows. Supports are class-major (`n·K + k`); generated
/// row `i·H + h` belongs to support `i`.
pub fn proxy_grouping(n_way: usize, k_shot: usize, h_gen: usize) -> Vec<usize> {
    let support = (0..n_way * k_shot).map(|i| i / k_shot);
    let generated = (0..n_way * k_shot * h_gen).map(|j| (j / h_gen) / k_shot);
    support.chain(generated).collect()
}

/// `w_n = normalize(mean of class n's K support and K·H generated features)`.
pub fn build_proxies(
    g: &mut Graph,
    z_support: Var,
    z_generated: Var,
    n_way: usize,
    k_shot: usize,
    h_gen: usize,
) -> Result<ProxyMatrix> {
    if g.rows(z_support) != n_way * k_shot {
        return Err(Error::Dimension {
            op: "build_proxies",
            axis: "support rows",
            expected: n_way * k_shot,
            got: g.rows(z_support),
        });
    }
    if g.rows(z_generated) != n_way * k_shot * h_gen {
        return Err(Error::Dimension {
            op: "build_proxies",
            axis: "generated rows",
            expected: n_way * k_shot * h_gen,
            got: g.rows(z_generated),
        });
    }
    let all = if h_gen == 0 {
        z_support
    } else {
        g.concat_rows(&[z_support, z_generated])?
    };
    let groups = proxy_grouping(n_way, k_shot, h_gen);
    let mean = g.group_mean(all, &groups, n_way)?;
    for class in 0..n_way {
        let norm = g.row(mean, class).iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm >= NORM_EPS) {
            return Err(Error::DegenerateProxy { class, norm });
        }
    }
    Ok(ProxyMatrix {
        weights: g.l2_normalize(mean)?,
        class_ids: (0..n_way).collect(),
    })
}

/// Cosine scores `z_q · Wᵀ`.
pub fn score_query(g: &mut Graph, z_query: Var, proxies: &ProxyMatrix) -> Result<Var> {
    g.matmul_nt(z_query, proxies.weights)
}

pub fn meta_loss(g: &mut Graph, scores: Var, alpha: Var, labels: &[usize]) -> Result<Var> {
    g.scaled_cross_entropy(scores, alpha, labels)
}

/// Index of the largest score in each row (first index on ties).
pub fn argmax_rows(g: &Graph, scores: Var) -> Vec<usize> {
    (0..g.rows(scores))
        .map(|r| {
            g.row(scores, r)
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (j, &s)| if s > best.1 { (j, s) } else { best })
                .0
        })
        .collect()
}
