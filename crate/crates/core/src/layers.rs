//! Fully connected layer parameters shared by the extractor and generator.

use crate::diffcore::{Graph, Tensor, Var};
use crate::error::Result;
use crate::rng::SeededRng;

/// Weight `[in × out]` and bias `[out]` of an affine map.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, Copy)]
pub struct LayerVars {
    pub weight: Var,
    pub bias: Var,
}

/// Graph handles of bound parameters, keyed by checkpoint name.
pub type Bindings = Vec<(String, Var)>;

/// Uniform in `±√(6/(fan_in+fan_out))`.
pub fn glorot_uniform(rows: usize, cols: usize, rng: &mut SeededRng) -> Tensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let values = (0..rows * cols).map(|_| rng.uniform_range(-limit, limit)).collect();
    Tensor::matrix(rows, cols, values)
        .expect("sizes are consistent")
        .trainable()
}

impl Layer {
    pub fn new(d_in: usize, d_out: usize, rng: &mut SeededRng) -> Self {
        Self {
            weight: glorot_uniform(d_in, d_out, rng),
            bias: Tensor::zeros(vec![d_out]).trainable(),
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut w = vec![0.0; dim * dim];
        for i in 0..dim {
            w[i * dim + i] = 1.0;
        }
        Self {
            weight: Tensor::matrix(dim, dim, w).expect("square").trainable(),
            bias: Tensor::zeros(vec![dim]).trainable(),
        }
    }

    pub fn d_in(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn d_out(&self) -> usize {
        self.weight.shape()[1]
    }

    /// Adds the layer to `g`. Trainable leaves are recorded in `bindings`
    /// under `<prefix>.weight` / `<prefix>.bias`.
    pub fn bind(&self, g: &mut Graph, prefix: &str, bindings: Option<&mut Bindings>) -> LayerVars {
        match bindings {
            Some(b) => {
                let weight = g.param(&self.weight);
                let bias = g.param(&self.bias);
                b.push((format!("{prefix}.weight"), weight));
                b.push((format!("{prefix}.bias"), bias));
                LayerVars { weight, bias }
            }
            None => LayerVars {
                weight: g.input(&self.weight),
                bias: g.input(&self.bias),
            },
        }
    }

    pub fn forward(g: &mut Graph, vars: LayerVars, x: Var) -> Result<Var> {
        g.affine(x, vars.weight, vars.bias)
    }
}
