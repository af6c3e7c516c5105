//! MLP feature extractor producing unit-norm features.

use crate::diffcore::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::layers::{Bindings, Layer, LayerVars};
use crate::rng::SeededRng;

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractorParams {
    pub layers: Vec<Layer>,
    pub leaky_slope: f64,
}

#[derive(Debug, Clone)]
pub struct ExtractorVars {
    layers: Vec<LayerVars>,
}

impl ExtractorParams {
    /// `input_dim → hidden[0] → … → feature_dim`, leaky ReLU between layers.
    pub fn new(
        input_dim: usize,
        hidden: &[usize],
        feature_dim: usize,
        leaky_slope: f64,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if input_dim == 0 || feature_dim == 0 || hidden.contains(&0) {
            return Err(Error::Config("extractor widths must be positive".into()));
        }
        let widths: Vec<usize> = std::iter::once(input_dim)
            .chain(hidden.iter().copied())
            .chain(std::iter::once(feature_dim))
            .collect();
        let layers = widths.windows(2).map(|w| Layer::new(w[0], w[1], rng)).collect();
        Ok(Self { layers, leaky_slope })
    }

    pub fn from_layers(layers: Vec<Layer>, leaky_slope: f64) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("extractor needs at least one layer".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].d_out() != pair[1].d_in() {
                return Err(Error::Dimension {
                    op: "extractor",
                    axis: if i == 0 { "hidden width" } else { "layer chain" },
                    expected: pair[0].d_out(),
                    got: pair[1].d_in(),
                });
            }
        }
        Ok(Self { layers, leaky_slope })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].d_in()
    }

    pub fn feature_dim(&self) -> usize {
        self.layers.last().expect("non-empty").d_out()
    }

    pub fn bind(&self, g: &mut Graph, mut bindings: Option<&mut Bindings>) -> ExtractorVars {
        let layers = self
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| l.bind(g, &format!("extractor.{i}"), bindings.as_deref_mut()))
            .collect();
        ExtractorVars { layers }
    }

    /// `z = l2_normalize(MLP(x))`. The extractor has no stochastic layers, so
    /// `training` only exists to keep call sites uniform.
    pub fn forward(&self, g: &mut Graph, vars: &ExtractorVars, x: Var, _training: bool) -> Result<Var> {
        if g.cols(x) != self.input_dim() {
            return Err(Error::Dimension {
                op: "extract",
                axis: "input features",
                expected: self.input_dim(),
                got: g.cols(x),
            });
        }
        if let Some(pos) = g.value(x).iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite extractor input at row {}",
                pos / self.input_dim()
            )));
        }
        let mut h = x;
        let last = vars.layers.len() - 1;
        for (i, lv) in vars.layers.iter().enumerate() {
            h = Layer::forward(g, *lv, h)?;
            if i < last {
                h = g.leaky_relu(h, self.leaky_slope);
            }
        }
        g.l2_normalize(h)
    }

    /// Detached evaluation of a batch.
    pub fn extract(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, None);
        let xv = g.input(x);
        let z = self.forward(&mut g, &vars, xv, false)?;
        Ok(g.tensor(z))
    }
}
