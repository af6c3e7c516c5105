//! Diversity-transfer feature generator.
//!
//! A support feature and a same-class reference pair from a seen class are
//! mapped into a latent space by `phi1`. The reference offset
//! `phi1(r1) - phi1(r2)` is added to the support's latent code, and `phi2`
//! maps the composite back to feature space:
//!
//! ```text
//! z_g = normalize(phi2(phi1(z_s) + phi1(z_r1) - phi1(z_r2)))
//! ```
//!
//! Both maps are `affine → leaky ReLU → dropout`.

use crate::diffcore::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::layers::{Bindings, Layer, LayerVars};
use crate::rng::SeededRng;

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorParams {
    pub phi1: Layer,
    pub phi2: Layer,
    pub dropout_rate: f64,
    pub leaky_slope: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct GeneratorVars {
    phi1: LayerVars,
    phi2: LayerVars,
}

impl GeneratorParams {
    pub fn new(
        feature_dim: usize,
        latent_dim: usize,
        dropout_rate: f64,
        leaky_slope: f64,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if feature_dim == 0 || latent_dim == 0 {
            return Err(Error::Config("generator widths must be positive".into()));
        }
        Self::from_layers(
            Layer::new(feature_dim, latent_dim, rng),
            Layer::new(latent_dim, feature_dim, rng),
            dropout_rate,
            leaky_slope,
        )
    }

    pub fn from_layers(phi1: Layer, phi2: Layer, dropout_rate: f64, leaky_slope: f64) -> Result<Self> {
        if phi1.d_out() != phi2.d_in() {
            return Err(Error::Dimension {
                op: "generator",
                axis: "latent width",
                expected: phi1.d_out(),
                got: phi2.d_in(),
            });
        }
        if phi2.d_out() != phi1.d_in() {
            return Err(Error::Dimension {
                op: "generator",
                axis: "feature width",
                expected: phi1.d_in(),
                got: phi2.d_out(),
            });
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::Config(format!("dropout rate {dropout_rate} not in [0, 1)")));
        }
        Ok(Self {
            phi1,
            phi2,
            dropout_rate,
            leaky_slope,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.phi1.d_in()
    }

    pub fn latent_dim(&self) -> usize {
        self.phi1.d_out()
    }

    pub fn bind(&self, g: &mut Graph, mut bindings: Option<&mut Bindings>) -> GeneratorVars {
        GeneratorVars {
            phi1: self.phi1.bind(g, "generator.phi1", bindings.as_deref_mut()),
            phi2: self.phi2.bind(g, "generator.phi2", bindings),
        }
    }

    fn mapping(&self, g: &mut Graph, vars: LayerVars, x: Var, training: bool, rng: &mut SeededRng) -> Result<Var> {
        let h = Layer::forward(g, vars, x)?;
        let h = g.leaky_relu(h, self.leaky_slope);
        g.dropout(h, self.dropout_rate, training, rng)
    }

    /// Latent code `phi1(z)`; not normalized.
    pub fn phi1_map(&self, g: &mut Graph, vars: &GeneratorVars, z: Var, training: bool, rng: &mut SeededRng) -> Result<Var> {
        self.mapping(g, vars.phi1, z, training, rng)
    }

    /// Latent composites `phi1(z_s[i]) + phi1(r1[h]) - phi1(r2[h])` for every
    /// support row `i` and reference pair `h`, row-major in `(i, h)`.
    pub fn latent_composite(
        &self,
        g: &mut Graph,
        vars: &GeneratorVars,
        z_support: Var,
        refs: (Var, Var),
        training: bool,
        rng: &mut SeededRng,
    ) -> Result<Var> {
        if g.rows(refs.0) != g.rows(refs.1) {
            return Err(Error::Dimension {
                op: "generate_batch",
                axis: "reference pairs",
                expected: g.rows(refs.0),
                got: g.rows(refs.1),
            });
        }
        let support = self.phi1_map(g, vars, z_support, training, rng)?;
        let first = self.phi1_map(g, vars, refs.0, training, rng)?;
        let second = self.phi1_map(g, vars, refs.1, training, rng)?;
        let diversity = g.sub(first, second)?;
        g.pairwise_add(support, diversity)
    }

    /// One generated feature per (support row, reference pair), grouped by
    /// support index: row `i·H + h`. With no reference pairs the result is an
    /// empty `0 × C` constant and the generator stays off the graph.
    pub fn generate_batch(
        &self,
        g: &mut Graph,
        vars: &GeneratorVars,
        z_support: Var,
        refs: (Var, Var),
        training: bool,
        rng: &mut SeededRng,
    ) -> Result<Var> {
        if g.rows(refs.0) == 0 && g.rows(refs.1) == 0 {
            return g.leaf(vec![0, self.feature_dim()], Vec::new(), false);
        }
        let composite = self.latent_composite(g, vars, z_support, refs, training, rng)?;
        let out = self.mapping(g, vars.phi2, composite, training, rng)?;
        g.l2_normalize(out)
    }

    /// Single generated feature from `1 × C` operands.
    #[allow(clippy::too_many_arguments)]
    pub fn generate(
        &self,
        g: &mut Graph,
        vars: &GeneratorVars,
        z_s: Var,
        z_r1: Var,
        z_r2: Var,
        training: bool,
        rng: &mut SeededRng,
    ) -> Result<Var> {
        for v in [z_s, z_r1, z_r2] {
            if g.rows(v) != 1 {
                return Err(Error::Dimension {
                    op: "generate",
                    axis: "rows",
                    expected: 1,
                    got: g.rows(v),
                });
            }
        }
        self.generate_batch(g, vars, z_s, (z_r1, z_r2), training, rng)
    }

    /// Detached eval-mode generation for `1 × C` tensors.
    pub fn generate_eval(&self, z_s: &Tensor, z_r1: &Tensor, z_r2: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, None);
        let (s, a, b) = (g.input(z_s), g.input(z_r1), g.input(z_r2));
        let mut rng = SeededRng::new(0);
        let out = self.generate(&mut g, &vars, s, a, b, false, &mut rng)?;
        Ok(g.tensor(out))
    }
}
