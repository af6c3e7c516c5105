//! Central finite-difference gradient checking.
//!
//! Only forward evaluations are used here, so these routines stay an
//! independent oracle for the analytic gradients produced by
//! [`Graph::backward`](super::Graph::backward).

use super::{Graph, Tensor, Var};
use crate::rng::SeededRng;

/// Smallest magnitude used as the denominator of a relative error, so that
/// entries whose true gradient is ~0 are compared absolutely.
pub const REL_FLOOR: f64 = 1e-6;

/// Central-difference estimate of `∇f(x)` with step `h`.
pub fn numeric_gradient(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let plus = f(&probe);
            probe[i] = orig - h;
            let minus = f(&probe);
            probe[i] = orig;
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Largest elementwise relative error between two gradient vectors.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

/// Projects `out` onto fixed pseudo-random weights so every output entry
/// contributes to the scalar being differentiated.
pub fn project(g: &mut Graph, out: Var, seed: u64) -> Var {
    let mut rng = SeededRng::new(seed);
    let n = g.value(out).len();
    let w: Vec<f64> = (0..n).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
    let wv = g
        .leaf(g.shape(out).to_vec(), w, false)
        .expect("projection weights match output shape");
    let prod = g.mul(out, wv).expect("same shape");
    g.sum(prod)
}

/// Worst relative error between backward gradients and central differences
/// (step `h`) over every entry of every input of `build`. Non-scalar outputs
/// are projected to a scalar first.
pub fn graph_gradient_error(inputs: &[Tensor], h: f64, build: impl Fn(&mut Graph, &[Var]) -> Var) -> f64 {
    let eval = |vals: &[Vec<f64>]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs
            .iter()
            .zip(vals)
            .map(|(t, v)| g.leaf(t.shape().to_vec(), v.clone(), true).expect("input shape"))
            .collect();
        let out = build(&mut g, &vars);
        let loss = if g.value(out).len() == 1 { out } else { project(&mut g, out, 99) };
        (g, vars, loss)
    };
    let base: Vec<Vec<f64>> = inputs.iter().map(|t| t.values().to_vec()).collect();
    let (mut g, vars, loss) = eval(&base);
    g.backward(loss).expect("scalar loss");
    let mut worst: f64 = 0.0;
    for (i, v) in vars.iter().enumerate() {
        let analytic = g.grad(*v).to_vec();
        let numeric = numeric_gradient(
            |x| {
                let mut vals = base.clone();
                vals[i] = x.to_vec();
                let (g2, _, l2) = eval(&vals);
                g2.value(l2)[0]
            },
            &base[i],
            h,
        );
        worst = worst.max(max_relative_error(&analytic, &numeric));
    }
    worst
}

fn random(rng: &mut SeededRng, shape: Vec<usize>) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.uniform_range(-1.0, 1.0)).collect()).expect("shape")
}

/// Checks every differentiable primitive on `cases` random instances with
/// entries in `[-1, 1]` and dims ≤ 8, step 1e-5. Returns the worst relative
/// error per primitive.
pub fn primitive_suite(cases: usize, seed: u64) -> Vec<(&'static str, f64)> {
    let h = 1e-5;
    let mut rng = SeededRng::new(seed);
    let mut worst: Vec<(&'static str, f64)> = Vec::new();
    let mut record = |name: &'static str, e: f64| match worst.iter_mut().find(|(n, _)| *n == name) {
        Some(w) => w.1 = w.1.max(e),
        None => worst.push((name, e)),
    };
    for case in 0..cases {
        let (b, din, dout) = (1 + case % 4, 2 + case % 5, 1 + (case * 3) % 7);
        let x = random(&mut rng, vec![b, din]);
        let w = random(&mut rng, vec![din, dout]);
        let bias = random(&mut rng, vec![dout]);
        record("affine", graph_gradient_error(&[x.clone(), w.clone(), bias], h, |g, v| g.affine(v[0], v[1], v[2]).unwrap()));
        record("matmul", graph_gradient_error(&[x.clone(), w], h, |g, v| g.matmul(v[0], v[1]).unwrap()));

        let w2 = random(&mut rng, vec![dout, din]);
        record("matmul_nt", graph_gradient_error(&[x.clone(), w2], h, |g, v| g.matmul_nt(v[0], v[1]).unwrap()));
        record("leaky_relu", graph_gradient_error(std::slice::from_ref(&x), h, |g, v| g.leaky_relu(v[0], 0.2)));
        record("l2_normalize", graph_gradient_error(std::slice::from_ref(&x), h, |g, v| g.l2_normalize(v[0]).unwrap()));
        record("scale", graph_gradient_error(std::slice::from_ref(&x), h, |g, v| g.scale(v[0], -1.7)));

        let y = random(&mut rng, vec![b, din]);
        record("add", graph_gradient_error(&[x.clone(), y.clone()], h, |g, v| g.add(v[0], v[1]).unwrap()));
        record("sub", graph_gradient_error(&[x.clone(), y.clone()], h, |g, v| g.sub(v[0], v[1]).unwrap()));
        record("mul", graph_gradient_error(&[x.clone(), y], h, |g, v| g.mul(v[0], v[1]).unwrap()));

        let pairs = random(&mut rng, vec![1 + case % 3, din]);
        record("pairwise_add", graph_gradient_error(&[x.clone(), pairs], h, |g, v| g.pairwise_add(v[0], v[1]).unwrap()));

        let groups: Vec<usize> = (0..b + 2).map(|r| r % 2).collect();
        let z = random(&mut rng, vec![b + 2, din]);
        record(
            "group_mean+concat_rows",
            graph_gradient_error(&[z, x.clone()], h, |g, v| {
                let m = g.group_mean(v[0], &groups, 2).unwrap();
                g.concat_rows(&[m, v[1]]).unwrap()
            }),
        );
        record("sum", graph_gradient_error(std::slice::from_ref(&x), h, |g, v| g.sum(v[0])));

        let labels: Vec<usize> = (0..b).map(|r| (r + case) % din).collect();
        let alpha = Tensor::scalar(rng.uniform_range(0.5, 5.0));
        record(
            "scaled_cross_entropy",
            graph_gradient_error(&[x.clone(), alpha], h, |g, v| g.scaled_cross_entropy(v[0], v[1], &labels).unwrap()),
        );

        let drop_rng = SeededRng::new(case as u64);
        record(
            "dropout",
            graph_gradient_error(&[x], h, |g, v| {
                // same mask on every evaluation
                let mut r = drop_rng.clone();
                g.dropout(v[0], 0.3, true, &mut r).unwrap()
            }),
        );
    }
    worst
}
