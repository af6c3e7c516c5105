//! Define-by-run computation graph with reverse-mode accumulation.
//!
//! Nodes are appended in evaluation order, so the node list is always a
//! valid topological order and `backward` is a single reverse sweep.

use super::tensor::{numel, Tensor};
use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Norm below which a row cannot be normalized.
pub const NORM_EPS: f64 = 1e-12;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul { a: usize, b: usize },
    MatMulT { a: usize, b: usize },
    AddBias { x: usize, bias: usize },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Scale { x: usize, factor: f64 },
    LeakyRelu { x: usize, slope: f64 },
    Dropout { x: usize, mask: Vec<f64> },
    L2Normalize { x: usize, norms: Vec<f64> },
    PairwiseAdd { a: usize, b: usize },
    ConcatRows { parts: Vec<usize> },
    GroupMean { x: usize, groups: Vec<usize>, counts: Vec<usize> },
    Sum { x: usize },
    CrossEntropy {
        scores: usize,
        temperature: usize,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
}

#[derive(Debug, Clone)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    grad: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

impl Node {
    fn rows(&self) -> usize {
        match self.shape.len() {
            0 | 1 => 1,
            _ => self.shape[0],
        }
    }

    fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }
}

/// Operation tape. Build it during a forward pass, call [`Graph::backward`]
/// on a scalar node, then read leaf gradients with [`Graph::grad`].
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// `c = a·b + beta·c` for row-major contiguous `c` (m×n). Strides are given
/// for `a` (m×k) and `b` (k×n) so transposed operands need no copy.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (isize, isize),
    b: &[f64],
    b_strides: (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c[..m * n].iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let span = |rows: usize, cols: usize, (rs, cs): (isize, isize)| {
        (rows - 1) * rs as usize + (cols - 1) * cs as usize + 1
    };
    assert!(a.len() >= span(m, k, a_strides));
    assert!(b.len() >= span(k, n, b_strides));
    // SAFETY: bounds of every operand were checked against the strides above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn slot<'a>(grads: &'a mut [Option<Vec<f64>>], nodes: &[Node], j: usize) -> Option<&'a mut Vec<f64>> {
    if !nodes[j].requires_grad {
        return None;
    }
    Some(grads[j].get_or_insert_with(|| vec![0.0; nodes[j].value.len()]))
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        let grad = if requires_grad && matches!(op, Op::Leaf) {
            vec![0.0; value.len()]
        } else {
            Vec::new()
        };
        self.nodes.push(Node {
            shape,
            value,
            grad,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    fn any_grad(&self, vars: &[usize]) -> bool {
        vars.iter().any(|&i| self.nodes[i].requires_grad)
    }

    /// Leaf copied from `t`; tracks gradients iff `t.requires_grad()`.
    pub fn param(&mut self, t: &Tensor) -> Var {
        self.push(
            t.shape().to_vec(),
            t.values().to_vec(),
            Op::Leaf,
            t.requires_grad(),
        )
    }

    /// Constant leaf (never receives gradient).
    pub fn input(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.values().to_vec(), Op::Leaf, false)
    }

    pub fn leaf(&mut self, shape: Vec<usize>, values: Vec<f64>, requires_grad: bool) -> Result<Var> {
        let n = numel(&shape);
        if n != values.len() {
            return Err(Error::Dimension {
                op: "leaf",
                axis: "element count",
                expected: n,
                got: values.len(),
            });
        }
        Ok(self.push(shape, values, Op::Leaf, requires_grad))
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn rows(&self, v: Var) -> usize {
        self.node(v).rows()
    }

    pub fn cols(&self, v: Var) -> usize {
        self.node(v).cols()
    }

    pub fn row(&self, v: Var, i: usize) -> &[f64] {
        let c = self.cols(v);
        &self.node(v).value[i * c..(i + 1) * c]
    }

    /// Snapshot of a node's values as a detached tensor.
    pub fn tensor(&self, v: Var) -> Tensor {
        let n = self.node(v);
        Tensor::new(n.shape.clone(), n.value.clone()).expect("node shape is consistent")
    }

    /// Accumulated gradient of a leaf. Empty for nodes that do not track
    /// gradients.
    pub fn grad(&self, v: Var) -> &[f64] {
        &self.node(v).grad
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.node(v).requires_grad
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    fn matrix_dims(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        let s = &self.node(v).shape;
        if s.len() != 2 {
            return Err(Error::Dimension {
                op,
                axis: "rank",
                expected: 2,
                got: s.len(),
            });
        }
        Ok((s[0], s[1]))
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        let (sa, sb) = (&self.node(a).shape, &self.node(b).shape);
        if sa.len() != sb.len() {
            return Err(Error::Dimension {
                op,
                axis: "rank",
                expected: sa.len(),
                got: sb.len(),
            });
        }
        for (&x, &y) in sa.iter().zip(sb) {
            if x != y {
                return Err(Error::Dimension {
                    op,
                    axis: "elementwise operand",
                    expected: x,
                    got: y,
                });
            }
        }
        Ok(())
    }

    /// `a·b` for `a: m×k`, `b: k×n`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims(a, "matmul")?;
        let (k2, n) = self.matrix_dims(b, "matmul")?;
        if k != k2 {
            return Err(Error::Dimension {
                op: "matmul",
                axis: "inner",
                expected: k,
                got: k2,
            });
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a),
            (k as isize, 1),
            self.value(b),
            (n as isize, 1),
            0.0,
            &mut out,
        );
        let rg = self.any_grad(&[a.0, b.0]);
        Ok(self.push(vec![m, n], out, Op::MatMul { a: a.0, b: b.0 }, rg))
    }

    /// `a·bᵀ` for `a: m×k`, `b: n×k`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims(a, "matmul_nt")?;
        let (n, k2) = self.matrix_dims(b, "matmul_nt")?;
        if k != k2 {
            return Err(Error::Dimension {
                op: "matmul_nt",
                axis: "inner",
                expected: k,
                got: k2,
            });
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a),
            (k as isize, 1),
            self.value(b),
            (1, k as isize),
            0.0,
            &mut out,
        );
        let rg = self.any_grad(&[a.0, b.0]);
        Ok(self.push(vec![m, n], out, Op::MatMulT { a: a.0, b: b.0 }, rg))
    }

    /// `x + bias` with `bias` broadcast over rows.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (rows, cols) = self.matrix_dims(x, "add_bias")?;
        let bs = &self.node(bias).shape;
        if bs.len() != 1 || bs[0] != cols {
            return Err(Error::Dimension {
                op: "add_bias",
                axis: "output features",
                expected: cols,
                got: numel(bs),
            });
        }
        let b = self.value(bias);
        let mut out = self.value(x).to_vec();
        for r in 0..rows {
            for (o, bv) in out[r * cols..(r + 1) * cols].iter_mut().zip(b) {
                *o += bv;
            }
        }
        let rg = self.any_grad(&[x.0, bias.0]);
        Ok(self.push(vec![rows, cols], out, Op::AddBias { x: x.0, bias: bias.0 }, rg))
    }

    /// Fully connected layer `x·weight + bias`.
    pub fn affine(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let (_, d_in) = self.matrix_dims(x, "affine")?;
        let (w_in, w_out) = self.matrix_dims(weight, "affine")?;
        if d_in != w_in {
            return Err(Error::Dimension {
                op: "affine",
                axis: "input features",
                expected: w_in,
                got: d_in,
            });
        }
        let bs = self.shape(bias);
        if bs.len() != 1 || bs[0] != w_out {
            return Err(Error::Dimension {
                op: "affine",
                axis: "output features",
                expected: w_out,
                got: numel(bs),
            });
        }
        let xw = self.matmul(x, weight)?;
        self.add_bias(xw, bias)
    }

    fn elementwise(
        &mut self,
        a: Var,
        b: Var,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
        make: impl FnOnce(usize, usize) -> Op,
    ) -> Result<Var> {
        self.same_shape(a, b, op)?;
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let rg = self.any_grad(&[a.0, b.0]);
        Ok(self.push(self.shape(a).to_vec(), out, make(a.0, b.0), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, "add", |x, y| x + y, |a, b| Op::Add { a, b })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, "sub", |x, y| x - y, |a, b| Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, "mul", |x, y| x * y, |a, b| Op::Mul { a, b })
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let out = self.value(x).iter().map(|v| v * factor).collect();
        let rg = self.requires_grad(x);
        self.push(self.shape(x).to_vec(), out, Op::Scale { x: x.0, factor }, rg)
    }

    /// Elementwise `max(x, slope·x)`; the derivative at exactly 0 is 1.
    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let out = self
            .value(x)
            .iter()
            .map(|&v| if v >= 0.0 { v } else { slope * v })
            .collect();
        let rg = self.requires_grad(x);
        self.push(self.shape(x).to_vec(), out, Op::LeakyRelu { x: x.0, slope }, rg)
    }

    /// Inverted dropout. Identity when `training` is false or `rate` is 0.
    pub fn dropout(&mut self, x: Var, rate: f64, training: bool, rng: &mut SeededRng) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Contract(format!("dropout rate {rate} not in [0, 1)")));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..self.value(x).len())
            .map(|_| if rng.uniform() < rate { 0.0 } else { keep })
            .collect();
        let out = self.value(x).iter().zip(&mask).map(|(v, m)| v * m).collect();
        let rg = self.requires_grad(x);
        Ok(self.push(self.shape(x).to_vec(), out, Op::Dropout { x: x.0, mask }, rg))
    }

    /// Scales every row to unit Euclidean norm.
    pub fn l2_normalize(&mut self, x: Var) -> Result<Var> {
        let (rows, cols) = (self.rows(x), self.cols(x));
        let mut out = self.value(x).to_vec();
        let mut norms = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &mut out[r * cols..(r + 1) * cols];
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(norm > NORM_EPS) {
                return Err(Error::DegenerateInput {
                    op: "l2_normalize",
                    row: r,
                    norm,
                });
            }
            row.iter_mut().for_each(|v| *v /= norm);
            norms.push(norm);
        }
        let rg = self.requires_grad(x);
        Ok(self.push(self.shape(x).to_vec(), out, Op::L2Normalize { x: x.0, norms }, rg))
    }

    /// Row `i·H + h` of the result is `a[i] + b[h]` for `a: M×D`, `b: H×D`.
    pub fn pairwise_add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, d) = self.matrix_dims(a, "pairwise_add")?;
        let (h, d2) = self.matrix_dims(b, "pairwise_add")?;
        if d != d2 {
            return Err(Error::Dimension {
                op: "pairwise_add",
                axis: "features",
                expected: d,
                got: d2,
            });
        }
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = Vec::with_capacity(m * h * d);
        for i in 0..m {
            let ar = &av[i * d..(i + 1) * d];
            for j in 0..h {
                let br = &bv[j * d..(j + 1) * d];
                out.extend(ar.iter().zip(br).map(|(x, y)| x + y));
            }
        }
        let rg = self.any_grad(&[a.0, b.0]);
        Ok(self.push(vec![m * h, d], out, Op::PairwiseAdd { a: a.0, b: b.0 }, rg))
    }

    /// Stacks matrices with equal column count.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::Contract("concat_rows of nothing".into()));
        };
        let (_, cols) = self.matrix_dims(first, "concat_rows")?;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (r, c) = self.matrix_dims(p, "concat_rows")?;
            if c != cols {
                return Err(Error::Dimension {
                    op: "concat_rows",
                    axis: "columns",
                    expected: cols,
                    got: c,
                });
            }
            rows += r;
            out.extend_from_slice(self.value(p));
        }
        let idx: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let rg = self.any_grad(&idx);
        Ok(self.push(vec![rows, cols], out, Op::ConcatRows { parts: idx }, rg))
    }

    /// Mean of the rows assigned to each of `n_groups` groups.
    pub fn group_mean(&mut self, x: Var, groups: &[usize], n_groups: usize) -> Result<Var> {
        let (rows, cols) = self.matrix_dims(x, "group_mean")?;
        if groups.len() != rows {
            return Err(Error::Dimension {
                op: "group_mean",
                axis: "group assignment",
                expected: rows,
                got: groups.len(),
            });
        }
        let mut counts = vec![0usize; n_groups];
        let mut out = vec![0.0; n_groups * cols];
        let xv = self.value(x);
        for (r, &g) in groups.iter().enumerate() {
            if g >= n_groups {
                return Err(Error::Index {
                    op: "group_mean",
                    index: g,
                    bound: n_groups,
                });
            }
            counts[g] += 1;
            for (o, v) in out[g * cols..(g + 1) * cols].iter_mut().zip(&xv[r * cols..(r + 1) * cols]) {
                *o += v;
            }
        }
        if let Some(empty) = counts.iter().position(|&c| c == 0) {
            return Err(Error::Contract(format!("group {empty} has no rows")));
        }
        for (g, &c) in counts.iter().enumerate() {
            out[g * cols..(g + 1) * cols].iter_mut().for_each(|v| *v /= c as f64);
        }
        let rg = self.requires_grad(x);
        let op = Op::GroupMean {
            x: x.0,
            groups: groups.to_vec(),
            counts,
        };
        Ok(self.push(vec![n_groups, cols], out, op, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        let rg = self.requires_grad(x);
        self.push(Vec::new(), vec![s], Op::Sum { x: x.0 }, rg)
    }

    /// Batch mean of `-log softmax(temperature · scores)[label]`.
    pub fn scaled_cross_entropy(&mut self, scores: Var, temperature: Var, labels: &[usize]) -> Result<Var> {
        let (b, n) = self.matrix_dims(scores, "scaled_cross_entropy")?;
        if self.value(temperature).len() != 1 {
            return Err(Error::Dimension {
                op: "scaled_cross_entropy",
                axis: "temperature",
                expected: 1,
                got: self.value(temperature).len(),
            });
        }
        if labels.len() != b {
            return Err(Error::Dimension {
                op: "scaled_cross_entropy",
                axis: "labels",
                expected: b,
                got: labels.len(),
            });
        }
        if b == 0 {
            return Err(Error::Contract("cross entropy over an empty batch".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n) {
            return Err(Error::Index {
                op: "scaled_cross_entropy",
                index: bad,
                bound: n,
            });
        }
        let alpha = self.value(temperature)[0];
        let sv = self.value(scores);
        let mut probs = vec![0.0; b * n];
        let mut total = 0.0;
        for r in 0..b {
            let row = &sv[r * n..(r + 1) * n];
            let max = row.iter().map(|s| alpha * s).fold(f64::NEG_INFINITY, f64::max);
            let p = &mut probs[r * n..(r + 1) * n];
            let mut z = 0.0;
            for (pj, s) in p.iter_mut().zip(row) {
                *pj = (alpha * s - max).exp();
                z += *pj;
            }
            p.iter_mut().for_each(|pj| *pj /= z);
            total += max + z.ln() - alpha * row[labels[r]];
        }
        let rg = self.any_grad(&[scores.0, temperature.0]);
        let op = Op::CrossEntropy {
            scores: scores.0,
            temperature: temperature.0,
            labels: labels.to_vec(),
            probs,
        };
        Ok(self.push(Vec::new(), vec![total / b as f64], op, rg))
    }

    /// Accumulates `∂loss/∂leaf` into every gradient-tracking leaf.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        if !self.requires_grad(loss) {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            let nodes = &self.nodes;
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::MatMul { a, b } => {
                    let (m, n) = (node.rows(), node.cols());
                    let k = nodes[*a].cols();
                    if let Some(da) = slot(&mut grads, nodes, *a) {
                        // da += g·bᵀ
                        gemm(m, n, k, &g, (n as isize, 1), &nodes[*b].value, (1, n as isize), 1.0, da);
                    }
                    if let Some(db) = slot(&mut grads, nodes, *b) {
                        // db += aᵀ·g
                        gemm(k, m, n, &nodes[*a].value, (1, k as isize), &g, (n as isize, 1), 1.0, db);
                    }
                }
                Op::MatMulT { a, b } => {
                    let (m, n) = (node.rows(), node.cols());
                    let k = nodes[*a].cols();
                    if let Some(da) = slot(&mut grads, nodes, *a) {
                        // da += g·b
                        gemm(m, n, k, &g, (n as isize, 1), &nodes[*b].value, (k as isize, 1), 1.0, da);
                    }
                    if let Some(db) = slot(&mut grads, nodes, *b) {
                        // db += gᵀ·a
                        gemm(n, m, k, &g, (1, n as isize), &nodes[*a].value, (k as isize, 1), 1.0, db);
                    }
                }
                Op::AddBias { x, bias } => {
                    let cols = node.cols();
                    if let Some(dx) = slot(&mut grads, nodes, *x) {
                        dx.iter_mut().zip(&g).for_each(|(d, v)| *d += v);
                    }
                    if let Some(db) = slot(&mut grads, nodes, *bias) {
                        for row in g.chunks(cols) {
                            db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                        }
                    }
                }
                Op::Add { a, b } => {
                    if let Some(da) = slot(&mut grads, nodes, *a) {
                        da.iter_mut().zip(&g).for_each(|(d, v)| *d += v);
                    }
                    if let Some(db) = slot(&mut grads, nodes, *b) {
                        db.iter_mut().zip(&g).for_each(|(d, v)| *d += v);
                    }
                }
                Op::Sub { a, b } => {
                    if let Some(da) = slot(&mut grads, nodes, *a) {
                        da.iter_mut().zip(&g).for_each(|(d, v)| *d += v);
                    }
                    if let Some(db) = slot(&mut grads, nodes, *b) {
                        db.iter_mut().zip(&g).for_each(|(d, v)| *d -= v);
                    }
                }
                Op::Mul { a, b } => {
                    if let Some(da) = slot(&mut grads, nodes, *a) {
                        for ((d, v), y) in da.iter_mut().zip(&g).zip(&nodes[*b].value) {
                            *d += v * y;
                        }
                    }
                    if let Some(db) = slot(&mut grads, nodes, *b) {
                        for ((d, v), x) in db.iter_mut().zip(&g).zip(&nodes[*a].value) {
                            *d += v * x;
                        }
                    }
                }
                Op::Scale { x, factor } => {
                    if let Some(dx) = slot(&mut grads, nodes, *x) {
                        dx.iter_mut().zip(&g).for_each(|(d, v)| *d += factor * v);
                    }
                }
                Op::LeakyRelu { x, slope } => {
                    if let Some(dx) = slot(&mut grads, nodes, *x) {
                        for ((d, v), xi) in dx.iter_mut().zip(&g).zip(&nodes[*x].value) {
                            *d += if *xi >= 0.0 { *v } else { slope * v };
                        }
                    }
                }
                Op::Dropout { x, mask } => {
                    if let Some(dx) = slot(&mut grads, nodes, *x) {
                        for ((d, v), m) in dx.iter_mut().zip(&g).zip(mask) {
                            *d += v * m;
                        }
                    }
                }
                Op::L2Normalize { x, norms } => {
                    let cols = node.cols();
                    if let Some(dx) = slot(&mut grads, nodes, *x) {
                        for (r, norm) in norms.iter().enumerate() {
                            let span = r * cols..(r + 1) * cols;
                            let y = &node.value[span.clone()];
                            let gr = &g[span.clone()];
                            let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                            for ((d, gi), yi) in dx[span].iter_mut().zip(gr).zip(y) {
                                *d += (gi - yi * dot) / norm;
                            }
                        }
                    }
                }
                Op::PairwiseAdd { a, b } => {
                    let d = node.cols();
                    let m = nodes[*a].rows();
                    let h = nodes[*b].rows();
                    if let Some(da) = slot(&mut grads, nodes, *a) {
                        for i in 0..m {
                            for j in 0..h {
                                let src = &g[(i * h + j) * d..(i * h + j + 1) * d];
                                da[i * d..(i + 1) * d].iter_mut().zip(src).for_each(|(x, v)| *x += v);
                            }
                        }
                    }
                    if let Some(db) = slot(&mut grads, nodes, *b) {
                        for i in 0..m {
                            for j in 0..h {
                                let src = &g[(i * h + j) * d..(i * h + j + 1) * d];
                                db[j * d..(j + 1) * d].iter_mut().zip(src).for_each(|(x, v)| *x += v);
                            }
                        }
                    }
                }
                Op::ConcatRows { parts } => {
                    let mut offset = 0;
                    for &p in parts {
                        let len = nodes[p].value.len();
                        if let Some(dp) = slot(&mut grads, nodes, p) {
                            dp.iter_mut().zip(&g[offset..offset + len]).for_each(|(d, v)| *d += v);
                        }
                        offset += len;
                    }
                }
                Op::GroupMean { x, groups, counts } => {
                    let cols = node.cols();
                    if let Some(dx) = slot(&mut grads, nodes, *x) {
                        for (r, &grp) in groups.iter().enumerate() {
                            let c = counts[grp] as f64;
                            let src = &g[grp * cols..(grp + 1) * cols];
                            dx[r * cols..(r + 1) * cols].iter_mut().zip(src).for_each(|(d, v)| *d += v / c);
                        }
                    }
                }
                Op::Sum { x } => {
                    if let Some(dx) = slot(&mut grads, nodes, *x) {
                        dx.iter_mut().for_each(|d| *d += g[0]);
                    }
                }
                Op::CrossEntropy {
                    scores,
                    temperature,
                    labels,
                    probs,
                } => {
                    let n = nodes[*scores].cols();
                    let b = labels.len() as f64;
                    let alpha = nodes[*temperature].value[0];
                    let sv = &nodes[*scores].value;
                    let upstream = g[0];
                    let residual = |r: usize, j: usize| probs[r * n + j] - if labels[r] == j { 1.0 } else { 0.0 };
                    if let Some(ds) = slot(&mut grads, nodes, *scores) {
                        for r in 0..labels.len() {
                            for j in 0..n {
                                ds[r * n + j] += upstream * alpha * residual(r, j) / b;
                            }
                        }
                    }
                    if let Some(dt) = slot(&mut grads, nodes, *temperature) {
                        let mut acc = 0.0;
                        for r in 0..labels.len() {
                            for j in 0..n {
                                acc += sv[r * n + j] * residual(r, j);
                            }
                        }
                        dt[0] += upstream * acc / b;
                    }
                }
            }
        }

        for (node, g) in self.nodes.iter_mut().zip(grads) {
            if let (Op::Leaf, true, Some(g)) = (&node.op, node.requires_grad, g) {
                node.grad.iter_mut().zip(&g).for_each(|(d, v)| *d += v);
            }
        }
        Ok(())
    }
}
