//! Reverse-mode automatic differentiation over a recorded tape.
//!
//! A `Graph` records every operation of one forward pass. Operations are
//! coarse (affine maps, layer norm, fused attention, fused losses) and each
//! carries a hand-written adjoint. Values are `f64` and every array is viewed
//! as a row-major matrix.

use std::sync::Arc;

use super::array::FeatureArray;
use super::attention::{self, AttentionGrads, EdgeSet};
use super::params::{ParamId, ParameterSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Probability floor used inside the cross-entropy logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

const LN_EPS: f64 = 1e-5;

enum Op {
    Constant,
    Variable,
    Param(ParamId),
    Affine { x: Var, w: Var, b: Option<Var> },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Silu(Var),
    Clamp { x: Var, lo: f64, hi: f64 },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        rel: Option<Var>,
        edges: Arc<EdgeSet>,
        heads: usize,
        weights: Vec<f64>,
    },
    GatherRows { x: Var, idx: Vec<usize> },
    GatherCols { x: Var, idx: Vec<usize> },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Reshape(Var),
    SelectRows { a: Var, b: Var, take_a: Vec<bool> },
    MaxPool { x: Var, argmax: Vec<usize> },
    Softmax(Var),
    CumSumPairs(Var),
    Sum(Var),
    Nll { pos: Var, log_var: Var, points: Vec<NllPoint>, n_agents: usize },
    CrossEntropy { probs: Var, targets: Vec<(usize, usize)> },
    Distill { x: Var, target: Vec<f64>, squared: bool },
    WeightedSum(Vec<(Var, f64)>),
}

/// One supervised point of the Gaussian regression loss: the row holding the
/// matched mode, the time index, and the ground-truth position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NllPoint {
    pub row: usize,
    pub step: usize,
    pub target: [f64; 2],
}

struct Node {
    value: FeatureArray,
    op: Op,
    needs_grad: bool,
}

/// Gradients produced by one backward pass.
#[derive(Debug, Clone)]
pub struct Gradients {
    params: Vec<Option<Vec<f64>>>,
    inputs: Vec<(Var, Vec<f64>)>,
}

impl Gradients {
    pub fn param(&self, id: ParamId) -> Option<&[f64]> {
        self.params[id.index()].as_deref()
    }

    pub fn input(&self, v: Var) -> Option<&[f64]> {
        self.inputs.iter().find(|(x, _)| *x == v).map(|(_, g)| g.as_slice())
    }

    pub fn into_params(self) -> Vec<Option<Vec<f64>>> {
        self.params
    }

    /// Adds these gradients into the parameter set's gradient slots.
    pub fn accumulate_into(&self, params: &mut ParameterSet) {
        for (entry, g) in params.entries_mut().iter_mut().zip(&self.params) {
            if let Some(g) = g {
                for (a, b) in entry.grad.values_mut().iter_mut().zip(g) {
                    *a += b;
                }
            }
        }
    }
}

pub struct Graph<'p> {
    params: &'p ParameterSet,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `c = a * b + beta * c` with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len());
    assert!(k == 0 || (k - 1) * rsb + (n - 1) * csb < b.len());
    assert!(m * n <= c.len());
    // SAFETY: the assertions above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParameterSet) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
        }
    }

    pub fn params(&self) -> &'p ParameterSet {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &FeatureArray {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.values()[0]
    }

    fn push(&mut self, value: FeatureArray, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = match op {
            Op::Variable | Op::Param(_) => true,
            Op::Constant => false,
            _ => inputs.iter().any(|v| self.nodes[v.0].needs_grad),
        };
        debug_assert!(value.is_finite(), "non-finite value recorded");
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn vals(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.values()
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let a = &self.nodes[v.0].value;
        (a.rows(), a.cols())
    }

    pub fn constant(&mut self, value: FeatureArray) -> Var {
        self.push(value, Op::Constant, &[])
    }

    /// A leaf whose gradient is reported by `backward`.
    pub fn variable(&mut self, value: FeatureArray) -> Var {
        self.push(value, Op::Variable, &[])
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.index()] {
            return v;
        }
        let value = self.params.value(id).clone();
        let v = self.push(value, Op::Param(id), &[]);
        self.param_vars[id.index()] = Some(v);
        v
    }

    /// `x W + b` with `x: n x a`, `W: a x b`, `b: 1 x b`.
    pub fn affine(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let (n, a) = self.dims(x);
        let (wa, wb) = self.dims(w);
        assert_eq!(a, wa, "affine: input width {a} vs weight rows {wa}");
        let mut out = vec![0.0; n * wb];
        gemm(n, a, wb, self.vals(x), (a, 1), self.vals(w), (wb, 1), 0.0, &mut out);
        if let Some(b) = b {
            let bias = self.vals(b);
            assert_eq!(bias.len(), wb);
            for row in out.chunks_mut(wb) {
                for (o, bb) in row.iter_mut().zip(bias) {
                    *o += bb;
                }
            }
        }
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        self.push(FeatureArray::from_rows(n, wb, out), Op::Affine { x, w, b }, &inputs)
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        assert_eq!(av.len(), bv.len(), "elementwise op on different sizes");
        let vals = av.values().iter().zip(bv.values()).map(|(x, y)| f(*x, *y)).collect();
        let shape = av.shape().to_vec();
        self.push(FeatureArray::new(shape, vals).unwrap(), op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn map(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let xv = &self.nodes[x.0].value;
        let vals = xv.values().iter().map(|&v| f(v)).collect();
        let shape = xv.shape().to_vec();
        self.push(FeatureArray::new(shape, vals).unwrap(), op, &[x])
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.map(x, |v| v * c, Op::Scale(x, c))
    }

    /// `x * sigmoid(x)`.
    pub fn silu(&mut self, x: Var) -> Var {
        self.map(x, |v| v * sigmoid(v), Op::Silu(x))
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.map(x, |v| v.clamp(lo, hi), Op::Clamp { x, lo, hi })
    }

    /// Row-wise layer normalisation with affine `gamma`, `beta` (`1 x D`).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let (n, d) = self.dims(x);
        let xs = self.vals(x);
        let g = self.vals(gamma);
        let b = self.vals(beta);
        let mut out = vec![0.0; n * d];
        let mut xhat = vec![0.0; n * d];
        let mut inv_std = vec![0.0; n];
        for r in 0..n {
            let row = &xs[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std[r] = is;
            for c in 0..d {
                let h = (row[c] - mean) * is;
                xhat[r * d + c] = h;
                out[r * d + c] = h * g[c] + b[c];
            }
        }
        let op = Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
        };
        self.push(FeatureArray::from_rows(n, d, out), op, &[x, gamma, beta])
    }

    /// Sparse multi-head attention; see [`attention`](super::attention).
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        rel: Option<Var>,
        edges: Arc<EdgeSet>,
        heads: usize,
    ) -> Var {
        let (nq, d) = self.dims(q);
        assert_eq!(edges.n_queries(), nq, "edge set rows vs queries");
        assert_eq!(self.dims(k).1, d);
        assert_eq!(self.dims(v), self.dims(k));
        if let Some(mk) = edges.max_key() {
            assert!(mk < self.dims(k).0, "edge key out of range");
        }
        assert_eq!(rel.is_some(), edges.has_rel(), "relational rows vs edge set");
        if let (Some(r), Some(mr)) = (rel, edges.max_rel()) {
            assert_eq!(self.dims(r).1, d);
            assert!(mr < self.dims(r).0, "relational index out of range");
        }
        let (out, weights) = attention::forward(
            self.vals(q),
            self.vals(k),
            self.vals(v),
            rel.map(|r| self.vals(r)),
            d,
            heads,
            &edges,
        );
        let inputs: Vec<Var> = [Some(q), Some(k), Some(v), rel].into_iter().flatten().collect();
        let op = Op::Attention {
            q,
            k,
            v,
            rel,
            edges,
            heads,
            weights,
        };
        self.push(FeatureArray::from_rows(nq, d, out), op, &inputs)
    }

    pub fn gather_rows(&mut self, x: Var, idx: Vec<usize>) -> Var {
        let (n, d) = self.dims(x);
        let xs = self.vals(x);
        let mut out = Vec::with_capacity(idx.len() * d);
        for &i in &idx {
            assert!(i < n, "gather_rows index {i} >= {n}");
            out.extend_from_slice(&xs[i * d..(i + 1) * d]);
        }
        let rows = idx.len();
        self.push(FeatureArray::from_rows(rows, d, out), Op::GatherRows { x, idx }, &[x])
    }

    pub fn gather_cols(&mut self, x: Var, idx: Vec<usize>) -> Var {
        let (n, d) = self.dims(x);
        let xs = self.vals(x);
        let mut out = Vec::with_capacity(n * idx.len());
        for r in 0..n {
            for &c in &idx {
                assert!(c < d);
                out.push(xs[r * d + c]);
            }
        }
        let cols = idx.len();
        self.push(FeatureArray::from_rows(n, cols, out), Op::GatherCols { x, idx }, &[x])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let n = self.dims(parts[0]).0;
        let total: usize = parts.iter().map(|&p| self.dims(p).1).sum();
        let mut out = Vec::with_capacity(n * total);
        for r in 0..n {
            for &p in parts {
                let (pn, pd) = self.dims(p);
                assert_eq!(pn, n, "concat_cols row mismatch");
                out.extend_from_slice(&self.vals(p)[r * pd..(r + 1) * pd]);
            }
        }
        self.push(
            FeatureArray::from_rows(n, total, out),
            Op::ConcatCols(parts.to_vec()),
            parts,
        )
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let d = self.dims(parts[0]).1;
        let mut out = Vec::new();
        for &p in parts {
            assert_eq!(self.dims(p).1, d, "concat_rows width mismatch");
            out.extend_from_slice(self.vals(p));
        }
        let n = out.len() / d.max(1);
        self.push(
            FeatureArray::from_rows(n, d, out),
            Op::ConcatRows(parts.to_vec()),
            parts,
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let value = self.nodes[x.0].value.clone().reshaped(shape).expect("reshape");
        self.push(value, Op::Reshape(x), &[x])
    }

    /// Row `r` comes from `a` when `take_a[r]`, else from `b`.
    pub fn select_rows(&mut self, a: Var, b: Var, take_a: Vec<bool>) -> Var {
        let (n, d) = self.dims(a);
        assert_eq!(self.dims(b), (n, d));
        assert_eq!(take_a.len(), n);
        let (av, bv) = (self.vals(a), self.vals(b));
        let mut out = Vec::with_capacity(n * d);
        for (r, &t) in take_a.iter().enumerate() {
            let src = if t { av } else { bv };
            out.extend_from_slice(&src[r * d..(r + 1) * d]);
        }
        self.push(
            FeatureArray::from_rows(n, d, out),
            Op::SelectRows { a, b, take_a },
            &[a, b],
        )
    }

    /// Per-column max over each group of rows. Groups must be non-empty.
    pub fn max_pool(&mut self, x: Var, groups: &[Vec<usize>]) -> Var {
        let (_, d) = self.dims(x);
        let xs = self.vals(x);
        let mut out = Vec::with_capacity(groups.len() * d);
        let mut argmax = Vec::with_capacity(groups.len() * d);
        for g in groups {
            assert!(!g.is_empty(), "max_pool over an empty group");
            for c in 0..d {
                let mut best = g[0];
                for &r in &g[1..] {
                    if xs[r * d + c] > xs[best * d + c] {
                        best = r;
                    }
                }
                argmax.push(best);
                out.push(xs[best * d + c]);
            }
        }
        self.push(
            FeatureArray::from_rows(groups.len(), d, out),
            Op::MaxPool { x, argmax },
            &[x],
        )
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, x: Var) -> Var {
        let (n, d) = self.dims(x);
        let xs = self.vals(x);
        let mut out = vec![0.0; n * d];
        for r in 0..n {
            let row = &xs[r * d..(r + 1) * d];
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for c in 0..d {
                let e = (row[c] - m).exp();
                out[r * d + c] = e;
                z += e;
            }
            for c in 0..d {
                out[r * d + c] /= z;
            }
        }
        let shape = self.nodes[x.0].value.shape().to_vec();
        self.push(FeatureArray::new(shape, out).unwrap(), Op::Softmax(x), &[x])
    }

    /// Running sum along each row over interleaved `(x, y)` pairs.
    pub fn cumsum_pairs(&mut self, x: Var) -> Var {
        let (n, d) = self.dims(x);
        assert!(d % 2 == 0);
        let xs = self.vals(x);
        let mut out = vec![0.0; n * d];
        for r in 0..n {
            let (mut sx, mut sy) = (0.0, 0.0);
            for t in 0..d / 2 {
                sx += xs[r * d + 2 * t];
                sy += xs[r * d + 2 * t + 1];
                out[r * d + 2 * t] = sx;
                out[r * d + 2 * t + 1] = sy;
            }
        }
        self.push(FeatureArray::from_rows(n, d, out), Op::CumSumPairs(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.vals(x).iter().sum();
        self.push(FeatureArray::scalar(s), Op::Sum(x), &[x])
    }

    /// Gaussian negative log-likelihood summed over `points` and divided by
    /// `n_agents`. `pos` and `log_var` are `rows x 2N` with interleaved pairs.
    pub fn nll(&mut self, pos: Var, log_var: Var, points: Vec<NllPoint>, n_agents: usize) -> Var {
        let (_, d) = self.dims(pos);
        assert_eq!(self.dims(pos), self.dims(log_var));
        let (p, lv) = (self.vals(pos), self.vals(log_var));
        let ln2pi = (2.0 * std::f64::consts::PI).ln();
        let mut total = 0.0;
        for pt in &points {
            let base = pt.row * d + 2 * pt.step;
            for c in 0..2 {
                let r = p[base + c] - pt.target[c];
                total += 0.5 * lv[base + c] + 0.5 * r * r * (-lv[base + c]).exp();
            }
            total += ln2pi;
        }
        let loss = if n_agents == 0 { 0.0 } else { total / n_agents as f64 };
        let op = Op::Nll {
            pos,
            log_var,
            points,
            n_agents,
        };
        self.push(FeatureArray::scalar(loss), op, &[pos, log_var])
    }

    /// Mean of `-ln(max(p[row, col], PROB_FLOOR))` over `targets`.
    pub fn cross_entropy(&mut self, probs: Var, targets: Vec<(usize, usize)>) -> Var {
        let (_, d) = self.dims(probs);
        let p = self.vals(probs);
        let n = targets.len();
        let loss = if n == 0 {
            0.0
        } else {
            targets
                .iter()
                .map(|&(r, c)| -p[r * d + c].max(PROB_FLOOR).ln())
                .sum::<f64>()
                / n as f64
        };
        self.push(
            FeatureArray::scalar(loss),
            Op::CrossEntropy { probs, targets },
            &[probs],
        )
    }

    /// Mean over rows of the distance between `x` and a constant target.
    /// The target receives no gradient.
    pub fn distill(&mut self, x: Var, target: Vec<f64>, squared: bool) -> Var {
        let (n, d) = self.dims(x);
        assert_eq!(target.len(), n * d, "distillation target shape");
        let xs = self.vals(x);
        let mut total = 0.0;
        for r in 0..n {
            let sq: f64 = (0..d)
                .map(|c| {
                    let e = xs[r * d + c] - target[r * d + c];
                    e * e
                })
                .sum();
            total += if squared { sq } else { sq.sqrt() };
        }
        let loss = if n == 0 { 0.0 } else { total / n as f64 };
        self.push(
            FeatureArray::scalar(loss),
            Op::Distill { x, target, squared },
            &[x],
        )
    }

    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Var {
        let s = terms.iter().map(|&(v, w)| w * self.scalar(v)).sum();
        let inputs: Vec<Var> = terms.iter().map(|t| t.0).collect();
        self.push(FeatureArray::scalar(s), Op::WeightedSum(terms.to_vec()), &inputs)
    }

    /// Exact reverse-mode gradients of the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.nodes[loss.0].value.len(), 1, "backward needs a scalar");
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let mut out = Gradients {
            params: vec![None; self.params.len()],
            inputs: Vec::new(),
        };
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.backprop_node(node, Var(i), g, &mut grads, &mut out);
        }
        out
    }

    fn backprop_node(
        &self,
        node: &Node,
        this: Var,
        g: Vec<f64>,
        grads: &mut [Option<Vec<f64>>],
        out: &mut Gradients,
    ) {
        let nodes = &self.nodes;
        let wants = |v: Var| nodes[v.0].needs_grad;
        macro_rules! slot {
            ($v:expr) => {{
                let v: Var = $v;
                grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()])
            }};
        }
        match &node.op {
            Op::Constant => {}
            Op::Variable => out.inputs.push((this, g)),
            Op::Param(id) => {
                let slot = &mut out.params[id.index()];
                match slot {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    None => *slot = Some(g),
                }
            }
            Op::Affine { x, w, b } => {
                let (n, a) = self.dims(*x);
                let wb = self.dims(*w).1;
                if wants(*x) {
                    let wv = self.vals(*w);
                    gemm(n, wb, a, &g, (wb, 1), wv, (1, wb), 1.0, slot!(*x));
                }
                if wants(*w) {
                    let xv = self.vals(*x);
                    gemm(a, n, wb, xv, (1, a), &g, (wb, 1), 1.0, slot!(*w));
                }
                if let Some(b) = b {
                    if wants(*b) {
                        let s = slot!(*b);
                        for row in g.chunks(wb) {
                            for (acc, v) in s.iter_mut().zip(row) {
                                *acc += v;
                            }
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if wants(v) {
                        slot!(v).iter_mut().zip(&g).for_each(|(s, gg)| *s += gg);
                    }
                }
            }
            Op::Sub(a, b) => {
                if wants(*a) {
                    slot!(*a).iter_mut().zip(&g).for_each(|(s, gg)| *s += gg);
                }
                if wants(*b) {
                    slot!(*b).iter_mut().zip(&g).for_each(|(s, gg)| *s -= gg);
                }
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    let bv = self.vals(*b);
                    let s = slot!(*a);
                    for i in 0..g.len() {
                        s[i] += g[i] * bv[i];
                    }
                }
                if wants(*b) {
                    let av = self.vals(*a);
                    let s = slot!(*b);
                    for i in 0..g.len() {
                        s[i] += g[i] * av[i];
                    }
                }
            }
            Op::Scale(x, c) => {
                slot!(*x).iter_mut().zip(&g).for_each(|(s, gg)| *s += c * gg);
            }
            Op::Silu(x) => {
                let xv = self.vals(*x);
                let s = slot!(*x);
                for i in 0..g.len() {
                    let sg = sigmoid(xv[i]);
                    s[i] += g[i] * sg * (1.0 + xv[i] * (1.0 - sg));
                }
            }
            Op::Clamp { x, lo, hi } => {
                let xv = self.vals(*x);
                let s = slot!(*x);
                for i in 0..g.len() {
                    if xv[i] >= *lo && xv[i] <= *hi {
                        s[i] += g[i];
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (n, d) = self.dims(*x);
                let gm = self.vals(*gamma);
                if wants(*gamma) {
                    let s = slot!(*gamma);
                    for r in 0..n {
                        for c in 0..d {
                            s[c] += g[r * d + c] * xhat[r * d + c];
                        }
                    }
                }
                if wants(*beta) {
                    let s = slot!(*beta);
                    for r in 0..n {
                        for c in 0..d {
                            s[c] += g[r * d + c];
                        }
                    }
                }
                if wants(*x) {
                    let s = slot!(*x);
                    let df = d as f64;
                    for r in 0..n {
                        let mut mean_g = 0.0;
                        let mut mean_gx = 0.0;
                        for c in 0..d {
                            let gh = g[r * d + c] * gm[c];
                            mean_g += gh;
                            mean_gx += gh * xhat[r * d + c];
                        }
                        mean_g /= df;
                        mean_gx /= df;
                        for c in 0..d {
                            let gh = g[r * d + c] * gm[c];
                            s[r * d + c] += inv_std[r] * (gh - mean_g - xhat[r * d + c] * mean_gx);
                        }
                    }
                }
            }
            Op::Attention {
                q,
                k,
                v,
                rel,
                edges,
                heads,
                weights,
            } => {
                let d = self.dims(*q).1;
                let mut dq = wants(*q).then(|| vec![0.0; nodes[q.0].value.len()]);
                let mut dk = wants(*k).then(|| vec![0.0; nodes[k.0].value.len()]);
                let mut dv = wants(*v).then(|| vec![0.0; nodes[v.0].value.len()]);
                let mut drel = rel
                    .filter(|r| wants(*r))
                    .map(|r| vec![0.0; nodes[r.0].value.len()]);
                attention::backward(
                    self.vals(*q),
                    self.vals(*k),
                    self.vals(*v),
                    rel.map(|r| self.vals(r)),
                    d,
                    *heads,
                    edges,
                    weights,
                    &g,
                    AttentionGrads {
                        dq: dq.as_deref_mut(),
                        dk: dk.as_deref_mut(),
                        dv: dv.as_deref_mut(),
                        drel: drel.as_deref_mut(),
                    },
                );
                let pairs = [(Some(*q), dq), (Some(*k), dk), (Some(*v), dv), (*rel, drel)];
                for (var, gr) in pairs {
                    if let (Some(var), Some(gr)) = (var, gr) {
                        slot!(var).iter_mut().zip(&gr).for_each(|(s, x)| *s += x);
                    }
                }
            }
            Op::GatherRows { x, idx } => {
                let d = self.dims(*x).1;
                let s = slot!(*x);
                for (r, &i) in idx.iter().enumerate() {
                    for c in 0..d {
                        s[i * d + c] += g[r * d + c];
                    }
                }
            }
            Op::GatherCols { x, idx } => {
                let (n, d) = self.dims(*x);
                let m = idx.len();
                let s = slot!(*x);
                for r in 0..n {
                    for (j, &c) in idx.iter().enumerate() {
                        s[r * d + c] += g[r * m + j];
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let n = self.dims(this).0;
                let total = self.dims(this).1;
                let mut off = 0;
                for &p in parts {
                    let pd = self.dims(p).1;
                    if wants(p) {
                        let s = slot!(p);
                        for r in 0..n {
                            for c in 0..pd {
                                s[r * pd + c] += g[r * total + off + c];
                            }
                        }
                    }
                    off += pd;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = nodes[p.0].value.len();
                    if wants(p) {
                        slot!(p).iter_mut().zip(&g[off..off + len]).for_each(|(s, x)| *s += x);
                    }
                    off += len;
                }
            }
            Op::Reshape(x) => {
                slot!(*x).iter_mut().zip(&g).for_each(|(s, gg)| *s += gg);
            }
            Op::SelectRows { a, b, take_a } => {
                let d = self.dims(*a).1;
                for (var, pick) in [(*a, true), (*b, false)] {
                    if wants(var) {
                        let s = slot!(var);
                        for (r, &t) in take_a.iter().enumerate() {
                            if t == pick {
                                for c in 0..d {
                                    s[r * d + c] += g[r * d + c];
                                }
                            }
                        }
                    }
                }
            }
            Op::MaxPool { x, argmax } => {
                let d = self.dims(*x).1;
                let s = slot!(*x);
                for (j, &src) in argmax.iter().enumerate() {
                    let c = j % d;
                    s[src * d + c] += g[j];
                }
            }
            Op::Softmax(x) => {
                let (n, d) = self.dims(this);
                let y = node.value.values();
                let s = slot!(*x);
                for r in 0..n {
                    let dot: f64 = (0..d).map(|c| g[r * d + c] * y[r * d + c]).sum();
                    for c in 0..d {
                        s[r * d + c] += y[r * d + c] * (g[r * d + c] - dot);
                    }
                }
            }
            Op::CumSumPairs(x) => {
                let (n, d) = self.dims(*x);
                let s = slot!(*x);
                for r in 0..n {
                    let (mut ax, mut ay) = (0.0, 0.0);
                    for t in (0..d / 2).rev() {
                        ax += g[r * d + 2 * t];
                        ay += g[r * d + 2 * t + 1];
                        s[r * d + 2 * t] += ax;
                        s[r * d + 2 * t + 1] += ay;
                    }
                }
            }
            Op::Sum(x) => {
                slot!(*x).iter_mut().for_each(|s| *s += g[0]);
            }
            Op::Nll {
                pos,
                log_var,
                points,
                n_agents,
            } => {
                if *n_agents == 0 {
                    return;
                }
                let scale = g[0] / *n_agents as f64;
                let d = self.dims(*pos).1;
                let (p, lv) = (self.vals(*pos), self.vals(*log_var));
                let mut gp = vec![0.0; p.len()];
                let mut glv = vec![0.0; p.len()];
                for pt in points {
                    let base = pt.row * d + 2 * pt.step;
                    for c in 0..2 {
                        let r = p[base + c] - pt.target[c];
                        let prec = (-lv[base + c]).exp();
                        gp[base + c] += scale * r * prec;
                        glv[base + c] += scale * 0.5 * (1.0 - r * r * prec);
                    }
                }
                if wants(*pos) {
                    slot!(*pos).iter_mut().zip(&gp).for_each(|(s, x)| *s += x);
                }
                if wants(*log_var) {
                    slot!(*log_var).iter_mut().zip(&glv).for_each(|(s, x)| *s += x);
                }
            }
            Op::CrossEntropy { probs, targets } => {
                if targets.is_empty() {
                    return;
                }
                let d = self.dims(*probs).1;
                let n = targets.len() as f64;
                let p = self.vals(*probs);
                let s = slot!(*probs);
                for &(r, c) in targets {
                    let pv = p[r * d + c];
                    if pv > PROB_FLOOR {
                        s[r * d + c] -= g[0] / (n * pv);
                    }
                }
            }
            Op::Distill { x, target, squared } => {
                let (n, d) = self.dims(*x);
                if n == 0 {
                    return;
                }
                let xs = self.vals(*x);
                let s = slot!(*x);
                let scale = g[0] / n as f64;
                for r in 0..n {
                    let diff: Vec<f64> = (0..d).map(|c| xs[r * d + c] - target[r * d + c]).collect();
                    if *squared {
                        for c in 0..d {
                            s[r * d + c] += scale * 2.0 * diff[c];
                        }
                    } else {
                        let norm = diff.iter().map(|e| e * e).sum::<f64>().sqrt();
                        if norm > 0.0 {
                            for c in 0..d {
                                s[r * d + c] += scale * diff[c] / norm;
                            }
                        }
                    }
                }
            }
            Op::WeightedSum(terms) => {
                for &(v, w) in terms {
                    if wants(v) {
                        slot!(v)[0] += w * g[0];
                    }
                }
            }
        }
    }
}
