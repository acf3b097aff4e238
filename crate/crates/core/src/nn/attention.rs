//! Multi-head scaled dot-product attention over sparse key sets.
//!
//! Every attention site in the model is masked (causal, radius, stride), so
//! the kernel works on an explicit edge list: each query row owns the keys it
//! may attend to, optionally paired with a row of a relational embedding that
//! is added to both the key and the value of that edge. A query row without
//! edges is inactive and produces zeros.

use super::array::FeatureArray;
use crate::error::{Error, Result};

/// Per-query admissible key lists in compressed-row form.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeSet {
    offsets: Vec<usize>,
    keys: Vec<usize>,
    rel: Option<Vec<usize>>,
}

impl EdgeSet {
    pub fn builder(with_rel: bool) -> EdgeSetBuilder {
        EdgeSetBuilder {
            set: EdgeSet {
                offsets: vec![0],
                keys: Vec::new(),
                rel: with_rel.then(Vec::new),
            },
        }
    }

    pub fn n_queries(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn n_edges(&self) -> usize {
        self.keys.len()
    }

    pub fn keys(&self, q: usize) -> &[usize] {
        &self.keys[self.offsets[q]..self.offsets[q + 1]]
    }

    pub fn rel(&self, q: usize) -> Option<&[usize]> {
        self.rel
            .as_ref()
            .map(|r| &r[self.offsets[q]..self.offsets[q + 1]])
    }

    pub fn has_rel(&self) -> bool {
        self.rel.is_some()
    }

    pub fn is_active(&self, q: usize) -> bool {
        self.offsets[q + 1] > self.offsets[q]
    }

    pub fn active_rows(&self) -> Vec<bool> {
        (0..self.n_queries()).map(|q| self.is_active(q)).collect()
    }

    pub fn max_key(&self) -> Option<usize> {
        self.keys.iter().copied().max()
    }

    pub fn max_rel(&self) -> Option<usize> {
        self.rel.as_ref().and_then(|r| r.iter().copied().max())
    }

    fn range(&self, q: usize) -> std::ops::Range<usize> {
        self.offsets[q]..self.offsets[q + 1]
    }
}

pub struct EdgeSetBuilder {
    set: EdgeSet,
}

impl EdgeSetBuilder {
    /// Adds an edge from the current query to `key`.
    pub fn push(&mut self, key: usize, rel: Option<usize>) {
        self.set.keys.push(key);
        match (&mut self.set.rel, rel) {
            (Some(r), Some(i)) => r.push(i),
            (None, None) => {}
            _ => panic!("edge relational index must match the edge set kind"),
        }
    }

    /// Closes the current query row.
    pub fn next_query(&mut self) {
        self.set.offsets.push(self.set.keys.len());
    }

    pub fn finish(self) -> EdgeSet {
        self.set
    }
}

/// Dense boolean admissibility matrix (rows = queries, cols = keys).
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMask {
    pub n_queries: usize,
    pub n_keys: usize,
    pub allowed: Vec<bool>,
    /// Rows flagged inactive produce zero output instead of an error.
    pub inactive: Vec<bool>,
}

impl AttentionMask {
    pub fn full(n_queries: usize, n_keys: usize) -> Self {
        Self::from_fn(n_queries, n_keys, |_, _| true)
    }

    pub fn from_fn(n_queries: usize, n_keys: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut allowed = Vec::with_capacity(n_queries * n_keys);
        for q in 0..n_queries {
            for k in 0..n_keys {
                allowed.push(f(q, k));
            }
        }
        AttentionMask {
            n_queries,
            n_keys,
            allowed,
            inactive: vec![false; n_queries],
        }
    }

    /// Lower-triangular mask: query `t` sees keys `0..=t`.
    pub fn causal(n: usize) -> Self {
        Self::from_fn(n, n, |q, k| k <= q)
    }

    pub fn allows(&self, q: usize, k: usize) -> bool {
        self.allowed[q * self.n_keys + k]
    }

    /// Edge set with relational index `q * n_keys + k` when `with_rel`.
    pub fn to_edges(&self, with_rel: bool) -> Result<EdgeSet> {
        let mut b = EdgeSet::builder(with_rel);
        for q in 0..self.n_queries {
            let mut any = false;
            for k in 0..self.n_keys {
                if self.allows(q, k) && !self.inactive[q] {
                    b.push(k, with_rel.then_some(q * self.n_keys + k));
                    any = true;
                }
            }
            if !any && !self.inactive[q] {
                return Err(Error::EmptyAttentionRow(q));
            }
            b.next_query();
        }
        Ok(b.finish())
    }
}

/// Masked multi-head attention on whole arrays.
///
/// `q` is `n_q x D`, `k` and `v` are `n_k x D`; `rel_emb`, when given, is
/// `n_q x n_k x D` and is added to the key and value of every pair. There are
/// no learned projections here; see `InteractionBlock` for the full layer.
pub fn attention(
    q: &FeatureArray,
    k: &FeatureArray,
    v: &FeatureArray,
    mask: &AttentionMask,
    rel_emb: Option<&FeatureArray>,
    heads: usize,
) -> Result<FeatureArray> {
    let d = q.cols();
    if k.cols() != d || v.cols() != d {
        return Err(Error::Shape(format!(
            "attention widths differ: q {d}, k {}, v {}",
            k.cols(),
            v.cols()
        )));
    }
    if k.rows() != v.rows() {
        return Err(Error::Shape("keys and values differ in count".into()));
    }
    if mask.n_queries != q.rows() || mask.n_keys != k.rows() {
        return Err(Error::Shape(format!(
            "mask is {}x{} for {} queries and {} keys",
            mask.n_queries,
            mask.n_keys,
            q.rows(),
            k.rows()
        )));
    }
    if heads == 0 || !d.is_multiple_of(heads) {
        return Err(Error::Shape(format!("{heads} heads do not divide width {d}")));
    }
    if let Some(r) = rel_emb {
        if r.len() != q.rows() * k.rows() * d {
            return Err(Error::Shape(format!(
                "relational embedding has shape {:?}, expected [{}, {}, {d}]",
                r.shape(),
                q.rows(),
                k.rows()
            )));
        }
    }
    let edges = mask.to_edges(rel_emb.is_some())?;
    let (out, _) = forward(
        q.values(),
        k.values(),
        v.values(),
        rel_emb.map(FeatureArray::values),
        d,
        heads,
        &edges,
    );
    Ok(FeatureArray::from_rows(q.rows(), d, out))
}

/// Returns the output rows and the softmax weights laid out `[edge][head]`.
pub(crate) fn forward(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    rel: Option<&[f64]>,
    d: usize,
    heads: usize,
    edges: &EdgeSet,
) -> (Vec<f64>, Vec<f64>) {
    let nq = edges.n_queries();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = vec![0.0; nq * d];
    let mut weights = vec![0.0; edges.n_edges() * heads];
    let mut scores: Vec<f64> = Vec::new();
    for qi in 0..nq {
        let range = edges.range(qi);
        if range.is_empty() {
            continue;
        }
        let keys = edges.keys(qi);
        let rels = edges.rel(qi);
        for h in 0..heads {
            let off = h * dh;
            let qv = &q[qi * d + off..qi * d + off + dh];
            scores.clear();
            for (j, &key) in keys.iter().enumerate() {
                let kv = &k[key * d + off..key * d + off + dh];
                let mut s = 0.0;
                match (rel, rels) {
                    (Some(r), Some(ri)) => {
                        let rv = &r[ri[j] * d + off..ri[j] * d + off + dh];
                        for c in 0..dh {
                            s += qv[c] * (kv[c] + rv[c]);
                        }
                    }
                    _ => {
                        for c in 0..dh {
                            s += qv[c] * kv[c];
                        }
                    }
                }
                scores.push(s * scale);
            }
            let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for s in scores.iter_mut() {
                *s = (*s - max).exp();
                z += *s;
            }
            let o = &mut out[qi * d + off..qi * d + off + dh];
            for (j, &key) in keys.iter().enumerate() {
                let w = scores[j] / z;
                weights[(range.start + j) * heads + h] = w;
                let vv = &v[key * d + off..key * d + off + dh];
                for c in 0..dh {
                    o[c] += w * vv[c];
                }
                if let (Some(r), Some(ri)) = (rel, rels) {
                    let rv = &r[ri[j] * d + off..ri[j] * d + off + dh];
                    for c in 0..dh {
                        o[c] += w * rv[c];
                    }
                }
            }
        }
    }
    (out, weights)
}

pub(crate) struct AttentionGrads<'a> {
    pub dq: Option<&'a mut [f64]>,
    pub dk: Option<&'a mut [f64]>,
    pub dv: Option<&'a mut [f64]>,
    pub drel: Option<&'a mut [f64]>,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn backward(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    rel: Option<&[f64]>,
    d: usize,
    heads: usize,
    edges: &EdgeSet,
    weights: &[f64],
    dout: &[f64],
    mut g: AttentionGrads<'_>,
) {
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut da: Vec<f64> = Vec::new();
    let mut ds: Vec<f64> = Vec::new();
    for qi in 0..edges.n_queries() {
        let range = edges.range(qi);
        if range.is_empty() {
            continue;
        }
        let keys = edges.keys(qi);
        let rels = edges.rel(qi);
        for h in 0..heads {
            let off = h * dh;
            let go = &dout[qi * d + off..qi * d + off + dh];
            let qv = &q[qi * d + off..qi * d + off + dh];
            da.clear();
            for (j, &key) in keys.iter().enumerate() {
                let vv = &v[key * d + off..key * d + off + dh];
                let mut a = 0.0;
                for c in 0..dh {
                    a += go[c] * vv[c];
                }
                if let (Some(r), Some(ri)) = (rel, rels) {
                    let rv = &r[ri[j] * d + off..ri[j] * d + off + dh];
                    for c in 0..dh {
                        a += go[c] * rv[c];
                    }
                }
                da.push(a);
            }
            let w = |j: usize| weights[(range.start + j) * heads + h];
            let mean: f64 = (0..keys.len()).map(|j| w(j) * da[j]).sum();
            ds.clear();
            ds.extend((0..keys.len()).map(|j| w(j) * (da[j] - mean) * scale));

            for (j, &key) in keys.iter().enumerate() {
                let wj = w(j);
                let sj = ds[j];
                let rv = match (rel, rels) {
                    (Some(r), Some(ri)) => Some(&r[ri[j] * d + off..ri[j] * d + off + dh]),
                    _ => None,
                };
                if let Some(dq) = g.dq.as_deref_mut() {
                    let kv = &k[key * d + off..key * d + off + dh];
                    let dqv = &mut dq[qi * d + off..qi * d + off + dh];
                    for c in 0..dh {
                        dqv[c] += sj * (kv[c] + rv.map_or(0.0, |r| r[c]));
                    }
                }
                if let Some(dk) = g.dk.as_deref_mut() {
                    let dkv = &mut dk[key * d + off..key * d + off + dh];
                    for c in 0..dh {
                        dkv[c] += sj * qv[c];
                    }
                }
                if let Some(dv) = g.dv.as_deref_mut() {
                    let dvv = &mut dv[key * d + off..key * d + off + dh];
                    for c in 0..dh {
                        dvv[c] += wj * go[c];
                    }
                }
                if let (Some(dr), Some(ri)) = (g.drel.as_deref_mut(), rels) {
                    let drv = &mut dr[ri[j] * d + off..ri[j] * d + off + dh];
                    for c in 0..dh {
                        drv[c] += sj * qv[c] + wj * go[c];
                    }
                }
            }
        }
    }
}
