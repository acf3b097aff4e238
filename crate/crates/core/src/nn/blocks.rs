//! Parameterised layers built on the tape.

use std::sync::Arc;

use rand::Rng;

use super::array::FeatureArray;
use super::attention::EdgeSet;
use super::graph::{Graph, Var};
use super::params::{Init, ParamId, ParameterSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new(ps: &mut ParameterSet, name: &str, din: usize, dout: usize, rng: &mut impl Rng) -> Self {
        Linear {
            weight: ps.add(format!("{name}.weight"), &[din, dout], Init::FanIn(din), rng),
            bias: ps.add(format!("{name}.bias"), &[1, dout], Init::Const(0.0), rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        g.affine(x, w, Some(b))
    }
}

/// Two affine layers with a SiLU in between.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub hidden: Linear,
    pub out: Linear,
}

impl Mlp {
    pub fn new(
        ps: &mut ParameterSet,
        name: &str,
        din: usize,
        dhidden: usize,
        dout: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Mlp {
            hidden: Linear::new(ps, &format!("{name}.hidden"), din, dhidden, rng),
            out: Linear::new(ps, &format!("{name}.out"), dhidden, dout, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let h = self.hidden.forward(g, x);
        let h = g.silu(h);
        self.out.forward(g, h)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(ps: &mut ParameterSet, name: &str, d: usize, rng: &mut impl Rng) -> Self {
        LayerNorm {
            gamma: ps.add(format!("{name}.gamma"), &[1, d], Init::Const(1.0), rng),
            beta: ps.add(format!("{name}.beta"), &[1, d], Init::Const(0.0), rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let gm = g.param(self.gamma);
        let bt = g.param(self.beta);
        g.layer_norm(x, gm, bt)
    }
}

/// Attention layer with residual, layer norm and feed-forward network:
///
/// ```text
/// f   = LN(q + Attention(q, kv, kv))
/// out = LN(f + FFN(f))
/// ```
///
/// Query rows with no admissible key pass through unchanged.
#[derive(Debug, Clone)]
pub struct InteractionBlock {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub norm_attn: LayerNorm,
    pub ffn: Mlp,
    pub norm_ffn: LayerNorm,
    pub heads: usize,
}

impl InteractionBlock {
    pub fn new(
        ps: &mut ParameterSet,
        name: &str,
        d: usize,
        heads: usize,
        ffn_hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        InteractionBlock {
            wq: Linear::new(ps, &format!("{name}.q"), d, d, rng),
            wk: Linear::new(ps, &format!("{name}.k"), d, d, rng),
            wv: Linear::new(ps, &format!("{name}.v"), d, d, rng),
            wo: Linear::new(ps, &format!("{name}.o"), d, d, rng),
            norm_attn: LayerNorm::new(ps, &format!("{name}.norm_attn"), d, rng),
            ffn: Mlp::new(ps, &format!("{name}.ffn"), d, ffn_hidden, d, rng),
            norm_ffn: LayerNorm::new(ps, &format!("{name}.norm_ffn"), d, rng),
            heads,
        }
    }

    /// `rel` rows are added to the projected keys and values, indexed by the
    /// edge set's relational indices.
    pub fn forward(
        &self,
        g: &mut Graph,
        query: Var,
        context: Var,
        rel: Option<Var>,
        edges: &Arc<EdgeSet>,
    ) -> Var {
        let q = self.wq.forward(g, query);
        let k = self.wk.forward(g, context);
        let v = self.wv.forward(g, context);
        let a = g.attention(q, k, v, rel, Arc::clone(edges), self.heads);
        let a = self.wo.forward(g, a);
        let f = g.add(query, a);
        let f = self.norm_attn.forward(g, f);
        let h = self.ffn.forward(g, f);
        let out = g.add(f, h);
        let out = self.norm_ffn.forward(g, out);
        let active = edges.active_rows();
        if active.iter().all(|&a| a) {
            out
        } else {
            g.select_rows(out, query, active)
        }
    }
}

/// Max over the valid points of each polyline.
///
/// `features` is `N_M x L x D`, `mask` is `N_M x L`.
pub fn maxpool_polyline(features: &FeatureArray, mask: &[bool]) -> Result<FeatureArray> {
    let shape = features.shape();
    if shape.len() != 3 || shape[0] * shape[1] != mask.len() {
        return Err(Error::Shape(format!(
            "maxpool expects [N_M, L, D] features and N_M*L mask entries, got {shape:?} and {}",
            mask.len()
        )));
    }
    let (n, l, d) = (shape[0], shape[1], shape[2]);
    let mut out = Vec::with_capacity(n * d);
    for p in 0..n {
        let valid: Vec<usize> = (0..l).filter(|&i| mask[p * l + i]).collect();
        if valid.is_empty() {
            return Err(Error::EmptyPolyline(p));
        }
        for c in 0..d {
            let m = valid
                .iter()
                .map(|&i| features.values()[(p * l + i) * d + c])
                .fold(f64::NEG_INFINITY, f64::max);
            out.push(m);
        }
    }
    FeatureArray::new(vec![n, d], out)
}
