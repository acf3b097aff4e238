//! Iterative decoder: `decode_iters` rounds of attention over the trajectory
//! queries, each followed by a read-out head emitting `step_len` future points
//! per mode. Positions are recovered by a cumulative sum from each agent's
//! last observed position.

use rand::Rng;

use crate::config::ModelConfig;
use crate::encoder::Encoded;
use crate::error::{Error, Result};
use crate::inputs::SceneInputs;
use crate::nn::{Graph, Init, InteractionBlock, Mlp, ParamId, ParameterSet, Var};

/// Bounds on predicted log-variances.
pub const LOG_VAR_MIN: f64 = -10.0;
pub const LOG_VAR_MAX: f64 = 10.0;

#[derive(Debug, Clone)]
pub struct DecoderLayer {
    pub query_map: Option<InteractionBlock>,
    pub query_query: Option<InteractionBlock>,
}

#[derive(Debug, Clone)]
pub struct Decoder {
    pub cfg: ModelConfig,
    pub iter_embed: Option<ParamId>,
    pub query_map_rel: Option<Mlp>,
    pub layers: Vec<DecoderLayer>,
    pub head: Mlp,
    pub score: Mlp,
}

/// One decoder iteration on the tape.
#[derive(Debug, Clone, Copy)]
pub struct DecoderStep {
    /// `N_A * K x 2 step_len` interleaved `(dx, dy)`.
    pub deltas: Var,
    /// `N_A * K x 2 step_len` clamped log-variances.
    pub log_vars: Var,
    /// Query features fed to the read-out head, `N_A * K x D`.
    pub query_feats: Var,
}

/// Complete decoder output on the tape.
#[derive(Debug, Clone)]
pub struct Decoded {
    pub steps: Vec<DecoderStep>,
    /// `N_A * K x 2 N_T`.
    pub deltas: Var,
    pub log_vars: Var,
    /// Absolute positions, `N_A * K x 2 N_T`.
    pub positions: Var,
    /// `N_A x K` mode probabilities.
    pub confidences: Var,
}

impl Decoder {
    pub fn new(cfg: &ModelConfig, with_map: bool, ps: &mut ParameterSet, rng: &mut impl Rng) -> Self {
        let d = cfg.d_model;
        let iter_embed = cfg
            .ablation
            .iter_embedding
            .then(|| ps.add("dec.iter_embed", &[cfg.decode_iters, d], Init::Normal(0.1), rng));
        let query_map_rel = with_map.then(|| Mlp::new(ps, "dec.query_map_rel", 4, d, d, rng));
        let mut layers = Vec::with_capacity(cfg.decoder_layers);
        for l in 0..cfg.decoder_layers {
            let p = format!("dec.layer{l}");
            layers.push(DecoderLayer {
                query_map: with_map
                    .then(|| InteractionBlock::new(ps, &format!("{p}.query_map"), d, cfg.heads, cfg.ffn_hidden(), rng)),
                query_query: cfg.ablation.query_query.then(|| {
                    InteractionBlock::new(ps, &format!("{p}.query_query"), d, cfg.heads, cfg.ffn_hidden(), rng)
                }),
            });
        }
        let head = Mlp::new(ps, "dec.head", d, d, 4 * cfg.step_len, rng);
        let score = Mlp::new(ps, "dec.score", d, d, 1, rng);
        Decoder {
            cfg: cfg.clone(),
            iter_embed,
            query_map_rel,
            layers,
            head,
            score,
        }
    }

    /// Trajectory queries attend to lanes near their agent.
    pub fn query_map_attention(
        &self,
        g: &mut Graph,
        inp: &SceneInputs,
        layer: usize,
        queries: Var,
        map_feats: Var,
        rel: Option<Var>,
    ) -> Result<Var> {
        let (Some(block), Some(map)) = (&self.layers[layer].query_map, &inp.map) else {
            return Err(Error::MissingMap);
        };
        if map.query_map.n_edges() == 0 {
            return Ok(queries);
        }
        Ok(block.forward(g, queries, map_feats, rel, &map.query_map))
    }

    /// Self-attention among the `K` queries of each agent.
    pub fn query_query_attention(&self, g: &mut Graph, inp: &SceneInputs, layer: usize, queries: Var) -> Var {
        match &self.layers[layer].query_query {
            Some(block) => block.forward(g, queries, queries, None, &inp.query_query),
            None => queries,
        }
    }

    /// One iteration. Returns the step output and the queries carried into
    /// the next iteration.
    pub fn decode_step(
        &self,
        g: &mut Graph,
        inp: &SceneInputs,
        queries: Var,
        map: Option<(Var, Option<Var>)>,
        iter_index: usize,
    ) -> Result<(DecoderStep, Var)> {
        let rows = inp.n_agents * self.cfg.modes;
        let mut q = queries;
        if let Some(table) = self.iter_embed {
            let table = g.param(table);
            let e = g.gather_rows(table, vec![iter_index; rows]);
            q = g.add(q, e);
        }
        for layer in 0..self.layers.len() {
            if let Some((feats, rel)) = map {
                q = self.query_map_attention(g, inp, layer, q, feats, rel)?;
            }
            q = self.query_query_attention(g, inp, layer, q);
        }
        let out = self.head.forward(g, q);
        let n = self.cfg.step_len;
        let deltas = g.gather_cols(out, (0..n).flat_map(|p| [4 * p, 4 * p + 1]).collect());
        let lv = g.gather_cols(out, (0..n).flat_map(|p| [4 * p + 2, 4 * p + 3]).collect());
        let log_vars = g.clamp(lv, LOG_VAR_MIN, LOG_VAR_MAX);
        Ok((
            DecoderStep {
                deltas,
                log_vars,
                query_feats: q,
            },
            q,
        ))
    }

    /// Per-agent softmax over the `K` mode scores of the final queries.
    pub fn score_head(&self, g: &mut Graph, n_agents: usize, queries: Var) -> Var {
        let logits = self.score.forward(g, queries);
        let logits = g.reshape(logits, &[n_agents, self.cfg.modes]);
        g.softmax(logits)
    }

    pub fn decode(&self, g: &mut Graph, inp: &SceneInputs, enc: &Encoded, use_map: bool) -> Result<Decoded> {
        self.cfg.validate()?;
        let map = if use_map {
            let (Some(feats), Some(m), Some(mlp)) = (enc.map_feats, &inp.map, &self.query_map_rel) else {
                return Err(Error::MissingMap);
            };
            let rel = if m.query_map_rel.is_empty() {
                None
            } else {
                let x = g.constant(m.query_map_rel.clone());
                Some(mlp.forward(g, x))
            };
            Some((feats, rel))
        } else {
            None
        };
        let mut q = enc.queries;
        let mut steps = Vec::with_capacity(self.cfg.decode_iters);
        for it in 0..self.cfg.decode_iters {
            let (step, next) = self.decode_step(g, inp, q, map, it)?;
            steps.push(step);
            q = next;
        }
        let deltas = if steps.len() == 1 {
            steps[0].deltas
        } else {
            g.concat_cols(&steps.iter().map(|s| s.deltas).collect::<Vec<_>>())
        };
        let log_vars = if steps.len() == 1 {
            steps[0].log_vars
        } else {
            g.concat_cols(&steps.iter().map(|s| s.log_vars).collect::<Vec<_>>())
        };
        let cum = g.cumsum_pairs(deltas);
        let origins = inp.row_origins();
        let nt = self.cfg.future_len;
        let mut base = Vec::with_capacity(origins.len() * 2 * nt);
        for o in &origins {
            for _ in 0..nt {
                base.extend_from_slice(o);
            }
        }
        let base = g.constant(crate::nn::FeatureArray::from_rows(origins.len(), 2 * nt, base));
        let positions = g.add(cum, base);
        let confidences = self.score_head(g, inp.n_agents, q);
        Ok(Decoded {
            steps,
            deltas,
            log_vars,
            positions,
            confidences,
        })
    }
}
