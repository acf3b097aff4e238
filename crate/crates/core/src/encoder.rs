//! Hierarchical encoder: context modelling over the encoder layers, then
//! hierarchical feature aggregation and fusion into `K` trajectory queries
//! per agent.
//!
//! Layer order, repeated `encoder_layers` times:
//! map-map -> agent-map (map path only) -> temporal -> spatial -> aggregation.

use rand::Rng;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::inputs::SceneInputs;
use crate::nn::{Graph, Init, InteractionBlock, Mlp, ParamId, ParameterSet, Var};

#[derive(Debug, Clone)]
pub struct EncoderLayer {
    pub map_map: Option<InteractionBlock>,
    pub agent_map: Option<InteractionBlock>,
    pub temporal: Option<InteractionBlock>,
    pub spatial: Option<InteractionBlock>,
    pub aggregation: Option<InteractionBlock>,
}

/// Queries built without hierarchical aggregation: most recent agent feature
/// concatenated with a learned per-mode embedding, then an MLP.
#[derive(Debug, Clone)]
pub struct RecentFeatureQueries {
    pub mode_embed: ParamId,
    pub mlp: Mlp,
}

#[derive(Debug, Clone)]
pub struct Encoder {
    pub cfg: ModelConfig,
    pub agent_embed: Mlp,
    pub map_embed: Option<Mlp>,
    pub time_embed: Option<ParamId>,
    pub spatial_rel: Option<Mlp>,
    pub map_map_rel: Option<Mlp>,
    pub agent_map_rel: Option<Mlp>,
    pub aggregation_time_embed: Option<ParamId>,
    pub hier_seeds: Option<ParamId>,
    pub layers: Vec<EncoderLayer>,
    pub fuse: Option<Mlp>,
    pub recent: Option<RecentFeatureQueries>,
}

/// Activations flowing through the encoder stack.
#[derive(Debug, Clone, Copy)]
pub struct EncoderState {
    /// `N_A * (T-1) x D`.
    pub agent_feats: Var,
    /// `N_M x D`, absent on the map-free path.
    pub map_feats: Option<Var>,
    /// `N_A * K * H x D`, rows ordered `(agent, mode, level)`.
    pub hier_queries: Option<Var>,
    pub layer: usize,
}

/// Encoder outputs consumed by the decoder and the distillation losses.
#[derive(Debug, Clone, Copy)]
pub struct Encoded {
    /// Trajectory queries, `N_A * K x D`.
    pub queries: Var,
    pub agent_feats: Var,
    pub map_feats: Option<Var>,
}

/// Relational embeddings of one forward pass, computed once and shared by
/// every layer.
struct RelRows {
    time: Option<Var>,
    spatial: Option<Var>,
    map_map: Option<Var>,
    agent_map: Option<Var>,
    aggregation: Option<Var>,
}

impl Encoder {
    /// `with_map` adds the map-map and agent-map blocks (teacher).
    pub fn new(cfg: &ModelConfig, with_map: bool, ps: &mut ParameterSet, rng: &mut impl Rng) -> Self {
        let d = cfg.d_model;
        let ab = cfg.ablation;
        let s = cfg.steps();
        let block = |ps: &mut ParameterSet, rng: &mut _, name: String| {
            InteractionBlock::new(ps, &name, d, cfg.heads, cfg.ffn_hidden(), rng)
        };
        let agent_embed = Mlp::new(ps, "enc.agent_embed", 2, d, d, rng);
        let map_embed = with_map.then(|| Mlp::new(ps, "enc.map_embed", 2, d, d, rng));
        let time_embed =
            ab.temporal.then(|| ps.add("enc.temporal_time_embed", &[s, d], Init::Normal(0.1), rng));
        let spatial_rel = ab.spatial.then(|| Mlp::new(ps, "enc.spatial_rel", 4, d, d, rng));
        let map_map_rel = with_map.then(|| Mlp::new(ps, "enc.map_map_rel", 4, d, d, rng));
        let agent_map_rel = with_map.then(|| Mlp::new(ps, "enc.agent_map_rel", 4, d, d, rng));
        let aggregation_time_embed = ab
            .aggregation
            .then(|| ps.add("enc.aggregation_time_embed", &[s, d], Init::Normal(0.1), rng));
        let hier_seeds = ab.aggregation.then(|| {
            ps.add(
                "enc.hier_seeds",
                &[cfg.modes * cfg.hier_levels, d],
                Init::Normal(1.0),
                rng,
            )
        });
        let mut layers = Vec::with_capacity(cfg.encoder_layers);
        for l in 0..cfg.encoder_layers {
            let p = format!("enc.layer{l}");
            layers.push(EncoderLayer {
                map_map: with_map.then(|| block(ps, rng, format!("{p}.map_map"))),
                agent_map: with_map.then(|| block(ps, rng, format!("{p}.agent_map"))),
                temporal: ab.temporal.then(|| block(ps, rng, format!("{p}.temporal"))),
                spatial: ab.spatial.then(|| block(ps, rng, format!("{p}.spatial"))),
                aggregation: ab.aggregation.then(|| block(ps, rng, format!("{p}.aggregation"))),
            });
        }
        let fuse = ab
            .aggregation
            .then(|| Mlp::new(ps, "enc.fuse", cfg.hier_levels * d, d, d, rng));
        let recent = (!ab.aggregation).then(|| RecentFeatureQueries {
            mode_embed: ps.add("enc.recent.mode_embed", &[cfg.modes, d], Init::Normal(1.0), rng),
            mlp: Mlp::new(ps, "enc.recent.mlp", 2 * d, d, d, rng),
        });
        Encoder {
            cfg: cfg.clone(),
            agent_embed,
            map_embed,
            time_embed,
            spatial_rel,
            map_map_rel,
            agent_map_rel,
            aggregation_time_embed,
            hier_seeds,
            layers,
            fuse,
            recent,
        }
    }

    pub fn has_map(&self) -> bool {
        self.map_embed.is_some()
    }

    /// Projects motion vectors (and map vectors, when `use_map`) to feature
    /// space and seeds the hierarchical queries.
    pub fn embed_inputs(&self, g: &mut Graph, inp: &SceneInputs, use_map: bool) -> Result<EncoderState> {
        let x = g.constant(inp.agent_vectors.clone());
        let agent_feats = self.agent_embed.forward(g, x);
        let map_feats = if use_map {
            let (Some(embed), Some(map)) = (&self.map_embed, &inp.map) else {
                return Err(Error::MissingMap);
            };
            let mv = g.constant(map.vectors.clone());
            let per_point = embed.forward(g, mv);
            Some(g.max_pool(per_point, &map.groups))
        } else {
            None
        };
        let hier_queries = self.hier_seeds.map(|seeds| {
            let seeds = g.param(seeds);
            let kh = self.cfg.modes * self.cfg.hier_levels;
            let idx = (0..inp.n_agents).flat_map(|_| 0..kh).collect();
            g.gather_rows(seeds, idx)
        });
        Ok(EncoderState {
            agent_feats,
            map_feats,
            hier_queries,
            layer: 0,
        })
    }

    fn rel_rows(&self, g: &mut Graph, inp: &SceneInputs, use_map: bool) -> RelRows {
        let mut embed = |mlp: &Option<Mlp>, feats: Option<&crate::nn::FeatureArray>| match (mlp, feats) {
            (Some(mlp), Some(f)) if !f.is_empty() => {
                let x = g.constant(f.clone());
                Some(mlp.forward(g, x))
            }
            _ => None,
        };
        let spatial = embed(&self.spatial_rel, Some(&inp.spatial_rel));
        let (map_map, agent_map) = match (&inp.map, use_map) {
            (Some(m), true) => (
                embed(&self.map_map_rel, Some(&m.map_map_rel)),
                embed(&self.agent_map_rel, Some(&m.agent_map_rel)),
            ),
            _ => (None, None),
        };
        RelRows {
            time: self.time_embed.map(|p| g.param(p)),
            spatial,
            map_map,
            agent_map,
            aggregation: self.aggregation_time_embed.map(|p| g.param(p)),
        }
    }

    /// Causal self-attention over each agent's own time steps.
    pub fn agent_agent_temporal(
        &self,
        g: &mut Graph,
        inp: &SceneInputs,
        mut st: EncoderState,
        time_rel: Var,
    ) -> EncoderState {
        if let Some(block) = &self.layers[st.layer].temporal {
            st.agent_feats = block.forward(g, st.agent_feats, st.agent_feats, Some(time_rel), &inp.temporal);
        }
        st
    }

    /// Per-step attention across agents within the neighbourhood radius.
    pub fn agent_agent_spatial(
        &self,
        g: &mut Graph,
        inp: &SceneInputs,
        mut st: EncoderState,
        rel: Option<Var>,
    ) -> EncoderState {
        if let Some(block) = &self.layers[st.layer].spatial {
            if inp.spatial.n_edges() > 0 {
                st.agent_feats = block.forward(g, st.agent_feats, st.agent_feats, rel, &inp.spatial);
            }
        }
        st
    }

    pub fn map_map_attention(
        &self,
        g: &mut Graph,
        inp: &SceneInputs,
        mut st: EncoderState,
        rel: Option<Var>,
    ) -> Result<EncoderState> {
        let (Some(block), Some(map), Some(feats)) = (&self.layers[st.layer].map_map, &inp.map, st.map_feats)
        else {
            return Err(Error::MissingMap);
        };
        st.map_feats = Some(block.forward(g, feats, feats, rel, &map.map_map));
        Ok(st)
    }

    pub fn agent_map_attention(
        &self,
        g: &mut Graph,
        inp: &SceneInputs,
        mut st: EncoderState,
        rel: Option<Var>,
    ) -> Result<EncoderState> {
        let (Some(block), Some(map), Some(feats)) = (&self.layers[st.layer].agent_map, &inp.map, st.map_feats)
        else {
            return Err(Error::MissingMap);
        };
        if map.agent_map.n_edges() > 0 {
            st.agent_feats = block.forward(g, st.agent_feats, feats, rel, &map.agent_map);
        }
        Ok(st)
    }

    /// Hierarchical queries cross-attend to their agent's strided features.
    pub fn feature_aggregation(
        &self,
        g: &mut Graph,
        inp: &SceneInputs,
        mut st: EncoderState,
        time_rel: Option<Var>,
    ) -> EncoderState {
        if let (Some(block), Some(q)) = (&self.layers[st.layer].aggregation, st.hier_queries) {
            st.hier_queries = Some(block.forward(g, q, st.agent_feats, time_rel, &inp.aggregation));
        }
        st
    }

    /// Concatenates the `H` level queries of each (agent, mode) and maps them
    /// to one trajectory query.
    pub fn fuse_queries(&self, g: &mut Graph, inp: &SceneInputs, st: &EncoderState) -> Var {
        let d = self.cfg.d_model;
        let (n, k) = (inp.n_agents, self.cfg.modes);
        match (&self.fuse, st.hier_queries, &self.recent) {
            (Some(fuse), Some(hq), _) => {
                let cat = g.reshape(hq, &[n * k, self.cfg.hier_levels * d]);
                fuse.forward(g, cat)
            }
            (_, _, Some(recent)) => {
                let s = inp.steps;
                let latest = g.gather_rows(
                    st.agent_feats,
                    (0..n).flat_map(|i| std::iter::repeat_n(i * s + s - 1, k)).collect(),
                );
                let modes = g.param(recent.mode_embed);
                let modes = g.gather_rows(modes, (0..n).flat_map(|_| 0..k).collect());
                let cat = g.concat_cols(&[latest, modes]);
                recent.mlp.forward(g, cat)
            }
            _ => unreachable!("encoder built without a query path"),
        }
    }

    /// Runs the full stack and returns trajectory queries.
    pub fn encode(&self, g: &mut Graph, inp: &SceneInputs, use_map: bool) -> Result<Encoded> {
        if use_map && (!self.has_map() || inp.map.is_none()) {
            return Err(Error::MissingMap);
        }
        let mut st = self.embed_inputs(g, inp, use_map)?;
        let rel = self.rel_rows(g, inp, use_map);
        for layer in 0..self.layers.len() {
            st.layer = layer;
            if use_map {
                st = self.map_map_attention(g, inp, st, rel.map_map)?;
                st = self.agent_map_attention(g, inp, st, rel.agent_map)?;
            }
            if let Some(t) = rel.time {
                st = self.agent_agent_temporal(g, inp, st, t);
            }
            st = self.agent_agent_spatial(g, inp, st, rel.spatial);
            st = self.feature_aggregation(g, inp, st, rel.aggregation);
        }
        let queries = self.fuse_queries(g, inp, &st);
        Ok(Encoded {
            queries,
            agent_feats: st.agent_feats,
            map_feats: st.map_feats,
        })
    }
}
