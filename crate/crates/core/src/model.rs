//! The full network (encoder + decoder) and value-level prediction outputs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::decoder::{Decoded, Decoder};
use crate::encoder::{Encoded, Encoder};
use crate::error::{Error, Result};
use crate::inputs::SceneInputs;
use crate::nn::{FeatureArray, Graph, ParameterSet};
use crate::scene::Scene;

/// Architecture description. Parameters live in a separate [`ParameterSet`]
/// so that a forward pass can borrow them immutably.
#[derive(Debug, Clone)]
pub struct Network {
    pub cfg: ModelConfig,
    /// Whether the map blocks exist (teacher) or not (student).
    pub with_map: bool,
    pub encoder: Encoder,
    pub decoder: Decoder,
}

#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub encoded: Encoded,
    pub decoded: Decoded,
}

/// `K` trajectories per agent with per-point Gaussian parameters and mode
/// probabilities. Arrays are laid out `[agent][mode][step][xy]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    pub n_agents: usize,
    pub modes: usize,
    pub future_len: usize,
    pub trajectories: Vec<f64>,
    pub deltas: Vec<f64>,
    pub variances: Vec<f64>,
    /// `[agent][mode]`.
    pub confidences: Vec<f64>,
}

impl PredictionSet {
    fn offset(&self, agent: usize, mode: usize) -> usize {
        (agent * self.modes + mode) * self.future_len * 2
    }

    /// Interleaved `(x, y)` positions of one mode.
    pub fn trajectory(&self, agent: usize, mode: usize) -> &[f64] {
        let o = self.offset(agent, mode);
        &self.trajectories[o..o + 2 * self.future_len]
    }

    pub fn point(&self, agent: usize, mode: usize, step: usize) -> [f64; 2] {
        let t = self.trajectory(agent, mode);
        [t[2 * step], t[2 * step + 1]]
    }

    pub fn confidence(&self, agent: usize, mode: usize) -> f64 {
        self.confidences[agent * self.modes + mode]
    }

    pub fn agent_confidences(&self, agent: usize) -> &[f64] {
        &self.confidences[agent * self.modes..(agent + 1) * self.modes]
    }

    pub fn from_pass(g: &Graph, fp: &ForwardPass, n_agents: usize, cfg: &ModelConfig) -> Self {
        let d = &fp.decoded;
        PredictionSet {
            n_agents,
            modes: cfg.modes,
            future_len: cfg.future_len,
            trajectories: g.value(d.positions).values().to_vec(),
            deltas: g.value(d.deltas).values().to_vec(),
            variances: g.value(d.log_vars).values().iter().map(|v| v.exp()).collect(),
            confidences: g.value(d.confidences).values().to_vec(),
        }
    }
}

/// Intermediate features used as distillation targets.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryFeatures {
    /// Trajectory queries after the encoder, `N_A * K x D`.
    pub queries: FeatureArray,
    /// Query features before the read-out head, one array per iteration.
    pub step_feats: Vec<FeatureArray>,
}

#[derive(Debug, Clone)]
pub struct Prediction {
    pub set: PredictionSet,
    pub features: QueryFeatures,
}

impl Network {
    /// Builds the architecture and initialises its parameters from `seed`.
    pub fn new(cfg: &ModelConfig, with_map: bool, seed: u64) -> Result<(Network, ParameterSet)> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParameterSet::new();
        let encoder = Encoder::new(cfg, with_map, &mut ps, &mut rng);
        let decoder = Decoder::new(cfg, with_map, &mut ps, &mut rng);
        Ok((
            Network {
                cfg: cfg.clone(),
                with_map,
                encoder,
                decoder,
            },
            ps,
        ))
    }

    pub fn forward(&self, g: &mut Graph, inp: &SceneInputs, use_map: bool) -> Result<ForwardPass> {
        if use_map && !self.with_map {
            return Err(Error::Config("map-free network cannot consume a map".into()));
        }
        let encoded = self.encoder.encode(g, inp, use_map)?;
        let decoded = self.decoder.decode(g, inp, &encoded, use_map)?;
        Ok(ForwardPass { encoded, decoded })
    }

    /// Inference on one scene. `use_map = false` on a map network skips every
    /// map block.
    pub fn predict(&self, params: &ParameterSet, scene: &Scene, use_map: bool) -> Result<Prediction> {
        let view;
        let scene = if use_map {
            scene
        } else {
            view = scene.without_map();
            &view
        };
        let inp = SceneInputs::new(scene, &self.cfg)?;
        let mut g = Graph::new(params);
        let fp = self.forward(&mut g, &inp, use_map)?;
        Ok(Prediction {
            set: PredictionSet::from_pass(&g, &fp, inp.n_agents, &self.cfg),
            features: QueryFeatures {
                queries: g.value(fp.encoded.queries).clone(),
                step_feats: fp
                    .decoded
                    .steps
                    .iter()
                    .map(|s| g.value(s.query_feats).clone())
                    .collect(),
            },
        })
    }
}
