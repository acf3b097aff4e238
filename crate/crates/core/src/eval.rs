//! Model evaluation over scene collections.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::metrics::{AgentMetrics, MetricReport, DEFAULT_MISS_RADIUS};
use crate::model::{Network, PredictionSet};
use crate::nn::ParameterSet;
use crate::scene::Scene;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    /// Feed map polylines to the network. Ignored (treated as false) for
    /// map-free networks.
    pub use_map: bool,
    /// Evaluate every agent with a valid endpoint instead of only the focal
    /// agent.
    pub all_agents: bool,
    pub miss_radius: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            use_map: true,
            all_agents: false,
            miss_radius: DEFAULT_MISS_RADIUS,
        }
    }
}

/// Metrics of one evaluated agent.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentRecord {
    pub scene_id: String,
    pub agent_id: String,
    pub metrics: AgentMetrics,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: MetricReport,
    pub agents: Vec<AgentRecord>,
}

/// Agents that metrics are computed on.
pub fn evaluated_agents(scene: &Scene, all_agents: bool) -> Vec<usize> {
    scene
        .agents
        .iter()
        .enumerate()
        .filter(|(_, a)| {
            (all_agents || a.is_focal) && a.future.last().copied().flatten().is_some()
        })
        .map(|(i, _)| i)
        .collect()
}

pub fn predict_scene(net: &Network, params: &ParameterSet, scene: &Scene, use_map: bool) -> Result<PredictionSet> {
    Ok(net.predict(params, scene, use_map && net.with_map)?.set)
}

pub fn evaluate_scene(
    net: &Network,
    params: &ParameterSet,
    scene: &Scene,
    opts: &EvalOptions,
) -> Result<Vec<AgentRecord>> {
    let pred = predict_scene(net, params, scene, opts.use_map)?;
    evaluated_agents(scene, opts.all_agents)
        .into_iter()
        .map(|i| {
            let a = &scene.agents[i];
            Ok(AgentRecord {
                scene_id: scene.id.clone(),
                agent_id: a.id.clone(),
                metrics: AgentMetrics::compute(&pred.forecast(i), &a.future, &scene.drivable, opts.miss_radius)?,
            })
        })
        .collect()
}

/// Evaluates scenes in parallel; records keep scene order.
pub fn evaluate(net: &Network, params: &ParameterSet, scenes: &[Scene], opts: &EvalOptions) -> Result<Evaluation> {
    if scenes.is_empty() {
        return Err(Error::EmptySplit("no scenes to evaluate".into()));
    }
    let per: Vec<Vec<AgentRecord>> = scenes
        .par_iter()
        .map(|s| evaluate_scene(net, params, s, opts))
        .collect::<Result<_>>()?;
    let agents: Vec<AgentRecord> = per.into_iter().flatten().collect();
    let metrics: Vec<AgentMetrics> = agents.iter().map(|a| a.metrics).collect();
    Ok(Evaluation {
        report: MetricReport::from_agents(net.cfg.modes, &metrics)?,
        agents,
    })
}

pub const AGENT_CSV_HEADER: &str = "scene_id,agent_id,minADE,minFDE,miss,brier_minFDE,compliant_modes";

impl Evaluation {
    /// Per-agent rows with a pinned column order.
    pub fn agents_csv(&self) -> String {
        let mut s = String::from(AGENT_CSV_HEADER);
        s.push('\n');
        for a in &self.agents {
            let m = &a.metrics;
            s.push_str(&format!(
                "{},{},{:.6},{:.6},{},{:.6},{}\n",
                a.scene_id, a.agent_id, m.min_ade, m.min_fde, m.miss as u8, m.brier_min_fde, m.compliant
            ));
        }
        s
    }
}
