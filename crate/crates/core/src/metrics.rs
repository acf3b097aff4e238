//! Multimodal forecasting metrics: minADE, minFDE, miss rate, brier-minFDE and
//! drivable area compliance.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::PredictionSet;
use crate::scene::{polygon_area, DrivableArea, Point2};

pub const DEFAULT_MISS_RADIUS: f64 = 2.0;

/// The `K` predicted trajectories of one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct Forecast {
    pub modes: Vec<Vec<Point2>>,
    pub confidences: Vec<f64>,
}

impl PredictionSet {
    pub fn forecast(&self, agent: usize) -> Forecast {
        let modes = (0..self.modes)
            .map(|k| {
                self.trajectory(agent, k)
                    .chunks_exact(2)
                    .map(|c| Point2::new(c[0], c[1]))
                    .collect()
            })
            .collect();
        Forecast {
            modes,
            confidences: self.agent_confidences(agent).to_vec(),
        }
    }
}

fn endpoint(gt: &[Option<Point2>]) -> Result<Point2> {
    gt.last()
        .copied()
        .flatten()
        .ok_or_else(|| Error::InvalidScene("ground truth endpoint is missing".into()))
}

fn mode_ade(mode: &[Point2], gt: &[Option<Point2>]) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0;
    for (p, g) in mode.iter().zip(gt) {
        if let Some(g) = g {
            sum += p.dist(*g);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::InvalidScene("no valid ground truth point".into()));
    }
    Ok(sum / n as f64)
}

/// Index and distance of the mode whose endpoint is closest to the ground
/// truth endpoint. Ties go to the lower index.
pub fn best_endpoint_mode(f: &Forecast, gt: &[Option<Point2>]) -> Result<(usize, f64)> {
    let end = endpoint(gt)?;
    let t = gt.len() - 1;
    let mut best = (0, f64::INFINITY);
    for (k, m) in f.modes.iter().enumerate() {
        let d = m[t].dist(end);
        if d < best.1 {
            best = (k, d);
        }
    }
    Ok(best)
}

pub fn agent_min_ade(f: &Forecast, gt: &[Option<Point2>]) -> Result<f64> {
    let mut best = f64::INFINITY;
    for m in &f.modes {
        best = best.min(mode_ade(m, gt)?);
    }
    Ok(best)
}

pub fn agent_min_fde(f: &Forecast, gt: &[Option<Point2>]) -> Result<f64> {
    Ok(best_endpoint_mode(f, gt)?.1)
}

pub fn agent_is_miss(f: &Forecast, gt: &[Option<Point2>], radius: f64) -> Result<bool> {
    Ok(best_endpoint_mode(f, gt)?.1 > radius)
}

pub fn agent_brier_min_fde(f: &Forecast, gt: &[Option<Point2>]) -> Result<f64> {
    let (k, d) = best_endpoint_mode(f, gt)?;
    let p = f.confidences[k];
    Ok(d + (1.0 - p) * (1.0 - p))
}

fn check_lengths(f: &[Forecast], gts: &[Vec<Option<Point2>>]) -> Result<()> {
    if f.len() != gts.len() {
        return Err(Error::Shape(format!("{} forecasts vs {} ground truths", f.len(), gts.len())));
    }
    if f.is_empty() {
        return Err(Error::EmptySplit("no agents to evaluate".into()));
    }
    Ok(())
}

fn mean_over(
    f: &[Forecast],
    gts: &[Vec<Option<Point2>>],
    per: impl Fn(&Forecast, &[Option<Point2>]) -> Result<f64>,
) -> Result<f64> {
    check_lengths(f, gts)?;
    let mut sum = 0.0;
    for (fc, gt) in f.iter().zip(gts) {
        sum += per(fc, gt)?;
    }
    Ok(sum / f.len() as f64)
}

pub fn min_ade(f: &[Forecast], gts: &[Vec<Option<Point2>>]) -> Result<f64> {
    mean_over(f, gts, agent_min_ade)
}

pub fn min_fde(f: &[Forecast], gts: &[Vec<Option<Point2>>]) -> Result<f64> {
    mean_over(f, gts, agent_min_fde)
}

pub fn miss_rate(f: &[Forecast], gts: &[Vec<Option<Point2>>], radius: f64) -> Result<f64> {
    if radius <= 0.0 {
        return Err(Error::Config(format!("miss radius must be positive, got {radius}")));
    }
    mean_over(f, gts, |fc, gt| Ok(agent_is_miss(fc, gt, radius)? as u8 as f64))
}

pub fn brier_min_fde(f: &[Forecast], gts: &[Vec<Option<Point2>>]) -> Result<f64> {
    mean_over(f, gts, agent_brier_min_fde)
}

fn on_segment(p: Point2, a: Point2, b: Point2) -> bool {
    let cross = (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
    cross == 0.0
        && p.x >= a.x.min(b.x)
        && p.x <= a.x.max(b.x)
        && p.y >= a.y.min(b.y)
        && p.y <= a.y.max(b.y)
}

/// Ray casting with half-open edges. Points on the boundary are inside.
pub fn point_in_polygon(p: Point2, poly: &[Point2]) -> bool {
    let n = poly.len();
    let mut inside = false;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        if on_segment(p, a, b) {
            return true;
        }
        if (a.y > p.y) != (b.y > p.y) {
            let x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if p.x < x {
                inside = !inside;
            }
        }
    }
    inside
}

pub fn check_drivable(area: &DrivableArea) -> Result<()> {
    for (i, poly) in area.polygons.iter().enumerate() {
        if poly.len() < 3 || polygon_area(poly) == 0.0 {
            return Err(Error::DegeneratePolygon(i));
        }
    }
    Ok(())
}

pub fn in_drivable(p: Point2, area: &DrivableArea) -> bool {
    area.polygons.iter().any(|poly| point_in_polygon(p, poly))
}

/// Number of modes lying entirely inside the drivable area.
pub fn agent_compliant_modes(f: &Forecast, area: &DrivableArea) -> Result<usize> {
    check_drivable(area)?;
    Ok(f
        .modes
        .iter()
        .filter(|m| m.iter().all(|&p| in_drivable(p, area)))
        .count())
}

/// Fraction of all predicted trajectories that stay inside their scene's
/// drivable area at every point.
pub fn dac(f: &[Forecast], areas: &[&DrivableArea]) -> Result<f64> {
    if f.len() != areas.len() {
        return Err(Error::Shape(format!("{} forecasts vs {} areas", f.len(), areas.len())));
    }
    let mut ok = 0;
    let mut total = 0;
    for (fc, area) in f.iter().zip(areas) {
        ok += agent_compliant_modes(fc, area)?;
        total += fc.modes.len();
    }
    if total == 0 {
        return Err(Error::EmptySplit("no trajectories to evaluate".into()));
    }
    Ok(ok as f64 / total as f64)
}

/// Averages over evaluated agents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub modes: usize,
    pub min_ade: f64,
    pub min_fde: f64,
    pub miss_rate: f64,
    pub brier_min_fde: f64,
    pub dac: f64,
    pub n_agents: usize,
}

/// Per-agent values, kept so reports over several scenes can be merged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentMetrics {
    pub min_ade: f64,
    pub min_fde: f64,
    pub miss: bool,
    pub brier_min_fde: f64,
    pub compliant: usize,
}

impl AgentMetrics {
    pub fn compute(f: &Forecast, gt: &[Option<Point2>], area: &DrivableArea, radius: f64) -> Result<Self> {
        Ok(AgentMetrics {
            min_ade: agent_min_ade(f, gt)?,
            min_fde: agent_min_fde(f, gt)?,
            miss: agent_is_miss(f, gt, radius)?,
            brier_min_fde: agent_brier_min_fde(f, gt)?,
            compliant: agent_compliant_modes(f, area)?,
        })
    }
}

impl MetricReport {
    pub fn from_agents(modes: usize, agents: &[AgentMetrics]) -> Result<Self> {
        if agents.is_empty() {
            return Err(Error::EmptySplit("no agents to evaluate".into()));
        }
        let n = agents.len() as f64;
        let mean = |f: &dyn Fn(&AgentMetrics) -> f64| agents.iter().map(f).sum::<f64>() / n;
        Ok(MetricReport {
            modes,
            min_ade: mean(&|a| a.min_ade),
            min_fde: mean(&|a| a.min_fde),
            miss_rate: mean(&|a| a.miss as u8 as f64),
            brier_min_fde: mean(&|a| a.brier_min_fde),
            dac: agents.iter().map(|a| a.compliant).sum::<usize>() as f64 / (n * modes as f64),
            n_agents: agents.len(),
        })
    }

    pub fn compute(
        f: &[Forecast],
        gts: &[Vec<Option<Point2>>],
        areas: &[&DrivableArea],
        radius: f64,
    ) -> Result<Self> {
        check_lengths(f, gts)?;
        if areas.len() != f.len() {
            return Err(Error::Shape(format!("{} forecasts vs {} areas", f.len(), areas.len())));
        }
        let agents = f
            .iter()
            .zip(gts)
            .zip(areas)
            .map(|((fc, gt), area)| AgentMetrics::compute(fc, gt, area, radius))
            .collect::<Result<Vec<_>>>()?;
        Self::from_agents(f[0].modes.len(), &agents)
    }

    /// `key=value` lines, one metric per line.
    pub fn to_text(&self) -> String {
        let k = self.modes;
        let mut s = String::new();
        let _ = writeln!(s, "minADE_{k}={:.6}", self.min_ade);
        let _ = writeln!(s, "minFDE_{k}={:.6}", self.min_fde);
        let _ = writeln!(s, "MR_{k}={:.6}", self.miss_rate);
        let _ = writeln!(s, "brier_minFDE_{k}={:.6}", self.brier_min_fde);
        let _ = writeln!(s, "DAC_{k}={:.6}", self.dac);
        let _ = writeln!(s, "n_agents={}", self.n_agents);
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut kv = std::collections::HashMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("bad report line {line:?}")))?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        let modes = kv
            .keys()
            .find_map(|k| k.strip_prefix("minADE_").and_then(|m| m.parse::<usize>().ok()))
            .ok_or_else(|| Error::Config("report lacks minADE".into()))?;
        let get = |key: String| -> Result<f64> {
            kv.get(&key)
                .ok_or_else(|| Error::Config(format!("report lacks {key}")))?
                .parse()
                .map_err(|_| Error::Config(format!("bad value for {key}")))
        };
        Ok(MetricReport {
            modes,
            min_ade: get(format!("minADE_{modes}"))?,
            min_fde: get(format!("minFDE_{modes}"))?,
            miss_rate: get(format!("MR_{modes}"))?,
            brier_min_fde: get(format!("brier_minFDE_{modes}"))?,
            dac: get(format!("DAC_{modes}"))?,
            n_agents: get("n_agents".into())? as usize,
        })
    }
}
