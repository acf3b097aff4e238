//! Procedural driving scenes: lane networks, drivable areas and lane-following
//! agents, with deterministic train/val/test splits.

pub mod agents;
pub mod geometry;
pub mod layout;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::io::{write_split, RunManifest, SPLITS};
use crate::scene::{DrivableArea, MapPolyline, Scene};

pub use agents::{simulate_agents, Window};
pub use layout::{Layout, Maneuver, RoadLayout};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ManeuverMix {
    pub keep_lane: f64,
    pub turn_left: f64,
    pub turn_right: f64,
    pub lane_change: f64,
}

impl Default for ManeuverMix {
    fn default() -> Self {
        ManeuverMix {
            keep_lane: 0.4,
            turn_left: 0.2,
            turn_right: 0.2,
            lane_change: 0.2,
        }
    }
}

impl ManeuverMix {
    pub fn only(m: Maneuver) -> Self {
        let mut mix = ManeuverMix {
            keep_lane: 0.0,
            turn_left: 0.0,
            turn_right: 0.0,
            lane_change: 0.0,
        };
        match m {
            Maneuver::KeepLane => mix.keep_lane = 1.0,
            Maneuver::TurnLeft => mix.turn_left = 1.0,
            Maneuver::TurnRight => mix.turn_right = 1.0,
            Maneuver::LaneChange => mix.lane_change = 1.0,
        }
        mix
    }

    pub fn weight(&self, m: Maneuver) -> f64 {
        match m {
            Maneuver::KeepLane => self.keep_lane,
            Maneuver::TurnLeft => self.turn_left,
            Maneuver::TurnRight => self.turn_right,
            Maneuver::LaneChange => self.lane_change,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let w = [self.keep_lane, self.turn_left, self.turn_right, self.lane_change];
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("maneuver probabilities {w:?} must be nonnegative and sum to 1")));
        }
        Ok(())
    }
}

/// Everything needed to generate one scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub seed: u64,
    pub layout: Layout,
    pub n_agents: usize,
    pub noise_std: f64,
    pub maneuver_mix: ManeuverMix,
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if !(1..=16).contains(&self.n_agents) {
            return Err(Error::Config(format!("n_agents {} outside [1, 16]", self.n_agents)));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(Error::Config(format!("noise_std {} must be nonnegative", self.noise_std)));
        }
        self.maneuver_mix.validate()
    }
}

/// Distribution from which per-scene specs are drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecDistribution {
    /// Weights for straight, curve, t_junction and crossroads.
    pub layout_mix: [f64; 4],
    pub min_agents: usize,
    pub max_agents: usize,
    pub noise_std: f64,
    pub maneuver_mix: ManeuverMix,
}

impl Default for SpecDistribution {
    fn default() -> Self {
        SpecDistribution {
            layout_mix: [0.2, 0.3, 0.25, 0.25],
            min_agents: 2,
            max_agents: 6,
            noise_std: 0.05,
            maneuver_mix: ManeuverMix::default(),
        }
    }
}

impl SpecDistribution {
    /// Parses `straight=1,curve=2,...`; omitted layouts get weight zero.
    pub fn parse_layout_mix(s: &str) -> Result<[f64; 4]> {
        let mut mix = [0.0; 4];
        for part in s.split(',').filter(|p| !p.is_empty()) {
            let (name, w) = part.split_once('=').unwrap_or((part, "1"));
            let layout = Layout::parse(name.trim())
                .ok_or_else(|| Error::Config(format!("unknown layout {name:?}")))?;
            let w: f64 = w
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad layout weight {w:?}")))?;
            mix[Layout::ALL.iter().position(|&l| l == layout).expect("listed")] = w;
        }
        Ok(mix)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layout_mix.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || self.layout_mix.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config(format!("bad layout mix {:?}", self.layout_mix)));
        }
        if self.min_agents == 0 || self.min_agents > self.max_agents || self.max_agents > 16 {
            return Err(Error::Config(format!(
                "agent range [{}, {}] must lie in [1, 16]",
                self.min_agents, self.max_agents
            )));
        }
        self.maneuver_mix.validate()
    }

    pub fn sample(&self, seed: u64) -> ScenarioSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5eed_5eed_5eed);
        let total: f64 = self.layout_mix.iter().sum();
        let mut u = rng.gen_range(0.0..total);
        let mut layout = Layout::Crossroads;
        for (l, w) in Layout::ALL.iter().zip(&self.layout_mix) {
            if u < *w {
                layout = *l;
                break;
            }
            u -= w;
        }
        ScenarioSpec {
            seed,
            layout,
            n_agents: rng.gen_range(self.min_agents..=self.max_agents),
            noise_std: self.noise_std,
            maneuver_mix: self.maneuver_mix,
        }
    }
}

/// Lane polylines and drivable area of a spec's road network.
pub fn generate_lane_network(spec: &ScenarioSpec, cfg: &ModelConfig) -> (Vec<MapPolyline>, DrivableArea) {
    let road = road_for(spec);
    (road.polylines(cfg.polyline_len), road.drivable())
}

fn road_for(spec: &ScenarioSpec) -> RoadLayout {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    RoadLayout::generate(spec.layout, &mut rng)
}

pub fn generate_scene(id: &str, spec: &ScenarioSpec, cfg: &ModelConfig) -> Result<Scene> {
    spec.validate()?;
    let road = road_for(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(1));
    let window = Window {
        history: cfg.history_len,
        future: cfg.future_len,
        dt: 1.0 / cfg.sample_rate,
    };
    let (agents, _) = simulate_agents(&road, spec.n_agents, &spec.maneuver_mix, spec.noise_std, &window, &mut rng);
    Ok(Scene {
        id: id.to_string(),
        agents,
        map: road.polylines(cfg.polyline_len),
        drivable: road.drivable(),
    })
}

/// SplitMix64 finaliser; a bijection, so distinct inputs give distinct seeds.
pub fn derive_seed(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Scene counts per split; the test split takes the rounding remainder.
pub fn split_counts(n_scenes: usize, ratios: [f64; 3]) -> Result<[usize; 3]> {
    if ratios.iter().any(|r| !(r.is_finite() && *r >= 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split ratios {ratios:?} must be nonnegative and sum to 1")));
    }
    let train = (n_scenes as f64 * ratios[0]).round() as usize;
    let val = ((n_scenes as f64 * ratios[1]).round() as usize).min(n_scenes - train);
    Ok([train, val, n_scenes - train - val])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub n_scenes: usize,
    pub master_seed: u64,
    pub ratios: [f64; 3],
    pub distribution: SpecDistribution,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            n_scenes: 2500,
            master_seed: REFERENCE_SEED,
            ratios: [0.8, 0.1, 0.1],
            distribution: SpecDistribution::default(),
        }
    }
}

/// Master seed of the reference dataset.
pub const REFERENCE_SEED: u64 = 20240517;

#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: Vec<Scene>,
    pub val: Vec<Scene>,
    pub test: Vec<Scene>,
}

impl Dataset {
    pub fn split(&self, name: &str) -> Option<&[Scene]> {
        match name {
            "train" => Some(&self.train),
            "val" => Some(&self.val),
            "test" => Some(&self.test),
            _ => None,
        }
    }
}

/// Generates all splits in memory. Scene `j` (over all splits) uses seed
/// `derive_seed(master + j)`, so splits never share a seed.
pub fn generate_dataset(cfg: &DatasetConfig, model: &ModelConfig) -> Result<Dataset> {
    cfg.distribution.validate()?;
    let counts = split_counts(cfg.n_scenes, cfg.ratios)?;
    let mut offset = 0u64;
    let mut splits = Vec::with_capacity(3);
    for (name, &n) in SPLITS.iter().zip(&counts) {
        let base = offset;
        let scenes = (0..n as u64)
            .into_par_iter()
            .map(|j| {
                let seed = derive_seed(cfg.master_seed.wrapping_add(base + j));
                let spec = cfg.distribution.sample(seed);
                generate_scene(&format!("{name}-{j:05}"), &spec, model)
            })
            .collect::<Result<Vec<_>>>()?;
        offset += n as u64;
        splits.push(scenes);
    }
    let test = splits.pop().expect("three splits");
    let val = splits.pop().expect("three splits");
    let train = splits.pop().expect("three splits");
    Ok(Dataset { train, val, test })
}

/// Generates a dataset and writes it as `<out>/{train,val,test}/*.scene`
/// plus a manifest.
pub fn write_dataset(out: &Path, cfg: &DatasetConfig, model: &ModelConfig) -> Result<Dataset> {
    let start = std::time::Instant::now();
    let ds = generate_dataset(cfg, model)?;
    for name in SPLITS {
        write_split(&out.join(name), ds.split(name).expect("known split"), model.sample_rate)?;
    }
    let mut m = RunManifest::new("generate", serde_json::to_value(cfg)?, vec![cfg.master_seed]);
    m.outputs = SPLITS.iter().map(|s| out.join(s).display().to_string()).collect();
    m.wall_clock_secs = start.elapsed().as_secs_f64();
    m.write(out)?;
    Ok(ds)
}
