//! Lane-following agents with piecewise-constant acceleration, cosine lane
//! changes, positional noise and occlusion.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::layout::{quantize_point, Maneuver, RoadLayout};
use super::ManeuverMix;
use crate::scene::{AgentTrack, Point2};

pub const MIN_SPEED: f64 = 2.0;
pub const MAX_SPEED: f64 = 14.0;
pub const MAX_ACCEL: f64 = 1.0;
pub const OCCLUSION_PROB: f64 = 0.1;
/// Minimum distance between agents at the present step.
pub const MIN_SPACING: f64 = 6.0;
/// Chance that an agent listed after the focal drives ahead of it on the
/// same route.
pub const FOLLOW_PROB: f64 = 0.5;
pub const LEAD_GAP: (f64, f64) = (8.0, 30.0);

/// Motion plan of one agent before it is placed along its route.
#[derive(Debug, Clone)]
pub struct AgentPlan {
    pub maneuver: Maneuver,
    pub route: usize,
    /// Lane-change target route.
    pub target: Option<usize>,
    /// Arc length travelled at every step, starting at zero.
    pub stations: Vec<f64>,
}

/// Timing of the simulated window.
#[derive(Debug, Clone, Copy)]
pub struct Window {
    pub history: usize,
    pub future: usize,
    pub dt: f64,
}

impl Window {
    pub fn total(&self) -> usize {
        self.history + self.future
    }

    pub fn present(&self) -> usize {
        self.history - 1
    }
}

pub fn speed_profile(w: &Window, rng: &mut impl Rng) -> Vec<f64> {
    let n = w.total();
    let mut v = rng.gen_range(5.0..11.0);
    let mut stations = Vec::with_capacity(n);
    let mut s = 0.0;
    let mut accel = 0.0;
    let mut left = 0;
    for _ in 0..n {
        stations.push(s);
        if left == 0 {
            accel = rng.gen_range(-MAX_ACCEL..=MAX_ACCEL);
            left = rng.gen_range(10..=20);
        }
        left -= 1;
        s += v * w.dt;
        v = (v + accel * w.dt).clamp(MIN_SPEED, MAX_SPEED);
    }
    stations
}

fn sample_maneuver(road: &RoadLayout, mix: &ManeuverMix, rng: &mut impl Rng) -> Maneuver {
    let weights: Vec<(Maneuver, f64)> = Maneuver::ALL
        .into_iter()
        .map(|m| (m, if road.supports(m) { mix.weight(m) } else { 0.0 }))
        .collect();
    let total: f64 = weights.iter().map(|w| w.1).sum();
    if total <= 0.0 {
        return Maneuver::KeepLane;
    }
    let mut u = rng.gen_range(0.0..total);
    for (m, w) in &weights {
        if u < *w {
            return *m;
        }
        u -= w;
    }
    weights.iter().rev().find(|w| w.1 > 0.0).map_or(Maneuver::KeepLane, |w| w.0)
}

pub fn plan_agent(road: &RoadLayout, mix: &ManeuverMix, w: &Window, rng: &mut impl Rng) -> AgentPlan {
    let maneuver = sample_maneuver(road, mix, rng);
    let candidates = road.routes_for(maneuver);
    let (maneuver, candidates) = if candidates.is_empty() {
        (Maneuver::KeepLane, (0..road.routes.len()).collect())
    } else {
        (maneuver, candidates)
    };
    let route = candidates[rng.gen_range(0..candidates.len())];
    let target = (maneuver == Maneuver::LaneChange).then(|| {
        let n = &road.routes[route].neighbors;
        n[rng.gen_range(0..n.len())]
    });
    AgentPlan {
        maneuver,
        route,
        target,
        stations: speed_profile(w, rng),
    }
}

/// Index of the agent with the richest maneuver; ties go to the lower index.
pub fn choose_focal(plans: &[AgentPlan]) -> usize {
    let mut best = 0;
    for (i, p) in plans.iter().enumerate() {
        if p.maneuver.richness() > plans[best].maneuver.richness() {
            best = i;
        }
    }
    best
}

/// Places the focal agent so that its route event (turn or curve) starts
/// after the present step and completes inside the future window.
fn place_focal(road: &RoadLayout, plan: &mut AgentPlan, w: &Window, rng: &mut impl Rng) -> f64 {
    let p = w.present();
    let route = &road.routes[plan.route];
    let Some((ev0, ev1)) = route.event else {
        return place_free(road, plan, w, rng);
    };
    for _ in 0..50 {
        let st = &plan.stations;
        let ahead = st[w.total() - 1] - st[p];
        let lo = ev1 + 2.0 - ahead;
        if lo <= ev0 {
            return rng.gen_range(lo..=ev0) - st[p];
        }
        plan.stations = speed_profile(w, rng);
    }
    ev0 - plan.stations[p]
}

/// Uniform placement keeping the whole window on the route.
fn place_free(road: &RoadLayout, plan: &AgentPlan, w: &Window, rng: &mut impl Rng) -> f64 {
    let len = road.routes[plan.route].path.length();
    let span = plan.stations[w.total() - 1];
    if span >= len {
        return 0.0;
    }
    rng.gen_range(0.0..len - span)
}

/// Placement putting the agent at arc length `station` at the present step,
/// if the whole window then stays on the route.
fn place_leader(road: &RoadLayout, plan: &AgentPlan, station: f64, w: &Window) -> Option<f64> {
    let base = station - plan.stations[w.present()];
    let end = base + plan.stations[w.total() - 1];
    (base >= 0.0 && end <= road.routes[plan.route].path.length()).then_some(base)
}

fn lane_change_blend(maneuver: Maneuver, focal: bool, w: &Window, rng: &mut impl Rng) -> Option<(f64, f64)> {
    if maneuver != Maneuver::LaneChange {
        return None;
    }
    let duration = rng.gen_range(25.0..35.0);
    let p = w.present() as f64;
    let start = if focal {
        rng.gen_range(p - 5.0..=p + 5.0)
    } else {
        rng.gen_range(0.0..=(w.total() as f64 - duration))
    };
    Some((start, duration))
}

/// Simulates every agent of a scene. Returns the tracks and the focal index.
pub fn simulate_agents(
    road: &RoadLayout,
    n_agents: usize,
    mix: &ManeuverMix,
    noise_std: f64,
    w: &Window,
    rng: &mut impl Rng,
) -> (Vec<AgentTrack>, usize) {
    let mut plans: Vec<AgentPlan> = (0..n_agents).map(|_| plan_agent(road, mix, w, rng)).collect();
    let focal = choose_focal(&plans);
    let noise = Normal::new(0.0, noise_std.max(0.0)).expect("finite std");
    let p = w.present();

    let mut placed: Vec<Point2> = Vec::with_capacity(n_agents);
    let order: Vec<usize> = std::iter::once(focal).chain((0..n_agents).filter(|&i| i != focal)).collect();
    let mut out: Vec<Option<AgentTrack>> = vec![None; n_agents];
    let mut focal_station = 0.0;
    for &i in &order {
        let is_focal = i == focal;
        let mut lead_gap = None;
        if i > focal && rng.gen_bool(FOLLOW_PROB) {
            plans[i].maneuver = plans[focal].maneuver;
            plans[i].route = plans[focal].route;
            plans[i].target = plans[focal].target;
            lead_gap = Some(rng.gen_range(LEAD_GAP.0..=LEAD_GAP.1));
        }
        let blend = lane_change_blend(plans[i].maneuver, is_focal, w, rng);
        let mut positions = Vec::new();
        for attempt in 0..30 {
            let base = if is_focal {
                let b = place_focal(road, &mut plans[i], w, rng);
                focal_station = b + plans[i].stations[p];
                b
            } else {
                match lead_gap.and_then(|g| place_leader(road, &plans[i], focal_station + g, w)) {
                    Some(b) if attempt == 0 => b,
                    _ => place_free(road, &plans[i], w, rng),
                }
            };
            positions = trace(road, &plans[i], base, blend, w);
            let now = positions[p];
            if is_focal || attempt == 29 || placed.iter().all(|q| q.dist(now) >= MIN_SPACING) {
                break;
            }
        }
        placed.push(positions[p]);

        let mut points: Vec<Option<Point2>> = positions
            .iter()
            .map(|q| {
                let q = if noise_std > 0.0 {
                    Point2::new(q.x + noise.sample(rng), q.y + noise.sample(rng))
                } else {
                    *q
                };
                Some(quantize_point(q))
            })
            .collect();
        if rng.gen_bool(OCCLUSION_PROB) {
            let hidden = rng.gen_range(1..=w.history - 2);
            for pt in points.iter_mut().take(hidden) {
                *pt = None;
            }
        }
        let future = points.split_off(w.history);
        out[i] = Some(AgentTrack {
            id: format!("agent{i}"),
            history: points,
            future,
            is_focal,
        });
    }
    let tracks = out.into_iter().map(|t| t.expect("every agent simulated")).collect();
    (tracks, focal)
}

/// Noise-free positions of an agent placed at arc length `base`.
fn trace(road: &RoadLayout, plan: &AgentPlan, base: f64, blend: Option<(f64, f64)>, w: &Window) -> Vec<Point2> {
    let route = &road.routes[plan.route];
    let target = plan.target.map(|t| road.routes[t].offset).unwrap_or(route.offset);
    let mut s = base + plan.stations[0];
    (0..w.total())
        .map(|i| {
            let weight = match blend {
                Some((start, dur)) => {
                    let u = ((i as f64 - start) / dur).clamp(0.0, 1.0);
                    0.5 * (1.0 - (PI * u).cos())
                }
                None => 0.0,
            };
            let offset = route.offset + weight * (target - route.offset);
            let p = route.path.offset_pose(s, offset).0;
            if i + 1 < w.total() {
                s = route.path.advance(s, plan.stations[i + 1] - plan.stations[i], offset);
            }
            p
        })
        .collect()
}
