#![allow(dead_code)]

pub mod checks;

use mftp::config::ModelConfig;
use mftp::scene::{AgentTrack, DrivableArea, MapPolyline, Point2, Scene};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn small_config(d: usize) -> ModelConfig {
    ModelConfig {
        d_model: d,
        heads: 2,
        ffn_mult: 2,
        encoder_layers: 1,
        decoder_layers: 1,
        ..ModelConfig::default()
    }
}

fn track(id: &str, cfg: &ModelConfig, start: Point2, vel: Point2, curve: f64, focal: bool, rng: &mut ChaCha8Rng) -> AgentTrack {
    let total = cfg.history_len + cfg.future_len;
    let dt = 1.0 / cfg.sample_rate;
    let mut p = start;
    let mut v = vel;
    let mut pts = Vec::with_capacity(total);
    for _ in 0..total {
        pts.push(Some(Point2::new(
            p.x + rng.gen_range(-0.05..0.05),
            p.y + rng.gen_range(-0.05..0.05),
        )));
        let (s, c) = (curve * dt).sin_cos();
        v = Point2::new(c * v.x - s * v.y, s * v.x + c * v.y);
        p = p.add(v.scale(dt));
    }
    let future = pts.split_off(cfg.history_len);
    AgentTrack {
        id: id.into(),
        history: pts,
        future,
        is_focal: focal,
    }
}

fn lane(id: &str, cfg: &ModelConfig, start: Point2, heading: f64, spacing: f64) -> MapPolyline {
    let dir = Point2::new(heading.cos(), heading.sin());
    MapPolyline {
        id: id.into(),
        points: (0..cfg.polyline_len)
            .map(|i| Some(start.add(dir.scale(spacing * i as f64))))
            .collect(),
        headings: vec![heading; cfg.polyline_len],
    }
}

/// Two agents on a three-lane road with some missing observations.
pub fn two_agent_scene(cfg: &ModelConfig, seed: u64) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = track("a0", cfg, Point2::new(-20.0, 0.0), Point2::new(8.0, 0.0), 0.05, true, &mut rng);
    let mut b = track("a1", cfg, Point2::new(-30.0, 3.5), Point2::new(7.0, 0.3), -0.02, false, &mut rng);
    a.history[3] = None;
    b.history[0] = None;
    b.history[1] = None;
    b.future[29] = None;
    let map = vec![
        lane("l0", cfg, Point2::new(-40.0, 0.0), 0.0, 4.0),
        lane("l1", cfg, Point2::new(-40.0, 3.5), 0.0, 4.0),
        lane("l2", cfg, Point2::new(0.0, 0.0), 0.3, 4.0),
    ];
    let drivable = DrivableArea {
        polygons: vec![vec![
            Point2::new(-60.0, -2.0),
            Point2::new(60.0, -2.0),
            Point2::new(60.0, 6.0),
            Point2::new(-60.0, 6.0),
        ]],
    };
    Scene {
        id: format!("toy-{seed}"),
        agents: vec![a, b],
        map,
        drivable,
    }
}
