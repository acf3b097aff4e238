//! Lane networks: straight roads, single curves, T-junctions and crossroads.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::geometry::{Path, Piece};
use crate::scene::{DrivableArea, MapPolyline, Point2};

pub const LANE_WIDTH: f64 = 3.5;
pub const CORRIDOR_WIDTH: f64 = 4.0;
pub const SAMPLE_SPACING: f64 = 2.0;
/// Half size of the junction box.
pub const JUNCTION_HALF: f64 = 7.0;
/// Arm length measured from the junction centre.
pub const ARM_LENGTH: f64 = 80.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    Straight,
    Curve,
    TJunction,
    Crossroads,
}

impl Layout {
    pub const ALL: [Layout; 4] = [Layout::Straight, Layout::Curve, Layout::TJunction, Layout::Crossroads];

    pub fn name(self) -> &'static str {
        match self {
            Layout::Straight => "straight",
            Layout::Curve => "curve",
            Layout::TJunction => "t_junction",
            Layout::Crossroads => "crossroads",
        }
    }

    pub fn parse(s: &str) -> Option<Layout> {
        Layout::ALL.into_iter().find(|l| l.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Maneuver {
    KeepLane,
    LaneChange,
    TurnLeft,
    TurnRight,
}

impl Maneuver {
    pub const ALL: [Maneuver; 4] = [
        Maneuver::KeepLane,
        Maneuver::TurnLeft,
        Maneuver::TurnRight,
        Maneuver::LaneChange,
    ];

    /// Used to choose the focal agent: turns, then lane changes, then lane
    /// keeping.
    pub fn richness(self) -> u8 {
        match self {
            Maneuver::KeepLane => 0,
            Maneuver::LaneChange => 1,
            Maneuver::TurnLeft | Maneuver::TurnRight => 2,
        }
    }
}

/// A mapped lane: a reference path shifted laterally.
#[derive(Debug, Clone, PartialEq)]
pub struct Lane {
    pub id: String,
    pub path: Path,
    pub offset: f64,
}

/// A drivable route from the start of the network to its end.
#[derive(Debug, Clone, PartialEq)]
pub struct Route {
    pub path: Path,
    pub offset: f64,
    /// `KeepLane`, `TurnLeft` or `TurnRight`.
    pub kind: Maneuver,
    /// Arc-length interval of the geometric event (turn or curve), if any.
    pub event: Option<(f64, f64)>,
    /// Routes sharing the reference path at an adjacent offset.
    pub neighbors: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoadLayout {
    pub layout: Layout,
    pub lanes: Vec<Lane>,
    pub routes: Vec<Route>,
}

impl RoadLayout {
    pub fn generate(layout: Layout, rng: &mut impl Rng) -> RoadLayout {
        match layout {
            Layout::Straight => straight(rng),
            Layout::Curve => curve(rng),
            Layout::TJunction => {
                let missing = rng.gen_range(0..4);
                junction(Layout::TJunction, &[0, 1, 2, 3].map(|a| a != missing))
            }
            Layout::Crossroads => junction(Layout::Crossroads, &[true; 4]),
        }
    }

    pub fn supports(&self, m: Maneuver) -> bool {
        self.routes.iter().any(|r| match m {
            Maneuver::LaneChange => !r.neighbors.is_empty(),
            _ => r.kind == m,
        })
    }

    pub fn routes_for(&self, m: Maneuver) -> Vec<usize> {
        (0..self.routes.len())
            .filter(|&i| {
                let r = &self.routes[i];
                match m {
                    Maneuver::LaneChange => !r.neighbors.is_empty(),
                    _ => r.kind == m,
                }
            })
            .collect()
    }

    /// Lane centerlines sampled every [`SAMPLE_SPACING`] meters and cut into
    /// polylines of `points_per_polyline` points sharing their endpoints.
    pub fn polylines(&self, points_per_polyline: usize) -> Vec<MapPolyline> {
        let mut out = Vec::new();
        for lane in &self.lanes {
            let len = lane.path.length();
            let n = (len / SAMPLE_SPACING + 1e-9).floor() as usize + 1;
            let samples: Vec<(Point2, f64)> = (0..n)
                .map(|i| {
                    let (p, h) = lane.path.offset_pose(i as f64 * SAMPLE_SPACING, lane.offset);
                    (quantize_point(p), quantize(h))
                })
                .collect();
            let step = points_per_polyline - 1;
            let mut start = 0;
            let mut chunk = 0;
            while start + 1 < samples.len() {
                let end = (start + points_per_polyline).min(samples.len());
                let mut points: Vec<Option<Point2>> = samples[start..end].iter().map(|s| Some(s.0)).collect();
                let mut headings: Vec<f64> = samples[start..end].iter().map(|s| s.1).collect();
                points.resize(points_per_polyline, None);
                headings.resize(points_per_polyline, 0.0);
                out.push(MapPolyline {
                    id: format!("{}_{chunk}", lane.id),
                    points,
                    headings,
                });
                chunk += 1;
                start += step;
            }
        }
        out
    }

    /// Union of fixed-width corridors around every lane piece.
    pub fn drivable(&self) -> DrivableArea {
        let half = CORRIDOR_WIDTH / 2.0;
        let mut polygons = Vec::new();
        for lane in &self.lanes {
            let starts = lane.path.piece_starts();
            for (piece, &s0) in lane.path.pieces.iter().zip(&starts) {
                let len = piece.length();
                let n = match piece {
                    Piece::Line { .. } => 1,
                    Piece::Arc { .. } => (len / 0.5).ceil().max(2.0) as usize,
                };
                let stations: Vec<f64> = (0..=n).map(|i| s0 + len * i as f64 / n as f64).collect();
                let mut poly: Vec<Point2> = stations
                    .iter()
                    .map(|&s| lane.path.offset_pose(s, lane.offset + half).0)
                    .collect();
                poly.extend(stations.iter().rev().map(|&s| lane.path.offset_pose(s, lane.offset - half).0));
                polygons.push(poly.into_iter().map(quantize_point).collect());
            }
        }
        DrivableArea { polygons }
    }
}

pub fn quantize(v: f64) -> f64 {
    let q = (v * 1e6).round() / 1e6;
    if q == 0.0 {
        0.0
    } else {
        q
    }
}

pub fn quantize_point(p: Point2) -> Point2 {
    Point2::new(quantize(p.x), quantize(p.y))
}

fn straight(rng: &mut impl Rng) -> RoadLayout {
    let n = rng.gen_range(2..=3);
    let path = Path::new(Point2::new(-100.0, 0.0), 0.0).line(200.0).build();
    parallel(Layout::Straight, path, n, None)
}

fn curve(rng: &mut impl Rng) -> RoadLayout {
    let n = rng.gen_range(1..=2);
    let radius = rng.gen_range(30.0..80.0);
    let sweep = rng.gen_range(PI / 3.0..FRAC_PI_2);
    let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    let lead = 100.0;
    let path = Path::new(Point2::new(-lead, 0.0), 0.0)
        .line(lead)
        .arc(radius, side * sweep)
        .line(60.0)
        .build();
    let event = (lead, lead + radius * sweep);
    // Offset lanes go to the outside of the curve so their radius grows.
    let mut layout = parallel(Layout::Curve, path, n, Some(event));
    for (lane, route) in layout.lanes.iter_mut().zip(layout.routes.iter_mut()) {
        lane.offset *= -side;
        route.offset *= -side;
    }
    layout
}

fn parallel(layout: Layout, path: Path, n: usize, event: Option<(f64, f64)>) -> RoadLayout {
    let lanes = (0..n)
        .map(|i| Lane {
            id: format!("lane{i}"),
            path: path.clone(),
            offset: i as f64 * LANE_WIDTH,
        })
        .collect();
    let routes = (0..n)
        .map(|i| Route {
            path: path.clone(),
            offset: i as f64 * LANE_WIDTH,
            kind: Maneuver::KeepLane,
            event,
            neighbors: [i.checked_sub(1), (i + 1 < n).then_some(i + 1)].into_iter().flatten().collect(),
        })
        .collect();
    RoadLayout { layout, lanes, routes }
}

/// Arms are indexed counter-clockwise starting from the west: 0 west,
/// 1 south, 2 east, 3 north. Traffic keeps to the right.
fn junction(layout: Layout, arms: &[bool; 4]) -> RoadLayout {
    let j = JUNCTION_HALF;
    let h = LANE_WIDTH / 2.0;
    let arm = ARM_LENGTH - j;
    let approach = Path::new(Point2::new(-ARM_LENGTH, -h), 0.0).line(arm).build();
    let exit = Path::new(Point2::new(-j, h), PI).line(arm).build();
    let conn_start = Point2::new(-j, -h);
    let connectors = [
        (Maneuver::KeepLane, 2, Path::new(conn_start, 0.0).line(2.0 * j).build()),
        (Maneuver::TurnRight, 1, Path::new(conn_start, 0.0).arc(j - h, -FRAC_PI_2).build()),
        (Maneuver::TurnLeft, 3, Path::new(conn_start, 0.0).arc(j + h, FRAC_PI_2).build()),
    ];
    let rot = |a: usize| a as f64 * FRAC_PI_2;

    let mut lanes = Vec::new();
    for a in (0..4).filter(|&a| arms[a]) {
        lanes.push(Lane {
            id: format!("in{a}"),
            path: approach.rotated(rot(a)),
            offset: 0.0,
        });
        lanes.push(Lane {
            id: format!("out{a}"),
            path: exit.rotated(rot(a)),
            offset: 0.0,
        });
    }
    let mut routes = Vec::new();
    for a in (0..4).filter(|&a| arms[a]) {
        for (kind, rel, conn) in &connectors {
            let target = (a + rel) % 4;
            if !arms[target] {
                continue;
            }
            let conn = conn.rotated(rot(a));
            lanes.push(Lane {
                id: format!("conn{a}{target}"),
                path: conn.clone(),
                offset: 0.0,
            });
            // Exit lanes of arm `t` are the canonical exit rotated by `t`; they
            // start at the junction edge heading away from the centre.
            let out = exit_path(target);
            let entry = approach.rotated(rot(a));
            let ev0 = entry.length();
            let ev1 = ev0 + conn.length();
            routes.push(Route {
                path: Path::join(&[&entry, &conn, &out]),
                offset: 0.0,
                kind: *kind,
                event: Some((ev0, ev1)),
                neighbors: Vec::new(),
            });
        }
    }
    RoadLayout { layout, lanes, routes }
}

/// Outbound lane of arm `a`, from the junction edge to the arm end.
fn exit_path(a: usize) -> Path {
    let j = JUNCTION_HALF;
    let h = LANE_WIDTH / 2.0;
    Path::new(Point2::new(-j, h), PI)
        .line(ARM_LENGTH - j)
        .build()
        .rotated(a as f64 * FRAC_PI_2)
}
