//! Scene domain types and the preprocessing that turns absolute positions into
//! the relative representation the networks consume.

use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }

    pub fn sub(self, o: Point2) -> Point2 {
        Point2::new(self.x - o.x, self.y - o.y)
    }

    pub fn add(self, o: Point2) -> Point2 {
        Point2::new(self.x + o.x, self.y + o.y)
    }

    pub fn scale(self, s: f64) -> Point2 {
        Point2::new(self.x * s, self.y * s)
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(self, o: Point2) -> f64 {
        self.sub(o).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// One agent's observed history and (when known) ground-truth future.
///
/// `None` entries are invalid steps. History is ordered oldest first, so the
/// most recent observation is the last element.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentTrack {
    pub id: String,
    pub history: Vec<Option<Point2>>,
    pub future: Vec<Option<Point2>>,
    pub is_focal: bool,
}

impl AgentTrack {
    pub fn last_observed(&self) -> Option<Point2> {
        self.history.last().copied().flatten()
    }

    pub fn has_future(&self) -> bool {
        self.future.iter().any(Option::is_some)
    }
}

/// A lane centerline segment of fixed length `L`, padded with invalid points.
#[derive(Debug, Clone, PartialEq)]
pub struct MapPolyline {
    pub id: String,
    pub points: Vec<Option<Point2>>,
    /// Tangent heading per point, radians.
    pub headings: Vec<f64>,
}

impl MapPolyline {
    /// Pose used to relate this polyline to other scene elements: the middle
    /// valid point and its heading.
    pub fn anchor(&self) -> Option<Pose> {
        let valid: Vec<usize> = (0..self.points.len())
            .filter(|&i| self.points[i].is_some())
            .collect();
        let &mid = valid.get(valid.len().checked_sub(1)? / 2)?;
        Some(Pose::new(self.points[mid]?, self.headings[mid]))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DrivableArea {
    pub polygons: Vec<Vec<Point2>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub id: String,
    pub agents: Vec<AgentTrack>,
    pub map: Vec<MapPolyline>,
    pub drivable: DrivableArea,
}

impl Scene {
    pub fn focal_index(&self) -> Option<usize> {
        self.agents.iter().position(|a| a.is_focal)
    }

    /// The map-free view handed to a student network.
    pub fn without_map(&self) -> Scene {
        Scene {
            id: self.id.clone(),
            agents: self.agents.clone(),
            map: Vec::new(),
            drivable: self.drivable.clone(),
        }
    }

    /// Applies the same translation to every coordinate in the scene.
    pub fn translated(&self, by: Point2) -> Scene {
        let mv = |p: &Option<Point2>| p.map(|p| p.add(by));
        Scene {
            id: self.id.clone(),
            agents: self
                .agents
                .iter()
                .map(|a| AgentTrack {
                    id: a.id.clone(),
                    history: a.history.iter().map(mv).collect(),
                    future: a.future.iter().map(mv).collect(),
                    is_focal: a.is_focal,
                })
                .collect(),
            map: self
                .map
                .iter()
                .map(|l| MapPolyline {
                    id: l.id.clone(),
                    points: l.points.iter().map(mv).collect(),
                    headings: l.headings.clone(),
                })
                .collect(),
            drivable: DrivableArea {
                polygons: self
                    .drivable
                    .polygons
                    .iter()
                    .map(|poly| poly.iter().map(|p| p.add(by)).collect())
                    .collect(),
            },
        }
    }

    /// Checks the structural invariants against a model configuration.
    pub fn validate(&self, cfg: &ModelConfig) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidScene(format!("{}: {m}", self.id)));
        if self.agents.is_empty() {
            return bad("no agents".into());
        }
        let focal = self.agents.iter().filter(|a| a.is_focal).count();
        if focal != 1 {
            return bad(format!("expected exactly one focal agent, found {focal}"));
        }
        for a in &self.agents {
            if a.history.len() != cfg.history_len {
                return bad(format!(
                    "agent {} has {} history steps, expected {}",
                    a.id,
                    a.history.len(),
                    cfg.history_len
                ));
            }
            if !a.future.is_empty() && a.future.len() != cfg.future_len {
                return bad(format!(
                    "agent {} has {} future steps, expected {}",
                    a.id,
                    a.future.len(),
                    cfg.future_len
                ));
            }
            if a.last_observed().is_none() {
                return bad(format!("agent {} is not observed at the present step", a.id));
            }
            let all = a.history.iter().chain(a.future.iter()).flatten();
            if all.clone().any(|p| !p.is_finite()) {
                return bad(format!("agent {} has non-finite coordinates", a.id));
            }
        }
        for l in &self.map {
            if l.points.len() != cfg.polyline_len || l.headings.len() != cfg.polyline_len {
                return bad(format!("polyline {} does not have {} points", l.id, cfg.polyline_len));
            }
            if l.points.iter().flatten().count() < 2 {
                return bad(format!("polyline {} has fewer than 2 valid points", l.id));
            }
            if l.headings.iter().any(|h| !h.is_finite()) {
                return bad(format!("polyline {} has non-finite headings", l.id));
            }
        }
        for (i, poly) in self.drivable.polygons.iter().enumerate() {
            if poly.len() < 3 || polygon_area(poly).abs() <= 0.0 {
                return Err(Error::DegeneratePolygon(i));
            }
        }
        Ok(())
    }
}

/// Signed shoelace area (positive for counter-clockwise winding).
pub fn polygon_area(poly: &[Point2]) -> f64 {
    let n = poly.len();
    let mut acc = 0.0;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        acc += a.x * b.y - b.x * a.y;
    }
    0.5 * acc
}

/// Displacements between consecutive points with a pairwise validity mask.
///
/// Masked-out entries are zero-filled; the mask is the single source of truth.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence {
    pub vectors: Vec<[f64; 2]>,
    pub mask: Vec<bool>,
}

impl MotionSequence {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Heading at each step: direction of the most recent valid non-zero
    /// vector at or before the step, 0 when there is none.
    pub fn headings(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        let mut current = 0.0;
        for (v, &m) in self.vectors.iter().zip(&self.mask) {
            if m && v[0].hypot(v[1]) > 1e-9 {
                current = v[1].atan2(v[0]);
            }
            out.push(current);
        }
        out
    }
}

fn difference(id: &str, points: &[Option<Point2>]) -> Result<MotionSequence> {
    let n = points.len().saturating_sub(1);
    let mut vectors = Vec::with_capacity(n);
    let mut mask = Vec::with_capacity(n);
    for w in points.windows(2) {
        match (w[0], w[1]) {
            (Some(a), Some(b)) => {
                vectors.push([b.x - a.x, b.y - a.y]);
                mask.push(true);
            }
            _ => {
                vectors.push([0.0, 0.0]);
                mask.push(false);
            }
        }
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::NoValidPair(id.to_string()));
    }
    Ok(MotionSequence { vectors, mask })
}

/// Motion vectors `P[t+1] - P[t]` of an agent history.
pub fn compute_motion_vectors(track: &AgentTrack) -> Result<MotionSequence> {
    difference(&track.id, &track.history)
}

/// Displacement vectors between consecutive lane points.
pub fn compute_map_vectors(polyline: &MapPolyline) -> Result<MotionSequence> {
    difference(&polyline.id, &polyline.points)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub position: Point2,
    pub heading: f64,
}

impl Pose {
    pub const fn new(position: Point2, heading: f64) -> Self {
        Pose { position, heading }
    }

    /// Maps a point expressed in this pose's frame back to world coordinates.
    pub fn to_world(&self, local: Point2) -> Point2 {
        let (s, c) = self.heading.sin_cos();
        Point2::new(
            self.position.x + c * local.x - s * local.y,
            self.position.y + s * local.x + c * local.y,
        )
    }
}

/// `b` expressed in `a`'s frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativePose {
    pub dx: f64,
    pub dy: f64,
    pub cos: f64,
    pub sin: f64,
}

impl RelativePose {
    pub fn to_array(self) -> [f64; 4] {
        [self.dx, self.dy, self.cos, self.sin]
    }
}

pub fn relative_pose(a: &Pose, b: &Pose) -> RelativePose {
    let d = b.position.sub(a.position);
    let (s, c) = a.heading.sin_cos();
    let (ds, dc) = (b.heading - a.heading).sin_cos();
    RelativePose {
        dx: c * d.x + s * d.y,
        dy: -s * d.x + c * d.y,
        cos: dc,
        sin: ds,
    }
}
