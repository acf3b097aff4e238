//! Per-scene network inputs: motion vectors, validity, poses, and the edge
//! sets of every attention site.
//!
//! All positional information reaches the networks as differences (motion
//! vectors and relative poses), so everything built here is invariant under a
//! global translation of the scene.

use std::sync::Arc;

use crate::config::ModelConfig;
use crate::error::Result;
use crate::nn::{EdgeSet, FeatureArray};
use crate::scene::{compute_map_vectors, compute_motion_vectors, relative_pose, Point2, Pose, Scene};

/// Meters per unit of the relative-position features fed to embedding MLPs.
pub const REL_POS_SCALE: f64 = 20.0;

fn rel_features(a: &Pose, b: &Pose) -> [f64; 4] {
    let r = relative_pose(a, b);
    [r.dx / REL_POS_SCALE, r.dy / REL_POS_SCALE, r.cos, r.sin]
}

#[derive(Debug, Clone)]
pub struct MapInputs {
    /// `N_M * (L-1) x 2` lane displacement vectors.
    pub vectors: FeatureArray,
    /// Valid vector rows of each polyline.
    pub groups: Vec<Vec<usize>>,
    pub anchors: Vec<Pose>,
    pub map_map: Arc<EdgeSet>,
    pub map_map_rel: FeatureArray,
    /// Rows are agent-steps.
    pub agent_map: Arc<EdgeSet>,
    pub agent_map_rel: FeatureArray,
    /// Rows are agent-modes; relational rows are per (agent, lane) pair.
    pub query_map: Arc<EdgeSet>,
    pub query_map_rel: FeatureArray,
}

impl MapInputs {
    pub fn n_polylines(&self) -> usize {
        self.groups.len()
    }
}

#[derive(Debug, Clone)]
pub struct SceneInputs {
    pub n_agents: usize,
    pub steps: usize,
    pub modes: usize,
    pub hier_levels: usize,
    /// `N_A * (T-1) x 2` motion vectors, agent-major.
    pub agent_vectors: FeatureArray,
    pub agent_valid: Vec<bool>,
    pub step_poses: Vec<Pose>,
    pub last_poses: Vec<Pose>,
    /// Causal self-attention over each agent's steps; relational index is the
    /// step offset.
    pub temporal: Arc<EdgeSet>,
    /// Per-step attention across agents within the radius.
    pub spatial: Arc<EdgeSet>,
    pub spatial_rel: FeatureArray,
    /// Hierarchical queries (rows `(agent, mode, level)`) over strided steps;
    /// relational index is the distance from the most recent step.
    pub aggregation: Arc<EdgeSet>,
    pub query_query: Arc<EdgeSet>,
    pub map: Option<MapInputs>,
}

/// Indices `j` in `0..steps` selected by hierarchy level `level` (1-based):
/// the most recent step and every `2^(level-1)`-th step before it.
pub fn strided_steps(steps: usize, level: usize) -> Vec<usize> {
    let stride = 1usize << (level - 1);
    (0..steps).filter(|j| (steps - 1 - j).is_multiple_of(stride)).collect()
}

impl SceneInputs {
    /// Builds inputs from a scene. Map inputs are present iff the scene has
    /// map polylines.
    pub fn new(scene: &Scene, cfg: &ModelConfig) -> Result<Self> {
        scene.validate(cfg)?;
        let n = scene.agents.len();
        let s = cfg.steps();
        let radius = cfg.neighbor_radius;

        let mut vectors = Vec::with_capacity(n * s * 2);
        let mut valid = Vec::with_capacity(n * s);
        let mut step_poses = Vec::with_capacity(n * s);
        let mut last_poses = Vec::with_capacity(n);
        for a in &scene.agents {
            let seq = compute_motion_vectors(a)?;
            let headings = seq.headings();
            let mut last_seen: Option<Point2> = a.history.iter().flatten().next().copied();
            for j in 0..s {
                vectors.extend_from_slice(&seq.vectors[j]);
                valid.push(seq.mask[j]);
                if let Some(p) = a.history[j + 1] {
                    last_seen = Some(p);
                }
                let pos = last_seen.expect("track has a valid point");
                step_poses.push(Pose::new(pos, headings[j]));
            }
            let last = a.last_observed().expect("validated");
            last_poses.push(Pose::new(last, headings[s - 1]));
        }
        let agent_vectors = FeatureArray::from_rows(n * s, 2, vectors);

        let mut b = EdgeSet::builder(true);
        for i in 0..n {
            for j in 0..s {
                if valid[i * s + j] {
                    for jk in 0..=j {
                        if valid[i * s + jk] {
                            b.push(i * s + jk, Some(j - jk));
                        }
                    }
                }
                b.next_query();
            }
        }
        let temporal = Arc::new(b.finish());

        let mut b = EdgeSet::builder(true);
        let mut spatial_rel = Vec::new();
        for i in 0..n {
            for j in 0..s {
                if valid[i * s + j] {
                    let pq = &step_poses[i * s + j];
                    for ik in 0..n {
                        let pk = &step_poses[ik * s + j];
                        if valid[ik * s + j] && pq.position.dist(pk.position) <= radius {
                            b.push(ik * s + j, Some(spatial_rel.len() / 4));
                            spatial_rel.extend_from_slice(&rel_features(pq, pk));
                        }
                    }
                }
                b.next_query();
            }
        }
        let spatial = Arc::new(b.finish());
        let spatial_rel = FeatureArray::from_rows(spatial_rel.len() / 4, 4, spatial_rel);

        let (k, h) = (cfg.modes, cfg.hier_levels);
        let level_steps: Vec<Vec<usize>> = (1..=h).map(|l| strided_steps(s, l)).collect();
        let mut b = EdgeSet::builder(true);
        for i in 0..n {
            for _mode in 0..k {
                for steps in &level_steps {
                    for &j in steps {
                        if valid[i * s + j] {
                            b.push(i * s + j, Some(s - 1 - j));
                        }
                    }
                    b.next_query();
                }
            }
        }
        let aggregation = Arc::new(b.finish());

        let mut b = EdgeSet::builder(false);
        for i in 0..n {
            for _ in 0..k {
                for kk in 0..k {
                    b.push(i * k + kk, None);
                }
                b.next_query();
            }
        }
        let query_query = Arc::new(b.finish());

        let map = if scene.map.is_empty() {
            None
        } else {
            Some(Self::map_inputs(scene, cfg, &valid, &step_poses, &last_poses)?)
        };

        Ok(SceneInputs {
            n_agents: n,
            steps: s,
            modes: k,
            hier_levels: h,
            agent_vectors,
            agent_valid: valid,
            step_poses,
            last_poses,
            temporal,
            spatial,
            spatial_rel,
            aggregation,
            query_query,
            map,
        })
    }

    fn map_inputs(
        scene: &Scene,
        cfg: &ModelConfig,
        valid: &[bool],
        step_poses: &[Pose],
        last_poses: &[Pose],
    ) -> Result<MapInputs> {
        let radius = cfg.neighbor_radius;
        let per = cfg.polyline_len - 1;
        let m = scene.map.len();
        let mut vectors = Vec::with_capacity(m * per * 2);
        let mut groups = Vec::with_capacity(m);
        let mut anchors = Vec::with_capacity(m);
        for (p, lane) in scene.map.iter().enumerate() {
            let seq = compute_map_vectors(lane)?;
            let mut group = Vec::new();
            for (t, (v, &ok)) in seq.vectors.iter().zip(&seq.mask).enumerate() {
                vectors.extend_from_slice(v);
                if ok {
                    group.push(p * per + t);
                }
            }
            groups.push(group);
            anchors.push(lane.anchor().expect("validated polyline"));
        }
        let vectors = FeatureArray::from_rows(m * per, 2, vectors);

        let mut b = EdgeSet::builder(true);
        let mut rel = Vec::new();
        for a in &anchors {
            for (kk, c) in anchors.iter().enumerate() {
                if a.position.dist(c.position) <= radius {
                    b.push(kk, Some(rel.len() / 4));
                    rel.extend_from_slice(&rel_features(a, c));
                }
            }
            b.next_query();
        }
        let map_map = Arc::new(b.finish());
        let map_map_rel = FeatureArray::from_rows(rel.len() / 4, 4, rel);

        let mut b = EdgeSet::builder(true);
        let mut rel = Vec::new();
        for (row, pose) in step_poses.iter().enumerate() {
            if valid[row] {
                for (kk, c) in anchors.iter().enumerate() {
                    if pose.position.dist(c.position) <= radius {
                        b.push(kk, Some(rel.len() / 4));
                        rel.extend_from_slice(&rel_features(pose, c));
                    }
                }
            }
            b.next_query();
        }
        let agent_map = Arc::new(b.finish());
        let agent_map_rel = FeatureArray::from_rows(rel.len() / 4, 4, rel);

        let mut b = EdgeSet::builder(true);
        let mut rel = Vec::new();
        for pose in last_poses {
            let mut lanes = Vec::new();
            for (kk, c) in anchors.iter().enumerate() {
                if pose.position.dist(c.position) <= radius {
                    lanes.push((kk, rel.len() / 4));
                    rel.extend_from_slice(&rel_features(pose, c));
                }
            }
            for _ in 0..cfg.modes {
                for &(kk, r) in &lanes {
                    b.push(kk, Some(r));
                }
                b.next_query();
            }
        }
        let query_map = Arc::new(b.finish());
        let query_map_rel = FeatureArray::from_rows(rel.len() / 4, 4, rel);

        Ok(MapInputs {
            vectors,
            groups,
            anchors,
            map_map,
            map_map_rel,
            agent_map,
            agent_map_rel,
            query_map,
            query_map_rel,
        })
    }

    /// Starting position of every `(agent, mode)` row for trajectory assembly.
    pub fn row_origins(&self) -> Vec<[f64; 2]> {
        let mut out = Vec::with_capacity(self.n_agents * self.modes);
        for p in &self.last_poses {
            for _ in 0..self.modes {
                out.push([p.position.x, p.position.y]);
            }
        }
        out
    }
}
