//! Winner-take-all matching, Gaussian regression, mode classification and
//! feature distillation losses.

use serde::{Deserialize, Serialize};

use crate::decoder::Decoded;
use crate::error::{Error, Result};
use crate::model::{ForwardPass, PredictionSet, QueryFeatures};
use crate::nn::{FeatureArray, Graph, NllPoint, ParameterSet, Var};
use crate::scene::{Point2, Scene};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeMatch {
    pub mode: usize,
    /// Average displacement error of the matched mode in meters.
    pub ade: f64,
}

/// Per-agent matches. Agents without a valid future point are `None` and
/// excluded from every loss.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub matches: Vec<Option<ModeMatch>>,
}

impl MatchResult {
    pub fn matched(&self) -> impl Iterator<Item = (usize, ModeMatch)> + '_ {
        self.matches.iter().enumerate().filter_map(|(i, m)| m.map(|m| (i, m)))
    }

    pub fn n_matched(&self) -> usize {
        self.matches.iter().flatten().count()
    }
}

/// Matches on raw interleaved trajectories laid out `[agent][mode][step][xy]`.
pub fn match_trajectories(
    trajectories: &[f64],
    modes: usize,
    future_len: usize,
    futures: &[Vec<Option<Point2>>],
) -> MatchResult {
    let matches = futures
        .iter()
        .enumerate()
        .map(|(i, fut)| {
            let n_valid = fut.iter().flatten().count();
            if n_valid == 0 {
                return None;
            }
            let mut best: Option<ModeMatch> = None;
            for k in 0..modes {
                let base = (i * modes + k) * future_len * 2;
                let mut sum = 0.0;
                for (t, p) in fut.iter().enumerate().take(future_len) {
                    if let Some(p) = p {
                        let dx = trajectories[base + 2 * t] - p.x;
                        let dy = trajectories[base + 2 * t + 1] - p.y;
                        sum += (dx * dx + dy * dy).sqrt();
                    }
                }
                let ade = sum / n_valid as f64;
                if best.is_none_or(|b| ade < b.ade) {
                    best = Some(ModeMatch { mode: k, ade });
                }
            }
            best
        })
        .collect();
    MatchResult { matches }
}

pub fn match_best_mode(pred: &PredictionSet, futures: &[Vec<Option<Point2>>]) -> MatchResult {
    match_trajectories(&pred.trajectories, pred.modes, pred.future_len, futures)
}

pub fn scene_futures(scene: &Scene) -> Vec<Vec<Option<Point2>>> {
    scene.agents.iter().map(|a| a.future.clone()).collect()
}

fn nll_points(matches: &MatchResult, modes: usize, futures: &[Vec<Option<Point2>>]) -> Vec<NllPoint> {
    let mut points = Vec::new();
    for (i, m) in matches.matched() {
        for (t, p) in futures[i].iter().enumerate() {
            if let Some(p) = p {
                points.push(NllPoint {
                    row: i * modes + m.mode,
                    step: t,
                    target: [p.x, p.y],
                });
            }
        }
    }
    points
}

fn cls_targets(matches: &MatchResult) -> Vec<(usize, usize)> {
    matches.matched().map(|(i, m)| (i, m.mode)).collect()
}

#[derive(Debug, Clone, Copy)]
pub struct TaskLosses {
    pub reg: Var,
    pub cls: Var,
}

/// Regression and classification losses on the tape. Matching is computed
/// from the current predicted positions and carries no gradient.
pub fn task_losses(
    g: &mut Graph,
    decoded: &Decoded,
    modes: usize,
    futures: &[Vec<Option<Point2>>],
) -> (TaskLosses, MatchResult) {
    let pos = g.value(decoded.positions);
    let future_len = pos.cols() / 2;
    let matches = match_trajectories(pos.values(), modes, future_len, futures);
    let n = matches.n_matched();
    let reg = g.nll(decoded.positions, decoded.log_vars, nll_points(&matches, modes, futures), n);
    let cls = g.cross_entropy(decoded.confidences, cls_targets(&matches));
    (TaskLosses { reg, cls }, matches)
}

fn check_shape(student: &FeatureArray, teacher: &FeatureArray) -> Result<()> {
    if student.shape() != teacher.shape() {
        return Err(Error::Shape(format!(
            "distillation pair {:?} vs {:?}",
            student.shape(),
            teacher.shape()
        )));
    }
    Ok(())
}

/// Encoder plus decoder distillation on the tape against constant teacher
/// features.
pub fn kd_loss(g: &mut Graph, fp: &ForwardPass, teacher: &QueryFeatures, squared: bool) -> Result<Var> {
    if fp.decoded.steps.len() != teacher.step_feats.len() {
        return Err(Error::Shape(format!(
            "decoder iterations {} vs teacher {}",
            fp.decoded.steps.len(),
            teacher.step_feats.len()
        )));
    }
    check_shape(g.value(fp.encoded.queries), &teacher.queries)?;
    let enc = g.distill(fp.encoded.queries, teacher.queries.values().to_vec(), squared);
    let mut target = Vec::new();
    let mut parts = Vec::with_capacity(teacher.step_feats.len());
    for (s, t) in fp.decoded.steps.iter().zip(&teacher.step_feats) {
        check_shape(g.value(s.query_feats), t)?;
        target.extend_from_slice(t.values());
        parts.push(s.query_feats);
    }
    let stacked = g.concat_rows(&parts);
    let dec = g.distill(stacked, target, squared);
    Ok(g.weighted_sum(&[(enc, 1.0), (dec, 1.0)]))
}

/// `alpha * reg + beta * cls + gamma * kd` on the tape. A missing `kd` term
/// contributes zero.
pub fn total_loss_var(g: &mut Graph, task: TaskLosses, kd: Option<Var>, w: &LossWeights) -> Var {
    let mut terms = vec![(task.reg, w.alpha), (task.cls, w.beta)];
    if let Some(kd) = kd {
        terms.push((kd, w.gamma));
    }
    g.weighted_sum(&terms)
}

fn with_graph<T>(f: impl FnOnce(&mut Graph) -> T) -> T {
    let empty = ParameterSet::new();
    let mut g = Graph::new(&empty);
    f(&mut g)
}

/// Gaussian negative log-likelihood of the matched modes, summed over valid
/// points and averaged over matched agents.
pub fn nll_loss(pred: &PredictionSet, futures: &[Vec<Option<Point2>>], matches: &MatchResult) -> f64 {
    let rows = pred.n_agents * pred.modes;
    let cols = 2 * pred.future_len;
    with_graph(|g| {
        let pos = g.constant(FeatureArray::from_rows(rows, cols, pred.trajectories.clone()));
        let lv = g.constant(FeatureArray::from_rows(
            rows,
            cols,
            pred.variances.iter().map(|v| v.ln()).collect(),
        ));
        let loss = g.nll(pos, lv, nll_points(matches, pred.modes, futures), matches.n_matched());
        g.scalar(loss)
    })
}

/// Mean over matched agents of `-ln(confidence of the matched mode)`.
pub fn cls_loss(pred: &PredictionSet, matches: &MatchResult) -> f64 {
    with_graph(|g| {
        let probs = g.constant(FeatureArray::from_rows(
            pred.n_agents,
            pred.modes,
            pred.confidences.clone(),
        ));
        let loss = g.cross_entropy(probs, cls_targets(matches));
        g.scalar(loss)
    })
}

/// Mean over query pairs of the L2 distance (squared if `squared`).
pub fn kd_encoder_loss(student: &FeatureArray, teacher: &FeatureArray, squared: bool) -> Result<f64> {
    check_shape(student, teacher)?;
    Ok(with_graph(|g| {
        let x = g.constant(student.clone());
        let loss = g.distill(x, teacher.values().to_vec(), squared);
        g.scalar(loss)
    }))
}

/// Mean over all iteration and query pairs of the L2 distance.
pub fn kd_decoder_loss(student: &[FeatureArray], teacher: &[FeatureArray], squared: bool) -> Result<f64> {
    if student.len() != teacher.len() {
        return Err(Error::Shape(format!(
            "decoder iterations {} vs teacher {}",
            student.len(),
            teacher.len()
        )));
    }
    let mut total = 0.0;
    let mut rows = 0;
    for (s, t) in student.iter().zip(teacher) {
        let n = s.rows();
        total += kd_encoder_loss(s, t, squared)? * n as f64;
        rows += n;
    }
    Ok(if rows == 0 { 0.0 } else { total / rows as f64 })
}

pub fn total_loss(reg: f64, cls: f64, kd: f64, w: &LossWeights) -> f64 {
    w.alpha * reg + w.beta * cls + w.gamma * kd
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pred(n: usize, k: usize, nt: usize, traj: Vec<f64>, var: f64, conf: Vec<f64>) -> PredictionSet {
        let len = traj.len();
        PredictionSet {
            n_agents: n,
            modes: k,
            future_len: nt,
            trajectories: traj,
            deltas: vec![0.0; len],
            variances: vec![var; len],
            confidences: conf,
        }
    }

    fn fut(points: &[(f64, f64)]) -> Vec<Option<Point2>> {
        points.iter().map(|&(x, y)| Some(Point2::new(x, y))).collect()
    }

    #[test]
    fn exact_mode_is_selected() {
        let p = pred(1, 3, 1, vec![1.0, 0.0, 0.0, 0.0, 2.0, 0.0], 1.0, vec![1.0 / 3.0; 3]);
        let m = match_best_mode(&p, &[fut(&[(0.0, 0.0)])]);
        assert_eq!(m.matches[0], Some(ModeMatch { mode: 1, ade: 0.0 }));
    }

    #[test]
    fn ties_pick_first_mode() {
        let p = pred(1, 3, 1, vec![1.0, 1.0, 1.0, 1.0, 1.0, 1.0], 1.0, vec![1.0 / 3.0; 3]);
        let m = match_best_mode(&p, &[fut(&[(0.0, 0.0)])]);
        assert_eq!(m.matches[0].unwrap().mode, 0);
    }

    #[test]
    fn agent_without_future_is_excluded() {
        let p = pred(2, 1, 1, vec![0.0, 0.0, 5.0, 5.0], 1.0, vec![1.0, 1.0]);
        let m = match_best_mode(&p, &[fut(&[(0.0, 0.0)]), vec![None]]);
        assert_eq!(m.n_matched(), 1);
        assert!(m.matches[1].is_none());
        let ln2pi = (2.0 * std::f64::consts::PI).ln();
        assert!((nll_loss(&p, &[fut(&[(0.0, 0.0)]), vec![None]], &m) - ln2pi).abs() < 1e-12);
    }

    #[test]
    fn nll_spot_values() {
        let ln2pi = (2.0 * std::f64::consts::PI).ln();
        let p = pred(1, 1, 1, vec![0.0, 0.0], 1.0, vec![1.0]);
        let f = [fut(&[(0.0, 0.0)])];
        let m = match_best_mode(&p, &f);
        assert!((nll_loss(&p, &f, &m) - 1.837877066409345).abs() < 1e-9);
        let p = pred(1, 1, 2, vec![0.0; 4], 1.0, vec![1.0]);
        let f = [fut(&[(0.0, 0.0), (0.0, 0.0)])];
        let m = match_best_mode(&p, &f);
        assert!((nll_loss(&p, &f, &m) - 2.0 * ln2pi).abs() < 1e-12);
    }

    #[test]
    fn cls_spot_values() {
        let p = pred(1, 6, 1, vec![0.0; 12], 1.0, vec![1.0 / 6.0; 6]);
        let m = match_best_mode(&p, &[fut(&[(0.0, 0.0)])]);
        assert!((cls_loss(&p, &m) - 6f64.ln()).abs() < 1e-9);
        let p = pred(1, 2, 1, vec![0.0, 0.0, 9.0, 9.0], 1.0, vec![1.0, 0.0]);
        let m = match_best_mode(&p, &[fut(&[(0.0, 0.0)])]);
        assert_eq!(cls_loss(&p, &m), 0.0);
        let p = pred(2, 2, 1, vec![0.0, 0.0, 9.0, 9.0, 0.0, 0.0, 9.0, 9.0], 1.0, vec![0.5, 0.5, 0.75, 0.25]);
        let m = match_best_mode(&p, &[fut(&[(0.0, 0.0)]), fut(&[(9.0, 9.0)])]);
        assert!((cls_loss(&p, &m) - 1.0397207708399179).abs() < 1e-12);
    }

    #[test]
    fn kd_spot_values() {
        let t = FeatureArray::zeros(&[12, 4]);
        assert_eq!(kd_encoder_loss(&t, &t, false).unwrap(), 0.0);
        let mut s = t.clone();
        s.values_mut()[5 * 4 + 2] = 1.0;
        assert!((kd_encoder_loss(&s, &t, false).unwrap() - 1.0 / 12.0).abs() < 1e-15);

        let zeros = vec![FeatureArray::zeros(&[12, 4]); 3];
        let mut st = zeros.clone();
        st[1].values_mut()[3] = 2.5;
        assert!((kd_decoder_loss(&st, &zeros, false).unwrap() - 2.5 / 36.0).abs() < 1e-15);
        assert!(kd_decoder_loss(&st[..2], &zeros, false).is_err());
        assert!(kd_encoder_loss(&FeatureArray::zeros(&[2, 4]), &t, false).is_err());
    }

    #[test]
    fn total_spot_values() {
        let w = LossWeights::default();
        assert_eq!(total_loss(1.0, 2.0, 3.0, &w), 6.0);
        assert_eq!(total_loss(1.0, 2.0, 0.0, &w), 3.0);
    }
}
