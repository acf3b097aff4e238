//! Teacher training and student distillation: Adam with cosine annealing,
//! global gradient-norm clipping and order-fixed batch reductions.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalOptions};
use crate::inputs::SceneInputs;
use crate::losses::{kd_loss, scene_futures, task_losses, total_loss_var, LossWeights};
use crate::metrics::MetricReport;
use crate::model::{Network, QueryFeatures};
use crate::nn::{Graph, ParameterSet};
use crate::scene::Scene;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Teacher,
    StudentNkd,
    StudentKd,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Teacher => "teacher",
            Phase::StudentNkd => "student_nkd",
            Phase::StudentKd => "student_kd",
        }
    }

    pub fn parse(s: &str) -> Option<Phase> {
        [Phase::Teacher, Phase::StudentNkd, Phase::StudentKd]
            .into_iter()
            .find(|p| p.name() == s)
    }

    pub fn uses_map(self) -> bool {
        self == Phase::Teacher
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub seed: u64,
    pub weights: LossWeights,
    pub phase: Phase,
    /// Global gradient-norm bound; zero disables clipping.
    pub grad_clip: f64,
    /// Square the per-pair distillation distance.
    pub kd_squared: bool,
    /// Run validation every this many epochs (and always after the last).
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 16,
            base_lr: 1e-4,
            seed: 0,
            weights: LossWeights::default(),
            phase: Phase::Teacher,
            grad_clip: 5.0,
            kd_squared: false,
            eval_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.base_lr)));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be at least 1".into()));
        }
        Ok(())
    }

    fn kd_active(&self) -> bool {
        self.phase == Phase::StudentKd && self.weights.gamma != 0.0
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// One bias-corrected Adam update of a flat array. `step` counts from 1.
pub fn adam_update(value: &mut [f64], grad: &[f64], m: &mut [f64], v: &mut [f64], step: u64, lr: f64) {
    let c1 = 1.0 - ADAM_BETA1.powi(step as i32);
    let c2 = 1.0 - ADAM_BETA2.powi(step as i32);
    for i in 0..value.len() {
        let g = grad[i];
        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g;
        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g * g;
        let mh = m[i] / c1;
        let vh = v[i] / c2;
        value[i] -= lr * mh / (vh.sqrt() + ADAM_EPS);
    }
}

/// Applies Adam to every parameter using the gradients stored in the set.
pub fn adam_step(params: &mut ParameterSet, step: u64, lr: f64) {
    for e in params.entries_mut() {
        let crate::nn::ParamEntry {
            value,
            grad,
            first_moment,
            second_moment,
            ..
        } = e;
        adam_update(value.values_mut(), grad.values(), first_moment, second_moment, step, lr);
    }
}

pub fn cosine_lr(step: usize, total_steps: usize, base_lr: f64) -> f64 {
    if total_steps == 0 {
        return base_lr;
    }
    let t = step.min(total_steps) as f64 / total_steps as f64;
    base_lr * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
}

/// Scales gradients so their global L2 norm is at most `max_norm`. Returns
/// the norm before clipping.
pub fn clip_grad_norm(params: &mut ParameterSet, max_norm: f64) -> f64 {
    let norm = params
        .entries()
        .iter()
        .flat_map(|e| e.grad.values())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        for e in params.entries_mut() {
            e.grad.values_mut().iter_mut().for_each(|g| *g *= s);
        }
    }
    norm
}

/// Frozen-teacher features for each training scene, computed once.
#[derive(Debug, Clone)]
pub struct TeacherTargets {
    pub features: Vec<QueryFeatures>,
    /// Fingerprint of the teacher parameters the targets came from.
    pub teacher_fingerprint: u64,
}

impl TeacherTargets {
    pub fn compute(teacher: &Network, params: &ParameterSet, scenes: &[Scene]) -> Result<Self> {
        if !teacher.with_map {
            return Err(Error::Config("distillation teacher must be a map network".into()));
        }
        let features = scenes
            .par_iter()
            .map(|s| Ok(teacher.predict(params, s, true)?.features))
            .collect::<Result<Vec<_>>>()?;
        Ok(TeacherTargets {
            features,
            teacher_fingerprint: params.fingerprint(),
        })
    }
}

/// Loss components of one scene.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub reg: f64,
    pub cls: f64,
    pub kd: f64,
}

/// Forward and backward pass on one scene. The student view has its map
/// removed before any input is built.
pub fn scene_gradients(
    net: &Network,
    params: &ParameterSet,
    scene: &Scene,
    tc: &TrainConfig,
    teacher: Option<&QueryFeatures>,
) -> Result<(LossParts, Vec<Option<Vec<f64>>>)> {
    let use_map = tc.phase.uses_map();
    let view;
    let scene_in = if use_map {
        if scene.map.is_empty() {
            return Err(Error::MissingMap);
        }
        scene
    } else {
        view = scene.without_map();
        &view
    };
    let inp = SceneInputs::new(scene_in, &net.cfg)?;
    let mut g = Graph::new(params);
    let fp = net.forward(&mut g, &inp, use_map)?;
    let (task, _) = task_losses(&mut g, &fp.decoded, net.cfg.modes, &scene_futures(scene));
    let kd = match (tc.kd_active(), teacher) {
        (true, Some(t)) => Some(kd_loss(&mut g, &fp, t, tc.kd_squared)?),
        (true, None) => return Err(Error::Config("distillation requires teacher targets".into())),
        _ => None,
    };
    let loss = total_loss_var(&mut g, task, kd, &tc.weights);
    let parts = LossParts {
        total: g.scalar(loss),
        reg: g.scalar(task.reg),
        cls: g.scalar(task.cls),
        kd: kd.map_or(0.0, |k| g.scalar(k)),
    };
    let grads = g.backward(loss).into_params();
    Ok((parts, grads))
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub reg: f64,
    pub cls: f64,
    pub kd: f64,
    pub grad_norm: f64,
    pub val: Option<MetricReport>,
}

pub const LOG_CSV_HEADER: &str =
    "epoch,lr,loss,reg,cls,kd,grad_norm,val_minADE,val_minFDE,val_MR,val_brier_minFDE,val_DAC";

/// Training log as CSV with a pinned column order. Epochs without validation
/// leave the metric columns empty.
pub fn log_csv(history: &[EpochLog]) -> String {
    let mut s = String::from(LOG_CSV_HEADER);
    s.push('\n');
    for e in history {
        let _ = write!(
            s,
            "{},{:e},{:e},{:e},{:e},{:e},{:e}",
            e.epoch, e.lr, e.loss, e.reg, e.cls, e.kd, e.grad_norm
        );
        match &e.val {
            Some(v) => {
                let _ = writeln!(
                    s,
                    ",{:e},{:e},{:e},{:e},{:e}",
                    v.min_ade, v.min_fde, v.miss_rate, v.brier_min_fde, v.dac
                );
            }
            None => s.push_str(",,,,,\n"),
        }
    }
    s
}

/// Optimiser state carried across epochs and stored in checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainState {
    /// Epochs completed.
    pub epoch: usize,
    /// Adam steps taken.
    pub step: u64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub history: Vec<EpochLog>,
    pub state: TrainState,
}

fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    idx
}

/// Trains `params` in place. With a progress callback, every finished epoch
/// is reported as it completes.
pub fn train(
    net: &Network,
    params: &mut ParameterSet,
    train_set: &[Scene],
    val_set: &[Scene],
    tc: &TrainConfig,
    teacher: Option<&TeacherTargets>,
    mut progress: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    tc.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptySplit("train".into()));
    }
    if tc.phase.uses_map() != net.with_map {
        return Err(Error::Config(format!(
            "phase {} does not match a {} network",
            tc.phase.name(),
            if net.with_map { "map" } else { "map-free" }
        )));
    }
    if tc.phase.uses_map() && train_set.iter().any(|s| s.map.is_empty()) {
        return Err(Error::MissingMap);
    }
    if tc.kd_active() {
        match teacher {
            Some(t) if t.features.len() == train_set.len() => {}
            Some(t) => {
                return Err(Error::Config(format!(
                    "{} teacher targets for {} training scenes",
                    t.features.len(),
                    train_set.len()
                )))
            }
            None => return Err(Error::Config("distillation requires a teacher".into())),
        }
    }
    let batches_per_epoch = train_set.len().div_ceil(tc.batch_size);
    let total_steps = batches_per_epoch * tc.epochs;
    let eval_opts = EvalOptions {
        use_map: tc.phase.uses_map(),
        ..EvalOptions::default()
    };

    let mut state = TrainState { epoch: 0, step: 0 };
    let mut history = Vec::with_capacity(tc.epochs);
    for epoch in 0..tc.epochs {
        let order = epoch_order(tc.seed, epoch, train_set.len());
        let mut sums = LossParts::default();
        let mut lr = tc.base_lr;
        let mut grad_norm = 0.0;
        for batch in order.chunks(tc.batch_size) {
            let results: Vec<(LossParts, Vec<Option<Vec<f64>>>)> = batch
                .par_iter()
                .map(|&i| {
                    let t = teacher.filter(|_| tc.kd_active()).map(|t| &t.features[i]);
                    scene_gradients(net, params, &train_set[i], tc, t)
                })
                .collect::<Result<_>>()?;
            params.zero_grads();
            let scale = 1.0 / batch.len() as f64;
            for (parts, grads) in &results {
                if !parts.total.is_finite() {
                    return Err(Error::NonFinite {
                        epoch,
                        step: state.step as usize,
                    });
                }
                sums.total += parts.total;
                sums.reg += parts.reg;
                sums.cls += parts.cls;
                sums.kd += parts.kd;
                for (e, g) in params.entries_mut().iter_mut().zip(grads) {
                    if let Some(g) = g {
                        for (a, b) in e.grad.values_mut().iter_mut().zip(g) {
                            *a += scale * b;
                        }
                    }
                }
            }
            grad_norm = clip_grad_norm(params, tc.grad_clip);
            if !grad_norm.is_finite() {
                return Err(Error::NonFinite {
                    epoch,
                    step: state.step as usize,
                });
            }
            lr = cosine_lr(state.step as usize, total_steps, tc.base_lr);
            state.step += 1;
            adam_step(params, state.step, lr);
        }
        state.epoch = epoch + 1;
        let n = train_set.len() as f64;
        let last = epoch + 1 == tc.epochs;
        let val = if !val_set.is_empty() && (last || (epoch + 1) % tc.eval_every == 0) {
            Some(evaluate(net, params, val_set, &eval_opts)?.report)
        } else {
            None
        };
        let log = EpochLog {
            epoch: epoch + 1,
            lr,
            loss: sums.total / n,
            reg: sums.reg / n,
            cls: sums.cls / n,
            kd: sums.kd / n,
            grad_norm,
            val,
        };
        progress(&log);
        history.push(log);
    }
    Ok(TrainOutcome { history, state })
}

/// Trains a map-based teacher from scratch.
pub fn train_teacher(
    net: &Network,
    params: &mut ParameterSet,
    train_set: &[Scene],
    val_set: &[Scene],
    tc: &TrainConfig,
    progress: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    if tc.phase != Phase::Teacher {
        return Err(Error::Config("train_teacher needs the teacher phase".into()));
    }
    train(net, params, train_set, val_set, tc, None, progress)
}

/// Trains a map-free student against a frozen teacher. The teacher's
/// parameters are only borrowed immutably; their fingerprint is checked
/// against the one the targets were computed from.
#[allow(clippy::too_many_arguments)]
pub fn distill_student(
    student: &Network,
    params: &mut ParameterSet,
    teacher: &Network,
    teacher_params: &ParameterSet,
    train_set: &[Scene],
    val_set: &[Scene],
    tc: &TrainConfig,
    progress: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    if student.with_map {
        return Err(Error::Config("student must be map-free".into()));
    }
    check_compatible(student, teacher)?;
    let targets = if tc.kd_active() {
        Some(TeacherTargets::compute(teacher, teacher_params, train_set)?)
    } else {
        None
    };
    let out = train(student, params, train_set, val_set, tc, targets.as_ref(), progress)?;
    if let Some(t) = &targets {
        if t.teacher_fingerprint != teacher_params.fingerprint() {
            return Err(Error::Checkpoint("teacher parameters changed during distillation".into()));
        }
    }
    Ok(out)
}

/// Shared feature shapes must agree for distillation.
pub fn check_compatible(student: &Network, teacher: &Network) -> Result<()> {
    let (s, t) = (&student.cfg, &teacher.cfg);
    if (s.d_model, s.modes, s.decode_iters, s.history_len, s.future_len)
        != (t.d_model, t.modes, t.decode_iters, t.history_len, t.future_len)
    {
        return Err(Error::Config(format!(
            "student (D={}, K={}, I_T={}) and teacher (D={}, K={}, I_T={}) shapes differ",
            s.d_model, s.modes, s.decode_iters, t.d_model, t.modes, t.decode_iters
        )));
    }
    Ok(())
}
