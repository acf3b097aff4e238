//! Experiment runners: the teacher / student comparison and the module,
//! hierarchy and decoding-iteration ablations, with seed medians and CSV
//! tables.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalOptions};
use crate::metrics::MetricReport;
use crate::model::Network;
use crate::nn::ParameterSet;
use crate::scene::Scene;
use crate::synthgen::Dataset;
use crate::trainer::{distill_student, train, EpochLog, Phase, TrainConfig, TrainOutcome};

/// Model and schedule shared by every run of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub teacher_epochs: usize,
    pub student_epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub gamma: f64,
    pub kd_squared: bool,
    pub seeds: Vec<u64>,
}

impl ExperimentConfig {
    /// The CPU-sized configuration used for the reference experiments.
    pub fn desk() -> Self {
        ExperimentConfig {
            model: ModelConfig {
                d_model: 32,
                encoder_layers: 2,
                decoder_layers: 1,
                ..ModelConfig::default()
            },
            teacher_epochs: 6,
            student_epochs: 6,
            batch_size: 16,
            base_lr: 1e-3,
            gamma: 5.0,
            kd_squared: false,
            seeds: vec![1, 2, 3],
        }
    }

    pub fn train_config(&self, phase: Phase, seed: u64) -> TrainConfig {
        let mut tc = TrainConfig {
            epochs: if phase == Phase::Teacher {
                self.teacher_epochs
            } else {
                self.student_epochs
            },
            batch_size: self.batch_size,
            base_lr: self.base_lr,
            seed,
            phase,
            kd_squared: self.kd_squared,
            eval_every: usize::MAX,
            ..TrainConfig::default()
        };
        tc.weights.gamma = if phase == Phase::StudentKd { self.gamma } else { 0.0 };
        tc
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        self.train_config(Phase::Teacher, 0).validate()?;
        self.train_config(Phase::StudentKd, 0).validate()
    }
}

/// A trained network with its parameters and log.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub network: Network,
    pub params: ParameterSet,
    pub outcome: TrainOutcome,
}

/// Trains one network from a fresh initialisation seeded by `seed`.
pub fn train_model(
    model: &ModelConfig,
    tc: &TrainConfig,
    ds: &Dataset,
    teacher: Option<&TrainedModel>,
    progress: impl FnMut(&EpochLog),
) -> Result<TrainedModel> {
    let (network, mut params) = Network::new(model, tc.phase.uses_map(), tc.seed)?;
    let outcome = match (tc.phase, teacher) {
        (Phase::StudentKd, Some(t)) => distill_student(
            &network,
            &mut params,
            &t.network,
            &t.params,
            &ds.train,
            &ds.val,
            tc,
            progress,
        )?,
        (Phase::StudentKd, None) => return Err(Error::Config("distillation requires a teacher".into())),
        _ => train(&network, &mut params, &ds.train, &ds.val, tc, None, progress)?,
    };
    Ok(TrainedModel {
        network,
        params,
        outcome,
    })
}

pub fn test_report(m: &TrainedModel, scenes: &[Scene], use_map: bool) -> Result<MetricReport> {
    let opts = EvalOptions {
        use_map,
        ..EvalOptions::default()
    };
    Ok(evaluate(&m.network, &m.params, scenes, &opts)?.report)
}

/// Test metrics of one seed of the teacher / student comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRun {
    pub seed: u64,
    pub teacher: MetricReport,
    /// The teacher evaluated with its map input removed.
    pub teacher_no_map: MetricReport,
    pub student_nkd: MetricReport,
    pub student_kd: MetricReport,
}

pub const COMPARISON_MODELS: [&str; 4] = ["teacher", "teacher_no_map", "student_nkd", "student_kd"];

impl ComparisonRun {
    pub fn reports(&self) -> [&MetricReport; 4] {
        [&self.teacher, &self.teacher_no_map, &self.student_nkd, &self.student_kd]
    }
}

/// Teacher, student without distillation and distilled student for every
/// seed, evaluated on the test split.
pub fn run_comparison(
    ds: &Dataset,
    cfg: &ExperimentConfig,
    mut progress: impl FnMut(&str),
) -> Result<Vec<ComparisonRun>> {
    cfg.validate()?;
    let mut runs = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let mut log = |name: &str, e: &EpochLog| {
            progress(&format!("seed {seed} {name} epoch {} loss {:.4}", e.epoch, e.loss))
        };
        let teacher = train_model(
            &cfg.model,
            &cfg.train_config(Phase::Teacher, seed),
            ds,
            None,
            |e| log("teacher", e),
        )?;
        let nkd = train_model(
            &cfg.model,
            &cfg.train_config(Phase::StudentNkd, seed),
            ds,
            None,
            |e| log("student_nkd", e),
        )?;
        let kd = train_model(
            &cfg.model,
            &cfg.train_config(Phase::StudentKd, seed),
            ds,
            Some(&teacher),
            |e| log("student_kd", e),
        )?;
        runs.push(ComparisonRun {
            seed,
            teacher: test_report(&teacher, &ds.test, true)?,
            teacher_no_map: test_report(&teacher, &ds.test, false)?,
            student_nkd: test_report(&nkd, &ds.test, false)?,
            student_kd: test_report(&kd, &ds.test, false)?,
        });
    }
    Ok(runs)
}

/// Median of a non-empty list; even lengths average the middle pair.
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of an empty list");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Metric-wise median over runs of the same model.
pub fn median_report(reports: &[&MetricReport]) -> MetricReport {
    let m = |f: fn(&MetricReport) -> f64| median(&reports.iter().map(|r| f(r)).collect::<Vec<_>>());
    MetricReport {
        modes: reports[0].modes,
        min_ade: m(|r| r.min_ade),
        min_fde: m(|r| r.min_fde),
        miss_rate: m(|r| r.miss_rate),
        brier_min_fde: m(|r| r.brier_min_fde),
        dac: m(|r| r.dac),
        n_agents: reports[0].n_agents,
    }
}

/// Median reports in [`COMPARISON_MODELS`] order.
pub fn comparison_medians(runs: &[ComparisonRun]) -> [MetricReport; 4] {
    std::array::from_fn(|k| median_report(&runs.iter().map(|r| r.reports()[k]).collect::<Vec<_>>()))
}

pub const TABLE_CSV_HEADER: &str = "model,seed,minADE_6,minFDE_6,MR_6,brier_minFDE_6,DAC_6";

fn metric_cols(r: &MetricReport) -> String {
    format!(
        "{:.6},{:.6},{:.6},{:.6},{:.6}",
        r.min_ade, r.min_fde, r.miss_rate, r.brier_min_fde, r.dac
    )
}

/// Per-seed rows followed by one `median` row per model.
pub fn comparison_csv(runs: &[ComparisonRun]) -> String {
    let mut s = format!("{TABLE_CSV_HEADER}\n");
    for (k, name) in COMPARISON_MODELS.iter().enumerate() {
        for r in runs {
            let _ = writeln!(s, "{name},{},{}", r.seed, metric_cols(r.reports()[k]));
        }
    }
    if !runs.is_empty() {
        for (name, r) in COMPARISON_MODELS.iter().zip(comparison_medians(runs)) {
            let _ = writeln!(s, "{name},median,{}", metric_cols(&r));
        }
    }
    s
}

/// Which family of ablations to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationKind {
    /// Module removal: `none`, `aata`, `aasa`, `fa`, `qqa`.
    Attention,
    /// Hierarchy depth `H`.
    Hier,
    /// Decoder iterations `I_T`.
    Iters,
}

impl AblationKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "attention" | "modules" => Some(AblationKind::Attention),
            "hier" | "h" | "H" => Some(AblationKind::Hier),
            "iters" => Some(AblationKind::Iters),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AblationKind::Attention => "attention",
            AblationKind::Hier => "hier",
            AblationKind::Iters => "iters",
        }
    }

    pub fn default_values(self) -> &'static [&'static str] {
        match self {
            AblationKind::Attention => &["none", "aata", "aasa", "fa", "qqa"],
            AblationKind::Hier => &["1", "2", "3", "4"],
            AblationKind::Iters => &["1", "2", "3", "6"],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub name: String,
    pub model: ModelConfig,
}

/// Model configurations for the requested ablation values.
pub fn ablation_variants(kind: AblationKind, values: &[String], base: &ModelConfig) -> Result<Vec<Variant>> {
    values
        .iter()
        .map(|v| {
            let mut m = base.clone();
            let bad = || Error::Config(format!("unknown {} ablation value {v:?}", kind.name()));
            let name = match kind {
                AblationKind::Attention => {
                    match v.as_str() {
                        "none" => {}
                        "aata" => m.ablation.temporal = false,
                        "aasa" => m.ablation.spatial = false,
                        "fa" => m.ablation.aggregation = false,
                        "qqa" => m.ablation.query_query = false,
                        _ => return Err(bad()),
                    }
                    if v == "none" {
                        "full".to_string()
                    } else {
                        format!("no_{v}")
                    }
                }
                AblationKind::Hier => {
                    m.hier_levels = v.parse().map_err(|_| bad())?;
                    format!("H={v}")
                }
                AblationKind::Iters => {
                    let it: usize = v.parse().map_err(|_| bad())?;
                    m = m.with_decode_iters(it)?;
                    format!("I_T={v}")
                }
            };
            m.validate()?;
            Ok(Variant { name, model: m })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub variant: String,
    pub seed: u64,
    pub report: MetricReport,
}

/// Trains and tests a map-free student without distillation for every
/// variant and seed. Seeds are shared across variants.
pub fn run_ablation(
    ds: &Dataset,
    variants: &[Variant],
    cfg: &ExperimentConfig,
    mut progress: impl FnMut(&str),
) -> Result<Vec<AblationRun>> {
    cfg.validate()?;
    let mut runs = Vec::new();
    for v in variants {
        for &seed in &cfg.seeds {
            let tc = cfg.train_config(Phase::StudentNkd, seed);
            let m = train_model(&v.model, &tc, ds, None, |e| {
                progress(&format!("{} seed {seed} epoch {} loss {:.4}", v.name, e.epoch, e.loss))
            })?;
            runs.push(AblationRun {
                variant: v.name.clone(),
                seed,
                report: test_report(&m, &ds.test, false)?,
            });
        }
    }
    Ok(runs)
}

/// Median report per variant, in first-appearance order.
pub fn ablation_medians(runs: &[AblationRun]) -> Vec<(String, MetricReport)> {
    let mut names: Vec<&str> = Vec::new();
    for r in runs {
        if !names.contains(&r.variant.as_str()) {
            names.push(&r.variant);
        }
    }
    names
        .into_iter()
        .map(|n| {
            let reps: Vec<&MetricReport> = runs.iter().filter(|r| r.variant == n).map(|r| &r.report).collect();
            (n.to_string(), median_report(&reps))
        })
        .collect()
}

pub const ABLATION_CSV_HEADER: &str = "variant,seeds,minADE_6,minFDE_6,MR_6,brier_minFDE_6,DAC_6";

/// One median row per variant.
pub fn ablation_csv(runs: &[AblationRun]) -> String {
    let mut s = format!("{ABLATION_CSV_HEADER}\n");
    for (name, r) in ablation_medians(runs) {
        let n = runs.iter().filter(|x| x.variant == name).count();
        let _ = writeln!(s, "{name},{n},{}", metric_cols(&r));
    }
    s
}

/// Every run, one row per variant and seed.
pub fn ablation_runs_csv(runs: &[AblationRun]) -> String {
    let mut s = format!("{TABLE_CSV_HEADER}\n");
    for r in runs {
        let _ = writeln!(s, "{},{},{}", r.variant, r.seed, metric_cols(&r.report));
    }
    s
}
