//! The `mftp` command line: dataset generation, training, distillation,
//! evaluation, ablations and plot-data emission.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 non-finite loss.
//!
//! Artifacts written per command (every output directory also gets a
//! `manifest.json`):
//!
//! | command  | files                                                      |
//! |----------|------------------------------------------------------------|
//! | generate | `{train,val,test}/<scene>.scene`                           |
//! | train    | `model.ckpt`, `train_log.csv`                              |
//! | distill  | `model.ckpt`, `train_log.csv`                              |
//! | eval     | `report.txt`, `agents.csv`, `predictions.csv`              |
//! | ablate   | `ablation.csv`, `runs.csv`                                 |
//! | plot     | `<scene>.overlay`                                          |
//!
//! An overlay file lists, for one scene, the history, ground truth and
//! every predicted mode of each evaluated agent plus the lanes and drivable
//! polygons:
//!
//! ```text
//! # mftp-overlay v1
//! scene_id=test-00000
//! modes=6
//! HIST,agent,t,valid,x,y
//! GT,agent,t,valid,x,y
//! PRED,agent,mode,confidence,t,x,y
//! LANE,id,idx,x,y
//! POLY,id,idx,x,y
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{ArgAction, Args, Parser, Subcommand};
use rayon::prelude::*;
use serde_json::json;

use crate::checkpoint::Checkpoint;
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::eval::{evaluate, evaluated_agents, predict_scene, EvalOptions};
use crate::experiments::{
    ablation_csv, ablation_runs_csv, ablation_variants, run_ablation, AblationKind, ExperimentConfig,
};
use crate::io::{coord, load_split, RunManifest};
use crate::metrics::DEFAULT_MISS_RADIUS;
use crate::model::Network;
use crate::scene::Scene;
use crate::synthgen::{write_dataset, DatasetConfig, SpecDistribution, REFERENCE_SEED};
use crate::trainer::{distill_student, log_csv, train, EpochLog, Phase, TrainConfig, TrainOutcome};

pub const THREADS_ENV: &str = "MFTP_THREADS";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const LOG_FILE: &str = "train_log.csv";
pub const REPORT_FILE: &str = "report.txt";
pub const AGENTS_FILE: &str = "agents.csv";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const OVERLAY_MAGIC: &str = "# mftp-overlay v1";
pub const PREDICTIONS_HEADER: &str = "scene_id,agent_id,mode,confidence,step,x,y";

#[derive(Debug, Parser)]
#[command(name = "mftp", version, about = "Map-free trajectory prediction with map distillation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    Generate(GenerateArgs),
    /// Train a teacher or a map-free student without distillation.
    Train(TrainArgs),
    /// Train a map-free student against a frozen teacher checkpoint.
    Distill(DistillArgs),
    /// Evaluate a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Run module, hierarchy or decoding-iteration ablations.
    Ablate(AblateArgs),
    /// Write per-scene trajectory overlays from evaluation output.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 2500)]
    pub scenes: usize,
    #[arg(long, default_value_t = REFERENCE_SEED)]
    pub seed: u64,
    /// Layout weights, e.g. `straight=1,curve=2,t_junction=1,crossroads=1`.
    #[arg(long)]
    pub layout_mix: Option<String>,
    #[arg(long)]
    pub min_agents: Option<usize>,
    #[arg(long)]
    pub max_agents: Option<usize>,
    #[arg(long)]
    pub noise_std: Option<f64>,
    /// Train, val and test fractions.
    #[arg(long, default_value = "0.8,0.1,0.1")]
    pub ratios: String,
    #[arg(long)]
    pub out: PathBuf,
}

/// Architecture overrides; unset flags keep the library defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub ffn_mult: Option<usize>,
    #[arg(long)]
    pub encoder_layers: Option<usize>,
    #[arg(long)]
    pub decoder_layers: Option<usize>,
    #[arg(long)]
    pub decode_iters: Option<usize>,
    #[arg(long)]
    pub hier_levels: Option<usize>,
    #[arg(long)]
    pub modes: Option<usize>,
    #[arg(long)]
    pub neighbor_radius: Option<f64>,
    #[arg(long)]
    pub no_aata: bool,
    #[arg(long)]
    pub no_aasa: bool,
    #[arg(long)]
    pub no_fa: bool,
    #[arg(long)]
    pub no_qqa: bool,
}

impl ModelArgs {
    pub fn resolve(&self) -> Result<ModelConfig> {
        let mut m = ModelConfig::default();
        m.d_model = self.d_model.unwrap_or(m.d_model);
        m.heads = self.heads.unwrap_or(m.heads);
        m.ffn_mult = self.ffn_mult.unwrap_or(m.ffn_mult);
        m.encoder_layers = self.encoder_layers.unwrap_or(m.encoder_layers);
        m.decoder_layers = self.decoder_layers.unwrap_or(m.decoder_layers);
        m.hier_levels = self.hier_levels.unwrap_or(m.hier_levels);
        m.modes = self.modes.unwrap_or(m.modes);
        m.neighbor_radius = self.neighbor_radius.unwrap_or(m.neighbor_radius);
        m.ablation.temporal &= !self.no_aata;
        m.ablation.spatial &= !self.no_aasa;
        m.ablation.aggregation &= !self.no_fa;
        m.ablation.query_query &= !self.no_qqa;
        if let Some(it) = self.decode_iters {
            m = m.with_decode_iters(it)?;
        }
        m.validate()?;
        Ok(m)
    }
}

#[derive(Debug, Clone, Args)]
pub struct ScheduleArgs {
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    /// Global gradient-norm bound; 0 disables clipping.
    #[arg(long, default_value_t = 5.0)]
    pub grad_clip: f64,
    #[arg(long, default_value_t = 1)]
    pub eval_every: usize,
}

impl ScheduleArgs {
    fn train_config(&self, phase: Phase) -> TrainConfig {
        let mut tc = TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            base_lr: self.lr,
            seed: self.seed,
            phase,
            grad_clip: self.grad_clip,
            eval_every: self.eval_every,
            ..TrainConfig::default()
        };
        tc.weights.alpha = self.alpha;
        tc.weights.beta = self.beta;
        tc.weights.gamma = 0.0;
        tc
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// `teacher` or `student_nkd`.
    #[arg(long, default_value = "teacher")]
    pub phase: String,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
}

#[derive(Debug, Args)]
pub struct DistillArgs {
    /// Teacher checkpoint; the student copies its architecture.
    #[arg(long)]
    pub teacher: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
    /// Square the per-pair feature distance.
    #[arg(long)]
    pub kd_squared: bool,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Feed map polylines to map networks (`--use-map=false` strips them).
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    pub use_map: bool,
    #[arg(long)]
    pub all_agents: bool,
    #[arg(long, default_value_t = DEFAULT_MISS_RADIUS)]
    pub miss_radius: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// `attention`, `hier` or `iters`.
    #[arg(long)]
    pub which: String,
    /// Comma-separated values; `none,aata,aasa,fa,qqa` for attention.
    #[arg(long)]
    pub values: Option<String>,
    #[arg(long, default_value = "1,2,3")]
    pub seeds: String,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Evaluation output directory or its `predictions.csv`.
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Restrict to these scene ids.
    #[arg(long)]
    pub scene: Vec<String>,
}

/// Process exit code for a library error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 1,
        Error::NonFinite { .. } => 3,
        _ => 2,
    }
}

/// Sizes the global thread pool from `MFTP_THREADS` when set.
pub fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("{THREADS_ENV}={v:?} is not a positive integer")))?;
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Parses `args` (program name first), runs the command and returns the
/// exit code. Messages go to stderr.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match configure_threads().and_then(|_| run(cli)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(a) => cmd_generate(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Distill(a) => cmd_distill(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Ablate(a) => cmd_ablate(&a),
        Command::Plot(a) => cmd_plot(&a),
    }
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad {what} entry {p:?}")))
        })
        .collect()
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

pub fn cmd_generate(a: &GenerateArgs) -> Result<()> {
    if a.scenes == 0 {
        return Err(Error::Config("--scenes must be at least 1".into()));
    }
    let ratios: Vec<f64> = parse_list(&a.ratios, "ratio")?;
    let ratios: [f64; 3] = ratios
        .try_into()
        .map_err(|_| Error::Config("--ratios needs three values".into()))?;
    let mut dist = SpecDistribution::default();
    if let Some(m) = &a.layout_mix {
        dist.layout_mix = SpecDistribution::parse_layout_mix(m)?;
    }
    dist.min_agents = a.min_agents.unwrap_or(dist.min_agents);
    dist.max_agents = a.max_agents.unwrap_or(dist.max_agents);
    dist.noise_std = a.noise_std.unwrap_or(dist.noise_std);
    if !(dist.noise_std.is_finite() && dist.noise_std >= 0.0) {
        return Err(Error::Config("--noise-std must be non-negative".into()));
    }
    let cfg = DatasetConfig {
        n_scenes: a.scenes,
        master_seed: a.seed,
        ratios,
        distribution: dist,
    };
    let ds = write_dataset(&a.out, &cfg, &ModelConfig::default())?;
    eprintln!(
        "wrote {} train, {} val, {} test scenes to {}",
        ds.train.len(),
        ds.val.len(),
        ds.test.len(),
        a.out.display()
    );
    Ok(())
}

fn print_epoch(e: &EpochLog) {
    let val = e.val.as_ref().map_or(String::new(), |v| {
        format!(" val minADE {:.4} minFDE {:.4} DAC {:.4}", v.min_ade, v.min_fde, v.dac)
    });
    eprintln!(
        "epoch {} lr {:.3e} loss {:.4} reg {:.4} cls {:.4} kd {:.4}{val}",
        e.epoch, e.lr, e.loss, e.reg, e.cls, e.kd
    );
}

fn save_run(
    out: &Path,
    command: &str,
    network: Network,
    params: crate::nn::ParameterSet,
    tc: &TrainConfig,
    outcome: TrainOutcome,
    mut manifest: RunManifest,
) -> Result<()> {
    let ckpt = out.join(CHECKPOINT_FILE);
    let log = out.join(LOG_FILE);
    write_file(&log, &log_csv(&outcome.history))?;
    Checkpoint {
        network,
        params,
        train: Some(tc.clone()),
        state: outcome.state,
        history: outcome.history,
    }
    .save(&ckpt)?;
    manifest.outputs = vec![path_str(&ckpt), path_str(&log)];
    manifest.write(out)?;
    eprintln!("{command}: wrote {}", ckpt.display());
    Ok(())
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    let start = Instant::now();
    let phase = match Phase::parse(&a.phase) {
        Some(p @ (Phase::Teacher | Phase::StudentNkd)) => p,
        Some(Phase::StudentKd) => {
            return Err(Error::Config("use `distill` for the student_kd phase".into()));
        }
        None => return Err(Error::Config(format!("unknown phase {:?}", a.phase))),
    };
    let model = a.model.resolve()?;
    let tc = a.schedule.train_config(phase);
    tc.validate()?;
    let train_set = load_split(&a.data, "train", model.polyline_len)?;
    let val_set = load_split(&a.data, "val", model.polyline_len)?;
    let (network, mut params) = Network::new(&model, phase.uses_map(), tc.seed)?;
    let outcome = train(&network, &mut params, &train_set, &val_set, &tc, None, print_epoch)?;
    let mut manifest = RunManifest::new(
        "train",
        json!({ "model": model, "train": tc, "data": path_str(&a.data) }),
        vec![tc.seed],
    );
    manifest.inputs = vec![path_str(&a.data)];
    manifest.wall_clock_secs = start.elapsed().as_secs_f64();
    save_run(&a.out, "train", network, params, &tc, outcome, manifest)
}

pub fn cmd_distill(a: &DistillArgs) -> Result<()> {
    let start = Instant::now();
    let teacher = Checkpoint::load(&a.teacher)?;
    if !teacher.network.with_map {
        return Err(Error::Checkpoint(format!(
            "{} is not a map-based teacher",
            a.teacher.display()
        )));
    }
    let model = teacher.network.cfg.clone();
    let mut tc = a.schedule.train_config(Phase::StudentKd);
    tc.weights.gamma = a.gamma;
    tc.kd_squared = a.kd_squared;
    tc.validate()?;
    let train_set = load_split(&a.data, "train", model.polyline_len)?;
    let val_set = load_split(&a.data, "val", model.polyline_len)?;
    let (network, mut params) = Network::new(&model, false, tc.seed)?;
    let outcome = distill_student(
        &network,
        &mut params,
        &teacher.network,
        &teacher.params,
        &train_set,
        &val_set,
        &tc,
        print_epoch,
    )?;
    let mut manifest = RunManifest::new(
        "distill",
        json!({
            "model": model,
            "train": tc,
            "data": path_str(&a.data),
            "teacher": path_str(&a.teacher),
            "teacher_fingerprint": format!("{:016x}", teacher.params.fingerprint()),
        }),
        vec![tc.seed],
    );
    manifest.inputs = vec![path_str(&a.data), path_str(&a.teacher)];
    manifest.wall_clock_secs = start.elapsed().as_secs_f64();
    save_run(&a.out, "distill", network, params, &tc, outcome, manifest)
}

/// Predicted points of the evaluated agents, one row per point.
pub fn predictions_csv(
    network: &Network,
    params: &crate::nn::ParameterSet,
    scenes: &[Scene],
    opts: &EvalOptions,
) -> Result<String> {
    let parts: Vec<String> = scenes
        .par_iter()
        .map(|s| {
            let pred = predict_scene(network, params, s, opts.use_map)?;
            let mut out = String::new();
            for i in evaluated_agents(s, opts.all_agents) {
                for k in 0..pred.modes {
                    let c = pred.confidence(i, k);
                    for t in 0..pred.future_len {
                        let [x, y] = pred.point(i, k, t);
                        let _ = writeln!(
                            out,
                            "{},{},{k},{c:.6},{},{},{}",
                            s.id,
                            s.agents[i].id,
                            t + 1,
                            coord(x),
                            coord(y)
                        );
                    }
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(format!("{PREDICTIONS_HEADER}\n{}", parts.concat()))
}

pub fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let start = Instant::now();
    if !(a.miss_radius.is_finite() && a.miss_radius > 0.0) {
        return Err(Error::Config("--miss-radius must be positive".into()));
    }
    let ck = Checkpoint::load(&a.checkpoint)?;
    let scenes = load_split(&a.data, &a.split, ck.network.cfg.polyline_len)?;
    let opts = EvalOptions {
        use_map: a.use_map && ck.network.with_map,
        all_agents: a.all_agents,
        miss_radius: a.miss_radius,
    };
    let ev = evaluate(&ck.network, &ck.params, &scenes, &opts)?;
    let report = a.out.join(REPORT_FILE);
    let agents = a.out.join(AGENTS_FILE);
    let preds = a.out.join(PREDICTIONS_FILE);
    write_file(&report, &ev.report.to_text())?;
    write_file(&agents, &ev.agents_csv())?;
    write_file(&preds, &predictions_csv(&ck.network, &ck.params, &scenes, &opts)?)?;
    let mut manifest = RunManifest::new(
        "eval",
        json!({
            "checkpoint": path_str(&a.checkpoint),
            "data": path_str(&a.data),
            "split": a.split,
            "use_map": opts.use_map,
            "all_agents": a.all_agents,
            "miss_radius": a.miss_radius,
        }),
        Vec::new(),
    );
    manifest.inputs = vec![path_str(&a.checkpoint), path_str(&a.data)];
    manifest.outputs = vec![path_str(&report), path_str(&agents), path_str(&preds)];
    manifest.wall_clock_secs = start.elapsed().as_secs_f64();
    manifest.write(&a.out)?;
    print!("{}", ev.report.to_text());
    Ok(())
}

pub fn cmd_ablate(a: &AblateArgs) -> Result<()> {
    let start = Instant::now();
    let kind = AblationKind::parse(&a.which)
        .ok_or_else(|| Error::Config(format!("unknown ablation {:?}", a.which)))?;
    let values: Vec<String> = match &a.values {
        Some(v) => v.split(',').map(|s| s.trim().to_string()).collect(),
        None => kind.default_values().iter().map(|s| s.to_string()).collect(),
    };
    let base = a.model.resolve()?;
    let variants = ablation_variants(kind, &values, &base)?;
    let cfg = ExperimentConfig {
        model: base,
        teacher_epochs: a.epochs,
        student_epochs: a.epochs,
        batch_size: a.batch_size,
        base_lr: a.lr,
        gamma: 0.0,
        kd_squared: false,
        seeds: parse_list(&a.seeds, "seed")?,
    };
    cfg.validate()?;
    let ds = crate::synthgen::Dataset {
        train: load_split(&a.data, "train", cfg.model.polyline_len)?,
        val: load_split(&a.data, "val", cfg.model.polyline_len)?,
        test: load_split(&a.data, "test", cfg.model.polyline_len)?,
    };
    let runs = run_ablation(&ds, &variants, &cfg, |m| eprintln!("{m}"))?;
    let table = a.out.join("ablation.csv");
    let per_run = a.out.join("runs.csv");
    let csv = ablation_csv(&runs);
    write_file(&table, &csv)?;
    write_file(&per_run, &ablation_runs_csv(&runs))?;
    let mut manifest = RunManifest::new(
        "ablate",
        json!({ "which": kind.name(), "values": values, "experiment": cfg, "data": path_str(&a.data) }),
        cfg.seeds.clone(),
    );
    manifest.inputs = vec![path_str(&a.data)];
    manifest.outputs = vec![path_str(&table), path_str(&per_run)];
    manifest.wall_clock_secs = start.elapsed().as_secs_f64();
    manifest.write(&a.out)?;
    print!("{csv}");
    Ok(())
}

/// Prediction rows grouped by scene id, with the scene column removed.
fn read_predictions(path: &Path) -> Result<BTreeMap<String, Vec<String>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(PREDICTIONS_HEADER) {
        return Err(Error::Parse {
            path: path.into(),
            line: 1,
            msg: format!("expected header {PREDICTIONS_HEADER:?}"),
        });
    }
    let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (i, l) in lines.enumerate() {
        let (scene, rest) = l.split_once(',').filter(|(_, r)| r.split(',').count() == 6).ok_or_else(|| {
            Error::Parse {
                path: path.into(),
                line: i + 2,
                msg: "expected 7 columns".into(),
            }
        })?;
        out.entry(scene.to_string()).or_default().push(rest.to_string());
    }
    Ok(out)
}

/// Overlay text for one scene; `preds` are `agent,mode,confidence,t,x,y`
/// rows.
pub fn overlay_text(scene: &Scene, preds: &[String], modes: usize) -> String {
    let mut s = format!("{OVERLAY_MAGIC}\nscene_id={}\nmodes={modes}\n", scene.id);
    let agents: Vec<&str> = preds.iter().filter_map(|p| p.split(',').next()).collect();
    for a in scene.agents.iter().filter(|a| agents.contains(&a.id.as_str())) {
        let h = a.history.len() as i64;
        let rows = a
            .history
            .iter()
            .enumerate()
            .map(|(j, p)| ("HIST", j as i64 - (h - 1), p))
            .chain(a.future.iter().enumerate().map(|(f, p)| ("GT", f as i64 + 1, p)));
        for (tag, t, p) in rows {
            let (v, x, y) = p.map_or((0, 0.0, 0.0), |p| (1, p.x, p.y));
            let _ = writeln!(s, "{tag},{},{t},{v},{},{}", a.id, coord(x), coord(y));
        }
    }
    for p in preds {
        let _ = writeln!(s, "PRED,{p}");
    }
    for l in &scene.map {
        for (i, p) in l.points.iter().enumerate() {
            if let Some(p) = p {
                let _ = writeln!(s, "LANE,{},{i},{},{}", l.id, coord(p.x), coord(p.y));
            }
        }
    }
    for (i, poly) in scene.drivable.polygons.iter().enumerate() {
        for (k, p) in poly.iter().enumerate() {
            let _ = writeln!(s, "POLY,{i},{k},{},{}", coord(p.x), coord(p.y));
        }
    }
    s
}

pub fn cmd_plot(a: &PlotArgs) -> Result<()> {
    let start = Instant::now();
    let pred_path = if a.predictions.is_dir() {
        a.predictions.join(PREDICTIONS_FILE)
    } else {
        a.predictions.clone()
    };
    let preds = read_predictions(&pred_path)?;
    let scenes = load_split(&a.data, &a.split, 0)?;
    let mut outputs = Vec::new();
    for scene in &scenes {
        if !a.scene.is_empty() && !a.scene.contains(&scene.id) {
            continue;
        }
        let Some(rows) = preds.get(&scene.id) else {
            continue;
        };
        let modes = rows
            .iter()
            .filter_map(|r| r.split(',').nth(1).and_then(|m| m.parse::<usize>().ok()))
            .max()
            .map_or(0, |m| m + 1);
        let path = a.out.join(format!("{}.overlay", scene.id));
        write_file(&path, &overlay_text(scene, rows, modes))?;
        outputs.push(path_str(&path));
    }
    if outputs.is_empty() {
        return Err(Error::EmptySplit(format!(
            "no scene of {} has predictions in {}",
            a.split,
            pred_path.display()
        )));
    }
    let mut manifest = RunManifest::new(
        "plot",
        json!({ "data": path_str(&a.data), "split": a.split, "predictions": path_str(&pred_path), "scenes": a.scene }),
        Vec::new(),
    );
    manifest.inputs = vec![path_str(&a.data), path_str(&pred_path)];
    manifest.outputs = outputs;
    manifest.wall_clock_secs = start.elapsed().as_secs_f64();
    manifest.write(&a.out)?;
    eprintln!("plot: wrote {} overlays to {}", manifest.outputs.len(), a.out.display());
    Ok(())
}
