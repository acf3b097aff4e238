//! Scene text files, dataset directories and run manifests.
//!
//! A scene file is UTF-8 with LF line endings:
//!
//! ```text
//! # mftp-scene v1
//! scene_id=train-00000
//! T=20
//! N_T=30
//! sample_rate=10
//! AGENT,id,focal,t,valid,x,y
//! LANE,id,idx,x,y,heading
//! POLY,id,idx,x,y
//! ```
//!
//! Agent rows run from `t = -(T-1)` (oldest) through `t = 0` (present) to
//! `t = N_T`. Lane points that are padding are omitted. Coordinates carry six
//! decimals.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::scene::{AgentTrack, DrivableArea, MapPolyline, Point2, Scene};

pub const SCENE_MAGIC: &str = "# mftp-scene v1";
pub const SCENE_EXT: &str = "scene";
pub const SPLITS: [&str; 3] = ["train", "val", "test"];

/// A scene together with the timing stored in its header.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneFile {
    pub scene: Scene,
    pub history_len: usize,
    pub future_len: usize,
    pub sample_rate: f64,
}

/// Six-decimal coordinate with negative zero normalised.
pub fn coord(v: f64) -> String {
    let s = format!("{v:.6}");
    if s == "-0.000000" {
        "0.000000".into()
    } else {
        s
    }
}

pub fn scene_to_string(scene: &Scene, sample_rate: f64) -> String {
    let t = scene.agents.first().map_or(0, |a| a.history.len());
    let nt = scene.agents.iter().map(|a| a.future.len()).max().unwrap_or(0);
    let mut s = String::new();
    let _ = writeln!(s, "{SCENE_MAGIC}");
    let _ = writeln!(s, "scene_id={}", scene.id);
    let _ = writeln!(s, "T={t}");
    let _ = writeln!(s, "N_T={nt}");
    let _ = writeln!(s, "sample_rate={sample_rate}");
    for a in &scene.agents {
        let focal = a.is_focal as u8;
        let rows = a
            .history
            .iter()
            .enumerate()
            .map(|(j, p)| (j as i64 - (t as i64 - 1), p))
            .chain(a.future.iter().enumerate().map(|(f, p)| (f as i64 + 1, p)));
        for (step, p) in rows {
            let (valid, x, y) = match p {
                Some(p) => (1, p.x, p.y),
                None => (0, 0.0, 0.0),
            };
            let _ = writeln!(s, "AGENT,{},{focal},{step},{valid},{},{}", a.id, coord(x), coord(y));
        }
    }
    for l in &scene.map {
        for (i, (p, h)) in l.points.iter().zip(&l.headings).enumerate() {
            if let Some(p) = p {
                let _ = writeln!(s, "LANE,{},{i},{},{},{}", l.id, coord(p.x), coord(p.y), coord(*h));
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

pub fn write_scene(path: &Path, scene: &Scene, sample_rate: f64) -> Result<()> {
    fs::write(path, scene_to_string(scene, sample_rate)).map_err(|e| Error::io(path, e))
}

pub fn read_scene(path: &Path) -> Result<SceneFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scene(&text, path)
}

struct AgentRows {
    focal: bool,
    rows: BTreeMap<i64, Option<Point2>>,
}

/// Parses scene text. `path` is only used in error messages.
pub fn parse_scene(text: &str, path: &Path) -> Result<SceneFile> {
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim_end() == SCENE_MAGIC => {}
        _ => return Err(err(1, format!("expected header {SCENE_MAGIC:?}"))),
    }
    let mut id = None;
    let mut t_len = None;
    let mut nt_len = None;
    let mut rate = None;
    let mut agents: Vec<(String, AgentRows)> = Vec::new();
    let mut lanes: Vec<(String, BTreeMap<usize, (Point2, f64)>)> = Vec::new();
    let mut polys: BTreeMap<usize, BTreeMap<usize, Point2>> = BTreeMap::new();

    for (i, raw) in lines {
        let ln = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some((k, v)) = line.split_once('=').filter(|_| !line.contains(',')) {
            let bad = |_| err(ln, format!("bad value for {k}"));
            match k {
                "scene_id" => id = Some(v.to_string()),
                "T" => t_len = Some(v.parse::<usize>().map_err(|_| err(ln, "bad T".into()))?),
                "N_T" => nt_len = Some(v.parse::<usize>().map_err(|_| err(ln, "bad N_T".into()))?),
                "sample_rate" => rate = Some(v.parse::<f64>().map_err(bad)?),
                _ => return Err(err(ln, format!("unknown header key {k:?}"))),
            }
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let num = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(ln, format!("bad number {s:?}")))
        };
        let int = |s: &str| -> Result<i64> { s.parse::<i64>().map_err(|_| err(ln, format!("bad integer {s:?}"))) };
        match f[0] {
            "AGENT" if f.len() == 7 => {
                let focal = int(f[2])? != 0;
                let step = int(f[3])?;
                let valid = int(f[4])? != 0;
                let p = valid.then(|| -> Result<Point2> { Ok(Point2::new(num(f[5])?, num(f[6])?)) });
                let p = p.transpose()?;
                let entry = match agents.iter_mut().find(|(aid, _)| aid == f[1]) {
                    Some(e) => e,
                    None => {
                        agents.push((
                            f[1].to_string(),
                            AgentRows {
                                focal,
                                rows: BTreeMap::new(),
                            },
                        ));
                        agents.last_mut().expect("just pushed")
                    }
                };
                if entry.1.rows.insert(step, p).is_some() {
                    return Err(err(ln, format!("duplicate step {step} for agent {}", f[1])));
                }
            }
            "LANE" if f.len() == 6 => {
                let idx = int(f[2])?;
                let idx = usize::try_from(idx).map_err(|_| err(ln, "negative lane index".into()))?;
                let point = (Point2::new(num(f[3])?, num(f[4])?), num(f[5])?);
                match lanes.iter_mut().find(|(lid, _)| lid == f[1]) {
                    Some(e) => {
                        e.1.insert(idx, point);
                    }
                    None => lanes.push((f[1].to_string(), BTreeMap::from([(idx, point)]))),
                }
            }
            "POLY" if f.len() == 5 => {
                let pid = usize::try_from(int(f[1])?).map_err(|_| err(ln, "negative polygon id".into()))?;
                let idx = usize::try_from(int(f[2])?).map_err(|_| err(ln, "negative vertex index".into()))?;
                polys.entry(pid).or_default().insert(idx, Point2::new(num(f[3])?, num(f[4])?));
            }
            other => return Err(err(ln, format!("unrecognised record {other:?} with {} fields", f.len()))),
        }
    }

    let id = id.ok_or_else(|| err(0, "missing scene_id".into()))?;
    let t_len = t_len.ok_or_else(|| err(0, "missing T".into()))?;
    let nt_len = nt_len.ok_or_else(|| err(0, "missing N_T".into()))?;
    let rate = rate.ok_or_else(|| err(0, "missing sample_rate".into()))?;
    let first = -(t_len as i64 - 1);

    let mut tracks = Vec::with_capacity(agents.len());
    for (aid, a) in agents {
        let mut history = vec![None; t_len];
        let mut future = Vec::new();
        for (&step, &p) in &a.rows {
            if step < first || step > nt_len as i64 {
                return Err(err(0, format!("agent {aid} step {step} outside [{first}, {nt_len}]")));
            }
            if step <= 0 {
                history[(step - first) as usize] = p;
            } else {
                if future.is_empty() {
                    future = vec![None; nt_len];
                }
                future[step as usize - 1] = p;
            }
        }
        tracks.push(AgentTrack {
            id: aid,
            history,
            future,
            is_focal: a.focal,
        });
    }
    let map = lanes
        .into_iter()
        .map(|(lid, pts)| {
            let len = pts.keys().next_back().map_or(0, |m| m + 1);
            let mut points = vec![None; len];
            let mut headings = vec![0.0; len];
            for (i, (p, h)) in pts {
                points[i] = Some(p);
                headings[i] = h;
            }
            MapPolyline {
                id: lid,
                points,
                headings,
            }
        })
        .collect();
    let polygons = polys.into_values().map(|v| v.into_values().collect()).collect();
    Ok(SceneFile {
        scene: Scene {
            id,
            agents: tracks,
            map,
            drivable: DrivableArea { polygons },
        },
        history_len: t_len,
        future_len: nt_len,
        sample_rate: rate,
    })
}

/// Pads every polyline to `len` points with invalid entries.
pub fn pad_polylines(scene: &mut Scene, len: usize) {
    for l in &mut scene.map {
        if l.points.len() < len {
            l.points.resize(len, None);
            l.headings.resize(len, 0.0);
        }
    }
}

pub fn split_dir(dataset: &Path, split: &str) -> PathBuf {
    dataset.join(split)
}

/// Writes scenes as `<dir>/<scene id>.scene`.
pub fn write_split(dir: &Path, scenes: &[Scene], sample_rate: f64) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for s in scenes {
        write_scene(&dir.join(format!("{}.{SCENE_EXT}", s.id)), s, sample_rate)?;
    }
    Ok(())
}

/// Loads every scene file of a split in file-name order, padding polylines
/// to `polyline_len` points.
pub fn load_split(dataset: &Path, split: &str, polyline_len: usize) -> Result<Vec<Scene>> {
    let dir = split_dir(dataset, split);
    let entries = fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == SCENE_EXT))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::EmptySplit(dir.display().to_string()));
    }
    files
        .iter()
        .map(|f| {
            let mut s = read_scene(f)?.scene;
            pad_polylines(&mut s, polyline_len);
            Ok(s)
        })
        .collect()
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Provenance record written into every artifact directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub code_hash: String,
    pub started_unix: u64,
    pub wall_clock_secs: f64,
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value, seeds: Vec<u64>) -> Self {
        RunManifest {
            command: command.into(),
            config,
            seeds,
            inputs: Vec::new(),
            outputs: Vec::new(),
            code_hash: code_hash(),
            started_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
            wall_clock_secs: 0.0,
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self)?;
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

const SOURCES: &[&str] = &[
    include_str!("lib.rs"),
    include_str!("config.rs"),
    include_str!("scene.rs"),
    include_str!("inputs.rs"),
    include_str!("encoder.rs"),
    include_str!("decoder.rs"),
    include_str!("model.rs"),
    include_str!("losses.rs"),
    include_str!("metrics.rs"),
    include_str!("eval.rs"),
    include_str!("trainer.rs"),
    include_str!("checkpoint.rs"),
    include_str!("experiments.rs"),
    include_str!("io.rs"),
    include_str!("cli.rs"),
    include_str!("nn/graph.rs"),
    include_str!("nn/attention.rs"),
    include_str!("nn/blocks.rs"),
    include_str!("synthgen/mod.rs"),
    include_str!("synthgen/layout.rs"),
    include_str!("synthgen/agents.rs"),
    include_str!("synthgen/geometry.rs"),
];

/// SHA-256 over the library sources compiled into this binary.
pub fn code_hash() -> String {
    let mut h = Sha256::new();
    h.update(env!("CARGO_PKG_VERSION").as_bytes());
    for s in SOURCES {
        h.update((s.len() as u64).to_le_bytes());
        h.update(s.as_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}
