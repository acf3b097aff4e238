//! Property, oracle and closed-form checks shared by the suite tests and the
//! acceptance gate. Each check returns a one-line summary or a failure reason.

use std::sync::Arc;
use std::time::Instant;

use mftp::config::ModelConfig;
use mftp::inputs::SceneInputs;
use mftp::losses::{
    cls_loss, kd_decoder_loss, kd_encoder_loss, kd_loss, match_best_mode, match_trajectories,
    nll_loss, scene_futures, task_losses, total_loss_var, LossWeights, MatchResult, ModeMatch,
};
use mftp::metrics::{self, Forecast};
use mftp::model::{Network, PredictionSet, QueryFeatures};
use mftp::nn::{self, AttentionMask, FeatureArray, Graph, InteractionBlock, ParameterSet};
use mftp::scene::{DrivableArea, Point2, Scene};
use mftp::synthgen::{generate_scene, SpecDistribution};
use mftp::trainer::adam_update;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Check = Result<String, String>;

pub const ORACLE_CASES: usize = 100;
pub const ORACLE_TOL: f64 = 1e-6;
pub const SCALAR_TOL: f64 = 1e-10;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn random_array(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> FeatureArray {
    FeatureArray::from_rows(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-scale..scale)).collect())
}

pub fn random_scene(cfg: &ModelConfig, seed: u64) -> Scene {
    let spec = SpecDistribution::default().sample(seed);
    generate_scene(&format!("check-{seed}"), &spec, cfg).expect("synthetic scene")
}

fn forward_set(net: &Network, ps: &ParameterSet, inp: &SceneInputs, use_map: bool) -> (PredictionSet, Vec<f64>) {
    let mut g = Graph::new(ps);
    let fp = net.forward(&mut g, inp, use_map).expect("forward");
    let set = PredictionSet::from_pass(&g, &fp, inp.n_agents, &net.cfg);
    let queries = g.value(fp.encoded.queries).values().to_vec();
    (set, queries)
}

// ---------------------------------------------------------------- gradients

fn loss_and_grads(
    net: &Network,
    ps: &ParameterSet,
    scene: &Scene,
    teacher: Option<&QueryFeatures>,
) -> (f64, Vec<Option<Vec<f64>>>) {
    let use_map = teacher.is_none();
    let view = if use_map { scene.clone() } else { scene.without_map() };
    let inp = SceneInputs::new(&view, &net.cfg).expect("inputs");
    let mut g = Graph::new(ps);
    let fp = net.forward(&mut g, &inp, use_map).expect("forward");
    let (task, _) = task_losses(&mut g, &fp.decoded, net.cfg.modes, &scene_futures(scene));
    let kd = teacher.map(|t| kd_loss(&mut g, &fp, t, false).expect("kd"));
    let loss = total_loss_var(&mut g, task, kd, &LossWeights::default());
    let grads = g.backward(loss);
    (g.scalar(loss), grads.into_params())
}

fn jittered_targets(net: &Network, ps: &ParameterSet, scene: &Scene, seed: u64) -> QueryFeatures {
    let mut r = rng(seed);
    let f = net.predict(ps, scene, false).expect("predict").features;
    let jitter = |a: &FeatureArray, r: &mut ChaCha8Rng| {
        let v = a.values().iter().map(|x| x + r.gen_range(-0.5..0.5)).collect();
        FeatureArray::new(a.shape().to_vec(), v).expect("shape")
    };
    QueryFeatures {
        queries: jitter(&f.queries, &mut r),
        step_feats: f.step_feats.iter().map(|s| jitter(s, &mut r)).collect(),
    }
}

/// Analytic gradients of the full objective against a 4-point central
/// difference at 50 random parameter entries.
pub fn gradient_check(with_map: bool, seed: u64) -> Check {
    let start = Instant::now();
    let cfg = super::small_config(16);
    let scene = super::two_agent_scene(&cfg, seed);
    let (net, mut ps) = Network::new(&cfg, with_map, seed).map_err(|e| e.to_string())?;
    let teacher = (!with_map).then(|| jittered_targets(&net, &ps, &scene, seed + 1));
    let (_, grads) = loss_and_grads(&net, &ps, &scene, teacher.as_ref());

    let mut r = rng(seed + 2);
    let h = 1e-3;
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let p = r.gen_range(0..ps.len());
        let j = r.gen_range(0..ps.entries()[p].value.len());
        let pid = ps.id(&ps.entries()[p].name.clone()).expect("id");
        let orig = ps.get(pid).value.values()[j];
        let mut eval = |delta: f64| {
            ps.get_mut(pid).value.values_mut()[j] = orig + delta;
            loss_and_grads(&net, &ps, &scene, teacher.as_ref()).0
        };
        let (p1, m1, p2, m2) = (eval(h), eval(-h), eval(2.0 * h), eval(-2.0 * h));
        ps.get_mut(pid).value.values_mut()[j] = orig;
        let numeric = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h);
        let analytic = grads[p].as_ref().map_or(0.0, |g| g[j]);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
        ensure(rel < 1e-4, || {
            format!("{}[{j}]: analytic {analytic:e} numeric {numeric:e} rel {rel:e}", ps.entries()[p].name)
        })?;
        worst = worst.max(rel);
    }
    Ok(format!(
        "{} worst rel err {worst:.2e} over 50 params in {:.1}s",
        if with_map { "teacher" } else { "student-kd" },
        start.elapsed().as_secs_f64()
    ))
}

// -------------------------------------------------------------------- masks

/// Causal attention rows `<= t` ignore everything at later steps, both for
/// the bare operator and through the encoder's temporal and spatial layers.
pub fn causal_mask() -> Check {
    let mut r = rng(100);
    for case in 0..ORACLE_CASES {
        let n = r.gen_range(2..9);
        let d = 4 * r.gen_range(1..3);
        let (q, k, v) = (random_array(&mut r, n, d, 1.0), random_array(&mut r, n, d, 1.0), random_array(&mut r, n, d, 1.0));
        let rel = r.gen_bool(0.5).then(|| random_array(&mut r, n * n, d, 0.5));
        let mask = AttentionMask::causal(n);
        let t = r.gen_range(0..n - 1);
        let base = nn::attention(&q, &k, &v, &mask, rel.as_ref(), 2).map_err(|e| e.to_string())?;
        let perturb = |a: &FeatureArray, r: &mut ChaCha8Rng| {
            let mut b = a.clone();
            for row in t + 1..n {
                for c in 0..d {
                    b.values_mut()[row * d + c] += r.gen_range(-50.0..50.0);
                }
            }
            b
        };
        let (q2, k2, v2) = (perturb(&q, &mut r), perturb(&k, &mut r), perturb(&v, &mut r));
        let out = nn::attention(&q2, &k2, &v2, &mask, rel.as_ref(), 2).map_err(|e| e.to_string())?;
        ensure(out.values()[..(t + 1) * d] == base.values()[..(t + 1) * d], || {
            format!("case {case}: attention rows <= {t} changed")
        })?;
    }

    let cfg = super::small_config(16);
    let mut checked = 0;
    for seed in 0..4u64 {
        let scene = random_scene(&cfg, 200 + seed);
        let (net, ps) = Network::new(&cfg, false, seed).map_err(|e| e.to_string())?;
        let inp = SceneInputs::new(&scene.without_map(), &cfg).map_err(|e| e.to_string())?;
        let s = inp.steps;
        for t in [0, s / 2, s - 2] {
            let mut moved = inp.clone();
            let mut r = rng(300 + seed);
            for i in 0..inp.n_agents {
                for j in t + 1..s {
                    for c in 0..2 {
                        moved.agent_vectors.values_mut()[(i * s + j) * 2 + c] += r.gen_range(-5.0..5.0);
                    }
                }
            }
            let a = temporal_spatial_stack(&net, &ps, &inp);
            let b = temporal_spatial_stack(&net, &ps, &moved);
            let d = cfg.d_model;
            for i in 0..inp.n_agents {
                let lo = i * s * d;
                let hi = lo + (t + 1) * d;
                ensure(a.values()[lo..hi] == b.values()[lo..hi], || {
                    format!("scene {seed}: agent {i} features at steps <= {t} changed")
                })?;
            }
            checked += 1;
        }
    }
    Ok(format!("{ORACLE_CASES} operator cases and {checked} encoder cases bit-identical"))
}

fn temporal_spatial_stack(net: &Network, ps: &ParameterSet, inp: &SceneInputs) -> FeatureArray {
    let enc = &net.encoder;
    let mut g = Graph::new(ps);
    let mut st = enc.embed_inputs(&mut g, inp, false).expect("embed");
    let time = g.param(enc.time_embed.expect("temporal attention enabled"));
    let spatial = match (&enc.spatial_rel, inp.spatial_rel.is_empty()) {
        (Some(mlp), false) => {
            let x = g.constant(inp.spatial_rel.clone());
            Some(mlp.forward(&mut g, x))
        }
        _ => None,
    };
    for layer in 0..enc.layers.len() {
        st.layer = layer;
        st = enc.agent_agent_temporal(&mut g, inp, st, time);
        st = enc.agent_agent_spatial(&mut g, inp, st, spatial);
    }
    g.value(st.agent_feats).clone()
}

/// An agent and a lane placed far outside the neighbourhood radius leave
/// every output of the original agents bit-identical.
pub fn radius_isolation() -> Check {
    let cfg = super::small_config(16);
    let far = Point2::new(5000.0, 5000.0);
    for seed in 0..5u64 {
        let scene = random_scene(&cfg, 400 + seed);
        let (net, ps) = Network::new(&cfg, true, seed).map_err(|e| e.to_string())?;
        let mut extended = scene.clone();
        let shifted = scene.translated(far);
        let mut ghost = shifted.agents[0].clone();
        ghost.id = "far-agent".into();
        ghost.is_focal = false;
        extended.agents.push(ghost);
        let mut lane = shifted.map[0].clone();
        lane.id = "far-lane".into();
        extended.map.push(lane);

        let n = scene.agents.len();
        let k = cfg.modes;
        let base = net.predict(&ps, &scene, true).map_err(|e| e.to_string())?;
        let ext = net.predict(&ps, &extended, true).map_err(|e| e.to_string())?;
        let per_agent = k * cfg.future_len * 2;
        ensure(base.set.trajectories[..] == ext.set.trajectories[..n * per_agent], || {
            format!("scene {seed}: trajectories changed by a distant agent or lane")
        })?;
        ensure(base.set.confidences[..] == ext.set.confidences[..n * k], || {
            format!("scene {seed}: confidences changed")
        })?;
        let qd = n * k * cfg.d_model;
        ensure(base.features.queries.values()[..] == ext.features.queries.values()[..qd], || {
            format!("scene {seed}: encoder queries changed")
        })?;
    }
    Ok("5 scenes with a distant agent and lane bit-identical".into())
}

/// Masked polyline points never reach the pooled output, for the operator
/// and for the whole teacher.
pub fn maxpool_mask() -> Check {
    let mut r = rng(500);
    for case in 0..ORACLE_CASES {
        let (n, l, d) = (r.gen_range(1..5), r.gen_range(2..8), r.gen_range(1..6));
        let f = FeatureArray::new(vec![n, l, d], (0..n * l * d).map(|_| r.gen_range(-3.0..3.0)).collect())
            .map_err(|e| e.to_string())?;
        let mut mask: Vec<bool> = (0..n * l).map(|_| r.gen_bool(0.6)).collect();
        for p in 0..n {
            mask[p * l + r.gen_range(0..l)] = true;
        }
        let base = nn::maxpool_polyline(&f, &mask).map_err(|e| e.to_string())?;
        let mut g = f.clone();
        for (i, &m) in mask.iter().enumerate() {
            if !m {
                for c in 0..d {
                    g.values_mut()[i * d + c] = 1e6 * r.gen_range(0.5..1.0);
                }
            }
        }
        let out = nn::maxpool_polyline(&g, &mask).map_err(|e| e.to_string())?;
        ensure(out.values() == base.values(), || format!("case {case}: masked point reached the output"))?;
    }

    let cfg = super::small_config(16);
    let mut masked_rows = 0;
    for seed in 0..4u64 {
        let mut scene = random_scene(&cfg, 600 + seed);
        for (i, lane) in scene.map.iter_mut().enumerate() {
            let j = 1 + (i + seed as usize) % (cfg.polyline_len - 2);
            lane.points[j] = None;
        }
        let (net, ps) = Network::new(&cfg, true, seed).map_err(|e| e.to_string())?;
        let inp = SceneInputs::new(&scene, &cfg).map_err(|e| e.to_string())?;
        let map = inp.map.as_ref().ok_or("scene has no map")?;
        let mut in_group = vec![false; map.vectors.rows()];
        for &row in map.groups.iter().flatten() {
            in_group[row] = true;
        }
        let mut moved = inp.clone();
        let cols = map.vectors.cols();
        let mut count = 0;
        for (row, used) in in_group.iter().enumerate() {
            if !used {
                count += 1;
                for c in 0..cols {
                    moved.map.as_mut().expect("map").vectors.values_mut()[row * cols + c] = 1e4;
                }
            }
        }
        masked_rows += count;
        let (a, qa) = forward_set(&net, &ps, &inp, true);
        let (b, qb) = forward_set(&net, &ps, &moved, true);
        ensure(a.trajectories == b.trajectories && a.confidences == b.confidences && qa == qb, || {
            format!("scene {seed}: masked map vectors changed the output")
        })?;
    }
    ensure(masked_rows > 0, || "no masked map vectors were exercised".into())?;
    Ok(format!(
        "{ORACLE_CASES} operator cases and {masked_rows} masked map vectors bit-identical"
    ))
}

// ----------------------------------------------------------------- symmetry

fn rel_change(a: &[f64], b: &[f64]) -> f64 {
    max_abs_diff(a, b) / max_abs(a).max(1e-12)
}

/// Shifting the whole scene moves neither the queries nor the deltas.
pub fn translation() -> Check {
    let cfg = super::small_config(16);
    let shift = Point2::new(1000.0, -500.0);
    let mut worst = 0.0f64;
    for seed in 0..5u64 {
        let scene = random_scene(&cfg, 700 + seed);
        for with_map in [true, false] {
            let (net, ps) = Network::new(&cfg, with_map, seed).map_err(|e| e.to_string())?;
            let a = net.predict(&ps, &scene, with_map).map_err(|e| e.to_string())?;
            let b = net.predict(&ps, &scene.translated(shift), with_map).map_err(|e| e.to_string())?;
            let rq = rel_change(a.features.queries.values(), b.features.queries.values());
            let rd = rel_change(&a.set.deltas, &b.set.deltas);
            ensure(rq < 1e-5 && rd < 1e-5, || {
                format!("scene {seed} map={with_map}: queries rel {rq:e}, deltas rel {rd:e}")
            })?;
            worst = worst.max(rq).max(rd);
        }
    }
    Ok(format!("worst relative change {worst:.2e} over 10 cases"))
}

fn permuted_agent_close(a: &PredictionSet, b: &PredictionSet, perm: &[usize], modes: &[usize]) -> f64 {
    let mut worst = 0.0f64;
    for (new_i, &old_i) in perm.iter().enumerate() {
        for (new_k, &old_k) in modes.iter().enumerate() {
            let ta = a.trajectory(old_i, old_k);
            let tb = b.trajectory(new_i, new_k);
            worst = worst.max(max_abs_diff(ta, tb) / max_abs(ta).max(1.0));
            worst = worst.max((a.confidence(old_i, old_k) - b.confidence(new_i, new_k)).abs());
        }
    }
    worst
}

/// Reordering the agents reorders the outputs.
pub fn agent_permutation() -> Check {
    let cfg = super::small_config(16);
    let identity: Vec<usize> = (0..cfg.modes).collect();
    let mut worst = 0.0f64;
    let mut cases = 0;
    for seed in 0..6u64 {
        let scene = random_scene(&cfg, 800 + seed);
        if scene.agents.len() < 2 {
            continue;
        }
        let mut perm: Vec<usize> = (0..scene.agents.len()).collect();
        perm.shuffle(&mut rng(seed));
        if perm.iter().enumerate().all(|(i, &p)| i == p) {
            perm.reverse();
        }
        let mut shuffled = scene.clone();
        shuffled.agents = perm.iter().map(|&i| scene.agents[i].clone()).collect();
        for with_map in [true, false] {
            let (net, ps) = Network::new(&cfg, with_map, seed).map_err(|e| e.to_string())?;
            let a = net.predict(&ps, &scene, with_map).map_err(|e| e.to_string())?.set;
            let b = net.predict(&ps, &shuffled, with_map).map_err(|e| e.to_string())?.set;
            let err = permuted_agent_close(&a, &b, &perm, &identity);
            ensure(err < 1e-9, || format!("scene {seed} map={with_map}: permuted outputs differ by {err:e}"))?;
            worst = worst.max(err);
            cases += 1;
        }
    }
    ensure(cases > 0, || "no multi-agent scene sampled".into())?;
    Ok(format!("worst deviation {worst:.2e} over {cases} cases"))
}

/// Permuting the per-mode query seeds permutes trajectories and confidences.
pub fn mode_permutation() -> Check {
    let mut worst = 0.0f64;
    let mut cases = 0;
    for fa in [true, false] {
        let mut cfg = super::small_config(16);
        cfg.ablation.aggregation = fa;
        for seed in 0..4u64 {
            let scene = random_scene(&cfg, 900 + seed);
            let (net, ps) = Network::new(&cfg, false, seed).map_err(|e| e.to_string())?;
            let mut modes: Vec<usize> = (0..cfg.modes).collect();
            modes.shuffle(&mut rng(seed + 17));
            if modes.iter().enumerate().all(|(i, &p)| i == p) {
                modes.reverse();
            }
            let (id, block) = match (&net.encoder.hier_seeds, &net.encoder.recent) {
                (Some(id), _) => (*id, cfg.hier_levels),
                (None, Some(recent)) => (recent.mode_embed, 1),
                _ => return Err("encoder has no per-mode parameters".into()),
            };
            let mut moved = ps.clone();
            let src = ps.value(id).clone();
            let d = src.cols();
            let dst = moved.get_mut(id).value.values_mut();
            for (new_k, &old_k) in modes.iter().enumerate() {
                let (to, from) = (new_k * block * d, old_k * block * d);
                dst[to..to + block * d].copy_from_slice(&src.values()[from..from + block * d]);
            }
            let a = net.predict(&ps, &scene, false).map_err(|e| e.to_string())?.set;
            let b = net.predict(&moved, &scene, false).map_err(|e| e.to_string())?.set;
            let agents: Vec<usize> = (0..a.n_agents).collect();
            let err = permuted_agent_close(&a, &b, &agents, &modes);
            ensure(err < 1e-9, || format!("fa={fa} seed {seed}: permuted modes differ by {err:e}"))?;
            worst = worst.max(err);
            cases += 1;
        }
    }
    Ok(format!("worst deviation {worst:.2e} over {cases} cases"))
}

// ------------------------------------------------------------------ oracles

fn random_mask(r: &mut ChaCha8Rng, nq: usize, nk: usize) -> AttentionMask {
    let mut mask = AttentionMask::from_fn(nq, nk, |_, _| false);
    for q in 0..nq {
        for k in 0..nk {
            mask.allowed[q * nk + k] = r.gen_bool(0.6);
        }
        let forced = r.gen_range(0..nk);
        mask.allowed[q * nk + forced] = true;
        mask.inactive[q] = r.gen_bool(0.15);
    }
    mask
}

fn attention_oracle(
    q: &FeatureArray,
    k: &FeatureArray,
    v: &FeatureArray,
    mask: &AttentionMask,
    rel: Option<&FeatureArray>,
    heads: usize,
) -> Vec<f64> {
    let (nq, nk, d) = (q.rows(), k.rows(), q.cols());
    let dh = d / heads;
    let mut out = vec![0.0; nq * d];
    let rel_at = |qi: usize, ki: usize, c: usize| rel.map_or(0.0, |r| r.values()[(qi * nk + ki) * d + c]);
    for qi in 0..nq {
        if mask.inactive[qi] {
            continue;
        }
        let keys: Vec<usize> = (0..nk).filter(|&ki| mask.allows(qi, ki)).collect();
        for h in 0..heads {
            let cols = h * dh..(h + 1) * dh;
            let scores: Vec<f64> = keys
                .iter()
                .map(|&ki| {
                    cols.clone()
                        .map(|c| q.get2(qi, c) * (k.get2(ki, c) + rel_at(qi, ki, c)))
                        .sum::<f64>()
                        / (dh as f64).sqrt()
                })
                .collect();
            let top = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| (s - top).exp()).collect();
            let z: f64 = exps.iter().sum();
            for (e, &ki) in exps.iter().zip(&keys) {
                for c in cols.clone() {
                    out[qi * d + c] += e / z * (v.get2(ki, c) + rel_at(qi, ki, c));
                }
            }
        }
    }
    out
}

pub fn attention_oracle_check() -> Check {
    let mut r = rng(1000);
    let mut worst = 0.0f64;
    for case in 0..ORACLE_CASES {
        let heads = r.gen_range(1..4);
        let d = heads * r.gen_range(1..4);
        let (nq, nk) = (r.gen_range(1..6), r.gen_range(1..6));
        let q = random_array(&mut r, nq, d, 2.0);
        let k = random_array(&mut r, nk, d, 2.0);
        let v = random_array(&mut r, nk, d, 2.0);
        let rel = r.gen_bool(0.5).then(|| random_array(&mut r, nq * nk, d, 1.0));
        let mask = random_mask(&mut r, nq, nk);
        let got = nn::attention(&q, &k, &v, &mask, rel.as_ref(), heads).map_err(|e| e.to_string())?;
        let want = attention_oracle(&q, &k, &v, &mask, rel.as_ref(), heads);
        let err = max_abs_diff(got.values(), &want);
        ensure(err < ORACLE_TOL, || format!("case {case}: attention differs by {err:e}"))?;
        worst = worst.max(err);
    }
    Ok(format!("{ORACLE_CASES} cases, worst abs err {worst:.2e}"))
}

fn linear_oracle(x: &[f64], din: usize, w: &[f64], b: &[f64]) -> Vec<f64> {
    let dout = b.len();
    let n = x.len() / din;
    let mut y = vec![0.0; n * dout];
    for i in 0..n {
        for o in 0..dout {
            let mut s = b[o];
            for c in 0..din {
                s += x[i * din + c] * w[c * dout + o];
            }
            y[i * dout + o] = s;
        }
    }
    y
}

fn layer_norm_oracle(x: &[f64], d: usize, gamma: &[f64], beta: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; x.len()];
    for (row, out) in x.chunks(d).zip(y.chunks_mut(d)) {
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + 1e-5).sqrt();
        for c in 0..d {
            out[c] = (row[c] - mean) * inv * gamma[c] + beta[c];
        }
    }
    y
}

fn block_oracle(
    ps: &ParameterSet,
    b: &InteractionBlock,
    x: &FeatureArray,
    ctx: &FeatureArray,
    mask: &AttentionMask,
    rel: Option<&FeatureArray>,
) -> Vec<f64> {
    let d = x.cols();
    let val = |id| ps.value(id).values();
    let lin = |l: &nn::Linear, a: &[f64], din: usize| linear_oracle(a, din, val(l.weight), val(l.bias));
    let q = FeatureArray::from_rows(x.rows(), d, lin(&b.wq, x.values(), d));
    let k = FeatureArray::from_rows(ctx.rows(), d, lin(&b.wk, ctx.values(), d));
    let v = FeatureArray::from_rows(ctx.rows(), d, lin(&b.wv, ctx.values(), d));
    let att = attention_oracle(&q, &k, &v, mask, rel, b.heads);
    let proj = lin(&b.wo, &att, d);
    let res: Vec<f64> = x.values().iter().zip(&proj).map(|(a, b)| a + b).collect();
    let f = layer_norm_oracle(&res, d, val(b.norm_attn.gamma), val(b.norm_attn.beta));
    let hidden_dim = val(b.ffn.hidden.bias).len();
    let hidden: Vec<f64> = lin(&b.ffn.hidden, &f, d).into_iter().map(|z| z / (1.0 + (-z).exp())).collect();
    let h = lin(&b.ffn.out, &hidden, hidden_dim);
    let res: Vec<f64> = f.iter().zip(&h).map(|(a, b)| a + b).collect();
    let mut out = layer_norm_oracle(&res, d, val(b.norm_ffn.gamma), val(b.norm_ffn.beta));
    for (qi, &off) in mask.inactive.iter().enumerate() {
        if off {
            out[qi * d..(qi + 1) * d].copy_from_slice(x.row(qi));
        }
    }
    out
}

pub fn interaction_block_oracle_check() -> Check {
    let mut r = rng(1100);
    let mut worst = 0.0f64;
    for case in 0..ORACLE_CASES {
        let heads = r.gen_range(1..3);
        let d = heads * r.gen_range(2..4);
        let hidden = r.gen_range(2..9);
        let mut ps = ParameterSet::new();
        let block = InteractionBlock::new(&mut ps, "blk", d, heads, hidden, &mut r);
        for e in ps.entries_mut() {
            for v in e.value.values_mut() {
                *v = r.gen_range(-1.0..1.0);
            }
        }
        let (nq, nk) = (r.gen_range(1..5), r.gen_range(1..5));
        let x = random_array(&mut r, nq, d, 2.0);
        let ctx = random_array(&mut r, nk, d, 2.0);
        let rel = r.gen_bool(0.5).then(|| random_array(&mut r, nq * nk, d, 1.0));
        let mask = random_mask(&mut r, nq, nk);
        let edges = Arc::new(mask.to_edges(rel.is_some()).map_err(|e| e.to_string())?);
        let mut g = Graph::new(&ps);
        let xv = g.constant(x.clone());
        let cv = g.constant(ctx.clone());
        let rv = rel.clone().map(|a| g.constant(a));
        let out = block.forward(&mut g, xv, cv, rv, &edges);
        let want = block_oracle(&ps, &block, &x, &ctx, &mask, rel.as_ref());
        let err = max_abs_diff(g.value(out).values(), &want);
        ensure(err < ORACLE_TOL, || format!("case {case}: interaction block differs by {err:e}"))?;
        worst = worst.max(err);
    }
    Ok(format!("{ORACLE_CASES} cases, worst abs err {worst:.2e}"))
}

pub fn adam_oracle_check() -> Check {
    let mut r = rng(1200);
    let mut worst = 0.0f64;
    for case in 0..ORACLE_CASES {
        let n = r.gen_range(1..12);
        let lr = 10f64.powf(r.gen_range(-4.0..-1.0));
        let mut value: Vec<f64> = (0..n).map(|_| r.gen_range(-2.0..2.0)).collect();
        let (mut m, mut v) = (vec![0.0; n], vec![0.0; n]);
        let mut want = value.clone();
        let (mut wm, mut wv) = (vec![0.0; n], vec![0.0; n]);
        for step in 1..=r.gen_range(1..8u64) {
            let grad: Vec<f64> = (0..n).map(|_| r.gen_range(-3.0..3.0)).collect();
            adam_update(&mut value, &grad, &mut m, &mut v, step, lr);
            for i in 0..n {
                wm[i] = 0.9 * wm[i] + 0.1 * grad[i];
                wv[i] = 0.999 * wv[i] + 0.001 * grad[i] * grad[i];
                let mh = wm[i] / (1.0 - 0.9f64.powi(step as i32));
                let vh = wv[i] / (1.0 - 0.999f64.powi(step as i32));
                want[i] -= lr * mh / (vh.sqrt() + 1e-8);
            }
        }
        let err = max_abs_diff(&value, &want).max(max_abs_diff(&m, &wm)).max(max_abs_diff(&v, &wv));
        ensure(err < ORACLE_TOL, || format!("case {case}: Adam state differs by {err:e}"))?;
        worst = worst.max(err);
    }
    Ok(format!("{ORACLE_CASES} cases, worst abs err {worst:.2e}"))
}

struct LossCase {
    pred: PredictionSet,
    futures: Vec<Vec<Option<Point2>>>,
}

fn random_loss_case(r: &mut ChaCha8Rng) -> LossCase {
    let (n, k, t) = (r.gen_range(1..5), r.gen_range(1..7), r.gen_range(1..7));
    let trajectories: Vec<f64> = (0..n * k * t * 2).map(|_| r.gen_range(-10.0..10.0)).collect();
    let variances: Vec<f64> = (0..n * k * t * 2).map(|_| r.gen_range(-3.0f64..3.0).exp()).collect();
    let mut confidences = Vec::new();
    for _ in 0..n {
        let raw: Vec<f64> = (0..k).map(|_| r.gen_range(-3.0f64..3.0).exp()).collect();
        let z: f64 = raw.iter().sum();
        confidences.extend(raw.iter().map(|x| x / z));
    }
    let futures = (0..n)
        .map(|_| {
            let empty = r.gen_bool(0.1);
            (0..t)
                .map(|_| {
                    (!empty && r.gen_bool(0.8)).then(|| Point2::new(r.gen_range(-10.0..10.0), r.gen_range(-10.0..10.0)))
                })
                .collect()
        })
        .collect();
    LossCase {
        pred: PredictionSet {
            n_agents: n,
            modes: k,
            future_len: t,
            deltas: trajectories.clone(),
            trajectories,
            variances,
            confidences,
        },
        futures,
    }
}

fn matching_oracle(c: &LossCase) -> Vec<Option<(usize, f64)>> {
    let p = &c.pred;
    (0..p.n_agents)
        .map(|i| {
            let valid: Vec<(usize, Point2)> =
                c.futures[i].iter().enumerate().filter_map(|(t, g)| g.map(|g| (t, g))).collect();
            if valid.is_empty() {
                return None;
            }
            let mut best: Option<(usize, f64)> = None;
            for k in 0..p.modes {
                let ade = valid
                    .iter()
                    .map(|&(t, g)| {
                        let [x, y] = p.point(i, k, t);
                        ((x - g.x).powi(2) + (y - g.y).powi(2)).sqrt()
                    })
                    .sum::<f64>()
                    / valid.len() as f64;
                if best.is_none_or(|(_, b)| ade < b) {
                    best = Some((k, ade));
                }
            }
            best
        })
        .collect()
}

pub fn matching_oracle_check() -> Check {
    let mut r = rng(1300);
    for case in 0..ORACLE_CASES {
        let c = random_loss_case(&mut r);
        let got = match_trajectories(&c.pred.trajectories, c.pred.modes, c.pred.future_len, &c.futures);
        let want = matching_oracle(&c);
        for (i, (g, w)) in got.matches.iter().zip(&want).enumerate() {
            let ok = match (g, w) {
                (None, None) => true,
                (Some(g), Some((k, ade))) => g.mode == *k && close(g.ade, *ade, SCALAR_TOL),
                _ => false,
            };
            ensure(ok, || format!("case {case} agent {i}: got {g:?}, oracle {w:?}"))?;
        }
    }
    Ok(format!("{ORACLE_CASES} cases agree"))
}

fn oracle_matches(c: &LossCase) -> MatchResult {
    MatchResult {
        matches: matching_oracle(c)
            .into_iter()
            .map(|m| m.map(|(mode, ade)| ModeMatch { mode, ade }))
            .collect(),
    }
}

pub fn nll_oracle_check() -> Check {
    let mut r = rng(1400);
    let mut worst = 0.0f64;
    let mut cases = 0;
    while cases < ORACLE_CASES {
        let c = random_loss_case(&mut r);
        let m = oracle_matches(&c);
        if m.n_matched() == 0 {
            continue;
        }
        let p = &c.pred;
        let mut sum = 0.0;
        for (i, mm) in m.matched() {
            for (t, g) in c.futures[i].iter().enumerate() {
                let Some(g) = g else { continue };
                let [x, y] = p.point(i, mm.mode, t);
                let base = ((i * p.modes + mm.mode) * p.future_len + t) * 2;
                let (vx, vy) = (p.variances[base], p.variances[base + 1]);
                sum += (2.0 * std::f64::consts::PI).ln()
                    + 0.5 * (vx.ln() + vy.ln())
                    + 0.5 * ((x - g.x).powi(2) / vx + (y - g.y).powi(2) / vy);
            }
        }
        let want = sum / m.n_matched() as f64;
        let got = nll_loss(p, &c.futures, &m);
        ensure(close(got, want, SCALAR_TOL), || format!("case {cases}: NLL {got} vs oracle {want}"))?;
        worst = worst.max((got - want).abs() / want.abs().max(1.0));
        cases += 1;
    }
    Ok(format!("{ORACLE_CASES} cases, worst rel err {worst:.2e}"))
}

pub fn ce_oracle_check() -> Check {
    let mut r = rng(1500);
    let mut worst = 0.0f64;
    let mut cases = 0;
    while cases < ORACLE_CASES {
        let mut c = random_loss_case(&mut r);
        if r.gen_bool(0.2) {
            c.pred.confidences[0] = 0.0;
        }
        let m = oracle_matches(&c);
        if m.n_matched() == 0 {
            continue;
        }
        let want = m
            .matched()
            .map(|(i, mm)| -c.pred.confidence(i, mm.mode).max(1e-12).ln())
            .sum::<f64>()
            / m.n_matched() as f64;
        let got = cls_loss(&c.pred, &m);
        ensure(close(got, want, SCALAR_TOL), || format!("case {cases}: CE {got} vs oracle {want}"))?;
        worst = worst.max((got - want).abs() / want.abs().max(1.0));
        cases += 1;
    }
    Ok(format!("{ORACLE_CASES} cases, worst rel err {worst:.2e}"))
}

fn kd_rows_oracle(s: &FeatureArray, t: &FeatureArray, squared: bool) -> (f64, usize) {
    let mut sum = 0.0;
    for row in 0..s.rows() {
        let sq: f64 = s.row(row).iter().zip(t.row(row)).map(|(a, b)| (a - b) * (a - b)).sum();
        sum += if squared { sq } else { sq.sqrt() };
    }
    (sum, s.rows())
}

pub fn kd_oracle_check() -> Check {
    let mut r = rng(1600);
    let mut worst = 0.0f64;
    for case in 0..ORACLE_CASES {
        let squared = case % 2 == 1;
        let (rows, d) = (r.gen_range(1..10), r.gen_range(1..9));
        let s = random_array(&mut r, rows, d, 3.0);
        let t = random_array(&mut r, rows, d, 3.0);
        let (sum, n) = kd_rows_oracle(&s, &t, squared);
        let want = sum / n as f64;
        let got = kd_encoder_loss(&s, &t, squared).map_err(|e| e.to_string())?;
        ensure(close(got, want, SCALAR_TOL), || format!("case {case}: encoder KD {got} vs {want}"))?;
        worst = worst.max((got - want).abs() / want.max(1.0));

        let iters = r.gen_range(1..4);
        let ss: Vec<FeatureArray> = (0..iters).map(|_| random_array(&mut r, rows, d, 3.0)).collect();
        let ts: Vec<FeatureArray> = (0..iters).map(|_| random_array(&mut r, rows, d, 3.0)).collect();
        let (mut sum, mut n) = (0.0, 0);
        for (a, b) in ss.iter().zip(&ts) {
            let (s1, n1) = kd_rows_oracle(a, b, squared);
            sum += s1;
            n += n1;
        }
        let want = sum / n as f64;
        let got = kd_decoder_loss(&ss, &ts, squared).map_err(|e| e.to_string())?;
        ensure(close(got, want, SCALAR_TOL), || format!("case {case}: decoder KD {got} vs {want}"))?;
        worst = worst.max((got - want).abs() / want.max(1.0));
    }
    Ok(format!("{ORACLE_CASES} cases each for encoder and decoder, worst rel err {worst:.2e}"))
}

struct MetricCase {
    forecasts: Vec<Forecast>,
    gts: Vec<Vec<Option<Point2>>>,
}

fn random_metric_case(r: &mut ChaCha8Rng) -> MetricCase {
    let (n, k, t) = (r.gen_range(1..6), r.gen_range(1..7), r.gen_range(1..8));
    let mut forecasts = Vec::new();
    let mut gts = Vec::new();
    for _ in 0..n {
        let modes = (0..k)
            .map(|_| (0..t).map(|_| Point2::new(r.gen_range(-8.0..8.0), r.gen_range(-8.0..8.0))).collect())
            .collect();
        let raw: Vec<f64> = (0..k).map(|_| r.gen_range(0.01..1.0)).collect();
        let z: f64 = raw.iter().sum();
        forecasts.push(Forecast {
            modes,
            confidences: raw.iter().map(|x| x / z).collect(),
        });
        let mut gt: Vec<Option<Point2>> = (0..t)
            .map(|_| r.gen_bool(0.85).then(|| Point2::new(r.gen_range(-8.0..8.0), r.gen_range(-8.0..8.0))))
            .collect();
        if gt[t - 1].is_none() {
            gt[t - 1] = Some(Point2::new(r.gen_range(-8.0..8.0), r.gen_range(-8.0..8.0)));
        }
        gts.push(gt);
    }
    MetricCase { forecasts, gts }
}

fn dist(a: Point2, b: Point2) -> f64 {
    ((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt()
}

fn endpoint_oracle(f: &Forecast, gt: &[Option<Point2>]) -> (usize, f64) {
    let end = gt.last().copied().flatten().expect("endpoint");
    let mut best = (0, f64::INFINITY);
    for (k, m) in f.modes.iter().enumerate() {
        let d = dist(*m.last().expect("steps"), end);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

fn random_convex_polygon(r: &mut ChaCha8Rng) -> Vec<Point2> {
    let c = Point2::new(r.gen_range(-6.0..6.0), r.gen_range(-6.0..6.0));
    let n = r.gen_range(3..9);
    let radius = r.gen_range(1.0..8.0);
    let phase = r.gen_range(0.0..std::f64::consts::TAU);
    (0..n)
        .map(|i| {
            let a = phase + std::f64::consts::TAU * i as f64 / n as f64;
            Point2::new(c.x + radius * a.cos(), c.y + radius * a.sin())
        })
        .collect()
}

fn convex_contains(poly: &[Point2], p: Point2) -> bool {
    let n = poly.len();
    (0..n).all(|i| {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x) >= 0.0
    })
}

pub fn metric_oracle_check() -> Check {
    let mut r = rng(1700);
    let radius = metrics::DEFAULT_MISS_RADIUS;
    for case in 0..ORACLE_CASES {
        let c = random_metric_case(&mut r);
        let n = c.forecasts.len() as f64;
        let mut want = [0.0; 4];
        for (f, gt) in c.forecasts.iter().zip(&c.gts) {
            let ade = f
                .modes
                .iter()
                .map(|m| {
                    let pts: Vec<f64> = m.iter().zip(gt).filter_map(|(p, g)| g.map(|g| dist(*p, g))).collect();
                    pts.iter().sum::<f64>() / pts.len() as f64
                })
                .fold(f64::INFINITY, f64::min);
            let (k, fde) = endpoint_oracle(f, gt);
            want[0] += ade / n;
            want[1] += fde / n;
            want[2] += if fde > radius { 1.0 / n } else { 0.0 };
            want[3] += (fde + (1.0 - f.confidences[k]).powi(2)) / n;
        }
        let got = [
            metrics::min_ade(&c.forecasts, &c.gts),
            metrics::min_fde(&c.forecasts, &c.gts),
            metrics::miss_rate(&c.forecasts, &c.gts, radius),
            metrics::brier_min_fde(&c.forecasts, &c.gts),
        ];
        for (name, (g, w)) in ["minADE", "minFDE", "MR", "brier-minFDE"].iter().zip(got.into_iter().zip(want)) {
            let g = g.map_err(|e| e.to_string())?;
            ensure((g - w).abs() < ORACLE_TOL, || format!("case {case}: {name} {g} vs oracle {w}"))?;
        }

        let areas: Vec<DrivableArea> = (0..c.forecasts.len())
            .map(|_| DrivableArea {
                polygons: (0..r.gen_range(1..4)).map(|_| random_convex_polygon(&mut r)).collect(),
            })
            .collect();
        let mut ok = 0usize;
        let mut total = 0usize;
        for (f, area) in c.forecasts.iter().zip(&areas) {
            for m in &f.modes {
                total += 1;
                if m.iter().all(|&p| area.polygons.iter().any(|poly| convex_contains(poly, p))) {
                    ok += 1;
                }
            }
        }
        let want = ok as f64 / total as f64;
        let refs: Vec<&DrivableArea> = areas.iter().collect();
        let got = metrics::dac(&c.forecasts, &refs).map_err(|e| e.to_string())?;
        ensure((got - want).abs() < ORACLE_TOL, || format!("case {case}: DAC {got} vs oracle {want}"))?;
    }
    Ok(format!("{ORACLE_CASES} cases agree on minADE, minFDE, MR, brier-minFDE and DAC"))
}

// -------------------------------------------------------------- closed form

pub fn nll_closed_form() -> Check {
    let ln2pi = (2.0 * std::f64::consts::PI).ln();
    let t = 30;
    let gt: Vec<Option<Point2>> = (0..t).map(|i| Some(Point2::new(1.5 * i as f64, -0.25 * i as f64))).collect();
    let trajectories: Vec<f64> = gt.iter().flatten().flat_map(|p| [p.x, p.y]).collect();
    let pred = PredictionSet {
        n_agents: 1,
        modes: 1,
        future_len: t,
        deltas: trajectories.clone(),
        trajectories,
        variances: vec![1.0; 2 * t],
        confidences: vec![1.0],
    };
    let futures = vec![gt.clone()];
    let per_point = nll_loss(&pred, &futures, &match_best_mode(&pred, &futures)) / t as f64;
    ensure((per_point - ln2pi).abs() < 1e-9, || format!("per-point NLL {per_point}, expected {ln2pi}"))?;

    let mut single = vec![None; t];
    single[t - 1] = gt[t - 1];
    let futures = vec![single];
    let one = nll_loss(&pred, &futures, &match_best_mode(&pred, &futures));
    ensure((one - ln2pi).abs() < 1e-9, || format!("single-point NLL {one}, expected {ln2pi}"))?;
    Ok(format!("zero-residual unit-variance NLL {per_point:.12} (log 2pi {ln2pi:.12})"))
}

pub fn ce_closed_form() -> Check {
    let k = 6;
    let pred = PredictionSet {
        n_agents: 3,
        modes: k,
        future_len: 1,
        trajectories: vec![0.0; 3 * k * 2],
        deltas: vec![0.0; 3 * k * 2],
        variances: vec![1.0; 3 * k * 2],
        confidences: vec![1.0 / k as f64; 3 * k],
    };
    let m = MatchResult {
        matches: (0..3).map(|i| Some(ModeMatch { mode: 2 * i, ade: 0.0 })).collect(),
    };
    let ce = cls_loss(&pred, &m);
    let ln6 = 6f64.ln();
    ensure((ce - ln6).abs() < 1e-9, || format!("uniform CE {ce}, expected {ln6}"))?;
    Ok(format!("uniform CE {ce:.12} (log 6 {ln6:.12})"))
}

/// The brier penalty added to minFDE stays within `[0, 1]`, for random
/// forecasts and for network outputs on synthetic scenes.
pub fn brier_gap() -> Check {
    let mut r = rng(1800);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut n = 0;
    let mut record = |f: &Forecast, gt: &[Option<Point2>]| -> Result<(), String> {
        let b = metrics::agent_brier_min_fde(f, gt).map_err(|e| e.to_string())?;
        let m = metrics::agent_min_fde(f, gt).map_err(|e| e.to_string())?;
        let gap = b - m;
        ensure((0.0..=1.0).contains(&gap), || format!("gap {gap} outside [0, 1]"))?;
        lo = lo.min(gap);
        hi = hi.max(gap);
        n += 1;
        Ok(())
    };
    for _ in 0..1000 {
        let c = random_metric_case(&mut r);
        for (f, gt) in c.forecasts.iter().zip(&c.gts) {
            record(f, gt)?;
        }
    }
    let cfg = super::small_config(16);
    for seed in 0..5u64 {
        let scene = random_scene(&cfg, 1900 + seed);
        let (net, ps) = Network::new(&cfg, false, seed).map_err(|e| e.to_string())?;
        let set = net.predict(&ps, &scene, false).map_err(|e| e.to_string())?.set;
        for (i, a) in scene.agents.iter().enumerate() {
            if a.future.last().copied().flatten().is_some() {
                record(&set.forecast(i), &a.future)?;
            }
        }
    }
    Ok(format!("{n} agents, gap range [{lo:.4}, {hi:.4}]"))
}

fn difference(points: &[Point2], origin: Point2) -> Vec<f64> {
    let mut prev = origin;
    let mut out = Vec::with_capacity(points.len() * 2);
    for &p in points {
        out.push(p.x - prev.x);
        out.push(p.y - prev.y);
        prev = p;
    }
    out
}

fn assemble(deltas: &[f64], origin: Point2) -> Vec<f64> {
    let empty = ParameterSet::new();
    let mut g = Graph::new(&empty);
    let x = g.constant(FeatureArray::from_rows(1, deltas.len(), deltas.to_vec()));
    let c = g.cumsum_pairs(x);
    g.value(c)
        .values()
        .chunks(2)
        .flat_map(|d| [origin.x + d[0], origin.y + d[1]])
        .collect()
}

/// Running sums of differenced ground truth give back the ground truth:
/// exactly on a dyadic grid, to round-off on synthetic futures, and the
/// network's positions are its origin plus the running sum of its deltas.
pub fn cumsum_inverts_differencing() -> Check {
    let mut r = rng(2000);
    for case in 0..ORACLE_CASES {
        let origin = Point2::new(r.gen_range(-512..512) as f64 / 8.0, r.gen_range(-512..512) as f64 / 8.0);
        let pts: Vec<Point2> = (0..30)
            .map(|_| Point2::new(r.gen_range(-4096..4096) as f64 / 64.0, r.gen_range(-4096..4096) as f64 / 64.0))
            .collect();
        let back = assemble(&difference(&pts, origin), origin);
        let want: Vec<f64> = pts.iter().flat_map(|p| [p.x, p.y]).collect();
        ensure(back == want, || format!("dyadic case {case}: assembly is not exact"))?;
    }
    let cfg = super::small_config(16);
    let mut worst = 0.0f64;
    for seed in 0..20u64 {
        let scene = random_scene(&cfg, 2100 + seed);
        for a in &scene.agents {
            let (Some(origin), true) = (a.last_observed(), a.future.iter().all(Option::is_some)) else {
                continue;
            };
            let fut: Vec<Point2> = a.future.iter().flatten().copied().collect();
            let back = assemble(&difference(&fut, origin), origin);
            let want: Vec<f64> = fut.iter().flat_map(|p| [p.x, p.y]).collect();
            worst = worst.max(max_abs_diff(&back, &want));
        }
    }
    ensure(worst <= 1e-9, || format!("synthetic futures reassemble with error {worst:e}"))?;

    let mut model_err = 0.0f64;
    for seed in 0..3u64 {
        let scene = random_scene(&cfg, 2200 + seed);
        let (net, ps) = Network::new(&cfg, true, seed).map_err(|e| e.to_string())?;
        let inp = SceneInputs::new(&scene, &cfg).map_err(|e| e.to_string())?;
        let (set, _) = forward_set(&net, &ps, &inp, true);
        let row = cfg.future_len * 2;
        for (i, o) in inp.row_origins().iter().enumerate() {
            let origin = Point2::new(o[0], o[1]);
            let mut acc = [0.0, 0.0];
            for t in 0..cfg.future_len {
                acc[0] += set.deltas[i * row + 2 * t];
                acc[1] += set.deltas[i * row + 2 * t + 1];
                let want = [origin.x + acc[0], origin.y + acc[1]];
                let got = &set.trajectories[i * row + 2 * t..i * row + 2 * t + 2];
                model_err = model_err.max((got[0] - want[0]).abs()).max((got[1] - want[1]).abs());
            }
        }
    }
    ensure(model_err <= 1e-9, || format!("model positions deviate from summed deltas by {model_err:e}"))?;
    Ok(format!(
        "dyadic exact, synthetic max err {worst:.1e}, model assembly max err {model_err:.1e}"
    ))
}
