//! Compares backpropagated gradients of the full training loss with central
//! finite differences on a handful of parameters.

use mftp::config::ModelConfig;
use mftp::model::Network;
use mftp::synthgen::{generate_scene, SpecDistribution};
use mftp::trainer::{scene_gradients, Phase, TrainConfig};

const H: f64 = 1e-5;

fn main() -> Result<(), mftp::error::Error> {
    let cfg = ModelConfig {
        d_model: 16,
        heads: 2,
        encoder_layers: 1,
        decoder_layers: 1,
        ..ModelConfig::default()
    };
    let scene = generate_scene("grad", &SpecDistribution::default().sample(3), &cfg)?;
    let (net, mut params) = Network::new(&cfg, true, 1)?;
    let tc = TrainConfig {
        phase: Phase::Teacher,
        ..TrainConfig::default()
    };
    let (parts, grads) = scene_gradients(&net, &params, &scene, &tc, None)?;
    println!("loss {:.6} (reg {:.6} cls {:.6})", parts.total, parts.reg, parts.cls);

    let mut worst: f64 = 0.0;
    for p in (0..params.len()).step_by(params.len() / 8 + 1) {
        let Some(g) = &grads[p] else { continue };
        let name = params.entries()[p].name.clone();
        let j = g.len() / 2;
        let mut loss_at = |delta: f64| {
            let e = &mut params.entries_mut()[p];
            let orig = e.value.values()[j];
            e.value.values_mut()[j] = orig + delta;
            let l = scene_gradients(&net, &params, &scene, &tc, None).map(|(l, _)| l.total);
            params.entries_mut()[p].value.values_mut()[j] = orig;
            l
        };
        let fd = (loss_at(H)? - loss_at(-H)?) / (2.0 * H);
        let rel = (fd - g[j]).abs() / fd.abs().max(g[j].abs()).max(1e-8);
        worst = worst.max(rel);
        println!("{name:40} analytic {:+.6e} numeric {fd:+.6e} rel {rel:.1e}", g[j]);
    }
    println!("worst relative error {worst:.1e}");
    Ok(())
}
