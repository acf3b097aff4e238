//! Runs an untrained teacher on one scene with and without its map and
//! prints the focal agent's mode endpoints and confidences.

use mftp::config::ModelConfig;
use mftp::model::Network;
use mftp::synthgen::{generate_scene, SpecDistribution};

fn main() -> Result<(), mftp::error::Error> {
    let cfg = ModelConfig {
        d_model: 32,
        encoder_layers: 2,
        decoder_layers: 1,
        ..ModelConfig::default()
    };
    let spec = SpecDistribution::default().sample(7);
    let scene = generate_scene("example", &spec, &cfg)?;
    let (net, params) = Network::new(&cfg, true, 0)?;
    let focal = scene.focal_index().expect("generated scenes have a focal agent");

    println!(
        "scene {:?}: {} agents, {} lane polylines, {} parameters",
        spec.layout,
        scene.agents.len(),
        scene.map.len(),
        params.num_scalars()
    );
    for use_map in [true, false] {
        let pred = net.predict(&params, &scene, use_map)?.set;
        println!("use_map = {use_map}");
        for k in 0..pred.modes {
            let [x, y] = pred.point(focal, k, pred.future_len - 1);
            println!("  mode {k}: p = {:.3} endpoint ({x:8.2}, {y:8.2})", pred.confidence(focal, k));
        }
    }
    Ok(())
}
