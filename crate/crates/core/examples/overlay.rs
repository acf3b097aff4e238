//! Writes a plot overlay (history, ground truth, predicted modes, lanes and
//! drivable polygons) for one scene.

use mftp::cli::{overlay_text, predictions_csv};
use mftp::config::ModelConfig;
use mftp::eval::EvalOptions;
use mftp::model::Network;
use mftp::synthgen::{generate_scene, SpecDistribution};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ModelConfig {
        d_model: 16,
        heads: 2,
        encoder_layers: 1,
        decoder_layers: 1,
        ..ModelConfig::default()
    };
    let scene = generate_scene("overlay", &SpecDistribution::default().sample(11), &cfg)?;
    let (net, params) = Network::new(&cfg, true, 0)?;

    let csv = predictions_csv(&net, &params, std::slice::from_ref(&scene), &EvalOptions::default())?;
    let rows: Vec<String> = csv
        .lines()
        .skip(1)
        .filter_map(|l| l.split_once(',').map(|(_, rest)| rest.to_string()))
        .collect();
    let text = overlay_text(&scene, &rows, cfg.modes);

    let path = std::env::temp_dir().join("overlay.overlay");
    std::fs::write(&path, &text)?;
    for tag in ["HIST", "GT", "PRED", "LANE", "POLY"] {
        let n = text.lines().filter(|l| l.starts_with(&format!("{tag},"))).count();
        println!("{tag:5} {n} rows");
    }
    println!("wrote {}", path.display());
    Ok(())
}
