//! Generates a small synthetic dataset, writes it to disk and prints a
//! summary of the layouts and agent counts.
//!
//! ```text
//! cargo run --release --example generate_dataset -- /tmp/mftp-data 100
//! ```

use std::collections::BTreeMap;
use std::path::PathBuf;

use mftp::config::ModelConfig;
use mftp::synthgen::{write_dataset, DatasetConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("mftp-data"));
    let n_scenes = args.next().map(|s| s.parse()).transpose()?.unwrap_or(100);

    let cfg = DatasetConfig {
        n_scenes,
        ..DatasetConfig::default()
    };
    let ds = write_dataset(&out, &cfg, &ModelConfig::default())?;

    println!("wrote {} scenes to {}", n_scenes, out.display());
    for (name, scenes) in [("train", &ds.train), ("val", &ds.val), ("test", &ds.test)] {
        let agents: usize = scenes.iter().map(|s| s.agents.len()).sum();
        let lanes: usize = scenes.iter().map(|s| s.map.len()).sum();
        println!("  {name:5} {:4} scenes {agents:5} agents {lanes:5} lane polylines", scenes.len());
    }

    let mut sizes = BTreeMap::new();
    for s in ds.train.iter().chain(&ds.val).chain(&ds.test) {
        *sizes.entry(s.agents.len()).or_insert(0) += 1;
    }
    println!("agents per scene: {sizes:?}");
    Ok(())
}
