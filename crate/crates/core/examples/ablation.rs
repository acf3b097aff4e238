//! Ablates the number of decoding iterations on a map-free student.

use mftp::experiments::{ablation_csv, ablation_variants, run_ablation, AblationKind, ExperimentConfig};
use mftp::synthgen::{generate_dataset, DatasetConfig};

fn main() -> Result<(), mftp::error::Error> {
    let mut exp = ExperimentConfig::desk();
    exp.student_epochs = 2;
    exp.seeds = vec![1];
    let ds = generate_dataset(
        &DatasetConfig {
            n_scenes: 150,
            ..DatasetConfig::default()
        },
        &exp.model,
    )?;

    let kind = AblationKind::Iters;
    let values: Vec<String> = kind.default_values().iter().map(|v| v.to_string()).collect();
    let variants = ablation_variants(kind, &values, &exp.model)?;
    let runs = run_ablation(&ds, &variants, &exp, |line| eprintln!("{line}"))?;
    print!("{}", ablation_csv(&runs));
    Ok(())
}
