//! Teacher against distilled and undistilled students over several seeds,
//! printed as the comparison CSV and its seed medians.

use mftp::experiments::{comparison_csv, comparison_medians, run_comparison, ExperimentConfig};
use mftp::synthgen::{generate_dataset, DatasetConfig};

fn main() -> Result<(), mftp::error::Error> {
    let mut exp = ExperimentConfig::desk();
    exp.teacher_epochs = 2;
    exp.student_epochs = 2;
    exp.seeds = vec![1, 2];
    let ds = generate_dataset(
        &DatasetConfig {
            n_scenes: 150,
            ..DatasetConfig::default()
        },
        &exp.model,
    )?;

    let runs = run_comparison(&ds, &exp, |line| eprintln!("{line}"))?;
    print!("{}", comparison_csv(&runs));
    let names = ["teacher", "teacher_no_map", "student_nkd", "student_kd"];
    for (name, r) in names.iter().zip(comparison_medians(&runs)) {
        println!("median {name:15} minFDE {:.3} DAC {:.3}", r.min_fde, r.dac);
    }
    Ok(())
}
