//! Trains a teacher, then a map-free student with and without feature
//! distillation, and compares the students on the test split.

use mftp::experiments::{test_report, train_model, ExperimentConfig};
use mftp::synthgen::{generate_dataset, DatasetConfig};
use mftp::trainer::Phase;

fn main() -> Result<(), mftp::error::Error> {
    let mut exp = ExperimentConfig::desk();
    exp.teacher_epochs = 3;
    exp.student_epochs = 3;
    let ds = generate_dataset(
        &DatasetConfig {
            n_scenes: 200,
            ..DatasetConfig::default()
        },
        &exp.model,
    )?;
    let seed = 1;

    let teacher = train_model(&exp.model, &exp.train_config(Phase::Teacher, seed), &ds, None, |_| {})?;
    let nkd = train_model(&exp.model, &exp.train_config(Phase::StudentNkd, seed), &ds, None, |_| {})?;
    let kd = train_model(
        &exp.model,
        &exp.train_config(Phase::StudentKd, seed),
        &ds,
        Some(&teacher),
        |e| println!("student_kd epoch {} reg {:.4} cls {:.4} kd {:.4}", e.epoch, e.reg, e.cls, e.kd),
    )?;

    for (name, model, use_map) in [("teacher", &teacher, true), ("student_nkd", &nkd, false), ("student_kd", &kd, false)] {
        let r = test_report(model, &ds.test, use_map)?;
        println!(
            "{name:12} minADE {:.3} minFDE {:.3} MR {:.3} DAC {:.3}",
            r.min_ade, r.min_fde, r.miss_rate, r.dac
        );
    }
    Ok(())
}
