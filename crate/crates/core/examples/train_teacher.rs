//! Trains a small map-based teacher, saves a checkpoint, reloads it and
//! evaluates it on the test split with and without the map.

use mftp::checkpoint::Checkpoint;
use mftp::eval::{evaluate, EvalOptions};
use mftp::experiments::ExperimentConfig;
use mftp::model::Network;
use mftp::synthgen::{generate_dataset, DatasetConfig};
use mftp::trainer::{log_csv, train_teacher, Phase};

fn main() -> Result<(), mftp::error::Error> {
    let exp = ExperimentConfig::desk();
    let ds = generate_dataset(
        &DatasetConfig {
            n_scenes: 200,
            ..DatasetConfig::default()
        },
        &exp.model,
    )?;
    let mut tc = exp.train_config(Phase::Teacher, 1);
    tc.epochs = 3;
    tc.eval_every = 1;

    let (net, mut params) = Network::new(&exp.model, true, tc.seed)?;
    let out = train_teacher(&net, &mut params, &ds.train, &ds.val, &tc, |e| {
        println!("epoch {} loss {:.4} lr {:.2e}", e.epoch, e.loss, e.lr)
    })?;
    print!("{}", log_csv(&out.history));

    let path = std::env::temp_dir().join("mftp-teacher.ckpt");
    Checkpoint {
        network: net,
        params,
        train: Some(tc),
        state: out.state,
        history: out.history,
    }
    .save(&path)?;
    let ckpt = Checkpoint::load(&path)?;
    println!("checkpoint {} ({} steps)", path.display(), ckpt.state.step);

    for use_map in [true, false] {
        let opts = EvalOptions {
            use_map,
            ..EvalOptions::default()
        };
        let report = evaluate(&ckpt.network, &ckpt.params, &ds.test, &opts)?.report;
        println!("use_map = {use_map}\n{}", report.to_text());
    }
    Ok(())
}
