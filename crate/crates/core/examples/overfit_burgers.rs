//! Overfits a small transformer on four high-viscosity Burgers trajectories
//! and prints the training error per epoch.

use std::time::Instant;

use pde_surrogate::datagen::{generate_dataset, DatasetSpec, GridSpec, IcFamily, System};
use pde_surrogate::dataset::{compute_norm_stats, WindowSource};
use pde_surrogate::model::{ModelConfig, ViTConfig};
use pde_surrogate::training::{one_step_mse, pretrain, TrainData, TrainPlan};

fn main() -> pde_surrogate::Result<()> {
    let steps: usize = std::env::args().nth(1).map(|s| s.parse().unwrap()).unwrap_or(2000);
    let batch: usize = std::env::args().nth(2).map(|s| s.parse().unwrap()).unwrap_or(32);
    let ds = generate_dataset(&DatasetSpec {
        system: System::Burgers,
        params: vec![vec![4.0]],
        n_traj: 4,
        grid: GridSpec::new_1d(256, 41, 2.0),
        seed: 0,
        ic: IcFamily::default(),
        substeps: None,
    })?;
    let data = TrainData {
        train: ds.trajectories.iter().collect(),
        val: vec![],
        grid: &ds.meta.grid,
        dataset_hash: String::new(),
    };
    let config = ModelConfig::Vit(ViTConfig::new(&[256], 3, 1, 8).with_size(2, 64));
    let plan = TrainPlan {
        max_epochs: usize::MAX,
        batch_size: batch,
        max_steps: Some(steps),
        ..TrainPlan::default()
    };
    let start = Instant::now();
    let out = pretrain(config, &data, &plan, &mut |e| {
        if e.epoch % 20 == 1 {
            println!(
                "epoch {:4} train {:.3e} ({:.0?})",
                e.epoch,
                e.train_mse,
                start.elapsed()
            );
        }
    })?;
    let norm = compute_norm_stats(data.train.iter().copied())?;
    let src = WindowSource::new(&data.train, &norm, 8, data.grid)?;
    println!(
        "steps {} final one-step train mse {:.3e} in {:.1?}",
        out.log.steps,
        one_step_mse(&out.checkpoint.model, &src)?,
        start.elapsed()
    );
    Ok(())
}
