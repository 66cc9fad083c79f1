//! Pretrains on Burgers viscosities {0.01, 0.04, 0.1, 0.4}, finetunes on
//! {0.02, 0.2} and compares against a model trained from scratch on the
//! finetuning set.
//!
//! `cargo run --release --example finetune_burgers -- [seed] [pretrain_steps] [finetune_lr]`

use pde_surrogate::datagen::{generate_dataset, DatasetSpec, GridSpec, IcFamily, System};
use pde_surrogate::dataset::{compute_norm_stats, make_splits, Dataset, Split, SplitPlan, Trajectory, WindowSource};
use pde_surrogate::eval::{evaluate, TestCase};
use pde_surrogate::model::{Checkpoint, ModelConfig, ViTConfig};
use pde_surrogate::training::{finetune, one_step_mse, pretrain, TrainData, TrainPlan};

fn burgers(params: &[f64], n: usize, seed: u64) -> pde_surrogate::Result<Dataset> {
    generate_dataset(&DatasetSpec {
        system: System::Burgers,
        params: params.iter().map(|&a| vec![a]).collect(),
        n_traj: n,
        grid: GridSpec::new_1d(256, 41, 2.0),
        seed,
        ic: IcFamily::default(),
        substeps: None,
    })
}

fn scores(ck: &Checkpoint, test: &[&Trajectory], grid: &GridSpec) -> pde_surrogate::Result<(f64, f64)> {
    let cases: Vec<TestCase> = test
        .iter()
        .enumerate()
        .map(|(id, &t)| TestCase {
            id,
            trajectory: t,
            ood: true,
        })
        .collect();
    let rollout = evaluate(ck, &cases, grid, "m")?.ood_mean.unwrap_or(f64::INFINITY);
    // one-step error in the checkpoint's own normalized units
    let src = WindowSource::new(test, &ck.norm, ck.model.config.context(), grid)?;
    Ok((rollout, one_step_mse(&ck.model, &src)?))
}

fn main() -> pde_surrogate::Result<()> {
    let arg = |i: usize| std::env::args().nth(i);
    let seed: u64 = arg(1).map(|s| s.parse().unwrap()).unwrap_or(0);
    let steps: usize = arg(2).map(|s| s.parse().unwrap()).unwrap_or(800);
    let tune_lr: f64 = arg(3).map(|s| s.parse().unwrap()).unwrap_or(1e-3);

    let id = [0.01, 0.04, 0.1, 0.4];
    let ds = burgers(&id, 20, 100 + seed)?;
    let recs: Vec<_> = ds.trajectories.iter().map(|t| (t.params.clone(), t.seed)).collect();
    let s = make_splits(
        &recs,
        &SplitPlan::new(id.iter().map(|&a| vec![a]).collect(), vec![], 1),
        seed,
    )?;
    let pick = |w| {
        s.indices(w)
            .into_iter()
            .map(|i| &ds.trajectories[i])
            .collect::<Vec<_>>()
    };
    let grid = &ds.meta.grid;
    let config = ModelConfig::Vit(ViTConfig::new(&[256], 3, 1, 8).with_size(2, 64));
    let plan = TrainPlan {
        max_epochs: 200,
        max_steps: Some(steps),
        seed,
        ..TrainPlan::default()
    };
    let data = TrainData {
        train: pick(Split::Train),
        val: pick(Split::Val),
        grid,
        dataset_hash: String::new(),
    };
    let base = pretrain(config.clone(), &data, &plan, &mut |_| {})?;
    println!(
        "pretrained: {} steps, best epoch {:?}",
        base.log.steps, base.log.best_epoch
    );
    let base = base.checkpoint;

    let tune = burgers(&[0.02, 0.2], 10, 200 + seed)?;
    let test = burgers(&[0.02, 0.2], 5, 300 + seed)?;
    let tune_data = TrainData {
        train: tune.trajectories.iter().collect(),
        val: vec![],
        grid,
        dataset_hash: String::new(),
    };
    let test: Vec<&Trajectory> = test.trajectories.iter().collect();
    let tune_plan = TrainPlan {
        max_steps: None,
        lr: tune_lr,
        ..plan.clone()
    };
    let tuned = finetune(&base, &tune_data, &tune_plan, 10, &mut |e| {
        println!("finetune epoch {:2} train {:.3e}", e.epoch, e.train_mse)
    })?
    .checkpoint;
    let scratch_plan = TrainPlan {
        max_epochs: 10,
        max_steps: None,
        ..plan.clone()
    };
    let scratch = pretrain(config, &tune_data, &scratch_plan, &mut |e| {
        println!("scratch  epoch {:2} train {:.3e}", e.epoch, e.train_mse)
    })?
    .checkpoint;

    let norm = compute_norm_stats(test.iter().copied())?;
    let mut zero = 0.0;
    for t in &test {
        for f in 8..t.n_frames() {
            zero += t.frame(f).iter().map(|v| (v - norm.mean[0]).powi(2)).sum::<f64>() / t.frame_len() as f64;
        }
    }
    println!(
        "mean-field rollout mse {:.3e}",
        zero / (test.len() * (test[0].n_frames() - 8)) as f64
    );
    for (name, ck) in [("pretrained", &base), ("finetuned", &tuned), ("scratch", &scratch)] {
        let (r, o) = scores(ck, &test, grid)?;
        println!("{name:10} rollout {r:.3e} one-step {o:.3e}");
    }
    Ok(())
}
