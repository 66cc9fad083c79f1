//! End-to-end runs through the public API on grids small enough for CI.

use pde_surrogate::datagen::{generate_dataset, DatasetSpec, GridSpec, IcFamily, System};
use pde_surrogate::dataset::{
    make_splits, read_dataset, write_dataset, Dataset, Split, SplitPlan, Trajectory, WindowSource,
};
use pde_surrogate::eval::{evaluate, rollout, Predictor, TestCase};
use pde_surrogate::model::{Checkpoint, FnoConfig, ModelConfig, ViTConfig};
use pde_surrogate::training::{finetune, pretrain, TrainData, TrainPlan};

fn dataset(system: System, params: Vec<Vec<f64>>, grid: GridSpec) -> Dataset {
    generate_dataset(&DatasetSpec {
        system,
        params,
        n_traj: 4,
        grid,
        seed: 11,
        ic: IcFamily::default(),
        substeps: None,
    })
    .unwrap()
}

fn quick_plan() -> TrainPlan {
    TrainPlan {
        max_epochs: 2,
        batch_size: 8,
        ..TrainPlan::default()
    }
}

fn pick(ds: &Dataset, idx: Vec<usize>) -> Vec<&Trajectory> {
    idx.into_iter().map(|i| &ds.trajectories[i]).collect()
}

#[test]
fn vit_pipeline_on_disk_data() {
    let dir = tempfile::tempdir().unwrap();
    let params = vec![vec![0.1], vec![0.4], vec![2.0]];
    let ds = dataset(System::Advection, params.clone(), GridSpec::new_1d(32, 12, 1.0));
    let path = dir.path().join("adv.pdet");
    write_dataset(&path, &ds).unwrap();
    let ds = read_dataset(&path).unwrap();
    assert_eq!(ds.trajectories.len(), 12);

    let recs: Vec<_> = ds.trajectories.iter().map(|t| (t.params.clone(), t.seed)).collect();
    let plan = SplitPlan::new(params[..2].to_vec(), params[2..].to_vec(), 1);
    let s = make_splits(&recs, &plan, 3).unwrap();
    assert_eq!(s.count(Split::TestOod), 4);
    assert_eq!(s.count(Split::TestId), 2);

    let data = TrainData {
        train: pick(&ds, s.indices(Split::Train)),
        val: pick(&ds, s.indices(Split::Val)),
        grid: &ds.meta.grid,
        dataset_hash: "h".into(),
    };
    let mut vit = ViTConfig::new(&[32], 3, 1, 4).with_size(1, 16);
    vit.heads = 2;
    vit.patch = vec![8, 1];
    let out = pretrain(ModelConfig::Vit(vit), &data, &quick_plan(), &mut |_| {}).unwrap();
    assert_eq!(out.log.epochs.len(), 2);
    assert!(out.log.epochs.iter().all(|e| e.train_mse.is_finite()));

    let ck_path = dir.path().join("m.pdtc");
    out.checkpoint.save(&ck_path).unwrap();
    let ck = Checkpoint::load(&ck_path).unwrap();
    let t = &ds.trajectories[0];
    let a = rollout(&out.checkpoint, t, &ds.meta.grid).unwrap();
    let b = rollout(&ck, t, &ds.meta.grid).unwrap();
    assert_eq!(a.frames, b.frames);

    // the first rolled-out frame is exactly the one-step prediction on the training window
    let src = WindowSource::new(&[t], &ck.norm, 4, &ds.meta.grid).unwrap();
    let mut one = ck.model.predict(&src.sample(0, 4).context).unwrap().into_data();
    ck.norm.denormalize_frame(&mut one);
    let first = &a.frames.data()[4 * t.frame_len()..5 * t.frame_len()];
    for (x, y) in one.iter().zip(first) {
        assert!((x - y).abs() < 1e-12, "{x} vs {y}");
    }

    let mut cases: Vec<TestCase> = Vec::new();
    for (which, ood) in [(Split::TestId, false), (Split::TestOod, true)] {
        for i in s.indices(which) {
            cases.push(TestCase {
                id: i,
                trajectory: &ds.trajectories[i],
                ood,
            });
        }
    }
    let rep = evaluate(&ck, &cases, &ds.meta.grid, "vit").unwrap();
    assert_eq!(rep.trajectories.len(), 6);
    assert_eq!(rep.horizon, 12 - 4);
    assert!(rep.id_mean.is_some() && rep.ood_mean.is_some());

    let ood = TrainData {
        train: pick(&ds, s.indices(Split::TestOod)),
        val: Vec::new(),
        grid: &ds.meta.grid,
        dataset_hash: "h2".into(),
    };
    let tuned = finetune(&ck, &ood, &quick_plan(), 1, &mut |_| {}).unwrap();
    assert_eq!(tuned.log.epochs.len(), 1);
    assert_eq!(tuned.checkpoint.provenance.lineage, Some(ck.hash().unwrap()));
}

#[test]
fn fno_pipeline_on_two_dimensional_data() {
    let ds = dataset(
        System::Ns2dSynthetic,
        vec![vec![0.5, -0.25, 0.1]],
        GridSpec::new_2d(16, 16, 8, 1.0),
    );
    let all: Vec<&Trajectory> = ds.trajectories.iter().collect();
    let data = TrainData {
        train: all[..3].to_vec(),
        val: all[3..].to_vec(),
        grid: &ds.meta.grid,
        dataset_hash: String::new(),
    };
    let mut fno = FnoConfig::new(&[16, 16], 2, 2 + 3 + 1, 3);
    fno.width = 4;
    fno.modes = 4;
    fno.n_layers = 2;
    fno.projection_width = 8;
    let out = pretrain(ModelConfig::Fno(fno), &data, &quick_plan(), &mut |_| {}).unwrap();
    assert_eq!(out.checkpoint.context_len(), 3);
    let r = rollout(&out.checkpoint, all[3], &ds.meta.grid).unwrap();
    assert!(r.mse().is_finite());
    assert_eq!(r.frames.shape()[0], 8);
}
