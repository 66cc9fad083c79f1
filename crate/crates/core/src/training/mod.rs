//! Next-step training: seeded window shuffling, Adam, a plateau learning
//! rate schedule, early stopping on validation rollouts, and short
//! finetuning runs from a pretrained checkpoint.

mod optim;

pub use optim::{clip_grad_norm, Adam, Plateau};

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::datagen::GridSpec;
use crate::dataset::{compute_norm_stats, NormStats, Trajectory, WindowSource};
use crate::error::{Error, Result};
use crate::eval::rollout;
use crate::model::{Checkpoint, Model, ModelConfig, Provenance};
use crate::rng;
use crate::tensor::Tensor;

/// Windows per gradient sub-batch. Sub-batches run in parallel and their
/// gradients are summed in a fixed order, so results do not depend on the
/// thread count.
const CHUNK: usize = 4;

/// How the validation loss is measured after each epoch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ValMetric {
    /// Full autoregressive rollout of every validation trajectory,
    /// standardized units.
    Rollout,
    /// Mean one-step error over all validation windows, the training
    /// objective itself. Rollout error of a small model is dominated by
    /// accumulated drift and tends to favor the least-trained weights.
    #[default]
    OneStep,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainPlan {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub early_stop_patience: usize,
    pub weight_decay: f64,
    /// Global gradient-norm cap; `None` disables clipping.
    pub grad_clip: Option<f64>,
    /// Stops after this many optimizer steps, mid-epoch if necessary.
    pub max_steps: Option<usize>,
    pub val_metric: ValMetric,
    pub seed: u64,
}

impl Default for TrainPlan {
    fn default() -> Self {
        TrainPlan {
            max_epochs: 100,
            batch_size: 32,
            lr: 1e-3,
            plateau_factor: 0.5,
            plateau_patience: 5,
            early_stop_patience: 15,
            weight_decay: 0.0,
            grad_clip: Some(1.0),
            max_steps: None,
            val_metric: ValMetric::OneStep,
            seed: 0,
        }
    }
}

impl TrainPlan {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor <= 1.0) {
            return bad("plateau_factor must lie in (0, 1]");
        }
        if self.plateau_patience == 0 || self.early_stop_patience == 0 {
            return bad("patience values must be at least 1");
        }
        if self.weight_decay < 0.0 {
            return bad("weight_decay must be non-negative");
        }
        if matches!(self.grad_clip, Some(c) if !(c > 0.0)) {
            return bad("grad_clip must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean of the epoch's batch losses, taken before each update.
    pub train_mse: f64,
    pub val_mse: Option<f64>,
    /// Learning rate used during the epoch.
    pub lr: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    pub steps: usize,
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

impl TrainLog {
    /// `epoch,train_mse,val_mse,lr`; a missing validation loss is empty.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_mse,val_mse,lr\n");
        for e in &self.epochs {
            let val = e.val_mse.map(|v| v.to_string()).unwrap_or_default();
            writeln!(s, "{},{},{},{}", e.epoch, e.train_mse, val, e.lr).unwrap();
        }
        s
    }

    pub fn best_train_mse(&self) -> f64 {
        self.epochs.iter().map(|e| e.train_mse).fold(f64::INFINITY, f64::min)
    }
}

/// Trajectories used by one training run, all on `grid`.
#[derive(Clone, Debug)]
pub struct TrainData<'a> {
    pub train: Vec<&'a Trajectory>,
    pub val: Vec<&'a Trajectory>,
    pub grid: &'a GridSpec,
    /// Recorded in the checkpoint provenance.
    pub dataset_hash: String,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: TrainLog,
}

fn check_compatible(config: &ModelConfig, norm: &NormStats, data: &TrainData<'_>) -> Result<()> {
    let p = data.train.first().map(|t| t.params.len()).unwrap_or(0);
    let want = norm.n_channels() + p + 1;
    if config.frame_channels() != want || config.state_channels() != norm.n_channels() {
        return Err(Error::Config(format!(
            "model expects {} frame / {} state channels, data provides {want} / {}",
            config.frame_channels(),
            config.state_channels(),
            norm.n_channels()
        )));
    }
    if config.spatial() != data.grid.spatial.as_slice() {
        return Err(Error::Config(format!(
            "model grid {:?} differs from data grid {:?}",
            config.spatial(),
            data.grid.spatial
        )));
    }
    let shapes_ok = data.train.iter().chain(&data.val).all(|t| {
        t.params.len() == p
            && t.n_frames() == data.grid.n_timesteps
            && t.frame_len() == norm.n_channels() * data.grid.n_points()
    });
    if !shapes_ok {
        return Err(Error::Data(
            "training trajectories have mixed shapes or parameter counts".into(),
        ));
    }
    Ok(())
}

/// Mean loss of a batch of `(trajectory, target frame)` windows and its
/// gradient with respect to every weight buffer.
pub fn batch_gradients(model: &Model, src: &WindowSource, batch: &[(usize, usize)]) -> Result<(f64, Vec<Tensor>)> {
    let parts: Vec<(f64, Vec<Tensor>)> = batch
        .par_chunks(CHUNK)
        .map(|chunk| -> Result<(f64, Vec<Tensor>)> {
            let mut g = Graph::new();
            let w: Vec<_> = model.params.tensors().iter().map(|t| g.param(t, true)).collect();
            let mut total = None;
            for &(traj, t) in chunk {
                let s = src.sample(traj, t);
                let c = g.leaf(s.context, false);
                let y = model.config.forward(&mut g, &w, c)?;
                let target = g.leaf(s.target, false);
                let l = g.mse(y, target)?;
                total = Some(match total {
                    None => l,
                    Some(acc) => g.add(acc, l)?,
                });
            }
            let total = total.expect("non-empty chunk");
            g.backward(total)?;
            let loss = g.value(total).data()[0];
            let grads = w
                .iter()
                .zip(model.params.tensors())
                .map(|(&v, t)| g.take_grad(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
                .collect();
            Ok((loss, grads))
        })
        .collect::<Result<_>>()?;
    let mut it = parts.into_iter();
    let (mut loss, mut grads) = it.next().ok_or_else(|| Error::Data("empty batch".into()))?;
    for (l, gs) in it {
        loss += l;
        for (a, b) in grads.iter_mut().zip(&gs) {
            a.add_assign(b);
        }
    }
    let inv = 1.0 / batch.len() as f64;
    for g in &mut grads {
        g.data_mut().iter_mut().for_each(|v| *v *= inv);
    }
    Ok((loss * inv, grads))
}

/// Mean standardized one-step error over every window of `src`.
pub fn one_step_mse(model: &Model, src: &WindowSource) -> Result<f64> {
    let idx = src.index();
    let errs: Vec<f64> = idx
        .par_iter()
        .map(|&(traj, t)| -> Result<f64> {
            let s = src.sample(traj, t);
            let y = model.predict(&s.context)?;
            Ok(y.data()
                .iter()
                .zip(s.target.data())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / y.len() as f64)
        })
        .collect::<Result<_>>()?;
    Ok(errs.iter().sum::<f64>() / errs.len() as f64)
}

/// Mean standardized rollout error over predicted frames of `trajs`;
/// `+inf` if any rollout diverges.
pub fn rollout_mse(ck: &Checkpoint, trajs: &[&Trajectory], grid: &GridSpec) -> Result<f64> {
    let k = ck.model.config.context();
    let errs: Vec<f64> = trajs
        .par_iter()
        .map(|t| -> Result<f64> {
            let r = rollout(ck, t, grid)?;
            if r.diverged {
                return Ok(f64::INFINITY);
            }
            let fl = t.frame_len();
            let n = fl / ck.norm.n_channels();
            let (pred, truth) = (&r.frames.data()[k * fl..], &t.frames.data()[k * fl..]);
            let mut s = 0.0;
            for (i, (a, b)) in pred.iter().zip(truth).enumerate() {
                let sd = ck.norm.std[(i % fl) / n];
                s += ((a - b) / sd).powi(2);
            }
            Ok(s / pred.len() as f64)
        })
        .collect::<Result<_>>()?;
    Ok(errs.iter().sum::<f64>() / errs.len() as f64)
}

/// Epoch budget and stopping behaviour of one optimization run.
struct Schedule {
    epochs: usize,
    adaptive: bool,
    keep_best: bool,
}

fn fit(
    model: &mut Model,
    norm: &NormStats,
    data: &TrainData<'_>,
    plan: &TrainPlan,
    sched: Schedule,
    progress: &mut dyn FnMut(&EpochLog),
) -> Result<TrainLog> {
    plan.validate()?;
    let k = model.config.context();
    let src = WindowSource::new(&data.train, norm, k, data.grid)?;
    let val_src = match (plan.val_metric, data.val.is_empty()) {
        (ValMetric::OneStep, false) => Some(WindowSource::new(&data.val, norm, k, data.grid)?),
        _ => None,
    };
    let mut order = src.index();
    let mut shuffle = rng::stream(plan.seed, "shuffle");
    let mut opt = Adam::new(&model.params, plan.lr, plan.weight_decay);
    let mut plateau = Plateau::new(plan.plateau_factor, plan.plateau_patience);
    let mut log = TrainLog::default();
    let mut best: Option<(f64, crate::model::Params)> = None;
    let mut since_best = 0;
    for epoch in 1..=sched.epochs {
        if plan.max_steps.is_some_and(|m| log.steps >= m) {
            break;
        }
        order.shuffle(&mut shuffle);
        let lr = opt.lr;
        let (mut loss_sum, mut n_batches) = (0.0, 0usize);
        for batch in order.chunks(plan.batch_size) {
            if plan.max_steps.is_some_and(|m| log.steps >= m) {
                break;
            }
            let (loss, mut grads) = batch_gradients(model, &src, batch)?;
            if !loss.is_finite() {
                return Err(Error::Diverged(format!("non-finite training loss in epoch {epoch}")));
            }
            if let Some(c) = plan.grad_clip {
                clip_grad_norm(&mut grads, c);
            }
            opt.update(&mut model.params, &grads)?;
            loss_sum += loss;
            n_batches += 1;
            log.steps += 1;
        }
        let val_mse = if data.val.is_empty() {
            None
        } else if let Some(vs) = &val_src {
            Some(one_step_mse(model, vs)?)
        } else {
            let ck = Checkpoint {
                model: model.clone(),
                norm: norm.clone(),
                provenance: Provenance::default(),
            };
            Some(rollout_mse(&ck, &data.val, data.grid)?)
        };
        let entry = EpochLog {
            epoch,
            train_mse: loss_sum / n_batches.max(1) as f64,
            val_mse,
            lr,
        };
        progress(&entry);
        log.epochs.push(entry);
        if let Some(v) = val_mse {
            let v = if v.is_nan() { f64::INFINITY } else { v };
            if best.as_ref().is_none_or(|(b, _)| v < *b) {
                best = Some((v, model.params.clone()));
                log.best_epoch = Some(epoch);
                since_best = 0;
            } else {
                since_best += 1;
            }
            if sched.adaptive {
                plateau.observe(v, &mut opt.lr);
                if since_best >= plan.early_stop_patience {
                    log.stopped_early = true;
                    break;
                }
            }
        }
    }
    if sched.keep_best {
        if let Some((_, p)) = best {
            model.params = p;
        }
    }
    Ok(log)
}

/// Trains a freshly initialized model (seeded by `plan.seed`) with
/// normalization fitted on the training split, returning the weights of
/// the epoch with the best validation loss.
pub fn pretrain(
    config: ModelConfig,
    data: &TrainData<'_>,
    plan: &TrainPlan,
    progress: &mut dyn FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    let norm = compute_norm_stats(data.train.iter().copied())?;
    let mut model = Model::init(config, plan.seed)?;
    check_compatible(&model.config, &norm, data)?;
    let sched = Schedule {
        epochs: plan.max_epochs,
        adaptive: true,
        keep_best: true,
    };
    let log = fit(&mut model, &norm, data, plan, sched, progress)?;
    let provenance = Provenance {
        dataset_hash: data.dataset_hash.clone(),
        seed: plan.seed,
        epochs: log.epochs.len(),
        lineage: None,
    };
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            model,
            norm,
            provenance,
        },
        log,
    })
}

/// Continues training `base` for exactly `epochs` epochs at a constant
/// learning rate. The parameter normalization is widened to cover the new
/// data; the result's lineage is the hash of `base`.
pub fn finetune(
    base: &Checkpoint,
    data: &TrainData<'_>,
    plan: &TrainPlan,
    epochs: usize,
    progress: &mut dyn FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    let mut norm = base.norm.clone();
    norm.extend_params(data.train.iter().chain(&data.val).map(|t| t.params.as_slice()));
    let mut model = base.model.clone();
    check_compatible(&model.config, &norm, data)?;
    let sched = Schedule {
        epochs,
        adaptive: false,
        keep_best: false,
    };
    let log = fit(&mut model, &norm, data, plan, sched, progress)?;
    let provenance = Provenance {
        dataset_hash: data.dataset_hash.clone(),
        seed: plan.seed,
        epochs: log.epochs.len(),
        lineage: Some(base.hash()?),
    };
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            model,
            norm,
            provenance,
        },
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck;
    use crate::datagen::{generate_dataset, DatasetSpec, IcFamily, System};
    use crate::dataset::Dataset;
    use crate::model::ViTConfig;

    fn burgers(n: usize) -> Dataset {
        generate_dataset(&DatasetSpec {
            system: System::Burgers,
            params: vec![vec![0.01], vec![0.05]],
            n_traj: n,
            grid: GridSpec::new_1d(32, 12, 0.5),
            seed: 2,
            ic: IcFamily::default(),
            substeps: None,
        })
        .unwrap()
    }

    fn tiny_vit(k: usize) -> ModelConfig {
        let mut c = ViTConfig::new(&[32], 3, 1, k).with_size(1, 16);
        c.patch = vec![8, 1];
        c.heads = 2;
        c.mlp_ratio = 2;
        ModelConfig::Vit(c)
    }

    fn data(ds: &Dataset) -> TrainData<'_> {
        let n = ds.trajectories.len();
        TrainData {
            train: ds.trajectories[..n - 1].iter().collect(),
            val: ds.trajectories[n - 1..].iter().collect(),
            grid: &ds.meta.grid,
            dataset_hash: "h".into(),
        }
    }

    #[test]
    fn mse_values_and_gradient() {
        let mut g = Graph::new();
        let p = g.leaf(Tensor::full(&[3, 2], 5.0), false);
        let t = g.leaf(Tensor::full(&[3, 2], 3.0), false);
        let l = g.mse(p, t).unwrap();
        assert_eq!(g.value(l).data(), &[4.0]);
        let l0 = g.mse(p, p).unwrap();
        assert_eq!(g.value(l0).data(), &[0.0]);
        let pred = Tensor::from_fn(&[7], |i| (i as f64).sin());
        let target = Tensor::from_fn(&[7], |i| (i as f64).cos());
        let res = gradcheck::check(std::slice::from_ref(&pred), 1e-6, |g, v| {
            let t = g.leaf(target.clone(), false);
            g.mse(v[0], t)
        })
        .unwrap();
        assert!(res.max_rel_error() < 1e-8);
        let mut g = Graph::new();
        let pv = g.leaf(pred.clone(), true);
        let tv = g.leaf(target.clone(), false);
        let l = g.mse(pv, tv).unwrap();
        g.backward(l).unwrap();
        for i in 0..7 {
            let want = 2.0 * (pred.data()[i] - target.data()[i]) / 7.0;
            assert!((g.grad(pv).unwrap().data()[i] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn training_reduces_loss_and_is_reproducible() {
        let ds = burgers(2);
        let d = data(&ds);
        let plan = TrainPlan {
            max_epochs: 25,
            batch_size: 8,
            lr: 3e-3,
            seed: 4,
            ..TrainPlan::default()
        };
        let a = pretrain(tiny_vit(4), &d, &plan, &mut |_| {}).unwrap();
        let first = a.log.epochs[0].train_mse;
        assert!(a.log.best_train_mse() < first, "{:?}", a.log.epochs);
        let b = pretrain(tiny_vit(4), &d, &plan, &mut |_| {}).unwrap();
        assert_eq!(a.log.to_csv(), b.log.to_csv());
        assert_eq!(a.checkpoint, b.checkpoint);
        assert!(a.log.to_csv().starts_with("epoch,train_mse,val_mse,lr\n1,"));
        assert_eq!(a.checkpoint.provenance.epochs, a.log.epochs.len());
    }

    #[test]
    fn max_steps_and_one_step_validation() {
        let ds = burgers(2);
        let plan = TrainPlan {
            max_epochs: 50,
            batch_size: 4,
            max_steps: Some(7),
            val_metric: ValMetric::OneStep,
            ..TrainPlan::default()
        };
        let out = pretrain(tiny_vit(4), &data(&ds), &plan, &mut |_| {}).unwrap();
        assert_eq!(out.log.steps, 7);
        assert!(out.log.epochs.iter().all(|e| e.val_mse.is_some()));
    }

    #[test]
    fn finetune_with_zero_epochs_keeps_weights() {
        let ds = burgers(2);
        let d = data(&ds);
        let plan = TrainPlan {
            max_epochs: 2,
            batch_size: 8,
            ..TrainPlan::default()
        };
        let base = pretrain(tiny_vit(4), &d, &plan, &mut |_| {}).unwrap().checkpoint;
        let same = finetune(&base, &d, &plan, 0, &mut |_| {}).unwrap().checkpoint;
        assert_eq!(same.model.params, base.model.params);
        assert_eq!(same.provenance.lineage, Some(base.hash().unwrap()));
        let more = finetune(&base, &d, &plan, 2, &mut |_| {}).unwrap();
        assert_eq!(more.log.epochs.len(), 2);
        assert_ne!(more.checkpoint.model.params, base.model.params);
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let ds = burgers(2);
        let mut c = ViTConfig::new(&[32], 4, 1, 4).with_size(1, 16);
        c.patch = vec![8, 1];
        let err = pretrain(ModelConfig::Vit(c), &data(&ds), &TrainPlan::default(), &mut |_| {});
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn batch_gradient_is_mean_of_samples() {
        let ds = burgers(2);
        let d = data(&ds);
        let norm = compute_norm_stats(d.train.iter().copied()).unwrap();
        let mut model = Model::init(tiny_vit(4), 1).unwrap();
        for t in model.params.tensors_mut() {
            t.data_mut()
                .iter_mut()
                .enumerate()
                .for_each(|(i, v)| *v += 0.01 * (i as f64).cos());
        }
        let src = WindowSource::new(&d.train, &norm, 4, d.grid).unwrap();
        let batch: Vec<(usize, usize)> = src.index().into_iter().take(6).collect();
        let (l, g) = batch_gradients(&model, &src, &batch).unwrap();
        let singles: Vec<_> = batch
            .iter()
            .map(|b| batch_gradients(&model, &src, &[*b]).unwrap())
            .collect();
        let lm = singles.iter().map(|s| s.0).sum::<f64>() / 6.0;
        assert!((l - lm).abs() < 1e-12);
        for (i, gi) in g.iter().enumerate() {
            for j in 0..gi.len() {
                let m = singles.iter().map(|s| s.1[i].data()[j]).sum::<f64>() / 6.0;
                assert!((gi.data()[j] - m).abs() < 1e-12);
            }
        }
    }
}
