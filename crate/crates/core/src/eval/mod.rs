//! Autoregressive rollout and id/ood error aggregation.

mod report;
pub mod study;

pub use report::{ParamSummary, RolloutReport, TrajectoryResult, REPORT_SCHEMA_VERSION};

use rayon::prelude::*;

use crate::datagen::{fourier_shift, GridSpec};
use crate::dataset::{assemble_context, same_params, Trajectory};
use crate::error::{Error, Result};
use crate::model::Checkpoint;
use crate::tensor::Tensor;

/// Anything that maps the last `k` physical frames to the next one.
pub trait Predictor: Sync {
    fn context_len(&self) -> usize;

    /// Next frame (`C * prod(S)` values, physical units). `history` holds
    /// the `k` most recent frames, the oldest being frame index `first`.
    fn predict(&self, history: &[&[f64]], params: &[f64], first: usize, grid: &GridSpec) -> Result<Vec<f64>>;
}

impl Predictor for Checkpoint {
    fn context_len(&self) -> usize {
        self.model.config.context()
    }

    fn predict(&self, history: &[&[f64]], params: &[f64], first: usize, grid: &GridSpec) -> Result<Vec<f64>> {
        let norm: Vec<Vec<f64>> = history
            .iter()
            .map(|f| {
                let mut f = f.to_vec();
                self.norm.normalize_frame(&mut f);
                f
            })
            .collect();
        let refs: Vec<&[f64]> = norm.iter().map(Vec::as_slice).collect();
        let times: Vec<f64> = (0..history.len())
            .map(|i| grid.time(first + i) / grid.t_final)
            .collect();
        let ctx = assemble_context(
            &refs,
            &self.norm.normalize_params(params),
            &times,
            self.norm.n_channels(),
            &grid.spatial,
        );
        let mut y = self.model.predict(&ctx)?.into_data();
        self.norm.denormalize_frame(&mut y);
        Ok(y)
    }
}

/// Repeats the last observed frame.
#[derive(Clone, Copy, Debug)]
pub struct Persistence {
    pub context: usize,
}

impl Predictor for Persistence {
    fn context_len(&self) -> usize {
        self.context
    }

    fn predict(&self, history: &[&[f64]], _: &[f64], _: usize, _: &GridSpec) -> Result<Vec<f64>> {
        Ok(history[history.len() - 1].to_vec())
    }
}

/// Exact one-step solution operator of 1D advection: shifts the last
/// frame by `a * dt`.
#[derive(Clone, Copy, Debug)]
pub struct AdvectionOracle {
    pub context: usize,
}

impl Predictor for AdvectionOracle {
    fn context_len(&self) -> usize {
        self.context
    }

    fn predict(&self, history: &[&[f64]], params: &[f64], _: usize, grid: &GridSpec) -> Result<Vec<f64>> {
        Ok(fourier_shift(history[history.len() - 1], params[0] * grid.dt()))
    }
}

/// Looks the answer up in the ground-truth trajectories.
#[derive(Clone, Copy, Debug)]
pub struct GroundTruth<'a> {
    pub context: usize,
    pub trajectories: &'a [Trajectory],
}

impl Predictor for GroundTruth<'_> {
    fn context_len(&self) -> usize {
        self.context
    }

    fn predict(&self, history: &[&[f64]], params: &[f64], first: usize, _: &GridSpec) -> Result<Vec<f64>> {
        let t = self
            .trajectories
            .iter()
            .find(|t| same_params(&t.params, params) && t.frame(first) == history[0])
            .ok_or_else(|| Error::Data("no ground-truth trajectory matches the history".into()))?;
        Ok(t.frame(first + history.len()).to_vec())
    }
}

/// One autoregressive rollout.
#[derive(Clone, Debug)]
pub struct Rollout {
    /// `[T, C, S...]`; the first `k` frames are the ground-truth seed.
    /// Frames after a divergence are NaN.
    pub frames: Tensor,
    /// MSE of each predicted frame `k..T` (physical units).
    pub frame_mse: Vec<f64>,
    pub diverged: bool,
}

impl Rollout {
    /// Mean over predicted frames; `+inf` when the rollout diverged.
    pub fn mse(&self) -> f64 {
        if self.diverged {
            f64::INFINITY
        } else {
            self.frame_mse.iter().sum::<f64>() / self.frame_mse.len() as f64
        }
    }
}

/// Seeds the context with the first `k` true frames and predicts the rest
/// of the trajectory, feeding every prediction back in.
pub fn rollout(model: &dyn Predictor, traj: &Trajectory, grid: &GridSpec) -> Result<Rollout> {
    let k = model.context_len();
    let n_frames = traj.n_frames();
    if n_frames <= k {
        return Err(Error::Data(format!(
            "rollout needs more than {k} frames, trajectory has {n_frames}"
        )));
    }
    let fl = traj.frame_len();
    let mut out = traj.frames.data()[..k * fl].to_vec();
    out.reserve((n_frames - k) * fl);
    let mut frame_mse = Vec::with_capacity(n_frames - k);
    let mut diverged = false;
    for t in k..n_frames {
        let history: Vec<&[f64]> = (t - k..t).map(|j| &out[j * fl..(j + 1) * fl]).collect();
        let next = model.predict(&history, &traj.params, t - k, grid)?;
        if next.len() != fl {
            return Err(Error::Data(format!(
                "prediction has {} values, frame has {fl}",
                next.len()
            )));
        }
        if next.iter().any(|v| !v.is_finite()) {
            diverged = true;
            out.resize(n_frames * fl, f64::NAN);
            break;
        }
        let truth = traj.frame(t);
        frame_mse.push(next.iter().zip(truth).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / fl as f64);
        out.extend(next);
    }
    Ok(Rollout {
        frames: Tensor::new(traj.frames.shape().to_vec(), out)?,
        frame_mse,
        diverged,
    })
}

/// Test trajectory tagged with its dataset index and domain.
#[derive(Clone, Copy, Debug)]
pub struct TestCase<'a> {
    pub id: usize,
    pub trajectory: &'a Trajectory,
    pub ood: bool,
}

/// Rolls out every test trajectory (in parallel) and aggregates the MSE
/// over predicted frames `k..T` against a persistence baseline.
pub fn evaluate(
    model: &dyn Predictor,
    cases: &[TestCase<'_>],
    grid: &GridSpec,
    model_id: &str,
) -> Result<RolloutReport> {
    if cases.is_empty() {
        return Err(Error::Data("evaluation needs at least one test trajectory".into()));
    }
    let k = model.context_len();
    let persistence = Persistence { context: k };
    let results: Vec<TrajectoryResult> = cases
        .par_iter()
        .map(|c| -> Result<TrajectoryResult> {
            let r = rollout(model, c.trajectory, grid)?;
            let p = rollout(&persistence, c.trajectory, grid)?;
            Ok(TrajectoryResult {
                id: c.id,
                params: c.trajectory.params.clone(),
                ood: c.ood,
                mse: r.mse(),
                persistence_mse: p.mse(),
                diverged: r.diverged,
                frame_mse: r.frame_mse,
            })
        })
        .collect::<Result<_>>()?;
    Ok(RolloutReport::from_results(model_id, k, grid.n_timesteps - k, results))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_dataset, DatasetSpec, IcFamily, System};
    use crate::dataset::Dataset;

    fn advection(params: &[f64], n: usize) -> Dataset {
        generate_dataset(&DatasetSpec {
            system: System::Advection,
            params: params.iter().map(|&a| vec![a]).collect(),
            n_traj: n,
            grid: GridSpec::new_1d(64, 21, 1.0),
            seed: 3,
            ic: IcFamily::default(),
            substeps: None,
        })
        .unwrap()
    }

    fn cases<'a>(ds: &'a Dataset, ood: &[f64]) -> Vec<TestCase<'a>> {
        ds.trajectories
            .iter()
            .enumerate()
            .map(|(id, t)| TestCase {
                id,
                trajectory: t,
                ood: ood.contains(&t.params[0]),
            })
            .collect()
    }

    #[test]
    fn oracle_rollout_is_exact() {
        let ds = advection(&[0.1, 0.4, 2.0, 0.2, 1.0], 2);
        let rep = evaluate(
            &AdvectionOracle { context: 8 },
            &cases(&ds, &[0.2, 1.0]),
            &ds.meta.grid,
            "oracle",
        )
        .unwrap();
        for r in &rep.trajectories {
            assert!(r.mse < 1e-10, "{}", r.mse);
            assert!(!r.diverged);
        }
        assert!(rep.id_mean.unwrap() < 1e-10 && rep.ood_mean.unwrap() < 1e-10);
    }

    #[test]
    fn persistence_is_exact_for_static_solutions() {
        let grid = GridSpec::new_1d(64, 21, 1.0);
        let u0: Vec<f64> = (0..64).map(|i| (i as f64 * 0.3).sin()).collect();
        let traj = Trajectory {
            params: vec![0.0],
            seed: 0,
            frames: crate::datagen::solve_advection(&u0, 0.0, &grid).unwrap(),
        };
        let r = rollout(&Persistence { context: 4 }, &traj, &grid).unwrap();
        assert_eq!(r.mse(), 0.0);
    }

    #[test]
    fn passthrough_scores_zero_and_ood_absent() {
        let ds = advection(&[0.1, 0.4], 3);
        let gt = GroundTruth {
            context: 8,
            trajectories: &ds.trajectories,
        };
        let rep = evaluate(&gt, &cases(&ds, &[]), &ds.meta.grid, "truth").unwrap();
        assert!(rep.trajectories.iter().all(|r| r.mse == 0.0));
        assert_eq!(rep.ood_mean, None);
        assert_eq!(rep.id_mean, Some(0.0));
        assert_eq!(rep.horizon, 13);
    }

    #[test]
    fn persistence_aggregates_by_hand() {
        let ds = advection(&[0.1, 0.4, 1.0], 3);
        let rep = evaluate(&Persistence { context: 8 }, &cases(&ds, &[1.0]), &ds.meta.grid, "p").unwrap();
        let id: Vec<f64> = rep.trajectories.iter().filter(|r| !r.ood).map(|r| r.mse).collect();
        let ood: Vec<f64> = rep.trajectories.iter().filter(|r| r.ood).map(|r| r.mse).collect();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!((rep.id_mean.unwrap() - mean(&id)).abs() < 1e-12);
        assert!((rep.ood_mean.unwrap() - mean(&ood)).abs() < 1e-12);
        assert_eq!(rep.per_param.len(), 3);
        assert!(rep.trajectories.iter().all(|r| r.mse == r.persistence_mse));
    }

    struct Exploding;

    impl Predictor for Exploding {
        fn context_len(&self) -> usize {
            2
        }
        fn predict(&self, h: &[&[f64]], _: &[f64], first: usize, _: &GridSpec) -> Result<Vec<f64>> {
            let v = if first >= 3 { f64::NAN } else { 1.0 };
            Ok(vec![v; h[0].len()])
        }
    }

    #[test]
    fn divergence_is_flagged_and_excluded() {
        let ds = advection(&[0.4], 2);
        let r = rollout(&Exploding, &ds.trajectories[0], &ds.meta.grid).unwrap();
        assert!(r.diverged);
        assert_eq!(r.frame_mse.len(), 3);
        assert_eq!(r.mse(), f64::INFINITY);
        assert!(r.frames.data()[20 * 64..].iter().all(|v| v.is_nan()));
        let rep = evaluate(&Exploding, &cases(&ds, &[]), &ds.meta.grid, "x").unwrap();
        assert_eq!(rep.n_diverged, 2);
        assert_eq!(rep.id_mean, None);
    }

    #[test]
    fn rollout_is_deterministic() {
        let ds = advection(&[0.4], 1);
        let a = rollout(&AdvectionOracle { context: 8 }, &ds.trajectories[0], &ds.meta.grid).unwrap();
        let b = rollout(&AdvectionOracle { context: 8 }, &ds.trajectories[0], &ds.meta.grid).unwrap();
        assert_eq!(a.frames, b.frames);
    }
}
