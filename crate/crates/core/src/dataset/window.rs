use super::{NormStats, Trajectory};
use crate::datagen::GridSpec;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Model input/target pair cut from one trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowSample {
    /// `[k, C + P + 1, S...]`: standardized state channels, normalized
    /// parameters broadcast over space, then normalized time `t / t_final`.
    pub context: Tensor,
    /// `[C, S...]`, standardized frame right after the context.
    pub target: Tensor,
    pub trajectory: usize,
    /// Frame index of the target.
    pub t: usize,
}

/// Stacks `k` standardized frames (each `[C, N]` flat) into a context
/// tensor `[k, C + P + 1, S...]`.
pub fn assemble_context(
    frames: &[&[f64]],
    norm_params: &[f64],
    norm_times: &[f64],
    channels: usize,
    spatial: &[usize],
) -> Tensor {
    let n: usize = spatial.iter().product();
    let k = frames.len();
    let width = channels + norm_params.len() + 1;
    let mut data = Vec::with_capacity(k * width * n);
    for (f, &t) in frames.iter().zip(norm_times) {
        data.extend_from_slice(&f[..channels * n]);
        for &p in norm_params {
            data.extend(std::iter::repeat_n(p, n));
        }
        data.extend(std::iter::repeat_n(t, n));
    }
    let mut shape = vec![k, width];
    shape.extend_from_slice(spatial);
    Tensor::new(shape, data).expect("context shape")
}

/// Standardized copies of a set of trajectories, ready for windowing.
#[derive(Clone, Debug)]
pub struct WindowSource {
    frames: Vec<Vec<f64>>,
    params: Vec<Vec<f64>>,
    n_frames: usize,
    frame_len: usize,
    channels: usize,
    spatial: Vec<usize>,
    k: usize,
    t_final: f64,
    dt: f64,
}

impl WindowSource {
    pub fn new(trajs: &[&Trajectory], stats: &NormStats, k: usize, grid: &GridSpec) -> Result<Self> {
        let n_frames = grid.n_timesteps;
        if n_frames <= k {
            return Err(Error::Data(format!(
                "context length {k} needs trajectories longer than {k} frames, got {n_frames}"
            )));
        }
        let channels = stats.n_channels();
        let frame_len = channels * grid.n_points();
        let mut frames = Vec::with_capacity(trajs.len());
        let mut params = Vec::with_capacity(trajs.len());
        for t in trajs {
            if t.n_frames() != n_frames || t.frame_len() != frame_len {
                return Err(Error::Data(format!(
                    "trajectory shape {:?} does not match the grid",
                    t.frames.shape()
                )));
            }
            let mut d = t.frames.data().to_vec();
            for f in d.chunks_exact_mut(frame_len) {
                stats.normalize_frame(f);
            }
            frames.push(d);
            params.push(stats.normalize_params(&t.params));
        }
        Ok(WindowSource {
            frames,
            params,
            n_frames,
            frame_len,
            channels,
            spatial: grid.spatial.clone(),
            k,
            t_final: grid.t_final,
            dt: grid.dt(),
        })
    }

    pub fn n_trajectories(&self) -> usize {
        self.frames.len()
    }

    pub fn windows_per_trajectory(&self) -> usize {
        self.n_frames - self.k
    }

    /// Every `(trajectory, target frame)` pair in order.
    pub fn index(&self) -> Vec<(usize, usize)> {
        (0..self.frames.len())
            .flat_map(|i| (self.k..self.n_frames).map(move |t| (i, t)))
            .collect()
    }

    /// Window whose target is frame `t` of trajectory `traj`.
    pub fn sample(&self, traj: usize, t: usize) -> WindowSample {
        let d = &self.frames[traj];
        let frames: Vec<&[f64]> = (t - self.k..t)
            .map(|j| &d[j * self.frame_len..(j + 1) * self.frame_len])
            .collect();
        let times: Vec<f64> = (t - self.k..t).map(|j| j as f64 * self.dt / self.t_final).collect();
        let context = assemble_context(&frames, &self.params[traj], &times, self.channels, &self.spatial);
        let mut shape = vec![self.channels];
        shape.extend_from_slice(&self.spatial);
        let target =
            Tensor::new(shape, d[t * self.frame_len..(t + 1) * self.frame_len].to_vec()).expect("target shape");
        WindowSample {
            context,
            target,
            trajectory: traj,
            t,
        }
    }
}

/// All `T - k` windows of one trajectory, standardized with `stats`.
pub fn windows(
    traj: &Trajectory,
    k: usize,
    stats: &NormStats,
    grid: &GridSpec,
) -> Result<impl Iterator<Item = WindowSample>> {
    let src = WindowSource::new(&[traj], stats, k, grid)?;
    Ok((k..grid.n_timesteps).map(move |t| src.sample(0, t)))
}
