//! Trajectory storage, splitting, normalization and context windows.

mod format;
mod norm;
mod split;
mod window;

pub use format::{
    dataset_hash, encode_dataset, read_dataset, write_dataset, DatasetManifest, PdetReader, TrajectoryRecord,
    PDET_MAGIC, PDET_VERSION,
};
pub use norm::{compute_norm_stats, NormStats};
pub use split::{make_splits, Split, SplitAssignment, SplitPlan};
pub use window::{assemble_context, windows, WindowSample, WindowSource};

use crate::datagen::{GridSpec, System};
use crate::tensor::Tensor;

/// One initial condition's solution on the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub params: Vec<f64>,
    pub seed: u64,
    /// `[T, C, S...]`
    pub frames: Tensor,
}

impl Trajectory {
    pub fn n_frames(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn n_channels(&self) -> usize {
        self.frames.shape()[1]
    }

    /// Values of one frame, `C * prod(S)` of them.
    pub fn frame(&self, t: usize) -> &[f64] {
        let n = self.frame_len();
        &self.frames.data()[t * n..(t + 1) * n]
    }

    pub fn frame_len(&self) -> usize {
        self.frames.len() / self.n_frames()
    }
}

/// Dataset-level description shared by all trajectories.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetMeta {
    pub system: System,
    pub grid: GridSpec,
    pub channel_names: Vec<String>,
    pub param_names: Vec<String>,
}

impl DatasetMeta {
    pub fn for_system(system: System, grid: GridSpec) -> Self {
        DatasetMeta {
            system,
            grid,
            channel_names: system.channel_names().iter().map(|s| s.to_string()).collect(),
            param_names: system.param_names().iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn n_channels(&self) -> usize {
        self.channel_names.len()
    }

    pub fn n_params(&self) -> usize {
        self.param_names.len()
    }

    /// `[T, C, S...]` of every trajectory.
    pub fn frame_shape(&self) -> Vec<usize> {
        let mut s = vec![self.grid.n_timesteps, self.n_channels()];
        s.extend_from_slice(&self.grid.spatial);
        s
    }
}

/// Fully loaded dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub trajectories: Vec<Trajectory>,
}

impl Dataset {
    /// Distinct parameter vectors in first-appearance order.
    pub fn param_values(&self) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = Vec::new();
        for t in &self.trajectories {
            if !out.iter().any(|p| same_params(p, &t.params)) {
                out.push(t.params.clone());
            }
        }
        out
    }

    /// Trajectories whose parameters equal `params`.
    pub fn with_params<'a>(&'a self, params: &'a [f64]) -> impl Iterator<Item = &'a Trajectory> + 'a {
        self.trajectories.iter().filter(move |t| same_params(&t.params, params))
    }
}

/// Bitwise equality of parameter vectors.
pub fn same_params(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}
