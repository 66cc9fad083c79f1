use serde::{Deserialize, Serialize};

use super::Trajectory;
use crate::error::{Error, Result};

/// Standardization of physical channels plus an affine map of each PDE
/// parameter onto `[-1, 1]`. Fitted on training data only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub param_min: Vec<f64>,
    pub param_max: Vec<f64>,
}

impl NormStats {
    pub fn n_channels(&self) -> usize {
        self.mean.len()
    }

    /// Parameter `p` mapped so that `min -> -1` and `max -> +1`; a
    /// degenerate range maps everything to the midpoint 0.
    pub fn normalize_params(&self, p: &[f64]) -> Vec<f64> {
        p.iter()
            .zip(self.param_min.iter().zip(&self.param_max))
            .map(
                |(&v, (&lo, &hi))| {
                    if hi > lo {
                        2.0 * (v - lo) / (hi - lo) - 1.0
                    } else {
                        0.0
                    }
                },
            )
            .collect()
    }

    /// Standardizes a `[C, N]` frame in place.
    pub fn normalize_frame(&self, frame: &mut [f64]) {
        let n = frame.len() / self.mean.len();
        for (c, chunk) in frame.chunks_exact_mut(n).enumerate() {
            let (m, s) = (self.mean[c], self.std[c]);
            chunk.iter_mut().for_each(|v| *v = (*v - m) / s);
        }
    }

    pub fn denormalize_frame(&self, frame: &mut [f64]) {
        let n = frame.len() / self.mean.len();
        for (c, chunk) in frame.chunks_exact_mut(n).enumerate() {
            let (m, s) = (self.mean[c], self.std[c]);
            chunk.iter_mut().for_each(|v| *v = *v * s + m);
        }
    }

    /// Widens the parameter range to also cover `params` (refit over the
    /// union).
    pub fn extend_params<'a>(&mut self, params: impl IntoIterator<Item = &'a [f64]>) {
        for p in params {
            for (i, &v) in p.iter().enumerate() {
                self.param_min[i] = self.param_min[i].min(v);
                self.param_max[i] = self.param_max[i].max(v);
            }
        }
    }
}

/// Per-channel mean and population standard deviation over every frame of
/// `train`, accumulated per trajectory and merged (Chan et al. pairwise
/// update), and the min/max of each parameter.
pub fn compute_norm_stats<'a, I>(train: I) -> Result<NormStats>
where
    I: IntoIterator<Item = &'a Trajectory>,
{
    let mut count = 0.0f64;
    let mut mean: Vec<f64> = Vec::new();
    let mut m2: Vec<f64> = Vec::new();
    let mut pmin: Vec<f64> = Vec::new();
    let mut pmax: Vec<f64> = Vec::new();
    for t in train {
        let c = t.n_channels();
        if mean.is_empty() {
            mean = vec![0.0; c];
            m2 = vec![0.0; c];
            pmin = t.params.clone();
            pmax = t.params.clone();
        }
        if c != mean.len() || t.params.len() != pmin.len() {
            return Err(Error::Data(
                "trajectories disagree on channel or parameter count".into(),
            ));
        }
        let n_per = t.frames.len() / t.n_frames() / c;
        let nb = (t.n_frames() * n_per) as f64;
        for ch in 0..c {
            let vals = (0..t.n_frames()).flat_map(|f| {
                let fr = t.frame(f);
                fr[ch * n_per..(ch + 1) * n_per].iter().copied()
            });
            let (mut s, mut k) = (0.0, 0.0);
            for v in vals.clone() {
                s += v;
                k += 1.0;
            }
            let mb = s / k;
            let m2b: f64 = vals.map(|v| (v - mb) * (v - mb)).sum();
            let delta = mb - mean[ch];
            let tot = count + nb;
            mean[ch] += delta * nb / tot;
            m2[ch] += m2b + delta * delta * count * nb / tot;
        }
        count += nb;
        for (i, &v) in t.params.iter().enumerate() {
            pmin[i] = pmin[i].min(v);
            pmax[i] = pmax[i].max(v);
        }
    }
    if count == 0.0 {
        return Err(Error::Data(
            "cannot fit normalization on an empty training split".into(),
        ));
    }
    let std: Vec<f64> = m2.iter().map(|m| (m / count).sqrt()).collect();
    if let Some(ch) = std.iter().position(|&s| !(s > 1e-300)) {
        return Err(Error::Data(format!(
            "physical channel {ch} has zero variance over the training split"
        )));
    }
    Ok(NormStats {
        mean,
        std,
        param_min: pmin,
        param_max: pmax,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn traj(param: f64, vals: Vec<f64>) -> Trajectory {
        let n = vals.len() / 2;
        Trajectory {
            params: vec![param],
            seed: 0,
            frames: Tensor::new(vec![2, 1, n], vals).unwrap(),
        }
    }

    #[test]
    fn standardizes_training_data() {
        let ts = vec![
            traj(0.1, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]),
            traj(2.0, vec![-1.0, 0.5, 7.0, 2.0, 2.5, 9.0]),
        ];
        let st = compute_norm_stats(&ts).unwrap();
        let mut all: Vec<f64> = Vec::new();
        for t in &ts {
            let mut d = t.frames.data().to_vec();
            st.normalize_frame(&mut d);
            all.extend(d);
        }
        let m = all.iter().sum::<f64>() / all.len() as f64;
        let v = all.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / all.len() as f64;
        assert!(m.abs() < 1e-10 && (v.sqrt() - 1.0).abs() < 1e-10);
        assert_eq!(st.normalize_params(&[0.1]), vec![-1.0]);
        assert_eq!(st.normalize_params(&[2.0]), vec![1.0]);
    }

    #[test]
    fn single_parameter_maps_to_midpoint() {
        let st = compute_norm_stats(&[traj(0.4, vec![0.0, 1.0, 2.0, 3.0])]).unwrap();
        assert_eq!(st.normalize_params(&[0.4]), vec![0.0]);
    }

    #[test]
    fn zero_variance_is_rejected() {
        assert!(compute_norm_stats(&[traj(0.4, vec![1.0; 4])]).is_err());
        assert!(compute_norm_stats(std::iter::empty::<&Trajectory>()).is_err());
    }

    proptest::proptest! {
        #[test]
        fn normalization_inverts(vals in proptest::collection::vec(-5.0f64..5.0, 4..40)) {
            let n = vals.len() / 2 * 2;
            let t = traj(0.3, vals[..n].to_vec());
            let stats = compute_norm_stats([&t]).unwrap();
            let mut frame = t.frame(0).to_vec();
            stats.normalize_frame(&mut frame);
            stats.denormalize_frame(&mut frame);
            for (a, b) in frame.iter().zip(t.frame(0)) {
                proptest::prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
