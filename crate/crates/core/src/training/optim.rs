use crate::error::{Error, Result};
use crate::model::Params;
use crate::tensor::Tensor;

/// Bias-corrected Adam with optional decoupled weight decay.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(params: &Params, lr: f64, weight_decay: f64) -> Self {
        let zeros = || params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// One update. A non-finite gradient aborts before anything changes.
    pub fn update(&mut self, params: &mut Params, grads: &[Tensor]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::Config(format!(
                "{} gradients for {} weight buffers",
                grads.len(),
                params.len()
            )));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::Diverged(format!(
                "non-finite gradient in weight buffer {}",
                params.names()[i]
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps, wd) = (self.beta1, self.beta2, self.lr, self.eps, self.weight_decay);
        for (((w, g), m), v) in params
            .tensors_mut()
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            let (w, g, m, v) = (w.data_mut(), g.data(), m.data_mut(), v.data_mut());
            for i in 0..w.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                if wd != 0.0 {
                    w[i] -= lr * wd * w[i];
                }
                w[i] -= lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Scales `grads` in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .map(|g| g.data().iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

/// Multiplies the learning rate by `factor` after `patience` consecutive
/// epochs without a strict improvement of the monitored loss.
#[derive(Clone, Debug, PartialEq)]
pub struct Plateau {
    pub factor: f64,
    pub patience: usize,
    best: f64,
    bad_epochs: usize,
}

impl Plateau {
    pub fn new(factor: f64, patience: usize) -> Self {
        Plateau {
            factor,
            patience,
            best: f64::INFINITY,
            bad_epochs: 0,
        }
    }

    /// Records one epoch's loss; returns true when `lr` was reduced.
    pub fn observe(&mut self, loss: f64, lr: &mut f64) -> bool {
        if loss < self.best {
            self.best = loss;
            self.bad_epochs = 0;
            return false;
        }
        self.bad_epochs += 1;
        if self.bad_epochs >= self.patience {
            *lr *= self.factor;
            self.bad_epochs = 0;
            return true;
        }
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(vals: &[f64]) -> Params {
        let mut p = Params::new();
        p.push("w", Tensor::new(vec![vals.len()], vals.to_vec()).unwrap());
        p
    }

    #[test]
    fn zero_gradient_leaves_weights() {
        let mut p = params(&[1.0, -2.0]);
        let mut opt = Adam::new(&p, 1e-3, 0.0);
        opt.update(&mut p, &[Tensor::zeros(&[2])]).unwrap();
        assert_eq!(p.tensors()[0].data(), &[1.0, -2.0]);
    }

    #[test]
    fn first_step_matches_hand_computation() {
        let mut p = params(&[0.5, 0.5]);
        let mut opt = Adam::new(&p, 1e-3, 0.0);
        opt.update(&mut p, &[Tensor::ones(&[2])]).unwrap();
        // m_hat = 1 and v_hat = 1, so the step is lr / (1 + eps)
        let expect = 0.5 - 1e-3 / (1.0 + 1e-8);
        assert!(p.tensors()[0].data().iter().all(|&w| (w - expect).abs() < 1e-15));
    }

    #[test]
    fn decoupled_decay_shrinks_weights() {
        let mut p = params(&[2.0]);
        let mut opt = Adam::new(&p, 0.1, 0.5);
        opt.update(&mut p, &[Tensor::zeros(&[1])]).unwrap();
        assert!((p.tensors()[0].data()[0] - 1.9).abs() < 1e-15);
    }

    #[test]
    fn state_is_deterministic_in_the_gradient_sequence() {
        let run = || {
            let mut p = params(&[0.1, 0.2, 0.3]);
            let mut opt = Adam::new(&p, 1e-2, 1e-4);
            for s in 0..7 {
                let g = Tensor::from_fn(&[3], |i| ((s * 3 + i) as f64).sin());
                opt.update(&mut p, &[g]).unwrap();
            }
            (p, opt)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn non_finite_gradient_names_the_buffer() {
        let mut p = params(&[1.0]);
        let mut opt = Adam::new(&p, 1e-3, 0.0);
        let err = opt.update(&mut p, &[Tensor::full(&[1], f64::NAN)]).unwrap_err();
        assert!(err.to_string().contains("w"));
        assert_eq!(opt.step, 0);
    }

    #[test]
    fn two_plateaus_quarter_the_rate() {
        let mut s = Plateau::new(0.5, 2);
        let mut lr = 1e-3;
        let losses = [1.0, 0.9, 0.95, 0.97, 0.99, 0.91];
        let cuts: usize = losses.iter().map(|&l| s.observe(l, &mut lr) as usize).sum();
        assert_eq!(cuts, 2);
        assert_eq!(lr, 1e-3 * 0.25);
    }

    #[test]
    fn clipping_caps_the_norm() {
        let mut g = vec![Tensor::full(&[4], 3.0), Tensor::full(&[1], 4.0)];
        let n = clip_grad_norm(&mut g, 1.0);
        assert!((n - 52f64.sqrt()).abs() < 1e-12);
        let after: f64 = g.iter().flat_map(|t| t.data()).map(|v| v * v).sum::<f64>();
        assert!((after - 1.0).abs() < 1e-12);
    }
}
