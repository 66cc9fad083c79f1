//! Central finite-difference gradient checking.

use super::{Graph, Var};
use crate::error::Result;
use crate::tensor::Tensor;

/// Outcome of comparing tape gradients against finite differences.
#[derive(Clone, Debug)]
pub struct GradCheck {
    /// Per input: `||analytic - numeric|| / max(||analytic||, ||numeric||)`.
    pub rel_errors: Vec<f64>,
}

impl GradCheck {
    pub fn max_rel_error(&self) -> f64 {
        self.rel_errors.iter().copied().fold(0.0, f64::max)
    }
}

/// Builds the scalar function `build(inputs)` once on a tape for analytic
/// gradients and `2 * n` more times for central differences with step `h`.
pub fn check<F>(inputs: &[Tensor], h: f64, build: F) -> Result<GradCheck>
where
    F: Fn(&mut Graph<'_>, &[Var]) -> Result<Var>,
{
    let analytic = {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.param(t, true)).collect();
        let loss = build(&mut g, &vars)?;
        g.backward(loss)?;
        vars.iter()
            .zip(inputs)
            .map(|(&v, t)| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect::<Vec<_>>()
    };
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|t| g.param(t, false)).collect();
        let loss = build(&mut g, &vars)?;
        Ok(g.value(loss).data()[0])
    };
    let mut work = inputs.to_vec();
    let mut rel_errors = Vec::with_capacity(inputs.len());
    for (i, an) in analytic.iter().enumerate() {
        let mut num = vec![0.0; an.len()];
        for (j, slot) in num.iter_mut().enumerate() {
            let x0 = work[i].data()[j];
            work[i].data_mut()[j] = x0 + h;
            let fp = eval(&work)?;
            work[i].data_mut()[j] = x0 - h;
            let fm = eval(&work)?;
            work[i].data_mut()[j] = x0;
            *slot = (fp - fm) / (2.0 * h);
        }
        let diff: f64 = an
            .data()
            .iter()
            .zip(&num)
            .map(|(a, n)| (a - n).powi(2))
            .sum::<f64>()
            .sqrt();
        let na = an.data().iter().map(|a| a * a).sum::<f64>().sqrt();
        let nn = num.iter().map(|a| a * a).sum::<f64>().sqrt();
        let scale = na.max(nn);
        rel_errors.push(if scale < 1e-300 { diff } else { diff / scale });
    }
    Ok(GradCheck { rel_errors })
}
