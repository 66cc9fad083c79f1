use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Ordered, named weight buffers. The order is part of the checkpoint
/// format and of every forward function's argument list.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Params {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl Params {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        self.names.push(name.into());
        self.tensors.push(t);
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(move |i| &mut self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Total number of scalars.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Name of the first buffer holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.iter().find(|(_, t)| !t.is_finite()).map(|(n, _)| n)
    }

    /// Checks that names and shapes agree with `layout`.
    pub fn check_layout(&self, layout: &[(String, Vec<usize>)]) -> Result<()> {
        if layout.len() != self.len() {
            return Err(Error::Config(format!(
                "expected {} weight buffers, found {}",
                layout.len(),
                self.len()
            )));
        }
        for ((name, shape), (n, t)) in layout.iter().zip(self.iter()) {
            if name != n || shape.as_slice() != t.shape() {
                return Err(Error::Config(format!(
                    "weight buffer {n} {:?} does not match expected {name} {shape:?}",
                    t.shape()
                )));
            }
        }
        Ok(())
    }
}

/// Normal(0, std) samples redrawn until they fall within two standard
/// deviations.
pub(crate) fn trunc_normal(rng: &mut Rng, shape: &[usize], std: f64) -> Tensor {
    Tensor::from_fn(shape, |_| loop {
        let z: f64 = StandardNormal.sample(rng);
        if z.abs() <= 2.0 {
            break z * std;
        }
    })
}

/// Uniform on `[-bound, bound)`.
pub(crate) fn uniform(rng: &mut Rng, shape: &[usize], bound: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-bound..bound))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn truncated_normal_stays_in_range() {
        let t = trunc_normal(&mut stream(0, "init"), &[4000], 0.02);
        assert!(t.data().iter().all(|v| v.abs() <= 0.04));
        let m = t.sum() / 4000.0;
        let s = (t.data().iter().map(|v| v * v).sum::<f64>() / 4000.0).sqrt();
        assert!(m.abs() < 2e-3);
        // truncation at 2 sigma shrinks the std to about 0.88 sigma
        assert!((s / 0.02 - 0.88).abs() < 0.05);
    }

    #[test]
    fn layout_mismatch_is_reported() {
        let mut p = Params::new();
        p.push("w", Tensor::zeros(&[2, 3]));
        assert!(p.check_layout(&[("w".into(), vec![2, 3])]).is_ok());
        assert!(p.check_layout(&[("w".into(), vec![3, 2])]).is_err());
        assert!(p.check_layout(&[("v".into(), vec![2, 3])]).is_err());
        assert_eq!(p.count(), 6);
    }
}
