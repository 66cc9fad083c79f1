use super::{Graph, Op, Var};
use crate::error::{Error, Result};
use crate::fft;
use crate::tensor::Tensor;

fn is_complex(t: &Tensor) -> bool {
    t.ndim() >= 2 && t.shape()[t.ndim() - 1] == 2
}

/// `out[o, m] = sum_i x[i, m] * w[i, o, m]` over complex pairs.
fn mix(x: &Tensor, w: &Tensor) -> Tensor {
    let ci = x.shape()[0];
    let co = w.shape()[1];
    let modes = x.len() / ci / 2;
    let (xd, wd) = (x.data(), w.data());
    let mut out = vec![0.0; co * modes * 2];
    for i in 0..ci {
        for o in 0..co {
            let wb = (i * co + o) * modes * 2;
            let xb = i * modes * 2;
            let ob = o * modes * 2;
            for m in 0..modes {
                let (xr, xi) = (xd[xb + 2 * m], xd[xb + 2 * m + 1]);
                let (wr, wi) = (wd[wb + 2 * m], wd[wb + 2 * m + 1]);
                out[ob + 2 * m] += xr * wr - xi * wi;
                out[ob + 2 * m + 1] += xr * wi + xi * wr;
            }
        }
    }
    let mut shape = x.shape().to_vec();
    shape[0] = co;
    Tensor::new(shape, out).unwrap()
}

pub(super) fn mix_adjoint(x: &Tensor, w: &Tensor, g: &Tensor) -> (Tensor, Tensor) {
    let ci = x.shape()[0];
    let co = w.shape()[1];
    let modes = x.len() / ci / 2;
    let (xd, wd, gd) = (x.data(), w.data(), g.data());
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(w.shape());
    {
        let (dxd, dwd) = (dx.data_mut(), dw.data_mut());
        for i in 0..ci {
            for o in 0..co {
                let wb = (i * co + o) * modes * 2;
                let xb = i * modes * 2;
                let gb = o * modes * 2;
                for m in 0..modes {
                    let (gr, gi) = (gd[gb + 2 * m], gd[gb + 2 * m + 1]);
                    let (wr, wi) = (wd[wb + 2 * m], wd[wb + 2 * m + 1]);
                    let (xr, xi) = (xd[xb + 2 * m], xd[xb + 2 * m + 1]);
                    // g * conj(w), g * conj(x)
                    dxd[xb + 2 * m] += gr * wr + gi * wi;
                    dxd[xb + 2 * m + 1] += gi * wr - gr * wi;
                    dwd[wb + 2 * m] += gr * xr + gi * xi;
                    dwd[wb + 2 * m + 1] += gi * xr - gr * xi;
                }
            }
        }
    }
    (dx, dw)
}

impl Graph<'_> {
    /// Unnormalized real-to-complex transform along `axis`. The axis becomes
    /// `N/2 + 1` bins and a trailing `(re, im)` axis of extent 2 is appended.
    pub fn rfft(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.value(x);
        if axis >= t.ndim() {
            return Err(Error::shape("rfft", format!("axis {axis} of {:?}", t.shape())));
        }
        fft::check_pow2("rfft", t.shape()[axis])?;
        let v = fft::rfft_axis(t, axis);
        Ok(self.push(v, Op::Rfft(x, axis), &[x]))
    }

    /// Inverse of [`Graph::rfft`], `1/N` normalized, producing `n` samples.
    pub fn irfft(&mut self, z: Var, axis: usize, n: usize) -> Result<Var> {
        let t = self.value(z);
        fft::check_pow2("irfft", n)?;
        if !is_complex(t) || axis + 1 >= t.ndim() || t.shape()[axis] != n / 2 + 1 {
            return Err(Error::shape(
                "irfft",
                format!(
                    "need complex input with {} bins on axis {axis}, got {:?}",
                    n / 2 + 1,
                    t.shape()
                ),
            ));
        }
        let v = fft::irfft_axis(t, axis, n);
        Ok(self.push(v, Op::Irfft(z, axis), &[z]))
    }

    /// Complex transform along `axis` of a complex tensor; `inverse`
    /// normalizes by `1/N`.
    pub fn fft(&mut self, z: Var, axis: usize, inverse: bool) -> Result<Var> {
        let t = self.value(z);
        if !is_complex(t) || axis + 1 >= t.ndim() {
            return Err(Error::shape("fft", format!("axis {axis} of complex {:?}", t.shape())));
        }
        fft::check_pow2("fft", t.shape()[axis])?;
        let v = fft::fft_axis(t, axis, inverse);
        Ok(self.push(v, Op::Fft(z, axis, inverse), &[z]))
    }

    /// Multi-axis real transform: `rfft` on the last listed axis, complex
    /// transforms on the others.
    pub fn rfftn(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let (&last, rest) = axes.split_last().ok_or_else(|| Error::shape("rfftn", "no axes"))?;
        let mut z = self.rfft(x, last)?;
        for &ax in rest {
            z = self.fft(z, ax, false)?;
        }
        Ok(z)
    }

    /// Inverse of [`Graph::rfftn`]; `n` is the real extent of the last axis.
    pub fn irfftn(&mut self, z: Var, axes: &[usize], n: usize) -> Result<Var> {
        let (&last, rest) = axes.split_last().ok_or_else(|| Error::shape("irfftn", "no axes"))?;
        let mut z = z;
        for &ax in rest {
            z = self.fft(z, ax, true)?;
        }
        self.irfft(z, last, n)
    }

    /// Per-mode complex channel mixing. `x: [I, M..., 2]`,
    /// `w: [I, O, M..., 2]`, output `[O, M..., 2]`.
    pub fn complex_mix(&mut self, x: Var, w: Var) -> Result<Var> {
        let (tx, tw) = (self.value(x), self.value(w));
        let ok = is_complex(tx)
            && tw.ndim() == tx.ndim() + 1
            && tw.shape()[0] == tx.shape()[0]
            && tw.shape()[2..] == tx.shape()[1..];
        if !ok {
            return Err(Error::ShapeMismatch {
                op: "complex_mix",
                lhs: tx.shape().to_vec(),
                rhs: tw.shape().to_vec(),
            });
        }
        let v = mix(tx, tw);
        Ok(self.push(v, Op::ComplexMix(x, w), &[x, w]))
    }
}
