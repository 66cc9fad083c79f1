//! Axis-wise discrete Fourier transforms over [`Tensor`] buffers.
//!
//! Complex tensors use a trailing axis of extent 2 holding `(re, im)`.
//! Forward transforms are unnormalized; inverse transforms scale by `1/N`.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

type PlanCache = (FftPlanner<f64>, HashMap<(usize, bool), Arc<dyn Fft<f64>>>);

thread_local! {
    static PLANS: RefCell<PlanCache> =
        RefCell::new((FftPlanner::new(), HashMap::new()));
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANS.with(|p| {
        let mut p = p.borrow_mut();
        let (planner, cache) = &mut *p;
        cache
            .entry((n, inverse))
            .or_insert_with(|| {
                if inverse {
                    planner.plan_fft_inverse(n)
                } else {
                    planner.plan_fft_forward(n)
                }
            })
            .clone()
    })
}

pub(crate) fn check_pow2(op: &'static str, n: usize) -> Result<()> {
    if n.is_power_of_two() {
        Ok(())
    } else {
        Err(Error::shape(op, format!("extent {n} is not a power of two")))
    }
}

/// `(outer, n, inner)` decomposition of `shape` around `axis`.
fn split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Unnormalized complex transform of a complex slice buffer along one
/// logical axis. `sign = false` uses `exp(-i..)`, `true` uses `exp(+i..)`.
fn c2c_inplace(buf: &mut [Complex64], shape: &[usize], axis: usize, inverse: bool) {
    let (outer, n, inner) = split(shape, axis);
    let fft = plan(n, inverse);
    let mut line = vec![Complex64::new(0.0, 0.0); n];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * n * inner + i;
            for (j, z) in line.iter_mut().enumerate() {
                *z = buf[base + j * inner];
            }
            fft.process(&mut line);
            for (j, z) in line.iter().enumerate() {
                buf[base + j * inner] = *z;
            }
        }
    }
}

fn to_complex(t: &Tensor) -> Vec<Complex64> {
    t.data().chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect()
}

fn from_complex(shape: Vec<usize>, buf: &[Complex64], scale: f64) -> Tensor {
    let mut data = Vec::with_capacity(buf.len() * 2);
    for z in buf {
        data.push(z.re * scale);
        data.push(z.im * scale);
    }
    Tensor::new(shape, data).expect("complex buffer shape")
}

fn logical(t: &Tensor) -> &[usize] {
    &t.shape()[..t.ndim() - 1]
}

/// Real-to-half-complex transform along `axis`; the axis shrinks to
/// `N/2 + 1` and a trailing `(re, im)` axis is appended.
pub fn rfft_axis(x: &Tensor, axis: usize) -> Tensor {
    let shape = x.shape();
    let (outer, n, inner) = split(shape, axis);
    let half = n / 2 + 1;
    let fft = plan(n, false);
    let mut out_shape = shape.to_vec();
    out_shape[axis] = half;
    out_shape.push(2);
    let mut out = vec![0.0; outer * half * inner * 2];
    let mut line = vec![Complex64::new(0.0, 0.0); n];
    let xd = x.data();
    for o in 0..outer {
        for i in 0..inner {
            for (j, z) in line.iter_mut().enumerate() {
                *z = Complex64::new(xd[(o * n + j) * inner + i], 0.0);
            }
            fft.process(&mut line);
            for (j, z) in line.iter().take(half).enumerate() {
                let at = ((o * half + j) * inner + i) * 2;
                out[at] = z.re;
                out[at + 1] = z.im;
            }
        }
    }
    Tensor::new(out_shape, out).expect("rfft shape")
}

/// Half-complex-to-real inverse along `axis` producing `n` real samples.
/// Imaginary parts of the DC and Nyquist bins are ignored.
pub fn irfft_axis(z: &Tensor, axis: usize, n: usize) -> Tensor {
    let lshape = logical(z);
    let (outer, half, inner) = split(lshape, axis);
    debug_assert_eq!(half, n / 2 + 1);
    let fft = plan(n, true);
    let zd = z.data();
    let mut out_shape = lshape.to_vec();
    out_shape[axis] = n;
    let mut out = vec![0.0; outer * n * inner];
    let mut line = vec![Complex64::new(0.0, 0.0); n];
    let scale = 1.0 / n as f64;
    for o in 0..outer {
        for i in 0..inner {
            for k in 0..half {
                let at = ((o * half + k) * inner + i) * 2;
                let c = Complex64::new(zd[at], zd[at + 1]);
                line[k] = c;
                if k > 0 && k < n - k {
                    line[n - k] = c.conj();
                }
            }
            fft.process(&mut line);
            for (j, v) in line.iter().enumerate() {
                out[(o * n + j) * inner + i] = v.re * scale;
            }
        }
    }
    Tensor::new(out_shape, out).expect("irfft shape")
}

/// Complex transform of a complex tensor along logical `axis`. The inverse
/// direction is normalized by `1/N`.
pub fn fft_axis(z: &Tensor, axis: usize, inverse: bool) -> Tensor {
    let lshape = logical(z).to_vec();
    let mut buf = to_complex(z);
    c2c_inplace(&mut buf, &lshape, axis, inverse);
    let scale = if inverse { 1.0 / lshape[axis] as f64 } else { 1.0 };
    from_complex(z.shape().to_vec(), &buf, scale)
}

/// Adjoint of [`rfft_axis`]: `Re(sum_k G_k exp(+2 pi i k n / N))` with the
/// bins above `N/2` treated as zero.
pub(crate) fn rfft_adjoint(g: &Tensor, axis: usize, n: usize) -> Tensor {
    let lshape = logical(g);
    let (outer, half, inner) = split(lshape, axis);
    let fft = plan(n, true);
    let gd = g.data();
    let mut out_shape = lshape.to_vec();
    out_shape[axis] = n;
    let mut out = vec![0.0; outer * n * inner];
    let mut line = vec![Complex64::new(0.0, 0.0); n];
    for o in 0..outer {
        for i in 0..inner {
            line.iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
            for (k, z) in line.iter_mut().take(half).enumerate() {
                let at = ((o * half + k) * inner + i) * 2;
                *z = Complex64::new(gd[at], gd[at + 1]);
            }
            fft.process(&mut line);
            for (j, v) in line.iter().enumerate() {
                out[(o * n + j) * inner + i] = v.re;
            }
        }
    }
    Tensor::new(out_shape, out).expect("rfft adjoint shape")
}

/// Adjoint of [`irfft_axis`]: `(c_k / N) * rfft(g)_k`, `c_k = 1` at DC and
/// Nyquist and 2 elsewhere.
pub(crate) fn irfft_adjoint(g: &Tensor, axis: usize) -> Tensor {
    let n = g.shape()[axis];
    let mut r = rfft_axis(g, axis);
    let lshape = logical(&r).to_vec();
    let (outer, half, inner) = split(&lshape, axis);
    let d = r.data_mut();
    for o in 0..outer {
        for k in 0..half {
            let c = if k == 0 || 2 * k == n { 1.0 } else { 2.0 } / n as f64;
            for i in 0..inner {
                let at = ((o * half + k) * inner + i) * 2;
                d[at] *= c;
                d[at + 1] *= c;
            }
        }
    }
    r
}

/// Adjoint of [`fft_axis`].
pub(crate) fn fft_adjoint(g: &Tensor, axis: usize, inverse: bool) -> Tensor {
    let lshape = logical(g).to_vec();
    let n = lshape[axis] as f64;
    let mut buf = to_complex(g);
    c2c_inplace(&mut buf, &lshape, axis, !inverse);
    // forward adjoint = unnormalized inverse; inverse adjoint = forward / N
    let scale = if inverse { 1.0 / n } else { 1.0 };
    from_complex(g.shape().to_vec(), &buf, scale)
}

/// Forward real transform of a 1D signal, `N/2 + 1` bins.
pub fn rfft(x: &[f64]) -> Vec<Complex64> {
    let n = x.len();
    let mut line: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    plan(n, false).process(&mut line);
    line.truncate(n / 2 + 1);
    line
}

/// Inverse of [`rfft`] for a length-`n` real signal.
pub fn irfft(bins: &[Complex64], n: usize) -> Vec<f64> {
    let mut line = vec![Complex64::new(0.0, 0.0); n];
    for (k, &c) in bins.iter().enumerate().take(n / 2 + 1) {
        line[k] = c;
        if k > 0 && k < n - k {
            line[n - k] = c.conj();
        }
    }
    plan(n, true).process(&mut line);
    line.iter().map(|z| z.re / n as f64).collect()
}

/// Signed integer wavenumber of bin `k` in a length-`n` full spectrum.
pub fn wavenumber(k: usize, n: usize) -> f64 {
    if k <= n / 2 {
        k as f64
    } else {
        k as f64 - n as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dc_bin_of_constant() {
        let x = Tensor::full(&[8], 1.5);
        let y = rfft_axis(&x, 0);
        assert_eq!(y.shape(), &[5, 2]);
        assert!((y.data()[0] - 12.0).abs() < 1e-12);
        assert!(y.data()[2..].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn round_trip_along_middle_axis() {
        let x = Tensor::from_fn(&[3, 8, 2], |i| ((i * 7919) % 13) as f64 - 6.0);
        let y = irfft_axis(&rfft_axis(&x, 1), 1, 8);
        assert!(x.max_abs_diff(&y) < 1e-12);
    }

    #[test]
    fn complex_round_trip() {
        let z = Tensor::from_fn(&[4, 3, 2], |i| (i as f64).sin());
        let back = fft_axis(&fft_axis(&z, 0, false), 0, true);
        assert!(z.max_abs_diff(&back) < 1e-12);
    }

    proptest::proptest! {
        #[test]
        fn real_transform_round_trips(x in proptest::collection::vec(-10.0f64..10.0, 1..64)) {
            let back = irfft(&rfft(&x), x.len());
            for (a, b) in x.iter().zip(&back) {
                proptest::prop_assert!((a - b).abs() < 1e-10);
            }
        }
    }
}
