//! Fourier neural operator baseline.
//!
//! The physical channels of the `k` context frames are stacked into
//! `k * C` input channels (plus normalized coordinates when enabled),
//! lifted pointwise to `width`, passed through Fourier layers
//! `gelu(spectral(x) + bypass(x))` and projected back to `C` channels.

use serde::{Deserialize, Serialize};

use super::params::{uniform, Params};
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FnoConfig {
    pub spatial: Vec<usize>,
    /// Kept Fourier modes per spatial axis.
    pub modes: usize,
    pub width: usize,
    pub n_layers: usize,
    /// Physical state channels `C`.
    pub channels: usize,
    /// Total channels of each context frame (state, parameters, time).
    pub frame_channels: usize,
    pub context: usize,
    pub use_coords: bool,
    pub projection_width: usize,
}

impl FnoConfig {
    /// 12 modes (capped by the grid), width 20, four layers, coordinates on.
    pub fn new(spatial: &[usize], channels: usize, frame_channels: usize, context: usize) -> Self {
        let cap = spatial.iter().map(|&s| s / 2).min().unwrap_or(1).max(1);
        FnoConfig {
            spatial: spatial.to_vec(),
            modes: 12.min(cap),
            width: 20,
            n_layers: 4,
            channels,
            frame_channels,
            context,
            use_coords: true,
            projection_width: 64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.spatial.len();
        let bad = |m: String| Err(Error::Config(m));
        if !(d == 1 || d == 2) {
            return bad(format!("{d} spatial axes; only 1 and 2 are supported"));
        }
        if self.width == 0 || self.modes == 0 || self.projection_width == 0 || self.context == 0 {
            return bad("width, modes, projection width and context must be positive".into());
        }
        if self.channels == 0 || self.frame_channels < self.channels {
            return bad(format!(
                "{} state channels in frames of {} channels",
                self.channels, self.frame_channels
            ));
        }
        for (i, &s) in self.spatial.iter().enumerate() {
            if !s.is_power_of_two() {
                return bad(format!("grid axis {i} extent {s} is not a power of two"));
            }
        }
        let last = *self.spatial.last().unwrap();
        if self.modes > last / 2 + 1 {
            return bad(format!(
                "{} modes exceed the {} bins of the last axis",
                self.modes,
                last / 2 + 1
            ));
        }
        if d == 2 && 2 * self.modes > self.spatial[0] {
            return bad(format!(
                "{} modes per corner exceed half the first axis extent {}",
                self.modes, self.spatial[0]
            ));
        }
        Ok(())
    }

    pub fn in_channels(&self) -> usize {
        self.context * self.channels + if self.use_coords { self.spatial.len() } else { 0 }
    }

    /// Spectral weight extents `[M...]`: both frequency corners on the
    /// first axis in 2D, the lowest bins on the last.
    fn mode_shape(&self) -> Vec<usize> {
        if self.spatial.len() == 2 {
            vec![2 * self.modes, self.modes]
        } else {
            vec![self.modes]
        }
    }

    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let (w, pw) = (self.width, self.projection_width);
        let mut spec = vec![w, w];
        spec.extend(self.mode_shape());
        spec.push(2);
        let mut out = vec![
            ("lift.weight".to_string(), vec![w, self.in_channels()]),
            ("lift.bias".to_string(), vec![w, 1]),
        ];
        for l in 0..self.n_layers {
            out.push((format!("layers.{l}.spectral.weight"), spec.clone()));
            out.push((format!("layers.{l}.bypass.weight"), vec![w, w]));
            out.push((format!("layers.{l}.bypass.bias"), vec![w, 1]));
        }
        out.extend([
            ("proj.fc1.weight".to_string(), vec![pw, w]),
            ("proj.fc1.bias".to_string(), vec![pw, 1]),
            ("proj.fc2.weight".to_string(), vec![self.channels, pw]),
            ("proj.fc2.bias".to_string(), vec![self.channels, 1]),
        ]);
        out
    }

    pub fn count_params(&self) -> usize {
        self.layout().iter().map(|(_, s)| s.iter().product::<usize>()).sum()
    }

    /// Pointwise maps uniform in `+-1/sqrt(fan_in)`; spectral weights
    /// uniform in `[0, 1/width^2)` for both parts.
    pub fn init(&self, rng: &mut Rng) -> Params {
        let mut p = Params::new();
        let mut fan_in = self.in_channels();
        for (name, shape) in self.layout() {
            let t = if name.ends_with("spectral.weight") {
                let s = 1.0 / (self.width * self.width) as f64;
                uniform(rng, &shape, 0.5 * s).map(|v| v + 0.5 * s)
            } else {
                if name.ends_with(".weight") {
                    fan_in = shape[1];
                }
                uniform(rng, &shape, 1.0 / (fan_in as f64).sqrt())
            };
            p.push(name, t);
        }
        p
    }

    /// Indices kept on each spatial axis.
    fn kept(&self) -> Vec<Vec<usize>> {
        let m = self.modes;
        if self.spatial.len() == 2 {
            let n0 = self.spatial[0];
            let first: Vec<usize> = (0..m).chain(n0 - m..n0).collect();
            vec![first, (0..m).collect()]
        } else {
            vec![(0..m).collect()]
        }
    }
}

/// Truncated spectral channel mixing of `x: [W, S...]` with
/// `weight: [W, W, M..., 2]`: transform, mix the kept modes, zero the
/// rest, transform back.
pub fn spectral_conv(g: &mut Graph<'_>, cfg: &FnoConfig, x: Var, weight: Var) -> Result<Var> {
    let d = cfg.spatial.len();
    let axes: Vec<usize> = (1..=d).collect();
    let z = g.rfftn(x, &axes)?;
    let full: Vec<usize> = g.shape(z)[1..=d].to_vec();
    let kept = cfg.kept();
    let mut sel = z;
    for (i, idx) in kept.iter().enumerate() {
        if idx.len() != full[i] || idx.iter().enumerate().any(|(a, &b)| a != b) {
            sel = g.index_select(sel, i + 1, idx)?;
        }
    }
    let mut y = g.complex_mix(sel, weight)?;
    for (i, idx) in kept.iter().enumerate() {
        if g.shape(y)[i + 1] != full[i] || idx.iter().enumerate().any(|(a, &b)| a != b) {
            y = g.scatter(y, i + 1, idx, full[i])?;
        }
    }
    g.irfftn(y, &axes, cfg.spatial[d - 1])
}

/// `[C, N] <- W [C, I] . x [I, N] + b [C, 1]`
fn pointwise(g: &mut Graph<'_>, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = g.matmul(w, x)?;
    g.add(y, b)
}

/// Coordinate channels `i / n` per axis, `[d, S...]`.
fn coordinates(spatial: &[usize]) -> Vec<f64> {
    let n: usize = spatial.iter().product();
    let mut out = Vec::with_capacity(spatial.len() * n);
    for ax in 0..spatial.len() {
        let inner: usize = spatial[ax + 1..].iter().product();
        out.extend((0..n).map(|i| ((i / inner) % spatial[ax]) as f64 / spatial[ax] as f64));
    }
    out
}

/// Next standardized state `[C, S...]` from a context window
/// `[k, frame_channels, S...]`; parameter and time channels are ignored.
pub fn forward(g: &mut Graph<'_>, cfg: &FnoConfig, w: &[Var], context: Var) -> Result<Var> {
    let mut want = vec![cfg.context, cfg.frame_channels];
    want.extend(&cfg.spatial);
    if g.shape(context) != want.as_slice() {
        return Err(Error::ShapeMismatch {
            op: "fno forward",
            lhs: g.shape(context).to_vec(),
            rhs: want,
        });
    }
    if w.len() != 2 + 3 * cfg.n_layers + 4 {
        return Err(Error::Config(format!("fno forward got {} weight buffers", w.len())));
    }
    let n: usize = cfg.spatial.iter().product();
    let kc = cfg.context * cfg.channels;
    let state: Vec<usize> = (0..cfg.channels).collect();
    let mut x = if cfg.channels == cfg.frame_channels {
        context
    } else {
        g.index_select(context, 1, &state)?
    };
    x = g.reshape(x, &[kc, n])?;
    if cfg.use_coords {
        let cin = cfg.in_channels();
        x = g.scatter(x, 0, &(0..kc).collect::<Vec<_>>(), cin)?;
        let mut c = vec![0.0; kc * n];
        c.extend(coordinates(&cfg.spatial));
        let c = g.leaf(Tensor::new(vec![cin, n], c)?, false);
        x = g.add(x, c)?;
    }
    let mut h = pointwise(g, x, w[0], w[1])?;
    let mut grid = vec![cfg.width];
    grid.extend(&cfg.spatial);
    for l in 0..cfg.n_layers {
        let o = 2 + 3 * l;
        let hs = g.reshape(h, &grid)?;
        let s = spectral_conv(g, cfg, hs, w[o])?;
        let s = g.reshape(s, &[cfg.width, n])?;
        let b = pointwise(g, h, w[o + 1], w[o + 2])?;
        let sum = g.add(s, b)?;
        h = g.gelu(sum);
    }
    let p = &w[2 + 3 * cfg.n_layers..];
    let y = pointwise(g, h, p[0], p[1])?;
    let y = g.gelu(y);
    let y = pointwise(g, y, p[2], p[3])?;
    let mut shape = vec![cfg.channels];
    shape.extend(&cfg.spatial);
    g.reshape(y, &shape)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck;
    use crate::rng::stream;
    use rand::Rng as _;
    use rustfft::num_complex::Complex64;

    fn cfg(spatial: &[usize], modes: usize, width: usize, coords: bool) -> FnoConfig {
        FnoConfig {
            spatial: spatial.to_vec(),
            modes,
            width,
            n_layers: 2,
            channels: 1,
            frame_channels: 3,
            context: 2,
            use_coords: coords,
            projection_width: 8,
        }
    }

    fn rand_t(shape: &[usize], seed: u64, scale: f64) -> Tensor {
        let mut r = stream(seed, "fno-test");
        Tensor::from_fn(shape, |_| r.random_range(-scale..scale))
    }

    fn spectral(c: &FnoConfig, x: &Tensor, w: &Tensor) -> Tensor {
        let mut g = Graph::new();
        let xv = g.leaf(x.clone(), false);
        let wv = g.leaf(w.clone(), false);
        let y = spectral_conv(&mut g, c, xv, wv).unwrap();
        g.value(y).clone()
    }

    fn identity_weight(width: usize, modes: &[usize]) -> Tensor {
        let mut shape = vec![width, width];
        shape.extend(modes);
        shape.push(2);
        let per: usize = modes.iter().product::<usize>() * 2;
        Tensor::from_fn(&shape, |i| {
            let (io, r) = (i / per, i % per);
            let (a, b) = (io / width, io % width);
            if a == b && r % 2 == 0 {
                1.0
            } else {
                0.0
            }
        })
    }

    #[test]
    fn full_band_identity_is_identity() {
        let c = cfg(&[16], 9, 3, false);
        c.validate().unwrap();
        let x = rand_t(&[3, 16], 1, 1.0);
        assert!(spectral(&c, &x, &identity_weight(3, &[9])).max_abs_diff(&x) < 1e-10);

        let c2 = cfg(&[8, 8], 4, 2, false);
        let x2 = rand_t(&[2, 8, 8], 2, 1.0);
        // both corners of 4 cover all 8 rows; 4 of the 5 column bins are kept
        let y2 = spectral(&c2, &x2, &identity_weight(2, &[8, 4]));
        let c3 = FnoConfig { modes: 5, ..c2.clone() };
        assert!(c3.validate().is_err());
        let mut g = Graph::new();
        let xv = g.leaf(x2.clone(), false);
        let z = g.rfftn(xv, &[1, 2]).unwrap();
        let z = g.index_select(z, 2, &[0, 1, 2, 3]).unwrap();
        let z = g.scatter(z, 2, &[0, 1, 2, 3], 5).unwrap();
        let back = g.irfftn(z, &[1, 2], 8).unwrap();
        assert!(y2.max_abs_diff(g.value(back)) < 1e-10);
    }

    #[test]
    fn constant_input_stays_constant() {
        let c = cfg(&[16], 4, 2, false);
        let x = Tensor::from_fn(&[2, 16], |i| if i < 16 { 1.5 } else { -0.5 });
        let y = spectral(&c, &x, &rand_t(&[2, 2, 4, 2], 3, 1.0));
        for row in y.data().chunks_exact(16) {
            assert!(row.iter().all(|v| (v - row[0]).abs() < 1e-12));
        }
    }

    #[test]
    fn matches_naive_dft() {
        let n = 32;
        let (w, m) = (2, 5);
        let c = FnoConfig {
            spatial: vec![n],
            ..cfg(&[n], m, w, false)
        };
        let x = rand_t(&[w, n], 4, 1.0);
        let wt = rand_t(&[w, w, m, 2], 5, 1.0);
        let y = spectral(&c, &x, &wt);
        let tau = std::f64::consts::TAU;
        for o in 0..w {
            for j in 0..n {
                let mut acc = 0.0;
                for k in 0..m {
                    let mut mixed = Complex64::new(0.0, 0.0);
                    for i in 0..w {
                        let xk: Complex64 = (0..n)
                            .map(|t| x.data()[i * n + t] * Complex64::from_polar(1.0, -tau * (k * t) as f64 / n as f64))
                            .sum();
                        let off = ((i * w + o) * m + k) * 2;
                        mixed += xk * Complex64::new(wt.data()[off], wt.data()[off + 1]);
                    }
                    let e = Complex64::from_polar(1.0, tau * (k * j) as f64 / n as f64);
                    let weight = if k == 0 || 2 * k == n { 1.0 } else { 2.0 };
                    acc += weight * (mixed * e).re;
                }
                assert!((y.data()[o * n + j] - acc / n as f64).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn spectral_layer_is_linear() {
        let c = cfg(&[8, 16], 3, 2, false);
        let wt = rand_t(&[2, 2, 6, 3, 2], 6, 1.0);
        let a = rand_t(&[2, 8, 16], 7, 1.0);
        let b = rand_t(&[2, 8, 16], 8, 1.0);
        let ab = Tensor::from_fn(a.shape(), |i| a.data()[i] + b.data()[i]);
        let (fa, fb, fab) = (spectral(&c, &a, &wt), spectral(&c, &b, &wt), spectral(&c, &ab, &wt));
        let sum = Tensor::from_fn(a.shape(), |i| fa.data()[i] + fb.data()[i]);
        assert!(fab.max_abs_diff(&sum) < 1e-9);
    }

    fn run(c: &FnoConfig, p: &Params, ctx: &Tensor) -> Tensor {
        let mut g = Graph::new();
        let w: Vec<Var> = p.tensors().iter().map(|t| g.param(t, false)).collect();
        let cv = g.leaf(ctx.clone(), false);
        let y = forward(&mut g, c, &w, cv).unwrap();
        g.value(y).clone()
    }

    #[test]
    fn forward_shapes_and_determinism() {
        for c in [cfg(&[16], 4, 4, true), cfg(&[8, 8], 2, 3, true)] {
            c.validate().unwrap();
            let p = c.init(&mut stream(0, "init"));
            assert_eq!(p.count(), c.count_params());
            let mut shape = vec![2, 3];
            shape.extend(&c.spatial);
            let ctx = rand_t(&shape, 9, 1.0);
            let a = run(&c, &p, &ctx);
            let mut want = vec![1];
            want.extend(&c.spatial);
            assert_eq!(a.shape(), want.as_slice());
            assert_eq!(a, run(&c, &p, &ctx));
        }
    }

    #[test]
    fn shift_equivariant_without_coordinates() {
        let c = cfg(&[16], 4, 4, false);
        let p = c.init(&mut stream(1, "init"));
        let ctx = rand_t(&[2, 3, 16], 10, 1.0);
        let shift = 5;
        let rolled = Tensor::from_fn(&[2, 3, 16], |i| {
            let (row, j) = (i / 16, i % 16);
            ctx.data()[row * 16 + (j + 16 - shift) % 16]
        });
        let (a, b) = (run(&c, &p, &ctx), run(&c, &p, &rolled));
        for j in 0..16 {
            assert!((b.data()[(j + shift) % 16] - a.data()[j]).abs() < 1e-9);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let c = cfg(&[16], 4, 4, true);
        let p = c.init(&mut stream(2, "init"));
        let ctx = rand_t(&[2, 3, 16], 11, 1.0);
        let target = rand_t(&[1, 16], 12, 1.0);
        let res = gradcheck::check(p.tensors(), 1e-5, |g, w| {
            let cv = g.leaf(ctx.clone(), false);
            let t = g.leaf(target.clone(), false);
            let y = forward(g, &c, w, cv)?;
            g.mse(y, t)
        })
        .unwrap();
        assert!(res.max_rel_error() < 1e-4, "{:?}", res.rel_errors);
    }

    #[test]
    fn modes_beyond_the_band_are_rejected() {
        assert!(cfg(&[16], 10, 2, false).validate().is_err());
        assert!(cfg(&[16, 16], 9, 2, false).validate().is_err());
        assert!(cfg(&[12], 2, 2, false).validate().is_err());
    }
}
