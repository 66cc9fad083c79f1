//! Ground-truth trajectories.
//!
//! * 1D advection `u_t + a u_x = 0`, solved exactly by a Fourier shift.
//! * 1D viscous Burgers `u_t + u u_x = nu u_xx`, pseudo-spectral with 2/3
//!   dealiasing and an integrating-factor RK4 step.
//! * A synthetic 2D system: every channel is advected rigidly by
//!   `(ax, ay)` and damped by `exp(-gamma t)`. It has an exact solution and
//!   three parameters, which exercises the 2D model path.
//!
//! All domains are periodic on `[0, 1)^d`.

use std::f64::consts::PI;

use rand::Rng;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, DatasetMeta, Trajectory};
use crate::error::{Error, Result};
use crate::fft;
use crate::rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum System {
    Advection,
    Burgers,
    Ns2dSynthetic,
}

impl System {
    pub fn name(self) -> &'static str {
        match self {
            System::Advection => "advection",
            System::Burgers => "burgers",
            System::Ns2dSynthetic => "ns2d-synthetic",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "advection" => Ok(System::Advection),
            "burgers" => Ok(System::Burgers),
            "ns2d-synthetic" => Ok(System::Ns2dSynthetic),
            other => Err(Error::Params(format!("unknown system {other:?}"))),
        }
    }

    pub fn param_names(self) -> &'static [&'static str] {
        match self {
            System::Advection => &["a"],
            System::Burgers => &["nu"],
            System::Ns2dSynthetic => &["ax", "ay", "gamma"],
        }
    }

    pub fn channel_names(self) -> &'static [&'static str] {
        match self {
            System::Advection | System::Burgers => &["u"],
            System::Ns2dSynthetic => &["q0", "q1"],
        }
    }

    pub fn spatial_dims(self) -> usize {
        match self {
            System::Advection | System::Burgers => 1,
            System::Ns2dSynthetic => 2,
        }
    }

    /// Checks arity and sign constraints of one parameter vector.
    pub fn validate(self, values: &[f64]) -> Result<()> {
        let names = self.param_names();
        if values.len() != names.len() {
            return Err(Error::Params(format!(
                "{} expects {} parameter(s) {names:?}, got {values:?}",
                self.name(),
                names.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Params(format!("non-finite parameter in {values:?}")));
        }
        match self {
            System::Advection if values[0] <= 0.0 => Err(Error::Params(format!(
                "advection speed a must be > 0, got {}",
                values[0]
            ))),
            System::Burgers if values[0] <= 0.0 => {
                Err(Error::Params(format!("viscosity nu must be > 0, got {}", values[0])))
            }
            System::Ns2dSynthetic if values[2] < 0.0 => {
                Err(Error::Params(format!("damping gamma must be >= 0, got {}", values[2])))
            }
            _ => Ok(()),
        }
    }
}

/// Uniform periodic grid on the unit interval/square plus output times
/// `t_j = j * t_final / (T - 1)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub spatial: Vec<usize>,
    pub n_timesteps: usize,
    pub t_final: f64,
}

impl GridSpec {
    pub fn new_1d(nx: usize, n_timesteps: usize, t_final: f64) -> Self {
        GridSpec {
            spatial: vec![nx],
            n_timesteps,
            t_final,
        }
    }

    pub fn new_2d(nx: usize, ny: usize, n_timesteps: usize, t_final: f64) -> Self {
        GridSpec {
            spatial: vec![nx, ny],
            n_timesteps,
            t_final,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.spatial.is_empty() || self.spatial.iter().any(|n| !n.is_power_of_two() || *n < 2) {
            return Err(Error::Config(format!(
                "spatial extents must be powers of two >= 2, got {:?}",
                self.spatial
            )));
        }
        if self.n_timesteps < 2 {
            return Err(Error::Config(format!(
                "need at least 2 timesteps, got {}",
                self.n_timesteps
            )));
        }
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return Err(Error::Config(format!("t_final must be > 0, got {}", self.t_final)));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        self.t_final / (self.n_timesteps - 1) as f64
    }

    pub fn time(&self, j: usize) -> f64 {
        j as f64 * self.dt()
    }

    pub fn n_points(&self) -> usize {
        self.spatial.iter().product()
    }
}

/// Random sinusoid superposition used for initial conditions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitialConditionSpec {
    pub seed: u64,
    pub n_modes: usize,
    pub amplitude_range: [f64; 2],
    pub wavenumber_max: u32,
}

impl InitialConditionSpec {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.amplitude_range;
        if self.n_modes == 0 || self.wavenumber_max == 0 || !(lo <= hi) {
            return Err(Error::Config(format!("invalid initial-condition spec {self:?}")));
        }
        Ok(())
    }
}

/// One sinusoid `amplitude * sin(2 pi k . x + phase)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mode {
    pub amplitude: f64,
    pub wavenumber: Vec<i64>,
    pub phase: f64,
}

/// Draws `n_modes` modes per channel. In 1D wavenumbers are in
/// `1..=k_max`; in 2D `kx` is in `0..=k_max`, `ky` in `-k_max..=k_max`,
/// never both zero.
pub fn sample_modes(spec: &InitialConditionSpec, dims: usize, channels: usize) -> Vec<Vec<Mode>> {
    let mut r = rng::stream(spec.seed, "initial-condition");
    let km = spec.wavenumber_max as i64;
    let [lo, hi] = spec.amplitude_range;
    (0..channels)
        .map(|_| {
            (0..spec.n_modes)
                .map(|_| {
                    let wavenumber = if dims == 1 {
                        vec![r.random_range(1..=km)]
                    } else {
                        loop {
                            let mut k: Vec<i64> = (0..dims).map(|_| r.random_range(-km..=km)).collect();
                            k[0] = k[0].abs();
                            if k.iter().any(|&v| v != 0) {
                                break k;
                            }
                        }
                    };
                    let amplitude = if lo == hi { lo } else { r.random_range(lo..hi) };
                    let phase = r.random_range(0.0..2.0 * PI);
                    Mode {
                        amplitude,
                        wavenumber,
                        phase,
                    }
                })
                .collect()
        })
        .collect()
}

/// Evaluates per-channel mode lists on the grid, returning `[C, S...]`.
pub fn evaluate_modes(modes: &[Vec<Mode>], spatial: &[usize]) -> Tensor {
    let n: usize = spatial.iter().product();
    let mut data = Vec::with_capacity(modes.len() * n);
    for channel in modes {
        for flat in 0..n {
            let mut rem = flat;
            let mut x = vec![0.0; spatial.len()];
            for ax in (0..spatial.len()).rev() {
                x[ax] = (rem % spatial[ax]) as f64 / spatial[ax] as f64;
                rem /= spatial[ax];
            }
            let v: f64 = channel
                .iter()
                .map(|m| {
                    let arg: f64 = m.wavenumber.iter().zip(&x).map(|(&k, &xi)| k as f64 * xi).sum();
                    m.amplitude * (2.0 * PI * arg + m.phase).sin()
                })
                .sum();
            data.push(v);
        }
    }
    let mut shape = vec![modes.len()];
    shape.extend_from_slice(spatial);
    Tensor::new(shape, data).expect("initial condition shape")
}

/// Deterministic initial field `[C, S...]` for `spec` on `grid`.
pub fn sample_initial_condition(spec: &InitialConditionSpec, grid: &GridSpec, channels: usize) -> Tensor {
    let modes = sample_modes(spec, grid.spatial.len(), channels);
    evaluate_modes(&modes, &grid.spatial)
}

fn shift_bins(bins: &mut [Complex64], n: usize, shift: f64) {
    for (k, b) in bins.iter_mut().enumerate() {
        let th = -2.0 * PI * k as f64 * shift;
        *b *= Complex64::from_polar(1.0, th);
    }
    if n.is_multiple_of(2) {
        // the Nyquist bin of a real signal shifts as a real cosine
        let last = bins.len() - 1;
        bins[last] = Complex64::new(bins[last].re, 0.0);
    }
}

/// Periodic translation `u(x - shift)` of a 1D signal via its spectrum.
pub fn fourier_shift(u: &[f64], shift: f64) -> Vec<f64> {
    let n = u.len();
    let mut bins = fft::rfft(u);
    shift_bins(&mut bins, n, shift);
    fft::irfft(&bins, n)
}

/// Exact advection frames `[T, 1, nx]`: `u(x, t) = u0((x - a t) mod 1)`.
pub fn solve_advection(u0: &[f64], a: f64, grid: &GridSpec) -> Result<Tensor> {
    grid.validate()?;
    let nx = grid.spatial[0];
    if u0.len() != nx || grid.spatial.len() != 1 {
        return Err(Error::shape(
            "solve_advection",
            format!("field of {} points on grid {:?}", u0.len(), grid.spatial),
        ));
    }
    let bins = fft::rfft(u0);
    let mut data = Vec::with_capacity(grid.n_timesteps * nx);
    data.extend_from_slice(u0);
    for j in 1..grid.n_timesteps {
        let mut b = bins.clone();
        shift_bins(&mut b, nx, a * grid.time(j));
        data.extend(fft::irfft(&b, nx));
    }
    Tensor::new(vec![grid.n_timesteps, 1, nx], data)
}

/// Internal steps per output frame satisfying `dt <= 0.4 dx / max|u|`.
/// The integrating factor handles diffusion exactly, so no diffusive limit
/// applies.
pub fn burgers_substeps(u0: &[f64], grid: &GridSpec) -> usize {
    let dx = 1.0 / grid.spatial[0] as f64;
    let umax = u0.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if umax == 0.0 {
        return 1;
    }
    let limit = 0.4 * dx / umax;
    ((grid.dt() / limit).ceil() as usize).max(1)
}

struct BurgersRhs {
    n: usize,
    /// `i k / 2` per rfft bin, zero beyond the 2/3 cutoff.
    half_ik: Vec<Complex64>,
}

impl BurgersRhs {
    fn new(n: usize) -> Self {
        let half_ik = (0..=n / 2)
            .map(|j| {
                if 3 * j < n {
                    Complex64::new(0.0, PI * j as f64)
                } else {
                    Complex64::new(0.0, 0.0)
                }
            })
            .collect();
        BurgersRhs { n, half_ik }
    }

    /// Spectral `-u u_x = -(u^2 / 2)_x`; the square is formed in physical
    /// space.
    fn eval(&self, uh: &[Complex64]) -> Vec<Complex64> {
        let u = fft::irfft(uh, self.n);
        let sq: Vec<f64> = u.iter().map(|v| v * v).collect();
        let sqh = fft::rfft(&sq);
        // (2 pi i k) * (1/2) = i pi k
        sqh.iter().zip(&self.half_ik).map(|(s, ik)| -(ik * s)).collect()
    }
}

/// Pseudo-spectral viscous Burgers frames `[T, 1, nx]`.
///
/// Each output interval is split into `substeps` integrating-factor RK4
/// steps (defaulting to [`burgers_substeps`]).
pub fn solve_burgers(u0: &[f64], nu: f64, grid: &GridSpec, substeps: Option<usize>) -> Result<Tensor> {
    grid.validate()?;
    System::Burgers.validate(&[nu])?;
    let n = grid.spatial[0];
    if u0.len() != n || grid.spatial.len() != 1 {
        return Err(Error::shape(
            "solve_burgers",
            format!("field of {} points on grid {:?}", u0.len(), grid.spatial),
        ));
    }
    let steps = substeps.unwrap_or_else(|| burgers_substeps(u0, grid)).max(1);
    let h = grid.dt() / steps as f64;
    let rhs = BurgersRhs::new(n);
    let e_half: Vec<f64> = (0..=n / 2)
        .map(|j| {
            let k = 2.0 * PI * j as f64;
            (-nu * k * k * h / 2.0).exp()
        })
        .collect();
    let mut uh = fft::rfft(u0);
    let mut data = Vec::with_capacity(grid.n_timesteps * n);
    data.extend_from_slice(u0);
    let axpy = |a: &[Complex64], s: f64, b: &[Complex64]| -> Vec<Complex64> {
        a.iter().zip(b).map(|(x, y)| x + y * s).collect()
    };
    let damp = |v: &[Complex64]| -> Vec<Complex64> { v.iter().zip(&e_half).map(|(x, e)| x * e).collect() };
    for frame in 1..grid.n_timesteps {
        for _ in 0..steps {
            let a = rhs.eval(&uh).iter().map(|v| v * h).collect::<Vec<_>>();
            let eu = damp(&uh);
            let b = rhs
                .eval(&damp(&axpy(&uh, 0.5, &a)))
                .iter()
                .map(|v| v * h)
                .collect::<Vec<_>>();
            let c = rhs.eval(&axpy(&eu, 0.5, &b)).iter().map(|v| v * h).collect::<Vec<_>>();
            let eeu = damp(&eu);
            let d = rhs
                .eval(&axpy(&eeu, 1.0, &damp(&c)))
                .iter()
                .map(|v| v * h)
                .collect::<Vec<_>>();
            let ea = damp(&damp(&a));
            let ebc = damp(&axpy(&b, 1.0, &c));
            uh = (0..uh.len())
                .map(|j| eeu[j] + (ea[j] + ebc[j] * 2.0 + d[j]) / 6.0)
                .collect();
        }
        let u = fft::irfft(&uh, n);
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged(format!(
                "burgers solver produced non-finite values at frame {frame} (nu={nu}, {steps} substeps)"
            )));
        }
        data.extend(u);
    }
    Tensor::new(vec![grid.n_timesteps, 1, n], data)
}

/// Exact frames `[T, C, nx, ny]` of the synthetic 2D system: each channel
/// translated by `(ax t, ay t)` and scaled by `exp(-gamma t)`.
pub fn solve_ns2d_synthetic(u0: &Tensor, params: &[f64], grid: &GridSpec) -> Result<Tensor> {
    grid.validate()?;
    System::Ns2dSynthetic.validate(params)?;
    if u0.ndim() != 3 || u0.shape()[1..] != grid.spatial[..] {
        return Err(Error::shape(
            "solve_ns2d_synthetic",
            format!("field {:?} on grid {:?}", u0.shape(), grid.spatial),
        ));
    }
    let (ax, ay, gamma) = (params[0], params[1], params[2]);
    let (nx, ny) = (grid.spatial[0], grid.spatial[1]);
    let spec = fft::fft_axis(&fft::rfft_axis(u0, 2), 1, false);
    let half = ny / 2 + 1;
    let mut data = Vec::with_capacity(grid.n_timesteps * u0.len());
    data.extend_from_slice(u0.data());
    for j in 1..grid.n_timesteps {
        let t = grid.time(j);
        let mut s = spec.clone();
        let damping = (-gamma * t).exp();
        for (idx, c) in s.data_mut().chunks_exact_mut(2).enumerate() {
            let ky = idx % half;
            let kx = fft::wavenumber((idx / half) % nx, nx);
            let th = -2.0 * PI * (kx * ax + ky as f64 * ay) * t;
            let z = Complex64::new(c[0], c[1]) * Complex64::from_polar(damping, th);
            c[0] = z.re;
            c[1] = z.im;
        }
        let frame = fft::irfft_axis(&fft::fft_axis(&s, 1, true), 2, ny);
        data.extend_from_slice(frame.data());
    }
    let mut shape = vec![grid.n_timesteps];
    shape.extend_from_slice(u0.shape());
    Tensor::new(shape, data)
}

/// Initial-condition family shared by every trajectory of a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IcFamily {
    pub n_modes: usize,
    pub amplitude_range: [f64; 2],
    pub wavenumber_max: u32,
}

impl Default for IcFamily {
    fn default() -> Self {
        IcFamily {
            n_modes: 3,
            amplitude_range: [0.2, 1.0],
            wavenumber_max: 4,
        }
    }
}

/// Everything needed to regenerate a dataset bit-exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub system: System,
    pub params: Vec<Vec<f64>>,
    pub n_traj: usize,
    pub grid: GridSpec,
    pub seed: u64,
    #[serde(default)]
    pub ic: IcFamily,
    #[serde(default)]
    pub substeps: Option<usize>,
}

/// Solves one trajectory of `system` from the initial condition of `seed`.
pub fn solve_trajectory(
    system: System,
    params: &[f64],
    seed: u64,
    grid: &GridSpec,
    ic: &IcFamily,
    substeps: Option<usize>,
) -> Result<Trajectory> {
    system.validate(params)?;
    if grid.spatial.len() != system.spatial_dims() {
        return Err(Error::Config(format!(
            "{} needs a {}D grid, got {:?}",
            system.name(),
            system.spatial_dims(),
            grid.spatial
        )));
    }
    let spec = InitialConditionSpec {
        seed,
        n_modes: ic.n_modes,
        amplitude_range: ic.amplitude_range,
        wavenumber_max: ic.wavenumber_max,
    };
    spec.validate()?;
    let u0 = sample_initial_condition(&spec, grid, system.channel_names().len());
    let frames = match system {
        System::Advection => solve_advection(u0.data(), params[0], grid)?,
        System::Burgers => solve_burgers(u0.data(), params[0], grid, substeps)?,
        System::Ns2dSynthetic => solve_ns2d_synthetic(&u0, params, grid)?,
    };
    Ok(Trajectory {
        params: params.to_vec(),
        seed,
        frames,
    })
}

/// Generates `n_traj` trajectories for every parameter vector. Trajectory
/// `j` uses the same seed, hence the same initial condition, under every
/// parameter value. Output order is parameter-major and independent of
/// thread count.
pub fn generate_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    spec.grid.validate()?;
    for p in &spec.params {
        spec.system.validate(p)?;
    }
    let seeds: Vec<u64> = (0..spec.n_traj as u64)
        .map(|j| rng::trajectory_seed(spec.seed, j))
        .collect();
    let jobs: Vec<(&Vec<f64>, u64)> = spec
        .params
        .iter()
        .flat_map(|p| seeds.iter().map(move |&s| (p, s)))
        .collect();
    let trajectories = jobs
        .par_iter()
        .map(|(p, s)| solve_trajectory(spec.system, p, *s, &spec.grid, &spec.ic, spec.substeps))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        meta: DatasetMeta::for_system(spec.system, spec.grid.clone()),
        trajectories,
    })
}
