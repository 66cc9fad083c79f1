//! Parameter-conditioned neural surrogates for time-dependent PDEs.
//!
//! The crate covers the whole pipeline at desk scale: ground-truth
//! trajectory generation, a bit-exact trajectory container, a
//! vision-transformer next-step operator whose input carries the PDE
//! parameters as extra channels, a Fourier neural operator baseline,
//! training with Adam and a plateau schedule, and autoregressive rollout
//! evaluation split into in-domain and out-of-domain parameter sets.
//!
//! Everything runs in `f64` on a small reverse-mode tape
//! ([`autodiff::Graph`]).

pub mod autodiff;
pub mod datagen;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod fft;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::Tensor;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/autodiff.md")]
    mod autodiff {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/models.md")]
    mod models {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/studies.md")]
    mod studies {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../book/src/reproducibility.md")]
    mod reproducibility {}
}
