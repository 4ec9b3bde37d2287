//! Hyperspectral pixel classification with a multiscale convolutional
//! transformer and center-mask self-supervised pretraining.
//!
//! The crate is self-contained: a small tape-based autodiff engine
//! ([`autograd`]) over dense tensors ([`tensor`]) drives the embedding
//! ([`mce`]), the transformer encoder ([`transformer`]), the classifier
//! ([`model`]) and the pretraining model ([`pretrain`]). Everything is generic
//! over `f32` (training) and `f64` (gradient checks, see [`gradcheck`]).
//!
//! Runs are reproducible: kernels reduce in a fixed order whatever the thread
//! count, and every random draw is keyed by `(seed, epoch)` or `(seed, step)`.
//!
//! ```no_run
//! use mct::data::synthetic::{generate, SyntheticConfig};
//! use mct::data::{normalize_bands, stratified_split};
//! use mct::model::{Mct, MctConfig};
//! # fn cfg() -> MctConfig { unimplemented!() }
//! # fn main() -> mct::error::Result<()> {
//! let scene = generate(&SyntheticConfig::default())?;
//! let cube = normalize_bands(&scene.cube)?;
//! let split = stratified_split(&scene.gt, 20, 0)?;
//! let mut store = mct::params::ParamStore::<f32>::new();
//! let model = Mct::new(&mut store, &cfg(), &mut rand::rng())?;
//! # Ok(()) }
//! ```
//!
//! The runnable programs under `examples/` walk through each capability; the
//! `mct` binary wraps [`experiment`] for file-based runs.

pub mod autograd;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod mce;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod params;
pub mod pretrain;
pub mod tensor;
pub mod train;
pub mod transformer;

pub use autograd::{Mode, Tape, Var};
pub use error::{Error, Result};
pub use params::ParamStore;
pub use tensor::{Real, Tensor};
