//! SynCx: synchrony-based object binding with a complex-valued convolutional
//! autoencoder.
//!
//! The model processes an image as a complex-valued map whose magnitudes are
//! clamped to the pixel values while the phases act as a recurrent state that
//! carries object-binding hypotheses. Each iteration runs the autoencoder,
//! reads off a reconstruction from the output magnitudes, and feeds the output
//! phases back as the next input phases. After training, pixels that belong to
//! the same object end up with aligned phases, and discrete object assignments
//! fall out of clustering the phase configuration of a late decoder layer.
//!
//! Crate layout:
//!
//! - [`ctensor`] — complex-valued maps/kernels and the small op set the
//!   architecture needs (complex conv, modReLU, nearest upsampling, polar
//!   conversions).
//! - [`autodiff`] — reverse-mode differentiation over real-valued arrays;
//!   complex ops differentiate through their (re, im) decomposition. Includes
//!   the Adam step with global-norm clipping and a finite-difference checker.
//! - [`model`] — the autoencoder architecture, Trabelsi-style initialization,
//!   forward pass and checkpoint IO.
//! - [`trainer`] — phase initialization, the clamped-magnitude rollout, the
//!   multi-iteration reconstruction loss and the optimization loop.
//! - [`datagen`] — procedural multi-object scenes with ground-truth masks and
//!   a PPM/PGM dataset directory format.
//! - [`eval`] — k-means over unit-magnitude phase features and foreground
//!   adjusted Rand index scoring.
//! - [`viz`] — t-SNE composite-phase maps rendered as matched heatmap/radial
//!   plot images.

pub mod autodiff;
pub mod ctensor;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod model;
pub mod real;
pub mod rng;
pub mod tensor;
pub mod trainer;
pub mod viz;

pub use ctensor::{ComplexKernel, ComplexMap};
pub use error::{Error, Result};
pub use real::Real;
pub use tensor::Tensor;
