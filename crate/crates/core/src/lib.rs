//! Geometric-structure similarity for time series.
//!
//! Series are rendered into grayscale images (one column per timestep, a
//! decaying vertical stripe around the value) and compared with TGSI, the
//! product of a luminance term and a covariance term. Because rendering is
//! not differentiable, training uses SATL instead: a first-order difference
//! loss, a dominant-frequency loss and a perceptual loss computed by a
//! temporal extractor aligned to an image autoencoder's latent space.
//!
//! The crate is `no_std` (it needs `alloc`). File formats, CSV ingestion and
//! the command-line tool live in the `tsgeo` crate.

#![no_std]

extern crate alloc;

pub mod error;
pub mod forecast;
pub mod image;
pub mod perceptual;
pub mod rng;
pub mod satl;
pub mod series;
pub mod spectral;
pub mod tensor;
pub mod tgsi;
pub mod validation;

pub use error::{Error, Result};
pub use image::{RenderConfig, SeriesImage};
pub use perceptual::{ExtractorParams, PerceptualBundle};
pub use satl::LossWeights;
pub use series::TimeSeries;
pub use tensor::{Graph, NodeId, Op, Param, Tensor};
pub use tgsi::{tgsi, TgsiConfig, TgsiReport};
