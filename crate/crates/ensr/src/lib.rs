//! Super-resolution of bandwidth-limited MR images.
//!
//! The pieces, bottom to top: a frequency-domain degradation model
//! ([`kspace`]), five classical upscalers ([`classical`] plus zero-fill
//! in [`kspace`]), a small reverse-mode autodiff engine ([`nn`]) that a
//! WGAN-GP trainer ([`gan`]) runs on, fusion of the per-method outputs
//! ([`ensemble`]), and the evaluation/plumbing layers ([`metrics`],
//! [`phantom`], [`corpus`], [`config`], [`pipeline`]).

pub mod classical;
pub mod config;
pub mod corpus;
pub mod ensemble;
pub mod error;
pub mod fft;
pub mod gan;
pub mod image;
pub mod io;
pub mod kspace;
pub mod metrics;
pub mod nn;
pub mod phantom;
pub mod pipeline;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
