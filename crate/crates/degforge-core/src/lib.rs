//! Toolkit for forging blind super-resolution training datasets from
//! undertrained image reconstruction models.
//!
//! The pipeline downsamples high-resolution crops, feeds them through a
//! reconstruction network stopped after only a few epochs of training, and
//! pairs the degraded output with the original crop. The remaining modules
//! quantify what the generator did (degradation-diversity entropy, CIEDE2000
//! color difference) and demonstrate the effect by training a small
//! super-resolution model on the forged pairs.
//!
//! Modules:
//! - [`img`]: deterministic image primitives (resampling, color spaces,
//!   quality metrics, synthetic corruptions).
//! - [`nn`]: minimal CPU tensor layers with explicit backpropagation.
//! - [`recon`]: the three reconstruction families (VQ-VAE, VQ-VAE-2, MAE)
//!   and their training loop.
//! - [`forge`]: paired dataset construction, on-disk layout, manifests.
//! - [`analysis`]: degradation classifier, diversity entropy, color-difference
//!   reports, the shifted-dataset experiment.
//! - [`sr`]: a small residual SR network with train/eval loops.
//!
//! The `parallel` feature (on by default) runs dataset-level loops on rayon;
//! without it every loop degrades to the identical sequential code path and
//! produces byte-identical artifacts.

pub mod analysis;
pub mod ckpt;
mod error;
pub mod forge;
pub mod img;
pub mod nn;
pub mod par;
pub mod recon;
pub mod seed;
pub mod sr;

pub use error::{Error, Result};
