//! Point cloud completion from partial scans, conditioned on tri-plane
//! canonical coordinate maps.
//!
//! The crate is organized bottom-up:
//!
//! - [`geometry`]: point cloud container, normalization, farthest point
//!   sampling, k-nearest-neighbor graphs, merge-and-resample.
//! - [`ccm`]: orthographic canonical-coordinate-map rendering from three
//!   fixed axis-aligned views.
//! - [`metrics`]: chamfer distances, the arcosh-compressed training loss,
//!   density-aware chamfer, F-score, fidelity, and minimal matching distance.
//! - [`autodiff`]: a small reverse-mode tensor engine (float32 forward,
//!   float64 replay for finite-difference testing) with an Adam optimizer.
//! - [`network`]: the coarse point generator and the two geometry-aware
//!   upsampler stages, built on the autodiff graph.
//! - [`synth`], [`train`], [`eval`], [`config`]: synthetic shape datasets and
//!   the training/evaluation harness behind the CLI.
//! - [`io`]: the on-disk formats (`.xyz`, `.pcb`, `.ccm`, `.ppm`, checkpoints).

pub mod autodiff;
pub mod ccm;
pub mod config;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod network;
pub mod rng;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
