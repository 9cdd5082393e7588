//! Stereo-pair 3D object reconstruction.
//!
//! The crate bundles everything needed to train and validate the stereo
//! reconstruction pipeline end to end on a CPU:
//!
//! * [`autodiff`]: a small reverse-mode tape with the conv/BN/pointwise
//!   vocabulary the networks use, plus finite-difference gradient checks
//!   and the binary checkpoint container.
//! * [`scenegen`]: procedural meshes, a z-buffer stereo rasterizer and all
//!   ground truth (depth, disparity, occlusion, voxels, surface points).
//! * [`nets`]: DispNet-B, the RecNet encoder/decoders and CorrNet.
//! * [`metrics`]: training losses and evaluation metrics.
//! * [`sgbm`]: a classical semi-global matching disparity baseline.
//! * [`trainer`]: Adam, staged training, the ablation and disparity-swap
//!   harnesses.

pub mod autodiff;
pub mod error;
pub mod metrics;
pub mod nets;
pub mod rng;
pub mod scenegen;
pub mod selftest;
pub mod sgbm;
pub mod trainer;

pub use error::{Error, Result};
