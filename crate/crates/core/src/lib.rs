//! Satellite-image restoration pipeline: physics-based sensor degradation
//! (parametric MTF blur, GSD resampling, signal-dependent noise), a residual
//! convolutional restoration network trained on simulated pairs, physical and
//! full-reference quality estimators that close the simulate→measure loop,
//! and simulated INT8 post-training quantization.
//!
//! The crate is organized by pipeline stage:
//!
//! - [`imagery`] — rasters, TIFF I/O, patching, test targets, manifests
//! - [`sensor`] — degradation model and its calibration
//! - [`metrics`] — PSNR/SSIM and the slanted-edge / variance estimators
//! - [`net`] — the restoration network, training, and tiled inference
//! - [`quant`] — INT8 fake quantization and drift reporting
//! - [`dataset`] — paired-patch corpus construction
//!
//! All randomized operations are deterministic functions of their explicit
//! seeds and independent of worker count.

pub mod dataset;
pub mod error;
mod fft;
pub mod imagery;
pub mod metrics;
pub mod net;
pub mod quant;
pub mod rng;
pub mod sensor;

pub use error::{Error, Result};
pub use imagery::{DatasetManifest, ManifestEntry, PanImage, RadiometricScale, Split};
pub use sensor::{DegradationConfig, MtfConfig, NoiseConfig, NoiseParams};
