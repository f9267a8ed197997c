//! Robustness and faithfulness evaluation of visual explanation methods
//! under common image augmentations.
//!
//! The crate bundles five pieces:
//!
//! * [`nn`] — a minimal sequential CNN engine (forward, gradients, a small
//!   SGD trainer and a portable weight format),
//! * [`attribution`] — eight pixel-attribution methods over that engine,
//! * [`augment`] — calibrated color and geometric augmentations together
//!   with explanation warping and validity masks,
//! * [`metrics`] — correlation / top-k / response-curve / pixel-flipping
//!   kernels and interval calibration,
//! * [`harness`] — corpus handling and the deterministic evaluation loop
//!   that produces CSV and JSON reports.
//!
//! Everything is deterministic for a fixed seed: with the default `parallel`
//! feature the evaluation grid is spread over a rayon pool, but collection
//! order and aggregation order are fixed, so reports are byte-identical for
//! any worker count (and to the sequential build without the feature).

pub mod attribution;
pub mod augment;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod nn;
pub mod parallel;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
