//! Domain mixing for aerial semantic segmentation.
//!
//! The pipeline pieces:
//!
//! * [`instances`]: connected-component labeling of label maps.
//! * [`himix`]: hierarchical instance mixing masks, blending, and the
//!   class-mixing baseline.
//! * [`fusion`]: twin-head probability fusion, pseudo-labels, confidence
//!   weighting and the weighted cross-entropy.
//! * [`augment`]: invertible flips and quarter turns, color jitter, resizing.
//! * [`synth`]: synthetic scenes, a mock segmenter, and a full simulated
//!   training step.
//! * [`metrics`] and [`bench`]: IoU and the domain-balance comparison.
//!
//! All randomness is drawn from [`RngState`] values, so every output is a
//! pure function of its inputs and seed.

pub mod augment;
pub mod bench;
pub mod config;
pub mod error;
pub mod fusion;
pub mod grid;
pub mod himix;
pub mod instances;
pub mod io;
pub mod metrics;
pub mod rng;
pub mod synth;

pub use error::{Error, Result};
pub use grid::{Grid, Image, LabelMap, ProbMap, IGNORE};
pub use rng::{derive_rng, RngState};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
