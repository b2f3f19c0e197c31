//! Video-level language-driven cross-modality person re-identification.
//!
//! A from-scratch, double-precision implementation of a ViT tracklet encoder
//! with a learnable spatial-temporal hub, prompt-built text prototypes used as
//! an identity classifier, the metric-learning loss stack, a synthetic
//! visible/infrared tracklet benchmark, retrieval evaluation and an analytic
//! cost profiler.

pub mod autograd;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod imlp;
pub mod kernels;
pub mod losses;
pub mod model;
pub mod nn;
pub mod optim;
pub mod params;
pub mod profiler;
pub mod rng;
pub mod stp;
pub mod tensor;
pub mod train;

pub use autograd::{Tape, Var};
pub use error::{Result, VldError};
pub use tensor::Tensor;
