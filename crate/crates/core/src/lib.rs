//! Localization schemes, Markov-chain kernels and mixing-bound certificates for
//! small spin systems on `{-1,1}^n`, plus restricted Gaussian dynamics on
//! one-dimensional grids.

// `!(x > 0.0)` is how NaN inputs get rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod identities;
pub mod kernels;
pub mod linalg;
pub mod localization;
pub mod measure;
pub mod models;
pub mod pipelines;
pub mod report;
pub mod rgo_grid;
pub mod rng;
pub mod spectra;
pub mod stability;

pub use error::{Error, Result};
pub use kernels::{Kernel, Support};
pub use localization::{LocEnsemble, LocPath, Scheme};
pub use measure::{kl, Influence, Moments, SpinMeasure, N_MAX};
pub use models::{Graph, HardcoreSpec, IsingSpec, ModelSpec};
pub use pipelines::PipelineReport;
pub use report::{CheckRecord, Envelope, Relation};
pub use rgo_grid::GridMeasure;
pub use stability::Certificate;
