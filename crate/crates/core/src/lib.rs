//! Attention-based sequence recognizer for small glyph-strip images, with
//! unsupervised domain adaptation by latent entropy minimization and
//! class-balanced self-paced selection.
//!
//! The numeric core (`engine`, `recognizer`, `losses`, `self_paced`) is
//! generic over [`engine::Scalar`]; the aliases below fix it to `f64`, which
//! is what training, checkpoints and the command line use.

pub(crate) mod binio;
pub mod cli;
pub mod engine;
pub mod error;
pub mod fd_suite;
pub mod glyph_data;
pub mod losses;
pub mod metrics;
pub mod recognizer;
pub mod rng;
pub mod self_paced;
pub mod trainer;

pub use error::{Error, Result};

pub type Tensor = engine::Tensor<f64>;
pub type Tape = engine::Tape<f64>;
pub type Params = recognizer::Params<f64>;
pub type Recognizer = recognizer::Recognizer<f64>;
pub type DecoderOutput = recognizer::DecoderOutput<f64>;
pub type PredictionPool = self_paced::PredictionPool<f64>;
