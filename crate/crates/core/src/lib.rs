//! Dialog act classification from lexical and acoustic cues.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: dense tensors, a reverse-mode gradient tape and a
//!   finite-difference gradient checker.
//! - [`dsp`]: WAV decoding and frame-level MFCC extraction.
//! - [`text`]: tokenization, vocabularies and embedding tables.
//! - [`model`]: the lexical (LM), acoustic (AM) and fused (LAM) classifiers.
//! - [`training`]: averaged SGD with a stepwise learning-rate schedule.
//! - [`corpus`]: dialog corpora, context windows and a synthetic corpus
//!   generator with rendered audio.
//! - [`eval`]: accuracy, per-class metrics and the analysis reports.

pub mod corpus;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod io;
pub mod model;
pub mod tensor;
pub mod text;
pub mod training;

pub use error::{Error, Result};

pub use model::{Model, ModelConfig, ModelKind, Prediction};
pub use tensor::{Scalar, Tensor};
pub use training::{TrainConfig, TrainOutcome};
