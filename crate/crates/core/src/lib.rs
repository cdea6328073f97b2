//! Multi-view chest x-ray report generation at desk scale.
//!
//! The crate is `no_std` with `alloc`: every model component, the synthetic
//! corpus, the metrics and the training loops are pure computations over
//! in-memory data. File formats, configuration files and the command-line
//! driver live in the companion `mvh` crate.
//!
//! Layout:
//!
//! * [`autodiff`] — tape-based reverse-mode differentiation over `f64` tensors
//! * [`encoder`] — conv backbone, observation/concept heads, view-consistency loss, Grad-CAM
//! * [`attention`] — the three multi-view fusion schemes plus visual and concept attention
//! * [`decoder`] — sentence/word LSTM decoder with a learned stop gate
//! * [`corpus`] — synthetic multi-view dataset, tokenizer, vocabulary, concept mining
//! * [`metrics`] — BLEU, ROUGE-L, METEOR-lite, ROC-AUC
//! * [`harness`] — run configuration and the staged training schedule
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod attention;
pub mod autodiff;
pub mod corpus;
pub mod decoder;
pub mod encoder;
mod error;
pub mod harness;
pub(crate) mod math;
pub mod metrics;
pub mod params;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
