//! Audio-visual wake word spotting with iterative fine-tuned lottery-ticket
//! pruning, end to end on CPU.
//!
//! The crate is layered bottom-up:
//!
//! - [`tensor`]: `f64` tensors and a reverse-mode differentiation tape.
//! - [`nn`]: FC, convolution, inverted-residual bottleneck and LSTM layers,
//!   the parameter registry with pruning masks, and FLOPs accounting.
//! - [`features`]: log-mel filterbank front end and lip-frame resizing.
//! - [`models`]: audio-only, video-only and audio-visual classifiers, the
//!   loss, Adam training, checkpoints.
//! - [`pruning`]: magnitude masks, iterative fine-tuned pruning, the one-shot
//!   baseline and sequential encoder-first pruning.
//! - [`corpus`]: a deterministic synthetic audio-visual corpus.
//! - [`harness`]: evaluation, threshold calibration, reports and the
//!   experiment pipeline used by the `avwake` binary.

pub mod corpus;
pub mod error;
pub mod features;
pub mod harness;
pub mod models;
pub mod nn;
pub mod pruning;
pub mod tensor;

pub use error::{Error, Result};
