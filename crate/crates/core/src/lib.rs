//! Self-supervised pre-training of a segmented transformer over
//! multi-disease epidemic corpora, two-stage fine-tuning onto forecasting,
//! peak and onset tasks, and a rolling real-time evaluation harness.

pub mod data;
pub mod error;
pub mod harness;
pub mod model;
pub mod par;
pub mod ssl;
pub mod tasks;
pub mod train;

pub use error::{Error, Result};
pub use par::Exec;
