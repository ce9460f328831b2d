//! Experiment plumbing: configuration files, synthetic corpora, runs,
//! data-fraction sweeps and plots.

mod config;
mod plot;
mod runner;
mod sweep;
mod synth;

pub use config::{apply_override, Ablation, EvalWeeks, ExperimentConfig, TargetSeries, OUTPUT_ROOT_ENV};
pub use plot::emit_plots;
pub use runner::{pretraining_corpus, run, run_file, RunOutcome, SeedOutcome};
pub use sweep::{sweep_data_fraction, SweepRow, SweepTable};
pub use synth::{generate_synthetic, DiseaseSpec, SyntheticCorpusSpec};

use std::path::Path;

use crate::error::Error;

/// 1-based line of a byte offset.
pub(crate) fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Converts a TOML error into a line-addressed parse error.
pub(crate) fn toml_error(path: &Path, text: &str, e: &toml::de::Error) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line: e.span().map_or(1, |s| line_of(text, s.start)),
        message: e.message().to_string(),
    }
}

impl Error {
    /// True for errors caused by the user's input files rather than by a
    /// failure during execution.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Parse { .. } | Error::Config(_) | Error::ConfigMismatch(_))
    }
}
