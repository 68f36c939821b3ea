//! Dataset IO, the synthetic corpus, stage orchestration and the CLI.

pub mod cli;
pub mod dataset;
pub mod experiment;
pub mod manifest;
pub mod synth;

pub use dataset::{read_labels, write_labels, Dataset, LabelSet, Split, VideoRecord};
pub use experiment::{avel_labels, run_ablation, AblationConfig, AblationRow, AblationTable};
pub use synth::{generate, SynthConfig, SynthMeta};

/// Worker count from `AVVP_WORKERS`, defaulting to one.
pub fn workers_from_env() -> usize {
    std::env::var("AVVP_WORKERS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(1)
}
