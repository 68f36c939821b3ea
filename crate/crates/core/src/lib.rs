//! Weakly-supervised audio-visual video parsing with segment-wise pseudo labels.
//!
//! The crate covers pseudo-label generation from zero-shot similarity scores
//! ([`plg`]), richness-aware training objectives ([`richness`]), loss-driven
//! label denoising ([`pld`]), a small hybrid-attention parser ([`model`]),
//! segment- and event-level evaluation ([`metrics`]) and the dataset,
//! experiment and CLI plumbing ([`pipeline`]).

pub mod error;
pub mod metrics;
pub mod model;
pub mod numeric;
pub mod pipeline;
pub mod pld;
pub mod plg;
pub mod richness;
pub mod types;

pub use error::{Error, Result};
pub use numeric::{Matrix, EPS};
pub use types::{EmbeddingSet, EventVocabulary, LabelMatrix, Modality, PredictionBundle, ScoreMatrix, VideoLabel};
