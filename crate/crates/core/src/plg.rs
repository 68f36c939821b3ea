//! Pseudo-label generation: threshold the softmax-normalized cosine similarity
//! between each segment embedding and every category embedding, then mask by
//! the weak video label.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{l2_normalize_rows, softmax_row, Matrix};
use crate::types::{EmbeddingSet, LabelMatrix, Modality, ScoreMatrix, VideoLabel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlgConfig {
    pub tau_v: f64,
    pub tau_a: f64,
    /// Label-smoothing factor for the video-level baseline targets.
    pub smoothing: f64,
}

impl Default for PlgConfig {
    fn default() -> Self {
        Self {
            tau_v: 0.041,
            tau_a: 0.038,
            smoothing: 0.1,
        }
    }
}

impl PlgConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, tau) in [("tau_v", self.tau_v), ("tau_a", self.tau_a)] {
            if !(tau > 0.0 && tau < 1.0) {
                return Err(Error::Config(format!("{name} = {tau} must lie in (0, 1)")));
            }
        }
        if !(0.0..1.0).contains(&self.smoothing) {
            return Err(Error::Config(format!(
                "smoothing = {} must lie in [0, 1)",
                self.smoothing
            )));
        }
        Ok(())
    }

    pub fn tau(&self, m: Modality) -> f64 {
        match m {
            Modality::Audio => self.tau_a,
            Modality::Visual => self.tau_v,
        }
    }
}

/// Row `t` is the softmax over categories of `cos(frame_t, class_c)`.
pub fn similarity_scores(emb: &EmbeddingSet) -> Result<ScoreMatrix> {
    let frames = l2_normalize_rows(emb.frames())?;
    let classes = l2_normalize_rows(emb.classes())?;
    let cosines = frames.matmul_t(&classes);
    let mut out = Matrix::zeros(cosines.rows(), cosines.cols());
    for t in 0..cosines.rows() {
        out.row_mut(t).copy_from_slice(&softmax_row(cosines.row(t)));
    }
    ScoreMatrix::new(out)
}

/// `1[s_t ≥ τ] ⊙ y`.
pub fn mask_and_label(scores: &[f64], tau: f64, y: &VideoLabel) -> Vec<bool> {
    debug_assert_eq!(scores.len(), y.len());
    scores
        .iter()
        .zip(y.bits())
        .map(|(&s, &on)| on && s >= tau)
        .collect()
}

pub fn generate_segment_labels(
    emb: &EmbeddingSet,
    tau: f64,
    y: &VideoLabel,
    modality: Modality,
) -> Result<LabelMatrix> {
    let scores = similarity_scores(emb)?;
    labels_from_scores(&scores, tau, y, modality)
}

/// Thresholds precomputed scores; used by sweeps that reuse one score matrix.
pub fn labels_from_scores(
    scores: &ScoreMatrix,
    tau: f64,
    y: &VideoLabel,
    modality: Modality,
) -> Result<LabelMatrix> {
    let c = scores.matrix().cols();
    if y.len() != c {
        return Err(Error::shape(format!("video label of length {c}"), y.len()));
    }
    let t = scores.segments();
    let mut out = LabelMatrix::zeros(t, c, modality);
    for ti in 0..t {
        for (ci, on) in mask_and_label(scores.row(ti), tau, y).into_iter().enumerate() {
            out.set(ti, ci, on);
        }
    }
    Ok(out)
}

/// `ŷ_c = 1` iff any segment carries category `c`.
pub fn segment_to_video_label(labels: &LabelMatrix) -> VideoLabel {
    VideoLabel::new(
        (0..labels.categories())
            .map(|c| (0..labels.segments()).any(|t| labels.get(t, c)))
            .collect(),
    )
}

/// `(1 − s)·y + s/C`, the smoothed video-level target of the baseline objective.
pub fn smooth_video_label(y: &VideoLabel, smoothing: f64) -> Vec<f64> {
    let c = y.len() as f64;
    y.to_f64()
        .into_iter()
        .map(|v| (1.0 - smoothing) * v + smoothing / c)
        .collect()
}
