//! Forward-loss pseudo-label denoising.
//!
//! For each modality selected for denoising: elementwise BCE between a trained
//! model's segment predictions and the current pseudo labels, masked by the
//! video-level pseudo label; per category, cells whose loss reaches `α` times
//! the mean of the `k` smallest losses in that column are flipped.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{bce, Matrix};
use crate::plg::segment_to_video_label;
use crate::types::{LabelMatrix, Modality, VideoLabel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PldParams {
    pub k: usize,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PldConfig {
    pub visual: PldParams,
    pub audio: PldParams,
    pub targets: Vec<Modality>,
}

impl Default for PldConfig {
    fn default() -> Self {
        Self {
            visual: PldParams { k: 5, alpha: 30.0 },
            audio: PldParams { k: 6, alpha: 400.0 },
            targets: vec![Modality::Visual],
        }
    }
}

impl PldConfig {
    pub fn params(&self, m: Modality) -> PldParams {
        match m {
            Modality::Audio => self.audio,
            Modality::Visual => self.visual,
        }
    }

    pub fn targets(&self, m: Modality) -> bool {
        self.targets.contains(&m)
    }

    pub fn validate(&self, segments: usize) -> Result<()> {
        for m in &self.targets {
            let p = self.params(*m);
            if p.k == 0 || p.k > segments {
                return Err(Error::Config(format!(
                    "{m} PLD k = {} must satisfy 1 <= k <= T = {segments}",
                    p.k
                )));
            }
            if !(p.alpha > 0.0) {
                return Err(Error::Config(format!("{m} PLD alpha = {} must be > 0", p.alpha)));
            }
        }
        Ok(())
    }
}

/// `M[t,c] = bce(P[t,c], Ŷ[t,c])`, no reduction.
pub fn forward_loss_matrix(p: &Matrix, labels: &LabelMatrix) -> Result<Matrix> {
    if p.shape() != labels.matrix().shape() {
        return Err(Error::shape(format!("{:?}", labels.matrix().shape()), format!("{:?}", p.shape())));
    }
    Ok(p.zip_map(labels.matrix(), bce))
}

/// `M'[t,c] = ŷ_c · M[t,c]`.
pub fn mask_loss_matrix(m: &Matrix, video: &VideoLabel) -> Result<Matrix> {
    if video.len() != m.cols() {
        return Err(Error::shape(format!("video label of length {}", m.cols()), video.len()));
    }
    Ok(Matrix::from_fn(m.rows(), m.cols(), |t, c| {
        if video.get(c) {
            m.get(t, c)
        } else {
            0.0
        }
    }))
}

/// Mean of the `k` smallest entries of `col`.
fn mean_of_smallest(col: &[f64], k: usize) -> f64 {
    let mut sorted = col.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted[..k].iter().sum::<f64>() / k as f64
}

/// `φ_t = 1[col_t ≥ α·μ]` with `μ` the mean of the `k` smallest losses. A column
/// with `μ = 0` (masked out, or fit exactly) yields no flips.
pub fn flip_mask_column(col: &[f64], k: usize, alpha: f64) -> Result<Vec<bool>> {
    if k == 0 || k > col.len() {
        return Err(Error::Config(format!(
            "top-k size {k} must satisfy 1 <= k <= {}",
            col.len()
        )));
    }
    let mu = mean_of_smallest(col, k);
    if mu <= 0.0 {
        return Ok(vec![false; col.len()]);
    }
    let threshold = alpha * mu;
    Ok(col.iter().map(|&l| l >= threshold).collect())
}

/// Column-wise flip mask for a whole (masked) loss matrix.
pub fn flip_mask(masked_loss: &Matrix, k: usize, alpha: f64) -> Result<Matrix> {
    let mut out = Matrix::zeros(masked_loss.rows(), masked_loss.cols());
    for c in 0..masked_loss.cols() {
        for (t, on) in flip_mask_column(&masked_loss.column(c), k, alpha)?.into_iter().enumerate() {
            if on {
                out.set(t, c, 1.0);
            }
        }
    }
    Ok(out)
}

/// Reverses every label where `flips` is 1.
pub fn refine_labels(labels: &LabelMatrix, flips: &Matrix) -> Result<LabelMatrix> {
    if flips.shape() != labels.matrix().shape() {
        return Err(Error::shape(format!("{:?}", labels.matrix().shape()), format!("{:?}", flips.shape())));
    }
    let mut out = labels.clone();
    for t in 0..labels.segments() {
        for c in 0..labels.categories() {
            if flips.get(t, c) == 1.0 {
                out.set(t, c, !labels.get(t, c));
            }
        }
    }
    Ok(out)
}

/// Flip counts for one modality of one video.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FlipStats {
    /// 0 → 1 flips per category.
    pub turned_on: Vec<usize>,
    /// 1 → 0 flips per category.
    pub turned_off: Vec<usize>,
}

impl FlipStats {
    pub fn between(before: &LabelMatrix, after: &LabelMatrix) -> Self {
        let c = before.categories();
        let mut s = Self {
            turned_on: vec![0; c],
            turned_off: vec![0; c],
        };
        for t in 0..before.segments() {
            for ci in 0..c {
                match (before.get(t, ci), after.get(t, ci)) {
                    (false, true) => s.turned_on[ci] += 1,
                    (true, false) => s.turned_off[ci] += 1,
                    _ => {}
                }
            }
        }
        s
    }

    pub fn on_total(&self) -> usize {
        self.turned_on.iter().sum()
    }

    pub fn off_total(&self) -> usize {
        self.turned_off.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiseOutcome {
    pub audio: LabelMatrix,
    pub visual: LabelMatrix,
    pub audio_flips: FlipStats,
    pub visual_flips: FlipStats,
}

/// Denoises one modality's labels given that modality's predictions.
pub fn denoise_modality(
    p: &Matrix,
    labels: &LabelMatrix,
    video: &VideoLabel,
    params: PldParams,
) -> Result<LabelMatrix> {
    let loss = forward_loss_matrix(p, labels)?;
    let masked = mask_loss_matrix(&loss, video)?;
    let phi = flip_mask(&masked, params.k, params.alpha)?;
    refine_labels(labels, &phi)
}

/// Full denoising pass over both modalities; modalities not targeted by `cfg`
/// pass through unchanged. `video_audio`/`video_visual` are the video-level
/// pseudo labels used for masking.
#[allow(clippy::too_many_arguments)]
pub fn denoise(
    p_audio: &Matrix,
    p_visual: &Matrix,
    labels_audio: &LabelMatrix,
    labels_visual: &LabelMatrix,
    video_audio: &VideoLabel,
    video_visual: &VideoLabel,
    cfg: &PldConfig,
) -> Result<DenoiseOutcome> {
    cfg.validate(labels_audio.segments())?;
    let run = |m: Modality, p: &Matrix, labels: &LabelMatrix, video: &VideoLabel| {
        if cfg.targets(m) {
            denoise_modality(p, labels, video, cfg.params(m))
        } else {
            Ok(labels.clone())
        }
    };
    let audio = run(Modality::Audio, p_audio, labels_audio, video_audio)?;
    let visual = run(Modality::Visual, p_visual, labels_visual, video_visual)?;
    Ok(DenoiseOutcome {
        audio_flips: FlipStats::between(labels_audio, &audio),
        visual_flips: FlipStats::between(labels_visual, &visual),
        audio,
        visual,
    })
}

/// [`denoise`] with the video-level masks derived from the segment labels.
pub fn denoise_from_segments(
    p_audio: &Matrix,
    p_visual: &Matrix,
    labels_audio: &LabelMatrix,
    labels_visual: &LabelMatrix,
    cfg: &PldConfig,
) -> Result<DenoiseOutcome> {
    denoise(
        p_audio,
        p_visual,
        labels_audio,
        labels_visual,
        &segment_to_video_label(labels_audio),
        &segment_to_video_label(labels_visual),
        cfg,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_loss_examples() {
        let labels = LabelMatrix::from_rows(&[[1.0, 0.0]], Modality::Visual).unwrap();
        let exact = forward_loss_matrix(labels.matrix(), &labels).unwrap();
        assert!(exact.as_slice().iter().all(|&x| x < 1e-6));

        let half = forward_loss_matrix(&Matrix::filled(1, 2, 0.5), &labels).unwrap();
        assert!(half.as_slice().iter().all(|&x| (x - 2f64.ln()).abs() < 1e-12));

        let zero = LabelMatrix::from_rows(&[[0.0]], Modality::Visual).unwrap();
        let m = forward_loss_matrix(&Matrix::from_rows(&[[0.9]]), &zero).unwrap();
        assert!((m.get(0, 0) - 2.302585).abs() < 1e-6);
    }

    #[test]
    fn mask_examples() {
        let m = Matrix::from_rows(&[[2.0, 3.0]]);
        assert_eq!(mask_loss_matrix(&m, &VideoLabel::new(vec![true, true])).unwrap(), m);
        assert_eq!(mask_loss_matrix(&m, &VideoLabel::zeros(2)).unwrap(), Matrix::zeros(1, 2));
        assert_eq!(
            mask_loss_matrix(&m, &VideoLabel::new(vec![true, false])).unwrap(),
            Matrix::from_rows(&[[2.0, 0.0]])
        );
    }

    #[test]
    fn flip_column_examples() {
        let col = [0.01, 0.02, 0.01, 3.4, 3.5];
        assert_eq!(
            flip_mask_column(&col, 2, 30.0).unwrap(),
            vec![false, false, false, true, true]
        );
        assert_eq!(flip_mask_column(&[0.7; 6], 3, 2.0).unwrap(), vec![false; 6]);
        assert_eq!(flip_mask_column(&[0.0; 4], 2, 30.0).unwrap(), vec![false; 4]);
        assert!(matches!(flip_mask_column(&col, 6, 30.0), Err(Error::Config(_))));
        assert!(flip_mask_column(&col, 0, 30.0).is_err());
    }

    #[test]
    fn refine_examples() {
        let y = LabelMatrix::from_rows(&[[1.0], [1.0], [0.0], [0.0]], Modality::Visual).unwrap();
        assert_eq!(refine_labels(&y, &Matrix::zeros(4, 1)).unwrap(), y);
        let phi = Matrix::from_rows(&[[0.0], [0.0], [1.0], [1.0]]);
        let once = refine_labels(&y, &phi).unwrap();
        assert_eq!(once.column_bits(0), vec![true; 4]);
        assert_eq!(refine_labels(&once, &phi).unwrap(), y);
    }

    #[test]
    fn no_targets_passes_through() {
        let la = LabelMatrix::from_rows(&[[1.0], [0.0]], Modality::Audio).unwrap();
        let lv = LabelMatrix::from_rows(&[[0.0], [1.0]], Modality::Visual).unwrap();
        let p = Matrix::from_rows(&[[0.01], [0.99]]);
        let cfg = PldConfig {
            visual: PldParams { k: 1, alpha: 1.5 },
            audio: PldParams { k: 1, alpha: 1.5 },
            targets: vec![],
        };
        let out = denoise_from_segments(&p, &p, &la, &lv, &cfg).unwrap();
        assert_eq!((out.audio, out.visual), (la, lv));
    }

    #[test]
    fn single_video_flip_instance() {
        // predictions chosen so the forward losses are ≈ [0.01, 0.02, 0.01, 3.4, 3.5]
        let losses = [0.01f64, 0.02, 0.01, 3.4, 3.5];
        let labels = LabelMatrix::from_rows(&[[1.0], [1.0], [1.0], [0.0], [0.0]], Modality::Visual).unwrap();
        let p = Matrix::from_fn(5, 1, |t, _| {
            if labels.get(t, 0) {
                (-losses[t]).exp()
            } else {
                1.0 - (-losses[t]).exp()
            }
        });
        let cfg = PldConfig {
            visual: PldParams { k: 2, alpha: 30.0 },
            ..PldConfig::default()
        };
        let out = denoise(&p, &p, &labels, &labels, &VideoLabel::new(vec![true]), &VideoLabel::new(vec![true]), &cfg).unwrap();
        assert_eq!(out.visual.column_bits(0), vec![true; 5]);
        assert_eq!(out.visual_flips.on_total(), 2);
        assert_eq!(out.visual_flips.off_total(), 0);
        // audio is not targeted by default
        assert_eq!(out.audio, labels);
    }

    #[test]
    fn defaults_match_reported_setup() {
        let cfg = PldConfig::default();
        assert_eq!((cfg.visual.k, cfg.visual.alpha), (5, 30.0));
        assert_eq!((cfg.audio.k, cfg.audio.alpha), (6, 400.0));
        assert_eq!(cfg.targets, vec![Modality::Visual]);
    }
}
