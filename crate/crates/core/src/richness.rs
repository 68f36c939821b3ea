//! Training objectives: the video-level loss, category/segment richness, the
//! richness-aware segment loss and its naive elementwise counterpart, and the
//! combined total with exact gradients w.r.t. every prediction entry.
//!
//! Every BCE term is mean-reduced over its own elements, so the video-level
//! terms average over `C`, the category-richness term over `T` and the
//! segment-richness term over `C`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{bce_mean, bce_mean_grad, clamp_prob, Matrix};
use crate::types::{LabelMatrix, Modality, PredictionBundle, VideoLabel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// `L_V + λ·L_S` with the richness-aware segment loss.
    Richness,
    /// `L_V + λ·L'_S`, elementwise BCE against the segment pseudo labels.
    Naive,
    /// `L_V` alone.
    VideoOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda: f64,
    pub use_cr: bool,
    pub use_sr: bool,
    pub mode: LossMode,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            use_cr: true,
            use_sr: true,
            mode: LossMode::Richness,
        }
    }
}

impl LossConfig {
    pub fn video_only() -> Self {
        Self {
            mode: LossMode::VideoOnly,
            ..Self::default()
        }
    }

    pub fn naive() -> Self {
        Self {
            mode: LossMode::Naive,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda = {} must be >= 0", self.lambda)));
        }
        Ok(())
    }

    pub fn needs_segment_labels(&self) -> bool {
        self.mode != LossMode::VideoOnly
    }
}

/// Supervision for one video.
#[derive(Debug, Clone, PartialEq)]
pub struct Targets {
    /// The weak label `y^{v∪a}`.
    pub video_label: VideoLabel,
    /// Video-level audio target (binary pseudo label, or smoothed).
    pub video_audio: Vec<f64>,
    pub video_visual: Vec<f64>,
    pub seg_audio: Option<LabelMatrix>,
    pub seg_visual: Option<LabelMatrix>,
}

impl Targets {
    pub fn seg(&self, m: Modality) -> Option<&LabelMatrix> {
        match m {
            Modality::Audio => self.seg_audio.as_ref(),
            Modality::Visual => self.seg_visual.as_ref(),
        }
    }

    pub fn video(&self, m: Modality) -> &[f64] {
        match m {
            Modality::Audio => &self.video_audio,
            Modality::Visual => &self.video_visual,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RichnessProfile {
    /// Category richness per segment (length T).
    pub cr: Vec<f64>,
    /// Segment richness per category (length C).
    pub sr: Vec<f64>,
}

impl RichnessProfile {
    /// Label-side profile.
    pub fn from_labels(labels: &LabelMatrix, y: &VideoLabel) -> Result<Self> {
        Ok(Self {
            cr: category_richness(labels.matrix(), y)?,
            sr: segment_richness(&mask_columns(labels.matrix(), y)),
        })
    }

    /// Prediction-side profile: soft counts on the video-label-masked
    /// probabilities, clamped to `[EPS, 1-EPS]`.
    pub fn from_predictions(p: &Matrix, y: &VideoLabel) -> Result<Self> {
        let masked = mask_columns(p, y);
        Ok(Self {
            cr: category_richness(&masked, y)?.into_iter().map(clamp_prob).collect(),
            sr: segment_richness(&masked).into_iter().map(clamp_prob).collect(),
        })
    }
}

fn mask_columns(m: &Matrix, y: &VideoLabel) -> Matrix {
    Matrix::from_fn(m.rows(), m.cols(), |t, c| if y.get(c) { m.get(t, c) } else { 0.0 })
}

fn label_count(y: &VideoLabel) -> Result<f64> {
    match y.count() {
        0 => Err(Error::DegenerateInput(
            "video label has no active category; richness is undefined".into(),
        )),
        n => Ok(n as f64),
    }
}

/// `cr_t = Σ_c y_c·Y_{t,c} / Σ_c y_c`. Columns outside the video label are ignored.
pub fn category_richness(m: &Matrix, y: &VideoLabel) -> Result<Vec<f64>> {
    if y.len() != m.cols() {
        return Err(Error::shape(format!("video label of length {}", m.cols()), y.len()));
    }
    let n = label_count(y)?;
    Ok((0..m.rows())
        .map(|t| y.active().map(|c| m.get(t, c)).sum::<f64>() / n)
        .collect())
}

/// `sr_c = (1/T)·Σ_t Y_{t,c}`.
pub fn segment_richness(m: &Matrix) -> Vec<f64> {
    let t = m.rows() as f64;
    m.column_sums().into_iter().map(|s| s / t).collect()
}

/// Loss components for one video.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub video: f64,
    pub segment: f64,
    pub total: f64,
}

/// `BCE(p_union, y) + BCE(p_a, ŷ_a) + BCE(p_v, ŷ_v)`, each mean-reduced over C.
pub fn video_loss(pred: &PredictionBundle, targets: &Targets) -> f64 {
    let y = targets.video_label.to_f64();
    bce_mean(&pred.video_union, &y)
        + bce_mean(&pred.video_audio, &targets.video_audio)
        + bce_mean(&pred.video_visual, &targets.video_visual)
}

/// Richness-aware segment loss summed over both modalities.
pub fn richness_loss(
    seg_audio: &Matrix,
    seg_visual: &Matrix,
    labels_audio: &LabelMatrix,
    labels_visual: &LabelMatrix,
    y: &VideoLabel,
    use_cr: bool,
    use_sr: bool,
) -> Result<f64> {
    let mut total = 0.0;
    for (p, labels) in [(seg_audio, labels_audio), (seg_visual, labels_visual)] {
        let target = RichnessProfile::from_labels(labels, y)?;
        let pred = RichnessProfile::from_predictions(p, y)?;
        if use_cr {
            total += bce_mean(&pred.cr, &target.cr);
        }
        if use_sr {
            total += bce_mean(&pred.sr, &target.sr);
        }
    }
    Ok(total)
}

/// Elementwise BCE between segment predictions and pseudo labels, mean over
/// the T×C cells, summed over modalities.
pub fn naive_segment_loss(
    seg_audio: &Matrix,
    seg_visual: &Matrix,
    labels_audio: &LabelMatrix,
    labels_visual: &LabelMatrix,
) -> f64 {
    bce_mean(seg_audio.as_slice(), labels_audio.matrix().as_slice())
        + bce_mean(seg_visual.as_slice(), labels_visual.matrix().as_slice())
}

fn segment_labels<'a>(targets: &'a Targets) -> Result<(&'a LabelMatrix, &'a LabelMatrix)> {
    match (&targets.seg_audio, &targets.seg_visual) {
        (Some(a), Some(v)) => Ok((a, v)),
        _ => Err(Error::Config(
            "segment-level loss requested but targets carry no segment labels".into(),
        )),
    }
}

fn segment_loss(pred: &PredictionBundle, targets: &Targets, cfg: &LossConfig) -> Result<f64> {
    match cfg.mode {
        LossMode::VideoOnly => Ok(0.0),
        LossMode::Naive => {
            let (a, v) = segment_labels(targets)?;
            Ok(naive_segment_loss(&pred.seg_audio, &pred.seg_visual, a, v))
        }
        LossMode::Richness => {
            if !cfg.use_cr && !cfg.use_sr {
                return Ok(0.0);
            }
            let (a, v) = segment_labels(targets)?;
            richness_loss(
                &pred.seg_audio,
                &pred.seg_visual,
                a,
                v,
                &targets.video_label,
                cfg.use_cr,
                cfg.use_sr,
            )
        }
    }
}

/// `L_V + λ·L_S` (or the naive / video-only variants).
pub fn total_loss(pred: &PredictionBundle, targets: &Targets, cfg: &LossConfig) -> Result<LossBreakdown> {
    let video = video_loss(pred, targets);
    let segment = segment_loss(pred, targets, cfg)?;
    Ok(LossBreakdown {
        video,
        segment,
        total: video + cfg.lambda * segment,
    })
}

/// Gradient of the total loss, shaped like a [`PredictionBundle`].
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionGrad {
    pub seg_audio: Matrix,
    pub seg_visual: Matrix,
    pub video_audio: Vec<f64>,
    pub video_visual: Vec<f64>,
    pub video_union: Vec<f64>,
}

impl PredictionGrad {
    pub fn seg(&self, m: Modality) -> &Matrix {
        match m {
            Modality::Audio => &self.seg_audio,
            Modality::Visual => &self.seg_visual,
        }
    }
}

/// Adds `∂(scale·L_S^m)/∂P^m` for one modality into `grad`.
fn accumulate_richness_grad(
    p: &Matrix,
    labels: &LabelMatrix,
    y: &VideoLabel,
    cfg: &LossConfig,
    scale: f64,
    grad: &mut Matrix,
) -> Result<()> {
    let (t_len, _) = p.shape();
    let target = RichnessProfile::from_labels(labels, y)?;
    let pred = RichnessProfile::from_predictions(p, y)?;
    let n = label_count(y)?;
    // pcr_t = Σ_c y_c P_tc / n  →  ∂pcr_t/∂P_tc = y_c / n
    let d_cr = if cfg.use_cr {
        bce_mean_grad(&pred.cr, &target.cr)
    } else {
        vec![0.0; t_len]
    };
    // psr_c = Σ_t y_c P_tc / T  →  ∂psr_c/∂P_tc = y_c / T
    let d_sr = if cfg.use_sr {
        bce_mean_grad(&pred.sr, &target.sr)
    } else {
        vec![0.0; p.cols()]
    };
    for t in 0..t_len {
        for c in y.active() {
            let g = d_cr[t] / n + d_sr[c] / t_len as f64;
            let cur = grad.get(t, c);
            grad.set(t, c, cur + scale * g);
        }
    }
    Ok(())
}

/// Loss value and exact partial derivatives w.r.t. every entry of `pred`.
pub fn total_loss_grad(
    pred: &PredictionBundle,
    targets: &Targets,
    cfg: &LossConfig,
) -> Result<(LossBreakdown, PredictionGrad)> {
    let loss = total_loss(pred, targets, cfg)?;
    let (t, c) = (pred.segments(), pred.categories());
    let y = targets.video_label.to_f64();
    let mut grad = PredictionGrad {
        seg_audio: Matrix::zeros(t, c),
        seg_visual: Matrix::zeros(t, c),
        video_audio: bce_mean_grad(&pred.video_audio, &targets.video_audio),
        video_visual: bce_mean_grad(&pred.video_visual, &targets.video_visual),
        video_union: bce_mean_grad(&pred.video_union, &y),
    };
    match cfg.mode {
        LossMode::VideoOnly => {}
        LossMode::Naive => {
            let (la, lv) = segment_labels(targets)?;
            for (p, labels, g) in [
                (&pred.seg_audio, la, &mut grad.seg_audio),
                (&pred.seg_visual, lv, &mut grad.seg_visual),
            ] {
                let d = bce_mean_grad(p.as_slice(), labels.matrix().as_slice());
                for (gi, di) in g.as_mut_slice().iter_mut().zip(d) {
                    *gi = cfg.lambda * di;
                }
            }
        }
        LossMode::Richness => {
            if cfg.use_cr || cfg.use_sr {
                let (la, lv) = segment_labels(targets)?;
                let yl = &targets.video_label;
                accumulate_richness_grad(&pred.seg_audio, la, yl, cfg, cfg.lambda, &mut grad.seg_audio)?;
                accumulate_richness_grad(&pred.seg_visual, lv, yl, cfg, cfg.lambda, &mut grad.seg_visual)?;
            }
        }
    }
    Ok((loss, grad))
}
