//! Seeded synthetic corpus with planted segment-level ground truth.
//!
//! Class embeddings are orthonormal per modality, with one extra background
//! direction `b` orthogonal to all of them. A segment whose active classes are
//! `S` is embedded as `normalize(m·Σ_{c∈S} u_c + b)`, then perturbed by
//! `σ`-scaled Gaussian noise and renormalized. Its cosine with an active class
//! is `m/√(|S|m²+1)` and with any other class `0`, so the softmax scores of
//! active and inactive classes are separated by a gap that depends only on
//! `m`, `C` and the largest `|S|`. A segment without events borrows a class
//! outside the video label, which the PLG mask then discards.
//!
//! Model features are a fixed random projection of the noise-free content
//! `Σ_{c∈S} u_c + b/2` plus Gaussian noise. With `visual_occlusion > 0` the
//! last one or two segments of some visual events are hidden from the visual
//! embedding (never from the features or the ground truth), which produces the
//! missed-segment errors that label denoising is meant to repair.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, Split, VideoRecord};
use crate::error::{Error, Result};
use crate::metrics::VideoParse;
use crate::numeric::{dot, Matrix};
use crate::types::{EventVocabulary, LabelMatrix, Modality, VideoLabel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub segments: usize,
    pub categories: usize,
    /// Model feature dimension.
    pub feature_dim: usize,
    /// Embedding dimension of the zero-shot space; at least `categories + 1`.
    pub embed_dim: usize,
    pub events_min: usize,
    pub events_max: usize,
    pub span_min: usize,
    pub span_max: usize,
    /// Embedding noise scale.
    pub sigma: f64,
    pub margin: f64,
    pub feature_noise: f64,
    /// Probability that a visual event loses its last one or two segments in
    /// the visual embedding.
    pub visual_occlusion: f64,
    /// Probability that a visual event spills into the segment just before
    /// (or, at the start of the video, just after) its span in the visual
    /// embedding.
    pub visual_spill: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            train: 600,
            val: 100,
            test: 100,
            segments: 10,
            categories: 25,
            feature_dim: 64,
            embed_dim: 32,
            events_min: 1,
            events_max: 3,
            span_min: 2,
            span_max: 10,
            sigma: 0.05,
            margin: 3.0,
            feature_noise: 0.5,
            visual_occlusion: 0.0,
            visual_spill: 0.0,
            seed: 7,
        }
    }
}

impl SynthConfig {
    /// Noise-free embeddings.
    pub fn clean() -> Self {
        Self {
            sigma: 0.0,
            ..Self::default()
        }
    }

    /// The fixed-seed corpus used by the ablation harness: visual pseudo
    /// labels miss event tails and spill one segment early.
    pub fn benchmark() -> Self {
        Self {
            visual_occlusion: 0.5,
            visual_spill: 0.5,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Infeasible(msg));
        if self.segments == 0 || self.categories == 0 || self.feature_dim == 0 {
            return fail("segments, categories and feature_dim must be positive".into());
        }
        if self.train == 0 {
            return fail("at least one training video is required".into());
        }
        if self.events_min == 0 || self.events_min > self.events_max {
            return fail(format!("events range [{}, {}] is empty or starts at 0", self.events_min, self.events_max));
        }
        if self.events_max > self.categories {
            return fail(format!("{} events per video need more than {} categories", self.events_max, self.categories));
        }
        if self.span_min == 0 || self.span_min > self.span_max || self.span_max > self.segments {
            return fail(format!(
                "span range [{}, {}] does not fit in {} segments",
                self.span_min, self.span_max, self.segments
            ));
        }
        if self.embed_dim < self.categories + 1 {
            return fail(format!("embed_dim {} < categories + 1", self.embed_dim));
        }
        if !(self.margin > 0.0) {
            return fail(format!("margin {} must be > 0", self.margin));
        }
        if !(self.sigma >= 0.0 && self.feature_noise >= 0.0) {
            return fail("noise scales must be >= 0".into());
        }
        for (name, p) in [("visual_occlusion", self.visual_occlusion), ("visual_spill", self.visual_spill)] {
            if !(0.0..=1.0).contains(&p) {
                return fail(format!("{name} {p} outside [0, 1]"));
            }
        }
        let (lo, hi) = self.score_gap();
        if !(lo < hi) {
            return fail(format!("margin {} leaves no score gap ({lo:.6} >= {hi:.6})", self.margin));
        }
        Ok(())
    }

    /// `(largest inactive score, smallest active score)` of noise-free segments.
    pub fn score_gap(&self) -> (f64, f64) {
        let c = self.categories as f64;
        let m = self.margin;
        let active_cos = |k: f64| m / (k * m * m + 1.0).sqrt();
        // inactive classes peak when a single class is active
        let e1 = active_cos(1.0).exp();
        let inactive = 1.0 / (e1 + c - 1.0);
        let k = self.events_max as f64;
        let ek = active_cos(k).exp();
        let active = ek / (k * ek + c - k);
        (inactive, active)
    }

    /// Midpoint of the noise-free score gap.
    pub fn planted_threshold(&self) -> f64 {
        let (lo, hi) = self.score_gap();
        0.5 * (lo + hi)
    }
}

/// Generator settings stored with a corpus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthMeta {
    pub config: SynthConfig,
    pub planted_threshold: f64,
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// `n` orthonormal rows in `dim` dimensions by Gram-Schmidt.
fn orthonormal_rows(n: usize, dim: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(n);
    while out.len() < n {
        let mut v: Vec<f64> = (0..dim).map(|_| gaussian(rng)).collect();
        for u in &out {
            let p = dot(&v, u);
            v.iter_mut().zip(u).for_each(|(x, y)| *x -= p * y);
        }
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-6 {
            v.iter_mut().for_each(|x| *x /= norm);
            out.push(v);
        }
    }
    Matrix::from_rows(&out)
}

fn normalize(v: &mut [f64]) {
    let n = dot(v, v).sqrt();
    v.iter_mut().for_each(|x| *x /= n);
}

struct ModalitySpace {
    /// `C×E`, orthonormal rows.
    classes: Matrix,
    background: Vec<f64>,
    /// `E×d` feature projection.
    projection: Matrix,
}

impl ModalitySpace {
    fn new(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Self {
        let basis = orthonormal_rows(cfg.categories + 1, cfg.embed_dim, rng);
        let classes = Matrix::from_fn(cfg.categories, cfg.embed_dim, |i, j| basis.get(i, j));
        let background = basis.row(cfg.categories).to_vec();
        let scale = 1.0 / (cfg.feature_dim as f64).sqrt();
        let projection = Matrix::from_fn(cfg.embed_dim, cfg.feature_dim, |_, _| scale * gaussian(rng));
        Self {
            classes,
            background,
            projection,
        }
    }

    fn embed(&self, active: &[usize], cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut v = self.background.clone();
        for &c in active {
            v.iter_mut()
                .zip(self.classes.row(c))
                .for_each(|(x, u)| *x += cfg.margin * u);
        }
        normalize(&mut v);
        if cfg.sigma > 0.0 {
            v.iter_mut().for_each(|x| *x += cfg.sigma * gaussian(rng));
            normalize(&mut v);
        }
        v
    }

    fn feature(&self, active: &[usize], cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut content: Vec<f64> = self.background.iter().map(|b| 0.5 * b).collect();
        for &c in active {
            content.iter_mut().zip(self.classes.row(c)).for_each(|(x, u)| *x += u);
        }
        let noise = cfg.feature_noise / (cfg.feature_dim as f64).sqrt();
        (0..cfg.feature_dim)
            .map(|j| {
                let proj: f64 = content.iter().enumerate().map(|(i, x)| x * self.projection.get(i, j)).sum();
                proj + noise * gaussian(rng)
            })
            .collect()
    }
}

struct PlantedVideo {
    label: VideoLabel,
    truth: [LabelMatrix; 2],
    /// What the zero-shot embedding sees (truth minus occluded cells).
    visible: [LabelMatrix; 2],
}

fn sample_span(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> (usize, usize) {
    let len = rng.random_range(cfg.span_min..=cfg.span_max);
    let start = rng.random_range(0..=cfg.segments - len);
    (start, start + len)
}

fn plant(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> PlantedVideo {
    let (t, c) = (cfg.segments, cfg.categories);
    let n = rng.random_range(cfg.events_min..=cfg.events_max);
    let mut cats = sample(rng, c, n).into_vec();
    cats.sort_unstable();
    let mut truth = [LabelMatrix::zeros(t, c, Modality::Audio), LabelMatrix::zeros(t, c, Modality::Visual)];
    let mut visible = truth.clone();
    for &cat in &cats {
        // audio-only, visual-only or audio-visual with probabilities 1/4, 1/4, 1/2
        let kind = rng.random_range(0..4);
        let (has_a, has_v) = match kind {
            0 => (true, false),
            1 => (false, true),
            _ => (true, true),
        };
        let shared = has_a && has_v && rng.random_bool(0.5);
        let span_a = sample_span(cfg, rng);
        let span_v = if shared { span_a } else { sample_span(cfg, rng) };
        if has_a {
            for s in span_a.0..span_a.1 {
                truth[0].set(s, cat, true);
                visible[0].set(s, cat, true);
            }
        }
        if has_v {
            let (start, end) = span_v;
            let hidden = if end - start >= 2 && rng.random_bool(cfg.visual_occlusion) {
                rng.random_range(1..=2).min(end - start - 1)
            } else {
                0
            };
            for s in start..end {
                truth[1].set(s, cat, true);
                visible[1].set(s, cat, s < end - hidden);
            }
            if end - start < cfg.segments && rng.random_bool(cfg.visual_spill) {
                let s = if start > 0 { start - 1 } else { end };
                visible[1].set(s, cat, true);
            }
        }
    }
    PlantedVideo {
        label: VideoLabel::from_indices(c, &cats),
        truth,
        visible,
    }
}

fn active_classes(labels: &LabelMatrix, t: usize) -> Vec<usize> {
    (0..labels.categories()).filter(|&c| labels.get(t, c)).collect()
}

fn build_video(
    id: String,
    split: Split,
    cfg: &SynthConfig,
    spaces: &[ModalitySpace; 2],
    rng: &mut ChaCha8Rng,
) -> VideoRecord {
    let planted = plant(cfg, rng);
    let outside: Vec<usize> = (0..cfg.categories).filter(|&c| !planted.label.get(c)).collect();
    let mut feats = Vec::with_capacity(2);
    let mut embs = Vec::with_capacity(2);
    for (mi, space) in spaces.iter().enumerate() {
        let mut feat_rows = Vec::with_capacity(cfg.segments);
        let mut emb_rows = Vec::with_capacity(cfg.segments);
        for t in 0..cfg.segments {
            let truth = active_classes(&planted.truth[mi], t);
            let mut seen = active_classes(&planted.visible[mi], t);
            if seen.is_empty() && !outside.is_empty() {
                seen.push(outside[rng.random_range(0..outside.len())]);
            }
            emb_rows.push(space.embed(&seen, cfg, rng));
            feat_rows.push(space.feature(&truth, cfg, rng));
        }
        feats.push(Matrix::from_rows(&feat_rows));
        embs.push(Matrix::from_rows(&emb_rows));
    }
    let [truth_a, truth_v] = planted.truth;
    let gt = (split != Split::Train).then(|| VideoParse::new(truth_a, truth_v));
    let emb_visual = embs.pop().expect("two modalities");
    let emb_audio = embs.pop().expect("two modalities");
    let feat_visual = feats.pop().expect("two modalities");
    let feat_audio = feats.pop().expect("two modalities");
    VideoRecord {
        id,
        split,
        label: planted.label,
        feat_audio,
        feat_visual,
        emb_audio,
        emb_visual,
        gt,
    }
}

/// Generates the full corpus in memory. Deterministic given `cfg`.
pub fn generate(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let spaces = [ModalitySpace::new(cfg, &mut rng), ModalitySpace::new(cfg, &mut rng)];
    let mut videos = Vec::with_capacity(cfg.train + cfg.val + cfg.test);
    for (split, n) in [(Split::Train, cfg.train), (Split::Val, cfg.val), (Split::Test, cfg.test)] {
        for i in 0..n {
            let id = format!("{}_{i:04}", split.name());
            videos.push(build_video(id, split, cfg, &spaces, &mut rng));
        }
    }
    let [a, v] = spaces;
    Dataset::new(
        EventVocabulary::synthetic(cfg.categories),
        a.classes,
        v.classes,
        videos,
        Some(SynthMeta {
            config: *cfg,
            planted_threshold: cfg.planted_threshold(),
        }),
    )
}
