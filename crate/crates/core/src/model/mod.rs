//! A small hybrid-attention parser.
//!
//! Each stream is updated with a residual sum of self-attention and
//! cross-attention, mapped to per-segment event probabilities by a shared
//! linear classifier with a sigmoid, and pooled over time with learned
//! attention weights. The video-level union is the probabilistic sum
//! `p_a + p_v − p_a·p_v`.

mod attention;
mod checkpoint;
mod gradcheck;
mod train;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use attention::{mha_backward, mha_forward, MhaCache, MhaParams};
pub use checkpoint::{Checkpoint, LabelProvenance};
pub use gradcheck::{model_grad_check, relative_error, GradCheckReport};
pub use train::{parse_prediction, predict_video, train, AdamState, EpochStats, EvalExample, TrainExample, TrainOutcome};

use crate::error::{Error, Result};
use crate::numeric::{dot, inside_clamp, sigmoid, softmax_row, Matrix};
use crate::richness::{total_loss_grad, LossBreakdown, LossConfig, PredictionGrad, Targets};
use crate::types::PredictionBundle;
use attention::glorot;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d: usize,
    pub heads: usize,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    pub pred_threshold: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d: 64,
            heads: 1,
            lr: 3e-4,
            batch: 32,
            epochs: 30,
            seed: 2024,
            pred_threshold: 0.5,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.heads == 0 || self.d % self.heads != 0 {
            return Err(Error::Config(format!(
                "d = {} must be a positive multiple of heads = {}",
                self.d, self.heads
            )));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.lr >= 0.0) {
            return Err(Error::Config(format!("learning rate {} must be >= 0", self.lr)));
        }
        Ok(())
    }
}

/// Every trainable tensor of the parser.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub self_audio: MhaParams,
    pub cross_audio: MhaParams,
    pub self_visual: MhaParams,
    pub cross_visual: MhaParams,
    /// `d×C`, shared by both streams.
    pub cls_w: Matrix,
    pub cls_b: Matrix,
    /// `d×1` temporal-attention scorers.
    pub pool_audio_w: Matrix,
    pub pool_audio_b: Matrix,
    pub pool_visual_w: Matrix,
    pub pool_visual_b: Matrix,
}

impl Params {
    pub fn zeros(d: usize, c: usize) -> Self {
        Self {
            self_audio: MhaParams::zeros(d),
            cross_audio: MhaParams::zeros(d),
            self_visual: MhaParams::zeros(d),
            cross_visual: MhaParams::zeros(d),
            cls_w: Matrix::zeros(d, c),
            cls_b: Matrix::zeros(1, c),
            pool_audio_w: Matrix::zeros(d, 1),
            pool_audio_b: Matrix::zeros(1, 1),
            pool_visual_w: Matrix::zeros(d, 1),
            pool_visual_b: Matrix::zeros(1, 1),
        }
    }

    pub fn init<R: Rng + ?Sized>(d: usize, c: usize, rng: &mut R) -> Self {
        Self {
            self_audio: MhaParams::init(d, rng),
            cross_audio: MhaParams::init(d, rng),
            self_visual: MhaParams::init(d, rng),
            cross_visual: MhaParams::init(d, rng),
            cls_w: glorot(d, c, rng),
            cls_b: Matrix::zeros(1, c),
            pool_audio_w: glorot(d, 1, rng),
            pool_audio_b: Matrix::zeros(1, 1),
            pool_visual_w: glorot(d, 1, rng),
            pool_visual_b: Matrix::zeros(1, 1),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.dim(), self.categories())
    }

    pub fn dim(&self) -> usize {
        self.cls_w.rows()
    }

    pub fn categories(&self) -> usize {
        self.cls_w.cols()
    }

    pub fn names() -> Vec<String> {
        let mut names = Vec::new();
        for block in ["self_audio", "cross_audio", "self_visual", "cross_visual"] {
            for t in MhaParams::NAMES {
                names.push(format!("{block}.{t}"));
            }
        }
        for n in ["cls_w", "cls_b", "pool_audio_w", "pool_audio_b", "pool_visual_w", "pool_visual_b"] {
            names.push(n.to_string());
        }
        names
    }

    /// Tensors in the order of [`Params::names`].
    pub fn tensors(&self) -> Vec<&Matrix> {
        let mut out: Vec<&Matrix> = Vec::with_capacity(38);
        for block in [&self.self_audio, &self.cross_audio, &self.self_visual, &self.cross_visual] {
            out.extend(block.tensors());
        }
        out.extend([
            &self.cls_w,
            &self.cls_b,
            &self.pool_audio_w,
            &self.pool_audio_b,
            &self.pool_visual_w,
            &self.pool_visual_b,
        ]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out: Vec<&mut Matrix> = Vec::with_capacity(38);
        for block in [
            &mut self.self_audio,
            &mut self.cross_audio,
            &mut self.self_visual,
            &mut self.cross_visual,
        ] {
            out.extend(block.tensors_mut());
        }
        out.extend([
            &mut self.cls_w,
            &mut self.cls_b,
            &mut self.pool_audio_w,
            &mut self.pool_audio_b,
            &mut self.pool_visual_w,
            &mut self.pool_visual_b,
        ]);
        out
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.as_slice().len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    pub fn add_assign(&mut self, other: &Params) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.tensors_mut() {
            t.scale(s);
        }
    }
}

/// Residual hybrid attention: `Ḟ_a = F_a + MHA(F_a, F_a) + MHA(F_a, F_v)` and
/// symmetrically for the visual stream.
pub fn han_forward(fa: &Matrix, fv: &Matrix, params: &Params, heads: usize) -> (Matrix, Matrix) {
    let (h, _) = han_forward_cached(fa, fv, params, heads);
    h
}

struct HanCache {
    self_audio: MhaCache,
    cross_audio: MhaCache,
    self_visual: MhaCache,
    cross_visual: MhaCache,
}

fn han_forward_cached(fa: &Matrix, fv: &Matrix, params: &Params, heads: usize) -> ((Matrix, Matrix), HanCache) {
    let (sa, c_sa) = mha_forward(fa, fa, &params.self_audio, heads);
    let (xa, c_xa) = mha_forward(fa, fv, &params.cross_audio, heads);
    let (sv, c_sv) = mha_forward(fv, fv, &params.self_visual, heads);
    let (xv, c_xv) = mha_forward(fv, fa, &params.cross_visual, heads);
    let mut ha = fa.clone();
    ha.add_assign(&sa);
    ha.add_assign(&xa);
    let mut hv = fv.clone();
    hv.add_assign(&sv);
    hv.add_assign(&xv);
    (
        (ha, hv),
        HanCache {
            self_audio: c_sa,
            cross_audio: c_xa,
            self_visual: c_sv,
            cross_visual: c_xv,
        },
    )
}

/// Raw (unclamped) per-stream outputs kept for backward.
struct StreamCache {
    h: Matrix,
    probs: Matrix,
    weights: Vec<f64>,
    pooled: Vec<f64>,
}

fn stream_predict(h: &Matrix, cls_w: &Matrix, cls_b: &Matrix, pool_w: &Matrix, pool_b: &Matrix) -> StreamCache {
    let mut logits = h.matmul(cls_w);
    logits.add_row_vector(cls_b.as_slice());
    let probs = logits.map(sigmoid);
    let scores: Vec<f64> = (0..h.rows())
        .map(|t| dot(h.row(t), pool_w.as_slice()) + pool_b.get(0, 0))
        .collect();
    let weights = softmax_row(&scores);
    let mut pooled = vec![0.0; probs.cols()];
    for (t, &w) in weights.iter().enumerate() {
        for (p, &x) in pooled.iter_mut().zip(probs.row(t)) {
            *p += w * x;
        }
    }
    StreamCache {
        h: h.clone(),
        probs,
        weights,
        pooled,
    }
}

fn union(pa: &[f64], pv: &[f64]) -> Vec<f64> {
    pa.iter().zip(pv).map(|(a, v)| a + v - a * v).collect()
}

/// Segment heads, attentive temporal pooling and the probabilistic union.
pub fn predict(ha: &Matrix, hv: &Matrix, params: &Params) -> PredictionBundle {
    let a = stream_predict(ha, &params.cls_w, &params.cls_b, &params.pool_audio_w, &params.pool_audio_b);
    let v = stream_predict(hv, &params.cls_w, &params.cls_b, &params.pool_visual_w, &params.pool_visual_b);
    let u = union(&a.pooled, &v.pooled);
    PredictionBundle::new(a.probs, v.probs, a.pooled, v.pooled, u).expect("shapes are consistent by construction")
}

/// Temporal pooling weights of both streams (each sums to 1).
pub fn pooling_weights(ha: &Matrix, hv: &Matrix, params: &Params) -> (Vec<f64>, Vec<f64>) {
    let a = stream_predict(ha, &params.cls_w, &params.cls_b, &params.pool_audio_w, &params.pool_audio_b);
    let v = stream_predict(hv, &params.cls_w, &params.cls_b, &params.pool_visual_w, &params.pool_visual_b);
    (a.weights, v.weights)
}

/// Everything the backward pass needs from one forward pass.
pub struct ForwardCache {
    han: HanCache,
    audio: StreamCache,
    visual: StreamCache,
    union_raw: Vec<f64>,
    heads: usize,
}

pub fn forward(fa: &Matrix, fv: &Matrix, params: &Params, heads: usize) -> (PredictionBundle, ForwardCache) {
    let ((ha, hv), han) = han_forward_cached(fa, fv, params, heads);
    let audio = stream_predict(&ha, &params.cls_w, &params.cls_b, &params.pool_audio_w, &params.pool_audio_b);
    let visual = stream_predict(&hv, &params.cls_w, &params.cls_b, &params.pool_visual_w, &params.pool_visual_b);
    let union_raw = union(&audio.pooled, &visual.pooled);
    let bundle = PredictionBundle::new(
        audio.probs.clone(),
        visual.probs.clone(),
        audio.pooled.clone(),
        visual.pooled.clone(),
        union_raw.clone(),
    )
    .expect("shapes are consistent by construction");
    (
        bundle,
        ForwardCache {
            han,
            audio,
            visual,
            union_raw,
            heads,
        },
    )
}

/// Zeroes gradient entries whose raw value sat outside the probability clamp.
fn through_clamp(raw: &[f64], grad: &[f64]) -> Vec<f64> {
    raw.iter()
        .zip(grad)
        .map(|(&r, &g)| if inside_clamp(r) { g } else { 0.0 })
        .collect()
}

/// Backward through one stream's head and pooling; returns `∂L/∂Ḟ`.
fn stream_backward(
    cache: &StreamCache,
    d_probs_clamped: &Matrix,
    d_pooled: &[f64],
    params: &Params,
    pool_w: &Matrix,
    grads: &mut Params,
    audio: bool,
) -> Matrix {
    let (t_len, c) = cache.probs.shape();
    let mut d_probs = Matrix::from_vec(
        t_len,
        c,
        through_clamp(cache.probs.as_slice(), d_probs_clamped.as_slice()),
    )
    .expect("same shape");
    // pooled_c = Σ_t w_t P_tc
    let mut d_weights = vec![0.0; t_len];
    for t in 0..t_len {
        let w = cache.weights[t];
        for ci in 0..c {
            let cur = d_probs.get(t, ci);
            d_probs.set(t, ci, cur + w * d_pooled[ci]);
        }
        d_weights[t] = dot(cache.probs.row(t), d_pooled);
    }
    let mean: f64 = cache.weights.iter().zip(&d_weights).map(|(w, g)| w * g).sum();
    let d_scores: Vec<f64> = cache
        .weights
        .iter()
        .zip(&d_weights)
        .map(|(w, g)| w * (g - mean))
        .collect();
    let d_scores_m = Matrix::from_vec(t_len, 1, d_scores.clone()).expect("column");
    let (gw, gb) = if audio {
        (&mut grads.pool_audio_w, &mut grads.pool_audio_b)
    } else {
        (&mut grads.pool_visual_w, &mut grads.pool_visual_b)
    };
    gw.add_assign(&cache.h.t_matmul(&d_scores_m));
    gb.as_mut_slice()[0] += d_scores.iter().sum::<f64>();

    // sigmoid
    let d_logits = d_probs.zip_map(&cache.probs, |g, p| g * p * (1.0 - p));
    grads.cls_w.add_assign(&cache.h.t_matmul(&d_logits));
    for (gb, s) in grads.cls_b.as_mut_slice().iter_mut().zip(d_logits.column_sums()) {
        *gb += s;
    }
    let mut d_h = d_logits.matmul_t(&params.cls_w);
    d_h.add_assign(&d_scores_m.matmul_t(pool_w));
    d_h
}

/// Parameter gradients of the loss whose prediction-gradient is `grad`.
pub fn backward(cache: &ForwardCache, grad: &PredictionGrad, params: &Params) -> Params {
    let mut grads = params.zeros_like();
    let d_union = through_clamp(&cache.union_raw, &grad.video_union);
    let pa = &cache.audio.pooled;
    let pv = &cache.visual.pooled;
    let mut d_pa = through_clamp(pa, &grad.video_audio);
    let mut d_pv = through_clamp(pv, &grad.video_visual);
    for c in 0..d_union.len() {
        d_pa[c] += d_union[c] * (1.0 - pv[c]);
        d_pv[c] += d_union[c] * (1.0 - pa[c]);
    }
    let d_ha = stream_backward(&cache.audio, &grad.seg_audio, &d_pa, params, &params.pool_audio_w, &mut grads, true);
    let d_hv = stream_backward(&cache.visual, &grad.seg_visual, &d_pv, params, &params.pool_visual_w, &mut grads, false);
    let heads = cache.heads;
    mha_backward(&d_ha, &cache.han.self_audio, &params.self_audio, heads, &mut grads.self_audio);
    mha_backward(&d_ha, &cache.han.cross_audio, &params.cross_audio, heads, &mut grads.cross_audio);
    mha_backward(&d_hv, &cache.han.self_visual, &params.self_visual, heads, &mut grads.self_visual);
    mha_backward(&d_hv, &cache.han.cross_visual, &params.cross_visual, heads, &mut grads.cross_visual);
    grads
}

/// Loss and parameter gradients for one video.
pub fn loss_and_grad(
    fa: &Matrix,
    fv: &Matrix,
    params: &Params,
    targets: &Targets,
    loss_cfg: &LossConfig,
    heads: usize,
) -> Result<(LossBreakdown, Params)> {
    let (bundle, cache) = forward(fa, fv, params, heads);
    let (loss, grad) = total_loss_grad(&bundle, targets, loss_cfg)?;
    Ok((loss, backward(&cache, &grad, params)))
}
