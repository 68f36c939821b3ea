//! Minibatch Adam training.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{forward, loss_and_grad, ModelConfig, Params};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_dataset, EvalOptions, VideoParse};
use crate::numeric::Matrix;
use crate::richness::{LossConfig, Targets};
use crate::types::{LabelMatrix, Modality, PredictionBundle};

/// One training video: model inputs plus its supervision.
#[derive(Debug, Clone)]
pub struct TrainExample {
    pub id: String,
    pub fa: Matrix,
    pub fv: Matrix,
    pub targets: Targets,
}

/// One validation video with segment ground truth.
#[derive(Debug, Clone)]
pub struct EvalExample {
    pub id: String,
    pub fa: Matrix,
    pub fv: Matrix,
    pub gt: VideoParse,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Means over the epoch's training videos, measured before each update.
    pub video: f64,
    pub segment: f64,
    pub total: f64,
    /// Segment-level Type@AV on the validation split, when one is given.
    pub val_type_av: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub final_params: Params,
    pub best_params: Params,
    pub best_epoch: usize,
    pub history: Vec<EpochStats>,
}

/// First and second moment estimates.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Params,
    v: Params,
    step: i32,
}

impl AdamState {
    pub fn new(like: &Params) -> Self {
        Self {
            m: like.zeros_like(),
            v: like.zeros_like(),
            step: 0,
        }
    }

    pub fn update(&mut self, params: &mut Params, grads: &Params, cfg: &ModelConfig) {
        self.step += 1;
        let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        let tensors = params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut().into_iter().zip(self.v.tensors_mut()));
        for ((p, g), (m, v)) in tensors {
            for (((p, &g), m), v) in p
                .as_mut_slice()
                .iter_mut()
                .zip(g.as_slice())
                .zip(m.as_mut_slice())
                .zip(v.as_mut_slice())
            {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= cfg.lr * (*m / c1) / ((*v / c2).sqrt() + cfg.adam_eps);
            }
        }
    }
}

pub fn predict_video(params: &Params, fa: &Matrix, fv: &Matrix, heads: usize) -> PredictionBundle {
    forward(fa, fv, params, heads).0
}

/// Binary segment labels from predictions: a cell is on when both its
/// segment probability and its modality's video-level probability reach the
/// threshold.
pub fn parse_prediction(bundle: &PredictionBundle, threshold: f64) -> VideoParse {
    let labels = |m: Modality| {
        let p = bundle.seg(m);
        let video = bundle.video(m);
        let mut out = LabelMatrix::zeros(p.rows(), p.cols(), m);
        for t in 0..p.rows() {
            for c in 0..p.cols() {
                out.set(t, c, p.get(t, c) >= threshold && video[c] >= threshold);
            }
        }
        out
    };
    VideoParse::new(labels(Modality::Audio), labels(Modality::Visual))
}

fn validation_score(params: &Params, val: &[EvalExample], cfg: &ModelConfig, pool: &rayon::ThreadPool) -> Result<f64> {
    let parses: Vec<(String, VideoParse)> = pool.install(|| {
        val.par_iter()
            .map(|ex| {
                let b = predict_video(params, &ex.fa, &ex.fv, cfg.heads);
                (ex.id.clone(), parse_prediction(&b, cfg.pred_threshold))
            })
            .collect()
    });
    let preds: BTreeMap<String, VideoParse> = parses.into_iter().collect();
    let gts: BTreeMap<String, VideoParse> = val.iter().map(|e| (e.id.clone(), e.gt.clone())).collect();
    Ok(evaluate_dataset(&preds, &gts, &EvalOptions::default())?.segment.type_av)
}

/// Trains from a seeded initialization. Per-video gradients may be computed on
/// `workers` threads; they are always reduced in batch order, so results do
/// not depend on the worker count.
pub fn train(
    data: &[TrainExample],
    val: &[EvalExample],
    loss_cfg: &LossConfig,
    cfg: &ModelConfig,
    workers: usize,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    loss_cfg.validate()?;
    let first = data
        .first()
        .ok_or_else(|| Error::DegenerateInput("no training videos".into()))?;
    if first.fa.cols() != cfg.d {
        return Err(Error::shape(format!("feature dimension {}", cfg.d), first.fa.cols()));
    }
    let categories = first.targets.video_label.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let params = Params::init(cfg.d, categories, &mut rng);
    train_from(params, data, val, loss_cfg, cfg, workers, &mut rng)
}

fn train_from(
    mut params: Params,
    data: &[TrainExample],
    val: &[EvalExample],
    loss_cfg: &LossConfig,
    cfg: &ModelConfig,
    workers: usize,
    rng: &mut ChaCha8Rng,
) -> Result<TrainOutcome> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let mut adam = AdamState::new(&params);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Params)> = None;
    let mut iteration = 0usize;

    for epoch in 1..=cfg.epochs {
        order.shuffle(rng);
        let (mut sum_v, mut sum_s, mut sum_t) = (0.0, 0.0, 0.0);
        for batch in order.chunks(cfg.batch) {
            let results: Vec<Result<_>> = pool.install(|| {
                batch
                    .par_iter()
                    .map(|&i| {
                        let ex = &data[i];
                        loss_and_grad(&ex.fa, &ex.fv, &params, &ex.targets, loss_cfg, cfg.heads)
                    })
                    .collect()
            });
            let mut grads = params.zeros_like();
            for (&i, r) in batch.iter().zip(results) {
                let (loss, g) = r?;
                if !loss.total.is_finite() || !g.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        iteration,
                        video_id: data[i].id.clone(),
                        detail: format!("video {} segment {} total {}", loss.video, loss.segment, loss.total),
                    });
                }
                sum_v += loss.video;
                sum_s += loss.segment;
                sum_t += loss.total;
                grads.add_assign(&g);
            }
            grads.scale(1.0 / batch.len() as f64);
            if cfg.lr != 0.0 {
                adam.update(&mut params, &grads, cfg);
            }
            iteration += 1;
        }
        let n = data.len() as f64;
        let val_type_av = if val.is_empty() {
            None
        } else {
            Some(validation_score(&params, val, cfg, &pool)?)
        };
        let score = val_type_av.unwrap_or(f64::NEG_INFINITY);
        if best.as_ref().is_none_or(|(s, _, _)| score > *s) {
            best = Some((score, epoch, params.clone()));
        }
        history.push(EpochStats {
            epoch,
            video: sum_v / n,
            segment: sum_s / n,
            total: sum_t / n,
            val_type_av,
        });
    }

    let (best_epoch, best_params) = match best {
        Some((_, e, p)) => (e, p),
        None => (0, params.clone()),
    };
    Ok(TrainOutcome {
        final_params: params,
        best_params,
        best_epoch,
        history,
    })
}
