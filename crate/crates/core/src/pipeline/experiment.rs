//! Stage drivers: pseudo-label generation, training-set assembly, prediction,
//! denoising, evaluation and the ablation grid.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, LabelSet, Split};
use crate::error::{Error, Result};
use crate::metrics::{av_intersection, evaluate_dataset, label_quality, EvalOptions, ParsingReport, QualityReport, VideoParse};
use crate::model::{parse_prediction, predict_video, train, EvalExample, LabelProvenance, ModelConfig, Params, TrainExample, TrainOutcome};
use crate::pld::{denoise_from_segments, FlipStats, PldConfig};
use crate::plg::{generate_segment_labels, segment_to_video_label, smooth_video_label, PlgConfig};
use crate::richness::{LossConfig, Targets};
use crate::types::{LabelMatrix, Modality, PredictionBundle};

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))
}

/// Segment pseudo labels for every video of the given splits.
pub fn pseudo_labels(ds: &Dataset, cfg: &PlgConfig, splits: &[Split]) -> Result<LabelSet> {
    cfg.validate()?;
    ds.videos
        .iter()
        .filter(|v| splits.contains(&v.split))
        .map(|v| {
            let mut per = Vec::with_capacity(2);
            for m in Modality::BOTH {
                let emb = ds.embedding_set(v, m)?;
                per.push(generate_segment_labels(&emb, cfg.tau(m), &v.label, m)?);
            }
            let visual = per.pop().expect("two modalities");
            let audio = per.pop().expect("two modalities");
            Ok((v.id.clone(), VideoParse::new(audio, visual)))
        })
        .collect()
}

/// Quality of pseudo labels on the videos that carry ground truth.
pub fn pseudo_label_quality(ds: &Dataset, labels: &LabelSet) -> Result<QualityReport> {
    let gts: LabelSet = ds
        .videos
        .iter()
        .filter_map(|v| v.gt.clone().map(|g| (v.id.clone(), g)))
        .filter(|(id, _)| labels.contains_key(id))
        .collect();
    if gts.is_empty() {
        return Err(Error::Config("no labelled videos with ground truth to compare against".into()));
    }
    label_quality(labels, &gts)
}

/// Training examples for `kind`. Smoothed targets come from the weak label
/// alone; `plg`/`pld` targets take the video level from the segment labels.
pub fn training_examples(
    ds: &Dataset,
    kind: LabelProvenance,
    labels: Option<&LabelSet>,
    smoothing: f64,
) -> Result<Vec<TrainExample>> {
    ds.split(Split::Train)
        .map(|v| {
            let targets = match kind {
                LabelProvenance::Smoothed => {
                    let s = smooth_video_label(&v.label, smoothing);
                    Targets {
                        video_label: v.label.clone(),
                        video_audio: s.clone(),
                        video_visual: s,
                        seg_audio: None,
                        seg_visual: None,
                    }
                }
                LabelProvenance::Plg | LabelProvenance::Pld => {
                    let set = labels.ok_or_else(|| Error::Config(format!("label kind {kind:?} needs a label directory")))?;
                    let parse = set.get(&v.id).ok_or_else(|| Error::MissingVideo(v.id.clone()))?;
                    if parse.audio.segments() != v.segments() || parse.audio.categories() != ds.categories() {
                        return Err(Error::shape(
                            format!("{}×{} labels for `{}`", v.segments(), ds.categories(), v.id),
                            format!("{}×{}", parse.audio.segments(), parse.audio.categories()),
                        ));
                    }
                    Targets {
                        video_label: v.label.clone(),
                        video_audio: segment_to_video_label(&parse.audio).to_f64(),
                        video_visual: segment_to_video_label(&parse.visual).to_f64(),
                        seg_audio: Some(parse.audio.clone()),
                        seg_visual: Some(parse.visual.clone()),
                    }
                }
            };
            Ok(TrainExample {
                id: v.id.clone(),
                fa: v.feat_audio.clone(),
                fv: v.feat_visual.clone(),
                targets,
            })
        })
        .collect()
}

pub fn eval_examples(ds: &Dataset, split: Split) -> Result<Vec<EvalExample>> {
    ds.split(split)
        .map(|v| {
            let gt = v
                .gt
                .clone()
                .ok_or_else(|| Error::Config(format!("video `{}` has no ground truth", v.id)))?;
            Ok(EvalExample {
                id: v.id.clone(),
                fa: v.feat_audio.clone(),
                fv: v.feat_visual.clone(),
                gt,
            })
        })
        .collect()
}

pub fn predict_split(
    params: &Params,
    cfg: &ModelConfig,
    ds: &Dataset,
    split: Split,
    workers: usize,
) -> Result<BTreeMap<String, PredictionBundle>> {
    let videos: Vec<_> = ds.split(split).collect();
    let preds: Vec<(String, PredictionBundle)> = pool(workers)?.install(|| {
        videos
            .par_iter()
            .map(|v| (v.id.clone(), predict_video(params, &v.feat_audio, &v.feat_visual, cfg.heads)))
            .collect()
    });
    Ok(preds.into_iter().collect())
}

/// Binary parses of a split at the configured prediction threshold.
pub fn parse_split(params: &Params, cfg: &ModelConfig, ds: &Dataset, split: Split, workers: usize) -> Result<LabelSet> {
    Ok(predict_split(params, cfg, ds, split, workers)?
        .into_iter()
        .map(|(id, b)| (id, parse_prediction(&b, cfg.pred_threshold)))
        .collect())
}

pub fn evaluate_model(
    params: &Params,
    cfg: &ModelConfig,
    ds: &Dataset,
    split: Split,
    opts: &EvalOptions,
    workers: usize,
) -> Result<ParsingReport> {
    let preds = parse_split(params, cfg, ds, split, workers)?;
    evaluate_dataset(&preds, &ds.ground_truth(split)?, opts)
}

/// One video's label changes in one modality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlipRecord {
    pub id: String,
    pub modality: Modality,
    pub category: String,
    pub turned_on: usize,
    pub turned_off: usize,
}

pub fn flip_report_csv(records: &[FlipRecord]) -> String {
    let mut out = String::from("id,modality,category,turned_on,turned_off\n");
    for r in records {
        out.push_str(&format!("{},{},{},{},{}\n", r.id, r.modality, r.category, r.turned_on, r.turned_off));
    }
    out
}

/// Refines the labels of one split with the forward losses of a trained model.
pub fn denoise_labels(
    params: &Params,
    cfg: &ModelConfig,
    ds: &Dataset,
    split: Split,
    labels: &LabelSet,
    pld: &PldConfig,
    workers: usize,
) -> Result<(LabelSet, Vec<FlipRecord>)> {
    pld.validate(ds.videos.first().map_or(0, |v| v.segments()))?;
    let preds = predict_split(params, cfg, ds, split, workers)?;
    let mut refined = LabelSet::new();
    let mut records = Vec::new();
    for (id, p) in &preds {
        let parse = labels.get(id).ok_or_else(|| Error::MissingVideo(id.clone()))?;
        let out = denoise_from_segments(&p.seg_audio, &p.seg_visual, &parse.audio, &parse.visual, pld)?;
        for (m, stats) in [(Modality::Audio, &out.audio_flips), (Modality::Visual, &out.visual_flips)] {
            push_flips(&mut records, id, m, stats, ds);
        }
        refined.insert(id.clone(), VideoParse::new(out.audio, out.visual));
    }
    Ok((refined, records))
}

fn push_flips(records: &mut Vec<FlipRecord>, id: &str, m: Modality, stats: &FlipStats, ds: &Dataset) {
    for c in 0..ds.categories() {
        let (on, off) = (stats.turned_on[c], stats.turned_off[c]);
        if on + off > 0 {
            records.push(FlipRecord {
                id: id.to_string(),
                modality: m,
                category: ds.vocab.name(c).to_string(),
                turned_on: on,
                turned_off: off,
            });
        }
    }
}

/// Audio-visual event labels: the intersection of the two modality labels.
pub fn avel_labels(audio: &LabelMatrix, visual: &LabelMatrix) -> Result<LabelMatrix> {
    av_intersection(audio, visual)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    pub model: ModelConfig,
    pub lambda: f64,
    pub smoothing: f64,
    pub plg: PlgConfig,
    pub pld: PldConfig,
    pub eval: EvalOptions,
    pub workers: usize,
}

impl AblationConfig {
    /// Learning rate of the harness. The desk-scale corpus gives about 20×
    /// fewer optimizer steps per epoch than a full-size one, so the default
    /// rate leaves every row badly under-fitted.
    pub const LEARNING_RATE: f64 = 3e-3;

    /// Defaults, with the planted threshold for both modalities when the
    /// corpus records one.
    pub fn for_dataset(ds: &Dataset) -> Self {
        let mut plg = PlgConfig::default();
        if let Some(meta) = &ds.meta {
            plg.tau_a = meta.planted_threshold;
            plg.tau_v = meta.planted_threshold;
        }
        Self {
            model: ModelConfig {
                d: ds.feature_dim(),
                lr: Self::LEARNING_RATE,
                ..ModelConfig::default()
            },
            lambda: LossConfig::default().lambda,
            smoothing: plg.smoothing,
            plg,
            pld: PldConfig::default(),
            eval: EvalOptions::default(),
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub key: String,
    pub description: String,
    pub report: ParsingReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
    /// Validation-split pseudo-label quality before and after denoising with
    /// the row-4 model.
    pub val_plg_quality: QualityReport,
    pub val_pld_quality: QualityReport,
    pub train_flips_on: usize,
    pub train_flips_off: usize,
}

impl AblationTable {
    pub fn get(&self, key: &str) -> Option<&ParsingReport> {
        self.rows.iter().find(|r| r.key == key).map(|r| &r.report)
    }

    pub fn csv(&self) -> String {
        let mut out = format!("row,{}\n", ParsingReport::COLUMNS.join(","));
        for r in &self.rows {
            out.push_str(&format!("{},{}\n", r.key, r.report.csv_row()));
        }
        out
    }

    /// Fixed-width table for people.
    pub fn pretty(&self) -> String {
        let mut out = format!("{:<14}", "row");
        for c in ParsingReport::COLUMNS {
            out.push_str(&format!("{c:>9}"));
        }
        out.push_str("  description\n");
        for r in &self.rows {
            out.push_str(&format!("{:<14}", r.key));
            for v in r.report.values() {
                out.push_str(&format!("{v:>9.2}"));
            }
            out.push_str(&format!("  {}\n", r.description));
        }
        out
    }
}

struct Runner<'a> {
    ds: &'a Dataset,
    cfg: &'a AblationConfig,
    val: Vec<EvalExample>,
}

impl Runner<'_> {
    fn fit(&self, examples: &[TrainExample], loss: &LossConfig) -> Result<TrainOutcome> {
        train(examples, &self.val, loss, &self.cfg.model, self.cfg.workers)
    }

    fn score(&self, out: &TrainOutcome) -> Result<ParsingReport> {
        evaluate_model(&out.best_params, &self.cfg.model, self.ds, Split::Test, &self.cfg.eval, self.cfg.workers)
    }
}

/// Trains and scores the five main configurations and the four
/// richness-flag combinations. Models are selected on the validation split
/// and scored on the test split.
pub fn run_ablation(ds: &Dataset, cfg: &AblationConfig) -> Result<AblationTable> {
    let runner = Runner {
        ds,
        cfg,
        val: eval_examples(ds, Split::Val)?,
    };
    let loss = LossConfig {
        lambda: cfg.lambda,
        ..LossConfig::default()
    };
    let plg = pseudo_labels(ds, &cfg.plg, &Split::ALL)?;

    let smoothed = training_examples(ds, LabelProvenance::Smoothed, None, cfg.smoothing)?;
    let plg_examples = training_examples(ds, LabelProvenance::Plg, Some(&plg), cfg.smoothing)?;

    let mut rows = Vec::new();
    let mut push = |key: &str, description: &str, report: ParsingReport| {
        rows.push(AblationRow {
            key: key.into(),
            description: description.into(),
            report,
        })
    };

    let r1 = runner.score(&runner.fit(&smoothed, &LossConfig { mode: crate::richness::LossMode::VideoOnly, ..loss })?)?;
    push("1_smoothed", "video-level loss on smoothed weak labels", r1);
    let r2 = runner.score(&runner.fit(&plg_examples, &LossConfig { mode: crate::richness::LossMode::VideoOnly, ..loss })?)?;
    push("2_plg_video", "video-level loss on PLG video labels", r2);
    let r3 = runner.score(&runner.fit(&plg_examples, &LossConfig { mode: crate::richness::LossMode::Naive, ..loss })?)?;
    push("3_naive", "plus elementwise segment BCE", r3);
    let fit4 = runner.fit(&plg_examples, &loss)?;
    let r4 = runner.score(&fit4)?;
    push("4_richness", "plus richness-aware segment loss", r4);

    let (refined, flips) = denoise_labels(&fit4.best_params, &cfg.model, ds, Split::Train, &plg, &cfg.pld, cfg.workers)?;
    let val_truth = ds.ground_truth(Split::Val)?;
    let val_plg: LabelSet = plg.iter().filter(|(id, _)| val_truth.contains_key(*id)).map(|(k, v)| (k.clone(), v.clone())).collect();
    let (val_pld, _) = denoise_labels(&fit4.best_params, &cfg.model, ds, Split::Val, &val_plg, &cfg.pld, cfg.workers)?;
    let val_plg_quality = label_quality(&val_plg, &val_truth)?;
    let val_pld_quality = label_quality(&val_pld, &val_truth)?;
    let pld_examples = training_examples(ds, LabelProvenance::Pld, Some(&refined), cfg.smoothing)?;
    let r5 = runner.score(&runner.fit(&pld_examples, &loss)?)?;
    push("5_pld", "plus label denoising, retrained", r5);

    push("t6_neither", "no segment loss (same run as 2_plg_video)", r2);
    let cr = runner.score(&runner.fit(&plg_examples, &LossConfig { use_sr: false, ..loss })?)?;
    push("t6_cr_only", "category richness only", cr);
    let sr = runner.score(&runner.fit(&plg_examples, &LossConfig { use_cr: false, ..loss })?)?;
    push("t6_sr_only", "segment richness only", sr);
    push("t6_both", "both richness terms (same run as 4_richness)", r4);

    Ok(AblationTable {
        rows,
        val_plg_quality,
        val_pld_quality,
        train_flips_on: flips.iter().map(|f| f.turned_on).sum(),
        train_flips_off: flips.iter().map(|f| f.turned_off).sum(),
    })
}
