//! Segment-level and event-level parsing metrics.
//!
//! Scores are per-video F1 values averaged over videos and reported ×100. An
//! event is a maximal run of consecutive positive segments for one category;
//! a predicted event matches a ground-truth event of the same category iff
//! their temporal IoU is at least 0.5, with one-to-one matching.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plg::segment_to_video_label;
use crate::types::{LabelMatrix, Modality};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EventSpan {
    pub category: usize,
    /// First segment, inclusive.
    pub start: usize,
    /// Last segment, inclusive.
    pub end: usize,
    pub modality: Modality,
}

impl EventSpan {
    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Maximal runs of `true`, ordered by start.
pub fn extract_events(col: &[bool], category: usize, modality: Modality) -> Vec<EventSpan> {
    let mut spans = Vec::new();
    let mut start = None;
    for (t, &on) in col.iter().enumerate() {
        match (on, start) {
            (true, None) => start = Some(t),
            (false, Some(s)) => {
                spans.push(EventSpan { category, start: s, end: t - 1, modality });
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        spans.push(EventSpan { category, start: s, end: col.len() - 1, modality });
    }
    spans
}

/// All events of a label matrix, category-major.
pub fn extract_all_events(labels: &LabelMatrix) -> Vec<EventSpan> {
    (0..labels.categories())
        .flat_map(|c| extract_events(&labels.column_bits(c), c, labels.modality()))
        .collect()
}

/// Temporal IoU in segment counts.
pub fn tiou(a: &EventSpan, b: &EventSpan) -> Result<f64> {
    if a.category != b.category {
        return Err(Error::ContractViolation(format!(
            "tIoU between categories {} and {}",
            a.category, b.category
        )));
    }
    Ok(span_iou(a, b))
}

fn span_iou(a: &EventSpan, b: &EventSpan) -> f64 {
    let lo = a.start.max(b.start);
    let hi = a.end.min(b.end);
    let inter = if hi >= lo { hi - lo + 1 } else { 0 };
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}

/// True/false positive and false negative counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Counts {
    pub fn is_empty(&self) -> bool {
        self.tp + self.fp + self.fn_ == 0
    }

    /// F1, or `None` when prediction and ground truth are both empty.
    pub fn f1(&self) -> Option<f64> {
        if self.is_empty() {
            None
        } else {
            Some(2.0 * self.tp as f64 / (2 * self.tp + self.fp + self.fn_) as f64)
        }
    }

    pub fn precision(&self) -> Option<f64> {
        match self.tp + self.fp {
            0 => None,
            n => Some(self.tp as f64 / n as f64),
        }
    }
}

impl std::ops::Add for Counts {
    type Output = Counts;
    fn add(self, o: Counts) -> Counts {
        Counts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
        }
    }
}

impl std::ops::AddAssign for Counts {
    fn add_assign(&mut self, o: Counts) {
        *self = *self + o;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchStrategy {
    /// Pairs visited in descending tIoU; ties go to the earlier predicted start,
    /// then the earlier ground-truth start.
    Greedy,
    /// Maximum-cardinality bipartite matching over pairs above the threshold.
    MaxCardinality,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    PerVideo,
    Micro,
}

/// How a video whose prediction and ground truth are both empty is scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmptyConvention {
    Perfect,
    Zero,
    Skip,
}

impl EmptyConvention {
    fn score(self, c: &Counts) -> Option<f64> {
        match (c.f1(), self) {
            (Some(f), _) => Some(f),
            (None, EmptyConvention::Perfect) => Some(1.0),
            (None, EmptyConvention::Zero) => Some(0.0),
            (None, EmptyConvention::Skip) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub averaging: Averaging,
    pub empty: EmptyConvention,
    pub matching: MatchStrategy,
    pub tiou_threshold: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            averaging: Averaging::PerVideo,
            empty: EmptyConvention::Perfect,
            matching: MatchStrategy::Greedy,
            tiou_threshold: 0.5,
        }
    }
}

fn check_shapes(pred: &LabelMatrix, gt: &LabelMatrix) -> Result<()> {
    if pred.matrix().shape() != gt.matrix().shape() {
        return Err(Error::shape(
            format!("{:?}", gt.matrix().shape()),
            format!("{:?}", pred.matrix().shape()),
        ));
    }
    Ok(())
}

/// Cell-level counts over every (t, c).
pub fn segment_counts(pred: &LabelMatrix, gt: &LabelMatrix) -> Result<Counts> {
    check_shapes(pred, gt)?;
    let mut c = Counts::default();
    for (&p, &g) in pred.matrix().as_slice().iter().zip(gt.matrix().as_slice()) {
        match (p == 1.0, g == 1.0) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => {}
        }
    }
    Ok(c)
}

/// Number of matched pairs between same-category span lists.
pub fn match_spans(pred: &[EventSpan], gt: &[EventSpan], threshold: f64, strategy: MatchStrategy) -> usize {
    let mut edges: Vec<(f64, usize, usize)> = Vec::new();
    for (i, p) in pred.iter().enumerate() {
        for (j, g) in gt.iter().enumerate() {
            let iou = span_iou(p, g);
            if iou >= threshold {
                edges.push((iou, i, j));
            }
        }
    }
    match strategy {
        MatchStrategy::Greedy => {
            edges.sort_by(|a, b| {
                b.0.total_cmp(&a.0)
                    .then(pred[a.1].start.cmp(&pred[b.1].start))
                    .then(gt[a.2].start.cmp(&gt[b.2].start))
            });
            let mut pred_used = vec![false; pred.len()];
            let mut gt_used = vec![false; gt.len()];
            let mut matched = 0;
            for (_, i, j) in edges {
                if !pred_used[i] && !gt_used[j] {
                    pred_used[i] = true;
                    gt_used[j] = true;
                    matched += 1;
                }
            }
            matched
        }
        MatchStrategy::MaxCardinality => {
            let mut adj = vec![Vec::new(); pred.len()];
            for (_, i, j) in edges {
                adj[i].push(j);
            }
            let mut owner: Vec<Option<usize>> = vec![None; gt.len()];
            fn augment(i: usize, adj: &[Vec<usize>], seen: &mut [bool], owner: &mut [Option<usize>]) -> bool {
                for &j in &adj[i] {
                    if seen[j] {
                        continue;
                    }
                    seen[j] = true;
                    if owner[j].is_none_or(|k| augment(k, adj, seen, owner)) {
                        owner[j] = Some(i);
                        return true;
                    }
                }
                false
            }
            (0..pred.len())
                .filter(|&i| augment(i, &adj, &mut vec![false; gt.len()], &mut owner))
                .count()
        }
    }
}

/// Event-level counts over all categories of one video.
pub fn event_counts(pred: &LabelMatrix, gt: &LabelMatrix, opts: &EvalOptions) -> Result<Counts> {
    check_shapes(pred, gt)?;
    let mut total = Counts::default();
    for c in 0..gt.categories() {
        total += category_event_counts(pred, gt, c, opts);
    }
    Ok(total)
}

fn category_event_counts(pred: &LabelMatrix, gt: &LabelMatrix, c: usize, opts: &EvalOptions) -> Counts {
    let p = extract_events(&pred.column_bits(c), c, pred.modality());
    let g = extract_events(&gt.column_bits(c), c, gt.modality());
    let tp = match_spans(&p, &g, opts.tiou_threshold, opts.matching);
    Counts {
        tp,
        fp: p.len() - tp,
        fn_: g.len() - tp,
    }
}

/// Segment-level F1 of one video, perfect-empty convention.
pub fn segment_f1(pred: &LabelMatrix, gt: &LabelMatrix) -> Result<f64> {
    Ok(segment_counts(pred, gt)?.f1().unwrap_or(1.0))
}

/// Event-level F1 of one video at tIoU ≥ 0.5, perfect-empty convention.
pub fn event_f1(pred: &LabelMatrix, gt: &LabelMatrix) -> Result<f64> {
    Ok(event_counts(pred, gt, &EvalOptions::default())?.f1().unwrap_or(1.0))
}

/// Elementwise AND: the audio-visual event cells.
pub fn av_intersection(a: &LabelMatrix, v: &LabelMatrix) -> Result<LabelMatrix> {
    check_shapes(a, v)?;
    let mut out = LabelMatrix::zeros(a.segments(), a.categories(), a.modality());
    for t in 0..a.segments() {
        for c in 0..a.categories() {
            out.set(t, c, a.get(t, c) && v.get(t, c));
        }
    }
    Ok(out)
}

/// Audio and visual segment labels for one video.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoParse {
    pub audio: LabelMatrix,
    pub visual: LabelMatrix,
}

impl VideoParse {
    pub fn new(audio: LabelMatrix, visual: LabelMatrix) -> Self {
        Self {
            audio: audio.with_modality(Modality::Audio),
            visual: visual.with_modality(Modality::Visual),
        }
    }

    pub fn get(&self, m: Modality) -> &LabelMatrix {
        match m {
            Modality::Audio => &self.audio,
            Modality::Visual => &self.visual,
        }
    }
}

/// The five scores at one evaluation level, each in `[0, 100]`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LevelScores {
    pub audio: f64,
    pub visual: f64,
    pub av: f64,
    pub type_av: f64,
    pub event_av: f64,
}

impl LevelScores {
    pub fn values(&self) -> [f64; 5] {
        [self.audio, self.visual, self.av, self.type_av, self.event_av]
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ParsingReport {
    pub segment: LevelScores,
    pub event: LevelScores,
}

impl ParsingReport {
    pub const COLUMNS: [&'static str; 10] = [
        "segA", "segV", "segAV", "segType", "segEvent", "evtA", "evtV", "evtAV", "evtType", "evtEvent",
    ];

    pub fn values(&self) -> [f64; 10] {
        let mut out = [0.0; 10];
        out[..5].copy_from_slice(&self.segment.values());
        out[5..].copy_from_slice(&self.event.values());
        out
    }

    pub fn csv_row(&self) -> String {
        self.values().iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join(",")
    }
}

/// Per-video counts feeding the four count-based metrics of one level.
#[derive(Debug, Clone, Copy, Default)]
struct LevelCounts {
    audio: Counts,
    visual: Counts,
    av: Counts,
}

impl LevelCounts {
    fn event_av(&self) -> Counts {
        self.audio + self.visual
    }
}

fn aggregate(per_video: &[Counts], opts: &EvalOptions) -> f64 {
    let score = match opts.averaging {
        Averaging::Micro => {
            let total = per_video.iter().fold(Counts::default(), |a, &b| a + b);
            opts.empty.score(&total).unwrap_or(0.0)
        }
        Averaging::PerVideo => {
            let scores: Vec<f64> = per_video.iter().filter_map(|c| opts.empty.score(c)).collect();
            if scores.is_empty() {
                0.0
            } else {
                scores.iter().sum::<f64>() / scores.len() as f64
            }
        }
    };
    100.0 * score
}

fn level_scores(counts: &[LevelCounts], opts: &EvalOptions) -> LevelScores {
    let pick = |f: &dyn Fn(&LevelCounts) -> Counts| -> f64 {
        aggregate(&counts.iter().map(f).collect::<Vec<_>>(), opts)
    };
    let audio = pick(&|c| c.audio);
    let visual = pick(&|c| c.visual);
    let av = pick(&|c| c.av);
    LevelScores {
        audio,
        visual,
        av,
        type_av: (audio + visual + av) / 3.0,
        event_av: pick(&|c| c.event_av()),
    }
}

/// Scores predictions against ground truth for every video in `gts`.
pub fn evaluate_dataset(
    preds: &BTreeMap<String, VideoParse>,
    gts: &BTreeMap<String, VideoParse>,
    opts: &EvalOptions,
) -> Result<ParsingReport> {
    let mut seg = Vec::with_capacity(gts.len());
    let mut evt = Vec::with_capacity(gts.len());
    for (id, gt) in gts {
        let pred = preds.get(id).ok_or_else(|| Error::MissingVideo(id.clone()))?;
        let pred_av = av_intersection(&pred.audio, &pred.visual)?;
        let gt_av = av_intersection(&gt.audio, &gt.visual)?;
        seg.push(LevelCounts {
            audio: segment_counts(&pred.audio, &gt.audio)?,
            visual: segment_counts(&pred.visual, &gt.visual)?,
            av: segment_counts(&pred_av, &gt_av)?,
        });
        evt.push(LevelCounts {
            audio: event_counts(&pred.audio, &gt.audio, opts)?,
            visual: event_counts(&pred.visual, &gt.visual, opts)?,
            av: event_counts(&pred_av, &gt_av, opts)?,
        });
    }
    Ok(ParsingReport {
        segment: level_scores(&seg, opts),
        event: level_scores(&evt, opts),
    })
}

/// Scores of one category pooled over videos, ×100, ordered audio, visual,
/// audio-visual. `None` where the category is absent from both sides.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CategoryScores {
    pub segment: [Option<f64>; 3],
    pub event: [Option<f64>; 3],
}

fn category_segment_counts(pred: &LabelMatrix, gt: &LabelMatrix, c: usize) -> Counts {
    let mut out = Counts::default();
    for t in 0..gt.segments() {
        match (pred.get(t, c), gt.get(t, c)) {
            (true, true) => out.tp += 1,
            (true, false) => out.fp += 1,
            (false, true) => out.fn_ += 1,
            _ => {}
        }
    }
    out
}

/// Per-category breakdown with counts pooled over the videos of `gts`.
pub fn per_category_scores(
    preds: &BTreeMap<String, VideoParse>,
    gts: &BTreeMap<String, VideoParse>,
    opts: &EvalOptions,
) -> Result<Vec<CategoryScores>> {
    let c = gts.values().next().map_or(0, |g| g.audio.categories());
    let mut seg = vec![[Counts::default(); 3]; c];
    let mut evt = vec![[Counts::default(); 3]; c];
    for (id, gt) in gts {
        let pred = preds.get(id).ok_or_else(|| Error::MissingVideo(id.clone()))?;
        let pairs = [
            (pred.audio.clone(), gt.audio.clone()),
            (pred.visual.clone(), gt.visual.clone()),
            (av_intersection(&pred.audio, &pred.visual)?, av_intersection(&gt.audio, &gt.visual)?),
        ];
        for (i, (p, g)) in pairs.iter().enumerate() {
            check_shapes(p, g)?;
            if g.categories() != c {
                return Err(Error::shape(format!("{c} categories"), format!("{}", g.categories())));
            }
            for k in 0..c {
                seg[k][i] += category_segment_counts(p, g, k);
                evt[k][i] += category_event_counts(p, g, k, opts);
            }
        }
    }
    let f1 = |cs: &[Counts; 3]| cs.map(|x| x.f1().map(|f| 100.0 * f));
    Ok(seg
        .iter()
        .zip(&evt)
        .map(|(s, e)| CategoryScores { segment: f1(s), event: f1(e) })
        .collect())
}

/// Pseudo-label quality for one modality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalityQuality {
    /// Video-level precision ×100, pooled over videos.
    pub video_precision: f64,
    pub segment_f1: f64,
    pub event_f1: f64,
    /// Event-level F1 ×100 per category pooled over videos; `None` for
    /// categories absent from both sides.
    pub per_category_event_f1: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub audio: ModalityQuality,
    pub visual: ModalityQuality,
}

impl QualityReport {
    pub fn get(&self, m: Modality) -> &ModalityQuality {
        match m {
            Modality::Audio => &self.audio,
            Modality::Visual => &self.visual,
        }
    }
}

fn modality_quality(
    pseudo: &BTreeMap<String, VideoParse>,
    gts: &BTreeMap<String, VideoParse>,
    m: Modality,
) -> Result<ModalityQuality> {
    let opts = EvalOptions::default();
    let mut video = Counts::default();
    let mut seg = Vec::new();
    let mut evt = Vec::new();
    let mut per_cat: Vec<Counts> = Vec::new();
    for (id, gt) in gts {
        let p = pseudo.get(id).ok_or_else(|| Error::MissingVideo(id.clone()))?.get(m);
        let g = gt.get(m);
        let pv = segment_to_video_label(p);
        let gv = segment_to_video_label(g);
        for (&a, &b) in pv.bits().iter().zip(gv.bits()) {
            match (a, b) {
                (true, true) => video.tp += 1,
                (true, false) => video.fp += 1,
                (false, true) => video.fn_ += 1,
                _ => {}
            }
        }
        seg.push(segment_counts(p, g)?);
        evt.push(event_counts(p, g, &opts)?);
        if per_cat.is_empty() {
            per_cat = vec![Counts::default(); g.categories()];
        }
        for (c, slot) in per_cat.iter_mut().enumerate() {
            *slot += category_event_counts(p, g, c, &opts);
        }
    }
    let video_precision = match video.precision() {
        Some(p) => 100.0 * p,
        None if video.fn_ == 0 => 100.0,
        None => 0.0,
    };
    Ok(ModalityQuality {
        video_precision,
        segment_f1: aggregate(&seg, &opts),
        event_f1: aggregate(&evt, &opts),
        per_category_event_f1: per_cat.iter().map(|c| c.f1().map(|f| 100.0 * f)).collect(),
    })
}

/// Quality of a pseudo-label set against ground truth on the videos of `gts`.
pub fn label_quality(
    pseudo: &BTreeMap<String, VideoParse>,
    gts: &BTreeMap<String, VideoParse>,
) -> Result<QualityReport> {
    Ok(QualityReport {
        audio: modality_quality(pseudo, gts, Modality::Audio)?,
        visual: modality_quality(pseudo, gts, Modality::Visual)?,
    })
}
