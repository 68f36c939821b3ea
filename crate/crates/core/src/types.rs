//! Domain types shared across the pipeline.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{clamp_prob, dot, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Audio,
    Visual,
}

impl Modality {
    pub const BOTH: [Modality; 2] = [Modality::Audio, Modality::Visual];

    pub fn name(self) -> &'static str {
        match self {
            Modality::Audio => "audio",
            Modality::Visual => "visual",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Ordered category names with a name → index lookup.
#[derive(Debug, Clone, PartialEq)]
pub struct EventVocabulary {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl EventVocabulary {
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::Config("vocabulary must hold at least one category".into()));
        }
        let mut index = HashMap::with_capacity(names.len());
        for (i, n) in names.iter().enumerate() {
            if index.insert(n.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate category name `{n}`")));
            }
        }
        Ok(Self { names, index })
    }

    /// `class_00 … class_{C-1}`
    pub fn synthetic(c: usize) -> Self {
        Self::new((0..c).map(|i| format!("class_{i:02}")).collect()).expect("non-empty, unique")
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// A binary length-C label vector (the weak video-level label, or a
/// modality-specific video-level pseudo label).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VideoLabel(Vec<bool>);

impl VideoLabel {
    pub fn new(bits: Vec<bool>) -> Self {
        Self(bits)
    }

    pub fn zeros(c: usize) -> Self {
        Self(vec![false; c])
    }

    pub fn from_f64(v: &[f64]) -> Result<Self> {
        v.iter()
            .map(|&x| match x {
                x if x == 0.0 => Ok(false),
                x if x == 1.0 => Ok(true),
                x => Err(Error::ContractViolation(format!("label entry {x} is not 0/1"))),
            })
            .collect::<Result<Vec<bool>>>()
            .map(Self)
    }

    pub fn from_indices(c: usize, active: &[usize]) -> Self {
        let mut bits = vec![false; c];
        for &i in active {
            bits[i] = true;
        }
        Self(bits)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, c: usize) -> bool {
        self.0[c]
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn active(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i)
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }
}

/// A T×C binary segment-level label matrix tagged with its modality.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMatrix {
    data: Matrix,
    modality: Modality,
}

impl LabelMatrix {
    pub fn new(data: Matrix, modality: Modality) -> Result<Self> {
        if let Some(bad) = data.as_slice().iter().find(|&&x| x != 0.0 && x != 1.0) {
            return Err(Error::ContractViolation(format!(
                "label matrix entry {bad} is not 0/1"
            )));
        }
        Ok(Self { data, modality })
    }

    pub fn zeros(t: usize, c: usize, modality: Modality) -> Self {
        Self {
            data: Matrix::zeros(t, c),
            modality,
        }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R], modality: Modality) -> Result<Self> {
        Self::new(Matrix::from_rows(rows), modality)
    }

    pub fn segments(&self) -> usize {
        self.data.rows()
    }

    pub fn categories(&self) -> usize {
        self.data.cols()
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn with_modality(mut self, modality: Modality) -> Self {
        self.modality = modality;
        self
    }

    pub fn get(&self, t: usize, c: usize) -> bool {
        self.data.get(t, c) == 1.0
    }

    pub fn set(&mut self, t: usize, c: usize, on: bool) {
        self.data.set(t, c, if on { 1.0 } else { 0.0 });
    }

    pub fn matrix(&self) -> &Matrix {
        &self.data
    }

    pub fn column_bits(&self, c: usize) -> Vec<bool> {
        (0..self.segments()).map(|t| self.get(t, c)).collect()
    }

    pub fn count_ones(&self) -> usize {
        self.data.as_slice().iter().filter(|&&x| x == 1.0).count()
    }

    /// True when every nonzero column is allowed by `y`.
    pub fn respects_video_label(&self, y: &VideoLabel) -> bool {
        (0..self.segments()).all(|t| (0..self.categories()).all(|c| !self.get(t, c) || y.get(c)))
    }
}

/// Row-stochastic T×C similarity scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix(Matrix);

impl ScoreMatrix {
    pub fn new(data: Matrix) -> Result<Self> {
        for t in 0..data.rows() {
            let row = data.row(t);
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-6 || row.iter().any(|&x| !(x > 0.0 && x <= 1.0)) {
                return Err(Error::ContractViolation(format!(
                    "score row {t} is not a probability vector (sum {sum})"
                )));
            }
        }
        Ok(Self(data))
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn row(&self, t: usize) -> &[f64] {
        self.0.row(t)
    }

    pub fn segments(&self) -> usize {
        self.0.rows()
    }
}

/// Per-segment embeddings plus per-category prompt embeddings in a shared space.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    frames: Matrix,
    classes: Matrix,
}

impl EmbeddingSet {
    pub fn new(frames: Matrix, classes: Matrix) -> Result<Self> {
        if frames.cols() != classes.cols() {
            return Err(Error::shape(
                format!("class embedding dim {}", frames.cols()),
                classes.cols(),
            ));
        }
        if frames.cols() < 2 {
            return Err(Error::DegenerateInput(format!(
                "embedding dimension {} < 2",
                frames.cols()
            )));
        }
        for (what, m) in [("frame", &frames), ("class", &classes)] {
            for i in 0..m.rows() {
                if !(dot(m.row(i), m.row(i)) > 0.0) {
                    return Err(Error::DegenerateInput(format!("{what} embedding {i} has zero norm")));
                }
            }
        }
        Ok(Self { frames, classes })
    }

    pub fn frames(&self) -> &Matrix {
        &self.frames
    }

    pub fn classes(&self) -> &Matrix {
        &self.classes
    }

    pub fn dim(&self) -> usize {
        self.frames.cols()
    }
}

/// Segment- and video-level probabilities produced by the parser. Every entry is
/// clamped to `[EPS, 1-EPS]` on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionBundle {
    pub seg_audio: Matrix,
    pub seg_visual: Matrix,
    pub video_audio: Vec<f64>,
    pub video_visual: Vec<f64>,
    pub video_union: Vec<f64>,
}

impl PredictionBundle {
    pub fn new(
        seg_audio: Matrix,
        seg_visual: Matrix,
        video_audio: Vec<f64>,
        video_visual: Vec<f64>,
        video_union: Vec<f64>,
    ) -> Result<Self> {
        let c = seg_audio.cols();
        if seg_visual.shape() != seg_audio.shape() {
            return Err(Error::shape(format!("{:?}", seg_audio.shape()), format!("{:?}", seg_visual.shape())));
        }
        for v in [&video_audio, &video_visual, &video_union] {
            if v.len() != c {
                return Err(Error::shape(format!("video-level length {c}"), v.len()));
            }
        }
        let clamp_vec = |v: Vec<f64>| v.into_iter().map(clamp_prob).collect::<Vec<_>>();
        Ok(Self {
            seg_audio: seg_audio.map(clamp_prob),
            seg_visual: seg_visual.map(clamp_prob),
            video_audio: clamp_vec(video_audio),
            video_visual: clamp_vec(video_visual),
            video_union: clamp_vec(video_union),
        })
    }

    pub fn segments(&self) -> usize {
        self.seg_audio.rows()
    }

    pub fn categories(&self) -> usize {
        self.seg_audio.cols()
    }

    pub fn seg(&self, m: Modality) -> &Matrix {
        match m {
            Modality::Audio => &self.seg_audio,
            Modality::Visual => &self.seg_visual,
        }
    }

    pub fn video(&self, m: Modality) -> &[f64] {
        match m {
            Modality::Audio => &self.video_audio,
            Modality::Visual => &self.video_visual,
        }
    }

    /// `P_a ⊙ P_v`, the segment-level audio-visual probability.
    pub fn seg_intersection(&self) -> Matrix {
        self.seg_audio.zip_map(&self.seg_visual, |a, v| a * v)
    }
}
