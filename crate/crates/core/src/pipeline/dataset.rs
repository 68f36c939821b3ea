//! On-disk corpus and label-set layout.
//!
//! ```text
//! <dataset>/index.jsonl            {"id", "T", "label", "split"} per line
//! <dataset>/vocab.txt              one category name per line
//! <dataset>/class_emb_audio.txt    C×E class embeddings
//! <dataset>/class_emb_visual.txt
//! <dataset>/synth.json             generator config and planted threshold (optional)
//! <dataset>/<id>/feat_{audio,visual}.txt   T×d model inputs
//! <dataset>/<id>/emb_{audio,visual}.txt    T×E segment embeddings
//! <dataset>/<id>/gt_{audio,visual}.txt     T×C ground truth (val/test only)
//!
//! <labels>/<id>/{audio,visual}.txt         T×C segment labels
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::synth::SynthMeta;
use crate::error::{Error, Result};
use crate::metrics::VideoParse;
use crate::numeric::{format_matrix, read_matrix, write_matrix, Matrix};
use crate::types::{EmbeddingSet, EventVocabulary, LabelMatrix, Modality, VideoLabel};

/// Segment labels of both modalities, keyed by video id.
pub type LabelSet = BTreeMap<String, VideoParse>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct IndexEntry {
    id: String,
    #[serde(rename = "T")]
    t: usize,
    label: Vec<u8>,
    split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoRecord {
    pub id: String,
    pub split: Split,
    pub label: VideoLabel,
    pub feat_audio: Matrix,
    pub feat_visual: Matrix,
    pub emb_audio: Matrix,
    pub emb_visual: Matrix,
    /// Present for validation and test videos only.
    pub gt: Option<VideoParse>,
}

impl VideoRecord {
    pub fn segments(&self) -> usize {
        self.feat_audio.rows()
    }

    pub fn features(&self, m: Modality) -> &Matrix {
        match m {
            Modality::Audio => &self.feat_audio,
            Modality::Visual => &self.feat_visual,
        }
    }

    pub fn embeddings(&self, m: Modality) -> &Matrix {
        match m {
            Modality::Audio => &self.emb_audio,
            Modality::Visual => &self.emb_visual,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub vocab: EventVocabulary,
    pub class_emb_audio: Matrix,
    pub class_emb_visual: Matrix,
    pub videos: Vec<VideoRecord>,
    pub meta: Option<SynthMeta>,
}

impl Dataset {
    /// Validates shapes, id uniqueness and split hygiene.
    pub fn new(
        vocab: EventVocabulary,
        class_emb_audio: Matrix,
        class_emb_visual: Matrix,
        videos: Vec<VideoRecord>,
        meta: Option<SynthMeta>,
    ) -> Result<Self> {
        let c = vocab.len();
        for (m, e) in [("audio", &class_emb_audio), ("visual", &class_emb_visual)] {
            if e.rows() != c {
                return Err(Error::shape(format!("{c} {m} class embeddings"), e.rows()));
            }
        }
        let mut seen = BTreeSet::new();
        let mut feat_dim = None;
        for v in &videos {
            if !seen.insert(v.id.as_str()) {
                return Err(Error::Config(format!("duplicate video id `{}`", v.id)));
            }
            if v.split == Split::Train && v.gt.is_some() {
                return Err(Error::SplitHygiene(v.id.clone()));
            }
            let t = v.segments();
            if t == 0 {
                return Err(Error::DegenerateInput(format!("video `{}` has no segments", v.id)));
            }
            if v.label.len() != c {
                return Err(Error::shape(format!("label length {c} for `{}`", v.id), v.label.len()));
            }
            let d = *feat_dim.get_or_insert(v.feat_audio.cols());
            if v.feat_audio.shape() != (t, d) || v.feat_visual.shape() != (t, d) {
                return Err(Error::shape(format!("features {t}×{d} for `{}`", v.id), format!("{:?}", v.feat_visual.shape())));
            }
            for (m, emb, cls) in [("audio", &v.emb_audio, &class_emb_audio), ("visual", &v.emb_visual, &class_emb_visual)] {
                if emb.shape() != (t, cls.cols()) {
                    return Err(Error::shape(
                        format!("{m} embeddings {t}×{} for `{}`", cls.cols(), v.id),
                        format!("{:?}", emb.shape()),
                    ));
                }
            }
            if let Some(gt) = &v.gt {
                for l in [&gt.audio, &gt.visual] {
                    if (l.segments(), l.categories()) != (t, c) {
                        return Err(Error::shape(
                            format!("ground truth {t}×{c} for `{}`", v.id),
                            format!("{}×{}", l.segments(), l.categories()),
                        ));
                    }
                }
            }
        }
        Ok(Self {
            vocab,
            class_emb_audio,
            class_emb_visual,
            videos,
            meta,
        })
    }

    pub fn categories(&self) -> usize {
        self.vocab.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.videos.first().map_or(0, |v| v.feat_audio.cols())
    }

    pub fn class_embeddings(&self, m: Modality) -> &Matrix {
        match m {
            Modality::Audio => &self.class_emb_audio,
            Modality::Visual => &self.class_emb_visual,
        }
    }

    /// Frame and class embeddings of one video for one modality.
    pub fn embedding_set(&self, video: &VideoRecord, m: Modality) -> Result<EmbeddingSet> {
        EmbeddingSet::new(video.embeddings(m).clone(), self.class_embeddings(m).clone())
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &VideoRecord> {
        self.videos.iter().filter(move |v| v.split == split)
    }

    pub fn video(&self, id: &str) -> Option<&VideoRecord> {
        self.videos.iter().find(|v| v.id == id)
    }

    /// Ground truth of every video in `split`.
    pub fn ground_truth(&self, split: Split) -> Result<LabelSet> {
        self.split(split)
            .map(|v| {
                v.gt
                    .clone()
                    .map(|g| (v.id.clone(), g))
                    .ok_or_else(|| Error::Config(format!("video `{}` has no ground truth", v.id)))
            })
            .collect()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        mkdir(dir)?;
        let mut index = String::new();
        for v in &self.videos {
            let entry = IndexEntry {
                id: v.id.clone(),
                t: v.segments(),
                label: v.label.bits().iter().map(|&b| b as u8).collect(),
                split: v.split,
            };
            index.push_str(&serde_json::to_string(&entry)?);
            index.push('\n');
        }
        write_text(&dir.join("index.jsonl"), &index)?;
        let mut vocab = self.vocab.names().join("\n");
        vocab.push('\n');
        write_text(&dir.join("vocab.txt"), &vocab)?;
        write_matrix(&dir.join("class_emb_audio.txt"), &self.class_emb_audio)?;
        write_matrix(&dir.join("class_emb_visual.txt"), &self.class_emb_visual)?;
        if let Some(meta) = &self.meta {
            let mut json = serde_json::to_string_pretty(meta)?;
            json.push('\n');
            write_text(&dir.join("synth.json"), &json)?;
        }
        for v in &self.videos {
            let vd = dir.join(&v.id);
            mkdir(&vd)?;
            write_matrix(&vd.join("feat_audio.txt"), &v.feat_audio)?;
            write_matrix(&vd.join("feat_visual.txt"), &v.feat_visual)?;
            write_matrix(&vd.join("emb_audio.txt"), &v.emb_audio)?;
            write_matrix(&vd.join("emb_visual.txt"), &v.emb_visual)?;
            if let Some(gt) = &v.gt {
                write_matrix(&vd.join("gt_audio.txt"), gt.audio.matrix())?;
                write_matrix(&vd.join("gt_visual.txt"), gt.visual.matrix())?;
            }
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let index_path = dir.join("index.jsonl");
        let index = read_text(&index_path)?;
        let vocab_path = dir.join("vocab.txt");
        let vocab = EventVocabulary::new(read_text(&vocab_path)?.lines().map(str::to_string).collect())?;
        let class_emb_audio = read_matrix(&dir.join("class_emb_audio.txt"))?;
        let class_emb_visual = read_matrix(&dir.join("class_emb_visual.txt"))?;
        let meta_path = dir.join("synth.json");
        let meta = if meta_path.exists() {
            Some(serde_json::from_str(&read_text(&meta_path)?)?)
        } else {
            None
        };
        let mut videos = Vec::new();
        for (n, line) in index.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let entry: IndexEntry = serde_json::from_str(line).map_err(|e| Error::Parse {
                path: format!("{}:{}", index_path.display(), n + 1),
                msg: e.to_string(),
            })?;
            let vd = dir.join(&entry.id);
            let gt_paths = [vd.join("gt_audio.txt"), vd.join("gt_visual.txt")];
            let has_gt = gt_paths.iter().any(|p| p.exists());
            if entry.split == Split::Train && has_gt {
                return Err(Error::SplitHygiene(entry.id));
            }
            let gt = if has_gt {
                Some(VideoParse::new(
                    LabelMatrix::new(read_matrix(&gt_paths[0])?, Modality::Audio)?,
                    LabelMatrix::new(read_matrix(&gt_paths[1])?, Modality::Visual)?,
                ))
            } else {
                None
            };
            let bits = entry
                .label
                .iter()
                .map(|&b| match b {
                    0 => Ok(false),
                    1 => Ok(true),
                    other => Err(Error::Parse {
                        path: format!("{}:{}", index_path.display(), n + 1),
                        msg: format!("label entry {other} is not 0/1"),
                    }),
                })
                .collect::<Result<Vec<_>>>()?;
            let record = VideoRecord {
                feat_audio: read_matrix(&vd.join("feat_audio.txt"))?,
                feat_visual: read_matrix(&vd.join("feat_visual.txt"))?,
                emb_audio: read_matrix(&vd.join("emb_audio.txt"))?,
                emb_visual: read_matrix(&vd.join("emb_visual.txt"))?,
                id: entry.id,
                split: entry.split,
                label: VideoLabel::new(bits),
                gt,
            };
            if record.segments() != entry.t {
                return Err(Error::shape(format!("T = {} for `{}`", entry.t, record.id), record.segments()));
            }
            videos.push(record);
        }
        Self::new(vocab, class_emb_audio, class_emb_visual, videos, meta)
    }

    pub fn is_dataset_dir(dir: &Path) -> bool {
        dir.join("index.jsonl").is_file()
    }
}

fn mkdir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_labels(dir: &Path, labels: &LabelSet) -> Result<()> {
    mkdir(dir)?;
    for (id, parse) in labels {
        let vd = dir.join(id);
        mkdir(&vd)?;
        write_text(&vd.join("audio.txt"), &format_matrix(parse.audio.matrix()))?;
        write_text(&vd.join("visual.txt"), &format_matrix(parse.visual.matrix()))?;
    }
    Ok(())
}

/// Reads every `<id>/{audio,visual}.txt` pair under `dir`.
pub fn read_labels(dir: &Path) -> Result<LabelSet> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut ids = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.join("audio.txt").is_file() && path.join("visual.txt").is_file() {
            ids.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    ids.sort();
    ids.into_iter()
        .map(|id| {
            let vd = dir.join(&id);
            let audio = LabelMatrix::new(read_matrix(&vd.join("audio.txt"))?, Modality::Audio)?;
            let visual = LabelMatrix::new(read_matrix(&vd.join("visual.txt"))?, Modality::Visual)?;
            Ok((id, VideoParse::new(audio, visual)))
        })
        .collect()
}

/// Ground truth from a dataset directory (videos of `split`) or a label directory.
pub fn read_labels_or_truth(path: &Path, split: Split) -> Result<LabelSet> {
    if Dataset::is_dataset_dir(path) {
        Dataset::load(path)?.ground_truth(split)
    } else {
        read_labels(path)
    }
}
