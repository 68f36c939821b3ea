//! Command-line front end. Every subcommand writes a manifest next to its
//! outputs; `replay` reruns one and checks the output hashes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use super::dataset::{read_labels, read_labels_or_truth, write_labels, Dataset, LabelSet, Split};
use super::experiment::{
    avel_labels, denoise_labels, eval_examples, flip_report_csv, parse_split, pseudo_label_quality, pseudo_labels,
    run_ablation, training_examples, AblationConfig, FlipRecord,
};
use super::manifest::{hash_path, hash_paths, manifest_path, Manifest};
use super::synth::{generate, SynthConfig};
use super::workers_from_env;
use crate::error::{Error, Result};
use crate::metrics::{
    evaluate_dataset, per_category_scores, Averaging, EmptyConvention, EvalOptions, MatchStrategy, ParsingReport,
    VideoParse,
};
use crate::model::{train, Checkpoint, LabelProvenance, ModelConfig};
use crate::numeric::{binarize, format_matrix, read_matrix};
use crate::pld::{PldConfig, PldParams};
use crate::plg::PlgConfig;
use crate::richness::{LossConfig, LossMode};
use crate::types::{LabelMatrix, Modality};

#[derive(Debug, Parser)]
#[command(name = "avvp", version, about = "Segment-wise pseudo labeling for weakly supervised audio-visual video parsing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic corpus with planted segment ground truth.
    GenData(GenDataArgs),
    /// Threshold zero-shot similarity scores into segment pseudo labels.
    Plg(PlgArgs),
    /// Train the parser and save a checkpoint.
    Train(TrainArgs),
    /// Denoise pseudo labels with a trained checkpoint.
    Pld(PldArgs),
    /// Score segment and event predictions against ground truth.
    Eval(EvalArgs),
    /// Run the full ablation grid on a corpus.
    Ablate(AblateArgs),
    /// Audio-visual event labels as the intersection of the two modalities.
    AvelLabels(AvelArgs),
    /// Rerun a subcommand from its manifest and verify the outputs.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Preset {
    Default,
    Clean,
    Benchmark,
}

#[derive(Debug, Args)]
struct GenDataArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Generator seed.
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Base configuration.
    #[arg(long, value_enum, default_value_t = Preset::Default)]
    preset: Preset,
    /// Number of training videos.
    #[arg(long)]
    train: Option<usize>,
    /// Number of validation videos.
    #[arg(long)]
    val: Option<usize>,
    /// Number of test videos.
    #[arg(long)]
    test: Option<usize>,
    /// Embedding noise scale.
    #[arg(long)]
    sigma: Option<f64>,
}

#[derive(Debug, Args)]
struct PlgArgs {
    /// Dataset directory.
    #[arg(long)]
    dataset: PathBuf,
    /// Output label directory.
    #[arg(long)]
    out: PathBuf,
    /// Visual threshold.
    #[arg(long, conflicts_with = "planted")]
    tau_v: Option<f64>,
    /// Audio threshold.
    #[arg(long, conflicts_with = "planted")]
    tau_a: Option<f64>,
    /// Use the threshold recorded by the synthetic generator for both modalities.
    #[arg(long)]
    planted: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum LabelKind {
    Smoothed,
    Plg,
    Pld,
}

impl From<LabelKind> for LabelProvenance {
    fn from(k: LabelKind) -> Self {
        match k {
            LabelKind::Smoothed => LabelProvenance::Smoothed,
            LabelKind::Plg => LabelProvenance::Plg,
            LabelKind::Pld => LabelProvenance::Pld,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum LossArg {
    Video,
    Naive,
    Richness,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Dataset directory.
    #[arg(long)]
    dataset: PathBuf,
    /// Segment label directory (not needed for smoothed labels).
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Where the training targets come from.
    #[arg(long, value_enum, default_value_t = LabelKind::Plg)]
    label_kind: LabelKind,
    /// Training objective.
    #[arg(long, value_enum, default_value_t = LossArg::Richness)]
    loss: LossArg,
    /// Weight of the segment-level loss.
    #[arg(long, default_value_t = 0.5)]
    lambda: f64,
    /// Drop the category-richness term.
    #[arg(long)]
    no_cr: bool,
    /// Drop the segment-richness term.
    #[arg(long)]
    no_sr: bool,
    /// Checkpoint path for the final parameters; the validation-best ones go
    /// to `<stem>.best.ckpt` and the loss history to `<stem>.history.csv`.
    #[arg(long)]
    out: PathBuf,
    /// Training epochs.
    #[arg(long, default_value_t = ModelConfig::default().epochs)]
    epochs: usize,
    /// Adam learning rate.
    #[arg(long, default_value_t = AblationConfig::LEARNING_RATE)]
    lr: f64,
    /// Videos per optimizer step.
    #[arg(long, default_value_t = ModelConfig::default().batch)]
    batch: usize,
    /// Seed for initialization and shuffling.
    #[arg(long, default_value_t = ModelConfig::default().seed)]
    seed: u64,
    /// Attention heads; must divide the feature dimension.
    #[arg(long, default_value_t = ModelConfig::default().heads)]
    heads: usize,
    /// Label smoothing for smoothed video targets.
    #[arg(long, default_value_t = PlgConfig::default().smoothing)]
    smoothing: f64,
    /// Write test-split parses of the best model to this directory.
    #[arg(long)]
    pred_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, ValueEnum)]
enum ModalityArg {
    A,
    V,
    Av,
}

impl ModalityArg {
    fn modalities(self) -> Vec<Modality> {
        match self {
            ModalityArg::A => vec![Modality::Audio],
            ModalityArg::V => vec![Modality::Visual],
            ModalityArg::Av => vec![Modality::Audio, Modality::Visual],
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Args)]
struct PldArgs {
    /// Trained checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset directory.
    #[arg(long)]
    dataset: PathBuf,
    /// Pseudo labels to refine.
    #[arg(long)]
    labels: PathBuf,
    /// Smallest-loss count; defaults to 5 for visual and 6 for audio.
    #[arg(long)]
    k: Option<usize>,
    /// Flip ratio; defaults to 30 for visual and 400 for audio.
    #[arg(long)]
    alpha: Option<f64>,
    /// Modalities to denoise.
    #[arg(long, value_enum, default_value_t = ModalityArg::V)]
    modality: ModalityArg,
    /// Split whose labels are refined.
    #[arg(long, value_enum, default_value_t = SplitArg::Train)]
    split: SplitArg,
    /// Output label directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AveragingArg {
    PerVideo,
    Micro,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum EmptyArg {
    Perfect,
    Zero,
    Skip,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MatchingArg {
    Greedy,
    MaxCardinality,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Ground truth: a dataset directory or a label directory.
    #[arg(long)]
    gt: PathBuf,
    /// Prediction directory (`<id>/audio.txt`, `<id>/visual.txt`, binary or scores).
    #[arg(long, required_unless_present = "checkpoint", conflicts_with = "checkpoint")]
    pred: Option<PathBuf>,
    /// Predict with this checkpoint instead; `--gt` must be a dataset.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Split to score.
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    split: SplitArg,
    /// Cells at or above this value count as positive.
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    /// Per-video mean of F1 or pooled counts.
    #[arg(long, value_enum, default_value_t = AveragingArg::PerVideo)]
    averaging: AveragingArg,
    /// Score of a video whose prediction and ground truth are both empty.
    #[arg(long, value_enum, default_value_t = EmptyArg::Perfect)]
    empty: EmptyArg,
    /// Event matching at tIoU 0.5.
    #[arg(long, value_enum, default_value_t = MatchingArg::Greedy)]
    matching: MatchingArg,
    /// CSV report; a table goes to `<stem>.txt` and per-category scores to
    /// `<stem>.categories.csv`.
    #[arg(long)]
    report: PathBuf,
}

#[derive(Debug, Args)]
struct AblateArgs {
    /// Dataset directory.
    #[arg(long)]
    dataset: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Override the epoch count of every row.
    #[arg(long)]
    epochs: Option<usize>,
    /// Override the learning rate of every row.
    #[arg(long)]
    lr: Option<f64>,
}

#[derive(Debug, Args)]
struct AvelArgs {
    /// Label directory with audio and visual labels.
    #[arg(long)]
    labels: PathBuf,
    /// Output directory for `<id>/av.txt`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ReplayArgs {
    /// Manifest written by an earlier run.
    #[arg(long)]
    manifest: PathBuf,
}

/// What a finished subcommand reports for its manifest.
struct Record {
    config: serde_json::Value,
    seed: Option<u64>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    /// Directory output or main output file; the manifest goes next to it.
    anchor: PathBuf,
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::GenData(_) => "gen-data",
        Command::Plg(_) => "plg",
        Command::Train(_) => "train",
        Command::Pld(_) => "pld",
        Command::Eval(_) => "eval",
        Command::Ablate(_) => "ablate",
        Command::AvelLabels(_) => "avel-labels",
        Command::Replay(_) => "replay",
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().unwrap_or_default().to_string_lossy();
    path.with_file_name(format!("{stem}{suffix}"))
}

fn gen_data(a: &GenDataArgs) -> Result<Record> {
    let mut cfg = match a.preset {
        Preset::Default => SynthConfig::default(),
        Preset::Clean => SynthConfig::clean(),
        Preset::Benchmark => SynthConfig::benchmark(),
    };
    cfg.seed = a.seed;
    if let Some(n) = a.train {
        cfg.train = n;
    }
    if let Some(n) = a.val {
        cfg.val = n;
    }
    if let Some(n) = a.test {
        cfg.test = n;
    }
    if let Some(s) = a.sigma {
        cfg.sigma = s;
    }
    generate(&cfg)?.save(&a.out)?;
    Ok(Record {
        config: serde_json::to_value(cfg)?,
        seed: Some(cfg.seed),
        inputs: vec![],
        outputs: vec![a.out.clone()],
        anchor: a.out.clone(),
    })
}

fn plg(a: &PlgArgs) -> Result<Record> {
    let ds = Dataset::load(&a.dataset)?;
    let mut cfg = PlgConfig::default();
    if a.planted {
        let meta = ds
            .meta
            .ok_or_else(|| Error::Config("--planted needs a synthetic corpus with a recorded threshold".into()))?;
        cfg.tau_a = meta.planted_threshold;
        cfg.tau_v = meta.planted_threshold;
    }
    cfg.tau_a = a.tau_a.unwrap_or(cfg.tau_a);
    cfg.tau_v = a.tau_v.unwrap_or(cfg.tau_v);
    let labels = pseudo_labels(&ds, &cfg, &Split::ALL)?;
    write_labels(&a.out, &labels)?;

    let mut positives = BTreeMap::new();
    for m in [Modality::Audio, Modality::Visual] {
        positives.insert(m.name(), labels.values().map(|p| p.get(m).count_ones()).sum::<usize>());
    }
    let mut quality = BTreeMap::new();
    for split in [Split::Val, Split::Test] {
        let subset: LabelSet = labels
            .iter()
            .filter(|(id, _)| ds.video(id).is_some_and(|v| v.split == split && v.gt.is_some()))
            .map(|(id, p)| (id.clone(), p.clone()))
            .collect();
        if !subset.is_empty() {
            quality.insert(split.name(), pseudo_label_quality(&ds, &subset)?);
        }
    }
    write_json(
        &a.out.join("summary.json"),
        &json!({ "tau_a": cfg.tau_a, "tau_v": cfg.tau_v, "videos": labels.len(), "positives": positives, "quality": quality }),
    )?;
    Ok(Record {
        config: serde_json::to_value(cfg)?,
        seed: None,
        inputs: vec![a.dataset.clone()],
        outputs: vec![a.out.clone()],
        anchor: a.out.clone(),
    })
}

fn train_cmd(a: &TrainArgs, workers: usize) -> Result<Record> {
    let ds = Dataset::load(&a.dataset)?;
    let kind = LabelProvenance::from(a.label_kind);
    let loss = LossConfig {
        lambda: a.lambda,
        use_cr: !a.no_cr,
        use_sr: !a.no_sr,
        mode: match a.loss {
            LossArg::Video => LossMode::VideoOnly,
            LossArg::Naive => LossMode::Naive,
            LossArg::Richness => LossMode::Richness,
        },
    };
    loss.validate()?;
    if kind == LabelProvenance::Smoothed && loss.needs_segment_labels() {
        return Err(Error::Config("smoothed labels carry no segment labels; use --loss video".into()));
    }
    let labels = match (&a.labels, kind) {
        (Some(dir), _) => Some(read_labels(dir)?),
        (None, LabelProvenance::Smoothed) => None,
        (None, _) => return Err(Error::Config("--labels is required unless --label-kind smoothed".into())),
    };
    let cfg = ModelConfig {
        d: ds.feature_dim(),
        heads: a.heads,
        lr: a.lr,
        batch: a.batch,
        epochs: a.epochs,
        seed: a.seed,
        ..ModelConfig::default()
    };
    cfg.validate()?;
    let examples = training_examples(&ds, kind, labels.as_ref(), a.smoothing)?;
    let val = eval_examples(&ds, Split::Val)?;
    let outcome = train(&examples, &val, &loss, &cfg, workers)?;

    let save = |path: &Path, params| {
        Checkpoint {
            config: cfg,
            loss,
            provenance: kind,
            categories: ds.vocab.names().to_vec(),
            params,
        }
        .save(path)
    };
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let best = sibling(&a.out, ".best.ckpt");
    let history = sibling(&a.out, ".history.csv");
    save(&a.out, outcome.final_params.clone())?;
    save(&best, outcome.best_params.clone())?;
    let mut csv = String::from("epoch,video,segment,total,val_type_av\n");
    for h in &outcome.history {
        let val = h.val_type_av.map_or(String::new(), |v| format!("{v:.6}"));
        csv.push_str(&format!("{},{:.9},{:.9},{:.9},{val}\n", h.epoch, h.video, h.segment, h.total));
    }
    write_text(&history, &csv)?;

    let mut outputs = vec![a.out.clone(), best, history];
    if let Some(dir) = &a.pred_out {
        write_labels(dir, &parse_split(&outcome.best_params, &cfg, &ds, Split::Test, workers)?)?;
        outputs.push(dir.clone());
    }
    let mut inputs = vec![a.dataset.clone()];
    inputs.extend(a.labels.clone());
    Ok(Record {
        config: json!({ "model": cfg, "loss": loss, "label_kind": kind, "smoothing": a.smoothing }),
        seed: Some(cfg.seed),
        inputs,
        outputs,
        anchor: a.out.clone(),
    })
}

fn pld_cmd(a: &PldArgs, workers: usize) -> Result<Record> {
    let ds = Dataset::load(&a.dataset)?;
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    if ckpt.categories.len() != ds.categories() {
        return Err(Error::shape(
            format!("{} categories", ds.categories()),
            format!("checkpoint with {}", ckpt.categories.len()),
        ));
    }
    let labels = read_labels(&a.labels)?;
    let mut cfg = PldConfig {
        targets: a.modality.modalities(),
        ..PldConfig::default()
    };
    for p in [&mut cfg.audio, &mut cfg.visual] {
        *p = PldParams {
            k: a.k.unwrap_or(p.k),
            alpha: a.alpha.unwrap_or(p.alpha),
        };
    }
    let split = Split::from(a.split);
    let (refined, records) = denoise_labels(&ckpt.params, &ckpt.config, &ds, split, &labels, &cfg, workers)?;
    write_labels(&a.out, &refined)?;
    write_text(&a.out.join("flip_report.csv"), &flip_report_csv(&records))?;
    write_text(&a.out.join("flip_totals.csv"), &flip_totals_csv(&records, &ds))?;
    if ds.split(split).all(|v| v.gt.is_some()) && !refined.is_empty() {
        write_json(&a.out.join("quality.json"), &pseudo_label_quality(&ds, &refined)?)?;
    }
    Ok(Record {
        config: json!({ "pld": cfg, "split": split.name() }),
        seed: None,
        inputs: vec![a.checkpoint.clone(), a.dataset.clone(), a.labels.clone()],
        outputs: vec![a.out.clone()],
        anchor: a.out.clone(),
    })
}

fn flip_totals_csv(records: &[FlipRecord], ds: &Dataset) -> String {
    let mut totals: BTreeMap<(String, &str), (usize, usize)> = BTreeMap::new();
    for r in records {
        let slot = totals.entry((r.category.clone(), r.modality.name())).or_default();
        slot.0 += r.turned_on;
        slot.1 += r.turned_off;
    }
    let mut out = String::from("category,modality,turned_on,turned_off\n");
    for name in ds.vocab.names() {
        for m in [Modality::Audio, Modality::Visual] {
            if let Some((on, off)) = totals.get(&(name.clone(), m.name())) {
                out.push_str(&format!("{name},{},{on},{off}\n", m.name()));
            }
        }
    }
    out
}

/// Label matrices under `dir`, binarized at `threshold`.
fn read_predictions(dir: &Path, threshold: f64) -> Result<LabelSet> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = LabelSet::new();
    for entry in entries {
        let vd = entry.map_err(|e| Error::io(dir, e))?.path();
        let (ap, vp) = (vd.join("audio.txt"), vd.join("visual.txt"));
        if !(ap.is_file() && vp.is_file()) {
            continue;
        }
        let id = vd.file_name().unwrap_or_default().to_string_lossy().into_owned();
        let audio = LabelMatrix::new(binarize(&read_matrix(&ap)?, threshold), Modality::Audio)?;
        let visual = LabelMatrix::new(binarize(&read_matrix(&vp)?, threshold), Modality::Visual)?;
        out.insert(id, VideoParse::new(audio, visual));
    }
    Ok(out)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{x:.4}"))
}

fn eval_cmd(a: &EvalArgs, workers: usize) -> Result<Record> {
    let split = Split::from(a.split);
    let opts = EvalOptions {
        averaging: match a.averaging {
            AveragingArg::PerVideo => Averaging::PerVideo,
            AveragingArg::Micro => Averaging::Micro,
        },
        empty: match a.empty {
            EmptyArg::Perfect => EmptyConvention::Perfect,
            EmptyArg::Zero => EmptyConvention::Zero,
            EmptyArg::Skip => EmptyConvention::Skip,
        },
        matching: match a.matching {
            MatchingArg::Greedy => MatchStrategy::Greedy,
            MatchingArg::MaxCardinality => MatchStrategy::MaxCardinality,
        },
        ..EvalOptions::default()
    };
    let gts = read_labels_or_truth(&a.gt, split)?;
    let (preds, source) = match (&a.pred, &a.checkpoint) {
        (Some(dir), _) => (read_predictions(dir, a.threshold)?, dir.clone()),
        (None, Some(path)) => {
            if !Dataset::is_dataset_dir(&a.gt) {
                return Err(Error::Config("--checkpoint needs --gt to be a dataset directory".into()));
            }
            let ds = Dataset::load(&a.gt)?;
            let ckpt = Checkpoint::load(path)?;
            let cfg = ModelConfig {
                pred_threshold: a.threshold,
                ..ckpt.config
            };
            (parse_split(&ckpt.params, &cfg, &ds, split, workers)?, path.clone())
        }
        (None, None) => return Err(Error::Config("one of --pred or --checkpoint is required".into())),
    };
    if gts.is_empty() {
        return Err(Error::DegenerateInput(format!("no ground-truth videos in {}", a.gt.display())));
    }
    let report = evaluate_dataset(&preds, &gts, &opts)?;
    let per_cat = per_category_scores(&preds, &gts, &opts)?;
    let names: Vec<String> = if Dataset::is_dataset_dir(&a.gt) {
        Dataset::load(&a.gt)?.vocab.names().to_vec()
    } else {
        (0..per_cat.len()).map(|c| format!("class_{c:02}")).collect()
    };

    write_text(&a.report, &format!("{}\n{}\n", ParsingReport::COLUMNS.join(","), report.csv_row()))?;
    let mut cats = String::from("category,segA,segV,segAV,evtA,evtV,evtAV\n");
    for (name, s) in names.iter().zip(&per_cat) {
        let cells: Vec<String> = s.segment.iter().chain(&s.event).map(|&v| fmt_opt(v)).collect();
        cats.push_str(&format!("{name},{}\n", cells.join(",")));
    }
    let cat_path = sibling(&a.report, ".categories.csv");
    write_text(&cat_path, &cats)?;
    let table_path = sibling(&a.report, ".txt");
    write_text(&table_path, &pretty_report(&report, gts.len()))?;

    Ok(Record {
        config: json!({ "split": split.name(), "threshold": a.threshold, "eval": opts }),
        seed: None,
        inputs: vec![a.gt.clone(), source],
        outputs: vec![a.report.clone(), cat_path, table_path],
        anchor: a.report.clone(),
    })
}

fn pretty_report(r: &ParsingReport, videos: usize) -> String {
    let mut out = format!("{videos} videos\n{:<9}", "level");
    for h in ["A", "V", "AV", "Type@AV", "Event@AV"] {
        out.push_str(&format!("{h:>10}"));
    }
    out.push('\n');
    for (name, level) in [("segment", &r.segment), ("event", &r.event)] {
        out.push_str(&format!("{name:<9}"));
        for v in level.values() {
            out.push_str(&format!("{v:>10.2}"));
        }
        out.push('\n');
    }
    out
}

fn ablate(a: &AblateArgs, workers: usize) -> Result<Record> {
    let ds = Dataset::load(&a.dataset)?;
    let mut cfg = AblationConfig::for_dataset(&ds);
    cfg.workers = workers;
    if let Some(e) = a.epochs {
        cfg.model.epochs = e;
    }
    if let Some(lr) = a.lr {
        cfg.model.lr = lr;
    }
    let table = run_ablation(&ds, &cfg)?;
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    write_text(&a.out.join("ablation.csv"), &table.csv())?;
    write_text(&a.out.join("ablation.txt"), &table.pretty())?;
    write_json(&a.out.join("ablation.json"), &table)?;
    let mut config = serde_json::to_value(&cfg)?;
    if let Some(obj) = config.as_object_mut() {
        obj.remove("workers");
    }
    Ok(Record {
        config,
        seed: Some(cfg.model.seed),
        inputs: vec![a.dataset.clone()],
        outputs: vec![a.out.clone()],
        anchor: a.out.clone(),
    })
}

fn avel(a: &AvelArgs) -> Result<Record> {
    let labels = read_labels(&a.labels)?;
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    for (id, p) in &labels {
        write_text(&a.out.join(id).join("av.txt"), &format_matrix(avel_labels(&p.audio, &p.visual)?.matrix()))?;
    }
    Ok(Record {
        config: json!({ "videos": labels.len() }),
        seed: None,
        inputs: vec![a.labels.clone()],
        outputs: vec![a.out.clone()],
        anchor: a.out.clone(),
    })
}

fn replay(a: &ReplayArgs) -> Result<String> {
    let recorded = Manifest::load(&a.manifest)?;
    for (path, digest) in &recorded.inputs {
        if hash_path(Path::new(path))? != *digest {
            return Err(Error::ContractViolation(format!("input {path} changed since the recorded run")));
        }
    }
    let cli = Cli::try_parse_from(std::iter::once("avvp".to_string()).chain(recorded.argv.iter().cloned()))
        .map_err(|e| Error::Config(format!("manifest argv does not parse: {}", one_line(&e.to_string()))))?;
    if matches!(cli.command, Command::Replay(_)) {
        return Err(Error::Config("a replay manifest cannot itself be replayed".into()));
    }
    execute(&cli.command, &recorded.argv, recorded.workers)?;
    let mut diffs = Vec::new();
    for (path, digest) in &recorded.outputs {
        if hash_path(Path::new(path))? != *digest {
            diffs.push(path.clone());
        }
    }
    if !diffs.is_empty() {
        return Err(Error::ContractViolation(format!("replayed outputs differ: {}", diffs.join(", "))));
    }
    Ok(format!("replay ok: {} output(s) identical", recorded.outputs.len()))
}

fn execute(command: &Command, argv: &[String], workers: usize) -> Result<()> {
    let record = match command {
        Command::GenData(a) => gen_data(a)?,
        Command::Plg(a) => plg(a)?,
        Command::Train(a) => train_cmd(a, workers)?,
        Command::Pld(a) => pld_cmd(a, workers)?,
        Command::Eval(a) => eval_cmd(a, workers)?,
        Command::Ablate(a) => ablate(a, workers)?,
        Command::AvelLabels(a) => avel(a)?,
        Command::Replay(_) => unreachable!("handled by the caller"),
    };
    let manifest = Manifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        command: command_name(command).to_string(),
        argv: argv.to_vec(),
        config: record.config,
        seed: record.seed,
        workers,
        inputs: hash_paths(record.inputs.iter().map(PathBuf::as_path))?,
        outputs: hash_paths(record.outputs.iter().map(PathBuf::as_path))?,
    };
    manifest.save(&manifest_path(&record.anchor))
}

/// A clap error message folded onto one line, without the usage block.
fn one_line(s: &str) -> String {
    let body = s.split("\n\nUsage:").next().unwrap_or(s);
    let body = body.split("\n\nFor more information").next().unwrap_or(body);
    body.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit status.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let args: Vec<String> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return 0;
        }
        Err(e) => {
            eprintln!("{}", one_line(&e.to_string()));
            return 2;
        }
    };
    let outcome = match &cli.command {
        Command::Replay(a) => replay(a).map(|msg| println!("{msg}")),
        other => execute(other, &args[1.min(args.len())..], workers_from_env()),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
