//! Seeded randomized invariant suites, one function per property.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use avvp::metrics::{
    av_intersection, evaluate_dataset, event_f1, extract_events, match_spans, segment_counts, segment_f1, tiou,
    EvalOptions, EventSpan, MatchStrategy, VideoParse,
};
use avvp::model::{
    han_forward, model_grad_check, pooling_weights, predict, train, ModelConfig, Params, TrainExample,
};
use avvp::numeric::{binarize, bce, l2_normalize_rows, softmax_row};
use avvp::pipeline::cli;
use avvp::pipeline::experiment::{avel_labels, pseudo_label_quality, pseudo_labels};
use avvp::pipeline::{generate, Dataset, Split, SynthConfig};
use avvp::pld::{denoise_modality, flip_mask_column, refine_labels, PldParams};
use avvp::plg::{generate_segment_labels, segment_to_video_label, PlgConfig};
use avvp::richness::{
    category_richness, segment_richness, total_loss, total_loss_grad, video_loss, LossConfig, LossMode,
    RichnessProfile, Targets,
};
use avvp::{EmbeddingSet, LabelMatrix, Matrix, Modality, PredictionBundle, VideoLabel};

use super::oracles::{central_difference, exhaustive_event_f1, exhaustive_matches, rel_err, runs};

pub const CASES: u32 = 1000;

pub type Outcome = Result<(), String>;

pub struct Suite {
    pub module: &'static str,
    pub name: &'static str,
    pub run: fn() -> Outcome,
}

fn runner(name: &str) -> TestRunner {
    let mut seed = [0u8; 32];
    for (i, b) in name.bytes().enumerate() {
        seed[i % 32] = seed[i % 32].wrapping_mul(31).wrapping_add(b);
    }
    let config = Config {
        cases: CASES,
        failure_persistence: None,
        ..Config::default()
    };
    TestRunner::new_with_rng(config, TestRng::from_seed(RngAlgorithm::ChaCha, &seed))
}

fn check<S>(name: &str, strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Outcome
where
    S: Strategy,
    S::Value: std::fmt::Debug,
{
    runner(name).run(&strategy, test).map_err(|e| format!("{name}: {e}"))
}

/// Runs `test` on a fresh ChaCha stream per case.
fn check_seeded(name: &str, test: impl Fn(&mut ChaCha8Rng) -> Result<(), TestCaseError>) -> Outcome {
    check(name, any::<u64>(), |seed| test(&mut ChaCha8Rng::seed_from_u64(seed)))
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| normal(rng))
}

fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(lo..hi))
}

fn video_label(rng: &mut ChaCha8Rng, c: usize) -> VideoLabel {
    let mut bits: Vec<bool> = (0..c).map(|_| rng.random_bool(0.5)).collect();
    if !bits.iter().any(|&b| b) {
        bits[rng.random_range(0..c)] = true;
    }
    VideoLabel::new(bits)
}

/// Random segment labels inside the columns of `y`.
fn masked_labels(rng: &mut ChaCha8Rng, t: usize, y: &VideoLabel, m: Modality) -> LabelMatrix {
    let mut l = LabelMatrix::zeros(t, y.len(), m);
    for c in y.active() {
        for s in 0..t {
            l.set(s, c, rng.random_bool(0.5));
        }
    }
    l
}

fn any_labels(rng: &mut ChaCha8Rng, t: usize, c: usize, density: f64, m: Modality) -> LabelMatrix {
    let mut l = LabelMatrix::zeros(t, c, m);
    for s in 0..t {
        for k in 0..c {
            l.set(s, k, rng.random_bool(density));
        }
    }
    l
}

fn bits(l: &LabelMatrix) -> Vec<Vec<bool>> {
    (0..l.segments()).map(|t| (0..l.categories()).map(|c| l.get(t, c)).collect()).collect()
}

// ---------------------------------------------------------------- core

pub fn core_softmax_is_a_distribution() -> Outcome {
    check("core_softmax", prop::collection::vec(-15.0f64..15.0, 2..30), |v| {
        let s = softmax_row(&v);
        prop_assert!((s.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        prop_assert!(s.iter().all(|&x| x > 0.0 && x < 1.0), "{s:?}");
        Ok(())
    })
}

pub fn core_normalize_is_idempotent() -> Outcome {
    check_seeded("core_normalize", |rng| {
        let (r, c) = (rng.random_range(1..8), rng.random_range(1..12));
        let scale = 10f64.powi(rng.random_range(-3..4));
        let m = normal_matrix(rng, r, c).map(|x| x * scale);
        let once = l2_normalize_rows(&m).unwrap();
        let twice = l2_normalize_rows(&once).unwrap();
        prop_assert!(once.max_abs_diff(&twice) <= 1e-12);
        Ok(())
    })
}

pub fn core_bce_nonnegative_and_convex() -> Outcome {
    check("core_bce", (0.01f64..0.99, 0.0f64..=1.0, 1e-3f64..1e-2), |(p, y, h)| {
        prop_assert!(bce(p, y) >= 0.0);
        let second = bce(p - h, y) + bce(p + h, y) - 2.0 * bce(p, y);
        prop_assert!(second > 0.0, "second difference {second}");
        Ok(())
    })
}

pub fn core_binarize_is_idempotent() -> Outcome {
    check_seeded("core_binarize", |rng| {
        let (r, c) = (rng.random_range(1..8), rng.random_range(1..8));
        let m = uniform_matrix(rng, r, c, -1.0, 2.0);
        let b = binarize(&m, 0.5);
        prop_assert_eq!(binarize(&b, 0.5), b.clone());
        let binary = Matrix::from_fn(r, c, |_, _| if rng.random_bool(0.5) { 1.0 } else { 0.0 });
        prop_assert_eq!(binarize(&binary, 0.5), binary);
        Ok(())
    })
}

// ----------------------------------------------------------------- plg

struct PlgCase {
    emb: EmbeddingSet,
    y: VideoLabel,
}

fn plg_case(rng: &mut ChaCha8Rng) -> PlgCase {
    let t = rng.random_range(1..=10);
    let c = rng.random_range(2..=8);
    let d = rng.random_range(2..=8);
    PlgCase {
        emb: EmbeddingSet::new(normal_matrix(rng, t, d), normal_matrix(rng, c, d)).unwrap(),
        y: video_label(rng, c),
    }
}

/// A threshold in the range softmax scores over `c` classes actually reach.
fn tau_for(rng: &mut ChaCha8Rng, c: usize) -> f64 {
    rng.random_range(0.2 / c as f64..2.0 / c as f64).min(0.999)
}

pub fn plg_monotone_in_threshold() -> Outcome {
    check_seeded("plg_monotone", |rng| {
        let case = plg_case(rng);
        let c = case.y.len();
        let (a, b) = (tau_for(rng, c), tau_for(rng, c));
        let (lo, hi) = (a.min(b), a.max(b));
        let l_lo = generate_segment_labels(&case.emb, lo, &case.y, Modality::Visual).unwrap();
        let l_hi = generate_segment_labels(&case.emb, hi, &case.y, Modality::Visual).unwrap();
        for t in 0..l_lo.segments() {
            for k in 0..c {
                prop_assert!(l_lo.get(t, k) || !l_hi.get(t, k));
            }
        }
        Ok(())
    })
}

pub fn plg_masks_by_video_label() -> Outcome {
    check_seeded("plg_mask", |rng| {
        let case = plg_case(rng);
        let tau = tau_for(rng, case.y.len());
        let l = generate_segment_labels(&case.emb, tau, &case.y, Modality::Audio).unwrap();
        for k in (0..case.y.len()).filter(|&k| !case.y.get(k)) {
            prop_assert!((0..l.segments()).all(|t| !l.get(t, k)));
        }
        Ok(())
    })
}

pub fn plg_video_round_trip_within_label() -> Outcome {
    check_seeded("plg_round_trip", |rng| {
        let case = plg_case(rng);
        let tau = tau_for(rng, case.y.len());
        let l = generate_segment_labels(&case.emb, tau, &case.y, Modality::Audio).unwrap();
        let back = segment_to_video_label(&l);
        for k in 0..case.y.len() {
            prop_assert!(!back.get(k) || case.y.get(k));
        }
        Ok(())
    })
}

pub fn plg_scale_invariant() -> Outcome {
    check_seeded("plg_scale", |rng| {
        let case = plg_case(rng);
        let tau = tau_for(rng, case.y.len());
        let mut frames = case.emb.frames().clone();
        let mut classes = case.emb.classes().clone();
        for m in [&mut frames, &mut classes] {
            for r in 0..m.rows() {
                let s = 10f64.powf(rng.random_range(-2.0..2.0));
                for v in m.row_mut(r) {
                    *v *= s;
                }
            }
        }
        let scaled = EmbeddingSet::new(frames, classes).unwrap();
        let a = generate_segment_labels(&case.emb, tau, &case.y, Modality::Visual).unwrap();
        let b = generate_segment_labels(&scaled, tau, &case.y, Modality::Visual).unwrap();
        prop_assert_eq!(a, b);
        Ok(())
    })
}

// ------------------------------------------------------------ richness

struct LossCase {
    bundle: PredictionBundle,
    targets: Targets,
}

fn loss_case(rng: &mut ChaCha8Rng, t: usize, c: usize) -> LossCase {
    let y = video_label(rng, c);
    let vec = |rng: &mut ChaCha8Rng| (0..c).map(|_| rng.random_range(0.02..0.98)).collect::<Vec<f64>>();
    let (va, vv, vu) = (vec(rng), vec(rng), vec(rng));
    let (ta, tv) = (vec(rng), vec(rng));
    LossCase {
        bundle: PredictionBundle::new(
            uniform_matrix(rng, t, c, 0.02, 0.98),
            uniform_matrix(rng, t, c, 0.02, 0.98),
            va,
            vv,
            vu,
        )
        .unwrap(),
        targets: Targets {
            seg_audio: Some(masked_labels(rng, t, &y, Modality::Audio)),
            seg_visual: Some(masked_labels(rng, t, &y, Modality::Visual)),
            video_audio: ta,
            video_visual: tv,
            video_label: y,
        },
    }
}

fn loss_config(rng: &mut ChaCha8Rng) -> LossConfig {
    let mode = [LossMode::Richness, LossMode::Naive, LossMode::VideoOnly][rng.random_range(0..3)];
    LossConfig {
        lambda: rng.random_range(0.0..2.0),
        use_cr: rng.random_bool(0.75),
        use_sr: rng.random_bool(0.75),
        mode,
    }
}

pub fn richness_bounded() -> Outcome {
    check_seeded("richness_bounds", |rng| {
        let (t, c) = (rng.random_range(1..=10), rng.random_range(1..=25));
        let y = video_label(rng, c);
        let labels = any_labels(rng, t, c, 0.5, Modality::Audio);
        let p = uniform_matrix(rng, t, c, 0.0, 1.0);
        let profiles = [
            RichnessProfile::from_labels(&labels, &y).unwrap(),
            RichnessProfile::from_predictions(&p, &y).unwrap(),
        ];
        for prof in &profiles {
            prop_assert!(prof.cr.iter().chain(&prof.sr).all(|v| (0.0..=1.0).contains(v)));
        }
        let raw = category_richness(&p, &y).unwrap();
        prop_assert!(raw.iter().chain(&segment_richness(&p)).all(|v| (0.0..=1.0).contains(v)));
        Ok(())
    })
}

pub fn richness_permutation_equivariant() -> Outcome {
    check_seeded("richness_permutation", |rng| {
        let (t, c) = (rng.random_range(1..=10), rng.random_range(1..=25));
        let y = video_label(rng, c);
        let p = uniform_matrix(rng, t, c, 0.0, 1.0);
        let (cr, sr) = (category_richness(&p, &y).unwrap(), segment_richness(&p));

        let mut rows: Vec<usize> = (0..t).collect();
        rows.shuffle(rng);
        let pr = Matrix::from_fn(t, c, |i, j| p.get(rows[i], j));
        let cr_r = category_richness(&pr, &y).unwrap();
        for i in 0..t {
            prop_assert_eq!(cr_r[i], cr[rows[i]]);
        }
        let sr_r = segment_richness(&pr);
        prop_assert!(sr_r.iter().zip(&sr).all(|(a, b)| (a - b).abs() <= 1e-12));

        let mut cols: Vec<usize> = (0..c).collect();
        cols.shuffle(rng);
        let pc = Matrix::from_fn(t, c, |i, j| p.get(i, cols[j]));
        let yc = VideoLabel::new(cols.iter().map(|&j| y.get(j)).collect());
        let sr_c = segment_richness(&pc);
        for j in 0..c {
            prop_assert_eq!(sr_c[j], sr[cols[j]]);
        }
        let cr_c = category_richness(&pc, &yc).unwrap();
        prop_assert!(cr_c.iter().zip(&cr).all(|(a, b)| (a - b).abs() <= 1e-12));
        Ok(())
    })
}

pub fn richness_loss_nonnegative_and_reduces_at_zero_weight() -> Outcome {
    check_seeded("richness_nonnegative", |rng| {
        let (t, c) = (rng.random_range(1..=10), rng.random_range(1..=25));
        let case = loss_case(rng, t, c);
        let cfg = loss_config(rng);
        let l = total_loss(&case.bundle, &case.targets, &cfg).unwrap();
        prop_assert!(l.total >= 0.0 && l.video >= 0.0 && l.segment >= 0.0);
        let zero = LossConfig { lambda: 0.0, ..cfg };
        let l0 = total_loss(&case.bundle, &case.targets, &zero).unwrap();
        prop_assert_eq!(l0.total.to_bits(), video_loss(&case.bundle, &case.targets).to_bits());
        Ok(())
    })
}

pub fn richness_monotone_in_weight() -> Outcome {
    check_seeded("richness_lambda", |rng| {
        let (t, c) = (rng.random_range(1..=10), rng.random_range(1..=25));
        let case = loss_case(rng, t, c);
        let cfg = loss_config(rng);
        let (a, b): (f64, f64) = (rng.random_range(0.0..3.0), rng.random_range(0.0..3.0));
        let (lo, hi) = (a.min(b), a.max(b));
        let at = |lambda: f64| total_loss(&case.bundle, &case.targets, &LossConfig { lambda, ..cfg }).unwrap();
        let (l_lo, l_hi) = (at(lo), at(hi));
        prop_assert!(l_hi.total >= l_lo.total);
        prop_assert_eq!(l_lo.segment, l_hi.segment);
        prop_assert_eq!(l_hi.total, l_hi.video + hi * l_hi.segment);
        Ok(())
    })
}

/// Every coordinate of the bundle, flattened in a fixed order.
fn flatten(b: &PredictionBundle) -> Vec<f64> {
    let mut x = b.seg_audio.as_slice().to_vec();
    x.extend_from_slice(b.seg_visual.as_slice());
    x.extend(&b.video_audio);
    x.extend(&b.video_visual);
    x.extend(&b.video_union);
    x
}

fn unflatten(x: &[f64], t: usize, c: usize) -> PredictionBundle {
    let tc = t * c;
    PredictionBundle {
        seg_audio: Matrix::from_vec(t, c, x[..tc].to_vec()).unwrap(),
        seg_visual: Matrix::from_vec(t, c, x[tc..2 * tc].to_vec()).unwrap(),
        video_audio: x[2 * tc..2 * tc + c].to_vec(),
        video_visual: x[2 * tc + c..2 * tc + 2 * c].to_vec(),
        video_union: x[2 * tc + 2 * c..].to_vec(),
    }
}

/// Largest relative error between `total_loss_grad` and central differences.
pub fn richness_fd_error(rng: &mut ChaCha8Rng, t: usize, c: usize, cfg: &LossConfig) -> f64 {
    richness_fd_report(rng, t, c, cfg).0
}

/// Largest relative error and largest analytic gradient magnitude.
pub fn richness_fd_report(rng: &mut ChaCha8Rng, t: usize, c: usize, cfg: &LossConfig) -> (f64, f64) {
    let case = loss_case(rng, t, c);
    let (_, g) = total_loss_grad(&case.bundle, &case.targets, cfg).unwrap();
    let mut analytic = g.seg_audio.as_slice().to_vec();
    analytic.extend_from_slice(g.seg_visual.as_slice());
    analytic.extend(&g.video_audio);
    analytic.extend(&g.video_visual);
    analytic.extend(&g.video_union);
    let x = flatten(&case.bundle);
    let f = |x: &[f64]| total_loss(&unflatten(x, t, c), &case.targets, cfg).unwrap().total;
    let err = (0..x.len())
        .map(|i| rel_err(analytic[i], central_difference(&f, &x, i, 1e-6), 1e-7))
        .fold(0.0, f64::max);
    (err, analytic.iter().fold(0.0, |m, g| m.max(g.abs())))
}

pub fn richness_gradient_matches_finite_differences() -> Outcome {
    check_seeded("richness_gradient", |rng| {
        let (t, c) = (rng.random_range(1..=10), rng.random_range(1..=25));
        let cfg = loss_config(rng);
        let err = richness_fd_error(rng, t, c, &cfg);
        prop_assert!(err < 1e-4, "relative error {err} for {cfg:?}");
        Ok(())
    })
}

// ----------------------------------------------------------------- pld

fn loss_column(rng: &mut ChaCha8Rng, t: usize) -> Vec<f64> {
    (0..t)
        .map(|_| if rng.random_bool(0.1) { 0.0 } else { 10f64.powf(rng.random_range(-4.0..1.5)) })
        .collect()
}

pub fn pld_never_flips_masked_categories() -> Outcome {
    check_seeded("pld_masked", |rng| {
        let (t, c) = (rng.random_range(1..=10), rng.random_range(1..=6));
        let p = uniform_matrix(rng, t, c, 0.0, 1.0);
        let labels = any_labels(rng, t, c, 0.5, Modality::Visual);
        let video = VideoLabel::new((0..c).map(|_| rng.random_bool(0.5)).collect());
        let params = PldParams { k: rng.random_range(1..=t), alpha: rng.random_range(0.5..50.0) };
        let out = denoise_modality(&p, &labels, &video, params).unwrap();
        for k in (0..c).filter(|&k| !video.get(k)) {
            prop_assert!((0..t).all(|s| out.get(s, k) == labels.get(s, k)));
        }
        Ok(())
    })
}

pub fn pld_scale_equivariant() -> Outcome {
    check_seeded("pld_scale", |rng| {
        let t = rng.random_range(1..=10);
        let col = loss_column(rng, t);
        let (k, alpha) = (rng.random_range(1..=t), rng.random_range(0.5..50.0));
        let s = 10f64.powf(rng.random_range(-3.0..3.0));
        let scaled: Vec<f64> = col.iter().map(|v| v * s).collect();
        prop_assert_eq!(flip_mask_column(&col, k, alpha).unwrap(), flip_mask_column(&scaled, k, alpha).unwrap());
        Ok(())
    })
}

pub fn pld_refine_is_an_involution() -> Outcome {
    check_seeded("pld_involution", |rng| {
        let (t, c) = (rng.random_range(1..=10), rng.random_range(1..=6));
        let labels = any_labels(rng, t, c, 0.5, Modality::Visual);
        let phi = Matrix::from_fn(t, c, |_, _| if rng.random_bool(0.3) { 1.0 } else { 0.0 });
        let twice = refine_labels(&refine_labels(&labels, &phi).unwrap(), &phi).unwrap();
        prop_assert_eq!(twice, labels);
        Ok(())
    })
}

pub fn pld_preserves_video_label_masking() -> Outcome {
    check_seeded("pld_masking", |rng| {
        let (t, c) = (rng.random_range(1..=10), rng.random_range(1..=6));
        let y = video_label(rng, c);
        let labels = masked_labels(rng, t, &y, Modality::Visual);
        let p = uniform_matrix(rng, t, c, 0.0, 1.0);
        let params = PldParams { k: rng.random_range(1..=t), alpha: rng.random_range(0.5..50.0) };
        let out = denoise_modality(&p, &labels, &y, params).unwrap();
        prop_assert!(out.respects_video_label(&y));
        Ok(())
    })
}

pub fn pld_monotone_in_alpha() -> Outcome {
    check_seeded("pld_alpha", |rng| {
        let t = rng.random_range(1..=10);
        let col = loss_column(rng, t);
        let k = rng.random_range(1..=t);
        let (a, b): (f64, f64) = (rng.random_range(0.5..50.0), rng.random_range(0.5..50.0));
        let lo = flip_mask_column(&col, k, a.min(b)).unwrap();
        let hi = flip_mask_column(&col, k, a.max(b)).unwrap();
        prop_assert!(lo.iter().zip(&hi).all(|(&l, &h)| l || !h));
        Ok(())
    })
}

// --------------------------------------------------------------- model

pub fn model_residual_identity() -> Outcome {
    check_seeded("model_residual", |rng| {
        let heads = [1, 2][rng.random_range(0..2)];
        let (t, d, c) = (rng.random_range(1..=6), 2 * rng.random_range(1..=4), rng.random_range(1..=5));
        let mut params = Params::zeros(d, c);
        params.cls_w = normal_matrix(rng, d, c);
        let (fa, fv) = (normal_matrix(rng, t, d), normal_matrix(rng, t, d));
        let (ha, hv) = han_forward(&fa, &fv, &params, heads);
        prop_assert_eq!(ha, fa);
        prop_assert_eq!(hv, fv);
        Ok(())
    })
}

pub fn model_pooling_is_convex() -> Outcome {
    check_seeded("model_pooling", |rng| {
        let (t, d, c) = (rng.random_range(1..=6), rng.random_range(1..=8), rng.random_range(1..=5));
        let mut params = Params::init(d, c, rng);
        params.cls_b = normal_matrix(rng, 1, c);
        params.pool_audio_w = normal_matrix(rng, d, 1).map(|x| 3.0 * x);
        params.pool_visual_w = normal_matrix(rng, d, 1).map(|x| 3.0 * x);
        let (ha, hv) = (normal_matrix(rng, t, d), normal_matrix(rng, t, d));
        let (wa, wv) = pooling_weights(&ha, &hv, &params);
        for w in [&wa, &wv] {
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(w.iter().all(|&x| x >= 0.0));
        }
        let b = predict(&ha, &hv, &params);
        for (seg, video) in [(&b.seg_audio, &b.video_audio), (&b.seg_visual, &b.video_visual)] {
            for k in 0..c {
                let col = seg.column(k);
                let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(video[k] >= lo - 1e-12 && video[k] <= hi + 1e-12);
            }
        }
        Ok(())
    })
}

pub fn model_union_dominates_each_modality() -> Outcome {
    check_seeded("model_union", |rng| {
        let (t, d, c) = (rng.random_range(1..=6), rng.random_range(1..=8), rng.random_range(1..=5));
        let mut params = Params::init(d, c, rng);
        params.cls_b = normal_matrix(rng, 1, c).map(|x| 4.0 * x);
        let b = predict(&normal_matrix(rng, t, d), &normal_matrix(rng, t, d), &params);
        for k in 0..c {
            let u = b.video_union[k];
            prop_assert!(u > 0.0 && u < 1.0);
            prop_assert!(u >= b.video_audio[k].max(b.video_visual[k]), "{u} vs {} {}", b.video_audio[k], b.video_visual[k]);
        }
        Ok(())
    })
}

pub fn model_gradient_check() -> Outcome {
    check_seeded("model_gradient", |rng| {
        let d = [2, 4][rng.random_range(0..2)];
        let heads = if d == 4 && rng.random_bool(0.5) { 2 } else { 1 };
        let cfg = ModelConfig { d, heads, ..ModelConfig::default() };
        let loss = loss_config(rng);
        let r = model_grad_check(&cfg, &loss, rng.random()).unwrap();
        prop_assert!(r.max_rel_error < 1e-4, "{r:?} {loss:?}");
        Ok(())
    })
}

pub fn model_training_is_deterministic() -> Outcome {
    check_seeded("model_determinism", |rng| {
        let (t, d, c) = (rng.random_range(2..=4), 4, rng.random_range(2..=4));
        let data: Vec<TrainExample> = (0..rng.random_range(2..=4))
            .map(|i| {
                let y = video_label(rng, c);
                TrainExample {
                    id: format!("v{i}"),
                    fa: normal_matrix(rng, t, d),
                    fv: normal_matrix(rng, t, d),
                    targets: Targets {
                        video_audio: y.to_f64(),
                        video_visual: y.to_f64(),
                        seg_audio: Some(masked_labels(rng, t, &y, Modality::Audio)),
                        seg_visual: Some(masked_labels(rng, t, &y, Modality::Visual)),
                        video_label: y,
                    },
                }
            })
            .collect();
        let cfg = ModelConfig { d, heads: 1, lr: 1e-2, batch: 2, epochs: 2, seed: rng.random(), ..ModelConfig::default() };
        let a = train(&data, &[], &LossConfig::default(), &cfg, 1).unwrap();
        let b = train(&data, &[], &LossConfig::default(), &cfg, 1).unwrap();
        prop_assert_eq!(a.final_params, b.final_params);
        prop_assert_eq!(a.history, b.history);
        Ok(())
    })
}

// ------------------------------------------------------------- metrics

pub fn metrics_extract_inverts_rendering() -> Outcome {
    check_seeded("metrics_extract", |rng| {
        let t = rng.random_range(1..=12);
        let mut spans = Vec::new();
        let mut s = rng.random_range(0..=2);
        while s < t {
            let e = (s + rng.random_range(0..4)).min(t - 1);
            spans.push((s, e));
            s = e + 2 + rng.random_range(0..3);
        }
        let mut col = vec![false; t];
        for &(a, b) in &spans {
            col[a..=b].iter_mut().for_each(|x| *x = true);
        }
        let got: Vec<(usize, usize)> = extract_events(&col, 3, Modality::Audio).iter().map(|e| (e.start, e.end)).collect();
        prop_assert_eq!(got, spans);
        Ok(())
    })
}

pub fn metrics_tiou_symmetric_with_unit_iff_equal() -> Outcome {
    check("metrics_tiou", (0usize..10, 0usize..10, 0usize..10, 0usize..10), |(a0, a1, b0, b1)| {
        let span = |x: usize, y: usize| EventSpan { category: 0, start: x.min(y), end: x.max(y), modality: Modality::Visual };
        let (a, b) = (span(a0, a1), span(b0, b1));
        let (ab, ba) = (tiou(&a, &b).unwrap(), tiou(&b, &a).unwrap());
        prop_assert_eq!(ab, ba);
        prop_assert_eq!(ab == 1.0, a == b);
        Ok(())
    })
}

pub fn metrics_category_permutation_invariant() -> Outcome {
    check_seeded("metrics_permutation", |rng| {
        let (t, c) = (rng.random_range(1..=10), rng.random_range(1..=6));
        let pred = any_labels(rng, t, c, 0.4, Modality::Audio);
        let gt = any_labels(rng, t, c, 0.4, Modality::Audio);
        let mut perm: Vec<usize> = (0..c).collect();
        perm.shuffle(rng);
        let permute = |l: &LabelMatrix| {
            LabelMatrix::new(Matrix::from_fn(t, c, |i, j| l.matrix().get(i, perm[j])), Modality::Audio).unwrap()
        };
        let (pp, gp) = (permute(&pred), permute(&gt));
        prop_assert_eq!(segment_f1(&pred, &gt).unwrap(), segment_f1(&pp, &gp).unwrap());
        prop_assert_eq!(event_f1(&pred, &gt).unwrap(), event_f1(&pp, &gp).unwrap());
        Ok(())
    })
}

/// Greedy matching against the exhaustive oracle on one random fixture with
/// at most four spans per category per side.
pub fn greedy_agrees_with_exhaustive(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let (t, c) = (rng.random_range(1..=8), rng.random_range(1..=3));
    let density = rng.random_range(0.2..0.8);
    let pred = any_labels(rng, t, c, density, Modality::Visual);
    let gt = any_labels(rng, t, c, density, Modality::Visual);
    let (pb, gb) = (bits(&pred), bits(&gt));
    for k in 0..c {
        let pc: Vec<bool> = pb.iter().map(|r| r[k]).collect();
        let gc: Vec<bool> = gb.iter().map(|r| r[k]).collect();
        let greedy = match_spans(
            &extract_events(&pc, k, Modality::Visual),
            &extract_events(&gc, k, Modality::Visual),
            0.5,
            MatchStrategy::Greedy,
        );
        let best = exhaustive_matches(&runs(&pc), &runs(&gc), 0.5);
        if greedy != best {
            return Err(format!("category {k}: greedy {greedy} vs exhaustive {best} on {pc:?} / {gc:?}"));
        }
    }
    let lib = event_f1(&pred, &gt).map_err(|e| e.to_string())?;
    let oracle = exhaustive_event_f1(&pb, &gb).unwrap_or(1.0);
    if lib != oracle {
        return Err(format!("event F1 {lib} vs oracle {oracle}"));
    }
    Ok(())
}

pub fn metrics_greedy_matches_exhaustive() -> Outcome {
    check_seeded("metrics_greedy", |rng| greedy_agrees_with_exhaustive(rng).map_err(TestCaseError::fail))
}

fn random_parses(rng: &mut ChaCha8Rng, n: usize, t: usize, c: usize) -> BTreeMap<String, VideoParse> {
    (0..n)
        .map(|i| {
            let a = any_labels(rng, t, c, 0.3, Modality::Audio);
            let v = any_labels(rng, t, c, 0.3, Modality::Visual);
            (format!("v{i}"), VideoParse::new(a, v))
        })
        .collect()
}

pub fn metrics_type_is_mean_of_three() -> Outcome {
    check_seeded("metrics_type", |rng| {
        let (n, t, c) = (rng.random_range(1..=5), rng.random_range(1..=10), rng.random_range(1..=5));
        let gts = random_parses(rng, n, t, c);
        let preds = random_parses(rng, n, t, c);
        let r = evaluate_dataset(&preds, &gts, &EvalOptions::default()).unwrap();
        for l in [r.segment, r.event] {
            prop_assert_eq!(l.type_av, (l.audio + l.visual + l.av) / 3.0);
        }
        Ok(())
    })
}

pub fn metrics_av_support_bounded() -> Outcome {
    check_seeded("metrics_av_support", |rng| {
        let (t, c) = (rng.random_range(1..=10), rng.random_range(1..=6));
        let a = any_labels(rng, t, c, 0.5, Modality::Audio);
        let v = any_labels(rng, t, c, 0.5, Modality::Visual);
        let av = av_intersection(&a, &v).unwrap();
        prop_assert!(av.count_ones() <= a.count_ones().min(v.count_ones()));
        let sc = segment_counts(&av, &av).unwrap();
        prop_assert_eq!(sc.tp, av.count_ones());
        Ok(())
    })
}

// ------------------------------------------------------------ pipeline

fn small_corpus(rng: &mut ChaCha8Rng, base: SynthConfig) -> SynthConfig {
    SynthConfig {
        train: rng.random_range(1..=3),
        val: rng.random_range(1..=4),
        test: rng.random_range(1..=4),
        seed: rng.random(),
        ..base
    }
}

pub fn pipeline_planted_recovery() -> Outcome {
    check_seeded("pipeline_planted", |rng| {
        let cfg = small_corpus(rng, SynthConfig::clean());
        let ds = generate(&cfg).unwrap();
        let tau = ds.meta.unwrap().planted_threshold;
        let plg = PlgConfig { tau_a: tau, tau_v: tau, ..PlgConfig::default() };
        let labels = pseudo_labels(&ds, &plg, &[Split::Val, Split::Test]).unwrap();
        let q = pseudo_label_quality(&ds, &labels).unwrap();
        for m in [&q.audio, &q.visual] {
            prop_assert_eq!((m.segment_f1, m.event_f1), (100.0, 100.0), "seed {}", cfg.seed);
        }
        Ok(())
    })
}

pub fn pipeline_split_hygiene() -> Outcome {
    check_seeded("pipeline_hygiene", |rng| {
        let cfg = small_corpus(rng, SynthConfig::default());
        let ds = generate(&cfg).unwrap();
        prop_assert!(ds.split(Split::Train).all(|v| v.gt.is_none()));
        prop_assert!(ds.split(Split::Val).chain(ds.split(Split::Test)).all(|v| v.gt.is_some()));
        let mut videos = ds.videos.clone();
        let leak = videos.iter().position(|v| v.split != Split::Train).unwrap();
        videos[leak].split = Split::Train;
        let rebuilt = Dataset::new(ds.vocab.clone(), ds.class_emb_audio.clone(), ds.class_emb_visual.clone(), videos, ds.meta);
        prop_assert!(matches!(rebuilt, Err(avvp::Error::SplitHygiene(_))));
        Ok(())
    })
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

/// Reruns the argv recorded in `manifest` in-process.
fn rerun_from_manifest(manifest: &Path) -> i32 {
    let m: avvp::pipeline::manifest::Manifest = serde_json::from_slice(&fs::read(manifest).unwrap()).unwrap();
    cli::run(std::iter::once("avvp".to_string()).chain(m.argv))
}

pub fn pipeline_manifest_rerun_is_byte_identical() -> Outcome {
    check_seeded("pipeline_manifest", |rng| {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path();
        let p = |s: &str| root.join(s).to_string_lossy().into_owned();
        let seed = rng.random_range(0..1000u64).to_string();
        let tau = format!("{:.4}", rng.random_range(0.03..0.08));
        let runs = [
            vec!["gen-data".into(), "--out".into(), p("d"), "--seed".into(), seed, "--train".into(), "1".into(), "--val".into(), "1".into(), "--test".into(), "1".into()],
            vec!["plg".into(), "--dataset".into(), p("d"), "--out".into(), p("l"), "--tau-a".into(), tau.clone(), "--tau-v".into(), tau],
            vec!["avel-labels".into(), "--labels".into(), p("l"), "--out".into(), p("av")],
        ];
        for argv in &runs {
            prop_assert_eq!(cli::run(std::iter::once("avvp".to_string()).chain(argv.iter().cloned())), 0);
        }
        let before = snapshot(root);
        for m in ["d/manifest.json", "l/manifest.json", "av/manifest.json"] {
            prop_assert_eq!(rerun_from_manifest(&root.join(m)), 0);
        }
        prop_assert!(snapshot(root) == before, "rerun changed outputs");
        Ok(())
    })
}

pub fn pipeline_avel_within_each_modality() -> Outcome {
    check_seeded("pipeline_avel", |rng| {
        let (t, c) = (rng.random_range(1..=10), rng.random_range(1..=6));
        let a = any_labels(rng, t, c, 0.5, Modality::Audio);
        let v = any_labels(rng, t, c, 0.5, Modality::Visual);
        let av = avel_labels(&a, &v).unwrap();
        for s in 0..t {
            for k in 0..c {
                prop_assert!(!av.get(s, k) || (a.get(s, k) && v.get(s, k)));
            }
        }
        Ok(())
    })
}

pub fn suites() -> Vec<Suite> {
    macro_rules! s {
        ($m:literal, $f:ident) => {
            Suite { module: $m, name: stringify!($f), run: $f }
        };
    }
    vec![
        s!("core", core_softmax_is_a_distribution),
        s!("core", core_normalize_is_idempotent),
        s!("core", core_bce_nonnegative_and_convex),
        s!("core", core_binarize_is_idempotent),
        s!("plg", plg_monotone_in_threshold),
        s!("plg", plg_masks_by_video_label),
        s!("plg", plg_video_round_trip_within_label),
        s!("plg", plg_scale_invariant),
        s!("richness", richness_bounded),
        s!("richness", richness_permutation_equivariant),
        s!("richness", richness_loss_nonnegative_and_reduces_at_zero_weight),
        s!("richness", richness_monotone_in_weight),
        s!("richness", richness_gradient_matches_finite_differences),
        s!("pld", pld_never_flips_masked_categories),
        s!("pld", pld_scale_equivariant),
        s!("pld", pld_refine_is_an_involution),
        s!("pld", pld_preserves_video_label_masking),
        s!("pld", pld_monotone_in_alpha),
        s!("model", model_residual_identity),
        s!("model", model_pooling_is_convex),
        s!("model", model_union_dominates_each_modality),
        s!("model", model_gradient_check),
        s!("model", model_training_is_deterministic),
        s!("metrics", metrics_extract_inverts_rendering),
        s!("metrics", metrics_tiou_symmetric_with_unit_iff_equal),
        s!("metrics", metrics_category_permutation_invariant),
        s!("metrics", metrics_greedy_matches_exhaustive),
        s!("metrics", metrics_type_is_mean_of_three),
        s!("metrics", metrics_av_support_bounded),
        s!("pipeline", pipeline_planted_recovery),
        s!("pipeline", pipeline_split_hygiene),
        s!("pipeline", pipeline_manifest_rerun_is_byte_identical),
        s!("pipeline", pipeline_avel_within_each_modality),
    ]
}
