//! End-to-end comparison of backpropagated gradients against central finite
//! differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{forward, loss_and_grad, ModelConfig, Params};
use crate::error::{Error, Result};
use crate::numeric::Matrix;
use crate::richness::{total_loss, LossConfig, Targets};
use crate::types::{LabelMatrix, Modality, VideoLabel};

const STEP: f64 = 1e-5;
const ABS_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub checked: usize,
}

/// Relative error with an absolute floor: differences below the floor count as zero.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff <= ABS_FLOOR {
        0.0
    } else {
        diff / analytic.abs().max(numeric.abs())
    }
}

struct Instance {
    fa: Matrix,
    fv: Matrix,
    targets: Targets,
}

fn random_instance(t: usize, c: usize, d: usize, rng: &mut ChaCha8Rng) -> Instance {
    let mut normal = |rows: usize, cols: usize| Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut *rng));
    let fa = normal(t, d);
    let fv = normal(t, d);
    let mut active: Vec<usize> = (0..c).filter(|_| rng.random_bool(0.5)).collect();
    if active.is_empty() {
        active.push(rng.random_range(0..c));
    }
    let y = VideoLabel::from_indices(c, &active);
    let mut seg = |m: Modality| {
        let mut l = LabelMatrix::zeros(t, c, m);
        for &k in &active {
            for s in 0..t {
                l.set(s, k, rng.random_bool(0.5));
            }
        }
        l
    };
    let (la, lv) = (seg(Modality::Audio), seg(Modality::Visual));
    let soft = |rng: &mut ChaCha8Rng| (0..c).map(|_| rng.random_range(0.05..0.95)).collect::<Vec<f64>>();
    Instance {
        fa,
        fv,
        targets: Targets {
            video_label: y,
            video_audio: soft(rng),
            video_visual: soft(rng),
            seg_audio: Some(la),
            seg_visual: Some(lv),
        },
    }
}

fn loss_at(inst: &Instance, params: &Params, loss_cfg: &LossConfig, heads: usize) -> Result<f64> {
    let (bundle, _) = forward(&inst.fa, &inst.fv, params, heads);
    Ok(total_loss(&bundle, &inst.targets, loss_cfg)?.total)
}

fn compare(inst: &Instance, params: &Params, loss_cfg: &LossConfig, heads: usize) -> Result<GradCheckReport> {
    let (_, grads) = loss_and_grad(&inst.fa, &inst.fv, params, &inst.targets, loss_cfg, heads)?;
    let names = Params::names();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        checked: 0,
    };
    let mut probe = params.clone();
    for (ti, g) in grads.tensors().into_iter().enumerate() {
        for j in 0..g.as_slice().len() {
            let orig = probe.tensors()[ti].as_slice()[j];
            probe.tensors_mut()[ti].as_mut_slice()[j] = orig + STEP;
            let up = loss_at(inst, &probe, loss_cfg, heads)?;
            probe.tensors_mut()[ti].as_mut_slice()[j] = orig - STEP;
            let down = loss_at(inst, &probe, loss_cfg, heads)?;
            probe.tensors_mut()[ti].as_mut_slice()[j] = orig;
            let err = relative_error(g.as_slice()[j], (up - down) / (2.0 * STEP));
            report.checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_param = format!("{}[{j}]", names[ti]);
            }
        }
    }
    Ok(report)
}

/// Builds a random small instance from `seed` (T in 3..=6, C in 2..=5,
/// feature dimension `model_cfg.d`), randomizes every parameter including
/// biases, and checks each parameter's gradient by central differences.
pub fn model_grad_check(model_cfg: &ModelConfig, loss_cfg: &LossConfig, seed: u64) -> Result<GradCheckReport> {
    model_cfg.validate()?;
    if model_cfg.d > 16 {
        return Err(Error::Config(format!("grad check expects d <= 16, got {}", model_cfg.d)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = rng.random_range(3..=6);
    let c = rng.random_range(2..=5);
    let inst = random_instance(t, c, model_cfg.d, &mut rng);
    let mut params = Params::init(model_cfg.d, c, &mut rng);
    for tensor in params.tensors_mut() {
        if tensor.rows() == 1 {
            for v in tensor.as_mut_slice() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v = 0.3 * z;
            }
        }
    }
    compare(&inst, &params, loss_cfg, model_cfg.heads)
}
