//! Reference implementations written directly from the definitions, kept
//! free of library helpers so they can check the library.

const CLAMP: f64 = 1e-7;

fn clamp(p: f64) -> f64 {
    p.max(CLAMP).min(1.0 - CLAMP)
}

/// Literal forward-loss flipping for one modality of one video.
/// `p[t][c]` probabilities, `labels[t][c]` in {0,1}, `video[c]` the video label.
pub fn brute_force_denoise(p: &[Vec<f64>], labels: &[Vec<u8>], video: &[bool], k: usize, alpha: f64) -> Vec<Vec<u8>> {
    let t_len = p.len();
    let c_len = video.len();
    let mut masked = vec![vec![0.0; c_len]; t_len];
    for t in 0..t_len {
        for c in 0..c_len {
            let q = clamp(p[t][c]);
            let loss = if labels[t][c] == 1 { -q.ln() } else { -(1.0 - q).ln() };
            masked[t][c] = if video[c] { loss } else { 0.0 };
        }
    }
    let mut out = labels.to_vec();
    for c in 0..c_len {
        let mut column: Vec<f64> = (0..t_len).map(|t| masked[t][c]).collect();
        column.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut sum = 0.0;
        for v in &column[..k] {
            sum += v;
        }
        let mu = sum / k as f64;
        if mu <= 0.0 {
            continue;
        }
        for t in 0..t_len {
            if masked[t][c] >= alpha * mu {
                out[t][c] = 1 - out[t][c];
            }
        }
    }
    out
}

/// Maximal runs of ones as inclusive `(start, end)` pairs.
pub fn runs(col: &[bool]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut t = 0;
    while t < col.len() {
        if col[t] {
            let s = t;
            while t + 1 < col.len() && col[t + 1] {
                t += 1;
            }
            out.push((s, t));
        }
        t += 1;
    }
    out
}

pub fn interval_iou(a: (usize, usize), b: (usize, usize)) -> f64 {
    let inter = (a.1.min(b.1) + 1).saturating_sub(a.0.max(b.0));
    let union = (a.1 - a.0 + 1) + (b.1 - b.0 + 1) - inter;
    inter as f64 / union as f64
}

/// Largest number of one-to-one pairs with IoU ≥ `threshold`, by trying every
/// assignment of predictions to ground-truth spans.
pub fn exhaustive_matches(pred: &[(usize, usize)], gt: &[(usize, usize)], threshold: f64) -> usize {
    fn go(i: usize, pred: &[(usize, usize)], gt: &[(usize, usize)], used: &mut Vec<bool>, threshold: f64) -> usize {
        if i == pred.len() {
            return 0;
        }
        let mut best = go(i + 1, pred, gt, used, threshold);
        for j in 0..gt.len() {
            if !used[j] && interval_iou(pred[i], gt[j]) >= threshold {
                used[j] = true;
                best = best.max(1 + go(i + 1, pred, gt, used, threshold));
                used[j] = false;
            }
        }
        best
    }
    go(0, pred, gt, &mut vec![false; gt.len()], threshold)
}

/// Event-level F1 of two binary `T×C` matrices (columns are categories),
/// with optimal matching; `None` when both sides are empty.
pub fn exhaustive_event_f1(pred: &[Vec<bool>], gt: &[Vec<bool>]) -> Option<f64> {
    let c_len = gt.first().map_or(0, Vec::len);
    let (mut tp, mut np, mut ng) = (0, 0, 0);
    for c in 0..c_len {
        let pc: Vec<bool> = pred.iter().map(|r| r[c]).collect();
        let gc: Vec<bool> = gt.iter().map(|r| r[c]).collect();
        let (ps, gs) = (runs(&pc), runs(&gc));
        tp += exhaustive_matches(&ps, &gs, 0.5);
        np += ps.len();
        ng += gs.len();
    }
    if np + ng == 0 {
        None
    } else {
        Some(2.0 * tp as f64 / (np + ng) as f64)
    }
}

/// Central finite difference of `f` at `x` along coordinate `i`.
pub fn central_difference(f: &dyn Fn(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut probe = x.to_vec();
    probe[i] = x[i] + h;
    let up = f(&probe);
    probe[i] = x[i] - h;
    let down = f(&probe);
    (up - down) / (2.0 * h)
}

/// `|a − n| / max(|a|, |n|)`, or zero when `|a − n|` is within `floor`.
pub fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    let d = (a - n).abs();
    if d <= floor {
        0.0
    } else {
        d / a.abs().max(n.abs())
    }
}
