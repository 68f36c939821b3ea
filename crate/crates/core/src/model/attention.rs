//! Multi-head scaled dot-product attention with an explicit backward pass.

use rand::Rng;

use crate::numeric::{softmax_row, Matrix};

/// Projection weights of one attention block. Weights are `d×d`, biases `1×d`.
#[derive(Debug, Clone, PartialEq)]
pub struct MhaParams {
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub wo: Matrix,
    pub bq: Matrix,
    pub bk: Matrix,
    pub bv: Matrix,
    pub bo: Matrix,
}

impl MhaParams {
    pub fn zeros(d: usize) -> Self {
        Self {
            wq: Matrix::zeros(d, d),
            wk: Matrix::zeros(d, d),
            wv: Matrix::zeros(d, d),
            wo: Matrix::zeros(d, d),
            bq: Matrix::zeros(1, d),
            bk: Matrix::zeros(1, d),
            bv: Matrix::zeros(1, d),
            bo: Matrix::zeros(1, d),
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(d);
        for w in [&mut p.wq, &mut p.wk, &mut p.wv, &mut p.wo] {
            *w = glorot(d, d, rng);
        }
        p
    }

    pub fn dim(&self) -> usize {
        self.wq.rows()
    }

    pub(crate) const NAMES: [&'static str; 8] = ["wq", "wk", "wv", "wo", "bq", "bk", "bv", "bo"];

    pub(crate) fn tensors(&self) -> [&Matrix; 8] {
        [&self.wq, &self.wk, &self.wv, &self.wo, &self.bq, &self.bk, &self.bv, &self.bo]
    }

    pub(crate) fn tensors_mut(&mut self) -> [&mut Matrix; 8] {
        [
            &mut self.wq,
            &mut self.wk,
            &mut self.wv,
            &mut self.wo,
            &mut self.bq,
            &mut self.bk,
            &mut self.bv,
            &mut self.bo,
        ]
    }
}

pub(crate) fn glorot<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Matrix {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Matrix::from_fn(fan_in, fan_out, |_, _| rng.random_range(-bound..bound))
}

fn affine(x: &Matrix, w: &Matrix, b: &Matrix) -> Matrix {
    let mut out = x.matmul(w);
    out.add_row_vector(b.as_slice());
    out
}

fn head_slice(m: &Matrix, h: usize, dh: usize) -> Matrix {
    Matrix::from_fn(m.rows(), dh, |i, j| m.get(i, h * dh + j))
}

fn write_head(dst: &mut Matrix, src: &Matrix, h: usize, dh: usize) {
    for i in 0..src.rows() {
        for j in 0..dh {
            dst.set(i, h * dh + j, src.get(i, j));
        }
    }
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct MhaCache {
    xq: Matrix,
    xkv: Matrix,
    q: Matrix,
    k: Matrix,
    v: Matrix,
    /// Attention weights per head, each `Tq×Tk`.
    attn: Vec<Matrix>,
    concat: Matrix,
}

impl MhaCache {
    pub fn attention(&self) -> &[Matrix] {
        &self.attn
    }
}

/// `softmax(Q Kᵀ / √d_h) V` per head, heads concatenated, then the output projection.
pub fn mha_forward(xq: &Matrix, xkv: &Matrix, p: &MhaParams, heads: usize) -> (Matrix, MhaCache) {
    let d = p.dim();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let q = affine(xq, &p.wq, &p.bq);
    let k = affine(xkv, &p.wk, &p.bk);
    let v = affine(xkv, &p.wv, &p.bv);
    let mut concat = Matrix::zeros(xq.rows(), d);
    let mut attn = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = (head_slice(&q, h, dh), head_slice(&k, h, dh), head_slice(&v, h, dh));
        let mut scores = qh.matmul_t(&kh);
        scores.scale(scale);
        for i in 0..scores.rows() {
            let row = softmax_row(scores.row(i));
            scores.row_mut(i).copy_from_slice(&row);
        }
        write_head(&mut concat, &scores.matmul(&vh), h, dh);
        attn.push(scores);
    }
    let out = affine(&concat, &p.wo, &p.bo);
    let cache = MhaCache {
        xq: xq.clone(),
        xkv: xkv.clone(),
        q,
        k,
        v,
        attn,
        concat,
    };
    (out, cache)
}

fn add_bias_grad(g: &mut Matrix, d: &Matrix) {
    for (gi, s) in g.as_mut_slice().iter_mut().zip(d.column_sums()) {
        *gi += s;
    }
}

/// Accumulates parameter gradients for upstream gradient `d_out` into `grads`.
/// Inputs are treated as constants.
pub fn mha_backward(d_out: &Matrix, cache: &MhaCache, p: &MhaParams, heads: usize, grads: &mut MhaParams) {
    let d = p.dim();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();

    grads.wo.add_assign(&cache.concat.t_matmul(d_out));
    add_bias_grad(&mut grads.bo, d_out);
    let d_concat = d_out.matmul_t(&p.wo);

    let mut dq = Matrix::zeros(cache.q.rows(), d);
    let mut dk = Matrix::zeros(cache.k.rows(), d);
    let mut dv = Matrix::zeros(cache.v.rows(), d);
    for h in 0..heads {
        let a = &cache.attn[h];
        let (qh, kh, vh) = (
            head_slice(&cache.q, h, dh),
            head_slice(&cache.k, h, dh),
            head_slice(&cache.v, h, dh),
        );
        let d_oh = head_slice(&d_concat, h, dh);
        let d_a = d_oh.matmul_t(&vh);
        write_head(&mut dv, &a.t_matmul(&d_oh), h, dh);
        // softmax backward, row-wise
        let mut d_s = Matrix::zeros(a.rows(), a.cols());
        for i in 0..a.rows() {
            let dot: f64 = a.row(i).iter().zip(d_a.row(i)).map(|(x, y)| x * y).sum();
            for j in 0..a.cols() {
                d_s.set(i, j, a.get(i, j) * (d_a.get(i, j) - dot) * scale);
            }
        }
        write_head(&mut dq, &d_s.matmul(&kh), h, dh);
        write_head(&mut dk, &d_s.t_matmul(&qh), h, dh);
    }
    grads.wq.add_assign(&cache.xq.t_matmul(&dq));
    grads.wk.add_assign(&cache.xkv.t_matmul(&dk));
    grads.wv.add_assign(&cache.xkv.t_matmul(&dv));
    add_bias_grad(&mut grads.bq, &dq);
    add_bias_grad(&mut grads.bk, &dk);
    add_bias_grad(&mut grads.bv, &dv);
}
