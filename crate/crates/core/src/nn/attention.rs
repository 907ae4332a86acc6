//! Scaled dot-product attention, multi-head self-attention and auto-pooling.

use super::ops::softmax_in_place;
use super::tensor::gemm;
use super::{NnError, Tape, Tensor, Var};

/// Projection weights of a multi-head self-attention layer.
///
/// Head `i` projects with `query[i]`, `key[i]`, `value[i]` (each `[N, d]`);
/// `output` is `[h * d, d]`.
pub struct AttentionWeights<'a> {
    pub query: Vec<&'a Var>,
    pub key: Vec<&'a Var>,
    pub value: Vec<&'a Var>,
    pub output: &'a Var,
}

/// Row-softmax of `q k^T * scale`.
pub fn attention_weights(q: &[f64], k: &[f64], rows: usize, width: usize, scale: f64) -> Vec<f64> {
    let mut s = vec![0.0; rows * rows];
    gemm(rows, width, rows, q, false, k, true, 0.0, &mut s);
    for row in s.chunks_exact_mut(rows) {
        row.iter_mut().for_each(|v| *v *= scale);
        softmax_in_place(row);
    }
    s
}

impl Tape {
    /// `softmax(q k^T * scale) v` for `q, k: [L, dk]`, `v: [L, dv]`.
    pub fn scaled_dot_attention(&self, q: &Var, k: &Var, v: &Var, scale: f64) -> Result<Var, NnError> {
        let (l, dk) = match *q.shape() {
            [l, dk] => (l, dk),
            _ => return Err(NnError::InvalidArgument(format!("attention query shape {:?}", q.shape()))),
        };
        let dv = match *v.shape() {
            [lv, dv] if lv == l => dv,
            _ => {
                return Err(NnError::ShapeMismatch {
                    op: "attention",
                    lhs: q.shape().to_vec(),
                    rhs: v.shape().to_vec(),
                })
            }
        };
        if k.shape() != q.shape() {
            return Err(NnError::ShapeMismatch {
                op: "attention",
                lhs: q.shape().to_vec(),
                rhs: k.shape().to_vec(),
            });
        }
        let p = attention_weights(q.data(), k.data(), l, dk, scale);
        let mut out = vec![0.0; l * dv];
        gemm(l, l, dv, &p, false, v.data(), false, 0.0, &mut out);
        let tracked = q.is_tracked() || k.is_tracked() || v.is_tracked();
        // The L x L weights are only retained when a backward pass can need them.
        let p = tracked.then_some(p);
        let (qv, kv, vv) = (q.value_rc(), k.value_rc(), v.value_rc());
        self.record("attention", Tensor::from_parts(vec![l, dv], out), &[q, k, v], move |g, need| {
            let p = p.as_ref().expect("tracked attention keeps its weights");
            let gv = need[2].then(|| {
                let mut gv = vec![0.0; l * dv];
                gemm(l, l, dv, p, true, g, false, 0.0, &mut gv);
                gv
            });
            if !need[0] && !need[1] {
                return vec![None, None, gv];
            }
            let mut ds = vec![0.0; l * l];
            gemm(l, dv, l, g, false, vv.data(), true, 0.0, &mut ds);
            for (drow, prow) in ds.chunks_exact_mut(l).zip(p.chunks_exact(l)) {
                let dot: f64 = drow.iter().zip(prow).map(|(a, b)| a * b).sum();
                for (d, pv) in drow.iter_mut().zip(prow) {
                    *d = pv * (*d - dot) * scale;
                }
            }
            let gq = need[0].then(|| {
                let mut gq = vec![0.0; l * dk];
                gemm(l, l, dk, &ds, false, kv.data(), false, 0.0, &mut gq);
                gq
            });
            let gk = need[1].then(|| {
                let mut gk = vec![0.0; l * dk];
                gemm(l, l, dk, &ds, true, qv.data(), false, 0.0, &mut gk);
                gk
            });
            vec![gq, gk, gv]
        })
    }

    /// Multi-head self-attention with `Q = K = V = x` (`x: [L, N]`).
    /// Each head attends at the full projection width `d` with scale `1/sqrt(d)`.
    pub fn multi_head_attention(&self, x: &Var, w: &AttentionWeights) -> Result<Var, NnError> {
        let heads = w.query.len();
        if heads == 0 || w.key.len() != heads || w.value.len() != heads {
            return Err(NnError::InvalidArgument("attention needs matching per-head weights".into()));
        }
        let width = *w.query[0].shape().last().unwrap_or(&1);
        let scale = 1.0 / (width as f64).sqrt();
        let mut outs = Vec::with_capacity(heads);
        for i in 0..heads {
            let q = self.matmul(x, w.query[i])?;
            let k = self.matmul(x, w.key[i])?;
            let v = self.matmul(x, w.value[i])?;
            outs.push(self.scaled_dot_attention(&q, &k, &v, scale)?);
        }
        let refs: Vec<&Var> = outs.iter().collect();
        let cat = self.concat(&refs, 1)?;
        self.matmul(&cat, w.output)
    }

    /// Softmax-weighted pooling over rows of `x: [L, d]` with a learnable
    /// sharpness `alpha` (shape `[1]`): each column `j` becomes
    /// `sum_i x_ij * softmax_i(alpha * x_ij)`.
    pub fn auto_pool(&self, x: &Var, alpha: &Var) -> Result<Var, NnError> {
        let (l, d) = match *x.shape() {
            [l, d] => (l, d),
            _ => return Err(NnError::InvalidArgument(format!("auto_pool input shape {:?}", x.shape()))),
        };
        if alpha.numel() != 1 {
            return Err(NnError::ShapeMismatch {
                op: "auto_pool",
                lhs: x.shape().to_vec(),
                rhs: alpha.shape().to_vec(),
            });
        }
        let a = alpha.item();
        let xd = x.data();
        let mut weights = vec![0.0; l * d];
        let mut out = vec![0.0; d];
        let mut col = vec![0.0; l];
        for j in 0..d {
            for i in 0..l {
                col[i] = a * xd[i * d + j];
            }
            softmax_in_place(&mut col);
            for i in 0..l {
                weights[i * d + j] = col[i];
                out[j] += xd[i * d + j] * col[i];
            }
        }
        let xv = x.value_rc();
        let pooled = out.clone();
        self.record("auto_pool", Tensor::from_parts(vec![d], out), &[x, alpha], move |g, need| {
            let xd = xv.data();
            let mut gx = need[0].then(|| vec![0.0; l * d]);
            let mut ga = 0.0;
            for j in 0..d {
                for i in 0..l {
                    let k = i * d + j;
                    let dev = weights[k] * (xd[k] - pooled[j]);
                    if let Some(gx) = gx.as_mut() {
                        gx[k] = g[j] * (weights[k] + a * dev);
                    }
                    ga += g[j] * dev * xd[k];
                }
            }
            vec![gx, need[1].then(|| vec![ga])]
        })
    }
}
