//! Elementary differentiable operations.

use super::tensor::gemm;
use super::{NnError, Tape, Tensor, Var};

/// Layer-norm variance floor.
pub const LAYER_NORM_EPS: f64 = 1e-5;

fn mismatch(op: &'static str, a: &[usize], b: &[usize]) -> NnError {
    NnError::ShapeMismatch {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    }
}

fn same_shape(op: &'static str, a: &Var, b: &Var) -> Result<(), NnError> {
    if a.shape() != b.shape() {
        return Err(mismatch(op, a.shape(), b.shape()));
    }
    Ok(())
}

fn matrix_dims(op: &'static str, v: &Var) -> Result<(usize, usize), NnError> {
    match *v.shape() {
        [r, c] => Ok((r, c)),
        _ => Err(NnError::InvalidArgument(format!(
            "{op}: expected a matrix, got shape {:?}",
            v.shape()
        ))),
    }
}

/// Splits `shape` around `axis` into `(outer, dim, inner)` element counts.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn unary<F, D>(tape: &Tape, op: &'static str, x: &Var, f: F, df: D) -> Result<Var, NnError>
where
    F: Fn(f64) -> f64,
    D: Fn(f64, f64) -> f64 + 'static,
{
    let y: Vec<f64> = x.data().iter().map(|&v| f(v)).collect();
    let out = Tensor::from_parts(x.shape().to_vec(), y);
    let xs = x.value_rc();
    // Backward needs the output too; keep a private copy only when tracked.
    let ys = x.is_tracked().then(|| out.data().to_vec());
    tape.record(op, out, &[x], move |g, _| {
        let ys = ys.as_ref().expect("tracked op keeps its output");
        let gx = g
            .iter()
            .zip(xs.data())
            .zip(ys)
            .map(|((g, &x), &y)| g * df(x, y))
            .collect();
        vec![Some(gx)]
    })
}

impl Tape {
    pub fn matmul(&self, a: &Var, b: &Var) -> Result<Var, NnError> {
        let (m, k) = matrix_dims("matmul", a)?;
        let (k2, n) = matrix_dims("matmul", b)?;
        if k != k2 {
            return Err(mismatch("matmul", a.shape(), b.shape()));
        }
        let mut c = vec![0.0; m * n];
        gemm(m, k, n, a.data(), false, b.data(), false, 0.0, &mut c);
        let (av, bv) = (a.value_rc(), b.value_rc());
        self.record("matmul", Tensor::from_parts(vec![m, n], c), &[a, b], move |g, need| {
            let ga = need[0].then(|| {
                let mut ga = vec![0.0; m * k];
                gemm(m, n, k, g, false, bv.data(), true, 0.0, &mut ga);
                ga
            });
            let gb = need[1].then(|| {
                let mut gb = vec![0.0; k * n];
                gemm(k, m, n, av.data(), true, g, false, 0.0, &mut gb);
                gb
            });
            vec![ga, gb]
        })
    }

    pub fn add(&self, a: &Var, b: &Var) -> Result<Var, NnError> {
        same_shape("add", a, b)?;
        let y = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
        self.record("add", Tensor::from_parts(a.shape().to_vec(), y), &[a, b], |g, need| {
            vec![need[0].then(|| g.to_vec()), need[1].then(|| g.to_vec())]
        })
    }

    pub fn sub(&self, a: &Var, b: &Var) -> Result<Var, NnError> {
        same_shape("sub", a, b)?;
        let y = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
        self.record("sub", Tensor::from_parts(a.shape().to_vec(), y), &[a, b], |g, need| {
            vec![
                need[0].then(|| g.to_vec()),
                need[1].then(|| g.iter().map(|v| -v).collect()),
            ]
        })
    }

    /// Elementwise product.
    pub fn mul(&self, a: &Var, b: &Var) -> Result<Var, NnError> {
        same_shape("mul", a, b)?;
        let y = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
        let (av, bv) = (a.value_rc(), b.value_rc());
        self.record("mul", Tensor::from_parts(a.shape().to_vec(), y), &[a, b], move |g, need| {
            vec![
                need[0].then(|| g.iter().zip(bv.data()).map(|(g, b)| g * b).collect()),
                need[1].then(|| g.iter().zip(av.data()).map(|(g, a)| g * a).collect()),
            ]
        })
    }

    pub fn scale(&self, x: &Var, c: f64) -> Result<Var, NnError> {
        let y = x.data().iter().map(|v| v * c).collect();
        self.record("scale", Tensor::from_parts(x.shape().to_vec(), y), &[x], move |g, _| {
            vec![Some(g.iter().map(|v| v * c).collect())]
        })
    }

    pub fn add_const(&self, x: &Var, c: f64) -> Result<Var, NnError> {
        let y = x.data().iter().map(|v| v + c).collect();
        self.record("add_const", Tensor::from_parts(x.shape().to_vec(), y), &[x], |g, _| {
            vec![Some(g.to_vec())]
        })
    }

    /// Adds `bias` (shape `[n]`) to every row of `x` (last axis `n`).
    pub fn add_row_bias(&self, x: &Var, bias: &Var) -> Result<Var, NnError> {
        let n = *x.shape().last().unwrap_or(&0);
        if bias.shape() != [n] {
            return Err(mismatch("add_row_bias", x.shape(), bias.shape()));
        }
        let b = bias.data();
        let y = x
            .data()
            .chunks_exact(n)
            .flat_map(|row| row.iter().zip(b).map(|(v, b)| v + b))
            .collect();
        self.record("add_row_bias", Tensor::from_parts(x.shape().to_vec(), y), &[x, bias], move |g, need| {
            let gb = need[1].then(|| {
                let mut gb = vec![0.0; n];
                for row in g.chunks_exact(n) {
                    gb.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                }
                gb
            });
            vec![need[0].then(|| g.to_vec()), gb]
        })
    }

    /// `x @ w + b` for `x: [m, in]`, `w: [in, out]`, `b: [out]`.
    pub fn linear(&self, x: &Var, w: &Var, b: &Var) -> Result<Var, NnError> {
        let y = self.matmul(x, w)?;
        self.add_row_bias(&y, b)
    }

    pub fn concat(&self, parts: &[&Var], axis: usize) -> Result<Var, NnError> {
        let first = parts
            .first()
            .ok_or_else(|| NnError::InvalidArgument("concat of zero tensors".into()))?;
        let rank = first.shape().len();
        if axis >= rank {
            return Err(NnError::InvalidArgument(format!("concat axis {axis} for rank {rank}")));
        }
        for p in parts {
            let ok = p.shape().len() == rank
                && p.shape().iter().zip(first.shape()).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(mismatch("concat", first.shape(), p.shape()));
            }
        }
        let (outer, _, inner) = split_axis(first.shape(), axis);
        let widths: Vec<usize> = parts.iter().map(|p| p.shape()[axis] * inner).collect();
        let total: usize = widths.iter().sum();
        let mut y = Vec::with_capacity(outer * total);
        for o in 0..outer {
            for (p, &w) in parts.iter().zip(&widths) {
                y.extend_from_slice(&p.data()[o * w..(o + 1) * w]);
            }
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = total / inner;
        let widths_bw = widths.clone();
        self.record("concat", Tensor::from_parts(shape, y), parts, move |g, need| {
            let mut offset = 0;
            widths_bw
                .iter()
                .zip(need)
                .map(|(&w, &nd)| {
                    let start = offset;
                    offset += w;
                    nd.then(|| {
                        let mut gp = Vec::with_capacity(outer * w);
                        for o in 0..outer {
                            let base = o * total + start;
                            gp.extend_from_slice(&g[base..base + w]);
                        }
                        gp
                    })
                })
                .collect()
        })
    }

    /// Elements `start..end` along `axis`.
    pub fn slice(&self, x: &Var, axis: usize, start: usize, end: usize) -> Result<Var, NnError> {
        if axis >= x.shape().len() || start >= end || end > x.shape()[axis] {
            return Err(NnError::InvalidArgument(format!(
                "slice {start}..{end} on axis {axis} of shape {:?}",
                x.shape()
            )));
        }
        let (outer, dim, inner) = split_axis(x.shape(), axis);
        let w = (end - start) * inner;
        let mut y = Vec::with_capacity(outer * w);
        for o in 0..outer {
            let base = o * dim * inner + start * inner;
            y.extend_from_slice(&x.data()[base..base + w]);
        }
        let mut shape = x.shape().to_vec();
        shape[axis] = end - start;
        let n_in = x.numel();
        self.record("slice", Tensor::from_parts(shape, y), &[x], move |g, _| {
            let mut gx = vec![0.0; n_in];
            for o in 0..outer {
                let base = o * dim * inner + start * inner;
                gx[base..base + w].copy_from_slice(&g[o * w..(o + 1) * w]);
            }
            vec![Some(gx)]
        })
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&self, x: &Var, perm: &[usize]) -> Result<Var, NnError> {
        let rank = x.shape().len();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return Err(NnError::InvalidArgument(format!(
                "permutation {perm:?} for rank {rank}"
            )));
        }
        let map = permute_index_map(x.shape(), perm);
        let y = map.iter().map(|&i| x.data()[i]).collect();
        let shape = perm.iter().map(|&p| x.shape()[p]).collect();
        self.record("permute", Tensor::from_parts(shape, y), &[x], move |g, _| {
            let mut gx = vec![0.0; g.len()];
            for (gv, &i) in g.iter().zip(&map) {
                gx[i] = *gv;
            }
            vec![Some(gx)]
        })
    }

    /// Matrix transpose.
    pub fn transpose(&self, x: &Var) -> Result<Var, NnError> {
        matrix_dims("transpose", x)?;
        self.permute(x, &[1, 0])
    }

    pub fn reshape(&self, x: &Var, shape: &[usize]) -> Result<Var, NnError> {
        if shape.iter().product::<usize>() != x.numel() || shape.contains(&0) {
            return Err(mismatch("reshape", x.shape(), shape));
        }
        let t = Tensor::from_parts(shape.to_vec(), x.data().to_vec());
        self.record("reshape", t, &[x], |g, _| vec![Some(g.to_vec())])
    }

    pub fn sum(&self, x: &Var) -> Result<Var, NnError> {
        let n = x.numel();
        let s = x.data().iter().sum();
        self.record("sum", Tensor::scalar(s), &[x], move |g, _| vec![Some(vec![g[0]; n])])
    }

    pub fn mean(&self, x: &Var) -> Result<Var, NnError> {
        let n = x.numel();
        let s = x.data().iter().sum::<f64>() / n as f64;
        self.record("mean", Tensor::scalar(s), &[x], move |g, _| {
            vec![Some(vec![g[0] / n as f64; n])]
        })
    }

    /// Mean of absolute values. The subgradient at zero is zero.
    pub fn mean_abs(&self, x: &Var) -> Result<Var, NnError> {
        let n = x.numel() as f64;
        let s = x.data().iter().map(|v| v.abs()).sum::<f64>() / n;
        let xv = x.value_rc();
        self.record("mean_abs", Tensor::scalar(s), &[x], move |g, _| {
            let k = g[0] / n;
            vec![Some(
                xv.data()
                    .iter()
                    .map(|&v| if v > 0.0 { k } else if v < 0.0 { -k } else { 0.0 })
                    .collect(),
            )]
        })
    }

    pub fn mean_square(&self, x: &Var) -> Result<Var, NnError> {
        let n = x.numel() as f64;
        let s = x.data().iter().map(|v| v * v).sum::<f64>() / n;
        let xv = x.value_rc();
        self.record("mean_square", Tensor::scalar(s), &[x], move |g, _| {
            let k = 2.0 * g[0] / n;
            vec![Some(xv.data().iter().map(|v| k * v).collect())]
        })
    }

    /// Clamps into `[lo, hi]`; gradient passes only where no clamping happened.
    pub fn clamp(&self, x: &Var, lo: f64, hi: f64) -> Result<Var, NnError> {
        let y = x.data().iter().map(|v| v.clamp(lo, hi)).collect();
        let xv = x.value_rc();
        self.record("clamp", Tensor::from_parts(x.shape().to_vec(), y), &[x], move |g, _| {
            vec![Some(
                g.iter()
                    .zip(xv.data())
                    .map(|(g, &v)| if (lo..=hi).contains(&v) { *g } else { 0.0 })
                    .collect(),
            )]
        })
    }

    /// Zero-pads the last axis to `len`.
    pub fn pad_end(&self, x: &Var, len: usize) -> Result<Var, NnError> {
        let cur = *x.shape().last().unwrap_or(&0);
        if len < cur {
            return Err(NnError::InvalidArgument(format!("pad_end to {len} < current {cur}")));
        }
        let rows = x.numel() / cur;
        let mut y = vec![0.0; rows * len];
        for r in 0..rows {
            y[r * len..r * len + cur].copy_from_slice(&x.data()[r * cur..(r + 1) * cur]);
        }
        let mut shape = x.shape().to_vec();
        *shape.last_mut().expect("non-empty shape") = len;
        self.record("pad_end", Tensor::from_parts(shape, y), &[x], move |g, _| {
            let gx = (0..rows).flat_map(|r| g[r * len..r * len + cur].iter().copied()).collect();
            vec![Some(gx)]
        })
    }

    pub fn relu(&self, x: &Var) -> Result<Var, NnError> {
        unary(self, "relu", x, |v| v.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn sigmoid(&self, x: &Var) -> Result<Var, NnError> {
        unary(self, "sigmoid", x, sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn tanh(&self, x: &Var) -> Result<Var, NnError> {
        unary(self, "tanh", x, f64::tanh, |_, y| 1.0 - y * y)
    }

    /// Parametric ReLU with a single learnable slope `a` (shape `[1]`).
    pub fn prelu(&self, x: &Var, a: &Var) -> Result<Var, NnError> {
        if a.numel() != 1 {
            return Err(mismatch("prelu", x.shape(), a.shape()));
        }
        let slope = a.item();
        let y = x.data().iter().map(|&v| if v >= 0.0 { v } else { slope * v }).collect();
        let xv = x.value_rc();
        self.record("prelu", Tensor::from_parts(x.shape().to_vec(), y), &[x, a], move |g, need| {
            let gx = need[0].then(|| {
                g.iter()
                    .zip(xv.data())
                    .map(|(g, &v)| if v >= 0.0 { *g } else { slope * g })
                    .collect()
            });
            let ga = need[1].then(|| {
                let s: f64 = g
                    .iter()
                    .zip(xv.data())
                    .filter(|(_, &v)| v < 0.0)
                    .map(|(g, v)| g * v)
                    .sum();
                vec![s]
            });
            vec![gx, ga]
        })
    }

    /// Softmax over the last axis, max-shifted.
    pub fn softmax_rows(&self, x: &Var) -> Result<Var, NnError> {
        let n = *x.shape().last().unwrap_or(&1);
        let mut y = x.data().to_vec();
        y.chunks_exact_mut(n).for_each(softmax_in_place);
        let yv = x.is_tracked().then(|| y.clone());
        self.record("softmax_rows", Tensor::from_parts(x.shape().to_vec(), y), &[x], move |g, _| {
            let yv = yv.as_ref().expect("tracked op keeps its output");
            let mut gx = vec![0.0; g.len()];
            for ((gr, yr), out) in g.chunks_exact(n).zip(yv.chunks_exact(n)).zip(gx.chunks_exact_mut(n)) {
                let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                for ((o, g), y) in out.iter_mut().zip(gr).zip(yr) {
                    *o = y * (g - dot);
                }
            }
            vec![Some(gx)]
        })
    }

    /// Layer normalisation over `axis` with per-feature `gain` and `bias`.
    pub fn layer_norm(&self, x: &Var, axis: usize, gain: &Var, bias: &Var) -> Result<Var, NnError> {
        if axis >= x.shape().len() {
            return Err(NnError::InvalidArgument(format!(
                "layer_norm axis {axis} for shape {:?}",
                x.shape()
            )));
        }
        let (outer, dim, inner) = split_axis(x.shape(), axis);
        if gain.shape() != [dim] || bias.shape() != [dim] {
            return Err(mismatch("layer_norm", x.shape(), gain.shape()));
        }
        let xd = x.data();
        let (gd, bd) = (gain.data(), bias.data());
        let groups = outer * inner;
        let mut xhat = vec![0.0; xd.len()];
        let mut inv_std = vec![0.0; groups];
        let mut y = vec![0.0; xd.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * dim + j) * inner + i;
                let mean = (0..dim).map(|j| xd[idx(j)]).sum::<f64>() / dim as f64;
                let var = (0..dim).map(|j| (xd[idx(j)] - mean).powi(2)).sum::<f64>() / dim as f64;
                let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                inv_std[o * inner + i] = is;
                for j in 0..dim {
                    let h = (xd[idx(j)] - mean) * is;
                    xhat[idx(j)] = h;
                    y[idx(j)] = h * gd[j] + bd[j];
                }
            }
        }
        let gv = gain.value_rc();
        self.record(
            "layer_norm",
            Tensor::from_parts(x.shape().to_vec(), y),
            &[x, gain, bias],
            move |g, need| {
                let gd = gv.data();
                let mut ggain = vec![0.0; dim];
                let mut gbias = vec![0.0; dim];
                let mut gx = need[0].then(|| vec![0.0; g.len()]);
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |j: usize| (o * dim + j) * inner + i;
                        let (mut m1, mut m2) = (0.0, 0.0);
                        for j in 0..dim {
                            let k = idx(j);
                            ggain[j] += g[k] * xhat[k];
                            gbias[j] += g[k];
                            let gh = g[k] * gd[j];
                            m1 += gh;
                            m2 += gh * xhat[k];
                        }
                        if let Some(gx) = gx.as_mut() {
                            let (m1, m2) = (m1 / dim as f64, m2 / dim as f64);
                            let is = inv_std[o * inner + i];
                            for j in 0..dim {
                                let k = idx(j);
                                gx[k] = is * (g[k] * gd[j] - m1 - xhat[k] * m2);
                            }
                        }
                    }
                }
                vec![gx, need[1].then_some(ggain), need[2].then_some(gbias)]
            },
        )
    }

    /// Valid (unpadded) strided 1-D convolution of a single-channel signal.
    ///
    /// `x`: `[T]` or `[1, T]`; `kernel`: `[N, 1, P]`; output `[N, L]` with
    /// `L = (T - P) / stride + 1`.
    pub fn conv1d(&self, x: &Var, kernel: &Var, stride: usize) -> Result<Var, NnError> {
        let t = match *x.shape() {
            [t] | [1, t] => t,
            _ => return Err(mismatch("conv1d", x.shape(), kernel.shape())),
        };
        let (n, p) = match *kernel.shape() {
            [n, 1, p] => (n, p),
            _ => return Err(mismatch("conv1d", x.shape(), kernel.shape())),
        };
        if stride == 0 {
            return Err(NnError::InvalidArgument("conv1d stride must be >= 1".into()));
        }
        if t < p {
            return Err(NnError::InputTooShort { len: t, needed: p });
        }
        let l = conv_out_len(t, p, stride);
        let frames = unfold(x.data(), p, stride, l);
        let mut y = vec![0.0; n * l];
        gemm(n, p, l, kernel.data(), false, &frames, true, 0.0, &mut y);
        let kv = kernel.value_rc();
        self.record("conv1d", Tensor::from_parts(vec![n, l], y), &[x, kernel], move |g, need| {
            let gx = need[0].then(|| {
                let mut gf = vec![0.0; l * p];
                gemm(l, n, p, g, true, kv.data(), false, 0.0, &mut gf);
                let mut gx = vec![0.0; t];
                for (f, row) in gf.chunks_exact(p).enumerate() {
                    gx[f * stride..f * stride + p].iter_mut().zip(row).for_each(|(a, b)| *a += b);
                }
                gx
            });
            let gk = need[1].then(|| {
                let mut gk = vec![0.0; n * p];
                gemm(n, l, p, g, false, &frames, false, 0.0, &mut gk);
                gk
            });
            vec![gx, gk]
        })
    }
}

pub fn conv_out_len(t: usize, p: usize, stride: usize) -> usize {
    (t - p) / stride + 1
}

/// `[l, p]` matrix of strided frames.
fn unfold(x: &[f64], p: usize, stride: usize, l: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(l * p);
    for f in 0..l {
        out.extend_from_slice(&x[f * stride..f * stride + p]);
    }
    out
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    row.iter_mut().for_each(|v| *v /= sum);
}

/// For each output flat index, the input flat index it reads.
fn permute_index_map(shape: &[usize], perm: &[usize]) -> Vec<usize> {
    let rank = shape.len();
    let mut in_strides = vec![1; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let numel: usize = shape.iter().product();
    let mut map = Vec::with_capacity(numel);
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    for _ in 0..numel {
        map.push(src);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            src += strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            src -= strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    map
}
