//! Bidirectional LSTM as a single tape primitive.
//!
//! Gate layout inside the `4H` axis is `[input, forget, cell, output]`.
//! Initial hidden and cell states are zero.

use super::ops::sigmoid;
use super::tensor::gemm;
use super::{NnError, Tape, Tensor, Var};

/// Weights of one LSTM direction: `w_ih: [F, 4H]`, `w_hh: [H, 4H]`, `bias: [4H]`.
#[derive(Clone, Copy)]
pub struct LstmWeights<'a> {
    pub w_ih: &'a Var,
    pub w_hh: &'a Var,
    pub bias: &'a Var,
}

struct Dims {
    batch: usize,
    steps: usize,
    feat: usize,
    hidden: usize,
}

/// Per-step activations of one direction, indexed by processing step.
struct DirCache {
    gates: Vec<Vec<f64>>,
    cells: Vec<Vec<f64>>,
    hidden: Vec<Vec<f64>>,
}

fn time_of(step: usize, steps: usize, reverse: bool) -> usize {
    if reverse {
        steps - 1 - step
    } else {
        step
    }
}

fn run_direction(x: &[f64], d: &Dims, w: &LstmWeights, reverse: bool) -> DirCache {
    let (b, t, f, h) = (d.batch, d.steps, d.feat, d.hidden);
    let g4 = 4 * h;
    let mut xw = vec![0.0; b * t * g4];
    gemm(b * t, f, g4, x, false, w.w_ih.data(), false, 0.0, &mut xw);
    let bias = w.bias.data();
    let mut cache = DirCache {
        gates: Vec::with_capacity(t),
        cells: Vec::with_capacity(t),
        hidden: Vec::with_capacity(t),
    };
    let zeros = vec![0.0; b * h];
    for s in 0..t {
        let time = time_of(s, t, reverse);
        let mut pre = vec![0.0; b * g4];
        for bi in 0..b {
            let src = &xw[(bi * t + time) * g4..(bi * t + time + 1) * g4];
            for ((p, x), bv) in pre[bi * g4..(bi + 1) * g4].iter_mut().zip(src).zip(bias) {
                *p = x + bv;
            }
        }
        let h_prev = cache.hidden.last().unwrap_or(&zeros);
        gemm(b, h, g4, h_prev, false, w.w_hh.data(), false, 1.0, &mut pre);
        let c_prev = cache.cells.last().unwrap_or(&zeros);
        let mut c = vec![0.0; b * h];
        let mut hs = vec![0.0; b * h];
        for bi in 0..b {
            let row = &mut pre[bi * g4..(bi + 1) * g4];
            for j in 0..h {
                let i_g = sigmoid(row[j]);
                let f_g = sigmoid(row[h + j]);
                let c_g = row[2 * h + j].tanh();
                let o_g = sigmoid(row[3 * h + j]);
                row[j] = i_g;
                row[h + j] = f_g;
                row[2 * h + j] = c_g;
                row[3 * h + j] = o_g;
                let k = bi * h + j;
                c[k] = f_g * c_prev[k] + i_g * c_g;
                hs[k] = o_g * c[k].tanh();
            }
        }
        cache.gates.push(pre);
        cache.cells.push(c);
        cache.hidden.push(hs);
    }
    cache
}

struct DirGrads {
    dx: Vec<f64>,
    dw_ih: Vec<f64>,
    dw_hh: Vec<f64>,
    dbias: Vec<f64>,
}

fn backprop_direction(
    gy: &[f64],
    x: &[f64],
    d: &Dims,
    w_ih: &[f64],
    w_hh: &[f64],
    cache: &DirCache,
    reverse: bool,
    column: usize,
) -> DirGrads {
    let (b, t, f, h) = (d.batch, d.steps, d.feat, d.hidden);
    let g4 = 4 * h;
    let out_w = 2 * h;
    let zeros = vec![0.0; b * h];
    let mut dpre_all = vec![0.0; b * t * g4];
    let mut dw_hh = vec![0.0; h * g4];
    let mut dh_next = vec![0.0; b * h];
    let mut dc_next = vec![0.0; b * h];
    let mut dpre = vec![0.0; b * g4];
    for s in (0..t).rev() {
        let time = time_of(s, t, reverse);
        let gates = &cache.gates[s];
        let c = &cache.cells[s];
        let c_prev = if s > 0 { &cache.cells[s - 1] } else { &zeros };
        let h_prev = if s > 0 { &cache.hidden[s - 1] } else { &zeros };
        for bi in 0..b {
            let gy_row = &gy[(bi * t + time) * out_w + column..(bi * t + time) * out_w + column + h];
            let gr = &gates[bi * g4..(bi + 1) * g4];
            let dr = &mut dpre[bi * g4..(bi + 1) * g4];
            for j in 0..h {
                let k = bi * h + j;
                let (i_g, f_g, c_g, o_g) = (gr[j], gr[h + j], gr[2 * h + j], gr[3 * h + j]);
                let dh = gy_row[j] + dh_next[k];
                let tc = c[k].tanh();
                let d_o = dh * tc;
                let dc = dc_next[k] + dh * o_g * (1.0 - tc * tc);
                dr[j] = dc * c_g * i_g * (1.0 - i_g);
                dr[h + j] = dc * c_prev[k] * f_g * (1.0 - f_g);
                dr[2 * h + j] = dc * i_g * (1.0 - c_g * c_g);
                dr[3 * h + j] = d_o * o_g * (1.0 - o_g);
                dc_next[k] = dc * f_g;
            }
            dpre_all[(bi * t + time) * g4..(bi * t + time + 1) * g4].copy_from_slice(dr);
        }
        gemm(h, b, g4, h_prev, true, &dpre, false, 1.0, &mut dw_hh);
        gemm(b, g4, h, &dpre, false, w_hh, true, 0.0, &mut dh_next);
    }
    let mut dw_ih = vec![0.0; f * g4];
    gemm(f, b * t, g4, x, true, &dpre_all, false, 0.0, &mut dw_ih);
    let mut dx = vec![0.0; b * t * f];
    gemm(b * t, g4, f, &dpre_all, false, w_ih, true, 0.0, &mut dx);
    let mut dbias = vec![0.0; g4];
    for row in dpre_all.chunks_exact(g4) {
        dbias.iter_mut().zip(row).for_each(|(a, v)| *a += v);
    }
    DirGrads {
        dx,
        dw_ih,
        dw_hh,
        dbias,
    }
}

fn check_weights(w: &LstmWeights, feat: usize) -> Result<usize, NnError> {
    let (f, g4) = match *w.w_ih.shape() {
        [f, g4] if g4 % 4 == 0 => (f, g4),
        _ => return Err(NnError::InvalidArgument(format!("w_ih shape {:?}", w.w_ih.shape()))),
    };
    let h = g4 / 4;
    if f != feat || w.w_hh.shape() != [h, g4] || w.bias.shape() != [g4] {
        return Err(NnError::ShapeMismatch {
            op: "blstm",
            lhs: vec![feat, g4],
            rhs: w.w_hh.shape().to_vec(),
        });
    }
    Ok(h)
}

impl Tape {
    /// Bidirectional LSTM over axis 1 of `x: [B, T, F]`; returns
    /// `[B, T, 2H]` with forward states in the first `H` columns.
    pub fn blstm(&self, x: &Var, fwd: LstmWeights, bwd: LstmWeights) -> Result<Var, NnError> {
        let (b, t, f) = match *x.shape() {
            [b, t, f] => (b, t, f),
            _ => return Err(NnError::InvalidArgument(format!("blstm input shape {:?}", x.shape()))),
        };
        let h = check_weights(&fwd, f)?;
        if check_weights(&bwd, f)? != h {
            return Err(NnError::ShapeMismatch {
                op: "blstm",
                lhs: fwd.w_hh.shape().to_vec(),
                rhs: bwd.w_hh.shape().to_vec(),
            });
        }
        let dims = Dims {
            batch: b,
            steps: t,
            feat: f,
            hidden: h,
        };
        let caches = [
            run_direction(x.data(), &dims, &fwd, false),
            run_direction(x.data(), &dims, &bwd, true),
        ];
        let mut y = vec![0.0; b * t * 2 * h];
        for (dir, cache) in caches.iter().enumerate() {
            for s in 0..t {
                let time = time_of(s, t, dir == 1);
                for bi in 0..b {
                    let dst = (bi * t + time) * 2 * h + dir * h;
                    y[dst..dst + h].copy_from_slice(&cache.hidden[s][bi * h..(bi + 1) * h]);
                }
            }
        }
        let xv = x.value_rc();
        let weights = [
            (fwd.w_ih.value_rc(), fwd.w_hh.value_rc()),
            (bwd.w_ih.value_rc(), bwd.w_hh.value_rc()),
        ];
        let inputs = [x, fwd.w_ih, fwd.w_hh, fwd.bias, bwd.w_ih, bwd.w_hh, bwd.bias];
        let out = Tensor::from_parts(vec![b, t, 2 * h], y);
        self.record("blstm", out, &inputs, move |g, need| {
            let mut grads: Vec<Option<Vec<f64>>> = vec![None; 7];
            let mut dx = vec![0.0; b * t * f];
            for dir in 0..2 {
                let (w_ih, w_hh) = &weights[dir];
                let dg = backprop_direction(
                    g,
                    xv.data(),
                    &dims,
                    w_ih.data(),
                    w_hh.data(),
                    &caches[dir],
                    dir == 1,
                    dir * h,
                );
                dx.iter_mut().zip(&dg.dx).for_each(|(a, v)| *a += v);
                let base = 1 + 3 * dir;
                grads[base] = need[base].then_some(dg.dw_ih);
                grads[base + 1] = need[base + 1].then_some(dg.dw_hh);
                grads[base + 2] = need[base + 2].then_some(dg.dbias);
            }
            grads[0] = need[0].then_some(dx);
            grads
        })
    }
}
