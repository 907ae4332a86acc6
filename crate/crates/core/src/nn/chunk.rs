//! Overlapped segmentation of the last axis and its summation adjoint.

use super::{NnError, Tape, Tensor, Var};

/// Geometry of a chunked sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkLayout {
    /// Original sequence length.
    pub len: usize,
    pub chunk: usize,
    pub hop: usize,
    /// Number of chunks.
    pub chunks: usize,
    /// Zeros appended to reach `padded_len()`.
    pub pad: usize,
}

impl ChunkLayout {
    pub fn new(len: usize, chunk: usize, hop: usize) -> Result<Self, NnError> {
        if len == 0 || chunk == 0 || hop == 0 {
            return Err(NnError::InvalidArgument(format!(
                "chunk layout needs positive len/chunk/hop, got {len}/{chunk}/{hop}"
            )));
        }
        let chunks = if len <= chunk {
            1
        } else {
            (len - chunk).div_ceil(hop) + 1
        };
        let padded = (chunks - 1) * hop + chunk;
        Ok(Self {
            len,
            chunk,
            hop,
            chunks,
            pad: padded - len,
        })
    }

    pub fn padded_len(&self) -> usize {
        (self.chunks - 1) * self.hop + self.chunk
    }
}

impl Tape {
    /// Splits the last axis of `x` (`[..., L]`) into overlapped chunks,
    /// giving `[..., S, R]`. The tail is zero-padded to `(S-1)*hop + R`.
    pub fn chunk(&self, x: &Var, chunk: usize, hop: usize) -> Result<(Var, ChunkLayout), NnError> {
        let len = *x.shape().last().ok_or_else(|| NnError::InvalidArgument("chunk of scalar".into()))?;
        let layout = ChunkLayout::new(len, chunk, hop)?;
        let outer = x.numel() / len;
        let s = layout.chunks;
        let mut y = vec![0.0; outer * s * chunk];
        for o in 0..outer {
            let src = &x.data()[o * len..(o + 1) * len];
            for c in 0..s {
                let start = c * hop;
                let avail = len.saturating_sub(start).min(chunk);
                let dst = (o * s + c) * chunk;
                y[dst..dst + avail].copy_from_slice(&src[start..start + avail]);
            }
        }
        let mut shape = x.shape()[..x.shape().len() - 1].to_vec();
        shape.extend([s, chunk]);
        let var = self.record("chunk", Tensor::from_parts(shape, y), &[x], move |g, _| {
            let mut gx = vec![0.0; outer * len];
            for o in 0..outer {
                for c in 0..s {
                    let start = c * hop;
                    let avail = len.saturating_sub(start).min(chunk);
                    let src = (o * s + c) * chunk;
                    gx[o * len + start..o * len + start + avail]
                        .iter_mut()
                        .zip(&g[src..src + avail])
                        .for_each(|(a, b)| *a += b);
                }
            }
            vec![Some(gx)]
        })?;
        Ok((var, layout))
    }

    /// Sums overlapped segments of `x: [..., S, R]` placed `hop` apart and
    /// keeps the first `out_len` positions, giving `[..., out_len]`.
    /// No window and no normalisation are applied.
    pub fn overlap_add(&self, x: &Var, hop: usize, out_len: usize) -> Result<Var, NnError> {
        let rank = x.shape().len();
        if rank < 2 || hop == 0 {
            return Err(NnError::InvalidArgument(format!(
                "overlap_add of shape {:?} with hop {hop}",
                x.shape()
            )));
        }
        let (s, r) = (x.shape()[rank - 2], x.shape()[rank - 1]);
        let natural = (s - 1) * hop + r;
        let consistent = out_len >= 1 && out_len <= natural && (s == 1 || out_len + hop > natural);
        if !consistent {
            return Err(NnError::InvalidArgument(format!(
                "overlap_add: out_len {out_len} inconsistent with {s} segments of {r} at hop {hop}"
            )));
        }
        let outer = x.numel() / (s * r);
        let mut y = vec![0.0; outer * out_len];
        for o in 0..outer {
            for c in 0..s {
                let start = c * hop;
                let avail = out_len.saturating_sub(start).min(r);
                let src = (o * s + c) * r;
                y[o * out_len + start..o * out_len + start + avail]
                    .iter_mut()
                    .zip(&x.data()[src..src + avail])
                    .for_each(|(a, b)| *a += b);
            }
        }
        let mut shape = x.shape()[..rank - 2].to_vec();
        shape.push(out_len);
        self.record("overlap_add", Tensor::from_parts(shape, y), &[x], move |g, _| {
            let mut gx = vec![0.0; outer * s * r];
            for o in 0..outer {
                for c in 0..s {
                    let start = c * hop;
                    let avail = out_len.saturating_sub(start).min(r);
                    let dst = (o * s + c) * r;
                    gx[dst..dst + avail].copy_from_slice(&g[o * out_len + start..o * out_len + start + avail]);
                }
            }
            vec![Some(gx)]
        })
    }
}
