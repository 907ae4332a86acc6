//! Short-time objective intelligibility.
//!
//! Follows the reference procedure step for step, including its framing
//! convention: frames start at `0, hop, ..` strictly before `len - frame_len`,
//! so the last complete frame is never analysed.

use std::sync::OnceLock;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::MetricError;
use crate::signal::{resample, Waveform};

pub const STOI_RATE: u32 = 10_000;
pub const FRAME_LEN: usize = 256;
pub const FFT_LEN: usize = 512;
pub const NUM_BANDS: usize = 15;
pub const MIN_FREQ_HZ: f64 = 150.0;
/// Frames per short-time segment (384 ms at 10 kHz with a 128-sample hop).
pub const SEGMENT_FRAMES: usize = 30;
/// Lower signal-to-distortion bound in dB.
pub const BETA_DB: f64 = -15.0;
pub const DYN_RANGE_DB: f64 = 40.0;

const EPS: f64 = f64::EPSILON;

/// STOI of `degraded` against `clean`, in `[0, 1]`.
pub fn stoi(degraded: &Waveform, clean: &Waveform) -> Result<f64, MetricError> {
    if degraded.len() != clean.len() {
        return Err(MetricError::LengthMismatch(degraded.len(), clean.len()));
    }
    if degraded.sample_rate() != clean.sample_rate() {
        return Err(MetricError::RateMismatch(degraded.sample_rate(), clean.sample_rate()));
    }
    let x = resample(clean, STOI_RATE)?;
    let y = resample(degraded, STOI_RATE)?;
    stoi_at_10k(y.samples(), x.samples())
}

/// STOI on signals already sampled at 10 kHz.
pub fn stoi_at_10k(degraded: &[f64], clean: &[f64]) -> Result<f64, MetricError> {
    if degraded.len() != clean.len() {
        return Err(MetricError::LengthMismatch(degraded.len(), clean.len()));
    }
    let (x, y) = remove_silent_frames(clean, degraded, DYN_RANGE_DB, FRAME_LEN, FRAME_LEN / 2);
    let x_tob = third_octave_envelopes(&x);
    let y_tob = third_octave_envelopes(&y);
    let frames = x_tob.first().map_or(0, |b| b.len());
    if frames < SEGMENT_FRAMES {
        return Err(MetricError::TooShort {
            frames,
            needed: SEGMENT_FRAMES,
        });
    }

    let clip = 1.0 + 10f64.powf(-BETA_DB / 20.0);
    let n_segments = frames - SEGMENT_FRAMES + 1;
    let mut total = 0.0;
    for m in 0..n_segments {
        for band in 0..NUM_BANDS {
            let xs = &x_tob[band][m..m + SEGMENT_FRAMES];
            let ys = &y_tob[band][m..m + SEGMENT_FRAMES];
            let scale = norm(xs) / (norm(ys) + EPS);
            let y_prime: Vec<f64> = ys
                .iter()
                .zip(xs)
                .map(|(y, x)| (y * scale).min(x * clip))
                .collect();
            total += normalized_correlation(xs, &y_prime);
        }
    }
    let d = total / (n_segments * NUM_BANDS) as f64;
    Ok(d.clamp(0.0, 1.0))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn normalized_correlation(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let xc: Vec<f64> = x.iter().map(|v| v - mx).collect();
    let yc: Vec<f64> = y.iter().map(|v| v - my).collect();
    let nx = norm(&xc) + EPS;
    let ny = norm(&yc) + EPS;
    xc.iter().zip(&yc).map(|(a, b)| (a / nx) * (b / ny)).sum()
}

/// Hann window of length `n` without the zero end points (`hanning(n + 2)[1..-1]`).
fn hann_inner(n: usize) -> Vec<f64> {
    let m = (n + 2) as f64;
    (1..=n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (m - 1.0)).cos())
        .collect()
}

fn frame_starts(len: usize, frame_len: usize, hop: usize) -> impl Iterator<Item = usize> {
    (0..len.saturating_sub(frame_len)).step_by(hop)
}

/// Drops frames whose clean-signal energy is more than `dyn_range` dB below
/// the loudest clean frame, then overlap-adds the survivors.
fn remove_silent_frames(
    x: &[f64],
    y: &[f64],
    dyn_range: f64,
    frame_len: usize,
    hop: usize,
) -> (Vec<f64>, Vec<f64>) {
    let w = hann_inner(frame_len);
    let window = |s: &[f64], start: usize| -> Vec<f64> {
        s[start..start + frame_len].iter().zip(&w).map(|(a, b)| a * b).collect()
    };
    let starts: Vec<usize> = frame_starts(x.len(), frame_len, hop).collect();
    let x_frames: Vec<Vec<f64>> = starts.iter().map(|&s| window(x, s)).collect();
    let energies: Vec<f64> = x_frames.iter().map(|f| 20.0 * (norm(f) + EPS).log10()).collect();
    let max_energy = energies.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let keep: Vec<usize> = (0..starts.len())
        .filter(|&i| max_energy - dyn_range - energies[i] < 0.0)
        .collect();
    let x_kept: Vec<&Vec<f64>> = keep.iter().map(|&i| &x_frames[i]).collect();
    let y_frames: Vec<Vec<f64>> = keep.iter().map(|&i| window(y, starts[i])).collect();
    let y_kept: Vec<&Vec<f64>> = y_frames.iter().collect();
    (overlap_add(&x_kept, hop, frame_len), overlap_add(&y_kept, hop, frame_len))
}

fn overlap_add(frames: &[&Vec<f64>], hop: usize, frame_len: usize) -> Vec<f64> {
    if frames.is_empty() {
        return Vec::new();
    }
    let mut out = vec![0.0; (frames.len() - 1) * hop + frame_len];
    for (i, f) in frames.iter().enumerate() {
        for (o, v) in out[i * hop..i * hop + frame_len].iter_mut().zip(f.iter()) {
            *o += v;
        }
    }
    out
}

/// One-third octave band matrix as `(first_bin, end_bin)` ranges per band.
fn band_ranges() -> &'static [(usize, usize); NUM_BANDS] {
    static BANDS: OnceLock<[(usize, usize); NUM_BANDS]> = OnceLock::new();
    BANDS.get_or_init(|| {
        let n_bins = FFT_LEN / 2 + 1;
        let freqs: Vec<f64> = (0..n_bins)
            .map(|i| i as f64 * STOI_RATE as f64 / FFT_LEN as f64)
            .collect();
        let nearest = |target: f64| -> usize {
            let mut best = 0;
            for (i, f) in freqs.iter().enumerate() {
                if (f - target).powi(2) < (freqs[best] - target).powi(2) {
                    best = i;
                }
            }
            best
        };
        let mut out = [(0, 0); NUM_BANDS];
        for (k, slot) in out.iter_mut().enumerate() {
            let k = k as f64;
            let lo = MIN_FREQ_HZ * 2f64.powf((2.0 * k - 1.0) / 6.0);
            let hi = MIN_FREQ_HZ * 2f64.powf((2.0 * k + 1.0) / 6.0);
            *slot = (nearest(lo), nearest(hi));
        }
        out
    })
}

/// Band envelopes `[band][frame]` from the magnitude STFT.
fn third_octave_envelopes(x: &[f64]) -> Vec<Vec<f64>> {
    let w = hann_inner(FRAME_LEN);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(FFT_LEN);
    let bands = band_ranges();
    let mut out = vec![Vec::new(); NUM_BANDS];
    let mut buf = vec![Complex::new(0.0, 0.0); FFT_LEN];
    for start in frame_starts(x.len(), FRAME_LEN, FRAME_LEN / 2) {
        buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        for (i, (s, wv)) in x[start..start + FRAME_LEN].iter().zip(&w).enumerate() {
            buf[i] = Complex::new(s * wv, 0.0);
        }
        fft.process(&mut buf);
        for (band, &(lo, hi)) in bands.iter().enumerate() {
            let energy: f64 = buf[lo..hi].iter().map(|c| c.norm_sqr()).sum();
            out[band].push(energy.sqrt());
        }
    }
    out
}
