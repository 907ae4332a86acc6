use std::f64::consts::PI;

use super::{SignalError, Waveform};

pub const KAISER_BETA: f64 = 14.77;
pub const ZERO_CROSSINGS: usize = 64;

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Zeroth-order modified Bessel function of the first kind.
fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 1.0;
    while term > sum * 1e-17 {
        term *= q / (k * k);
        sum += term;
        k += 1.0;
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Rational-ratio polyphase windowed-sinc resampler.
///
/// One filter phase is tabulated per distinct fractional input offset, so the
/// table has `up` rows of `2 * half_taps + 1` coefficients.
#[derive(Debug, Clone)]
pub struct Resampler {
    up: u64,
    down: u64,
    half_taps: i64,
    phases: Vec<Vec<f64>>,
}

impl Resampler {
    pub fn new(source_rate: u32, target_rate: u32) -> Self {
        let g = gcd(source_rate as u64, target_rate as u64);
        let up = target_rate as u64 / g;
        let down = source_rate as u64 / g;
        // Cutoff relative to the input Nyquist frequency.
        let cutoff = (up as f64 / down as f64).min(1.0);
        let half_width = ZERO_CROSSINGS as f64 / cutoff;
        let half_taps = half_width.ceil() as i64;
        let i0_beta = bessel_i0(KAISER_BETA);
        let phases = (0..up)
            .map(|p| {
                let frac = p as f64 / up as f64;
                (-half_taps..=half_taps)
                    .map(|j| {
                        let tau = frac - j as f64;
                        let r = tau / half_width;
                        if r.abs() > 1.0 {
                            0.0
                        } else {
                            let window = bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / i0_beta;
                            cutoff * sinc(cutoff * tau) * window
                        }
                    })
                    .collect()
            })
            .collect();
        Self {
            up,
            down,
            half_taps,
            phases,
        }
    }

    pub fn output_len(&self, input_len: usize) -> usize {
        ((input_len as f64) * self.up as f64 / self.down as f64).round() as usize
    }

    pub fn process(&self, input: &[f64]) -> Vec<f64> {
        let out_len = self.output_len(input.len());
        let n_in = input.len() as i64;
        (0..out_len as u64)
            .map(|n| {
                let pos = n * self.down;
                let base = (pos / self.up) as i64;
                let taps = &self.phases[(pos % self.up) as usize];
                let mut acc = 0.0;
                for (t, &h) in taps.iter().enumerate() {
                    // tap t corresponds to input index base + (t - half_taps)
                    let k = base + t as i64 - self.half_taps;
                    if k >= 0 && k < n_in {
                        acc += h * input[k as usize];
                    }
                }
                acc
            })
            .collect()
    }
}

/// Resamples `w` to `target_rate`. Equal rates return the input unchanged.
pub fn resample(w: &Waveform, target_rate: u32) -> Result<Waveform, SignalError> {
    if target_rate == 0 {
        return Err(SignalError::ZeroSampleRate);
    }
    if target_rate == w.sample_rate() {
        return Ok(w.clone());
    }
    let out = Resampler::new(w.sample_rate(), target_rate).process(w.samples());
    Waveform::new(out, target_rate)
}
