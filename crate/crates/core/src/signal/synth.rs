use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{SignalError, Waveform};

/// Target RMS level of the noise-like generators.
const NOISE_RMS: f64 = 0.1;
/// Speech-like envelope modulation rate (Hz), roughly the syllable rate.
const SYLLABLE_RATE_HZ: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SignalKind {
    /// Unit-amplitude-halved sine at the given frequency.
    Sine { freq_hz: f64 },
    WhiteNoise,
    PinkNoise,
    /// Pink noise amplitude-modulated by a 4 Hz raised-cosine envelope.
    SpeechLikeAmNoise,
}

/// Deterministic synthetic signal of `duration_s` seconds.
pub fn synth_signal(
    kind: SignalKind,
    duration_s: f64,
    sample_rate: u32,
    seed: u64,
) -> Result<Waveform, SignalError> {
    if !(duration_s > 0.0) || !duration_s.is_finite() {
        return Err(SignalError::BadDuration(duration_s));
    }
    if sample_rate == 0 {
        return Err(SignalError::ZeroSampleRate);
    }
    let len = ((duration_s * sample_rate as f64).round() as usize).max(1);
    let fs = sample_rate as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = match kind {
        SignalKind::Sine { freq_hz } => (0..len)
            .map(|n| 0.5 * (2.0 * PI * freq_hz * n as f64 / fs).sin())
            .collect(),
        SignalKind::WhiteNoise => normalize_rms(white(&mut rng, len)),
        SignalKind::PinkNoise => normalize_rms(pink(&mut rng, len)),
        SignalKind::SpeechLikeAmNoise => {
            let phase: f64 = rng.gen_range(0.0..2.0 * PI);
            let carrier = pink(&mut rng, len);
            let modulated = carrier
                .iter()
                .enumerate()
                .map(|(n, c)| {
                    let t = n as f64 / fs;
                    let env = 0.5 * (1.0 - (2.0 * PI * SYLLABLE_RATE_HZ * t + phase).cos());
                    c * env
                })
                .collect();
            normalize_rms(modulated)
        }
    };
    Waveform::new(samples, sample_rate)
}

fn white(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Paul Kellet's refined pink-noise filter applied to Gaussian white noise.
fn pink(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    let mut b = [0.0f64; 7];
    white(rng, len)
        .into_iter()
        .map(|w| {
            b[0] = 0.99886 * b[0] + w * 0.0555179;
            b[1] = 0.99332 * b[1] + w * 0.0750759;
            b[2] = 0.96900 * b[2] + w * 0.1538520;
            b[3] = 0.86650 * b[3] + w * 0.3104856;
            b[4] = 0.55000 * b[4] + w * 0.5329522;
            b[5] = -0.7616 * b[5] - w * 0.0168980;
            let out = b[0] + b[1] + b[2] + b[3] + b[4] + b[5] + b[6] + w * 0.5362;
            b[6] = w * 0.115926;
            out
        })
        .collect()
}

fn normalize_rms(mut x: Vec<f64>) -> Vec<f64> {
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt();
    if rms > 0.0 {
        let k = NOISE_RMS / rms;
        x.iter_mut().for_each(|v| *v *= k);
    }
    x
}
