//! Audio I/O, resampling, SNR-controlled mixing and deterministic test signals.
//!
//! All DSP runs on `f64` samples. Files on disk are mono WAV, either 16-bit
//! integer PCM or 32-bit IEEE float.

mod resample;
mod synth;
mod wav;

pub use resample::{resample, Resampler, KAISER_BETA, ZERO_CROSSINGS};
pub use synth::{synth_signal, SignalKind};
pub use wav::{load_wav, save_wav};

use rand::Rng;
use thiserror::Error;

/// Pipeline default sample rate.
pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("waveform must contain at least one sample")]
    Empty,
    #[error("sample rate must be positive")]
    ZeroSampleRate,
    #[error("non-finite sample at index {0}")]
    NonFinite(usize),
    #[error("malformed WAV header: {0}")]
    MalformedHeader(String),
    #[error("multi-channel unsupported ({0} channels)")]
    MultiChannel(u16),
    #[error("unsupported encoding: {0}")]
    UnsupportedEncoding(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("sample-rate mismatch: {0} Hz vs {1} Hz")]
    RateMismatch(u32, u32),
    #[error("noise ({noise} samples) is shorter than clean ({clean} samples)")]
    NoiseTooShort { clean: usize, noise: usize },
    #[error("{0} signal has zero power")]
    ZeroPower(&'static str),
    #[error("SNR must be finite, got {0}")]
    NonFiniteSnr(f64),
    #[error("duration must be positive, got {0}")]
    BadDuration(f64),
}

/// Mono time-domain signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self, SignalError> {
        if samples.is_empty() {
            return Err(SignalError::Empty);
        }
        if sample_rate == 0 {
            return Err(SignalError::ZeroSampleRate);
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(SignalError::NonFinite(i));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    /// Always false; kept for API symmetry with `len`.
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Mean squared amplitude.
    pub fn power(&self) -> f64 {
        mean_power(&self.samples)
    }
}

pub(crate) fn mean_power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

/// Result of [`mix_at_snr`]: the mixture plus the components that produced it.
#[derive(Debug, Clone)]
pub struct Mixture {
    pub mixture: Waveform,
    pub scaled_noise: Vec<f64>,
    pub gain: f64,
}

/// Noise gain `g` such that `P_clean / (g² P_noise)` equals the requested SNR.
pub fn snr_gain(clean_power: f64, noise_power: f64, snr_db: f64) -> f64 {
    (clean_power / (noise_power * 10f64.powf(snr_db / 10.0))).sqrt()
}

/// Adds `noise` to `clean` at exactly `snr_db`. Noise is truncated to the
/// clean length, starting at its first sample.
pub fn mix_at_snr(clean: &Waveform, noise: &Waveform, snr_db: f64) -> Result<Mixture, SignalError> {
    mix_at_snr_from(clean, noise, snr_db, 0)
}

/// Like [`mix_at_snr`] but takes the noise excerpt from a seeded random offset.
pub fn mix_at_snr_seeded<R: Rng>(
    clean: &Waveform,
    noise: &Waveform,
    snr_db: f64,
    rng: &mut R,
) -> Result<Mixture, SignalError> {
    if noise.len() < clean.len() {
        return Err(SignalError::NoiseTooShort {
            clean: clean.len(),
            noise: noise.len(),
        });
    }
    let offset = rng.gen_range(0..=noise.len() - clean.len());
    mix_at_snr_from(clean, noise, snr_db, offset)
}

fn mix_at_snr_from(
    clean: &Waveform,
    noise: &Waveform,
    snr_db: f64,
    offset: usize,
) -> Result<Mixture, SignalError> {
    if !snr_db.is_finite() {
        return Err(SignalError::NonFiniteSnr(snr_db));
    }
    if clean.sample_rate() != noise.sample_rate() {
        return Err(SignalError::RateMismatch(clean.sample_rate(), noise.sample_rate()));
    }
    if noise.len() < clean.len() + offset {
        return Err(SignalError::NoiseTooShort {
            clean: clean.len(),
            noise: noise.len(),
        });
    }
    let excerpt = &noise.samples()[offset..offset + clean.len()];
    let p_clean = clean.power();
    let p_noise = mean_power(excerpt);
    if p_clean == 0.0 {
        return Err(SignalError::ZeroPower("clean"));
    }
    if p_noise == 0.0 {
        return Err(SignalError::ZeroPower("noise"));
    }
    let gain = snr_gain(p_clean, p_noise, snr_db);
    let scaled_noise: Vec<f64> = excerpt.iter().map(|n| gain * n).collect();
    let mixed = clean
        .samples()
        .iter()
        .zip(&scaled_noise)
        .map(|(c, n)| c + n)
        .collect();
    Ok(Mixture {
        mixture: Waveform::new(mixed, clean.sample_rate())?,
        scaled_noise,
        gain,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn waveform_rejects_bad_input() {
        assert!(matches!(Waveform::new(vec![], 16000), Err(SignalError::Empty)));
        assert!(matches!(Waveform::new(vec![0.0], 0), Err(SignalError::ZeroSampleRate)));
        assert!(matches!(
            Waveform::new(vec![0.0, f64::NAN], 16000),
            Err(SignalError::NonFinite(1))
        ));
    }

    #[test]
    fn gain_hand_cases() {
        assert!((snr_gain(0.1, 0.4, 0.0) - 0.5).abs() < 1e-15);
        assert_eq!(snr_gain(0.3, 0.3, 0.0), 1.0);
    }

    #[test]
    fn infinite_snr_rejected() {
        let c = Waveform::new(vec![1.0, -1.0], 16000).unwrap();
        let n = Waveform::new(vec![0.5, 0.5], 16000).unwrap();
        assert!(matches!(
            mix_at_snr(&c, &n, f64::INFINITY),
            Err(SignalError::NonFiniteSnr(_))
        ));
    }

    #[test]
    fn mismatch_and_zero_power_errors() {
        let c = Waveform::new(vec![1.0, -1.0], 16000).unwrap();
        let n8 = Waveform::new(vec![0.5, 0.5], 8000).unwrap();
        assert!(matches!(mix_at_snr(&c, &n8, 0.0), Err(SignalError::RateMismatch(..))));
        let z = Waveform::new(vec![0.0, 0.0], 16000).unwrap();
        assert!(matches!(mix_at_snr(&z, &c, 0.0), Err(SignalError::ZeroPower("clean"))));
        assert!(matches!(mix_at_snr(&c, &z, 0.0), Err(SignalError::ZeroPower("noise"))));
        let short = Waveform::new(vec![0.5], 16000).unwrap();
        assert!(matches!(mix_at_snr(&c, &short, 0.0), Err(SignalError::NoiseTooShort { .. })));
    }

    #[test]
    fn hand_case_gain() {
        // clean power 0.1, noise power 0.4
        let a = 0.1f64.sqrt();
        let b = 0.4f64.sqrt();
        let c = Waveform::new(vec![a, -a, a, -a], 16000).unwrap();
        let n = Waveform::new(vec![b, b, -b, -b], 16000).unwrap();
        let m = mix_at_snr(&c, &n, 0.0).unwrap();
        assert!((m.gain - 0.5).abs() < 1e-12);
    }

    #[test]
    fn seeded_offset_is_deterministic() {
        let c = synth_signal(SignalKind::WhiteNoise, 0.1, 16000, 1).unwrap();
        let n = synth_signal(SignalKind::PinkNoise, 0.5, 16000, 2).unwrap();
        let a = mix_at_snr_seeded(&c, &n, 5.0, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = mix_at_snr_seeded(&c, &n, 5.0, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a.mixture, b.mixture);
    }

    proptest! {
        #[test]
        fn mixing_recovers_requested_snr(
            seed in 0u64..1000,
            snr in -20.0f64..40.0,
            len in 16usize..400,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let clean: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let noise: Vec<f64> = (0..len + 10).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let c = Waveform::new(clean, 16000).unwrap();
            let n = Waveform::new(noise, 16000).unwrap();
            let m = mix_at_snr(&c, &n, snr).unwrap();
            let measured = 10.0 * (c.power() / mean_power(&m.scaled_noise)).log10();
            prop_assert!((measured - snr).abs() < 1e-9);
            for ((y, c), n) in m.mixture.samples().iter().zip(c.samples()).zip(&m.scaled_noise) {
                prop_assert_eq!(*y, c + n);
            }
        }
    }
}
