use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::{SignalError, Waveform};

fn map_hound(err: hound::Error) -> SignalError {
    match err {
        hound::Error::IoError(e) => SignalError::Io(e),
        hound::Error::Unsupported => SignalError::UnsupportedEncoding("unsupported WAV feature".into()),
        other => SignalError::MalformedHeader(other.to_string()),
    }
}

/// Reads a mono WAV file. 16-bit PCM is scaled by 1/32768; 32-bit float is
/// passed through unchanged.
pub fn load_wav(path: impl AsRef<Path>) -> Result<Waveform, SignalError> {
    let reader = WavReader::open(path).map_err(map_hound)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(SignalError::MultiChannel(spec.channels));
    }
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<Result<_, _>>()
            .map_err(map_hound)?,
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<Result<_, _>>()
            .map_err(map_hound)?,
        (fmt, bits) => {
            return Err(SignalError::UnsupportedEncoding(format!(
                "{bits}-bit {}",
                match fmt {
                    SampleFormat::Int => "integer",
                    SampleFormat::Float => "float",
                }
            )))
        }
    };
    Waveform::new(samples, spec.sample_rate)
}

/// Writes a 32-bit float mono WAV file.
///
/// Samples are narrowed to `f32`; a waveform whose samples are already
/// `f32`-representable (e.g. one produced by [`load_wav`]) round-trips exactly.
pub fn save_wav(w: &Waveform, path: impl AsRef<Path>) -> Result<(), SignalError> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: w.sample_rate(),
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let mut writer = WavWriter::create(path, spec).map_err(map_hound)?;
    for &s in w.samples() {
        writer.write_sample(s as f32).map_err(map_hound)?;
    }
    writer.finalize().map_err(map_hound)
}
