use super::MetricError;
use crate::signal::Waveform;

/// Additive regulariser on both energies.
pub const SI_SDR_EPS: f64 = 1e-12;
/// Labels are clamped to `[-SI_SDR_CLAMP_DB, SI_SDR_CLAMP_DB]`.
pub const SI_SDR_CLAMP_DB: f64 = 60.0;

/// Scale-invariant signal-to-distortion ratio of `estimate` against `reference`, in dB.
pub fn si_sdr(estimate: &Waveform, reference: &Waveform) -> Result<f64, MetricError> {
    if estimate.sample_rate() != reference.sample_rate() {
        return Err(MetricError::RateMismatch(estimate.sample_rate(), reference.sample_rate()));
    }
    si_sdr_slices(estimate.samples(), reference.samples())
}

pub fn si_sdr_slices(estimate: &[f64], reference: &[f64]) -> Result<f64, MetricError> {
    if estimate.len() != reference.len() {
        return Err(MetricError::LengthMismatch(estimate.len(), reference.len()));
    }
    let ref_energy: f64 = reference.iter().map(|r| r * r).sum();
    if ref_energy == 0.0 {
        return Err(MetricError::ZeroReference);
    }
    let dot: f64 = estimate.iter().zip(reference).map(|(e, r)| e * r).sum();
    let alpha = dot / ref_energy;
    let (mut target, mut residual) = (0.0, 0.0);
    for (e, r) in estimate.iter().zip(reference) {
        let t = alpha * r;
        target += t * t;
        residual += (e - t) * (e - t);
    }
    let db = 10.0 * ((target + SI_SDR_EPS) / (residual + SI_SDR_EPS)).log10();
    Ok(db.clamp(-SI_SDR_CLAMP_DB, SI_SDR_CLAMP_DB))
}
