use super::{LabeledSample, LossKind, LossWeights, TrainError};
use crate::metrics::MetricTriple;
use crate::model::ForwardVars;
use crate::nn::{Tape, Tensor, Var};

/// Unweighted loss components of one sample. `pesq` is absent for samples
/// without a PESQ label, `recon` when no reconstruction was produced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub stoi: f64,
    pub pesq: Option<f64>,
    pub sisdr: f64,
    pub recon: Option<f64>,
}

impl LossParts {
    pub fn weighted(&self, w: &LossWeights) -> f64 {
        w.w1 * self.stoi + w.w2 * self.pesq.unwrap_or(0.0) + w.w3 * self.sisdr + w.w0 * self.recon.unwrap_or(0.0)
    }
}

fn recon_mae(recon: &[f64], clean: &[f64]) -> f64 {
    recon.iter().zip(clean).map(|(a, b)| (a - b).abs()).sum::<f64>() / clean.len() as f64
}

/// `w1 L(stoi) + w2 L(pesq) + w3 L(si_sdr) + w0 MAE(recon, clean)` on natural
/// units. The PESQ term is dropped for samples without a PESQ label.
pub fn total_loss(
    pred: &MetricTriple,
    recon: Option<&[f64]>,
    sample: &LabeledSample,
    w: &LossWeights,
    kind: LossKind,
) -> Result<f64, TrainError> {
    if let Some(r) = recon {
        if r.len() != sample.clean.len() {
            return Err(TrainError::InvalidArgument(format!(
                "reconstruction has {} samples, reference {}",
                r.len(),
                sample.clean.len()
            )));
        }
    }
    let truth = &sample.labels;
    let pesq = match (pred.pesq, truth.pesq) {
        (Some(p), Some(t)) => Some(kind.apply(p - t)),
        _ => None,
    };
    let parts = LossParts {
        stoi: kind.apply(pred.stoi - truth.stoi),
        pesq,
        sisdr: kind.apply(pred.si_sdr - truth.si_sdr),
        recon: recon.map(|r| recon_mae(r, sample.clean.samples())),
    };
    Ok(parts.weighted(w))
}

fn metric_term(tape: &Tape, s: &Var, target: f64, kind: LossKind) -> Result<Var, TrainError> {
    let err = tape.add_const(s, -target)?;
    Ok(match kind {
        LossKind::Mae => tape.mean_abs(&err)?,
        LossKind::Mse => tape.mean_square(&err)?,
    })
}

/// Tape version of [`total_loss`]. Terms with zero weight are left out of
/// the graph entirely, so their branches receive no gradient. Returns `None`
/// as the loss when every term is excluded.
pub fn sample_loss(
    tape: &Tape,
    out: &ForwardVars,
    sample: &LabeledSample,
    w: &LossWeights,
    kind: LossKind,
) -> Result<(Option<Var>, LossParts), TrainError> {
    let truth = &sample.labels;
    let mut terms: Vec<Var> = Vec::new();
    let mut add = |term: Var, weight: f64| -> Result<f64, TrainError> {
        let v = term.item();
        if weight > 0.0 {
            terms.push(tape.scale(&term, weight)?);
        }
        Ok(v)
    };
    let stoi = add(metric_term(tape, &out.stoi.s, truth.stoi, kind)?, w.w1)?;
    let pesq = match truth.pesq {
        Some(t) => Some(add(metric_term(tape, &out.pesq.s, t, kind)?, w.w2)?),
        None => None,
    };
    let sisdr = add(metric_term(tape, &out.si_sdr.s, truth.si_sdr, kind)?, w.w3)?;
    let recon = match &out.recon {
        Some(r) => {
            let clean = tape.constant(Tensor::from_vec(sample.clean.samples().to_vec()));
            let diff = tape.sub(r, &clean)?;
            Some(add(tape.mean_abs(&diff)?, w.w0)?)
        }
        None => None,
    };
    let mut total: Option<Var> = None;
    for t in terms {
        total = Some(match total {
            None => t,
            Some(acc) => tape.add(&acc, &t)?,
        });
    }
    Ok((
        total,
        LossParts {
            stoi,
            pesq,
            sisdr,
            recon,
        },
    ))
}
