//! Agreement statistics between estimated and true scores.

use super::MetricError;

fn check_pair(a: &[f64], b: &[f64], min_len: usize) -> Result<(), MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    if a.len() < min_len {
        return Err(MetricError::TooFewSamples {
            n: a.len(),
            needed: min_len,
        });
    }
    Ok(())
}

/// Mean absolute error.
pub fn mae(pred: &[f64], truth: &[f64]) -> Result<f64, MetricError> {
    check_pair(pred, truth, 1)?;
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

/// Pearson correlation coefficient.
pub fn pcc(a: &[f64], b: &[f64]) -> Result<f64, MetricError> {
    check_pair(a, b, 2)?;
    if is_constant(a) || is_constant(b) {
        return Err(MetricError::ZeroVariance);
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(MetricError::ZeroVariance);
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Spearman rank correlation: Pearson correlation of average ranks.
pub fn srcc(a: &[f64], b: &[f64]) -> Result<f64, MetricError> {
    check_pair(a, b, 2)?;
    pcc(&average_ranks(a), &average_ranks(b))
}

fn is_constant(v: &[f64]) -> bool {
    v.iter().all(|x| *x == v[0])
}

/// 1-based ranks; tied values share the mean of the positions they occupy.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut ranks = vec![0.0; v.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && v[order[end]] == v[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let rank = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}
