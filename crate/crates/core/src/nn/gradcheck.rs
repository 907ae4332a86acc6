//! Central finite-difference verification of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Binder, NnError, ParamStore, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, Default)]
pub struct GradCheckOptions {
    /// Probe at most this many coordinates per parameter tensor (all when `None`).
    pub coords_per_param: Option<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coords_checked: usize,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
}

/// Relative error used by the checker.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares tape gradients of the scalar `f` against central differences
/// with step `1e-5 * max(1, |theta|)`.
pub fn grad_check_store<F>(store: &ParamStore, f: F, opts: GradCheckOptions) -> Result<GradCheckReport, NnError>
where
    F: Fn(&Binder) -> Result<Var, NnError>,
{
    let tape = Tape::new();
    let binder = Binder::new(&tape, store, true);
    let loss = f(&binder)?;
    let grads = binder.grads(&tape.backward(&loss)?);

    let eval = |s: &ParamStore| -> Result<f64, NnError> {
        let tape = Tape::new();
        let b = Binder::new(&tape, s, false);
        Ok(f(&b)?.item())
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut probe = store.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        coords_checked: 0,
        worst: None,
    };
    let names: Vec<String> = store.names().map(str::to_string).collect();
    for name in names {
        let n = store.get(&name).expect("listed name").numel();
        let coords: Vec<usize> = match opts.coords_per_param {
            Some(k) if k < n => sample(&mut rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        for i in coords {
            let theta = store.get(&name).expect("listed name").data()[i];
            let h = 1e-5 * theta.abs().max(1.0);
            probe.get_mut(&name).expect("listed name").data_mut()[i] = theta + h;
            let up = eval(&probe)?;
            probe.get_mut(&name).expect("listed name").data_mut()[i] = theta - h;
            let down = eval(&probe)?;
            probe.get_mut(&name).expect("listed name").data_mut()[i] = theta;
            let numeric = (up - down) / (2.0 * h);
            let err = relative_error(grads[&name][i], numeric);
            report.coords_checked += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((name.clone(), i));
            }
        }
    }
    Ok(report)
}

/// Positional convenience wrapper around [`grad_check_store`]: every
/// coordinate of every tensor in `params` is probed.
pub fn grad_check<F>(params: &[Tensor], f: F) -> Result<GradCheckReport, NnError>
where
    F: Fn(&Tape, &[Var]) -> Result<Var, NnError>,
{
    let mut store = ParamStore::new();
    let names: Vec<String> = (0..params.len()).map(|i| format!("p{i:03}")).collect();
    for (name, t) in names.iter().zip(params) {
        store.insert(name.clone(), t.clone())?;
    }
    grad_check_store(
        &store,
        |b| {
            let vars: Vec<Var> = names.iter().map(|n| b.get(n).cloned()).collect::<Result<_, _>>()?;
            f(b.tape(), &vars)
        },
        GradCheckOptions::default(),
    )
}
