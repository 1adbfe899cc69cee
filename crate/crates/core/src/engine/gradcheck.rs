//! Central finite-difference checks of tape gradients.

use super::{Tape, Tensor, Var};
use crate::error::Result;

/// Outcome of comparing analytic and numeric derivatives.
#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// `(input, flat index, analytic, numeric)` of the worst coordinate.
    pub worst: Option<(usize, usize, f64, f64)>,
}

impl GradReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error <= tol
    }
}

/// Relative error with a small absolute floor so that derivatives which are
/// both essentially zero compare equal.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(1e-6);
    (analytic - numeric).abs() / scale
}

/// Checks `f` (a scalar-valued function of the given leaves) at every
/// coordinate selected by `coords`. `coords(input, numel)` returns the flat
/// indices to probe for that input. The first call of `f` is the analytic
/// pass; every later call evaluates a perturbed input.
pub fn check(
    inputs: &[Tensor<f64>],
    step: f64,
    f: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
    coords: impl Fn(usize, usize) -> Vec<usize>,
) -> Result<GradReport> {
    let eval = |vals: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.item(out))
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;

    let mut report = GradReport {
        checked: 0,
        max_rel_error: 0.0,
        worst: None,
    };
    let mut probe = inputs.to_vec();
    for (i, &v) in vars.iter().enumerate() {
        let analytic = tape
            .grad(v)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; inputs[i].numel()]);
        for j in coords(i, inputs[i].numel()) {
            let orig = inputs[i].data()[j];
            probe[i].data_mut()[j] = orig + step;
            let up = eval(&probe)?;
            probe[i].data_mut()[j] = orig - step;
            let down = eval(&probe)?;
            probe[i].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * step);
            let err = rel_error(analytic[j], numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                if err >= report.max_rel_error {
                    report.worst = Some((i, j, analytic[j], numeric));
                }
            }
        }
    }
    Ok(report)
}

/// Probes every coordinate.
pub fn all_coords(_input: usize, numel: usize) -> Vec<usize> {
    (0..numel).collect()
}
