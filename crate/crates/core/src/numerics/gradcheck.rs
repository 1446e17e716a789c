use crate::error::Result;
use crate::numerics::tape::Tape;
use crate::numerics::{Mlp, ParameterSet, Tensor};

/// Outcome of comparing analytic gradients with central differences.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradCheckReport {
    /// `max |analytic − numeric| / max(1e-8, |numeric|)` over checked entries.
    pub max_rel_error: f64,
    /// Flat index of the worst entry.
    pub worst_index: Option<usize>,
    pub checked: usize,
    /// Entries whose ±h perturbation moved a ReLU input across zero; these
    /// are excluded from the maximum.
    pub flagged: Vec<usize>,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.checked > 0 && self.max_rel_error <= tolerance
    }
}

/// Central-difference check of `analytic` (flattened gradient) against
/// `eval`, which returns the loss and the tape's kink pattern for the
/// current parameter values.
pub fn finite_difference_check<F>(
    params: &mut ParameterSet,
    analytic: &[f64],
    h: f64,
    mut eval: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParameterSet) -> Result<(f64, Vec<bool>)>,
{
    let (_, base_kinks) = eval(params)?;
    let mut report = GradCheckReport::default();
    for (k, &a) in analytic.iter().enumerate().take(params.numel()) {
        let orig = *params.flat_entry_mut(k);
        *params.flat_entry_mut(k) = orig + h;
        let (plus, kinks_plus) = eval(params)?;
        *params.flat_entry_mut(k) = orig - h;
        let (minus, kinks_minus) = eval(params)?;
        *params.flat_entry_mut(k) = orig;

        if kinks_plus != base_kinks || kinks_minus != base_kinks {
            report.flagged.push(k);
            continue;
        }
        let numeric = (plus - minus) / (2.0 * h);
        let rel = (a - numeric).abs() / numeric.abs().max(1e-8);
        report.checked += 1;
        if report.worst_index.is_none() || rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_index = Some(k);
        }
    }
    Ok(report)
}

fn half_sum_sq(
    net: &Mlp,
    params: &ParameterSet,
    input: &Tensor,
) -> Result<(Tape, crate::numerics::Var)> {
    let mut tape = Tape::new();
    let x = tape.constant(input.clone());
    let y = net.forward(&mut tape, params, x)?;
    let s = tape.sum_sq(y)?;
    let root = tape.scale(s, 0.5);
    Ok((tape, root))
}

/// Checks the gradient of `½‖net(input)‖²` with respect to every parameter
/// of `net` using central differences with step `1e-5`.
pub fn grad_check(net: &Mlp, params: &ParameterSet, input: &Tensor) -> Result<GradCheckReport> {
    let mut work = params.clone();
    work.zero_grad();
    let (tape, root) = half_sum_sq(net, &work, input)?;
    tape.backward(root)?.accumulate_into(&mut work);
    let analytic = work.flatten_grad();
    finite_difference_check(&mut work, &analytic, 1e-5, |ps| {
        let (tape, root) = half_sum_sq(net, ps, input)?;
        Ok((tape.scalar(root), tape.kink_pattern()))
    })
}
