use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::ParamGroup;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub h: f64,
    /// Coordinates probed per tensor (all of them when the tensor is smaller).
    pub samples_per_tensor: usize,
    pub seed: u64,
    /// Denominator floor of the relative error.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            h: 1e-5,
            samples_per_tensor: 50,
            seed: 0,
            floor: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(tensor name, flat index)` of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
    /// Probes dropped because the ±h step changed a branch decision.
    pub skipped: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.checked > 0 && self.max_rel_error < tol
    }
}

fn evaluate<F>(params: &ParamGroup, f: &F) -> Result<(f64, u64)>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::with_branch_tracking();
    let vars = params.attach(&mut tape);
    let out = f(&mut tape, &vars)?;
    let value = tape.value(out);
    if value.len() != 1 {
        return Err(Error::ShapeMismatch(alloc::format!(
            "gradient check needs a scalar function, got {:?}",
            value.shape()
        )));
    }
    Ok((value.data()[0], tape.branch_signature()))
}

/// Compares `analytic` (one gradient per tensor, insertion order) against
/// central differences of `f`. A probe whose `±h` evaluation takes a
/// different branch (activation sign, pooling winner, graph) than the
/// unperturbed pass is dropped and another coordinate is drawn.
pub fn finite_difference_check<F>(
    params: &ParamGroup,
    analytic: &[Vec<f64>],
    f: F,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if analytic.len() != params.len() {
        return Err(Error::LengthMismatch {
            expected: params.len(),
            found: analytic.len(),
        });
    }
    let (_, base_sig) = evaluate(params, &f)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        skipped: 0,
    };
    for (t, grad) in analytic.iter().enumerate() {
        let len = params.value(t).len();
        if grad.len() != len {
            return Err(Error::LengthMismatch {
                expected: len,
                found: grad.len(),
            });
        }
        let mut order: Vec<usize> = (0..len).collect();
        order.shuffle(&mut rng);
        let mut taken = 0;
        for idx in order {
            if taken == opts.samples_per_tensor {
                break;
            }
            let orig = params.value(t).data()[idx];
            work.value_mut(t).data_mut()[idx] = orig + opts.h;
            let (plus, sig_plus) = evaluate(&work, &f)?;
            work.value_mut(t).data_mut()[idx] = orig - opts.h;
            let (minus, sig_minus) = evaluate(&work, &f)?;
            work.value_mut(t).data_mut()[idx] = orig;
            if sig_plus != base_sig || sig_minus != base_sig {
                report.skipped += 1;
                continue;
            }
            taken += 1;
            let numeric = (plus - minus) / (2.0 * opts.h);
            let a = grad[idx];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.floor);
            report.checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                if rel >= report.max_rel_error {
                    report.worst = Some((params.name(t).into(), idx));
                }
            }
        }
    }
    Ok(report)
}

/// Differentiates `f` with the tape and checks the result against central
/// differences.
pub fn gradient_check<F>(params: &ParamGroup, f: F, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars = params.attach(&mut tape);
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(0..params.len())
        .map(|(&v, t)| match grads.get(v) {
            Some(g) => g.to_vec(),
            None => alloc::vec![0.0; params.value(t).len()],
        })
        .collect();
    finite_difference_check(params, &analytic, f, opts)
}
