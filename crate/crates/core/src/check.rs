//! Finite-difference gradient-check oracle. Every loss in this crate is
//! validated by rebuilding its forward pass under entry-wise parameter
//! perturbations and comparing central differences against the tape's
//! analytic gradients.

use crate::params::ParameterSet;
use crate::tape::{Tape, Var};
use crate::{Error, Result};

/// Outcome of a full sweep over every parameter entry.
#[derive(Clone, Copy, Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    /// Entries skipped because the loss is provably non-smooth there (the
    /// finite-difference estimate itself is unstable across step sizes, e.g.
    /// on a ReLU kink).
    pub skipped: usize,
    pub max_rel_err: f64,
}

/// Entries with both analytic and numeric magnitude below this are compared
/// absolutely instead of relatively.
const TINY: f64 = 1e-6;

/// Compare analytic gradients of `build`'s scalar output against central
/// differences for every entry of every parameter. `build` must be a pure
/// function of the parameter set.
pub fn gradcheck<F>(params: &ParameterSet, build: F, h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParameterSet) -> Result<Var>,
{
    let eval = |ps: &ParameterSet| -> Result<f64> {
        let mut tape = Tape::new();
        let out = build(&mut tape, ps)?;
        tape.value(out).as_scalar()
    };

    let mut tape = Tape::new();
    let loss = build(&mut tape, params)?;
    let analytic = tape.backward(loss, params)?;

    let mut work = params.clone();
    let names: Vec<String> = params.names().cloned().collect();
    let mut report = GradCheckReport::default();

    for name in &names {
        let n = params.get(name)?.len();
        for i in 0..n {
            let orig = params.get(name)?.data()[i];
            let mut eval_at = |offset: f64| -> Result<f64> {
                work.values_mut(name)?[i] = orig + offset;
                let l = eval(&work);
                work.values_mut(name)?[i] = orig;
                l
            };
            let (lp, lm) = (eval_at(h)?, eval_at(-h)?);
            let fd = (lp - lm) / (2.0 * h);
            let a = analytic[name].data()[i];
            match rel_err(a, fd, tol) {
                Verdict::Pass(r) => {
                    report.checked += 1;
                    report.max_rel_err = report.max_rel_err.max(r);
                }
                Verdict::Fail(r) => {
                    // The one-sided slopes disagree at any kink (central
                    // differences can look stable there), so use them to tell
                    // a genuinely wrong gradient from a point where the
                    // numeric oracle itself is invalid.
                    let l0 = eval_at(0.0)?;
                    let fwd = (lp - l0) / h;
                    let bwd = (l0 - lm) / h;
                    if (fwd - bwd).abs() > 0.05 * fwd.abs().max(bwd.abs()).max(1e-8) {
                        report.skipped += 1;
                        continue;
                    }
                    return Err(Error::Train(format!(
                        "gradient check failed at {name}[{i}]: analytic {a}, numeric {fd}, rel err {r}"
                    )));
                }
            }
        }
    }
    Ok(report)
}

enum Verdict {
    Pass(f64),
    Fail(f64),
}

fn rel_err(a: f64, fd: f64, tol: f64) -> Verdict {
    let denom = a.abs().max(fd.abs());
    if denom < TINY {
        let err = (a - fd).abs();
        if err <= TINY {
            Verdict::Pass(0.0)
        } else {
            Verdict::Fail(err)
        }
    } else {
        let r = (a - fd).abs() / denom;
        if r < tol {
            Verdict::Pass(r)
        } else {
            Verdict::Fail(r)
        }
    }
}
