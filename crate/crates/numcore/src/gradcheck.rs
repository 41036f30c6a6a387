//! Central finite-difference check of tape gradients.

use crate::error::{NumError, Result};
use crate::params::{ParamStore, ParamVars};
use crate::tape::{Tape, Var};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Denominator floor of the relative error, so entries whose true
    /// gradient is ~0 are judged on absolute error instead.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            floor: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
    /// Distance of the base point from the nearest ReLU kink, see
    /// [`Tape::kink_margin`]. Perturbations larger than this can make the
    /// finite differences meaningless.
    pub kink_margin: f64,
}

/// Compares the tape gradient of `f` with central differences over every
/// entry of `params`. `f` builds the scalar loss on a fresh tape.
pub fn grad_check<F, E>(
    params: &ParamStore,
    f: F,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport, E>
where
    F: Fn(&mut Tape, &ParamVars) -> Result<Var, E>,
    E: From<NumError>,
{
    let eval = |p: &ParamStore| -> Result<f64, E> {
        let mut tape = Tape::new();
        let vars = p.register(&mut tape);
        let loss = f(&mut tape, &vars)?;
        Ok(tape.value(loss).item())
    };

    let mut tape = Tape::new();
    let vars = params.register(&mut tape);
    let loss = f(&mut tape, &vars)?;
    let analytic = vars.gradients(&tape.backward(loss)?);
    let kink_margin = tape.kink_margin();

    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        checked: 0,
        kink_margin,
    };
    let names: Vec<String> = params.names().map(str::to_owned).collect();
    for name in names {
        let len = params.get(&name)?.len();
        for i in 0..len {
            let orig = params.get(&name)?.data()[i];
            work.get_mut(&name)?.data_mut()[i] = orig + opts.step;
            let up = eval(&work)?;
            work.get_mut(&name)?.data_mut()[i] = orig - opts.step;
            let down = eval(&work)?;
            work.get_mut(&name)?.data_mut()[i] = orig;

            let numeric = (up - down) / (2.0 * opts.step);
            let a = analytic.get(&name)?.data()[i];
            let denom = a.abs().max(numeric.abs()).max(opts.floor);
            let rel = (a - numeric).abs() / denom;
            report.checked += 1;
            if rel > report.max_rel_err || rel.is_nan() {
                report.max_rel_err = rel;
                report.worst = Some((name.clone(), i));
            }
        }
    }
    Ok(report)
}
