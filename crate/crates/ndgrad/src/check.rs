//! Central finite-difference verification of tape gradients.

use crate::error::{GradError, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Outcome of a gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Max over checked coordinates of `|analytic - numeric| / max(1, |numeric|)`.
    pub max_rel_error: f64,
    /// Parameter index and flat element index where the max was attained.
    pub worst: Option<(usize, usize)>,
    pub coordinates_checked: usize,
}

fn evaluate<F>(builder: &F, params: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let root = builder(&mut tape, &vars)?;
    let v = tape.value(root);
    if v.len() != 1 {
        return Err(GradError::NonScalarRoot(v.shape().to_vec()));
    }
    Ok(v.item())
}

/// Checks every coordinate of every parameter. Returns the maximum relative error.
pub fn grad_check<F>(builder: F, params: &[Tensor], h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let coords: Vec<Vec<usize>> = params.iter().map(|p| (0..p.len()).collect()).collect();
    grad_check_coords(builder, params, h, &coords).map(|r| r.max_rel_error)
}

/// Checks only the listed coordinates of each parameter (`coords[i]` indexes `params[i]`).
pub fn grad_check_coords<F>(
    builder: F,
    params: &[Tensor],
    h: f64,
    coords: &[Vec<usize>],
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(h > 0.0) {
        return Err(GradError::Config(format!("step must be positive, got {h}")));
    }
    if coords.len() != params.len() {
        return Err(GradError::Config(format!(
            "{} coordinate lists for {} parameters",
            coords.len(),
            params.len()
        )));
    }

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let root = builder(&mut tape, &vars)?;
    let first = tape.value(root).data()[0];
    tape.backward(root)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| tape.grad_or_zeros(v)).collect();
    drop(tape);

    let second = evaluate(&builder, params)?;
    if first.to_bits() != second.to_bits() {
        return Err(GradError::NonDeterministic { first, second });
    }

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        coordinates_checked: 0,
    };
    let mut work: Vec<Tensor> = params.to_vec();
    for (pi, list) in coords.iter().enumerate() {
        for &ei in list {
            let orig = work[pi].data()[ei];
            work[pi].data_mut()[ei] = orig + h;
            let fp = evaluate(&builder, &work)?;
            work[pi].data_mut()[ei] = orig - h;
            let fm = evaluate(&builder, &work)?;
            work[pi].data_mut()[ei] = orig;

            let numeric = (fp - fm) / (2.0 * h);
            let err = (analytic[pi].data()[ei] - numeric).abs() / numeric.abs().max(1.0);
            report.coordinates_checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((pi, ei));
            }
        }
    }
    Ok(report)
}
