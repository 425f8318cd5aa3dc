//! Central finite-difference gradient checking.
//!
//! The numerical side only ever evaluates forward values on fresh tapes,
//! so it is independent of every backward rule it checks.

use alloc::vec::Vec;

use super::{Tape, Var};
use crate::tensor::{Tensor, TensorError};

/// Denominator floor of [`relative_error`]; below it the comparison is
/// effectively absolute.
pub const REL_ERR_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// `(input, flat index)` of the worst entry.
    pub worst: (usize, usize),
    pub analytic: Vec<Tensor>,
    pub numeric: Vec<Tensor>,
    /// [`Tape::kink_distance`] at the unperturbed inputs. Central
    /// differences are unreliable when it is comparable to the step.
    pub kink_distance: f64,
}

/// `|a - n| / max(|a|, |n|, REL_ERR_FLOOR)`
pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_ERR_FLOOR)
}

pub fn max_relative_error(a: &Tensor, n: &Tensor) -> f64 {
    a.data()
        .iter()
        .zip(n.data())
        .map(|(&x, &y)| relative_error(x, y))
        .fold(0.0, f64::max)
}

fn eval<F, E>(build: &F, inputs: &[Tensor]) -> Result<f64, E>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, E>,
    E: From<TensorError>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = build(&mut tape, &vars)?;
    Ok(tape.value(out).item()?)
}

/// Central differences `(f(x + h) - f(x - h)) / 2h` for every entry of
/// every input.
pub fn numerical_gradients<F, E>(build: &F, inputs: &[Tensor], h: f64) -> Result<Vec<Tensor>, E>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, E>,
    E: From<TensorError>,
{
    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let mut g = Tensor::zeros(inputs[i].rows(), inputs[i].cols());
        for k in 0..inputs[i].len() {
            let x0 = inputs[i].data()[k];
            work[i].data_mut()[k] = x0 + h;
            let up = eval(build, &work)?;
            work[i].data_mut()[k] = x0 - h;
            let down = eval(build, &work)?;
            work[i].data_mut()[k] = x0;
            g.data_mut()[k] = (up - down) / (2.0 * h);
        }
        out.push(g);
    }
    Ok(out)
}

/// Compares reverse-mode gradients of `build` against central finite
/// differences with step `h`.
pub fn check_gradients<F, E>(build: F, inputs: &[Tensor], h: f64) -> Result<GradCheckReport, E>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, E>,
    E: From<TensorError>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = build(&mut tape, &vars)?;
    let kink_distance = tape.kink_distance();
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| {
            grads
                .get(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(t.rows(), t.cols()))
        })
        .collect();
    let numeric = numerical_gradients(&build, inputs, h)?;

    let mut max_rel_err = 0.0;
    let mut worst = (0, 0);
    for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        for (k, (&x, &y)) in a.data().iter().zip(n.data()).enumerate() {
            let e = relative_error(x, y);
            if e > max_rel_err {
                max_rel_err = e;
                worst = (i, k);
            }
        }
    }
    Ok(GradCheckReport {
        max_rel_err,
        worst,
        analytic,
        numeric,
        kink_distance,
    })
}
