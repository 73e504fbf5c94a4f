use super::{Matrix, Tape, Var};
use crate::error::{Error, Result};

/// Worst relative error between analytic and central-difference gradients
/// of a scalar function of several matrix inputs.
///
/// The relative error of one coordinate is
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check_many<F>(f: F, inputs: &[Matrix], eps: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    let analytic: Vec<Matrix> = {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = inputs.iter().map(|m| tape.leaf(m.clone())).collect();
        let loss = f(&tape, &vars)?;
        let grads = tape.backward(loss)?;
        vars.iter().map(|&v| grads.wrt(v)).collect()
    };

    let eval = |inputs: &[Matrix]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = inputs.iter().map(|m| tape.leaf(m.clone())).collect();
        let out = f(&tape, &vars)?;
        let v = out.value().get(0, 0);
        if !v.is_finite() {
            return Err(Error::NonFinite("function value during gradient check".into()));
        }
        Ok(v)
    };

    let mut work = inputs.to_vec();
    let mut worst: f64 = 0.0;
    for (k, grad) in analytic.iter().enumerate() {
        for idx in 0..work[k].len() {
            let orig = work[k].as_slice()[idx];
            work[k].as_mut_slice()[idx] = orig + eps;
            let plus = eval(&work)?;
            work[k].as_mut_slice()[idx] = orig - eps;
            let minus = eval(&work)?;
            work[k].as_mut_slice()[idx] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = grad.as_slice()[idx];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}

/// Single-input form of [`grad_check_many`].
pub fn grad_check<F>(f: F, x: &Matrix, eps: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    grad_check_many(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), eps)
}
