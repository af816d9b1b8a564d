use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Compares reverse-mode gradients of a scalar function against central
/// finite differences.
///
/// `function` receives a tape and one variable per entry of `point` and must
/// return a scalar. Returns the largest `|analytic - numeric| / max(1, |numeric|)`
/// over every coordinate of every input.
pub fn check_gradients<F>(function: F, point: &[Tensor], step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(step > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step must be positive, got {step}"
        )));
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = point.iter().map(|t| tape.leaf(t.clone())).collect();
    let root = function(&mut tape, &vars)?;
    tape.backward(root)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| tape.grad(v)).collect();

    let evaluate = |inputs: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let root = function(&mut tape, &vars)?;
        Ok(tape.value(root).item())
    };

    let mut worst = 0.0_f64;
    let mut probe: Vec<Tensor> = point.to_vec();
    for (vi, grad) in analytic.iter().enumerate() {
        for ci in 0..point[vi].len() {
            let original = point[vi].data()[ci];
            probe[vi].data_mut()[ci] = original + step;
            let plus = evaluate(&probe)?;
            probe[vi].data_mut()[ci] = original - step;
            let minus = evaluate(&probe)?;
            probe[vi].data_mut()[ci] = original;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFiniteEvaluation {
                    variable: vi,
                    coordinate: ci,
                });
            }
            let numeric = (plus - minus) / (2.0 * step);
            let err = (grad.data()[ci] - numeric).abs() / numeric.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
