use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Mean squared difference over all elements.
pub fn loss_mse(tape: &mut Tape, prediction: Var, target: Var) -> Result<Var> {
    let (a, b) = (tape.value(prediction).shape(), tape.value(target).shape());
    if a != b {
        return Err(Error::shape("loss_mse", a, b));
    }
    let d = tape.sub(prediction, target)?;
    let sq = tape.square(d)?;
    tape.mean(sq)
}

/// Value-only [`loss_mse`].
pub fn mse(prediction: &Tensor, target: &Tensor) -> Result<f64> {
    if prediction.shape() != target.shape() {
        return Err(Error::shape("mse", prediction.shape(), target.shape()));
    }
    if prediction.is_empty() {
        return Err(Error::InvalidArgument("mse of empty tensors".into()));
    }
    let mut acc = 0.0;
    for (a, b) in prediction.data().iter().zip(target.data()) {
        acc += (a - b) * (a - b);
    }
    Ok(acc / prediction.len() as f64)
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    Ok(())
}

/// Handles of a regularized multi-step objective.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub fit: Var,
    /// `None` when `alpha == 1`; the term then does not enter the graph.
    pub consistency: Option<Var>,
}

/// `alpha * MSE(fit_pred, fit_target) + (1 - alpha) * MSE(cons_pred, cons_target)`.
pub fn multistep_terms(tape: &mut Tape, fit_pred: Var, fit_target: Var, cons_pred: Var, cons_target: Var, alpha: f64) -> Result<LossTerms> {
    check_alpha(alpha)?;
    let fit = loss_mse(tape, fit_pred, fit_target)?;
    let weighted_fit = tape.scale(fit, alpha)?;
    if alpha == 1.0 {
        let (a, b) = (tape.value(cons_pred).shape(), tape.value(cons_target).shape());
        if a != b {
            return Err(Error::shape("loss_multistep", a, b));
        }
        return Ok(LossTerms {
            total: weighted_fit,
            fit,
            consistency: None,
        });
    }
    let cons = loss_mse(tape, cons_pred, cons_target)?;
    let weighted_cons = tape.scale(cons, 1.0 - alpha)?;
    Ok(LossTerms {
        total: tape.add(weighted_fit, weighted_cons)?,
        fit,
        consistency: Some(cons),
    })
}

/// Regularized multi-step loss where consistency is measured on the
/// simulated outputs against the hidden outputs.
pub fn loss_multistep(tape: &mut Tape, y_sim: Var, y: Var, y_hidden: Var, alpha: f64) -> Result<Var> {
    Ok(multistep_terms(tape, y_sim, y, y_sim, y_hidden, alpha)?.total)
}
