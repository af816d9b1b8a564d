//! Rollout engines: open-loop simulation, batched m-step simulation and
//! one-step-ahead prediction.

use crate::autodiff::{Tape, Tensor, Var};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::structures::{io_init_regressor, Affine, BoundModel, Model, SsVariant};

/// Any simulated output whose physical magnitude exceeds this aborts the rollout.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// Subsequence batch in normalized model coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchTensors {
    pub starts: Vec<usize>,
    pub m: usize,
    /// Measured outputs, `[q, m, n_y]`.
    pub y: Tensor,
    /// Inputs, `[q, m, n_u]`.
    pub u: Tensor,
    /// Hidden outputs (IO) or hidden states, `[q, m, n_hidden]`.
    pub hidden: Tensor,
    /// Initial rollout state per subsequence, `[q, state_width]`.
    pub x0: Tensor,
}

impl BatchTensors {
    pub fn q(&self) -> usize {
        self.starts.len()
    }
}

/// Tape handles produced by [`rollout`].
#[derive(Clone, Copy, Debug)]
pub struct Rollout {
    /// `[q, m, n_y]`, normalized.
    pub outputs: Var,
    /// State at which each output was produced, `[q, m, state_width]`.
    pub states: Var,
}

/// Slice `[q, m, c] -> [q, c]` at time `t`.
pub(crate) fn time_slice(t: &Tensor, k: usize) -> Tensor {
    let (q, m, c) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    let mut out = Vec::with_capacity(q * c);
    for j in 0..q {
        let base = (j * m + k) * c;
        out.extend_from_slice(&t.data()[base..base + c]);
    }
    Tensor::new(vec![q, c], out).expect("consistent slice")
}

/// Fails with [`Error::Diverged`] if any normalized output maps to a
/// non-finite or too large physical value.
pub(crate) fn check_divergence(y: &Tensor, output: &Affine, step: usize) -> Result<()> {
    let c = output.channels();
    for (i, v) in y.data().iter().enumerate() {
        let ch = i % c;
        let phys = v * output.scale[ch] + output.offset[ch];
        if !phys.is_finite() || phys.abs() > DIVERGENCE_LIMIT {
            return Err(Error::Diverged {
                step,
                magnitude: phys.abs(),
            });
        }
    }
    Ok(())
}

/// Advances `q` subsequences in lockstep for `m` steps starting from `x0`
/// (`[q, state_width]`) under normalized `inputs` (`[q, m, n_u]`).
pub fn rollout(tape: &mut Tape, model: &Model, bound: &BoundModel<'_>, x0: Var, inputs: &Tensor) -> Result<Rollout> {
    let shape = inputs.shape();
    let xs = tape.value(x0).shape().to_vec();
    if shape.len() != 3 || xs.len() != 2 || xs[0] != shape[0] || shape[2] != model.n_u() || xs[1] != model.state_width() {
        return Err(Error::shape("rollout", &xs, shape));
    }
    let m = shape[1];
    if m == 0 {
        return Err(Error::InvalidArgument("rollout length must be positive".into()));
    }
    let mut state = x0;
    let mut ys = Vec::with_capacity(m);
    let mut states = Vec::with_capacity(m);
    for t in 0..m {
        let u = tape.constant(time_slice(inputs, t));
        let (y, next) = bound.advance(tape, state, u)?;
        check_divergence(tape.value(y), &model.scaler().output, t)?;
        ys.push(y);
        states.push(state);
        state = next;
    }
    Ok(Rollout {
        outputs: tape.stack(&ys, 1)?,
        states: tape.stack(&states, 1)?,
    })
}

/// Simulates from a physical initial condition (state `[n_x]` or regressor
/// `[width]`) over physical inputs `[T, n_u]`; returns physical outputs `[T, n_y]`.
pub fn simulate_open_loop(model: &Model, x0: &Tensor, inputs: &Tensor) -> Result<Tensor> {
    let width = model.state_width();
    if x0.len() != width {
        return Err(Error::shape("simulate_open_loop initial condition", x0.shape(), &[width]));
    }
    if inputs.rank() != 2 || inputs.last_dim() != model.n_u() {
        return Err(Error::shape("simulate_open_loop inputs", inputs.shape(), &[model.n_u()]));
    }
    let steps = inputs.leading();
    let scaler = model.scaler();
    let x0 = scaler.state.normalize(&x0.clone().reshape(&[1, width])?)?;
    let u = scaler.input.normalize(inputs)?.reshape(&[1, steps, model.n_u()])?;
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, false);
    let x0 = tape.constant(x0);
    let r = rollout(&mut tape, model, &bound, x0, &u)?;
    let y = tape.value(r.outputs).clone().reshape(&[steps, model.n_y()])?;
    scaler.output.denormalize(&y)
}

/// Open-loop simulation of a whole dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct Simulation {
    /// Index of the first simulated sample.
    pub offset: usize,
    /// Physical outputs for samples `offset..N`.
    pub outputs: Tensor,
}

/// Physical initial condition used for whole-dataset simulation: measured
/// outputs for the fully-observed state, positions plus difference
/// velocities for mechanical models, zeros for latent states and measured
/// history for IO models.
pub fn initial_condition(model: &Model, data: &Dataset) -> Result<(Tensor, usize)> {
    if data.len() < 2 {
        return Err(Error::InvalidArgument("dataset too short to simulate".into()));
    }
    match model {
        Model::StateSpace(m) => {
            let x0 = match m.variant() {
                SsVariant::FullyObserved => Tensor::vector(data.outputs.row(0).to_vec()),
                SsVariant::Mechanical => {
                    let (p0, p1) = (data.outputs.row(0), data.outputs.row(1));
                    let mut x = Vec::with_capacity(m.n_x());
                    for (a, b) in p0.iter().zip(p1) {
                        x.push(*a);
                        x.push((b - a) / data.ts);
                    }
                    Tensor::vector(x)
                }
                _ => Tensor::zeros(&[m.n_x()]),
            };
            Ok((x0, 0))
        }
        Model::Io(m) => {
            let k = m.lags().max();
            let reg = io_init_regressor(&data.outputs, &data.inputs, k, m.lags())?;
            Ok((Tensor::vector(reg.values), k))
        }
    }
}

pub fn simulate_dataset(model: &Model, data: &Dataset) -> Result<Simulation> {
    let (x0, offset) = initial_condition(model, data)?;
    let inputs = data.inputs.rows(offset, data.len());
    Ok(Simulation {
        offset,
        outputs: simulate_open_loop(model, &x0, &inputs)?,
    })
}

/// Runs a batch without recording gradients; returns physical outputs `[q, m, n_y]`.
pub fn simulate_batch(model: &Model, batch: &BatchTensors) -> Result<Tensor> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, false);
    let x0 = tape.constant(batch.x0.clone());
    let r = rollout(&mut tape, model, &bound, x0, &batch.u)?;
    model.scaler().output.denormalize(tape.value(r.outputs))
}

/// One-step-ahead predictor inputs and targets in normalized coordinates:
/// `(regressors, inputs, targets, offset)` such that the prediction of
/// `targets[i]` (sample `offset + i`) is formed from `regressors[i]` and `inputs[i]`.
pub(crate) fn one_step_problem(model: &Model, data: &Dataset) -> Result<(Tensor, Tensor, Tensor, usize)> {
    let scaler = model.scaler();
    let n = data.len();
    match model {
        Model::StateSpace(m) if m.variant() == SsVariant::FullyObserved => {
            if n < 2 {
                return Err(Error::InvalidArgument("one-step prediction needs two samples".into()));
            }
            let x = scaler.state.normalize(&data.outputs.rows(0, n - 1))?;
            let u = scaler.input.normalize(&data.inputs.rows(0, n - 1))?;
            let y = scaler.output.normalize(&data.outputs.rows(1, n))?;
            Ok((x, u, y, 1))
        }
        Model::StateSpace(m) => Err(Error::UnsupportedStructure(format!(
            "one-step prediction needs a measured state; {} state-space models are not fully observed",
            m.variant().name()
        ))),
        Model::Io(m) => {
            let k0 = m.lags().max();
            if n <= k0 {
                return Err(Error::InsufficientHistory { index: n, needed: k0 + 1 });
            }
            let width = m.regressor_width();
            let mut values = Vec::with_capacity((n - k0) * width);
            for k in k0..n {
                values.extend(io_init_regressor(&data.outputs, &data.inputs, k, m.lags())?.values);
            }
            let regs = scaler.state.normalize(&Tensor::new(vec![n - k0, width], values)?)?;
            let u = scaler.input.normalize(&data.inputs.rows(k0, n))?;
            let y = scaler.output.normalize(&data.outputs.rows(k0, n))?;
            Ok((regs, u, y, k0))
        }
    }
}

/// Normalized one-step predictions on a tape for the regressors and inputs
/// returned by [`one_step_problem`].
pub(crate) fn one_step_on_tape(tape: &mut Tape, bound: &BoundModel<'_>, regs: Var, u: Var) -> Result<Var> {
    match bound {
        BoundModel::StateSpace(b) => b.step(tape, regs, u),
        BoundModel::Io(b) => b.output(tape, regs),
    }
}

/// One-step-ahead predictions from measured data. Returns `(offset,
/// predictions)` with predictions in physical units for samples `offset..N`.
pub fn predict_one_step(model: &Model, data: &Dataset) -> Result<(usize, Tensor)> {
    let (regs, u, _, offset) = one_step_problem(model, data)?;
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, false);
    let regs = tape.constant(regs);
    let u = tape.constant(u);
    let y = one_step_on_tape(&mut tape, &bound, regs, u)?;
    check_divergence(tape.value(y), &model.scaler().output, 0)?;
    Ok((offset, model.scaler().output.denormalize(tape.value(y))?))
}
