//! Dynamical model structures: state-space variants and the input/output
//! (NARX-like) structure, behind one rollout contract.

mod io;
mod scaler;
mod state_space;

pub use io::{io_init_regressor, BoundIo, IoModel, IoRegressor, Lags};
pub use scaler::{Affine, Scaler};
pub use state_space::{BoundStateSpace, LinearApprox, SsConfig, SsVariant, StateSpaceModel};

use crate::autodiff::{Tape, Tensor, Var};
use crate::dataset::Dataset;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    StateSpace(StateSpaceModel),
    Io(IoModel),
}

impl From<StateSpaceModel> for Model {
    fn from(m: StateSpaceModel) -> Self {
        Model::StateSpace(m)
    }
}

impl From<IoModel> for Model {
    fn from(m: IoModel) -> Self {
        Model::Io(m)
    }
}

impl Model {
    pub fn n_u(&self) -> usize {
        match self {
            Model::StateSpace(m) => m.n_u(),
            Model::Io(m) => m.n_u(),
        }
    }

    pub fn n_y(&self) -> usize {
        match self {
            Model::StateSpace(m) => m.n_y(),
            Model::Io(m) => m.n_y(),
        }
    }

    /// Width of the rollout state: `n_x`, or the regressor width.
    pub fn state_width(&self) -> usize {
        match self {
            Model::StateSpace(m) => m.n_x(),
            Model::Io(m) => m.regressor_width(),
        }
    }

    /// Channels of the hidden variable sequence: `n_x` or `n_y`.
    pub fn hidden_width(&self) -> usize {
        match self {
            Model::StateSpace(m) => m.n_x(),
            Model::Io(m) => m.n_y(),
        }
    }

    /// Earliest admissible subsequence start.
    pub fn min_start(&self) -> usize {
        match self {
            Model::StateSpace(_) => 1,
            Model::Io(m) => m.lags().max(),
        }
    }

    pub fn scaler(&self) -> &Scaler {
        match self {
            Model::StateSpace(m) => m.scaler(),
            Model::Io(m) => m.scaler(),
        }
    }

    /// Human-readable structure name.
    pub fn kind(&self) -> String {
        match self {
            Model::StateSpace(m) => format!("state-space/{}", m.variant().name()),
            Model::Io(m) => format!("io(n_a={}, n_b={})", m.lags().outputs, m.lags().inputs),
        }
    }

    /// Whether a one-step-ahead predictor can be formed from measurements.
    pub fn supports_one_step(&self) -> bool {
        match self {
            Model::StateSpace(m) => m.variant() == SsVariant::FullyObserved,
            Model::Io(_) => true,
        }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        match self {
            Model::StateSpace(m) => m.params(),
            Model::Io(m) => m.params(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Model::StateSpace(m) => m.params_mut(),
            Model::Io(m) => m.params_mut(),
        }
    }

    pub fn param_names(&self) -> Vec<String> {
        match self {
            Model::StateSpace(m) => m.param_names(),
            Model::Io(m) => m.param_names(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Fits per-channel standardization to `data`, keeping coordinates
    /// consistent with each structure: the fully-observed state shares the
    /// output scaling, mechanical and latent states stay unscaled.
    pub fn fit_scaling(&mut self, data: &Dataset) -> Result<()> {
        if data.n_u() != self.n_u() || data.n_y() != self.n_y() {
            return Err(Error::InvalidArgument(format!(
                "dataset has {} inputs / {} outputs, model expects {} / {}",
                data.n_u(),
                data.n_y(),
                self.n_u(),
                self.n_y()
            )));
        }
        let input = Affine::fit(&data.inputs);
        let output = Affine::fit(&data.outputs);
        match self {
            Model::Io(m) => m.set_io_scaling(input, output),
            Model::StateSpace(m) => {
                let scaler = match m.variant() {
                    SsVariant::FullyObserved => Scaler {
                        state: output.clone(),
                        input,
                        output,
                    },
                    SsVariant::Mechanical => Scaler {
                        state: Affine::identity(m.n_x()),
                        input,
                        output: Affine::identity(m.n_y()),
                    },
                    _ => Scaler {
                        state: Affine::identity(m.n_x()),
                        input,
                        output,
                    },
                };
                m.set_scaler(scaler)
            }
        }
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundModel<'_> {
        match self {
            Model::StateSpace(m) => BoundModel::StateSpace(m.bind(tape, trainable)),
            Model::Io(m) => BoundModel::Io(m.bind(tape, trainable)),
        }
    }

    /// Binds onto existing tape variables, one per entry of [`Model::params`];
    /// lets callers differentiate with respect to parameters they own.
    pub fn bind_with(&self, tape: &mut Tape, params: &[Var]) -> Result<BoundModel<'_>> {
        Ok(match self {
            Model::StateSpace(m) => BoundModel::StateSpace(m.bind_with(tape, params)?),
            Model::Io(m) => BoundModel::Io(m.bind_with(tape, params)?),
        })
    }
}

/// Tape-bound model exposing one rollout step in normalized coordinates.
pub enum BoundModel<'m> {
    StateSpace(BoundStateSpace<'m>),
    Io(BoundIo<'m>),
}

impl BoundModel<'_> {
    pub fn param_vars(&self) -> Vec<Var> {
        match self {
            BoundModel::StateSpace(b) => b.param_vars(),
            BoundModel::Io(b) => b.param_vars(),
        }
    }

    /// Given the state at time `k` and `u_k`, returns `(y_k, state_{k+1})`.
    pub fn advance(&self, tape: &mut Tape, state: Var, u: Var) -> Result<(Var, Var)> {
        match self {
            BoundModel::StateSpace(b) => {
                let y = b.output(tape, state, u)?;
                let next = b.step(tape, state, u)?;
                Ok((y, next))
            }
            BoundModel::Io(b) => {
                let y = b.output(tape, state)?;
                let next = b.shift(tape, state, y, u)?;
                Ok((y, next))
            }
        }
    }
}
