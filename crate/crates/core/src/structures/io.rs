use serde::{Deserialize, Serialize};

use super::scaler::{Affine, Scaler};
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::nnet::{Activation, BoundMlp, Mlp, MlpSpec};

/// Lag structure of an input/output model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lags {
    /// Output lag `n_a`.
    pub outputs: usize,
    /// Input lag `n_b`.
    pub inputs: usize,
}

impl Lags {
    pub fn new(n_a: usize, n_b: usize) -> Self {
        Lags { outputs: n_a, inputs: n_b }
    }

    pub fn max(self) -> usize {
        self.outputs.max(self.inputs)
    }

    pub fn width(self, n_y: usize, n_u: usize) -> usize {
        self.outputs * n_y + self.inputs * n_u
    }
}

/// Regressor `[y_{k-1} .. y_{k-n_a}, u_{k-1} .. u_{k-n_b}]`, newest first in
/// each block.
#[derive(Clone, Debug, PartialEq)]
pub struct IoRegressor {
    pub values: Vec<f64>,
    pub lags: Lags,
    pub n_y: usize,
    pub n_u: usize,
}

/// Builds the regressor at time `k` from an output source (measured or
/// hidden) and the input sequence, both `[N, channels]`.
pub fn io_init_regressor(y_source: &Tensor, inputs: &Tensor, k: usize, lags: Lags) -> Result<IoRegressor> {
    if lags.outputs == 0 || lags.inputs == 0 {
        return Err(Error::InvalidArgument("lags must be positive".into()));
    }
    if k < lags.max() {
        return Err(Error::InsufficientHistory {
            index: k,
            needed: lags.max(),
        });
    }
    if k > y_source.leading() || k > inputs.leading() {
        return Err(Error::InvalidArgument(format!(
            "index {k} beyond sequences of length {} and {}",
            y_source.leading(),
            inputs.leading()
        )));
    }
    let mut values = Vec::with_capacity(lags.width(y_source.last_dim(), inputs.last_dim()));
    for i in 1..=lags.outputs {
        values.extend_from_slice(y_source.row(k - i));
    }
    for i in 1..=lags.inputs {
        values.extend_from_slice(inputs.row(k - i));
    }
    Ok(IoRegressor {
        values,
        lags,
        n_y: y_source.last_dim(),
        n_u: inputs.last_dim(),
    })
}

impl IoRegressor {
    /// Shift-register update: prepend the newest samples, drop the oldest.
    pub fn shift(&self, y_new: &[f64], u_new: &[f64]) -> Result<IoRegressor> {
        if y_new.len() != self.n_y || u_new.len() != self.n_u {
            return Err(Error::shape("io_shift", &[y_new.len(), u_new.len()], &[self.n_y, self.n_u]));
        }
        let y_block = self.lags.outputs * self.n_y;
        let mut values = Vec::with_capacity(self.values.len());
        values.extend_from_slice(y_new);
        values.extend_from_slice(&self.values[..y_block - self.n_y]);
        values.extend_from_slice(u_new);
        values.extend_from_slice(&self.values[y_block..self.values.len() - self.n_u]);
        Ok(IoRegressor { values, ..*self })
    }
}

/// Tape version of [`IoRegressor::shift`] on a batch `[q, width]`.
pub(crate) fn shift_on_tape(tape: &mut Tape, reg: Var, y_new: Var, u_new: Var, lags: Lags, n_y: usize, n_u: usize) -> Result<Var> {
    let y_block = lags.outputs * n_y;
    let mut parts = vec![y_new];
    if lags.outputs > 1 {
        parts.push(tape.slice(reg, 0, y_block - n_y)?);
    }
    parts.push(u_new);
    if lags.inputs > 1 {
        parts.push(tape.slice(reg, y_block, y_block + (lags.inputs - 1) * n_u)?);
    }
    tape.concat(&parts)
}

#[derive(Clone, Debug, PartialEq)]
pub struct IoModel {
    pub(crate) lags: Lags,
    pub(crate) n_y: usize,
    pub(crate) n_u: usize,
    pub(crate) net: Mlp,
    pub(crate) scaler: Scaler,
}

impl IoModel {
    pub fn init(lags: Lags, n_y: usize, n_u: usize, hidden: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        if lags.outputs == 0 || lags.inputs == 0 || n_y == 0 || n_u == 0 {
            return Err(Error::InvalidArgument("lags and dimensions must be positive".into()));
        }
        let mut widths = vec![lags.width(n_y, n_u)];
        widths.extend(hidden);
        widths.push(n_y);
        let net = Mlp::init(MlpSpec { widths, activation }, seed)?;
        Ok(IoModel {
            lags,
            n_y,
            n_u,
            net,
            scaler: Scaler::identity(lags.width(n_y, n_u), n_u, n_y),
        })
    }

    pub fn from_parts(lags: Lags, n_y: usize, n_u: usize, net: Mlp, scaler: Scaler) -> Result<Self> {
        let w = lags.width(n_y, n_u);
        if net.spec().input_width() != w || net.spec().output_width() != n_y {
            return Err(Error::InvalidArgument(format!(
                "network widths {:?} do not match regressor width {w} and n_y {n_y}",
                net.spec().widths
            )));
        }
        if scaler.state.channels() != w || scaler.input.channels() != n_u || scaler.output.channels() != n_y {
            return Err(Error::InvalidArgument("scaler channel counts do not match the model".into()));
        }
        Ok(IoModel {
            lags,
            n_y,
            n_u,
            net,
            scaler,
        })
    }

    pub fn zeroed(mut self) -> Self {
        for p in self.net.params_mut() {
            p.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        self
    }

    pub fn lags(&self) -> Lags {
        self.lags
    }

    pub fn n_y(&self) -> usize {
        self.n_y
    }

    pub fn n_u(&self) -> usize {
        self.n_u
    }

    pub fn regressor_width(&self) -> usize {
        self.lags.width(self.n_y, self.n_u)
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn scaler(&self) -> &Scaler {
        &self.scaler
    }

    /// Sets the input/output normalization; the regressor scaling is derived
    /// from it block by block.
    pub fn set_io_scaling(&mut self, input: Affine, output: Affine) -> Result<()> {
        if input.channels() != self.n_u || output.channels() != self.n_y {
            return Err(Error::InvalidArgument("scaler channel counts do not match the model".into()));
        }
        let mut state = Affine {
            offset: Vec::new(),
            scale: Vec::new(),
        };
        for _ in 0..self.lags.outputs {
            state.offset.extend(&output.offset);
            state.scale.extend(&output.scale);
        }
        for _ in 0..self.lags.inputs {
            state.offset.extend(&input.offset);
            state.scale.extend(&input.scale);
        }
        self.scaler = Scaler { state, input, output };
        Ok(())
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.net.params()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.net.params_mut()
    }

    pub fn param_names(&self) -> Vec<String> {
        (0..self.net.layers().len())
            .flat_map(|l| [format!("nn_io.{l}.weight"), format!("nn_io.{l}.bias")])
            .collect()
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundIo<'_> {
        BoundIo {
            model: self,
            net: self.net.bind(tape, trainable),
        }
    }

    /// Binds onto existing variables laid out as [`IoModel::params`].
    pub fn bind_with(&self, tape: &Tape, params: &[Var]) -> Result<BoundIo<'_>> {
        Ok(BoundIo {
            model: self,
            net: self.net.bind_with(tape, params)?,
        })
    }

    /// Output for a batch of physical regressors `[q, width]`.
    pub fn output(&self, regressors: &Tensor) -> Result<Tensor> {
        if regressors.last_dim() != self.regressor_width() {
            return Err(Error::shape("io_output", regressors.shape(), &[self.regressor_width()]));
        }
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let x = tape.constant(self.scaler.state.normalize(regressors)?);
        let y = bound.output(&mut tape, x)?;
        self.scaler.output.denormalize(tape.value(y))
    }
}

/// An [`IoModel`] whose network lives on a tape; normalized coordinates.
pub struct BoundIo<'m> {
    model: &'m IoModel,
    net: BoundMlp,
}

impl BoundIo<'_> {
    pub fn param_vars(&self) -> Vec<Var> {
        self.net.param_vars()
    }

    pub fn output(&self, tape: &mut Tape, regressor: Var) -> Result<Var> {
        self.net.forward(tape, regressor)
    }

    pub fn shift(&self, tape: &mut Tape, regressor: Var, y_new: Var, u_new: Var) -> Result<Var> {
        let m = self.model;
        shift_on_tape(tape, regressor, y_new, u_new, m.lags, m.n_y, m.n_u)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn column(v: &[f64]) -> Tensor {
        Tensor::new(vec![v.len(), 1], v.to_vec()).unwrap()
    }

    #[test]
    fn single_lag_regressor() {
        let y = column(&[10.0, 11.0, 12.0]);
        let u = column(&[20.0, 21.0, 22.0]);
        let r = io_init_regressor(&y, &u, 1, Lags::new(1, 1)).unwrap();
        assert_eq!(r.values, vec![10.0, 20.0]);
    }

    #[test]
    fn two_lag_ordering() {
        let y = column(&(0..8).map(|k| k as f64).collect::<Vec<_>>());
        let u = column(&(0..8).map(|k| 100.0 + k as f64).collect::<Vec<_>>());
        let r = io_init_regressor(&y, &u, 5, Lags::new(2, 2)).unwrap();
        assert_eq!(r.values, vec![4.0, 3.0, 104.0, 103.0]);
    }

    #[test]
    fn insufficient_history() {
        let y = column(&[0.0; 4]);
        let err = io_init_regressor(&y, &y, 1, Lags::new(2, 1)).unwrap_err();
        assert!(matches!(err, Error::InsufficientHistory { index: 1, needed: 2 }));
    }

    #[test]
    fn shift_register() {
        let r = IoRegressor {
            values: vec![4.0, 3.0, 104.0, 103.0],
            lags: Lags::new(2, 2),
            n_y: 1,
            n_u: 1,
        };
        assert_eq!(r.shift(&[5.0], &[105.0]).unwrap().values, vec![5.0, 4.0, 105.0, 104.0]);
        let single = IoRegressor {
            values: vec![1.0, 2.0],
            lags: Lags::new(1, 1),
            n_y: 1,
            n_u: 1,
        };
        assert_eq!(single.shift(&[3.0], &[4.0]).unwrap().values, vec![3.0, 4.0]);
        assert!(single.shift(&[3.0, 1.0], &[4.0]).is_err());
    }

    #[test]
    fn zero_network_outputs_zero() {
        let m = IoModel::init(Lags::new(2, 2), 1, 1, &[8], Activation::Relu, 0).unwrap().zeroed();
        let y = m
            .output(&Tensor::new(vec![2, 4], vec![1.0, 2.0, 3.0, 4.0, -1.0, 0.5, 9.0, 2.0]).unwrap())
            .unwrap();
        assert_eq!(y.data(), &[0.0, 0.0]);
    }

    #[test]
    fn hand_computed_output_with_scaling() {
        use crate::nnet::Layer;
        // single affine layer: y_n = 0.5 r1 - r2 + 0.25 (normalized)
        let net = Mlp::from_layers(
            MlpSpec::new(vec![2, 1]),
            vec![Layer {
                weight: Tensor::new(vec![2, 1], vec![0.5, -1.0]).unwrap(),
                bias: Tensor::vector(vec![0.25]),
            }],
        )
        .unwrap();
        let mut m = IoModel::from_parts(Lags::new(1, 1), 1, 1, net, Scaler::identity(2, 1, 1)).unwrap();
        m.set_io_scaling(
            Affine {
                offset: vec![1.0],
                scale: vec![2.0],
            },
            Affine {
                offset: vec![10.0],
                scale: vec![4.0],
            },
        )
        .unwrap();
        // r = [y=14, u=5] -> normalized [1, 2] -> 0.5 - 2 + 0.25 = -1.25 -> 10 + 4 * -1.25 = 5
        let y = m.output(&Tensor::new(vec![1, 2], vec![14.0, 5.0]).unwrap()).unwrap();
        assert_eq!(y.data(), &[5.0]);
    }

    #[test]
    fn batch_output_equals_rowwise() {
        let m = IoModel::init(Lags::new(2, 1), 1, 1, &[16], Activation::Relu, 4).unwrap();
        let batch = Tensor::new(vec![3, 3], vec![0.1, 0.2, 0.3, -1.0, 0.5, 2.0, 0.0, 0.0, 1.0]).unwrap();
        let all = m.output(&batch).unwrap();
        for i in 0..3 {
            let one = m.output(&Tensor::new(vec![1, 3], batch.row(i).to_vec()).unwrap()).unwrap();
            assert_eq!(one.data()[0], all.data()[i]);
        }
    }

    proptest! {
        #[test]
        fn repeated_shift_matches_direct_slicing(
            ys in prop::collection::vec(-10.0f64..10.0, 30),
            us in prop::collection::vec(-10.0f64..10.0, 30),
            n_a in 1usize..4,
            n_b in 1usize..4,
        ) {
            let lags = Lags::new(n_a, n_b);
            let y = column(&ys);
            let u = column(&us);
            let t0 = lags.max();
            let mut reg = io_init_regressor(&y, &u, t0, lags).unwrap();
            for k in t0..t0 + 20 {
                // oracle: slice the sequences directly
                let mut expect: Vec<f64> = (1..=n_a).map(|i| ys[k - i]).collect();
                expect.extend((1..=n_b).map(|i| us[k - i]));
                prop_assert_eq!(&reg.values, &expect);
                reg = reg.shift(&[ys[k]], &[us[k]]).unwrap();
            }
        }
    }
}
