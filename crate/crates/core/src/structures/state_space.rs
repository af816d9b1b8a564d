use serde::{Deserialize, Serialize};

use super::scaler::Scaler;
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::nnet::{Activation, BoundMlp, Mlp, MlpSpec};

/// The state-space model family.
///
/// | variant          | state update                         | output                 |
/// |------------------|--------------------------------------|------------------------|
/// | `General`        | `NN_x(x, u)`                         | `NN_y(x)`              |
/// | `Residual`       | `A_L x + B_L u + NN_x(x, u)`         | `C_L x + NN_y(x, u)`   |
/// | `Integral`       | `x + NN_x(x, u)`                     | `NN_y(x, u)`           |
/// | `FullyObserved`  | `NN_x(x, u)`                         | `x`                    |
/// | `Mechanical`     | Euler step of `p' = v`, `v' = NN(x, u)` | positions           |
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SsVariant {
    General,
    Residual,
    Integral,
    FullyObserved,
    Mechanical,
}

impl std::str::FromStr for SsVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "general" => SsVariant::General,
            "residual" => SsVariant::Residual,
            "integral" => SsVariant::Integral,
            "fully-observed" | "fully_observed" => SsVariant::FullyObserved,
            "mechanical" => SsVariant::Mechanical,
            other => return Err(Error::InvalidArgument(format!("unknown state-space variant `{other}`"))),
        })
    }
}

impl SsVariant {
    pub fn name(self) -> &'static str {
        match self {
            SsVariant::General => "general",
            SsVariant::Residual => "residual",
            SsVariant::Integral => "integral",
            SsVariant::FullyObserved => "fully-observed",
            SsVariant::Mechanical => "mechanical",
        }
    }
}

/// Linear approximation `(A_L, B_L, C_L)` used by the residual variant,
/// expressed in the model's normalized coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearApprox {
    /// `n_x x n_x`
    pub a: Tensor,
    /// `n_x x n_u`
    pub b: Tensor,
    /// `n_y x n_x`
    pub c: Tensor,
}

impl LinearApprox {
    fn check(&self, n_x: usize, n_u: usize, n_y: usize) -> Result<()> {
        if self.a.shape() != [n_x, n_x] {
            return Err(Error::shape("linear A_L", self.a.shape(), &[n_x, n_x]));
        }
        if self.b.shape() != [n_x, n_u] {
            return Err(Error::shape("linear B_L", self.b.shape(), &[n_x, n_u]));
        }
        if self.c.shape() != [n_y, n_x] {
            return Err(Error::shape("linear C_L", self.c.shape(), &[n_y, n_x]));
        }
        Ok(())
    }
}

fn transpose(t: &Tensor) -> Tensor {
    let (r, c) = (t.shape()[0], t.shape()[1]);
    let mut data = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            data[j * r + i] = t.data()[i * c + j];
        }
    }
    Tensor::new(vec![c, r], data).unwrap()
}

/// Shape of a state-space model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsConfig {
    pub variant: SsVariant,
    pub n_x: usize,
    pub n_u: usize,
    pub n_y: usize,
    /// Hidden layer widths shared by every network of the model.
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    /// Discretization step of the mechanical variant.
    pub ts: f64,
    #[serde(default)]
    pub linear: Option<LinearApprox>,
}

impl SsConfig {
    pub fn new(variant: SsVariant, n_x: usize, n_u: usize, n_y: usize, hidden: Vec<usize>) -> Self {
        SsConfig {
            variant,
            n_x,
            n_u,
            n_y,
            hidden,
            activation: Activation::Relu,
            ts: 1.0,
            linear: None,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.n_x == 0 || self.n_u == 0 || self.n_y == 0 {
            return bad(format!(
                "dimensions must be positive: n_x={}, n_u={}, n_y={}",
                self.n_x, self.n_u, self.n_y
            ));
        }
        match self.variant {
            SsVariant::FullyObserved if self.n_y != self.n_x => {
                return bad(format!("fully-observed model needs n_y = n_x, got {} and {}", self.n_y, self.n_x))
            }
            SsVariant::Mechanical if self.n_x % 2 != 0 || self.n_y != self.n_x / 2 => {
                return bad(format!(
                    "mechanical model needs an even n_x and n_y = n_x / 2, got n_x={} n_y={}",
                    self.n_x, self.n_y
                ))
            }
            SsVariant::Mechanical if !(self.ts > 0.0) => return bad(format!("sample time must be positive, got {}", self.ts)),
            SsVariant::Residual => match &self.linear {
                None => return bad("residual model needs a linear approximation".into()),
                Some(l) => l.check(self.n_x, self.n_u, self.n_y)?,
            },
            _ => {}
        }
        Ok(())
    }

    fn widths(&self, input: usize, output: usize) -> MlpSpec {
        let mut widths = vec![input];
        widths.extend(&self.hidden);
        widths.push(output);
        MlpSpec {
            widths,
            activation: self.activation,
        }
    }

    /// Network specs of the state map(s) and the optional output map.
    fn network_specs(&self) -> (Vec<MlpSpec>, Option<MlpSpec>) {
        let xu = self.n_x + self.n_u;
        match self.variant {
            SsVariant::General => (vec![self.widths(xu, self.n_x)], Some(self.widths(self.n_x, self.n_y))),
            SsVariant::Residual | SsVariant::Integral => (vec![self.widths(xu, self.n_x)], Some(self.widths(xu, self.n_y))),
            SsVariant::FullyObserved => (vec![self.widths(xu, self.n_x)], None),
            SsVariant::Mechanical => ((0..self.n_x / 2).map(|_| self.widths(xu, 1)).collect(), None),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StateSpaceModel {
    pub(crate) config: SsConfig,
    pub(crate) state_nets: Vec<Mlp>,
    pub(crate) output_net: Option<Mlp>,
    pub(crate) scaler: Scaler,
}

impl StateSpaceModel {
    pub fn init(config: SsConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (state_specs, output_spec) = config.network_specs();
        let state_nets = state_specs
            .into_iter()
            .enumerate()
            .map(|(i, spec)| Mlp::init(spec, seed.wrapping_add(i as u64)))
            .collect::<Result<Vec<_>>>()?;
        let output_net = output_spec.map(|spec| Mlp::init(spec, seed.wrapping_add(0x5eed))).transpose()?;
        let scaler = Scaler::identity(config.n_x, config.n_u, config.n_y);
        Ok(StateSpaceModel {
            config,
            state_nets,
            output_net,
            scaler,
        })
    }

    /// Same structure with every network parameter zeroed.
    pub fn zeroed(mut self) -> Self {
        for p in self.params_mut() {
            p.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        self
    }

    pub fn from_parts(config: SsConfig, state_nets: Vec<Mlp>, output_net: Option<Mlp>, scaler: Scaler) -> Result<Self> {
        config.validate()?;
        let (state_specs, output_spec) = config.network_specs();
        let specs_match = state_specs.len() == state_nets.len()
            && state_specs.iter().zip(&state_nets).all(|(s, n)| s == n.spec())
            && output_spec.as_ref() == output_net.as_ref().map(Mlp::spec);
        if !specs_match {
            return Err(Error::InvalidArgument("network shapes do not match the model structure".into()));
        }
        let identity = Scaler::identity(config.n_x, config.n_u, config.n_y);
        let mut model = StateSpaceModel {
            config,
            state_nets,
            output_net,
            scaler: identity,
        };
        model.set_scaler(scaler)?;
        Ok(model)
    }

    pub fn config(&self) -> &SsConfig {
        &self.config
    }

    pub fn variant(&self) -> SsVariant {
        self.config.variant
    }

    pub fn n_x(&self) -> usize {
        self.config.n_x
    }

    pub fn n_u(&self) -> usize {
        self.config.n_u
    }

    pub fn n_y(&self) -> usize {
        self.config.n_y
    }

    pub fn scaler(&self) -> &Scaler {
        &self.scaler
    }

    pub fn set_scaler(&mut self, scaler: Scaler) -> Result<()> {
        if scaler.state.channels() != self.n_x() || scaler.input.channels() != self.n_u() || scaler.output.channels() != self.n_y() {
            return Err(Error::InvalidArgument("scaler channel counts do not match the model".into()));
        }
        self.scaler = scaler;
        Ok(())
    }

    pub fn state_nets(&self) -> &[Mlp] {
        &self.state_nets
    }

    pub fn state_nets_mut(&mut self) -> &mut [Mlp] {
        &mut self.state_nets
    }

    pub fn output_net(&self) -> Option<&Mlp> {
        self.output_net.as_ref()
    }

    pub fn output_net_mut(&mut self) -> Option<&mut Mlp> {
        self.output_net.as_mut()
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut p: Vec<&Tensor> = self.state_nets.iter().flat_map(Mlp::params).collect();
        if let Some(net) = &self.output_net {
            p.extend(net.params());
        }
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p: Vec<&mut Tensor> = self.state_nets.iter_mut().flat_map(Mlp::params_mut).collect();
        if let Some(net) = &mut self.output_net {
            p.extend(net.params_mut());
        }
        p
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        let prefix = if self.state_nets.len() == 1 {
            vec!["nn_x".to_string()]
        } else {
            (1..=self.state_nets.len()).map(|i| format!("nn_{i}")).collect()
        };
        for (net, p) in self.state_nets.iter().zip(prefix) {
            for l in 0..net.layers().len() {
                names.push(format!("{p}.{l}.weight"));
                names.push(format!("{p}.{l}.bias"));
            }
        }
        if let Some(net) = &self.output_net {
            for l in 0..net.layers().len() {
                names.push(format!("nn_y.{l}.weight"));
                names.push(format!("nn_y.{l}.bias"));
            }
        }
        names
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundStateSpace<'_> {
        let state = self.state_nets.iter().map(|n| n.bind(tape, trainable)).collect();
        let output = self.output_net.as_ref().map(|n| n.bind(tape, trainable));
        self.bound(tape, state, output)
    }

    /// Binds onto existing variables laid out as [`StateSpaceModel::params`].
    pub fn bind_with(&self, tape: &mut Tape, params: &[Var]) -> Result<BoundStateSpace<'_>> {
        let mut rest = params;
        let mut take = |net: &Mlp, tape: &Tape| -> Result<BoundMlp> {
            let k = (2 * net.layers().len()).min(rest.len());
            let (head, tail) = rest.split_at(k);
            rest = tail;
            net.bind_with(tape, head)
        };
        let state = self.state_nets.iter().map(|n| take(n, tape)).collect::<Result<Vec<_>>>()?;
        let output = self.output_net.as_ref().map(|n| take(n, tape)).transpose()?;
        if !rest.is_empty() {
            return Err(Error::InvalidArgument(format!("{} surplus parameter variables", rest.len())));
        }
        Ok(self.bound(tape, state, output))
    }

    fn bound(&self, tape: &mut Tape, state: Vec<BoundMlp>, output: Option<BoundMlp>) -> BoundStateSpace<'_> {
        let linear = self.config.linear.as_ref().map(|l| {
            (
                tape.constant(transpose(&l.a)),
                tape.constant(transpose(&l.b)),
                tape.constant(transpose(&l.c)),
            )
        });
        BoundStateSpace {
            model: self,
            state,
            output,
            linear,
        }
    }

    /// One state update on physical values outside any training tape.
    pub fn step(&self, x: &Tensor, u: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let xv = tape.constant(self.scaler.state.normalize(x)?);
        let uv = tape.constant(self.scaler.input.normalize(u)?);
        let next = bound.step(&mut tape, xv, uv)?;
        self.scaler.state.denormalize(tape.value(next))
    }

    /// Output map on physical values outside any training tape.
    pub fn output(&self, x: &Tensor, u: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let xv = tape.constant(self.scaler.state.normalize(x)?);
        let uv = tape.constant(self.scaler.input.normalize(u)?);
        let y = bound.output(&mut tape, xv, uv)?;
        self.scaler.output.denormalize(tape.value(y))
    }
}

/// A [`StateSpaceModel`] whose parameters live on a tape. All tensors are in
/// normalized coordinates.
pub struct BoundStateSpace<'m> {
    model: &'m StateSpaceModel,
    state: Vec<BoundMlp>,
    output: Option<BoundMlp>,
    linear: Option<(Var, Var, Var)>,
}

impl BoundStateSpace<'_> {
    pub fn param_vars(&self) -> Vec<Var> {
        let mut v: Vec<Var> = self.state.iter().flat_map(BoundMlp::param_vars).collect();
        if let Some(net) = &self.output {
            v.extend(net.param_vars());
        }
        v
    }

    fn check(&self, tape: &Tape, x: Var, u: Var) -> Result<()> {
        let (xs, us) = (tape.value(x).shape(), tape.value(u).shape());
        let cfg = &self.model.config;
        let lead_ok = xs.len() == us.len() && xs.len() >= 1 && xs[..xs.len() - 1] == us[..us.len() - 1];
        if !lead_ok || xs[xs.len() - 1] != cfg.n_x || us[us.len() - 1] != cfg.n_u {
            return Err(Error::shape("state-space step", xs, us));
        }
        Ok(())
    }

    pub fn step(&self, tape: &mut Tape, x: Var, u: Var) -> Result<Var> {
        self.check(tape, x, u)?;
        let xu = tape.concat(&[x, u])?;
        match self.model.config.variant {
            SsVariant::General | SsVariant::FullyObserved => self.state[0].forward(tape, xu),
            SsVariant::Integral => {
                let dx = self.state[0].forward(tape, xu)?;
                tape.add(x, dx)
            }
            SsVariant::Residual => {
                let (at, bt, _) = self.linear.expect("validated residual model");
                let ax = tape.matmul(x, at)?;
                let bu = tape.matmul(u, bt)?;
                let lin = tape.add(ax, bu)?;
                let nn = self.state[0].forward(tape, xu)?;
                tape.add(lin, nn)
            }
            SsVariant::Mechanical => {
                let ts = self.model.config.ts;
                let mut parts = Vec::with_capacity(self.model.config.n_x);
                for (i, net) in self.state.iter().enumerate() {
                    let p = tape.slice(x, 2 * i, 2 * i + 1)?;
                    let v = tape.slice(x, 2 * i + 1, 2 * i + 2)?;
                    let dp = tape.scale(v, ts)?;
                    parts.push(tape.add(p, dp)?);
                    let acc = net.forward(tape, xu)?;
                    let dv = tape.scale(acc, ts)?;
                    parts.push(tape.add(v, dv)?);
                }
                tape.concat(&parts)
            }
        }
    }

    pub fn output(&self, tape: &mut Tape, x: Var, u: Var) -> Result<Var> {
        self.check(tape, x, u)?;
        match self.model.config.variant {
            SsVariant::FullyObserved => Ok(x),
            SsVariant::General => self.output.as_ref().unwrap().forward(tape, x),
            SsVariant::Integral => {
                let xu = tape.concat(&[x, u])?;
                self.output.as_ref().unwrap().forward(tape, xu)
            }
            SsVariant::Residual => {
                let (_, _, ct) = self.linear.expect("validated residual model");
                let cx = tape.matmul(x, ct)?;
                let xu = tape.concat(&[x, u])?;
                let nn = self.output.as_ref().unwrap().forward(tape, xu)?;
                tape.add(cx, nn)
            }
            SsVariant::Mechanical => {
                let parts = (0..self.model.config.n_x / 2)
                    .map(|i| tape.slice(x, 2 * i, 2 * i + 1))
                    .collect::<Result<Vec<_>>>()?;
                tape.concat(&parts)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(v: &[f64]) -> Tensor {
        Tensor::new(vec![1, v.len()], v.to_vec()).unwrap()
    }

    fn linear() -> LinearApprox {
        LinearApprox {
            a: Tensor::from_rows(&[vec![0.9, 0.1], vec![-0.2, 0.8]]).unwrap(),
            b: Tensor::from_rows(&[vec![0.5], vec![1.0]]).unwrap(),
            c: Tensor::from_rows(&[vec![1.0, -1.0]]).unwrap(),
        }
    }

    #[test]
    fn integral_with_zero_network_holds_state() {
        let cfg = SsConfig::new(SsVariant::Integral, 2, 1, 1, vec![8]);
        let m = StateSpaceModel::init(cfg, 0).unwrap().zeroed();
        let x = row(&[1.5, -2.0]);
        assert_eq!(m.step(&x, &row(&[7.0])).unwrap(), x);
    }

    #[test]
    fn residual_with_zero_network_is_linear() {
        let mut cfg = SsConfig::new(SsVariant::Residual, 2, 1, 1, vec![8]);
        cfg.linear = Some(linear());
        let m = StateSpaceModel::init(cfg, 0).unwrap().zeroed();
        let x = row(&[1.0, 2.0]);
        let u = row(&[3.0]);
        // A x + B u = [0.9+0.2+1.5, -0.2+1.6+3.0] = [2.6, 4.4]
        let next = m.step(&x, &u).unwrap();
        assert!((next.data()[0] - 2.6).abs() < 1e-15 && (next.data()[1] - 4.4).abs() < 1e-15);
        // C x = 1 - 2 = -1
        assert_eq!(m.output(&x, &u).unwrap().data(), &[-1.0]);
    }

    #[test]
    fn residual_requires_linear_part() {
        let cfg = SsConfig::new(SsVariant::Residual, 2, 1, 1, vec![8]);
        assert!(StateSpaceModel::init(cfg, 0).is_err());
    }

    #[test]
    fn mechanical_zero_acceleration() {
        let mut cfg = SsConfig::new(SsVariant::Mechanical, 4, 1, 2, vec![8]);
        cfg.ts = 0.1;
        let m = StateSpaceModel::init(cfg, 0).unwrap().zeroed();
        let x = row(&[1.0, 2.0, 3.0, 4.0]);
        let next = m.step(&x, &row(&[0.3])).unwrap();
        assert_eq!(next.data(), &[1.0 + 0.1 * 2.0, 2.0, 3.0 + 0.1 * 4.0, 4.0]);
        assert_eq!(m.output(&x, &row(&[0.0])).unwrap().data(), &[1.0, 3.0]);
    }

    #[test]
    fn fully_observed_output_is_state() {
        let cfg = SsConfig::new(SsVariant::FullyObserved, 2, 1, 2, vec![8]);
        let m = StateSpaceModel::init(cfg, 3).unwrap();
        let x = row(&[0.25, -4.0]);
        assert_eq!(m.output(&x, &row(&[1.0])).unwrap(), x);
        assert!(m.output_net().is_none());
    }

    #[test]
    fn invalid_dimensions_rejected() {
        assert!(StateSpaceModel::init(SsConfig::new(SsVariant::FullyObserved, 2, 1, 1, vec![4]), 0).is_err());
        assert!(StateSpaceModel::init(SsConfig::new(SsVariant::Mechanical, 3, 1, 1, vec![4]), 0).is_err());
        let m = StateSpaceModel::init(SsConfig::new(SsVariant::General, 2, 1, 1, vec![4]), 0).unwrap();
        assert!(m.step(&row(&[1.0, 2.0, 3.0]), &row(&[0.0])).is_err());
    }

    #[test]
    fn names_align_with_params() {
        for variant in [SsVariant::General, SsVariant::Integral, SsVariant::FullyObserved] {
            let n_y = if variant == SsVariant::FullyObserved { 2 } else { 1 };
            let m = StateSpaceModel::init(SsConfig::new(variant, 2, 1, n_y, vec![4]), 0).unwrap();
            assert_eq!(m.param_names().len(), m.params().len());
        }
    }
}
