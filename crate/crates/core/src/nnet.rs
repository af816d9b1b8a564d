//! Feedforward multilayer perceptrons.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::InvalidArgument(format!("unknown activation `{other}`"))),
        }
    }
}

/// Layer widths from input to output; hidden layers use `activation`, the
/// final layer is affine.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>) -> Self {
        MlpSpec {
            widths,
            activation: Activation::Relu,
        }
    }

    /// `input -> hidden -> output` with one hidden layer.
    pub fn single_hidden(input: usize, hidden: usize, output: usize) -> Self {
        Self::new(vec![input, hidden, output])
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "an MLP needs at least input and output widths, got {:?}",
                self.widths
            )));
        }
        if self.widths.contains(&0) {
            return Err(Error::InvalidArgument(format!("zero-width layer in {:?}", self.widths)));
        }
        Ok(())
    }
}

/// Weights are stored `[fan_in, fan_out]` so a batch `[.., fan_in]` maps to
/// `[.., fan_out]` by a single matmul.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    spec: MlpSpec,
    layers: Vec<Layer>,
}

impl Mlp {
    /// Weights uniform in `±1/sqrt(fan_in)`, zero biases.
    pub fn init(spec: MlpSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = spec
            .widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let data = (0..fan_in * fan_out).map(|_| rng.random_range(-bound..=bound)).collect();
                Layer {
                    weight: Tensor::new(vec![fan_in, fan_out], data).unwrap(),
                    bias: Tensor::zeros(&[fan_out]),
                }
            })
            .collect();
        Ok(Mlp { spec, layers })
    }

    /// Network with every weight and bias set to zero.
    pub fn zeros(spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let layers = spec
            .widths
            .windows(2)
            .map(|w| Layer {
                weight: Tensor::zeros(&[w[0], w[1]]),
                bias: Tensor::zeros(&[w[1]]),
            })
            .collect();
        Ok(Mlp { spec, layers })
    }

    pub fn from_layers(spec: MlpSpec, layers: Vec<Layer>) -> Result<Self> {
        spec.validate()?;
        if layers.len() != spec.widths.len() - 1 {
            return Err(Error::InvalidArgument(format!(
                "{} layers given for widths {:?}",
                layers.len(),
                spec.widths
            )));
        }
        for (layer, w) in layers.iter().zip(spec.widths.windows(2)) {
            if layer.weight.shape() != [w[0], w[1]] || layer.bias.shape() != [w[1]] {
                return Err(Error::shape("mlp layer", layer.weight.shape(), &[w[0], w[1]]));
            }
        }
        Ok(Mlp { spec, layers })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn param_count(&self) -> usize {
        self.spec.param_count()
    }

    /// Parameters in a fixed order: weight then bias, layer by layer.
    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias]).collect()
    }

    /// Places the parameters on `tape`, as leaves when `trainable`.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundMlp {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                if trainable {
                    (tape.leaf(l.weight.clone()), tape.leaf(l.bias.clone()))
                } else {
                    (tape.constant(l.weight.clone()), tape.constant(l.bias.clone()))
                }
            })
            .collect();
        BoundMlp {
            layers,
            activation: self.spec.activation,
            input_width: self.spec.input_width(),
        }
    }

    /// Binds onto existing tape variables, one per entry of [`Mlp::params`]
    /// in the same order and shape.
    pub fn bind_with(&self, tape: &Tape, params: &[Var]) -> Result<BoundMlp> {
        if params.len() != 2 * self.layers.len() {
            return Err(Error::InvalidArgument(format!(
                "network has {} parameter tensors, got {}",
                2 * self.layers.len(),
                params.len()
            )));
        }
        for (p, v) in self.params().into_iter().zip(params) {
            if tape.value(*v).shape() != p.shape() {
                return Err(Error::shape("mlp bind_with", tape.value(*v).shape(), p.shape()));
            }
        }
        Ok(BoundMlp {
            layers: params.chunks(2).map(|c| (c[0], c[1])).collect(),
            activation: self.spec.activation,
            input_width: self.spec.input_width(),
        })
    }

    /// Plain evaluation outside any training tape.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let x = tape.constant(input.clone());
        let y = bound.forward(&mut tape, x)?;
        Ok(tape.value(y).clone())
    }
}

/// An [`Mlp`] whose parameters live on a particular tape.
#[derive(Clone, Debug)]
pub struct BoundMlp {
    layers: Vec<(Var, Var)>,
    activation: Activation,
    input_width: usize,
}

impl BoundMlp {
    /// Parameter variables in [`Mlp::params`] order.
    pub fn param_vars(&self) -> Vec<Var> {
        self.layers.iter().flat_map(|&(w, b)| [w, b]).collect()
    }

    pub fn forward(&self, tape: &mut Tape, input: Var) -> Result<Var> {
        let width = tape.value(input).last_dim();
        if width != self.input_width || tape.value(input).rank() == 0 {
            return Err(Error::shape("mlp_forward", tape.value(input).shape(), &[self.input_width]));
        }
        let mut h = input;
        let last = self.layers.len() - 1;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let z = tape.matmul(h, w)?;
            h = tape.add(z, b)?;
            if i < last {
                h = match self.activation {
                    Activation::Relu => tape.relu(h)?,
                    Activation::Tanh => tape.tanh(h)?,
                };
            }
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::check_gradients;

    #[test]
    fn init_shapes_and_count() {
        let net = Mlp::init(MlpSpec::single_hidden(3, 64, 2), 7).unwrap();
        assert_eq!(net.layers()[0].weight.shape(), &[3, 64]);
        assert_eq!(net.layers()[1].weight.shape(), &[64, 2]);
        assert_eq!(net.layers()[0].bias.shape(), &[64]);
        assert_eq!(net.layers()[1].bias.shape(), &[2]);
        assert_eq!(net.param_count(), 3 * 64 + 64 + 64 * 2 + 2);
        assert_eq!(net.params().iter().map(|p| p.len()).sum::<usize>(), 3 * 64 + 64 + 64 * 2 + 2);
        assert_eq!(MlpSpec::single_hidden(4, 64, 1).param_count(), 385);
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let spec = MlpSpec::single_hidden(3, 64, 2);
        let a = Mlp::init(spec.clone(), 11).unwrap();
        let b = Mlp::init(spec.clone(), 11).unwrap();
        assert_eq!(a, b);
        let c = Mlp::init(spec, 12).unwrap();
        assert_ne!(a, c);
        let bound = 1.0 / 3f64.sqrt();
        assert!(a.layers()[0].weight.data().iter().all(|w| w.abs() <= bound));
        assert!(a.layers()[0].bias.data().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn zero_width_rejected() {
        assert!(Mlp::init(MlpSpec::new(vec![3, 0, 2]), 0).is_err());
        assert!(Mlp::init(MlpSpec::new(vec![3]), 0).is_err());
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = Mlp::zeros(MlpSpec::single_hidden(2, 5, 3)).unwrap();
        let y = net.forward(&Tensor::new(vec![2, 2], vec![1.0, -4.0, 3.0, 8.0]).unwrap()).unwrap();
        assert_eq!(y.shape(), &[2, 3]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_identity_layer_passes_input_through() {
        let spec = MlpSpec::new(vec![2, 2]);
        let layer = Layer {
            weight: Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
            bias: Tensor::zeros(&[2]),
        };
        let net = Mlp::from_layers(spec, vec![layer]).unwrap();
        let x = Tensor::new(vec![1, 2], vec![-3.5, 2.25]).unwrap();
        assert_eq!(net.forward(&x).unwrap(), x);
    }

    #[test]
    fn hand_computed_two_layer_value() {
        // h = relu([1,-1] W1 + b1), W1 = [[1,2],[3,-1]], b1 = [0.5, 0]
        //   = relu([-1.5, 3]) = [0, 3]
        // y = h W2 + b2 = [0,3].[2,-1]^T + 0.25 = -2.75
        let spec = MlpSpec::single_hidden(2, 2, 1);
        let layers = vec![
            Layer {
                weight: Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, -1.0]).unwrap(),
                bias: Tensor::vector(vec![0.5, 0.0]),
            },
            Layer {
                weight: Tensor::new(vec![2, 1], vec![2.0, -1.0]).unwrap(),
                bias: Tensor::vector(vec![0.25]),
            },
        ];
        let net = Mlp::from_layers(spec, layers).unwrap();
        let y = net.forward(&Tensor::new(vec![1, 2], vec![1.0, -1.0]).unwrap()).unwrap();
        assert_eq!(y.data(), &[-2.75]);
    }

    #[test]
    fn width_mismatch_rejected() {
        let net = Mlp::init(MlpSpec::single_hidden(3, 4, 1), 0).unwrap();
        let err = net.forward(&Tensor::zeros(&[5, 2])).unwrap_err();
        assert!(err.to_string().contains("[5, 2]"), "{err}");
    }

    #[test]
    fn batch_forward_equals_rowwise() {
        let net = Mlp::init(MlpSpec::single_hidden(3, 16, 2), 3).unwrap();
        let rows: Vec<Vec<f64>> = (0..5)
            .map(|i| vec![i as f64 * 0.3 - 0.7, (i * i) as f64 * 0.1, -0.2 * i as f64])
            .collect();
        let batch = net.forward(&Tensor::from_rows(&rows).unwrap()).unwrap();
        for (i, r) in rows.iter().enumerate() {
            let single = net.forward(&Tensor::new(vec![1, 3], r.clone()).unwrap()).unwrap();
            assert_eq!(single.data(), batch.row(i));
        }
    }

    #[test]
    fn mse_gradient_matches_finite_differences() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let net = Mlp::init(MlpSpec::single_hidden(3, 64, 2), 5).unwrap();
        let x = Tensor::new(vec![16, 3], (0..48).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let y = Tensor::new(vec![16, 2], (0..32).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let spec = net.spec().clone();
        let point: Vec<Tensor> = net.params().into_iter().cloned().collect();
        let err = check_gradients(
            |tape, vars| {
                let bound = BoundMlp {
                    layers: vec![(vars[0], vars[1]), (vars[2], vars[3])],
                    activation: spec.activation,
                    input_width: 3,
                };
                let xv = tape.constant(x.clone());
                let yv = tape.constant(y.clone());
                let out = bound.forward(tape, xv)?;
                let d = tape.sub(out, yv)?;
                let sq = tape.square(d)?;
                tape.mean(sq)
            },
            &point,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-5, "relative gradient error {err}");
    }
}
