//! Nonlinear RLC circuit benchmark: saturating inductance, RK4 integration,
//! band-limited input synthesis and noisy measurement datasets.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::dataset::Dataset;
use crate::error::{Error, Result};

/// Samples of filter transient discarded before the input record starts.
const FILTER_WARMUP: usize = 2000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RlcParams {
    /// Ohm.
    pub r: f64,
    /// Farad.
    pub c: f64,
    /// Nominal inductance, henry.
    pub l0: f64,
}

impl Default for RlcParams {
    fn default() -> Self {
        RlcParams {
            r: 3.0,
            c: 270e-9,
            l0: 50e-6,
        }
    }
}

impl RlcParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.r > 0.0 && self.c > 0.0 && self.l0 > 0.0) {
            return Err(Error::InvalidArgument(format!("circuit parameters must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// Current-dependent inductance `L0 [0.9/pi atan(-5(|i| - 5)) + 0.6]`.
pub fn inductance(i_l: f64, params: &RlcParams) -> f64 {
    params.l0 * ((0.9 / PI) * (-5.0 * (i_l.abs() - 5.0)).atan() + 0.5 + 0.1)
}

/// Time derivative of `[v_C, i_L]` under input voltage `v_in`.
pub fn rlc_derivative(x: &[f64], v_in: f64, params: &RlcParams) -> [f64; 2] {
    let (v_c, i_l) = (x[0], x[1]);
    [i_l / params.c, (-v_c - params.r * i_l + v_in) / inductance(i_l, params)]
}

/// Classical fourth-order Runge-Kutta step with the input held over the step.
pub fn rk4_step<F>(f: F, x: &[f64], u: &[f64], ts: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64], &[f64]) -> Vec<f64>,
{
    if !(ts > 0.0) {
        return Err(Error::InvalidArgument(format!("step must be positive, got {ts}")));
    }
    let offset = |k: &[f64], h: f64| -> Vec<f64> { x.iter().zip(k).map(|(a, b)| a + h * b).collect() };
    let checked = |v: Vec<f64>, stage: usize| -> Result<Vec<f64>> {
        if v.iter().all(|d| d.is_finite()) {
            Ok(v)
        } else {
            Err(Error::NonFiniteStage { stage })
        }
    };
    let k1 = checked(f(x, u), 1)?;
    let k2 = checked(f(&offset(&k1, ts / 2.0), u), 2)?;
    let k3 = checked(f(&offset(&k2, ts / 2.0), u), 3)?;
    let k4 = checked(f(&offset(&k3, ts), u), 4)?;
    let next: Vec<f64> = (0..x.len())
        .map(|i| x[i] + ts / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect();
    checked(next, 5)
}

/// Coefficients `(b1, b2, a1, a2)` of the zero-order-hold discretization of
/// `1 / (1 + s/w)^2`: `y_k = b1 x_{k-1} + b2 x_{k-2} - a1 y_{k-1} - a2 y_{k-2}`.
pub fn double_pole_filter(w: f64, ts: f64) -> (f64, f64, f64, f64) {
    let a = w * ts;
    let p = (-a).exp();
    (1.0 - p * (1.0 + a), p * (p - 1.0 + a), -2.0 * p, p * p)
}

/// Gaussian white noise through a critically damped second-order low-pass
/// with corner `bandwidth` (rad/s), centered and rescaled to standard deviation `std`.
pub fn gen_input<R: Rng>(rng: &mut R, n: usize, ts: f64, bandwidth: f64, std: f64) -> Result<Vec<f64>> {
    if !(ts > 0.0) {
        return Err(Error::InvalidArgument(format!("sample time must be positive, got {ts}")));
    }
    if !(bandwidth > 0.0 && bandwidth < PI / ts) {
        return Err(Error::InvalidArgument(format!(
            "input bandwidth {bandwidth} rad/s must lie in (0, {}) (Nyquist)",
            PI / ts
        )));
    }
    if !(std >= 0.0 && std.is_finite()) {
        return Err(Error::InvalidArgument(format!("input std must be non-negative, got {std}")));
    }
    let (b1, b2, a1, a2) = double_pole_filter(bandwidth, ts);
    let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
    let mut out = Vec::with_capacity(n);
    for k in 0..n + FILTER_WARMUP {
        let w: f64 = rng.sample(StandardNormal);
        let y = b1 * x1 + b2 * x2 - a1 * y1 - a2 * y2;
        (x2, x1, y2, y1) = (x1, w, y1, y);
        if k >= FILTER_WARMUP {
            out.push(y);
        }
    }
    if n == 0 {
        return Ok(out);
    }
    let mean = out.iter().sum::<f64>() / n as f64;
    let sd = (out.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64).sqrt();
    let gain = if sd > 0.0 { std / sd } else { 0.0 };
    for v in &mut out {
        *v = (*v - mean) * gain;
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    /// Sample time, seconds.
    pub ts: f64,
    pub n: usize,
    /// Input filter corner, rad/s.
    pub bandwidth: f64,
    /// Input standard deviation, volts.
    pub input_std: f64,
    pub noise_std_vc: f64,
    pub noise_std_il: f64,
    /// Record only the capacitor voltage.
    pub voltage_only: bool,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            ts: 0.5e-6,
            n: 4000,
            bandwidth: 150e3,
            input_std: 80.0,
            noise_std_vc: 0.0,
            noise_std_il: 0.0,
            voltage_only: false,
            seed: 0,
        }
    }
}

impl GenConfig {
    /// Excitation used for validation records.
    pub fn validation() -> Self {
        GenConfig {
            bandwidth: 200e3,
            input_std: 60.0,
            seed: 1,
            ..GenConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidArgument(format!("need at least two samples, got {}", self.n)));
        }
        if !(self.noise_std_vc >= 0.0 && self.noise_std_il >= 0.0) {
            return Err(Error::InvalidArgument("noise standard deviations must be non-negative".into()));
        }
        Ok(())
    }
}

/// Noise-free circuit response `[N, 2]` from the zero state.
pub fn simulate_rlc(inputs: &[f64], ts: f64, params: &RlcParams) -> Result<Tensor> {
    params.validate()?;
    let mut x = vec![0.0, 0.0];
    let mut states = Vec::with_capacity(2 * inputs.len());
    for (k, &u) in inputs.iter().enumerate() {
        states.extend_from_slice(&x);
        x = rk4_step(|x, u| rlc_derivative(x, u[0], params).to_vec(), &x, &[u], ts)
            .map_err(|e| Error::InvalidArgument(format!("circuit simulation failed at sample {k}: {e}")))?;
    }
    Tensor::new(vec![inputs.len(), 2], states)
}

pub fn gen_dataset(config: &GenConfig, params: &RlcParams) -> Result<Dataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let u = gen_input(&mut rng, config.n, config.ts, config.bandwidth, config.input_std)?;
    let states = simulate_rlc(&u, config.ts, params)?;
    let (clean, stds, names): (Tensor, Vec<f64>, Vec<&str>) = if config.voltage_only {
        let vc: Vec<f64> = (0..config.n).map(|k| states.row(k)[0]).collect();
        (Tensor::new(vec![config.n, 1], vc)?, vec![config.noise_std_vc], vec!["vc"])
    } else {
        (states, vec![config.noise_std_vc, config.noise_std_il], vec!["vc", "il"])
    };
    let mut noisy = clean.clone();
    let c = stds.len();
    for (i, v) in noisy.data_mut().iter_mut().enumerate() {
        let e: f64 = rng.sample(StandardNormal);
        *v += stds[i % c] * e;
    }
    let inputs = Tensor::new(vec![config.n, 1], u)?;
    Dataset::new(config.ts, inputs, noisy, Some(clean))?.with_names(&["vin"], &names)
}
