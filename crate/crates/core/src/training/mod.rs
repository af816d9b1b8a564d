//! Losses, optimizers and the three fitting procedures: one-step
//! prediction error, full open-loop simulation error, and regularized
//! multi-step simulation error over batches of subsequences with hidden
//! initial conditions.

mod batch;
mod log;
mod loss;
mod optim;

pub use batch::{
    cycling_batch_starts, gather_batch, hidden_scaler, init_hidden, init_hidden_physical, mechanical_states, sample_batch_starts,
    start_count, HiddenVariables, StartSelection,
};
pub use log::{LossLog, LossRecord};
pub use loss::{loss_mse, loss_multistep, mse, multistep_terms, LossTerms};
pub use optim::{Optimizer, OptimizerKind};

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::simulation::{check_divergence, one_step_on_tape, one_step_problem, rollout};
use crate::structures::Model;
use batch::{gather_windows, initial_states, window_rows, Normalized};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainMethod {
    OneStep,
    FullSimulation,
    #[default]
    MultiStep,
}

impl TrainMethod {
    pub fn name(self) -> &'static str {
        match self {
            TrainMethod::OneStep => "one-step",
            TrainMethod::FullSimulation => "full-simulation",
            TrainMethod::MultiStep => "multi-step",
        }
    }
}

impl fmt::Display for TrainMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TrainMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "one-step" | "prediction" => Ok(TrainMethod::OneStep),
            "full-simulation" | "full-sim" | "simulation" => Ok(TrainMethod::FullSimulation),
            "multi-step" | "multistep" => Ok(TrainMethod::MultiStep),
            other => Err(Error::InvalidArgument(format!("unknown training method `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iterations: usize,
    pub lr: f64,
    /// Subsequences per batch.
    pub q: usize,
    /// Subsequence length.
    pub m: usize,
    /// Weight of the fit term against the consistency term.
    pub alpha: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub start_selection: StartSelection,
    /// Keep the hidden sequence at its initialization.
    pub freeze_hidden: bool,
    /// Fit input/output standardization to the training data before fitting.
    pub normalize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 1000,
            lr: 1e-3,
            q: 32,
            m: 64,
            alpha: 0.5,
            optimizer: OptimizerKind::Adam,
            seed: 0,
            start_selection: StartSelection::Random,
            freeze_hidden: false,
            normalize: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.q == 0 || self.m == 0 {
            return Err(Error::InvalidArgument("q and m must be at least 1".into()));
        }
        loss::check_alpha(self.alpha)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    /// Final hidden sequence (multi-step training only).
    pub hidden: Option<HiddenVariables>,
    pub log: LossLog,
}

/// Dispatches to the chosen procedure, calling `observer` after every
/// completed iteration.
pub fn train_with(
    method: TrainMethod,
    model: Model,
    data: &Dataset,
    config: &TrainConfig,
    observer: &mut dyn FnMut(&LossRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    match method {
        TrainMethod::OneStep => one_step(model, data, config, observer),
        TrainMethod::FullSimulation => full_simulation(model, data, config, observer),
        TrainMethod::MultiStep => multistep(model, data, config, observer),
    }
}

pub fn train_multistep(model: Model, data: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    train_with(TrainMethod::MultiStep, model, data, config, &mut |_| {})
}

pub fn train_one_step(model: Model, data: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    train_with(TrainMethod::OneStep, model, data, config, &mut |_| {})
}

/// Simulation-error fitting over the whole usable record: one window of
/// length `N - 1 - min_start` from the earliest admissible start, initial
/// condition taken from the measured data.
pub fn train_full_sim(model: Model, data: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    train_with(TrainMethod::FullSimulation, model, data, config, &mut |_| {})
}

/// Outcome of a single iteration before the parameter update.
struct Step {
    grads: Vec<Tensor>,
    total: f64,
    fit: f64,
    consistency: f64,
}

/// Shared iteration driver: handles divergence skipping, the optimizer
/// update and logging.
struct Driver<'a> {
    optimizer: Optimizer,
    names: Vec<String>,
    iterations: usize,
    log: LossLog,
    clock: Instant,
    observer: &'a mut dyn FnMut(&LossRecord),
}

impl<'a> Driver<'a> {
    fn new(model: &Model, config: &TrainConfig, with_hidden: bool, observer: &'a mut dyn FnMut(&LossRecord)) -> Result<Self> {
        let mut names = model.param_names();
        if with_hidden {
            names.push("hidden".into());
        }
        Ok(Driver {
            optimizer: Optimizer::new(config.optimizer, config.lr)?,
            names,
            iterations: config.iterations,
            log: LossLog::default(),
            clock: Instant::now(),
            observer,
        })
    }

    /// Applies one iteration result; diverged rollouts are skipped until
    /// they exceed 1% of the iterations.
    fn finish(&mut self, iteration: usize, step: Result<Step>, params: &mut [&mut Tensor]) -> Result<()> {
        let step = match step {
            Ok(s) => s,
            Err(Error::Diverged { .. }) => {
                self.log.skipped.push(iteration);
                if self.log.skipped.len() * 100 > self.iterations {
                    return Err(Error::TrainingDiverged {
                        skipped: self.log.skipped.len(),
                        iterations: self.iterations,
                    });
                }
                return Ok(());
            }
            Err(e) => return Err(e),
        };
        self.optimizer.step(params, &step.grads, &self.names)?;
        let record = LossRecord {
            iteration,
            total: step.total,
            fit: step.fit,
            consistency: step.consistency,
            wall_seconds: self.clock.elapsed().as_secs_f64(),
        };
        (self.observer)(&record);
        self.log.records.push(record);
        Ok(())
    }
}

fn prepare(mut model: Model, data: &Dataset, config: &TrainConfig) -> Result<(Model, Normalized)> {
    if config.normalize {
        model.fit_scaling(data)?;
    }
    let norm = Normalized::new(&model, data)?;
    Ok((model, norm))
}

fn multistep(model: Model, data: &Dataset, config: &TrainConfig, observer: &mut dyn FnMut(&LossRecord)) -> Result<TrainOutcome> {
    let (mut model, norm) = prepare(model, data, config)?;
    let (n, m, q) = (norm.len(), config.m, config.q);
    let min_start = model.min_start();
    batch::start_count(n, m, min_start)?;
    // The optimizer moves the hidden sequence in measurement units, so its
    // step size relates to the data and not to the normalized range.
    let scaler = hidden_scaler(&model).clone();
    let mut physical = init_hidden_physical(&model, data)?;
    let mut hidden = HiddenVariables {
        values: scaler.normalize(&physical)?,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let trainable_hidden = !config.freeze_hidden;
    let mut driver = Driver::new(&model, config, trainable_hidden, observer)?;
    let io = matches!(model, Model::Io(_));
    let width = model.hidden_width();

    for i in 0..config.iterations {
        let starts = match config.start_selection {
            StartSelection::Random => sample_batch_starts(&mut rng, q, m, n, min_start)?,
            StartSelection::SequentialCycling => cycling_batch_starts(i, q, m, n, min_start)?,
        };
        let step = (|| -> Result<Step> {
            let mut tape = Tape::new();
            let bound = model.bind(&mut tape, true);
            let h = if trainable_hidden {
                tape.leaf(hidden.values.clone())
            } else {
                tape.constant(hidden.values.clone())
            };
            let x0 = initial_states(&mut tape, &model, &norm, h, &starts)?;
            let u = gather_windows(&norm.u, &starts, m);
            let r = rollout(&mut tape, &model, &bound, x0, &u)?;
            let y = tape.constant(gather_windows(&norm.y, &starts, m));
            let target = tape.gather_rows(h, window_rows(&starts, m))?;
            let target = tape.reshape(target, &[q, m, width])?;
            let cons_pred = if io { r.outputs } else { r.states };
            let terms = multistep_terms(&mut tape, r.outputs, y, cons_pred, target, config.alpha)?;
            let consistency = match terms.consistency {
                Some(c) => tape.value(c).item(),
                None => mse(tape.value(cons_pred), tape.value(target))?,
            };
            tape.backward(terms.total)?;
            let mut grads: Vec<Tensor> = bound.param_vars().iter().map(|&v| tape.grad(v)).collect();
            if trainable_hidden {
                let mut g = tape.grad(h);
                for (i, v) in g.data_mut().iter_mut().enumerate() {
                    *v /= scaler.scale[i % width];
                }
                grads.push(g);
            }
            Ok(Step {
                grads,
                total: tape.value(terms.total).item(),
                fit: tape.value(terms.fit).item(),
                consistency,
            })
        })();
        let mut params = model.params_mut();
        if trainable_hidden {
            params.push(&mut physical);
        }
        driver.finish(i, step, &mut params)?;
        if trainable_hidden {
            hidden.values = scaler.normalize(&physical)?;
        }
    }
    Ok(TrainOutcome {
        model,
        hidden: Some(hidden),
        log: driver.log,
    })
}

fn full_simulation(model: Model, data: &Dataset, config: &TrainConfig, observer: &mut dyn FnMut(&LossRecord)) -> Result<TrainOutcome> {
    let (mut model, norm) = prepare(model, data, config)?;
    let n = norm.len();
    let min_start = model.min_start();
    if n < min_start + 2 {
        return Err(Error::InfeasibleStartRange {
            samples: n,
            seq_len: n.saturating_sub(1 + min_start),
            min_start,
        });
    }
    let m = n - 1 - min_start;
    let hidden = init_hidden(&model, data)?;
    let starts = [min_start];
    let mut x0_tape = Tape::new();
    let h = x0_tape.constant(hidden.values.clone());
    let x0 = initial_states(&mut x0_tape, &model, &norm, h, &starts)?;
    let x0 = x0_tape.value(x0).clone();
    let u = gather_windows(&norm.u, &starts, m);
    let y = gather_windows(&norm.y, &starts, m);
    let target = gather_windows(&hidden.values, &starts, m);
    let io = matches!(model, Model::Io(_));
    let mut driver = Driver::new(&model, config, false, observer)?;

    for i in 0..config.iterations {
        let step = (|| -> Result<Step> {
            let mut tape = Tape::new();
            let bound = model.bind(&mut tape, true);
            let x0 = tape.constant(x0.clone());
            let r = rollout(&mut tape, &model, &bound, x0, &u)?;
            let yv = tape.constant(y.clone());
            let fit = loss_mse(&mut tape, r.outputs, yv)?;
            let total = tape.scale(fit, 1.0)?;
            let cons_pred = if io { r.outputs } else { r.states };
            let consistency = mse(tape.value(cons_pred), &target)?;
            tape.backward(total)?;
            Ok(Step {
                grads: bound.param_vars().iter().map(|&v| tape.grad(v)).collect(),
                total: tape.value(total).item(),
                fit: tape.value(fit).item(),
                consistency,
            })
        })();
        driver.finish(i, step, &mut model.params_mut())?;
    }
    Ok(TrainOutcome {
        model,
        hidden: None,
        log: driver.log,
    })
}

fn one_step(model: Model, data: &Dataset, config: &TrainConfig, observer: &mut dyn FnMut(&LossRecord)) -> Result<TrainOutcome> {
    if !model.supports_one_step() {
        return Err(Error::UnsupportedStructure(format!(
            "one-step training needs a measured state or an IO structure, got {}",
            model.kind()
        )));
    }
    let (mut model, _) = prepare(model, data, config)?;
    let (regs, u, targets, _) = one_step_problem(&model, data)?;
    let mut driver = Driver::new(&model, config, false, observer)?;
    for i in 0..config.iterations {
        let step = (|| -> Result<Step> {
            let mut tape = Tape::new();
            let bound = model.bind(&mut tape, true);
            let r = tape.constant(regs.clone());
            let uv = tape.constant(u.clone());
            let pred = one_step_on_tape(&mut tape, &bound, r, uv)?;
            check_divergence(tape.value(pred), &model.scaler().output, 0)?;
            let t = tape.constant(targets.clone());
            let loss = loss_mse(&mut tape, pred, t)?;
            tape.backward(loss)?;
            let value = tape.value(loss).item();
            Ok(Step {
                grads: bound.param_vars().iter().map(|&v| tape.grad(v)).collect(),
                total: value,
                fit: value,
                consistency: 0.0,
            })
        })();
        driver.finish(i, step, &mut model.params_mut())?;
    }
    Ok(TrainOutcome {
        model,
        hidden: None,
        log: driver.log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::Activation;
    use crate::simulation::{predict_one_step, simulate_dataset};
    use crate::structures::{IoModel, Lags, SsConfig, SsVariant, StateSpaceModel};

    /// Second-order linear system sampled at unit time.
    fn toy_data(n: usize) -> Dataset {
        let mut x = [0.0, 0.0];
        let mut u = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(2 * n);
        for k in 0..n {
            let uk = ((k as f64) * 0.13).sin() + 0.5 * ((k as f64) * 0.031).cos();
            u.push(uk);
            y.extend_from_slice(&x);
            x = [0.9 * x[0] + 0.2 * x[1], -0.2 * x[0] + 0.8 * x[1] + 0.3 * uk];
        }
        Dataset::new(1.0, Tensor::new(vec![n, 1], u).unwrap(), Tensor::new(vec![n, 2], y).unwrap(), None).unwrap()
    }

    fn fo(seed: u64) -> Model {
        StateSpaceModel::init(SsConfig::new(SsVariant::FullyObserved, 2, 1, 2, vec![16]), seed)
            .unwrap()
            .into()
    }

    fn small_config() -> TrainConfig {
        TrainConfig {
            iterations: 50,
            lr: 1e-2,
            q: 8,
            m: 10,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn multistep_reduces_loss() {
        let data = toy_data(200);
        let out = train_multistep(fo(1), &data, &small_config()).unwrap();
        let recs = &out.log.records;
        assert_eq!(recs.len(), 50);
        assert!(recs[49].total < recs[0].total, "{} vs {}", recs[49].total, recs[0].total);
    }

    #[test]
    fn seeded_runs_are_bit_identical() {
        let data = toy_data(120);
        let cfg = TrainConfig {
            iterations: 15,
            ..small_config()
        };
        let a = train_multistep(fo(2), &data, &cfg).unwrap();
        let b = train_multistep(fo(2), &data, &cfg).unwrap();
        assert_eq!(a.log.losses(), b.log.losses());
        assert_eq!(a.model, b.model);
    }

    #[test]
    fn degenerate_multistep_equals_full_simulation() {
        let data = toy_data(80);
        let base = TrainConfig {
            iterations: 10,
            q: 1,
            m: 80 - 2,
            alpha: 1.0,
            freeze_hidden: true,
            ..small_config()
        };
        let ms = train_multistep(fo(3), &data, &base).unwrap();
        let fs = train_full_sim(fo(3), &data, &base).unwrap();
        assert_eq!(ms.log.losses(), fs.log.losses());
        assert_eq!(ms.model, fs.model);
    }

    #[test]
    fn untouched_hidden_entries_keep_initialization() {
        let data = toy_data(100);
        let cfg = TrainConfig {
            iterations: 5,
            q: 1,
            m: 4,
            start_selection: StartSelection::SequentialCycling,
            ..small_config()
        };
        let init = {
            let mut m = fo(4);
            m.fit_scaling(&data).unwrap();
            init_hidden(&m, &data).unwrap()
        };
        let out = train_multistep(fo(4), &data, &cfg).unwrap();
        let hidden = out.hidden.unwrap();
        // Starts 1..=5 with m = 4 touch rows 1..=8.
        for k in 0..100 {
            let touched = (1..=8).contains(&k);
            if !touched {
                assert_eq!(hidden.values.row(k), init.values.row(k), "row {k}");
            }
        }
        assert_ne!(hidden.values.row(1), init.values.row(1));
    }

    #[test]
    fn first_adam_step_moves_hidden_by_lr_in_measurement_units() {
        let data = toy_data(100);
        let cfg = TrainConfig {
            iterations: 1,
            q: 1,
            m: 4,
            start_selection: StartSelection::SequentialCycling,
            ..small_config()
        };
        let out = train_multistep(fo(4), &data, &cfg).unwrap();
        let moved = out.hidden.unwrap().physical(&out.model).unwrap();
        for k in 1..=4 {
            for (a, b) in moved.row(k).iter().zip(data.outputs.row(k)) {
                // |m/(sqrt(v) + eps)| = |g| / (|g| + eps) on the first step
                assert!(((a - b).abs() - cfg.lr).abs() < 1e-4 * cfg.lr, "row {k}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn unit_length_io_multistep_matches_one_step_loss() {
        let full = toy_data(60);
        let ys: Vec<f64> = (0..60).map(|k| full.outputs.row(k)[0]).collect();
        let data = Dataset::new(1.0, full.inputs.clone(), Tensor::new(vec![60, 1], ys).unwrap(), None).unwrap();
        let mut model: Model = IoModel::init(Lags::new(2, 2), 1, 1, &[8], Activation::Relu, 5).unwrap().into();
        model.fit_scaling(&data).unwrap();
        let cfg = TrainConfig {
            iterations: 1,
            q: 5,
            m: 1,
            alpha: 1.0,
            freeze_hidden: true,
            normalize: false,
            ..small_config()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let starts = sample_batch_starts(&mut rng, 5, 1, 60, 2).unwrap();
        let out = train_multistep(model.clone(), &data, &cfg).unwrap();
        let (offset, pred) = predict_one_step(&model, &data).unwrap();
        let scale = model.scaler().output.scale[0];
        let mut expect = 0.0;
        for &s in &starts {
            let e = (pred.row(s - offset)[0] - data.outputs.row(s)[0]) / scale;
            expect += e * e;
        }
        expect /= 5.0;
        assert!((out.log.records[0].total - expect).abs() < 1e-12);
    }

    #[test]
    fn one_step_rejects_latent_structure() {
        let data = toy_data(50);
        let model: Model = StateSpaceModel::init(SsConfig::new(SsVariant::General, 2, 1, 2, vec![4]), 0)
            .unwrap()
            .into();
        assert!(matches!(
            train_one_step(model, &data, &small_config()),
            Err(Error::UnsupportedStructure(_))
        ));
    }

    #[test]
    fn one_step_learns_toy_system() {
        let data = toy_data(200);
        let cfg = TrainConfig {
            iterations: 300,
            ..small_config()
        };
        let out = train_one_step(fo(6), &data, &cfg).unwrap();
        let recs = &out.log.records;
        assert!(recs.last().unwrap().total < 0.1 * recs[0].total);
        assert!(simulate_dataset(&out.model, &data).is_ok());
    }

    #[test]
    fn perfect_model_is_a_fixed_point() {
        // Linear fully-observed truth expressed through a ReLU network:
        // x' = A relu(x) - A relu(-x) + b relu(u) - b relu(-u).
        let data = toy_data(100);
        let mut m = StateSpaceModel::init(SsConfig::new(SsVariant::FullyObserved, 2, 1, 2, vec![6]), 0).unwrap();
        let net = &mut m.state_nets_mut()[0];
        let w1 = [
            1.0, -1.0, 0.0, 0.0, 0.0, 0.0, //
            0.0, 0.0, 1.0, -1.0, 0.0, 0.0, //
            0.0, 0.0, 0.0, 0.0, 1.0, -1.0,
        ];
        let w2 = [0.9, -0.2, -0.9, 0.2, 0.2, 0.8, -0.2, -0.8, 0.0, 0.3, 0.0, -0.3];
        net.layers_mut()[0].weight.data_mut().copy_from_slice(&w1);
        net.layers_mut()[1].weight.data_mut().copy_from_slice(&w2);
        let model: Model = m.into();
        let cfg = TrainConfig {
            iterations: 3,
            optimizer: OptimizerKind::GradientDescent,
            normalize: false,
            ..small_config()
        };
        let out = train_one_step(model.clone(), &data, &cfg).unwrap();
        assert!(out.log.records[0].total < 1e-28);
        for (a, b) in out.model.params().iter().zip(model.params()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn persistent_divergence_fails_run() {
        let data = toy_data(60);
        let mut m = StateSpaceModel::init(SsConfig::new(SsVariant::FullyObserved, 2, 1, 2, vec![4]), 0).unwrap();
        for p in m.state_nets_mut()[0].params_mut() {
            p.data_mut().fill(50.0);
        }
        let cfg = TrainConfig {
            iterations: 10,
            normalize: false,
            ..small_config()
        };
        match train_multistep(m.into(), &data, &cfg) {
            Err(Error::TrainingDiverged { skipped, iterations }) => {
                assert_eq!((skipped, iterations), (1, 10));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn config_validation() {
        let bad = [
            TrainConfig {
                lr: 0.0,
                ..TrainConfig::default()
            },
            TrainConfig {
                q: 0,
                ..TrainConfig::default()
            },
            TrainConfig {
                alpha: 0.0,
                ..TrainConfig::default()
            },
            TrainConfig {
                alpha: 1.2,
                ..TrainConfig::default()
            },
        ];
        for c in bad {
            assert!(c.validate().is_err());
        }
        assert!(TrainConfig::default().validate().is_ok());
    }
}
