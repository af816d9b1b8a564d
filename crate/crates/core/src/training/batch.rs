use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::simulation::BatchTensors;
use crate::structures::{Affine, Model, SsVariant};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StartSelection {
    #[default]
    Random,
    SequentialCycling,
}

impl StartSelection {
    pub fn name(self) -> &'static str {
        match self {
            StartSelection::Random => "random",
            StartSelection::SequentialCycling => "sequential-cycling",
        }
    }
}

impl fmt::Display for StartSelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StartSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "random" => Ok(StartSelection::Random),
            "sequential-cycling" | "sequential" => Ok(StartSelection::SequentialCycling),
            other => Err(Error::InvalidArgument(format!("unknown start selection `{other}`"))),
        }
    }
}

/// Number of admissible starts in `[min_start, n - m - 1]`.
pub fn start_count(n: usize, m: usize, min_start: usize) -> Result<usize> {
    if m == 0 || n < m + min_start + 1 {
        return Err(Error::InfeasibleStartRange {
            samples: n,
            seq_len: m,
            min_start,
        });
    }
    Ok(n - m - min_start)
}

/// `q` independent uniform draws from `[min_start, n - m - 1]`.
pub fn sample_batch_starts<R: Rng>(rng: &mut R, q: usize, m: usize, n: usize, min_start: usize) -> Result<Vec<usize>> {
    let count = start_count(n, m, min_start)?;
    Ok((0..q).map(|_| min_start + rng.random_range(0..count)).collect())
}

/// Deterministic stride through all admissible starts: iteration `i` uses
/// starts `min_start + ((i q + j) mod count)` for `j < q`.
pub fn cycling_batch_starts(iteration: usize, q: usize, m: usize, n: usize, min_start: usize) -> Result<Vec<usize>> {
    let count = start_count(n, m, min_start)?;
    let base = (iteration % count) * (q % count);
    Ok((0..q).map(|j| min_start + (base + j) % count).collect())
}

/// Free hidden sequence in model coordinates: outputs `[N, n_y]` for IO
/// models, states `[N, n_x]` for state-space models.
#[derive(Clone, Debug, PartialEq)]
pub struct HiddenVariables {
    pub values: Tensor,
}

impl HiddenVariables {
    pub fn len(&self) -> usize {
        self.values.leading()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Physical units of the hidden sequence.
    pub fn physical(&self, model: &Model) -> Result<Tensor> {
        hidden_scaler(model).denormalize(&self.values)
    }
}

/// Affine map between physical and model coordinates of the hidden sequence.
pub fn hidden_scaler(model: &Model) -> &Affine {
    match model {
        Model::StateSpace(m) => &m.scaler().state,
        Model::Io(m) => &m.scaler().output,
    }
}

/// Initial hidden sequence in physical units: measured outputs for IO and
/// fully-observed models, positions with difference-quotient velocities for
/// mechanical models, zeros for latent states.
pub fn init_hidden_physical(model: &Model, data: &Dataset) -> Result<Tensor> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    match model {
        Model::Io(_) => Ok(data.outputs.clone()),
        Model::StateSpace(m) => match m.variant() {
            SsVariant::FullyObserved => Ok(data.outputs.clone()),
            SsVariant::Mechanical => mechanical_states(&data.outputs, data.ts),
            _ => Ok(Tensor::zeros(&[data.len(), m.n_x()])),
        },
    }
}

/// [`init_hidden_physical`] in model coordinates.
pub fn init_hidden(model: &Model, data: &Dataset) -> Result<HiddenVariables> {
    let physical = init_hidden_physical(model, data)?;
    Ok(HiddenVariables {
        values: hidden_scaler(model).normalize(&physical)?,
    })
}

/// Interleaves positions `[N, d]` with finite-difference velocities into
/// `[N, 2d]`: central differences inside, one-sided at the ends.
pub fn mechanical_states(positions: &Tensor, ts: f64) -> Result<Tensor> {
    let n = positions.leading();
    let d = positions.last_dim();
    if n < 2 {
        return Err(Error::InvalidArgument("velocity estimation needs two samples".into()));
    }
    let mut out = Vec::with_capacity(n * 2 * d);
    for k in 0..n {
        let (lo, hi, span) = match k {
            0 => (0, 1, ts),
            k if k == n - 1 => (n - 2, n - 1, ts),
            k => (k - 1, k + 1, 2.0 * ts),
        };
        for c in 0..d {
            out.push(positions.row(k)[c]);
            out.push((positions.row(hi)[c] - positions.row(lo)[c]) / span);
        }
    }
    Tensor::new(vec![n, 2 * d], out)
}

/// Dataset in model coordinates, prepared once per training run.
#[derive(Clone, Debug)]
pub(crate) struct Normalized {
    pub y: Tensor,
    pub u: Tensor,
}

impl Normalized {
    pub fn new(model: &Model, data: &Dataset) -> Result<Self> {
        if data.n_u() != model.n_u() || data.n_y() != model.n_y() {
            return Err(Error::InvalidArgument(format!(
                "dataset has {} inputs / {} outputs, model expects {} / {}",
                data.n_u(),
                data.n_y(),
                model.n_u(),
                model.n_y()
            )));
        }
        Ok(Normalized {
            y: model.scaler().output.normalize(&data.outputs)?,
            u: model.scaler().input.normalize(&data.inputs)?,
        })
    }

    pub fn len(&self) -> usize {
        self.y.leading()
    }
}

/// Rows `s + t` for every start `s` and `t < m`, as `[q, m, c]`.
pub(crate) fn gather_windows(seq: &Tensor, starts: &[usize], m: usize) -> Tensor {
    let c = seq.last_dim();
    let mut out = Vec::with_capacity(starts.len() * m * c);
    for &s in starts {
        out.extend_from_slice(&seq.data()[s * c..(s + m) * c]);
    }
    Tensor::new(vec![starts.len(), m, c], out).expect("consistent windows")
}

pub(crate) fn window_rows(starts: &[usize], m: usize) -> Vec<usize> {
    starts.iter().flat_map(|&s| s..s + m).collect()
}

/// Rows feeding the initial IO regressor at each start, newest first.
pub(crate) fn lag_rows(starts: &[usize], lags: usize) -> Vec<usize> {
    starts.iter().flat_map(|&s| (1..=lags).map(move |i| s - i)).collect()
}

pub(crate) fn check_starts(model: &Model, n: usize, starts: &[usize], m: usize) -> Result<()> {
    let min_start = model.min_start();
    for &s in starts {
        if s < min_start || s + m > n {
            return Err(Error::InvalidArgument(format!(
                "batch start {s} with length {m} outside [{min_start}, {n})"
            )));
        }
    }
    Ok(())
}

/// Initial rollout states of a batch on `tape`, differentiable through
/// the hidden sequence `hidden` (`[N, n_hidden]`).
pub(crate) fn initial_states(tape: &mut Tape, model: &Model, data: &Normalized, hidden: Var, starts: &[usize]) -> Result<Var> {
    match model {
        Model::StateSpace(_) => tape.gather_rows(hidden, starts.to_vec()),
        Model::Io(m) => {
            let q = starts.len();
            let lags = m.lags();
            let ys = tape.gather_rows(hidden, lag_rows(starts, lags.outputs))?;
            let ys = tape.reshape(ys, &[q, lags.outputs * m.n_y()])?;
            let us = data.u.clone();
            let rows = lag_rows(starts, lags.inputs);
            let c = us.last_dim();
            let mut vals = Vec::with_capacity(rows.len() * c);
            for r in rows {
                vals.extend_from_slice(us.row(r));
            }
            let us = tape.constant(Tensor::new(vec![q, lags.inputs * c], vals)?);
            tape.concat(&[ys, us])
        }
    }
}

pub(crate) fn gather_normalized(
    model: &Model,
    data: &Normalized,
    hidden: &HiddenVariables,
    starts: &[usize],
    m: usize,
) -> Result<BatchTensors> {
    check_starts(model, data.len(), starts, m)?;
    if hidden.len() != data.len() || hidden.values.last_dim() != model.hidden_width() {
        return Err(Error::shape(
            "gather_batch hidden",
            hidden.values.shape(),
            &[data.len(), model.hidden_width()],
        ));
    }
    let mut tape = Tape::new();
    let h = tape.constant(hidden.values.clone());
    let x0 = initial_states(&mut tape, model, data, h, starts)?;
    Ok(BatchTensors {
        starts: starts.to_vec(),
        m,
        y: gather_windows(&data.y, starts, m),
        u: gather_windows(&data.u, starts, m),
        hidden: gather_windows(&hidden.values, starts, m),
        x0: tape.value(x0).clone(),
    })
}

/// Batch of subsequences `[s_j, s_j + m)` in model coordinates.
pub fn gather_batch(model: &Model, data: &Dataset, hidden: &HiddenVariables, starts: &[usize], m: usize) -> Result<BatchTensors> {
    gather_normalized(model, &Normalized::new(model, data)?, hidden, starts, m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::Activation;
    use crate::structures::{IoModel, Lags, SsConfig, StateSpaceModel};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn seq_data(n: usize) -> Dataset {
        let u = Tensor::new(vec![n, 1], (0..n).map(|k| k as f64 * 0.5).collect()).unwrap();
        let y = Tensor::new(vec![n, 2], (0..2 * n).map(|k| k as f64).collect()).unwrap();
        Dataset::new(1.0, u, y, None).unwrap()
    }

    fn fo_model() -> Model {
        StateSpaceModel::init(SsConfig::new(SsVariant::FullyObserved, 2, 1, 2, vec![4]), 0)
            .unwrap()
            .into()
    }

    #[test]
    fn random_starts_within_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            for s in sample_batch_starts(&mut rng, 62, 64, 4000, 1).unwrap() {
                assert!((1..=3935).contains(&s));
            }
        }
    }

    #[test]
    fn singleton_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(sample_batch_starts(&mut rng, 1, 10, 13, 2).unwrap(), vec![2]);
        assert_eq!(cycling_batch_starts(5, 1, 10, 13, 2).unwrap(), vec![2]);
    }

    #[test]
    fn infeasible_range_reports_quantities() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        match sample_batch_starts(&mut rng, 1, 10, 12, 2) {
            Err(Error::InfeasibleStartRange {
                samples,
                seq_len,
                min_start,
            }) => {
                assert_eq!((samples, seq_len, min_start), (12, 10, 2));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn gather_indexes_windows() {
        let data = seq_data(12);
        let model = fo_model();
        let hidden = HiddenVariables {
            values: data.outputs.clone(),
        };
        // Identity scalers: model coordinates equal physical values.
        let b = gather_batch(&model, &data, &hidden, &[5], 3).unwrap();
        assert_eq!(b.y.data(), &data.outputs.data()[10..16]);
        assert_eq!(b.hidden, b.y);
        assert_eq!(b.x0.data(), data.outputs.row(5));
    }

    #[test]
    fn hidden_initialized_to_measurements() {
        let data = seq_data(10);
        let mut model = fo_model();
        model.fit_scaling(&data).unwrap();
        let h = init_hidden(&model, &data).unwrap();
        let b = gather_batch(&model, &data, &h, &[1, 4], 5).unwrap();
        assert_eq!(b.hidden, b.y);
        let back = h.physical(&model).unwrap();
        for (a, b) in back.data().iter().zip(data.outputs.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn io_initial_regressor_from_hidden() {
        let data = seq_data(12);
        let model: Model = IoModel::init(Lags::new(2, 3), 2, 1, &[4], Activation::Relu, 0).unwrap().into();
        let hidden = HiddenVariables {
            values: data.outputs.map(|v| v + 100.0),
        };
        let b = gather_batch(&model, &data, &hidden, &[3, 7], 2).unwrap();
        let expect_row = |s: usize| {
            let mut v = Vec::new();
            v.extend_from_slice(hidden.values.row(s - 1));
            v.extend_from_slice(hidden.values.row(s - 2));
            for i in 1..=3 {
                v.extend_from_slice(data.inputs.row(s - i));
            }
            v
        };
        assert_eq!(b.x0.row(0), expect_row(3).as_slice());
        assert_eq!(b.x0.row(1), expect_row(7).as_slice());
        assert!(gather_batch(&model, &data, &hidden, &[2], 2).is_err());
    }

    #[test]
    fn mechanical_velocity_of_ramp_is_one() {
        let ts = 0.01;
        let p = Tensor::new(vec![50, 1], (0..50).map(|k| k as f64 * ts).collect()).unwrap();
        let x = mechanical_states(&p, ts).unwrap();
        for k in 0..50 {
            assert_eq!(x.row(k)[0], p.row(k)[0]);
            assert!((x.row(k)[1] - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn mechanical_velocity_of_sine_within_taylor_bound() {
        let (ts, w) = (1e-3, 20.0);
        let n = 200;
        let p = Tensor::new(vec![n, 1], (0..n).map(|k| (w * k as f64 * ts).sin()).collect()).unwrap();
        let x = mechanical_states(&p, ts).unwrap();
        let bound = w * (w * ts) * (w * ts) / 6.0 + 1e-9;
        for k in 1..n - 1 {
            let exact = w * (w * k as f64 * ts).cos();
            assert!((x.row(k)[1] - exact).abs() <= bound, "k = {k}");
        }
    }

    #[test]
    fn sequential_cycling_covers_all_starts() {
        for (q, m, n, min_start) in [(7, 5, 60, 1), (62, 64, 400, 1), (3, 2, 9, 2), (10, 3, 12, 2)] {
            let count = start_count(n, m, min_start).unwrap();
            let iters = count.div_ceil(q);
            let mut seen = vec![false; count];
            for i in 0..iters {
                for s in cycling_batch_starts(i, q, m, n, min_start).unwrap() {
                    assert!(s >= min_start && s <= n - m - 1);
                    seen[s - min_start] = true;
                }
            }
            assert!(seen.iter().all(|&v| v), "q={q} m={m} n={n}");
        }
    }

    proptest! {
        #[test]
        fn gather_matches_slicing(n in 20usize..60, m in 1usize..8, seed in 0u64..1000) {
            let data = seq_data(n);
            let model = fo_model();
            let hidden = HiddenVariables { values: data.outputs.map(|v| -v) };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let starts = sample_batch_starts(&mut rng, 4, m, n, 1).unwrap();
            let b = gather_batch(&model, &data, &hidden, &starts, m).unwrap();
            for (j, &s) in starts.iter().enumerate() {
                for t in 0..m {
                    for c in 0..2 {
                        prop_assert_eq!(b.y.get(&[j, t, c]), data.outputs.get(&[s + t, c]));
                        prop_assert_eq!(b.hidden.get(&[j, t, c]), -data.outputs.get(&[s + t, c]));
                    }
                    prop_assert_eq!(b.u.get(&[j, t, 0]), data.inputs.get(&[s + t, 0]));
                }
            }
        }
    }
}
