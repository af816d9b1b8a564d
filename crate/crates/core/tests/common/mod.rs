#![allow(dead_code)]

use neural_sysid::autodiff::{check_gradients, Tape, Tensor, Var};
use neural_sysid::dataset::Dataset;
use neural_sysid::nnet::Activation;
use neural_sysid::simulation::{rollout, simulate_batch, simulate_open_loop};
use neural_sysid::structures::{BoundModel, IoModel, Lags, LinearApprox, Model, SsConfig, SsVariant, StateSpaceModel};
use neural_sysid::training::{gather_batch, init_hidden, multistep_terms, HiddenVariables};
use neural_sysid::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Smooth random-ish excitation through a stable linear system with a mild
/// nonlinearity; `n_y` outputs, one input.
pub fn toy_dataset(n: usize, n_y: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = [0.0_f64; 2];
    let mut u = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n * n_y);
    let mut level: f64 = 0.0;
    for _ in 0..n {
        level = 0.8 * level + 0.6 * rng.random_range(-1.0..1.0);
        u.push(level);
        y.extend_from_slice(&x[..n_y]);
        x = [
            0.85 * x[0] + 0.25 * x[1],
            -0.2 * x[0] + 0.7 * x[1] + 0.4 * level - 0.05 * x[0].powi(3),
        ];
    }
    Dataset::new(
        1e-2,
        Tensor::new(vec![n, 1], u).unwrap(),
        Tensor::new(vec![n, n_y], y).unwrap(),
        None,
    )
    .unwrap()
}

/// One small instance of every model structure.
pub fn all_structures(activation: Activation, seed: u64) -> Vec<(String, Model)> {
    let ss = |variant, n_x, n_y| {
        let mut c = SsConfig::new(variant, n_x, 1, n_y, vec![12]);
        c.activation = activation;
        c.ts = 1e-2;
        if variant == SsVariant::Residual {
            c.linear = Some(LinearApprox {
                a: Tensor::from_rows(&[vec![0.8, 0.2, 0.0], vec![-0.1, 0.7, 0.1], vec![0.0, 0.0, 0.5]]).unwrap(),
                b: Tensor::from_rows(&[vec![0.0], vec![0.5], vec![0.1]]).unwrap(),
                c: Tensor::from_rows(&[vec![1.0, 0.0, 0.0]]).unwrap(),
            });
        }
        Model::from(StateSpaceModel::init(c, seed).unwrap())
    };
    vec![
        ("general".into(), ss(SsVariant::General, 3, 1)),
        ("residual".into(), ss(SsVariant::Residual, 3, 1)),
        ("integral".into(), ss(SsVariant::Integral, 3, 1)),
        ("fully-observed".into(), ss(SsVariant::FullyObserved, 2, 2)),
        ("mechanical".into(), ss(SsVariant::Mechanical, 2, 1)),
        (
            "io".into(),
            IoModel::init(Lags::new(2, 3), 1, 1, &[12], activation, seed).unwrap().into(),
        ),
    ]
}

pub fn dataset_for(model: &Model, n: usize, seed: u64) -> Dataset {
    toy_dataset(n, model.n_y(), seed)
}

/// Normalized outputs and inputs of `data` under the model's scaler.
pub fn normalized(model: &Model, data: &Dataset) -> (Tensor, Tensor) {
    let s = model.scaler();
    (s.output.normalize(&data.outputs).unwrap(), s.input.normalize(&data.inputs).unwrap())
}

/// `[q, m, c]` windows of a `[N, c]` sequence.
pub fn windows(seq: &Tensor, starts: &[usize], m: usize) -> Tensor {
    let c = seq.last_dim();
    let mut out = Vec::new();
    for &s in starts {
        out.extend_from_slice(&seq.data()[s * c..(s + m) * c]);
    }
    Tensor::new(vec![starts.len(), m, c], out).unwrap()
}

/// The multi-step simulation loss of one batch, built from public pieces:
/// initial states drawn from the hidden sequence `h`, batched rollout, fit
/// on measured outputs and consistency against the hidden windows.
#[allow(clippy::too_many_arguments)]
pub fn batch_loss(
    tape: &mut Tape,
    model: &Model,
    bound: &BoundModel<'_>,
    h: Var,
    y: &Tensor,
    u: &Tensor,
    starts: &[usize],
    m: usize,
    alpha: f64,
) -> Result<Var> {
    let q = starts.len();
    let x0 = match model {
        Model::StateSpace(_) => tape.gather_rows(h, starts.to_vec())?,
        Model::Io(io) => {
            let lags = io.lags();
            let rows: Vec<usize> = starts.iter().flat_map(|&s| (1..=lags.outputs).map(move |i| s - i)).collect();
            let ys = tape.gather_rows(h, rows)?;
            let ys = tape.reshape(ys, &[q, lags.outputs * io.n_y()])?;
            let mut us = Vec::new();
            for &s in starts {
                for i in 1..=lags.inputs {
                    us.extend_from_slice(u.row(s - i));
                }
            }
            let us = tape.constant(Tensor::new(vec![q, lags.inputs * io.n_u()], us)?);
            tape.concat(&[ys, us])?
        }
    };
    let r = rollout(tape, model, bound, x0, &windows(u, starts, m))?;
    let target_rows: Vec<usize> = starts.iter().flat_map(|&s| s..s + m).collect();
    let target = tape.gather_rows(h, target_rows)?;
    let target = tape.reshape(target, &[q, m, model.hidden_width()])?;
    let yv = tape.constant(windows(y, starts, m));
    let cons_pred = if matches!(model, Model::Io(_)) { r.outputs } else { r.states };
    Ok(multistep_terms(tape, r.outputs, yv, cons_pred, target, alpha)?.total)
}

/// `check_gradients` of the batch loss with respect to every network
/// parameter and every hidden-variable entry. The hidden sequence is the
/// standard initialization perturbed so the consistency term is active.
pub fn rollout_gradient_error(model: &Model, data: &Dataset, starts: &[usize], m: usize, step: f64, seed: u64) -> Result<f64> {
    let (y, u) = normalized(model, data);
    let mut hidden = init_hidden(model, data)?.values;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in hidden.data_mut() {
        *v += 0.1 * rng.random_range(-1.0..1.0);
    }
    let mut point: Vec<Tensor> = model.params().into_iter().cloned().collect();
    let k = point.len();
    point.push(hidden);
    check_gradients(
        |tape, vars| {
            let bound = model.bind_with(tape, &vars[..k])?;
            batch_loss(tape, model, &bound, vars[k], &y, &u, starts, m, 0.5)
        },
        &point,
        step,
    )
}

/// Largest gap between a batched rollout and the same windows simulated
/// one at a time from the matching physical initial conditions.
pub fn batch_vs_sequential(structure: usize, seed: u64, q: usize, m: usize) -> f64 {
    let (_, mut model) = all_structures(Activation::Relu, seed).swap_remove(structure);
    let n = 60;
    let data = dataset_for(&model, n, seed + 1);
    model.fit_scaling(&data).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hidden = init_hidden(&model, &data).unwrap().values;
    for v in hidden.data_mut() {
        *v += 0.2 * rng.random_range(-1.0..1.0);
    }
    let hidden = HiddenVariables { values: hidden };
    let min = model.min_start();
    let starts: Vec<usize> = (0..q).map(|_| rng.random_range(min..=n - m)).collect();
    let batch = gather_batch(&model, &data, &hidden, &starts, m).unwrap();
    let batched = simulate_batch(&model, &batch).unwrap();

    let scaler = model.scaler();
    let w = model.state_width();
    let ny = model.n_y();
    let mut worst = 0.0_f64;
    for (j, &s) in starts.iter().enumerate() {
        let x0n = Tensor::new(vec![1, w], batch.x0.row(j).to_vec()).unwrap();
        let x0 = scaler.state.denormalize(&x0n).unwrap();
        let single = simulate_open_loop(&model, &x0.reshape(&[w]).unwrap(), &data.inputs.rows(s, s + m)).unwrap();
        let slice = &batched.data()[j * m * ny..(j + 1) * m * ny];
        for (a, b) in single.data().iter().zip(slice) {
            worst = worst.max((a - b).abs());
        }
    }
    worst
}
