//! Command-line front end: `generate`, `train` and `eval`.
//!
//! Every setting is a key of a flat `key = value` config file and can be
//! overridden by a `--key` flag. Precedence is defaults, then file, then flags.

mod config;

pub use config::{normalize_key, RunConfig};

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Arg, ArgMatches, Command};

use crate::autodiff::Tensor;
use crate::benchmark::{gen_dataset, GenConfig, RlcParams};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::metrics::evaluate;
use crate::model_file::{config_hash, ModelFile, Provenance};
use crate::nnet::Activation;
use crate::structures::{IoModel, Lags, LinearApprox, Model, SsConfig, SsVariant, StateSpaceModel};
use crate::training::{train_with, LossRecord, OptimizerKind, StartSelection, TrainConfig, TrainMethod};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "NEURAL_SYSID_OUT_DIR";

const GENERATE_KEYS: &[(&str, &str)] = &[
    ("output", ""),
    ("out_dir", ""),
    ("preset", "identification"),
    ("seed", ""),
    ("n", ""),
    ("ts", ""),
    ("bandwidth", ""),
    ("input_std", ""),
    ("noise_std_vc", ""),
    ("noise_std_il", ""),
    ("voltage_only", ""),
    ("r", "3"),
    ("c", "2.7e-7"),
    ("l0", "5e-5"),
];

const TRAIN_KEYS: &[(&str, &str)] = &[
    ("data", ""),
    ("out_dir", ""),
    ("model_out", "model.json"),
    ("log_out", "loss.csv"),
    ("report_out", "train_report.txt"),
    ("method", "multistep"),
    ("structure", "fully-observed"),
    ("n_x", ""),
    ("hidden", "64"),
    ("activation", "relu"),
    ("n_a", "2"),
    ("n_b", "2"),
    ("linear_a", ""),
    ("linear_b", ""),
    ("linear_c", ""),
    ("iterations", "1000"),
    ("lr", "1e-3"),
    ("q", "32"),
    ("m", "64"),
    ("alpha", "0.5"),
    ("optimizer", "adam"),
    ("seed", "0"),
    ("start_selection", "random"),
    ("freeze_hidden", "false"),
    ("normalize", "true"),
    ("progress", "0"),
];

const EVAL_KEYS: &[(&str, &str)] = &[
    ("model", ""),
    ("data", ""),
    ("name", ""),
    ("out_dir", ""),
    ("report_out", "eval_report.txt"),
    ("trajectory_out", "trajectory.csv"),
];

/// Keys that locate files or control console output; they do not affect
/// results and are left out of the configuration hash.
const NON_HASHED: &[&str] = &["data", "out_dir", "model_out", "log_out", "report_out", "progress"];

fn key_table(command: &str) -> &'static [(&'static str, &'static str)] {
    match command {
        "generate" => GENERATE_KEYS,
        "train" => TRAIN_KEYS,
        _ => EVAL_KEYS,
    }
}

/// Every key accepted in a config file. One file may drive several
/// commands; each command reads the keys it knows.
fn file_keys() -> Vec<&'static str> {
    let mut keys: Vec<&str> = [GENERATE_KEYS, TRAIN_KEYS, EVAL_KEYS]
        .iter()
        .flat_map(|t| t.iter().map(|(k, _)| *k))
        .collect();
    keys.sort_unstable();
    keys.dedup();
    keys
}

fn flag(key: &str) -> String {
    key.replace('_', "-")
}

fn subcommand(name: &'static str, about: &'static str) -> Command {
    let mut cmd = Command::new(name).about(about).arg(
        Arg::new("config")
            .long("config")
            .value_name("FILE")
            .help("Flat key = value config file"),
    );
    for (key, _) in key_table(name) {
        cmd = cmd.arg(Arg::new(*key).long(flag(key)).value_name("VALUE"));
    }
    cmd
}

pub fn command() -> Command {
    Command::new("neural-sysid")
        .version(env!("CARGO_PKG_VERSION"))
        .about("Neural dynamical model identification")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(subcommand(
            "generate",
            "Simulate the nonlinear RLC benchmark and write a dataset CSV",
        ))
        .subcommand(subcommand("train", "Fit a model structure to a dataset CSV"))
        .subcommand(subcommand("eval", "Simulate a saved model on a dataset and score it"))
}

/// Runs the CLI and returns the process exit code: 0 on success, 1 for
/// usage and configuration errors, 2 for numerical failures.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    let result = resolve(name, sub).and_then(|cfg| match name {
        "generate" => cmd_generate(&cfg),
        "train" => cmd_train(&cfg),
        _ => cmd_eval(&cfg),
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                2
            } else {
                1
            }
        }
    }
}

fn resolve(command: &str, matches: &ArgMatches) -> Result<RunConfig> {
    let table = key_table(command);
    let mut cfg = RunConfig::default();
    for (key, default) in table {
        cfg.set(key, default);
    }
    if let Some(path) = matches.get_one::<String>("config") {
        let text = std::fs::read_to_string(path).map_err(|e| Error::InvalidArgument(format!("cannot read config `{path}`: {e}")))?;
        let file = RunConfig::parse(&text, &file_keys())?;
        for (key, value) in file.entries() {
            if table.iter().any(|(k, _)| *k == key) {
                cfg.set(key, value);
            }
        }
    }
    for (key, _) in table {
        if let Some(value) = matches.get_one::<String>(key) {
            cfg.set(key, value);
        }
    }
    if cfg.raw("out_dir").is_some_and(str::is_empty) {
        let dir = std::env::var(OUT_DIR_ENV).unwrap_or_else(|_| ".".into());
        cfg.set("out_dir", &dir);
    }
    Ok(cfg)
}

/// A value that is absent when the key resolved to the empty string.
fn opt<T: std::str::FromStr>(cfg: &RunConfig, key: &str) -> Result<Option<T>>
where
    T::Err: std::fmt::Display,
{
    match cfg.raw(key) {
        None | Some("") => Ok(None),
        Some(_) => cfg.get(key),
    }
}

fn req<T: std::str::FromStr>(cfg: &RunConfig, key: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    opt(cfg, key)?.ok_or_else(|| Error::InvalidArgument(format!("missing required key `{key}`")))
}

/// Output path: relative names land in `out_dir`.
fn output_path(cfg: &RunConfig, key: &str) -> Result<PathBuf> {
    let name: String = req(cfg, key)?;
    let dir: String = req(cfg, "out_dir")?;
    let path = Path::new(&dir).join(name);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    Ok(path)
}

fn input_path(cfg: &RunConfig, key: &str) -> Result<PathBuf> {
    let path = PathBuf::from(req::<String>(cfg, key)?);
    if !path.is_file() {
        return Err(Error::InvalidArgument(format!("`{key}` file {} does not exist", path.display())));
    }
    Ok(path)
}

fn cmd_generate(cfg: &RunConfig) -> Result<()> {
    let preset: String = req(cfg, "preset")?;
    let mut gen = match preset.as_str() {
        "identification" => GenConfig::default(),
        "validation" => GenConfig::validation(),
        other => return Err(Error::InvalidArgument(format!("unknown preset `{other}`"))),
    };
    if let Some(v) = opt(cfg, "seed")? {
        gen.seed = v;
    }
    if let Some(v) = opt(cfg, "n")? {
        gen.n = v;
    }
    if let Some(v) = opt(cfg, "ts")? {
        gen.ts = v;
    }
    if let Some(v) = opt(cfg, "bandwidth")? {
        gen.bandwidth = v;
    }
    if let Some(v) = opt(cfg, "input_std")? {
        gen.input_std = v;
    }
    if let Some(v) = opt(cfg, "noise_std_vc")? {
        gen.noise_std_vc = v;
    }
    if let Some(v) = opt(cfg, "noise_std_il")? {
        gen.noise_std_il = v;
    }
    if let Some(v) = opt(cfg, "voltage_only")? {
        gen.voltage_only = v;
    }
    let params = RlcParams {
        r: req(cfg, "r")?,
        c: req(cfg, "c")?,
        l0: req(cfg, "l0")?,
    };
    gen.validate()?;
    params.validate()?;

    let mut cfg = cfg.clone();
    if cfg.raw("output").is_some_and(str::is_empty) {
        cfg.set("output", &format!("{preset}.csv"));
    }
    let path = output_path(&cfg, "output")?;
    let data = gen_dataset(&gen, &params)?;
    data.write_csv(&path)?;

    println!("wrote {}", path.display());
    println!(
        "N = {}, Ts = {:e} s, span = {:e} s",
        data.len(),
        data.ts,
        data.ts * data.len() as f64
    );
    if let Some(snr) = data.snr_db() {
        for (name, s) in data.output_names.iter().zip(snr) {
            println!("SNR {name} = {s:.2} dB");
        }
    }
    Ok(())
}

/// Matrix literal: rows separated by `;`, entries by whitespace or commas.
fn parse_matrix(text: &str) -> Result<Tensor> {
    let rows = text
        .split(';')
        .map(|row| {
            row.split(|c: char| c == ',' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|e| Error::InvalidArgument(format!("matrix entry `{s}`: {e}")))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Tensor::from_rows(&rows)
}

fn build_model(cfg: &RunConfig, data: &Dataset) -> Result<Model> {
    let structure: String = req(cfg, "structure")?;
    let hidden: Vec<usize> = cfg.list("hidden")?.unwrap_or_default();
    let activation: Activation = req(cfg, "activation")?;
    let seed: u64 = req(cfg, "seed")?;
    let (n_u, n_y) = (data.n_u(), data.n_y());
    if structure == "io" {
        let lags = Lags::new(req(cfg, "n_a")?, req(cfg, "n_b")?);
        return Ok(IoModel::init(lags, n_y, n_u, &hidden, activation, seed)?.into());
    }
    let variant: SsVariant = structure.parse()?;
    let n_x = match variant {
        SsVariant::FullyObserved => n_y,
        SsVariant::Mechanical => 2 * n_y,
        _ => req(cfg, "n_x")?,
    };
    let mut config = SsConfig::new(variant, n_x, n_u, n_y, hidden);
    config.activation = activation;
    if variant == SsVariant::Mechanical {
        config.ts = data.ts;
    }
    if variant == SsVariant::Residual {
        config.linear = Some(LinearApprox {
            a: parse_matrix(&req::<String>(cfg, "linear_a")?)?,
            b: parse_matrix(&req::<String>(cfg, "linear_b")?)?,
            c: parse_matrix(&req::<String>(cfg, "linear_c")?)?,
        });
    }
    Ok(StateSpaceModel::init(config, seed)?.into())
}

fn train_config(cfg: &RunConfig) -> Result<TrainConfig> {
    Ok(TrainConfig {
        iterations: req(cfg, "iterations")?,
        lr: req(cfg, "lr")?,
        q: req(cfg, "q")?,
        m: req(cfg, "m")?,
        alpha: req(cfg, "alpha")?,
        optimizer: req::<OptimizerKind>(cfg, "optimizer")?,
        seed: req(cfg, "seed")?,
        start_selection: req::<StartSelection>(cfg, "start_selection")?,
        freeze_hidden: req(cfg, "freeze_hidden")?,
        normalize: req(cfg, "normalize")?,
    })
}

fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let data_path = input_path(cfg, "data")?;
    let method: TrainMethod = req(cfg, "method")?;
    let config = train_config(cfg)?;
    config.validate()?;
    let progress: usize = req(cfg, "progress")?;
    let model_path = output_path(cfg, "model_out")?;
    let log_path = output_path(cfg, "log_out")?;
    let report_path = output_path(cfg, "report_out")?;

    let data = Dataset::read_csv(&data_path)?;
    let model = build_model(cfg, &data)?;
    let hash = config_hash(cfg.entries().filter(|(k, _)| !NON_HASHED.contains(k)));

    let start = Instant::now();
    let mut observer = |r: &LossRecord| {
        if progress > 0 && (r.iteration + 1) % progress == 0 {
            eprintln!(
                "iter {:>7}  loss {:.6e}  fit {:.6e}  cons {:.6e}",
                r.iteration + 1,
                r.total,
                r.fit,
                r.consistency
            );
        }
    };
    let outcome = train_with(method, model, &data, &config, &mut observer)?;
    let wall = start.elapsed().as_secs_f64();

    let last = outcome.log.last();
    let provenance = Provenance {
        config_hash: hash.clone(),
        seed: config.seed,
        method: method.name().to_string(),
        iterations: config.iterations,
        final_total: last.map(|r| r.total),
        final_fit: last.map(|r| r.fit),
        final_consistency: last.map(|r| r.consistency),
    };
    ModelFile::from_model(&outcome.model, provenance).save(&model_path)?;
    outcome.log.write_csv(&log_path)?;

    let mut report = String::new();
    let _ = writeln!(report, "method = {}", method.name());
    let _ = writeln!(report, "model = {}", outcome.model.kind());
    let _ = writeln!(report, "parameters = {}", outcome.model.param_count());
    let _ = writeln!(report, "wall_seconds = {wall:.3}");
    let _ = writeln!(report, "iterations_logged = {}", outcome.log.records.len());
    let _ = writeln!(report, "iterations_skipped = {}", outcome.log.skipped.len());
    if let Some(r) = last {
        let _ = writeln!(report, "final_total = {:.12e}", r.total);
        let _ = writeln!(report, "final_fit = {:.12e}", r.fit);
        let _ = writeln!(report, "final_consistency = {:.12e}", r.consistency);
    }
    let _ = writeln!(report, "config_hash = {hash}");
    let _ = writeln!(report, "data_file = {}", data_path.display());
    for (k, v) in cfg.entries() {
        let _ = writeln!(report, "config.{k} = {v}");
    }
    std::fs::write(&report_path, &report)?;

    println!("trained {} with {} in {wall:.1} s", outcome.model.kind(), method.name());
    if let Some(r) = last {
        println!("final loss {:.6e} (fit {:.6e}, consistency {:.6e})", r.total, r.fit, r.consistency);
    }
    println!("wrote {}, {}, {}", model_path.display(), log_path.display(), report_path.display());
    Ok(())
}

fn initial_state_note(model: &Model) -> String {
    match model {
        Model::StateSpace(m) => match m.variant() {
            SsVariant::FullyObserved => "first measured output".into(),
            SsVariant::Mechanical => "first measured positions, velocities by forward difference".into(),
            _ => "zero".into(),
        },
        Model::Io(m) => format!("measured regressor at sample {}", m.lags().max()),
    }
}

fn cmd_eval(cfg: &RunConfig) -> Result<()> {
    let model_path = input_path(cfg, "model")?;
    let data_path = input_path(cfg, "data")?;
    let report_path = output_path(cfg, "report_out")?;
    let traj_path = output_path(cfg, "trajectory_out")?;
    let name = match opt::<String>(cfg, "name")? {
        Some(n) => n,
        None => data_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into()),
    };

    let model = ModelFile::load(&model_path)?.into_model()?;
    let data = Dataset::read_csv(&data_path)?;
    if model.n_u() != data.n_u() || model.n_y() != data.n_y() {
        return Err(Error::InvalidArgument(format!(
            "model expects {} inputs / {} outputs, dataset has {} / {}",
            model.n_u(),
            model.n_y(),
            data.n_u(),
            data.n_y()
        )));
    }
    let eval = evaluate(&model, &data, &name)?;

    let mut report = eval.report.to_key_value();
    let _ = writeln!(report, "initial_state = {}", initial_state_note(&model));
    std::fs::write(&report_path, report)?;
    std::fs::write(
        &traj_path,
        trajectory_csv(&data, &eval.reference, &eval.simulated, eval.report.offset),
    )?;

    print!("{}", eval.report);
    println!("wrote {}, {}", report_path.display(), traj_path.display());
    Ok(())
}

fn trajectory_csv(data: &Dataset, reference: &Tensor, simulated: &Tensor, offset: usize) -> String {
    let mut out = String::from("time");
    for n in &data.output_names {
        let _ = write!(out, ",ref_{n}");
    }
    for n in &data.output_names {
        let _ = write!(out, ",sim_{n}");
    }
    out.push('\n');
    for k in 0..reference.leading() {
        let _ = write!(out, "{:.16e}", (offset + k) as f64 * data.ts);
        for v in reference.row(k).iter().chain(simulated.row(k)) {
            let _ = write!(out, ",{v:.16e}");
        }
        out.push('\n');
    }
    out
}
