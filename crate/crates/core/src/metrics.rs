//! Per-channel fit indices of simulated against reference outputs.

use std::fmt::{self, Write as _};
use std::path::Path;

use crate::autodiff::Tensor;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::simulation::simulate_dataset;
use crate::structures::Model;

fn check_pair(reference: &Tensor, estimate: &Tensor, channel: usize) -> Result<()> {
    if reference.shape() != estimate.shape() || reference.rank() != 2 {
        return Err(Error::shape("fit index", reference.shape(), estimate.shape()));
    }
    if channel >= reference.last_dim() {
        return Err(Error::InvalidArgument(format!(
            "channel {channel} out of range for {} channels",
            reference.last_dim()
        )));
    }
    if reference.leading() < 2 {
        return Err(Error::UndefinedMetric("fit index needs at least two samples".into()));
    }
    Ok(())
}

/// Coefficient of determination `1 - SS_res / SS_tot` of one channel of `[N, c]` sequences.
pub fn r_squared(reference: &Tensor, estimate: &Tensor, channel: usize) -> Result<f64> {
    check_pair(reference, estimate, channel)?;
    let n = reference.leading();
    let mean = (0..n).map(|k| reference.row(k)[channel]).sum::<f64>() / n as f64;
    let (mut res, mut tot) = (0.0, 0.0);
    for k in 0..n {
        let r = reference.row(k)[channel];
        res += (r - estimate.row(k)[channel]).powi(2);
        tot += (r - mean).powi(2);
    }
    if tot == 0.0 {
        return Err(Error::UndefinedMetric(format!("reference channel {channel} has zero variance")));
    }
    Ok(1.0 - res / tot)
}

pub fn rmse(reference: &Tensor, estimate: &Tensor, channel: usize) -> Result<f64> {
    check_pair(reference, estimate, channel)?;
    let n = reference.leading();
    let sum: f64 = (0..n).map(|k| (reference.row(k)[channel] - estimate.row(k)[channel]).powi(2)).sum();
    Ok((sum / n as f64).sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitReport {
    pub dataset: String,
    pub model: String,
    pub channels: Vec<String>,
    pub r2: Vec<f64>,
    pub rmse: Vec<f64>,
    /// First sample included in the comparison.
    pub offset: usize,
    /// Whether the reference was the noise-free output.
    pub noise_free_reference: bool,
}

impl FitReport {
    /// Flat `key = value` text.
    pub fn to_key_value(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "dataset = {}", self.dataset);
        let _ = writeln!(out, "model = {}", self.model);
        let reference = if self.noise_free_reference { "noise-free" } else { "measured" };
        let _ = writeln!(out, "reference = {reference}");
        let _ = writeln!(out, "offset = {}", self.offset);
        for (i, c) in self.channels.iter().enumerate() {
            let _ = writeln!(out, "r2_{c} = {:.12}", self.r2[i]);
            let _ = writeln!(out, "rmse_{c} = {:.12e}", self.rmse[i]);
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_key_value())?;
        Ok(())
    }
}

impl fmt::Display for FitReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let reference = if self.noise_free_reference { "noise-free" } else { "measured" };
        writeln!(
            f,
            "{} on {} ({reference} reference, from sample {})",
            self.model, self.dataset, self.offset
        )?;
        let width = self.channels.iter().map(String::len).max().unwrap_or(0).max(7);
        writeln!(f, "{:<width$}  {:>10}  {:>12}", "channel", "R2", "RMSE")?;
        for (i, c) in self.channels.iter().enumerate() {
            writeln!(f, "{c:<width$}  {:>10.5}  {:>12.5e}", self.r2[i], self.rmse[i])?;
        }
        Ok(())
    }
}

/// Open-loop simulation outputs together with the aligned reference.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub report: FitReport,
    pub simulated: Tensor,
    pub reference: Tensor,
}

/// Simulates `model` over `data` and scores it against the noise-free
/// outputs when present, otherwise the measured ones.
pub fn evaluate(model: &Model, data: &Dataset, dataset_name: &str) -> Result<Evaluation> {
    let sim = simulate_dataset(model, data)?;
    let reference = data.reference().rows(sim.offset, data.len());
    let channels = data.output_names.clone();
    let mut r2 = Vec::with_capacity(channels.len());
    let mut errs = Vec::with_capacity(channels.len());
    for c in 0..channels.len() {
        r2.push(r_squared(&reference, &sim.outputs, c)?);
        errs.push(rmse(&reference, &sim.outputs, c)?);
    }
    Ok(Evaluation {
        report: FitReport {
            dataset: dataset_name.to_string(),
            model: model.kind(),
            channels,
            r2,
            rmse: errs,
            offset: sim.offset,
            noise_free_reference: data.noise_free.is_some(),
        },
        simulated: sim.outputs,
        reference,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn col(v: &[f64]) -> Tensor {
        Tensor::new(vec![v.len(), 1], v.to_vec()).unwrap()
    }

    #[test]
    fn r2_examples() {
        let y = col(&[0.0, 1.0, 2.0, 3.0]);
        assert_eq!(r_squared(&y, &y, 0).unwrap(), 1.0);
        assert_eq!(r_squared(&y, &col(&[1.5; 4]), 0).unwrap(), 0.0);
        assert!((r_squared(&y, &col(&[0.0, 1.0, 2.0, 4.0]), 0).unwrap() - 0.8).abs() < 1e-15);
        assert!((rmse(&y, &col(&[0.0, 1.0, 2.0, 5.0]), 0).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn constant_reference_is_undefined() {
        let y = col(&[2.0; 5]);
        assert!(matches!(r_squared(&y, &y, 0), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn extra_noise_lowers_r2_on_average() {
        let n = 200;
        let reference = col(&(0..n).map(|k| (k as f64 * 0.1).sin()).collect::<Vec<_>>());
        let mut worse = 0;
        for seed in 0..30 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut noise = || -> f64 { StandardNormal.sample(&mut rng) };
            let good: Vec<f64> = reference.data().iter().map(|v| v + 0.1 * noise()).collect();
            let bad: Vec<f64> = good.iter().map(|v| v + 0.3 * noise()).collect();
            if r_squared(&reference, &col(&bad), 0).unwrap() < r_squared(&reference, &col(&good), 0).unwrap() {
                worse += 1;
            }
        }
        assert!(worse >= 28, "{worse}");
    }

    #[test]
    fn report_formats() {
        let report = FitReport {
            dataset: "val".into(),
            model: "io".into(),
            channels: vec!["vc".into()],
            r2: vec![0.99],
            rmse: vec![1.5],
            offset: 2,
            noise_free_reference: true,
        };
        let kv = report.to_key_value();
        assert!(kv.contains("r2_vc = 0.990000000000"));
        assert!(kv.contains("reference = noise-free"));
        assert!(report.to_string().contains("vc"));
    }

    proptest! {
        #[test]
        fn affine_invariance(
            values in prop::collection::vec(-5.0f64..5.0, 16),
            a in prop::sample::select(vec![-3.0, -0.5, 0.25, 2.0, 10.0]),
            b in -100.0f64..100.0,
        ) {
            let reference = col(&values[..8]);
            let estimate = col(&values[8..]);
            prop_assume!(r_squared(&reference, &reference, 0).is_ok());
            let base = r_squared(&reference, &estimate, 0).unwrap();
            let moved = r_squared(&reference.map(|v| a * v + b), &estimate.map(|v| a * v + b), 0).unwrap();
            prop_assert!((base - moved).abs() < 1e-12 * base.abs().max(1.0));
        }
    }
}
