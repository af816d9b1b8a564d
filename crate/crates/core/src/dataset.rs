//! Input/output datasets and their CSV representation.
//!
//! Columns are `time`, then `u_<name>` per input, `y_<name>` per measured
//! output and optionally `yo_<name>` per noise-free output, e.g.
//! `time,u_vin,y_vc,y_il,yo_vc,yo_il`.

use std::fmt::Write as _;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// Sample time in seconds.
    pub ts: f64,
    /// `[N, n_u]`
    pub inputs: Tensor,
    /// Measured outputs, `[N, n_y]`.
    pub outputs: Tensor,
    /// Noise-free outputs when known, `[N, n_y]`.
    pub noise_free: Option<Tensor>,
    pub input_names: Vec<String>,
    pub output_names: Vec<String>,
}

impl Dataset {
    pub fn new(ts: f64, inputs: Tensor, outputs: Tensor, noise_free: Option<Tensor>) -> Result<Self> {
        let n_u = inputs.last_dim();
        let n_y = outputs.last_dim();
        let ds = Dataset {
            ts,
            inputs,
            outputs,
            noise_free,
            input_names: (0..n_u).map(|i| format!("u{i}")).collect(),
            output_names: (0..n_y).map(|i| format!("y{i}")).collect(),
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn with_names(mut self, inputs: &[&str], outputs: &[&str]) -> Result<Self> {
        self.input_names = inputs.iter().map(|s| s.to_string()).collect();
        self.output_names = outputs.iter().map(|s| s.to_string()).collect();
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        if self.inputs.rank() != 2 || self.outputs.rank() != 2 {
            return Err(Error::shape("dataset", self.inputs.shape(), self.outputs.shape()));
        }
        if self.inputs.shape()[0] != self.outputs.shape()[0] {
            return Err(Error::shape("dataset lengths", self.inputs.shape(), self.outputs.shape()));
        }
        if let Some(yo) = &self.noise_free {
            if yo.shape() != self.outputs.shape() {
                return Err(Error::shape("dataset noise-free outputs", yo.shape(), self.outputs.shape()));
            }
        }
        if self.input_names.len() != self.n_u() || self.output_names.len() != self.n_y() {
            return Err(Error::InvalidArgument("channel names do not match channel counts".into()));
        }
        if !(self.ts > 0.0) {
            return Err(Error::InvalidArgument(format!("sample time must be positive, got {}", self.ts)));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.inputs.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_u(&self) -> usize {
        self.inputs.shape()[1]
    }

    pub fn n_y(&self) -> usize {
        self.outputs.shape()[1]
    }

    /// Noise-free outputs if present, else measured ones.
    pub fn reference(&self) -> &Tensor {
        self.noise_free.as_ref().unwrap_or(&self.outputs)
    }

    /// Per-channel `10 log10(mean(yo^2) / mean((y - yo)^2))` in dB.
    pub fn snr_db(&self) -> Option<Vec<f64>> {
        let yo = self.noise_free.as_ref()?;
        let n_y = self.n_y();
        let mut signal = vec![0.0; n_y];
        let mut noise = vec![0.0; n_y];
        for k in 0..self.len() {
            for c in 0..n_y {
                let s = yo.row(k)[c];
                let e = self.outputs.row(k)[c] - s;
                signal[c] += s * s;
                noise[c] += e * e;
            }
        }
        Some(signal.iter().zip(&noise).map(|(s, n)| 10.0 * (s / n).log10()).collect())
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("time");
        for n in &self.input_names {
            let _ = write!(out, ",u_{n}");
        }
        for n in &self.output_names {
            let _ = write!(out, ",y_{n}");
        }
        if self.noise_free.is_some() {
            for n in &self.output_names {
                let _ = write!(out, ",yo_{n}");
            }
        }
        out.push('\n');
        for k in 0..self.len() {
            let _ = write!(out, "{:.16e}", k as f64 * self.ts);
            let rows = [Some(&self.inputs), Some(&self.outputs), self.noise_free.as_ref()];
            for t in rows.into_iter().flatten() {
                for v in t.row(k) {
                    let _ = write!(out, ",{v:.16e}");
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string())?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_csv_str(&text)
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
        let header = reader
            .headers()
            .map_err(|e| Error::Parse {
                line: 1,
                message: e.to_string(),
            })?
            .clone();
        let cols: Vec<&str> = header.iter().map(str::trim).collect();
        if cols.first() != Some(&"time") {
            return Err(Error::Parse {
                line: 1,
                message: "first column must be `time`".into(),
            });
        }
        let mut u_cols = Vec::new();
        let mut y_cols = Vec::new();
        let mut yo_cols = Vec::new();
        for (i, c) in cols.iter().enumerate().skip(1) {
            if let Some(n) = c.strip_prefix("yo_") {
                yo_cols.push((i, n.to_string()));
            } else if let Some(n) = c.strip_prefix("y_") {
                y_cols.push((i, n.to_string()));
            } else if let Some(n) = c.strip_prefix("u_") {
                u_cols.push((i, n.to_string()));
            } else {
                return Err(Error::Parse {
                    line: 1,
                    message: format!("unrecognized column `{c}`"),
                });
            }
        }
        if u_cols.is_empty() || y_cols.is_empty() {
            return Err(Error::Parse {
                line: 1,
                message: "need at least one u_ and one y_ column".into(),
            });
        }
        let has_yo = !yo_cols.is_empty();
        if has_yo {
            let y_names: Vec<_> = y_cols.iter().map(|c| &c.1).collect();
            let yo_names: Vec<_> = yo_cols.iter().map(|c| &c.1).collect();
            if y_names != yo_names {
                return Err(Error::Parse {
                    line: 1,
                    message: "yo_ columns must mirror the y_ columns".into(),
                });
            }
        }
        let (mut time, mut u, mut y, mut yo) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (r, record) in reader.records().enumerate() {
            let line = r + 2;
            let record = record.map_err(|e| Error::Parse {
                line,
                message: e.to_string(),
            })?;
            let field = |i: usize| -> Result<f64> {
                let raw = record.get(i).ok_or_else(|| Error::Parse {
                    line,
                    message: format!("missing column {}", i + 1),
                })?;
                raw.trim().parse::<f64>().map_err(|e| Error::Parse {
                    line,
                    message: format!("column `{}`: {e}", cols[i]),
                })
            };
            time.push(field(0)?);
            for (i, _) in &u_cols {
                u.push(field(*i)?);
            }
            for (i, _) in &y_cols {
                y.push(field(*i)?);
            }
            for (i, _) in &yo_cols {
                yo.push(field(*i)?);
            }
        }
        let n = time.len();
        if n < 2 {
            return Err(Error::Parse {
                line: n + 1,
                message: "dataset needs at least two samples".into(),
            });
        }
        let ts = time[1] - time[0];
        let inputs = Tensor::new(vec![n, u_cols.len()], u)?;
        let outputs = Tensor::new(vec![n, y_cols.len()], y)?;
        let noise_free = if has_yo {
            Some(Tensor::new(vec![n, yo_cols.len()], yo)?)
        } else {
            None
        };
        let u_names: Vec<&str> = u_cols.iter().map(|c| c.1.as_str()).collect();
        let y_names: Vec<&str> = y_cols.iter().map(|c| c.1.as_str()).collect();
        Dataset::new(ts, inputs, outputs, noise_free)?.with_names(&u_names, &y_names)
    }
}
