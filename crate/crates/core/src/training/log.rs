use std::fmt::Write as _;
use std::path::Path;

use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub iteration: usize,
    pub total: f64,
    pub fit: f64,
    pub consistency: f64,
    /// Seconds since the start of training when the iteration finished.
    pub wall_seconds: f64,
}

/// Per-iteration losses plus the iterations abandoned because the rollout diverged.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossLog {
    pub records: Vec<LossRecord>,
    pub skipped: Vec<usize>,
}

impl LossLog {
    pub fn last(&self) -> Option<&LossRecord> {
        self.records.last()
    }

    /// Loss values without timing, for reproducibility comparisons.
    pub fn losses(&self) -> Vec<(f64, f64, f64)> {
        self.records.iter().map(|r| (r.total, r.fit, r.consistency)).collect()
    }

    /// Wall time spent in each recorded iteration.
    pub fn iteration_seconds(&self) -> Vec<f64> {
        let mut prev = 0.0;
        self.records
            .iter()
            .map(|r| {
                let d = r.wall_seconds - prev;
                prev = r.wall_seconds;
                d
            })
            .collect()
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("iteration,total,fit,consistency,wall_seconds\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{:.16e},{:.16e},{:.16e},{:.6}",
                r.iteration, r.total, r.fit, r.consistency, r.wall_seconds
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let log = LossLog {
            records: vec![LossRecord {
                iteration: 0,
                total: 1.5,
                fit: 2.0,
                consistency: 1.0,
                wall_seconds: 0.25,
            }],
            skipped: vec![],
        };
        let text = log.to_csv_string();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("iteration,total,fit,consistency,wall_seconds"));
        let fields: Vec<f64> = lines.next().unwrap().split(',').map(|f| f.parse().unwrap()).collect();
        assert_eq!(fields, vec![0.0, 1.5, 2.0, 1.0, 0.25]);
        assert_eq!(log.iteration_seconds(), vec![0.25]);
    }
}
