//! Per-slot metrics rows and their CSV form.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const METRICS_HEADER: [&str; 13] = [
    "slot",
    "scheme",
    "seed",
    "lambda",
    "expert",
    "mcs",
    "throughput",
    "genie_throughput",
    "interactions",
    "wall_clock_ms",
    "stage1_loss",
    "stage2_pred_reward",
    "filter_overrides",
];

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub slot: u64,
    pub scheme: String,
    pub seed: u64,
    pub lambda: f64,
    /// One-based expert label.
    pub expert: u8,
    pub mcs: usize,
    pub throughput: f64,
    pub genie_throughput: f64,
    /// Cumulative real interactions including this slot.
    pub interactions: u64,
    pub wall_clock_ms: f64,
    pub stage1_loss: Option<f64>,
    pub stage2_pred_reward: Option<f64>,
    /// Cumulative filter overrides.
    pub filter_overrides: u64,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MetricsRow {
    fn record(&self) -> [String; 13] {
        [
            self.slot.to_string(),
            self.scheme.clone(),
            self.seed.to_string(),
            self.lambda.to_string(),
            self.expert.to_string(),
            self.mcs.to_string(),
            self.throughput.to_string(),
            self.genie_throughput.to_string(),
            self.interactions.to_string(),
            format!("{:.3}", self.wall_clock_ms),
            opt(self.stage1_loss),
            opt(self.stage2_pred_reward),
            self.filter_overrides.to_string(),
        ]
    }
}

/// Writes rows to `path` after a `# mcs provenance` comment line.
pub fn write_metrics(path: &Path, provenance: &str, rows: &[MetricsRow]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    writeln!(out, "# mcs provenance: {provenance}").map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    w.write_record(METRICS_HEADER).map_err(csv_err)?;
    for r in rows {
        w.write_record(r.record()).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes a header and string records as CSV.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    let csv_err = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(r).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len().max(1) as f64
}

/// Population standard deviation.
pub fn std_dev(values: &[f64]) -> f64 {
    let m = mean(values);
    (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / values.len().max(1) as f64).sqrt()
}

/// Median; the mean of the two middle values for even lengths.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Half-width of a normal-approximation 95% interval for the mean.
pub fn ci95(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(values);
    let sample_var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    1.96 * (sample_var / n as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn statistics() {
        assert_eq!(mean(&[1.0, 2.0, 6.0]), 3.0);
        assert!((std_dev(&[1.0, 2.0, 6.0]) - (14.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(ci95(&[5.0]), 0.0);
    }

    #[test]
    fn csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let row = MetricsRow {
            slot: 0,
            scheme: "frozen".into(),
            seed: 1,
            lambda: 0.1,
            expert: 2,
            mcs: 3,
            throughput: 1.5,
            genie_throughput: 2.0,
            interactions: 1,
            wall_clock_ms: 0.25,
            stage1_loss: None,
            stage2_pred_reward: Some(0.5),
            filter_overrides: 0,
        };
        write_metrics(&path, "mcs_rates=1", &[row]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# mcs provenance: mcs_rates=1");
        assert_eq!(lines[1], METRICS_HEADER.join(","));
        assert_eq!(lines[2], "0,frozen,1,0.1,2,3,1.5,2,1,0.250,,0.5,0");
    }
}
