//! Per-iteration CSV logs.

use std::io::Write;

use crate::error::Result;
use crate::optimizers::{IterationRecord, RunLog};

pub const CSV_HEADER: &str =
    "iter,samples_seen,batch_size,loss,grad_norm_avg,rho,delta_hat,eta,step_size,fallback,p_current,angle_stat,hessian_stat";

/// One CSV row. Undefined quantities are NaN; a loss that was not
/// evaluated is `None` and written as an empty cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub iter: usize,
    pub samples_seen: u64,
    pub batch_size: usize,
    pub loss: Option<f64>,
    pub grad_norm_avg: f64,
    pub rho: f64,
    pub delta_hat: f64,
    pub eta: f64,
    pub step_size: f64,
    pub fallback: bool,
    pub p_current: f64,
    pub angle_stat: f64,
    pub hessian_stat: f64,
}

impl From<&IterationRecord> for MetricsRow {
    fn from(r: &IterationRecord) -> Self {
        Self {
            iter: r.iter,
            samples_seen: r.samples_seen,
            batch_size: r.step.batch_size,
            loss: r.loss,
            grad_norm_avg: r.grad_norm_avg,
            rho: r.step.rho,
            delta_hat: r.step.delta_hat,
            eta: r.step.eta,
            step_size: r.step.t,
            fallback: r.step.fallback,
            p_current: r.p_current,
            angle_stat: r.angle_stat,
            hessian_stat: r.hessian_stat,
        }
    }
}

/// 17 significant digits, enough to round-trip any f64.
pub fn format_float(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{v:.16e}")
    }
}

impl MetricsRow {
    pub fn to_csv_line(&self) -> String {
        let floats = [
            self.grad_norm_avg,
            self.rho,
            self.delta_hat,
            self.eta,
            self.step_size,
        ]
        .map(format_float);
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.iter,
            self.samples_seen,
            self.batch_size,
            self.loss.map(format_float).unwrap_or_default(),
            floats[0],
            floats[1],
            floats[2],
            floats[3],
            floats[4],
            u8::from(self.fallback),
            format_float(self.p_current),
            format_float(self.angle_stat),
            format_float(self.hessian_stat),
        )
    }
}

pub fn rows(log: &RunLog) -> Vec<MetricsRow> {
    log.records.iter().map(MetricsRow::from).collect()
}

pub fn write_csv<W: Write>(log: &RunLog, mut out: W) -> Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for row in rows(log) {
        writeln!(out, "{}", row.to_csv_line())?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 123456789.12345679, f64::MIN_POSITIVE] {
            let s = format_float(v);
            assert_eq!(s.parse::<f64>().unwrap(), v, "{s}");
        }
        assert_eq!(format_float(f64::NAN), "NaN");
    }

    #[test]
    fn row_has_one_cell_per_column() {
        let row = MetricsRow {
            iter: 3,
            samples_seen: 48,
            batch_size: 16,
            loss: None,
            grad_norm_avg: 0.5,
            rho: 0.25,
            delta_hat: 0.5,
            eta: 0.5,
            step_size: 1.0,
            fallback: true,
            p_current: 0.1,
            angle_stat: f64::NAN,
            hessian_stat: f64::NAN,
        };
        let line = row.to_csv_line();
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells.len(), CSV_HEADER.split(',').count());
        assert_eq!(cells[3], "");
        assert_eq!(cells[9], "1");
        assert_eq!(&cells[..3], ["3", "48", "16"]);
    }
}
