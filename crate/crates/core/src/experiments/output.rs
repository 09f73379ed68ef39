//! Sweep rows and their CSV form.

use std::cmp::Ordering;
use std::io::Write;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "experiment,N,trial,param,risk,optimal_risk,excess,bound,wall_time_s";

/// One trained model evaluated at one grid point. `param` is the target
/// noise level for denoising rows and the target fraction for CS rows.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct SweepRow {
    pub experiment: String,
    #[serde(rename = "N")]
    pub n_train: usize,
    pub trial: usize,
    pub param: f64,
    pub risk: f64,
    pub optimal_risk: f64,
    pub excess: f64,
    /// NaN where no bound applies.
    pub bound: f64,
    pub wall_time_s: f64,
}

/// A grid point whose training failed.
#[derive(Debug, Clone, PartialEq)]
pub struct CellFailure {
    pub experiment: String,
    pub n_train: usize,
    pub trial: usize,
    pub param: f64,
    pub reason: String,
    pub exit_code: i32,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub failures: Vec<CellFailure>,
}

impl SweepResult {
    /// Orders rows by `(param, N, trial)`, then experiment name.
    pub fn sort(&mut self) {
        self.rows.sort_by(row_order);
        self.failures.sort_by(|a, b| {
            a.param
                .total_cmp(&b.param)
                .then(a.n_train.cmp(&b.n_train))
                .then(a.trial.cmp(&b.trial))
                .then_with(|| a.experiment.cmp(&b.experiment))
        });
    }
}

fn row_order(a: &SweepRow, b: &SweepRow) -> Ordering {
    a.param
        .total_cmp(&b.param)
        .then(a.n_train.cmp(&b.n_train))
        .then(a.trial.cmp(&b.trial))
        .then_with(|| a.experiment.cmp(&b.experiment))
}

fn fmt_float(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{v:.16e}")
    }
}

/// CSV text with rows in sorted order and 17 significant digits.
pub fn to_csv_string(result: &SweepResult) -> String {
    let mut rows: Vec<&SweepRow> = result.rows.iter().collect();
    rows.sort_by(|a, b| row_order(a, b));
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.experiment,
            r.n_train,
            r.trial,
            fmt_float(r.param),
            fmt_float(r.risk),
            fmt_float(r.optimal_risk),
            fmt_float(r.excess),
            fmt_float(r.bound),
            fmt_float(r.wall_time_s),
        ));
    }
    out
}

pub fn emit_csv(result: &SweepResult, path: &Path) -> Result<()> {
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(to_csv_string(result).as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_csv(path: &Path) -> Result<Vec<SweepRow>> {
    let csv_err = |source| Error::Csv { path: path.to_path_buf(), source };
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    let header = reader.headers().map_err(csv_err)?.iter().collect::<Vec<_>>().join(",");
    if header != CSV_HEADER {
        return Err(Error::Config(format!("unexpected CSV header {header:?}")));
    }
    reader.deserialize().map(|r| r.map_err(csv_err)).collect()
}
