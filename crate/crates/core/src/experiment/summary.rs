//! Per-cell averages of trial records and the CSV files that carry them.

use std::path::Path;

use crate::error::{Error, Result};
use crate::experiment::config::Method;
use crate::experiment::runner::{TrialRecord, CSV_HEADER};

pub const SUMMARY_HEADER: &str = "bits,snr_db,method,mean_nmse_db,trials,errors";

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub bits: u32,
    pub snr_db: f64,
    pub method: Method,
    /// `10·log10` of the mean linear NMSE over successful trials; NaN if none.
    pub mean_nmse_db: f64,
    /// Successful trials.
    pub trials: usize,
    pub errors: usize,
}

impl SummaryRow {
    pub fn to_csv_line(&self) -> String {
        let mean = if self.mean_nmse_db.is_nan() { "err".to_string() } else { self.mean_nmse_db.to_string() };
        format!("{},{},{},{},{},{}", self.bits, self.snr_db, self.method, mean, self.trials, self.errors)
    }
}

/// Groups by (bits, SNR, method) in order of first appearance and averages
/// NMSE in the linear domain.
pub fn summarize(records: &[TrialRecord]) -> Result<Vec<SummaryRow>> {
    if records.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut keys: Vec<(u32, u64, Method)> = Vec::new();
    let mut acc: Vec<(f64, usize, usize)> = Vec::new();
    for r in records {
        let key = (r.bits, r.snr_db.to_bits(), r.method);
        let i = match keys.iter().position(|k| *k == key) {
            Some(i) => i,
            None => {
                keys.push(key);
                acc.push((0.0, 0, 0));
                keys.len() - 1
            }
        };
        if r.is_err() {
            acc[i].2 += 1;
        } else {
            acc[i].0 += 10f64.powf(r.nmse_db / 10.0);
            acc[i].1 += 1;
        }
    }
    Ok(keys
        .into_iter()
        .zip(acc)
        .map(|((bits, snr, method), (sum, n, errors))| SummaryRow {
            bits,
            snr_db: f64::from_bits(snr),
            method,
            mean_nmse_db: if n > 0 { 10.0 * (sum / n as f64).log10() } else { f64::NAN },
            trials: n,
            errors,
        })
        .collect())
}

fn parse<T: std::str::FromStr>(field: &str, line: usize, s: &str) -> Result<T> {
    s.parse().map_err(|_| Error::Config { field: format!("line {line}: {field}"), message: format!("cannot parse {s:?}") })
}

fn parse_opt(field: &str, line: usize, s: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        Ok(None)
    } else {
        parse(field, line, s).map(Some)
    }
}

/// Reads a results CSV written by the experiment runner.
pub fn read_records(path: &Path) -> Result<Vec<TrialRecord>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.join(",") != CSV_HEADER {
        return Err(Error::Config { field: "header".into(), message: format!("unexpected columns {}", header.join(",")) });
    }
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let line = i + 2;
        let f = |k: usize| row.get(k).unwrap_or("");
        let method = Method::parse(f(3))
            .ok_or_else(|| Error::Config { field: format!("line {line}: method"), message: format!("unknown {:?}", f(3)) })?;
        let nmse_db = if f(4) == "err" { f64::NAN } else { parse("nmse_db", line, f(4))? };
        out.push(TrialRecord {
            trial: parse("trial", line, f(0))?,
            bits: parse("bits", line, f(1))?,
            snr_db: parse("snr_db", line, f(2))?,
            method,
            nmse_db,
            iterations: parse("iterations", line, f(5))?,
            runtime_ms: parse("runtime_ms", line, f(6))?,
            tau_w_hat: parse_opt("tau_w_hat", line, f(7))?,
            kappa_hat: parse_opt("kappa_hat", line, f(8))?,
            converged: parse("converged", line, f(9))?,
            seed: parse("seed", line, f(10))?,
        });
    }
    Ok(out)
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut text = String::from(SUMMARY_HEADER);
    text.push('\n');
    for r in rows {
        text.push_str(&r.to_csv_line());
        text.push('\n');
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}
