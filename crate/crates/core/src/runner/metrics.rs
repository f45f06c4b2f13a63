use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const METRICS_HEADER: &str = "iter,train_loss,val_acc_quantized,val_acc_continuous,beta,lr,elapsed_seconds";

/// One evaluation point. `beta` and `lr` are the values in effect for the
/// next iteration, `iter` the number of completed iterations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub iter: u64,
    pub train_loss: f64,
    pub val_acc_quantized: f64,
    pub val_acc_continuous: f64,
    pub beta: f64,
    pub lr: f64,
    pub elapsed_seconds: f64,
}

/// `printf("%.9g")`.
pub fn format_sig9(x: f64) -> String {
    const DIGITS: i32 = 9;
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    if !x.is_finite() {
        return if x.is_nan() {
            "nan".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let sci = format!("{:.*e}", (DIGITS - 1) as usize, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..DIGITS).contains(&exp) {
        let mantissa = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (DIGITS - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.iter,
            format_sig9(self.train_loss),
            format_sig9(self.val_acc_quantized),
            format_sig9(self.val_acc_continuous),
            format_sig9(self.beta),
            format_sig9(self.lr),
            format_sig9(self.elapsed_seconds)
        )
    }

    pub fn from_csv(line: &str) -> Option<MetricsRow> {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 7 {
            return None;
        }
        Some(MetricsRow {
            iter: f[0].parse().ok()?,
            train_loss: f[1].parse().ok()?,
            val_acc_quantized: f[2].parse().ok()?,
            val_acc_continuous: f[3].parse().ok()?,
            beta: f[4].parse().ok()?,
            lr: f[5].parse().ok()?,
            elapsed_seconds: f[6].parse().ok()?,
        })
    }
}

/// Appends rows to a metrics CSV, flushing after each one.
pub struct MetricsWriter {
    path: PathBuf,
    file: File,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
        writeln!(file, "{METRICS_HEADER}").map_err(|e| Error::io(path, e))?;
        Ok(MetricsWriter {
            path: path.to_path_buf(),
            file,
        })
    }

    pub fn push(&mut self, row: &MetricsRow) -> Result<()> {
        writeln!(self.file, "{}", row.to_csv())
            .and_then(|_| self.file.flush())
            .map_err(|e| Error::io(&self.path, e))
    }
}

pub fn emit_metrics(rows: &[MetricsRow], path: &Path) -> Result<()> {
    let mut w = MetricsWriter::create(path)?;
    for row in rows {
        w.push(row)?;
    }
    Ok(())
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if i == 0 {
            if line.trim() != METRICS_HEADER {
                return Err(Error::Parse {
                    line: 1,
                    message: format!("unexpected metrics header `{line}`"),
                });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        rows.push(MetricsRow::from_csv(&line).ok_or_else(|| Error::Parse {
            line: i + 1,
            message: format!("malformed metrics row `{line}`"),
        })?);
    }
    Ok(rows)
}
