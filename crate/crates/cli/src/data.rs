//! CSV ingestion with explicit column mapping.

use std::path::Path;

use rand::seq::SliceRandom;
use tailweight::quantile_boot::stream_rng;
use tailweight::LossSample;

use crate::error::{CliError, CliResult};

/// Minimum rows for threshold selection.
pub const MIN_ROWS: usize = 100;

/// Reads the loss column (and optional group column) of a headed CSV.
pub fn read_losses(path: &Path, loss_column: &str, group_column: Option<&str>, delimiter: char) -> CliResult<LossSample> {
    let delim = u8::try_from(delimiter).map_err(|_| CliError::Input(format!("delimiter `{delimiter}` is not ASCII")))?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delim)
        .has_headers(true)
        .from_path(path)
        .map_err(|e| CliError::Input(format!("cannot open {}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| CliError::Input(format!("{}: unreadable header: {e}", path.display())))?
        .clone();
    let column = |name: &str| {
        headers.iter().position(|h| h.trim() == name).ok_or_else(|| {
            let found: Vec<&str> = headers.iter().collect();
            CliError::Input(format!("{}: column `{name}` not in header [{}]", path.display(), found.join(", ")))
        })
    };
    let loss_idx = column(loss_column)?;
    let group_idx = group_column.map(column).transpose()?;
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            CliError::Input(format!("{}: line {line}: {e}", path.display()))
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let field = record.get(loss_idx).unwrap_or("").trim();
        let v: f64 = field
            .parse()
            .map_err(|_| CliError::Input(format!("{}: line {line}: cannot parse `{field}` as a loss", path.display())))?;
        if !(v > 0.0 && v.is_finite()) {
            return Err(CliError::Input(format!("{}: line {line}: loss {v} is not positive and finite", path.display())));
        }
        values.push(v);
        if let Some(g) = group_idx {
            labels.push(record.get(g).unwrap_or("").trim().to_string());
        }
    }
    if values.is_empty() {
        return Err(CliError::Input(format!("{}: no data rows", path.display())));
    }
    let sample = if group_idx.is_some() { LossSample::with_labels(values, labels) } else { LossSample::new(values) };
    Ok(sample?)
}

/// Seeded shuffle, then contiguous train/calibration/test parts. A zero
/// calibration fraction returns the training part as calibration data.
pub fn split(data: &LossSample, fractions: [f64; 3], seed: u64) -> CliResult<(LossSample, LossSample, LossSample)> {
    let n = data.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(seed, u64::MAX));
    let n_train = (fractions[0] * n as f64).round() as usize;
    let n_cal = ((fractions[1] * n as f64).round() as usize).min(n - n_train);
    let part = |idx: &[usize]| -> CliResult<LossSample> {
        let values = idx.iter().map(|&i| data.values()[i]).collect();
        Ok(match data.labels() {
            Some(l) => LossSample::with_labels(values, idx.iter().map(|&i| l[i].clone()).collect())?,
            None => LossSample::new(values)?,
        })
    };
    if n_train == 0 || n_train + n_cal >= n {
        return Err(CliError::Input(format!("split {fractions:?} leaves an empty part of {n} rows")));
    }
    let train = part(&order[..n_train])?;
    let calibration = if n_cal == 0 { train.clone() } else { part(&order[n_train..n_train + n_cal])? };
    let test = part(&order[n_train + n_cal..])?;
    Ok((train, calibration, test))
}
