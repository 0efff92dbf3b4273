//! Turning a univariate time series into consecutive-state pairs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamics::SamplePairs;
use crate::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestSpec {
    pub value_column: String,
    /// Column holding sortable (e.g. ISO 8601) dates; absent puts every pair
    /// in the training split.
    pub date_column: Option<String>,
    /// Pairs whose target date is `<= train_until` train the model.
    pub train_until: Option<String>,
    /// Pairs after `train_until` and `<= validation_until` validate it; the
    /// remainder form the test split.
    pub validation_until: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ingested {
    pub series: Vec<f64>,
    pub dates: Option<Vec<String>>,
    pub train: Option<SamplePairs>,
    pub validation: Option<SamplePairs>,
    pub test: Option<SamplePairs>,
    /// Pair counts per split.
    pub counts: [usize; 3],
}

fn parse_error(path: &Path, line: u64, message: String) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        message,
    }
}

pub fn read_dated_series(path: &Path, spec: &IngestSpec) -> Result<(Vec<f64>, Option<Vec<String>>)> {
    let mut reader = super::io::csv_reader(path)?;
    let header = reader.headers()?.clone();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| parse_error(path, 1, format!("no column named {name:?}")))
    };
    let value_idx = find(&spec.value_column)?;
    let date_idx = spec.date_column.as_deref().map(find).transpose()?;
    let mut values = Vec::new();
    let mut dates = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_error(path, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let field = record
            .get(value_idx)
            .ok_or_else(|| parse_error(path, line, "missing value field".into()))?;
        let v: f64 = field
            .trim()
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| parse_error(path, line, format!("invalid value {field:?}")))?;
        values.push(v);
        if let Some(i) = date_idx {
            let d = record
                .get(i)
                .ok_or_else(|| parse_error(path, line, "missing date field".into()))?
                .trim()
                .to_string();
            if let Some(prev) = dates.last() {
                if &d <= prev {
                    return Err(parse_error(path, line, format!("date {d:?} is not after {prev:?}")));
                }
            }
            dates.push(d);
        }
    }
    Ok((values, date_idx.map(|_| dates)))
}

/// Pairs `(xₜ, xₜ₊₁)`, each assigned to a split by the date of `xₜ₊₁`.
pub fn pair_and_split(series: &[f64], dates: Option<&[String]>, spec: &IngestSpec) -> Result<Ingested> {
    if series.len() < 2 {
        return Err(Error::Empty("series needs at least two states"));
    }
    let mut parts: [(Vec<f64>, Vec<f64>); 3] = Default::default();
    for k in 0..series.len() - 1 {
        let split = match dates {
            None => 0,
            Some(d) => {
                let date = &d[k + 1];
                if spec.train_until.as_ref().is_none_or(|e| date <= e) {
                    0
                } else if spec.validation_until.as_ref().is_none_or(|e| date <= e) {
                    1
                } else {
                    2
                }
            }
        };
        parts[split].0.push(series[k]);
        parts[split].1.push(series[k + 1]);
    }
    let counts = [parts[0].0.len(), parts[1].0.len(), parts[2].0.len()];
    let make = |(x, y): &(Vec<f64>, Vec<f64>)| -> Result<Option<SamplePairs>> {
        if x.is_empty() {
            Ok(None)
        } else {
            SamplePairs::from_scalars(x, y).map(Some)
        }
    };
    Ok(Ingested {
        series: series.to_vec(),
        dates: dates.map(|d| d.to_vec()),
        train: make(&parts[0])?,
        validation: make(&parts[1])?,
        test: make(&parts[2])?,
        counts,
    })
}

pub fn ingest(path: &Path, spec: &IngestSpec) -> Result<Ingested> {
    let (series, dates) = read_dated_series(path, spec)?;
    let out = pair_and_split(&series, dates.as_deref(), spec)?;
    log::info!(
        "{} states -> {} pairs: train {}, validation {}, test {} (train until {:?}, validation until {:?})",
        series.len(),
        series.len() - 1,
        out.counts[0],
        out.counts[1],
        out.counts[2],
        spec.train_until,
        spec.validation_until
    );
    Ok(out)
}
