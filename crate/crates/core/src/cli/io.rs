//! CSV and JSON files produced and consumed by the command line.
//!
//! Floats are written with 17 significant digits so that reading a file back
//! reproduces every value bit for bit.

use std::path::Path;

use crate::dynamics::SamplePairs;
use crate::forecaster::{ForecastMethod, ForecastTrajectory};
use crate::kernels::{scalar_points, Points};
use crate::{Error, Result};

/// Mass tolerance re-checked when DLI weights are written.
pub const MASS_TOL: f64 = 1e-10;

pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn file_error(path: &Path, source: std::io::Error) -> Error {
    Error::File {
        path: path.display().to_string(),
        source,
    }
}

pub fn open(path: &Path) -> Result<std::fs::File> {
    std::fs::File::open(path).map_err(|e| file_error(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| file_error(path, e))
}

/// Creates the parent directory if needed and writes `contents`.
pub fn write_text(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| file_error(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| file_error(path, e))
}

pub fn csv_reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    Ok(csv::ReaderBuilder::new().flexible(true).from_reader(open(path)?))
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| file_error(dir, e))?;
    }
    let file = std::fs::File::create(path).map_err(|e| file_error(path, e))?;
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(file))
}

/// Reads every row of a headed CSV file into column-indexed string records,
/// checking the header against `expected`.
fn read_rows(path: &Path, expected: &[&str]) -> Result<Vec<(u64, csv::StringRecord)>> {
    let mut reader = csv_reader(path)?;
    let header = reader.headers()?.clone();
    let got: Vec<&str> = header.iter().map(str::trim).collect();
    if got != expected {
        return Err(Error::Parse {
            path: path.display().to_string(),
            line: 1,
            message: format!("expected header {:?}, found {:?}", expected.join(","), got.join(",")),
        });
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != expected.len() {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line,
                message: format!("expected {} fields, found {}", expected.len(), record.len()),
            });
        }
        rows.push((line, record));
    }
    Ok(rows)
}

fn parse_field<T: std::str::FromStr>(path: &Path, line: u64, field: &str, what: &str) -> Result<T> {
    field.trim().parse().map_err(|_| Error::Parse {
        path: path.display().to_string(),
        line,
        message: format!("invalid {what} {field:?}"),
    })
}

fn parse_finite(path: &Path, line: u64, field: &str, what: &str) -> Result<f64> {
    let v: f64 = parse_field(path, line, field, what)?;
    if !v.is_finite() {
        return Err(Error::Parse {
            path: path.display().to_string(),
            line,
            message: format!("non-finite {what} {field:?}"),
        });
    }
    Ok(v)
}

/// Scalar pairs under the header `x,y`.
pub fn write_pairs(path: &Path, pairs: &SamplePairs) -> Result<()> {
    if pairs.dim() != 1 {
        return Err(Error::dim("pair files hold scalar states".to_string()));
    }
    let mut w = writer(path)?;
    w.write_record(["x", "y"])?;
    for i in 0..pairs.len() {
        w.write_record([fmt_float(pairs.x[(i, 0)]), fmt_float(pairs.y[(i, 0)])])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_pairs(path: &Path) -> Result<SamplePairs> {
    let rows = read_rows(path, &["x", "y"])?;
    let mut x = Vec::with_capacity(rows.len());
    let mut y = Vec::with_capacity(rows.len());
    for (line, r) in &rows {
        x.push(parse_finite(path, *line, &r[0], "x")?);
        y.push(parse_finite(path, *line, &r[1], "y")?);
    }
    if x.is_empty() {
        return Err(Error::Empty("pair file"));
    }
    SamplePairs::from_scalars(&x, &y)
}

/// Initial-condition samples under the header `z`.
pub fn write_initial(path: &Path, z: &[f64]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["z"])?;
    for v in z {
        w.write_record([fmt_float(*v)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_initial(path: &Path) -> Result<Points> {
    let rows = read_rows(path, &["z"])?;
    let z = rows
        .iter()
        .map(|(line, r)| parse_finite(path, *line, &r[0], "z"))
        .collect::<Result<Vec<_>>>()?;
    if z.is_empty() {
        return Err(Error::Empty("initial sample file"));
    }
    Ok(scalar_points(&z))
}

/// Rows `t,index,support,weight`; DLI rows are checked to sum to one.
pub fn write_trajectory(path: &Path, traj: &ForecastTrajectory) -> Result<()> {
    if traj.support.ncols() != 1 {
        return Err(Error::dim("trajectory files hold scalar support".to_string()));
    }
    if traj.method == ForecastMethod::Dli {
        for (t, m) in traj.masses().iter().enumerate() {
            if (m - 1.0).abs() > MASS_TOL {
                return Err(Error::Numerical(format!(
                    "DLI weights at step {} sum to {m}",
                    t + 1
                )));
            }
        }
    }
    let mut w = writer(path)?;
    w.write_record(["t", "index", "support", "weight"])?;
    for t in 0..traj.steps() {
        for i in 0..traj.support.nrows() {
            w.write_record([
                (t + 1).to_string(),
                i.to_string(),
                fmt_float(traj.support[(i, 0)]),
                fmt_float(traj.weights[(t, i)]),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `(t, index, support, weight)` rows of a trajectory file.
pub fn read_trajectory(path: &Path) -> Result<Vec<(usize, usize, f64, f64)>> {
    read_rows(path, &["t", "index", "support", "weight"])?
        .iter()
        .map(|(line, r)| {
            Ok((
                parse_field(path, *line, &r[0], "step")?,
                parse_field(path, *line, &r[1], "index")?,
                parse_finite(path, *line, &r[2], "support")?,
                parse_finite(path, *line, &r[3], "weight")?,
            ))
        })
        .collect()
}

/// One value of a long-format results table; `None` marks a diverged run.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub seed: u64,
    pub t: usize,
    pub method: String,
    pub metric: String,
    pub value: Option<f64>,
}

pub const DIVERGED: &str = "diverged";

pub fn write_results(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let mut sorted: Vec<&ResultRow> = rows.iter().collect();
    sorted.sort_by(|a, b| {
        (a.seed, &a.method, &a.metric, a.t).cmp(&(b.seed, &b.method, &b.metric, b.t))
    });
    let mut w = writer(path)?;
    w.write_record(["seed", "t", "method", "metric", "value"])?;
    for r in sorted {
        let value = r.value.map_or(DIVERGED.to_string(), fmt_float);
        w.write_record([r.seed.to_string(), r.t.to_string(), r.method.clone(), r.metric.clone(), value])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    read_rows(path, &["seed", "t", "method", "metric", "value"])?
        .iter()
        .map(|(line, r)| {
            let value = if r[4].trim() == DIVERGED {
                None
            } else {
                Some(parse_field::<f64>(path, *line, &r[4], "value")?)
            };
            Ok(ResultRow {
                seed: parse_field(path, *line, &r[0], "seed")?,
                t: parse_field(path, *line, &r[1], "step")?,
                method: r[2].trim().to_string(),
                metric: r[3].trim().to_string(),
                value,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub t: usize,
    pub method: String,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi || sorted[lo] == sorted[hi] {
        return sorted[lo];
    }
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Per-`(t, method)` quantiles over seeds of one metric; diverged values
/// count as `+∞`.
pub fn summarize(rows: &[ResultRow], metric: &str) -> Vec<SummaryRow> {
    use std::collections::BTreeMap;
    let mut groups: BTreeMap<(usize, &str), Vec<f64>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.metric == metric) {
        groups
            .entry((r.t, r.method.as_str()))
            .or_default()
            .push(r.value.unwrap_or(f64::INFINITY));
    }
    groups
        .into_iter()
        .map(|((t, method), mut v)| {
            v.sort_by(f64::total_cmp);
            SummaryRow {
                t,
                method: method.to_string(),
                median: quantile(&v, 0.5),
                q25: quantile(&v, 0.25),
                q75: quantile(&v, 0.75),
            }
        })
        .collect()
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["t", "method", "median", "q25", "q75"])?;
    for r in rows {
        w.write_record([
            r.t.to_string(),
            r.method.clone(),
            fmt_float(r.median),
            fmt_float(r.q25),
            fmt_float(r.q75),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>> {
    read_rows(path, &["t", "method", "median", "q25", "q75"])?
        .iter()
        .map(|(line, r)| {
            Ok(SummaryRow {
                t: parse_field(path, *line, &r[0], "step")?,
                method: r[1].trim().to_string(),
                median: parse_field(path, *line, &r[2], "median")?,
                q25: parse_field(path, *line, &r[3], "q25")?,
                q75: parse_field(path, *line, &r[4], "q75")?,
            })
        })
        .collect()
}

/// Generic table writer for small report files.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        line: e.line() as u64,
        message: e.to_string(),
    })
}

/// One numeric column of a headed CSV file, in file order.
pub fn read_series(path: &Path, column: &str) -> Result<Vec<f64>> {
    let mut reader = csv_reader(path)?;
    let header = reader.headers()?.clone();
    let idx = header
        .iter()
        .position(|h| h.trim() == column)
        .ok_or_else(|| Error::Parse {
            path: path.display().to_string(),
            line: 1,
            message: format!("no column named {column:?}"),
        })?;
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let field = record.get(idx).ok_or_else(|| Error::Parse {
            path: path.display().to_string(),
            line,
            message: format!("missing column {column:?}"),
        })?;
        out.push(parse_finite(path, line, field, column)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_round_trips() {
        for x in [0.1, -1.0 / 3.0, 1e-300, 6.02214076e23, f64::MIN_POSITIVE] {
            assert_eq!(fmt_float(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn pairs_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pairs.csv");
        let pairs = SamplePairs::from_scalars(&[0.1, 2.0 / 3.0], &[-1e-7, 5.5]).unwrap();
        write_pairs(&p, &pairs).unwrap();
        assert_eq!(read_pairs(&p).unwrap(), pairs);

        std::fs::write(&p, "x,y\n1.0,2.0\n1.0,oops\n").unwrap();
        match read_pairs(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        std::fs::write(&p, "a,b\n1,2\n").unwrap();
        assert!(read_pairs(&p).is_err());
    }

    #[test]
    fn quantiles_and_summary() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.5), 2.5);
        assert_eq!(quantile(&v, 0.25), 1.75);
        assert_eq!(quantile(&[7.0], 0.75), 7.0);
        let rows: Vec<ResultRow> = (0..3)
            .map(|s| ResultRow {
                seed: s,
                t: 1,
                method: "a".into(),
                metric: "m".into(),
                value: if s == 2 { None } else { Some(s as f64) },
            })
            .collect();
        let sum = summarize(&rows, "m");
        assert_eq!(sum.len(), 1);
        assert_eq!(sum[0].median, 1.0);
        assert_eq!(sum[0].q75, f64::INFINITY);
    }

    #[test]
    fn results_round_trip_with_divergence_marker() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        let rows = vec![
            ResultRow {
                seed: 0,
                t: 1,
                method: "rrr".into(),
                metric: "rel_mmd".into(),
                value: Some(0.25),
            },
            ResultRow {
                seed: 0,
                t: 2,
                method: "rrr".into(),
                metric: "rel_mmd".into(),
                value: None,
            },
        ];
        write_results(&p, &rows).unwrap();
        assert!(std::fs::read_to_string(&p).unwrap().contains("diverged"));
        assert_eq!(read_results(&p).unwrap(), rows);
    }
}
