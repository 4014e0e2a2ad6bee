//! Observation containers and the dataset CSV format.
//!
//! CSV layout: header `time,<comp1>,<comp2>,...`, one row per observation
//! time; an empty cell or `NA` marks a missing observation for that
//! component.

use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Noisy observations on a shared time grid; NaN entries are missing.
#[derive(Debug, Clone, PartialEq)]
pub struct Observations {
    pub times: Vec<f64>,
    /// (num_times x num_components); NaN = not observed.
    pub values: DMatrix<f64>,
    pub component_names: Vec<String>,
}

impl Observations {
    pub fn new(times: Vec<f64>, values: DMatrix<f64>) -> Result<Self> {
        let names = (0..values.ncols()).map(|i| format!("x{}", i + 1)).collect();
        Self::with_names(times, values, names)
    }

    pub fn with_names(
        times: Vec<f64>,
        values: DMatrix<f64>,
        component_names: Vec<String>,
    ) -> Result<Self> {
        if times.len() != values.nrows() {
            return Err(Error::InvalidDimension(format!(
                "{} times but {} observation rows",
                times.len(),
                values.nrows()
            )));
        }
        if component_names.len() != values.ncols() {
            return Err(Error::InvalidDimension(
                "component name count does not match the value columns".into(),
            ));
        }
        for w in times.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::InvalidDimension(
                    "observation times must be strictly increasing".into(),
                ));
            }
        }
        Ok(Self {
            times,
            values,
            component_names,
        })
    }

    /// Build from per-time rows (row j holds every component at times[j]).
    pub fn from_rows(times: Vec<f64>, rows: &[Vec<f64>]) -> Result<Self> {
        let ncols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(Error::InvalidDimension("ragged observation rows".into()));
        }
        let values = DMatrix::from_fn(rows.len(), ncols, |j, i| rows[j][i]);
        Self::new(times, values)
    }

    pub fn num_components(&self) -> usize {
        self.values.ncols()
    }

    pub fn num_times(&self) -> usize {
        self.times.len()
    }

    /// Observed (time, value) pairs for one component, skipping missing rows.
    pub fn component(&self, i: usize) -> (Vec<f64>, Vec<f64>) {
        let mut times = Vec::new();
        let mut values = Vec::new();
        for (j, &t) in self.times.iter().enumerate() {
            let v = self.values[(j, i)];
            if v.is_finite() {
                times.push(t);
                values.push(v);
            }
        }
        (times, values)
    }

    pub fn time_range(&self) -> (f64, f64) {
        (self.times[0], *self.times.last().unwrap())
    }

    /// Shift all times by `-offset` (used to move the domain start to 0).
    pub fn shifted(&self, offset: f64) -> Self {
        Self {
            times: self.times.iter().map(|t| t - offset).collect(),
            values: self.values.clone(),
            component_names: self.component_names.clone(),
        }
    }
}

fn parse_cell(raw: &str, line: usize) -> Result<f64> {
    let s = raw.trim();
    if s.is_empty() || s.eq_ignore_ascii_case("na") || s.eq_ignore_ascii_case("nan") {
        return Ok(f64::NAN);
    }
    s.parse::<f64>().map_err(|_| Error::DataParse {
        line,
        message: format!("cannot parse '{s}' as a number"),
    })
}

/// Read a dataset CSV.
pub fn read_csv(path: &Path) -> Result<Observations> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.is_empty() || headers[0].trim() != "time" {
        return Err(Error::DataParse {
            line: 1,
            message: "first header column must be 'time'".into(),
        });
    }
    let component_names: Vec<String> = headers.iter().skip(1).map(|h| h.trim().to_string()).collect();
    if component_names.is_empty() {
        return Err(Error::DataParse {
            line: 1,
            message: "no component columns".into(),
        });
    }
    let mut times = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 2; // 1-based, after the header
        let record = record?;
        if record.len() != component_names.len() + 1 {
            return Err(Error::DataParse {
                line,
                message: format!(
                    "expected {} columns, found {}",
                    component_names.len() + 1,
                    record.len()
                ),
            });
        }
        let t = parse_cell(&record[0], line)?;
        if !t.is_finite() {
            return Err(Error::DataParse {
                line,
                message: "missing time value".into(),
            });
        }
        times.push(t);
        let mut row = Vec::with_capacity(component_names.len());
        for c in 1..record.len() {
            row.push(parse_cell(&record[c], line)?);
        }
        rows.push(row);
    }
    if times.is_empty() {
        return Err(Error::DataParse {
            line: 2,
            message: "dataset has no rows".into(),
        });
    }
    let values = DMatrix::from_fn(times.len(), component_names.len(), |j, i| rows[j][i]);
    Observations::with_names(times, values, component_names)
}

/// Write a dataset CSV (17 significant digits for round-trip safety).
pub fn write_csv(path: &Path, obs: &Observations) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let mut header = vec!["time".to_string()];
    header.extend(obs.component_names.iter().cloned());
    writer.write_record(&header)?;
    for (j, &t) in obs.times.iter().enumerate() {
        let mut row = vec![format_float(t)];
        for i in 0..obs.num_components() {
            let v = obs.values[(j, i)];
            row.push(if v.is_finite() {
                format_float(v)
            } else {
                "NA".to_string()
            });
        }
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

/// 17 significant digits: enough to round-trip any f64.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}
