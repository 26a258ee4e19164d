//! Per-run scalar measurables over time.

use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{csv_error, csv_reader};
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::volume::FillFlag;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TimeSeriesFormat {
    pub delimiter: char,
}

impl Default for TimeSeriesFormat {
    fn default() -> Self {
        TimeSeriesFormat { delimiter: ',' }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurable {
    pub values: Vec<f64>,
    pub flags: Vec<FillFlag>,
}

/// Measurables resampled onto the canonical times, one column per quantity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesTable {
    pub run_id: String,
    pub times: Vec<f64>,
    pub columns: IndexMap<String, Measurable>,
}

impl TimeSeriesTable {
    pub fn get(&self, name: &str) -> Option<&Measurable> {
        self.columns.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.columns.keys().map(String::as_str)
    }

    /// Write as a delimited table readable by [`parse_time_series`].
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        let mut header = vec!["time".to_string()];
        header.extend(self.columns.keys().cloned());
        w.write_record(&header).map_err(|e| csv_error(path, e))?;
        for (k, t) in self.times.iter().enumerate() {
            let mut row = vec![t.to_string()];
            row.extend(self.columns.values().map(|c| c.values[k].to_string()));
            w.write_record(&row).map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Fill per-step observations: zeros before the first one, then carry forward.
pub(crate) fn fill_series(observed: &[Option<f64>]) -> Measurable {
    let mut values = Vec::with_capacity(observed.len());
    let mut flags = Vec::with_capacity(observed.len());
    let mut last: Option<f64> = None;
    for o in observed {
        match (o, last) {
            (Some(v), _) => {
                values.push(*v);
                flags.push(FillFlag::Measured);
                last = Some(*v);
            }
            (None, Some(prev)) => {
                values.push(prev);
                flags.push(FillFlag::Repeated);
            }
            (None, None) => {
                values.push(0.0);
                flags.push(FillFlag::ZeroFilled);
            }
        }
    }
    Measurable { values, flags }
}

/// Read a delimited table whose first column is time in seconds and whose
/// remaining columns are measurables. Empty cells count as missing.
pub fn parse_time_series(
    run_id: impl Into<String>,
    path: &Path,
    format: &TimeSeriesFormat,
    grid: &GridSpec,
) -> Result<TimeSeriesTable> {
    let delimiter = u8::try_from(format.delimiter)
        .ok()
        .filter(u8::is_ascii)
        .ok_or_else(|| Error::Config(format!("delimiter {:?} is not ASCII", format.delimiter)))?;
    let mut reader = csv_reader(path, delimiter)?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    if headers.is_empty() {
        return Err(Error::MissingColumn {
            file: path.to_path_buf(),
            column: "time".into(),
        });
    }
    let names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let nt = grid.nt();
    let mut observed: Vec<Vec<Option<f64>>> = vec![vec![None; nt]; names.len()];
    let mut owner: Vec<Option<f64>> = vec![None; nt];

    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let cell = |c: usize| -> Result<Option<f64>> {
            let raw = record.get(c).unwrap_or("");
            if raw.is_empty() {
                return Ok(None);
            }
            let v: f64 = raw.parse().map_err(|_| Error::Parse {
                file: path.to_path_buf(),
                line,
                message: format!(
                    "column {} (`{}`): non-numeric value {raw:?}",
                    c + 1,
                    headers.get(c).unwrap_or("?")
                ),
            })?;
            Ok((!v.is_nan()).then_some(v))
        };
        let Some(time) = cell(0)? else {
            return Err(Error::Parse {
                file: path.to_path_buf(),
                line,
                message: "missing time value".into(),
            });
        };
        let Some(k) = grid.step_of(time) else {
            log::debug!("{}: row at t={time} s outside canonical range", path.display());
            continue;
        };
        if let Some(prev) = owner[k] {
            return Err(Error::StepCollision {
                step: k,
                first: prev,
                second: time,
            });
        }
        owner[k] = Some(time);
        for (c, column) in observed.iter_mut().enumerate() {
            column[k] = cell(c + 1)?;
        }
    }

    let columns = names
        .into_iter()
        .zip(observed.iter().map(|o| fill_series(o)))
        .collect();
    Ok(TimeSeriesTable {
        run_id: run_id.into(),
        times: grid.times(),
        columns,
    })
}
