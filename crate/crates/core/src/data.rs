//! Time-series ingestion, standardization and lag embedding.
//!
//! Every method consumes an [`EmbeddedDesign`]: for a target series `b` with
//! lag order `m`, row `i` of the design holds the `m` past values of each
//! selected series and `y[i]` is the value of `b` one step later.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Equal-length scalar series observed on a common time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesSystem {
    names: Vec<String>,
    series: Vec<Vec<f64>>,
}

impl TimeSeriesSystem {
    pub fn new(names: Vec<String>, series: Vec<Vec<f64>>) -> Result<Self> {
        if names.len() != series.len() {
            return Err(Error::invalid("number of names and series differ"));
        }
        if series.is_empty() {
            return Err(Error::invalid("system has no series"));
        }
        let len = series[0].len();
        if len < 2 {
            return Err(Error::invalid("series must have at least 2 observations"));
        }
        if series.iter().any(|s| s.len() != len) {
            return Err(Error::invalid("series have different lengths"));
        }
        for (name, s) in names.iter().zip(&series) {
            if let Some(t) = s.iter().position(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("non-finite value in series {name} at step {t}")));
            }
        }
        let mut seen = HashSet::new();
        if let Some(dup) = names.iter().find(|n| !seen.insert(n.as_str())) {
            return Err(Error::invalid(format!("duplicate series name {dup}")));
        }
        Ok(TimeSeriesSystem { names, series })
    }

    /// Builds a system with default names `x1..x{n_t}`.
    pub fn from_series(series: Vec<Vec<f64>>) -> Result<Self> {
        let names = (1..=series.len()).map(|i| format!("x{i}")).collect();
        Self::new(names, series)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn n_series(&self) -> usize {
        self.series.len()
    }

    /// Number of time steps.
    pub fn len(&self) -> usize {
        self.series[0].len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn series(&self, idx: usize) -> &[f64] {
        &self.series[idx]
    }

    pub fn value(&self, series: usize, t: usize) -> f64 {
        self.series[series][t]
    }

    /// Keeps the last `len` time steps.
    pub fn tail(&self, len: usize) -> Result<Self> {
        if len < 2 || len > self.len() {
            return Err(Error::invalid(format!("cannot keep {len} of {} steps", self.len())));
        }
        let start = self.len() - len;
        Ok(TimeSeriesSystem {
            names: self.names.clone(),
            series: self.series.iter().map(|s| s[start..].to_vec()).collect(),
        })
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(&self.names).map_err(csv_io)?;
        for t in 0..self.len() {
            w.write_record(self.series.iter().map(|s| format!("{:?}", s[t])))
                .map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Reads a comma-separated file with one column per series.
pub fn load_csv(path: impl AsRef<Path>, has_header: bool) -> Result<TimeSeriesSystem> {
    let file = std::fs::File::open(path)?;
    read_csv(file, has_header)
}

pub fn read_csv<R: Read>(reader: R, has_header: bool) -> Result<TimeSeriesSystem> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut names: Option<Vec<String>> = None;
    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (row, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::Parse {
            row: row + 1,
            column: 0,
            message: e.to_string(),
        })?;
        if record.iter().all(|c| c.is_empty()) {
            continue;
        }
        match width {
            None => width = Some(record.len()),
            Some(w) if w != record.len() => {
                return Err(Error::Parse {
                    row: row + 1,
                    column: record.len(),
                    message: format!("expected {w} columns, found {}", record.len()),
                })
            }
            _ => {}
        }
        if has_header && names.is_none() {
            names = Some(record.iter().map(str::to_string).collect());
            continue;
        }
        if columns.is_empty() {
            columns = vec![Vec::new(); record.len()];
        }
        for (col, cell) in record.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row: row + 1,
                column: col + 1,
                message: format!("cannot parse {cell:?} as a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row: row + 1,
                    column: col + 1,
                    message: format!("non-finite value {cell:?}"),
                });
            }
            columns[col].push(v);
        }
    }
    if columns.is_empty() || columns[0].is_empty() {
        return Err(Error::invalid("no data rows"));
    }
    match names {
        Some(n) => TimeSeriesSystem::new(n, columns),
        None => TimeSeriesSystem::from_series(columns),
    }
}

/// Rescales each series to sample mean 0 and sample standard deviation 1
/// (denominator `len - 1`).
pub fn standardize(system: &TimeSeriesSystem) -> Result<TimeSeriesSystem> {
    let mut out = Vec::with_capacity(system.n_series());
    for (name, s) in system.names.iter().zip(&system.series) {
        let n = s.len() as f64;
        let mean = s.iter().sum::<f64>() / n;
        let var = s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let sd = var.sqrt();
        if !(sd > 1e-300) || sd <= 1e-12 * mean.abs() {
            return Err(Error::invalid(format!("zero variance series {name}")));
        }
        let mut z: Vec<f64> = s.iter().map(|v| (v - mean) / sd).collect();
        // One refinement pass removes the rounding residue of the first.
        let m2 = z.iter().sum::<f64>() / n;
        z.iter_mut().for_each(|v| *v -= m2);
        let sd2 = (z.iter().map(|v| v * v).sum::<f64>() / (n - 1.0)).sqrt();
        z.iter_mut().for_each(|v| *v /= sd2);
        out.push(z);
    }
    TimeSeriesSystem::new(system.names.clone(), out)
}

/// Column provenance: `lag` steps before the target time (`0` = same step).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LagColumn {
    pub series: usize,
    pub lag: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Preprocessing {
    #[default]
    None,
    /// Mean-center every column of X, Z and y, then scale y to unit norm.
    Kgc,
}

/// Lag-embedded regression problem for one target series.
#[derive(Debug, Clone)]
pub struct EmbeddedDesign {
    /// Unrestricted covariates.
    pub z: Mat<f64>,
    /// Restricted covariates: `z` without the driver block. Equal to `z`
    /// when there is no driver.
    pub x: Mat<f64>,
    pub y: Vec<f64>,
    /// Provenance of every column of `z`.
    pub column_map: Vec<LagColumn>,
    pub driver: Option<usize>,
    pub target: usize,
    pub lag_order: usize,
}

impl EmbeddedDesign {
    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    /// Provenance of the columns of `x`.
    pub fn x_column_map(&self) -> Vec<LagColumn> {
        self.column_map
            .iter()
            .copied()
            .filter(|c| Some(c.series) != self.driver)
            .collect()
    }

    /// Columns of `z` that belong to the driver series.
    pub fn driver_block(&self) -> Mat<f64> {
        let idx: Vec<usize> = match self.driver {
            Some(d) => (0..self.column_map.len())
                .filter(|&j| self.column_map[j].series == d)
                .collect(),
            None => Vec::new(),
        };
        Mat::from_fn(self.z.nrows(), idx.len(), |i, j| self.z[(i, idx[j])])
    }

    /// Design restricted to a subset of `z` columns, with no driver.
    pub fn select_columns(&self, cols: &[usize]) -> Result<EmbeddedDesign> {
        if let Some(&bad) = cols.iter().find(|&&c| c >= self.z.ncols()) {
            return Err(Error::invalid(format!("column {bad} out of range")));
        }
        let z = Mat::from_fn(self.z.nrows(), cols.len(), |i, j| self.z[(i, cols[j])]);
        Ok(EmbeddedDesign {
            x: z.clone(),
            z,
            y: self.y.clone(),
            column_map: cols.iter().map(|&c| self.column_map[c]).collect(),
            driver: None,
            target: self.target,
            lag_order: self.lag_order,
        })
    }

    /// Keeps the last `rows` rows.
    pub fn tail_rows(&self, rows: usize) -> Result<EmbeddedDesign> {
        let n = self.n_rows();
        if rows == 0 || rows > n {
            return Err(Error::invalid(format!("cannot keep {rows} of {n} rows")));
        }
        let s = n - rows;
        Ok(EmbeddedDesign {
            z: Mat::from_fn(rows, self.z.ncols(), |i, j| self.z[(s + i, j)]),
            x: Mat::from_fn(rows, self.x.ncols(), |i, j| self.x[(s + i, j)]),
            y: self.y[s..].to_vec(),
            column_map: self.column_map.clone(),
            driver: self.driver,
            target: self.target,
            lag_order: self.lag_order,
        })
    }

    /// Mean-centers every column of `x` and `z`, centers `y` and scales it to unit norm.
    pub fn kgc_preprocess(&mut self) -> Result<()> {
        center_columns(&mut self.z);
        center_columns(&mut self.x);
        let mean = self.y.iter().sum::<f64>() / self.y.len() as f64;
        self.y.iter_mut().for_each(|v| *v -= mean);
        let norm = self.y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 0.0) {
            return Err(Error::invalid("target is constant over the embedded window"));
        }
        self.y.iter_mut().for_each(|v| *v /= norm);
        Ok(())
    }
}

fn center_columns(m: &mut Mat<f64>) {
    let n = m.nrows() as f64;
    for j in 0..m.ncols() {
        let mean = m.col(j).iter().sum::<f64>() / n;
        for i in 0..m.nrows() {
            m[(i, j)] -= mean;
        }
    }
}

fn check_lag(system: &TimeSeriesSystem, target: usize, m: usize) -> Result<()> {
    if target >= system.n_series() {
        return Err(Error::invalid(format!("target index {target} out of range")));
    }
    if m == 0 {
        return Err(Error::invalid("lag order must be at least 1"));
    }
    if m >= system.len() {
        return Err(Error::invalid(format!(
            "lag order {m} must be smaller than the series length {}",
            system.len()
        )));
    }
    Ok(())
}

fn lagged_block(series: usize, m: usize) -> impl Iterator<Item = LagColumn> {
    (1..=m).rev().map(move |lag| LagColumn { series, lag })
}

fn build(
    system: &TimeSeriesSystem,
    target: usize,
    driver: Option<usize>,
    m: usize,
    columns: Vec<LagColumn>,
) -> EmbeddedDesign {
    let n = system.len() - m;
    let z = Mat::from_fn(n, columns.len(), |i, j| {
        let c = columns[j];
        system.series[c.series][i + m - c.lag]
    });
    let x_cols: Vec<usize> = (0..columns.len())
        .filter(|&j| Some(columns[j].series) != driver)
        .collect();
    let x = Mat::from_fn(n, x_cols.len(), |i, j| z[(i, x_cols[j])]);
    let y = system.series[target][m..].to_vec();
    EmbeddedDesign {
        z,
        x,
        y,
        column_map: columns,
        driver,
        target,
        lag_order: m,
    }
}

/// Lag embedding for testing `driver → target`.
///
/// Columns of `z` are ordered driver block, target block, then the
/// remaining series in system order; each block lists lags `m, …, 1`.
pub fn embed(
    system: &TimeSeriesSystem,
    target: usize,
    driver: usize,
    m: usize,
    preprocessing: Preprocessing,
) -> Result<EmbeddedDesign> {
    check_lag(system, target, m)?;
    if driver >= system.n_series() {
        return Err(Error::invalid(format!("driver index {driver} out of range")));
    }
    if driver == target {
        return Err(Error::invalid("driver and target must differ"));
    }
    let order = std::iter::once(driver)
        .chain(std::iter::once(target))
        .chain((0..system.n_series()).filter(|&c| c != driver && c != target));
    let columns = order.flat_map(|c| lagged_block(c, m)).collect();
    let mut design = build(system, target, Some(driver), m, columns);
    if preprocessing == Preprocessing::Kgc {
        design.kgc_preprocess()?;
    }
    Ok(design)
}

/// Lag embedding of every series in system order, with no driver.
pub fn embed_all(system: &TimeSeriesSystem, target: usize, m: usize) -> Result<EmbeddedDesign> {
    check_lag(system, target, m)?;
    let columns = (0..system.n_series()).flat_map(|c| lagged_block(c, m)).collect();
    Ok(build(system, target, None, m, columns))
}

/// Lag embedding plus one same-step column per series, except the target's own.
///
/// Per series the columns are lags `m, …, 1` followed by lag `0`.
pub fn embed_contemporaneous(
    system: &TimeSeriesSystem,
    target: usize,
    m: usize,
) -> Result<EmbeddedDesign> {
    check_lag(system, target, m)?;
    let columns = (0..system.n_series())
        .flat_map(|c| {
            let contemporaneous = (c != target).then_some(LagColumn { series: c, lag: 0 });
            lagged_block(c, m).chain(contemporaneous)
        })
        .collect();
    Ok(build(system, target, None, m, columns))
}
