//! Balanced panel data model.
//!
//! A [`PanelData`] holds an outcome `y[i, t]` and `K` regressors `x[i, t, k]`
//! for `N` units observed over the same `T` periods. Every cell is present,
//! every value is finite, and labels are unique along their axis.

use std::collections::HashMap;

use nalgebra::DMatrix;
use thiserror::Error;

/// Errors raised while constructing or ingesting a panel.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum PanelError {
    #[error("unbalanced panel: unit '{unit}' has no observation for period '{time}'")]
    UnbalancedPanel { unit: String, time: String },
    #[error("duplicate observation for unit '{unit}', period '{time}'")]
    DuplicateCell { unit: String, time: String },
    #[error("non-finite value in column '{column}' for unit '{unit}', period '{time}'")]
    NonFiniteValue {
        unit: String,
        time: String,
        column: String,
    },
    #[error(
        "panel too small: need at least 2 units and 2 periods, got N={n_units}, T={n_periods}"
    )]
    TooSmall { n_units: usize, n_periods: usize },
    #[error("duplicate {axis} label '{label}'")]
    DuplicateLabel { axis: &'static str, label: String },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("parse error on line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("i/o error: {0}")]
    Io(String),
}

/// One long-format observation: a (unit, period) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub unit: String,
    pub time: String,
    pub y: f64,
    pub x: Vec<f64>,
}

/// A balanced `N x T` panel with `K` regressors.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelData {
    unit_labels: Vec<String>,
    time_labels: Vec<String>,
    regressor_names: Vec<String>,
    /// `N x T` outcome.
    y: DMatrix<f64>,
    /// One `T x K` design block per unit.
    x: Vec<DMatrix<f64>>,
}

impl PanelData {
    /// Builds a panel from dense arrays. `y` is `N x T`; `x[i]` is the
    /// `T x K` regressor block of unit `i`.
    pub fn new(
        unit_labels: Vec<String>,
        time_labels: Vec<String>,
        y: DMatrix<f64>,
        x: Vec<DMatrix<f64>>,
    ) -> Result<Self, PanelError> {
        let n = unit_labels.len();
        let t = time_labels.len();
        if y.nrows() != n || y.ncols() != t {
            return Err(PanelError::ShapeMismatch(format!(
                "outcome is {}x{}, labels imply {n}x{t}",
                y.nrows(),
                y.ncols()
            )));
        }
        if x.len() != n {
            return Err(PanelError::ShapeMismatch(format!(
                "{} regressor blocks for {n} units",
                x.len()
            )));
        }
        let k = x.first().map_or(0, |b| b.ncols());
        if k == 0 {
            return Err(PanelError::ShapeMismatch("no regressors".into()));
        }
        for (i, block) in x.iter().enumerate() {
            if block.nrows() != t || block.ncols() != k {
                return Err(PanelError::ShapeMismatch(format!(
                    "regressor block of unit '{}' is {}x{}, expected {t}x{k}",
                    unit_labels[i],
                    block.nrows(),
                    block.ncols()
                )));
            }
        }
        let regressor_names = (1..=k).map(|j| format!("x{j}")).collect();
        let panel = PanelData {
            unit_labels,
            time_labels,
            regressor_names,
            y,
            x,
        };
        panel.check()?;
        Ok(panel)
    }

    /// Same as [`PanelData::new`] with explicit regressor names.
    pub fn with_regressor_names(mut self, names: Vec<String>) -> Result<Self, PanelError> {
        if names.len() != self.n_regressors() {
            return Err(PanelError::ShapeMismatch(format!(
                "{} regressor names for {} regressors",
                names.len(),
                self.n_regressors()
            )));
        }
        check_unique("regressor", &names)?;
        self.regressor_names = names;
        Ok(self)
    }

    /// Assembles a panel from long-format records. Units and periods are
    /// ordered by first appearance.
    pub fn from_records(records: &[Record]) -> Result<Self, PanelError> {
        let k = records
            .first()
            .map(|r| r.x.len())
            .ok_or(PanelError::TooSmall {
                n_units: 0,
                n_periods: 0,
            })?;
        let mut unit_index: HashMap<&str, usize> = HashMap::new();
        let mut time_index: HashMap<&str, usize> = HashMap::new();
        let mut units = Vec::new();
        let mut times = Vec::new();
        for r in records {
            if r.x.len() != k {
                return Err(PanelError::ShapeMismatch(format!(
                    "record for unit '{}', period '{}' has {} regressors, expected {k}",
                    r.unit,
                    r.time,
                    r.x.len()
                )));
            }
            if !unit_index.contains_key(r.unit.as_str()) {
                unit_index.insert(&r.unit, units.len());
                units.push(r.unit.clone());
            }
            if !time_index.contains_key(r.time.as_str()) {
                time_index.insert(&r.time, times.len());
                times.push(r.time.clone());
            }
        }
        let (n, t) = (units.len(), times.len());
        if n < 2 || t < 2 {
            return Err(PanelError::TooSmall {
                n_units: n,
                n_periods: t,
            });
        }

        let mut seen = vec![false; n * t];
        let mut y = DMatrix::zeros(n, t);
        let mut x = vec![DMatrix::zeros(t, k); n];
        for r in records {
            let i = unit_index[r.unit.as_str()];
            let s = time_index[r.time.as_str()];
            if std::mem::replace(&mut seen[i * t + s], true) {
                return Err(PanelError::DuplicateCell {
                    unit: r.unit.clone(),
                    time: r.time.clone(),
                });
            }
            y[(i, s)] = r.y;
            for (j, v) in r.x.iter().enumerate() {
                x[i][(s, j)] = *v;
            }
        }
        if let Some(pos) = seen.iter().position(|s| !s) {
            return Err(PanelError::UnbalancedPanel {
                unit: units[pos / t].clone(),
                time: times[pos % t].clone(),
            });
        }
        PanelData::new(units, times, y, x)
    }

    fn check(&self) -> Result<(), PanelError> {
        let (n, t) = (self.n_units(), self.n_periods());
        if n < 2 || t < 2 {
            return Err(PanelError::TooSmall {
                n_units: n,
                n_periods: t,
            });
        }
        check_unique("unit", &self.unit_labels)?;
        check_unique("time", &self.time_labels)?;
        for i in 0..n {
            for s in 0..t {
                if !self.y[(i, s)].is_finite() {
                    return Err(self.non_finite(i, s, "y".into()));
                }
                for j in 0..self.n_regressors() {
                    if !self.x[i][(s, j)].is_finite() {
                        return Err(self.non_finite(i, s, self.regressor_names[j].clone()));
                    }
                }
            }
        }
        Ok(())
    }

    fn non_finite(&self, i: usize, s: usize, column: String) -> PanelError {
        PanelError::NonFiniteValue {
            unit: self.unit_labels[i].clone(),
            time: self.time_labels[s].clone(),
            column,
        }
    }

    pub fn n_units(&self) -> usize {
        self.unit_labels.len()
    }

    pub fn n_periods(&self) -> usize {
        self.time_labels.len()
    }

    pub fn n_regressors(&self) -> usize {
        self.x[0].ncols()
    }

    pub fn unit_labels(&self) -> &[String] {
        &self.unit_labels
    }

    pub fn time_labels(&self) -> &[String] {
        &self.time_labels
    }

    pub fn regressor_names(&self) -> &[String] {
        &self.regressor_names
    }

    /// The `N x T` outcome matrix.
    pub fn y(&self) -> &DMatrix<f64> {
        &self.y
    }

    /// The `T x K` regressor block of unit `i`.
    pub fn x_unit(&self, i: usize) -> &DMatrix<f64> {
        &self.x[i]
    }

    pub fn x_blocks(&self) -> &[DMatrix<f64>] {
        &self.x
    }

    /// The panel restricted to the given units, in the given order.
    pub fn select_units(&self, units: &[usize]) -> Result<Self, PanelError> {
        let labels = units.iter().map(|&i| self.unit_labels[i].clone()).collect();
        let y = DMatrix::from_fn(units.len(), self.n_periods(), |r, c| self.y[(units[r], c)]);
        let x = units.iter().map(|&i| self.x[i].clone()).collect();
        PanelData::new(labels, self.time_labels.clone(), y, x)?
            .with_regressor_names(self.regressor_names.clone())
    }

    /// The panel with unit `i` deleted.
    pub fn without_unit(&self, i: usize) -> Result<Self, PanelError> {
        let keep: Vec<usize> = (0..self.n_units()).filter(|&j| j != i).collect();
        self.select_units(&keep)
    }

    /// Replaces the outcome matrix, keeping everything else.
    pub fn with_y(&self, y: DMatrix<f64>) -> Result<Self, PanelError> {
        PanelData::new(
            self.unit_labels.clone(),
            self.time_labels.clone(),
            y,
            self.x.clone(),
        )?
        .with_regressor_names(self.regressor_names.clone())
    }

    /// Replaces the regressor blocks, keeping everything else.
    pub fn with_x(&self, x: Vec<DMatrix<f64>>) -> Result<Self, PanelError> {
        PanelData::new(
            self.unit_labels.clone(),
            self.time_labels.clone(),
            self.y.clone(),
            x,
        )?
        .with_regressor_names(self.regressor_names.clone())
    }

    /// Long-format records in unit-major order.
    pub fn to_records(&self) -> Vec<Record> {
        let mut out = Vec::with_capacity(self.n_units() * self.n_periods());
        for i in 0..self.n_units() {
            for s in 0..self.n_periods() {
                out.push(Record {
                    unit: self.unit_labels[i].clone(),
                    time: self.time_labels[s].clone(),
                    y: self.y[(i, s)],
                    x: self.x[i].row(s).iter().copied().collect(),
                });
            }
        }
        out
    }
}

fn check_unique(axis: &'static str, labels: &[String]) -> Result<(), PanelError> {
    let mut seen = HashMap::with_capacity(labels.len());
    for l in labels {
        if seen.insert(l.as_str(), ()).is_some() {
            return Err(PanelError::DuplicateLabel {
                axis,
                label: l.clone(),
            });
        }
    }
    Ok(())
}

/// Default labels `u1..uN` and `t1..tT`.
pub fn default_labels(n_units: usize, n_periods: usize) -> (Vec<String>, Vec<String>) {
    (
        (1..=n_units).map(|i| format!("u{i}")).collect(),
        (1..=n_periods).map(|t| format!("t{t}")).collect(),
    )
}
