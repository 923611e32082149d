//! Point estimators of the average slope.
//!
//! * [`estimate_tw_mg`]: per-unit slopes from the two-way dummy-variable
//!   regression with unit-specific slopes, averaged over units.
//! * [`estimate_tw_mg_ridge`]: the same with a ridge shift `κ` on the Gram matrix.
//! * [`estimate_tw_pooled`]: a single slope on double-demeaned data.
//! * [`estimate_standard_mg`]: per-unit time-series regressions on `(x, 1)`,
//!   averaged (no time effects).

use std::fmt;
use std::str::FromStr;

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::demean::{double_demean, DemeanedPanel};
use crate::gram::{build_gram, reciprocal_condition, LinalgError, RANK_TOLERANCE};
use crate::panel::PanelData;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
pub enum Method {
    #[serde(rename = "tw-mg")]
    TwMg,
    #[serde(rename = "tw-mg-ridge")]
    TwMgRidge,
    #[serde(rename = "tw-pooled")]
    TwPooled,
    #[serde(rename = "mg")]
    StandardMg,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::TwMg,
        Method::TwMgRidge,
        Method::TwPooled,
        Method::StandardMg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::TwMg => "tw-mg",
            Method::TwMgRidge => "tw-mg-ridge",
            Method::TwPooled => "tw-pooled",
            Method::StandardMg => "mg",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "tw-mg" => Ok(Method::TwMg),
            "tw-mg-ridge" => Ok(Method::TwMgRidge),
            "tw-pooled" => Ok(Method::TwPooled),
            "mg" => Ok(Method::StandardMg),
            other => Err(format!(
                "unknown estimator '{other}' (expected tw-mg, tw-mg-ridge, tw-pooled or mg)"
            )),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimationError {
    #[error("rank-deficient regressors for unit(s) {}; the ridge estimator (tw-mg-ridge) remains available", .units.join(", "))]
    RankDeficient { units: Vec<String> },
    #[error("pooled Gram matrix is singular (reciprocal condition {rcond:e})")]
    PooledRankDeficient { rcond: f64 },
    #[error("too few periods: T={periods} requires T > K+1 with K={regressors}")]
    TooFewPeriods { periods: usize, regressors: usize },
    #[error("singular system: {0}")]
    SingularSystem(String),
    #[error("ridge parameter must be finite and nonnegative, got {0}")]
    InvalidKappa(f64),
}

/// Result of one estimator on one panel.
#[derive(Debug, Clone, PartialEq)]
pub struct SlopeEstimates {
    pub method: Method,
    /// Aggregate slope, length `K`.
    pub beta_hat: DVector<f64>,
    /// `N x K` per-unit slopes; `None` for the pooled estimator.
    pub unit_slopes: Option<DMatrix<f64>>,
    pub kappa_used: Option<f64>,
}

/// Column means in fixed (unit) order.
fn column_mean(m: &DMatrix<f64>) -> DVector<f64> {
    let n = m.nrows() as f64;
    DVector::from_iterator(
        m.ncols(),
        m.column_iter().map(|c| c.iter().sum::<f64>() / n),
    )
}

fn require_periods(p: &PanelData) -> Result<(), EstimationError> {
    if p.n_periods() <= p.n_regressors() + 1 {
        return Err(EstimationError::TooFewPeriods {
            periods: p.n_periods(),
            regressors: p.n_regressors(),
        });
    }
    Ok(())
}

/// Solves `[(1/T) Ẍ'Ẍ + κ I] β = (1/T) Ẍ'ÿ` with the structured solver and
/// returns the `N x K` per-unit slopes.
fn two_way_unit_slopes(
    p: &PanelData,
    dp: &DemeanedPanel,
    kappa: f64,
) -> Result<DMatrix<f64>, EstimationError> {
    let (n, t, k) = (p.n_units(), p.n_periods(), p.n_regressors());
    let factor = build_gram(dp, kappa).factorize().map_err(|e| match e {
        LinalgError::SingularBlock { units } => EstimationError::RankDeficient {
            units: units.iter().map(|&i| p.unit_labels()[i].clone()).collect(),
        },
        other => EstimationError::SingularSystem(other.to_string()),
    })?;

    let inv_t = 1.0 / t as f64;
    let mut rhs = DVector::zeros(n * k);
    for i in 0..n {
        let yi = dp.y_dd.row(i).transpose();
        rhs.rows_mut(i * k, k)
            .copy_from(&(dp.x_unit_dm[i].tr_mul(&yi) * inv_t));
    }
    let z = factor
        .solve(&rhs)
        .map_err(|e| EstimationError::SingularSystem(e.to_string()))?;
    Ok(DMatrix::from_fn(n, k, |i, j| z[i * k + j]))
}

/// Two-way mean-group estimator.
pub fn estimate_tw_mg(p: &PanelData) -> Result<SlopeEstimates, EstimationError> {
    require_periods(p)?;
    let dp = double_demean(p);
    let slopes = two_way_unit_slopes(p, &dp, 0.0)?;
    Ok(SlopeEstimates {
        method: Method::TwMg,
        beta_hat: column_mean(&slopes),
        unit_slopes: Some(slopes),
        kappa_used: None,
    })
}

/// Data-driven ridge parameter: the median over units of
/// `det((1/T) Σ_t ẍ_it ẍ_it')`, divided by `N`. For even `N` the median is
/// the midpoint of the two central values.
pub fn compute_ridge_kappa(p: &PanelData) -> f64 {
    ridge_kappa_from(&double_demean(p))
}

fn ridge_kappa_from(dp: &DemeanedPanel) -> f64 {
    let n = dp.n_units();
    let inv_t = 1.0 / dp.n_periods() as f64;
    let mut dets: Vec<f64> = dp
        .x_dd
        .iter()
        .map(|x| (x.tr_mul(x) * inv_t).determinant())
        .collect();
    dets.sort_by(f64::total_cmp);
    let median = if n % 2 == 1 {
        dets[n / 2]
    } else {
        0.5 * (dets[n / 2 - 1] + dets[n / 2])
    };
    let kappa = median / n as f64;
    if kappa > 0.0 {
        kappa
    } else {
        0.0
    }
}

/// Ridge-type two-way mean-group estimator. `kappa = None` uses
/// [`compute_ridge_kappa`].
pub fn estimate_tw_mg_ridge(
    p: &PanelData,
    kappa: Option<f64>,
) -> Result<SlopeEstimates, EstimationError> {
    let dp = double_demean(p);
    let kappa = match kappa {
        Some(k) if !(k.is_finite() && k >= 0.0) => return Err(EstimationError::InvalidKappa(k)),
        Some(k) => k,
        None => ridge_kappa_from(&dp),
    };
    let slopes = two_way_unit_slopes(p, &dp, kappa).map_err(|e| match e {
        EstimationError::RankDeficient { units } => EstimationError::SingularSystem(format!(
            "shifted system singular for unit(s) {} with kappa={kappa:e}",
            units.join(", ")
        )),
        other => other,
    })?;
    Ok(SlopeEstimates {
        method: Method::TwMgRidge,
        beta_hat: column_mean(&slopes),
        unit_slopes: Some(slopes),
        kappa_used: Some(kappa),
    })
}

fn spd_solve(
    a: DMatrix<f64>,
    b: &DVector<f64>,
    on_fail: impl FnOnce(f64) -> EstimationError,
) -> Result<DVector<f64>, EstimationError> {
    let rc = reciprocal_condition(&a);
    if rc < RANK_TOLERANCE {
        return Err(on_fail(rc));
    }
    Cholesky::new(a)
        .map(|ch| ch.solve(b))
        .ok_or_else(|| on_fail(rc))
}

/// Pooled two-way fixed-effects estimator on stacked double-demeaned data.
pub fn estimate_tw_pooled(p: &PanelData) -> Result<SlopeEstimates, EstimationError> {
    let dp = double_demean(p);
    let k = p.n_regressors();
    let mut gram = DMatrix::zeros(k, k);
    let mut cross = DVector::zeros(k);
    for (i, x) in dp.x_dd.iter().enumerate() {
        gram += x.tr_mul(x);
        cross += x.tr_mul(&dp.y_dd.row(i).transpose());
    }
    let beta_hat = spd_solve(gram, &cross, |rcond| EstimationError::PooledRankDeficient {
        rcond,
    })?;
    Ok(SlopeEstimates {
        method: Method::TwPooled,
        beta_hat,
        unit_slopes: None,
        kappa_used: None,
    })
}

/// Standard mean-group estimator: unit-by-unit OLS of `y_it` on `(x_it, 1)`.
pub fn estimate_standard_mg(p: &PanelData) -> Result<SlopeEstimates, EstimationError> {
    require_periods(p)?;
    let dp = double_demean(p);
    let (n, k) = (p.n_units(), p.n_regressors());
    let mut slopes = DMatrix::zeros(n, k);
    let mut bad = Vec::new();
    for i in 0..n {
        let x = &dp.x_unit_dm[i];
        let y = dp.y_unit_dm.row(i).transpose();
        match spd_solve(x.tr_mul(x), &x.tr_mul(&y), |_| {
            EstimationError::RankDeficient { units: vec![] }
        }) {
            Ok(b) => slopes.row_mut(i).copy_from(&b.transpose()),
            Err(_) => bad.push(p.unit_labels()[i].clone()),
        }
    }
    if !bad.is_empty() {
        return Err(EstimationError::RankDeficient { units: bad });
    }
    Ok(SlopeEstimates {
        method: Method::StandardMg,
        beta_hat: column_mean(&slopes),
        unit_slopes: Some(slopes),
        kappa_used: None,
    })
}

/// Dispatches to the estimator for `method`. `kappa` only affects the ridge
/// estimator.
pub fn estimate(
    p: &PanelData,
    method: Method,
    kappa: Option<f64>,
) -> Result<SlopeEstimates, EstimationError> {
    match method {
        Method::TwMg => estimate_tw_mg(p),
        Method::TwMgRidge => estimate_tw_mg_ridge(p, kappa),
        Method::TwPooled => estimate_tw_pooled(p),
        Method::StandardMg => estimate_standard_mg(p),
    }
}
