//! Leave-one-out jackknife inference and the poolability test.
//!
//! Every leave-one-out estimate is an exact re-estimation on the panel with
//! one unit deleted, computed through the same public estimator that
//! produced the full-sample estimate. The jackknife covariance of
//! `√N (β̂ − β⁰)` is
//!
//! ```text
//! Ω̂ = (N − 1) Σ_i (β̂⁽⁻ⁱ⁾ − β̄)(β̂⁽⁻ⁱ⁾ − β̄)',    β̄ = (1/N) Σ_i β̂⁽⁻ⁱ⁾.
//! ```

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimators::{
    compute_ridge_kappa, estimate, estimate_tw_pooled, EstimationError, Method, SlopeEstimates,
};
use crate::panel::PanelData;
use crate::special::{chi_square_upper_tail, normal_upper_quantile};

/// Reciprocal-condition threshold below which `Ω̂^Δ` is treated as singular.
pub const OMEGA_DELTA_TOLERANCE: f64 = 1e-12;

/// Relative size below which a mean-group/pooled difference is rounding noise.
const NUMERICAL_ZERO: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InferenceError {
    #[error("{source} (leave-one-out sample without unit '{deleted_unit}')")]
    LeaveOneOut {
        deleted_unit: String,
        source: EstimationError,
    },
    #[error(transparent)]
    Estimation(#[from] EstimationError),
    #[error("jackknife needs at least 3 units, got {0}")]
    TooFewUnits(usize),
    #[error("degenerate jackknife: all leave-one-out estimates are identical")]
    DegenerateJackknife,
    #[error("estimate method {estimate} does not match jackknife method {jackknife}")]
    MethodMismatch { estimate: Method, jackknife: Method },
    #[error("confidence level must lie in (0, 1), got {0}")]
    InvalidLevel(f64),
    #[error("coefficient index {index} out of range for {k} regressors")]
    InvalidCoefficient { index: usize, k: usize },
    #[error("jackknife covariance of the mean-group/pooled difference is singular (reciprocal condition {rcond:e})")]
    SingularOmegaDelta { rcond: f64 },
    #[error("p-value {0} outside [0, 1]")]
    OutOfRange(f64),
}

/// How the ridge parameter is chosen on leave-one-out samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KappaPolicy {
    /// Reuse the full-sample κ on every subsample.
    #[default]
    Fixed,
    /// Recompute κ from each subsample.
    Recomputed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JackknifeCovariance {
    pub method: Method,
    /// `K x K` estimate of the asymptotic variance of `√N (β̂ − β⁰)`.
    pub omega_hat: DMatrix<f64>,
    /// `N x K`; row `i` is the estimate without unit `i`.
    pub loo_estimates: DMatrix<f64>,
    pub loo_mean: DVector<f64>,
    /// κ used on the subsamples when it was held fixed.
    pub kappa: Option<f64>,
}

impl JackknifeCovariance {
    /// Standard error of coefficient `k`: `sqrt(Ω̂_kk / N)`.
    pub fn std_error(&self, k: usize) -> f64 {
        (self.omega_hat[(k, k)] / self.loo_estimates.nrows() as f64).sqrt()
    }
}

/// `(N − 1) Σ_i (r_i − r̄)(r_i − r̄)'` over the rows of `rows`, plus `r̄`.
fn jackknife_spread(rows: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let n = rows.nrows();
    let k = rows.ncols();
    let mean = DVector::from_iterator(
        k,
        rows.column_iter().map(|c| c.iter().sum::<f64>() / n as f64),
    );
    let mut omega = DMatrix::zeros(k, k);
    for i in 0..n {
        let d = rows.row(i).transpose() - &mean;
        omega += &d * d.transpose();
    }
    omega *= (n - 1) as f64;
    (omega, mean)
}

fn loo_rows(
    p: &PanelData,
    per_unit: impl Fn(&PanelData) -> Result<DVector<f64>, EstimationError> + Sync,
) -> Result<DMatrix<f64>, InferenceError> {
    let n = p.n_units();
    let rows: Vec<DVector<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let sub = p
                .without_unit(i)
                .expect("deleting one unit from a panel with N >= 3 stays valid");
            per_unit(&sub).map_err(|source| InferenceError::LeaveOneOut {
                deleted_unit: p.unit_labels()[i].clone(),
                source,
            })
        })
        .collect::<Result<_, _>>()?;
    let k = rows[0].len();
    Ok(DMatrix::from_fn(n, k, |i, j| rows[i][j]))
}

fn resolve_kappa(
    p: &PanelData,
    method: Method,
    kappa: Option<f64>,
    policy: KappaPolicy,
) -> Option<f64> {
    match (method, policy) {
        (Method::TwMgRidge, KappaPolicy::Fixed) => {
            Some(kappa.unwrap_or_else(|| compute_ridge_kappa(p)))
        }
        _ => None,
    }
}

/// Exact leave-one-out jackknife covariance of `method`.
pub fn jackknife(
    p: &PanelData,
    method: Method,
    kappa_policy: KappaPolicy,
) -> Result<JackknifeCovariance, InferenceError> {
    jackknife_with_kappa(p, method, None, kappa_policy)
}

/// As [`jackknife`], with an explicit full-sample κ for the ridge estimator
/// under [`KappaPolicy::Fixed`].
pub fn jackknife_with_kappa(
    p: &PanelData,
    method: Method,
    kappa: Option<f64>,
    kappa_policy: KappaPolicy,
) -> Result<JackknifeCovariance, InferenceError> {
    if p.n_units() < 3 {
        return Err(InferenceError::TooFewUnits(p.n_units()));
    }
    let fixed = resolve_kappa(p, method, kappa, kappa_policy);
    let loo = loo_rows(p, |sub| Ok(estimate(sub, method, fixed)?.beta_hat))?;
    let first = loo.row(0);
    if loo.row_iter().all(|r| r == first) {
        return Err(InferenceError::DegenerateJackknife);
    }
    let (omega_hat, loo_mean) = jackknife_spread(&loo);
    Ok(JackknifeCovariance {
        method,
        omega_hat,
        loo_estimates: loo,
        loo_mean,
        kappa: fixed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub coefficient_index: usize,
    pub level: f64,
    pub lower: f64,
    pub upper: f64,
    pub point: f64,
    pub std_error: f64,
}

impl ConfidenceInterval {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, value: f64) -> bool {
        self.lower <= value && value <= self.upper
    }
}

/// Normal-approximation interval `β̂_k ± z · sqrt(Ω̂_kk / N)` at confidence `level`.
pub fn confidence_interval(
    est: &SlopeEstimates,
    jk: &JackknifeCovariance,
    level: f64,
    select: usize,
) -> Result<ConfidenceInterval, InferenceError> {
    if est.method != jk.method {
        return Err(InferenceError::MethodMismatch {
            estimate: est.method,
            jackknife: jk.method,
        });
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(InferenceError::InvalidLevel(level));
    }
    let k = est.beta_hat.len();
    if select >= k {
        return Err(InferenceError::InvalidCoefficient { index: select, k });
    }
    let z = normal_upper_quantile(0.5 * (1.0 - level));
    let se = jk.std_error(select);
    let point = est.beta_hat[select];
    Ok(ConfidenceInterval {
        coefficient_index: select,
        level,
        lower: point - z * se,
        upper: point + z * se,
        point,
        std_error: se,
    })
}

/// Step-down Holm adjustment: with `p_(1) ≤ … ≤ p_(K)`,
/// `adjusted p_(k) = min((K − k + 1) p_(k), 1)`, returned in input order.
/// Ties keep input order. No monotonicity step is applied.
pub fn holm_adjust(pvalues: &[f64]) -> Result<Vec<f64>, InferenceError> {
    if let Some(&bad) = pvalues.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(InferenceError::OutOfRange(bad));
    }
    let k = pvalues.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| pvalues[a].total_cmp(&pvalues[b]));
    let mut out = vec![0.0; k];
    for (rank, &idx) in order.iter().enumerate() {
        out[idx] = ((k - rank) as f64 * pvalues[idx]).min(1.0);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientTest {
    pub statistic: f64,
    pub pvalue: f64,
    pub holm_pvalue: f64,
}

/// Hausman-type test of equal probability limits for the mean-group and
/// pooled estimators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolabilityReport {
    pub mean_group: Method,
    pub joint_stat: f64,
    pub joint_df: u32,
    pub joint_pvalue: f64,
    /// Holm-adjusted joint p-value. The adjustment family is the per-coefficient
    /// hypotheses plus the joint one when `K > 1`.
    pub joint_holm_pvalue: f64,
    pub per_coef: Vec<CoefficientTest>,
    /// `β̂^MG − β̂^P`.
    pub delta: Vec<f64>,
    /// Row-major `K x K` jackknife covariance of the difference.
    pub omega_delta: Vec<Vec<f64>>,
    pub n_units: usize,
    pub kappa: Option<f64>,
}

/// Runs the poolability test. `use_ridge` selects the ridge mean-group
/// estimator (with κ fixed at its full-sample value on every subsample).
pub fn poolability_test(
    p: &PanelData,
    use_ridge: bool,
) -> Result<PoolabilityReport, InferenceError> {
    poolability_test_with_kappa(p, use_ridge, None)
}

/// As [`poolability_test`] with an explicit ridge parameter.
pub fn poolability_test_with_kappa(
    p: &PanelData,
    use_ridge: bool,
    kappa: Option<f64>,
) -> Result<PoolabilityReport, InferenceError> {
    if p.n_units() < 3 {
        return Err(InferenceError::TooFewUnits(p.n_units()));
    }
    let method = if use_ridge {
        Method::TwMgRidge
    } else {
        Method::TwMg
    };
    let fixed = resolve_kappa(p, method, kappa, KappaPolicy::Fixed);
    let mg = estimate(p, method, fixed)?;
    let pooled = estimate_tw_pooled(p)?;
    let loo_mg = loo_rows(p, |sub| Ok(estimate(sub, method, fixed)?.beta_hat))?;
    let loo_pooled = loo_rows(p, |sub| Ok(estimate_tw_pooled(sub)?.beta_hat))?;
    poolability_from_parts(&mg, &pooled, &loo_mg, &loo_pooled)
}

/// Builds the poolability report from full-sample estimates and their
/// leave-one-out estimates on the same subsamples (rows in unit order).
pub fn poolability_from_parts(
    mg: &SlopeEstimates,
    pooled: &SlopeEstimates,
    loo_mg: &DMatrix<f64>,
    loo_pooled: &DMatrix<f64>,
) -> Result<PoolabilityReport, InferenceError> {
    let n = loo_mg.nrows();
    let k = mg.beta_hat.len();
    let delta = &mg.beta_hat - &pooled.beta_hat;
    let loo_delta = loo_mg - loo_pooled;
    let (omega, _) = jackknife_spread(&loo_delta);

    let scale = 1.0 + mg.beta_hat.amax().max(pooled.beta_hat.amax());
    let noise = NUMERICAL_ZERO * scale;
    let report =
        |joint_stat: f64, per_stat: Vec<f64>| -> Result<PoolabilityReport, InferenceError> {
            let joint_pvalue = chi_square_upper_tail(joint_stat, k as u32);
            let raw: Vec<f64> = per_stat
                .iter()
                .map(|&s| chi_square_upper_tail(s, 1))
                .collect();
            let (per_holm, joint_holm) = if k > 1 {
                let mut family = raw.clone();
                family.push(joint_pvalue);
                let adj = holm_adjust(&family)?;
                (adj[..k].to_vec(), adj[k])
            } else {
                (raw.clone(), joint_pvalue)
            };
            Ok(PoolabilityReport {
                mean_group: mg.method,
                joint_stat,
                joint_df: k as u32,
                joint_pvalue,
                joint_holm_pvalue: joint_holm,
                per_coef: per_stat
                    .iter()
                    .zip(raw.iter().zip(&per_holm))
                    .map(|(&statistic, (&pvalue, &holm_pvalue))| CoefficientTest {
                        statistic,
                        pvalue,
                        holm_pvalue,
                    })
                    .collect(),
                delta: delta.iter().copied().collect(),
                omega_delta: omega
                    .row_iter()
                    .map(|r| r.iter().copied().collect())
                    .collect(),
                n_units: n,
                kappa: mg.kappa_used,
            })
        };

    // identical estimators on every sample: no evidence against pooling
    if delta.amax() <= noise && loo_delta.amax() <= noise {
        return report(0.0, vec![0.0; k]);
    }

    let eig = SymmetricEigen::new(omega.clone());
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    let rcond = if max > 0.0 && min > 0.0 {
        min / max
    } else {
        0.0
    };
    if rcond < OMEGA_DELTA_TOLERANCE {
        return Err(InferenceError::SingularOmegaDelta { rcond });
    }
    let inv = &eig.eigenvectors
        * DMatrix::from_diagonal(&eig.eigenvalues.map(|v| 1.0 / v))
        * eig.eigenvectors.transpose();
    let joint = (n as f64 * (delta.transpose() * &inv * &delta)[(0, 0)]).max(0.0);
    let per: Vec<f64> = (0..k)
        .map(|j| n as f64 * delta[j] * delta[j] / omega[(j, j)])
        .collect();
    report(joint, per)
}
