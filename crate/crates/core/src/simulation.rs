//! Simulation designs and the Monte Carlo harness.
//!
//! All six designs share
//!
//! ```text
//! y_it = β_i' x_it + α_i + α_t + λ_i f_t + u_it
//! x_it = μ_i + μ_t + γ_i f_t + v_it
//! ```
//!
//! with `α_i = μ_i = λ_i`, `α_t = μ_t = f_t`, and `λ_i, f_t, γ_i ~ N(1, 1)`;
//! every other primitive shock is `N(0, 1)`.
//!
//! | design | K | slopes | regressor noise | interactive effects |
//! |--------|---|--------|-----------------|---------------------|
//! | 1 | 1 | `β_i = 1` | `v = v*` | yes |
//! | 2 | 1 | `β_i = 1 + η*_i` | `v = v*` | yes |
//! | 3 | 1 | `β_i = 1 + η*_i` | `v = β_i ξ + v*` | yes |
//! | 4 | 2 | `β_1i = 1 + η*_1i`, `β_2i = γ_2i + η*_2i` | `v_1 = β_1i ξ + v*_1`, `v_2 = v*_2` | yes |
//! | 5 | 1 | as design 3 | as design 3 | no |
//! | 6 | 2 | as design 4 | as design 4 | no |
//!
//! Designs 4 and 6 use `u_it = sqrt(1 + 0.25 x_1it²) u*_it` with
//! `u*_it = 0.25 u*_i,t−1 + u**_it`, started at zero 50 steps before the
//! first observed period.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimators::{estimate, estimate_tw_pooled, Method, SlopeEstimates};
use crate::inference::{
    confidence_interval, jackknife_with_kappa, poolability_from_parts, JackknifeCovariance,
    KappaPolicy,
};
use crate::panel::{default_labels, PanelData};
use crate::SCHEMA;

/// Pre-sample steps of the AR(1) error in designs 4 and 6.
pub const AR_BURN_IN: usize = 50;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("unknown design {0}; expected 1 to 6")]
    UnknownDgp(u8),
    #[error("design {dgp} needs N >= 2 and T >= {min_t}, got N={n}, T={t}")]
    TooSmall {
        dgp: u8,
        n: usize,
        t: usize,
        min_t: usize,
    },
    #[error("replications must be at least 1")]
    NoReplications,
    #[error("{0}")]
    Io(String),
}

/// One simulation design at one sample size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DgpSpec {
    pub dgp: u8,
    pub n_units: usize,
    pub n_periods: usize,
    pub seed: u64,
}

impl DgpSpec {
    pub fn new(dgp: u8, n_units: usize, n_periods: usize, seed: u64) -> Result<Self, SimError> {
        if !(1..=6).contains(&dgp) {
            return Err(SimError::UnknownDgp(dgp));
        }
        let min_t = regressors_of(dgp) + 2;
        if n_units < 2 || n_periods < min_t {
            return Err(SimError::TooSmall {
                dgp,
                n: n_units,
                t: n_periods,
                min_t,
            });
        }
        Ok(DgpSpec {
            dgp,
            n_units,
            n_periods,
            seed,
        })
    }

    pub fn n_regressors(&self) -> usize {
        regressors_of(self.dgp)
    }
}

fn regressors_of(dgp: u8) -> usize {
    if dgp == 4 || dgp == 6 {
        2
    } else {
        1
    }
}

/// True slopes behind a simulated panel.
#[derive(Debug, Clone, PartialEq)]
pub struct SimTruth {
    pub beta0: DVector<f64>,
    /// `N x K`.
    pub unit_betas: DMatrix<f64>,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Draws one panel from the design. Deterministic in `spec.seed`.
pub fn simulate_dgp(spec: &DgpSpec) -> (PanelData, SimTruth) {
    match spec.dgp {
        1 | 2 | 3 | 5 => simulate_single(spec, None),
        _ => simulate_double(spec),
    }
}

/// `components`, when given, receives `(v_it, ξ_it)` in unit-major order.
fn simulate_single(
    spec: &DgpSpec,
    mut components: Option<&mut Vec<(f64, f64)>>,
) -> (PanelData, SimTruth) {
    let (n, t) = (spec.n_units, spec.n_periods);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let interactive = spec.dgp != 5;

    let mut lambda = vec![0.0; n];
    let mut gamma = vec![0.0; n];
    let mut beta = vec![0.0; n];
    for i in 0..n {
        lambda[i] = 1.0 + normal(&mut rng);
        gamma[i] = 1.0 + normal(&mut rng);
        let eta_star = normal(&mut rng);
        beta[i] = if spec.dgp == 1 { 1.0 } else { 1.0 + eta_star };
    }
    let f: Vec<f64> = (0..t).map(|_| 1.0 + normal(&mut rng)).collect();

    let mut y = DMatrix::zeros(n, t);
    let mut x = vec![DMatrix::zeros(t, 1); n];
    for i in 0..n {
        for s in 0..t {
            let u = normal(&mut rng);
            let xi = normal(&mut rng);
            let v_star = normal(&mut rng);
            let v = if matches!(spec.dgp, 3 | 5) {
                beta[i] * xi + v_star
            } else {
                v_star
            };
            if let Some(c) = components.as_deref_mut() {
                c.push((v, xi));
            }
            let (lf, gf) = if interactive {
                (lambda[i] * f[s], gamma[i] * f[s])
            } else {
                (0.0, 0.0)
            };
            let xv = lambda[i] + f[s] + gf + v;
            x[i][(s, 0)] = xv;
            y[(i, s)] = beta[i] * xv + lambda[i] + f[s] + lf + u;
        }
    }
    let (ul, tl) = default_labels(n, t);
    let panel = PanelData::new(ul, tl, y, x).expect("simulated panel is valid");
    let truth = SimTruth {
        beta0: DVector::from_element(1, 1.0),
        unit_betas: DMatrix::from_column_slice(n, 1, &beta),
    };
    (panel, truth)
}

fn simulate_double(spec: &DgpSpec) -> (PanelData, SimTruth) {
    let (n, t) = (spec.n_units, spec.n_periods);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let interactive = spec.dgp == 4;

    let mut lambda = vec![0.0; n];
    let mut gamma1 = vec![0.0; n];
    let mut gamma2 = vec![0.0; n];
    let mut beta = DMatrix::zeros(n, 2);
    for i in 0..n {
        lambda[i] = 1.0 + normal(&mut rng);
        gamma1[i] = 1.0 + normal(&mut rng);
        gamma2[i] = 1.0 + normal(&mut rng);
        let eta1 = normal(&mut rng);
        let eta2 = gamma2[i] - 1.0 + normal(&mut rng);
        beta[(i, 0)] = 1.0 + eta1;
        beta[(i, 1)] = 1.0 + eta2;
    }
    let f: Vec<f64> = (0..t).map(|_| 1.0 + normal(&mut rng)).collect();

    let mut x = vec![DMatrix::zeros(t, 2); n];
    for i in 0..n {
        for s in 0..t {
            let xi = normal(&mut rng);
            let v1 = beta[(i, 0)] * xi + normal(&mut rng);
            let v2 = normal(&mut rng);
            let (g1f, g2f) = if interactive {
                (gamma1[i] * f[s], gamma2[i] * f[s])
            } else {
                (0.0, 0.0)
            };
            x[i][(s, 0)] = lambda[i] + f[s] + g1f + v1;
            x[i][(s, 1)] = lambda[i] + f[s] + g2f + v2;
        }
    }

    let mut y = DMatrix::zeros(n, t);
    for i in 0..n {
        let mut ar = 0.0;
        for _ in 0..AR_BURN_IN {
            ar = 0.25 * ar + normal(&mut rng);
        }
        for s in 0..t {
            ar = 0.25 * ar + normal(&mut rng);
            let x1 = x[i][(s, 0)];
            let u = (1.0 + 0.25 * x1 * x1).sqrt() * ar;
            let lf = if interactive { lambda[i] * f[s] } else { 0.0 };
            y[(i, s)] = beta[(i, 0)] * x1 + beta[(i, 1)] * x[i][(s, 1)] + lambda[i] + f[s] + lf + u;
        }
    }
    let (ul, tl) = default_labels(n, t);
    let panel = PanelData::new(ul, tl, y, x).expect("simulated panel is valid");
    let truth = SimTruth {
        beta0: DVector::from_element(2, 1.0),
        unit_betas: beta,
    };
    (panel, truth)
}

/// A design/sample-size combination of the Monte Carlo grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridCell {
    pub dgp: u8,
    pub n_units: usize,
    pub n_periods: usize,
}

impl GridCell {
    pub fn new(dgp: u8, n_units: usize, n_periods: usize) -> Result<Self, SimError> {
        DgpSpec::new(dgp, n_units, n_periods, 0)?;
        Ok(GridCell {
            dgp,
            n_units,
            n_periods,
        })
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of replication `rep` of `cell`. Depends only on the cell's identity,
/// so adding or reordering cells leaves other streams untouched.
pub fn replication_seed(base_seed: u64, cell: &GridCell, rep: usize) -> u64 {
    [
        cell.dgp as u64,
        cell.n_units as u64,
        cell.n_periods as u64,
        rep as u64,
    ]
    .iter()
    .fold(splitmix64(base_seed), |h, &v| splitmix64(h ^ v))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloConfig {
    pub replications: usize,
    pub base_seed: u64,
    pub estimators: Vec<Method>,
    /// Confidence level of the jackknife intervals.
    pub level: f64,
    /// Nominal size of the poolability test.
    pub test_level: f64,
    pub kappa_policy: KappaPolicy,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        MonteCarloConfig {
            replications: 250,
            base_seed: 20240101,
            estimators: Method::ALL.to_vec(),
            level: 0.95,
            test_level: 0.05,
            kappa_policy: KappaPolicy::Fixed,
        }
    }
}

/// One row per cell, estimator and coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimRow {
    pub dgp: u8,
    pub n: usize,
    pub t: usize,
    pub estimator: Method,
    /// 1-based coefficient index.
    pub coefficient: usize,
    pub replications: usize,
    /// Replications where the point estimate failed.
    pub failures: usize,
    /// Replications where the interval or test failed.
    pub inference_failures: usize,
    pub bias_x10: Option<f64>,
    pub mse_x100: Option<f64>,
    pub ci_level: Option<f64>,
    pub coverage: Option<f64>,
    pub test_level: Option<f64>,
    pub rejection_rate: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimReport {
    pub schema: String,
    pub base_seed: u64,
    pub replications: usize,
    pub rows: Vec<SimRow>,
    /// Wall time per grid cell in seconds. Not serialized, so reports are
    /// byte-identical across runs.
    #[serde(skip)]
    pub wall_time_s: Vec<f64>,
}

impl PartialEq for SimReport {
    fn eq(&self, other: &Self) -> bool {
        self.schema == other.schema
            && self.base_seed == other.base_seed
            && self.replications == other.replications
            && self.rows == other.rows
    }
}

#[derive(Debug, Clone, Default)]
struct EstimatorDraw {
    beta: Option<DVector<f64>>,
    covered: Option<Vec<bool>>,
    rejected: Option<bool>,
    inference_failed: bool,
}

fn has_inference(m: Method) -> bool {
    matches!(m, Method::TwMg | Method::TwMgRidge)
}

fn one_replication(
    cell: &GridCell,
    rep: usize,
    cfg: &MonteCarloConfig,
) -> (DVector<f64>, Vec<EstimatorDraw>) {
    let spec = DgpSpec {
        dgp: cell.dgp,
        n_units: cell.n_units,
        n_periods: cell.n_periods,
        seed: replication_seed(cfg.base_seed, cell, rep),
    };
    let (panel, truth) = simulate_dgp(&spec);
    let k = truth.beta0.len();

    let pooled_full = estimate_tw_pooled(&panel).ok();
    let need_pooled_loo = cfg.estimators.iter().any(|m| has_inference(*m));
    let pooled_jk: Option<JackknifeCovariance> = if need_pooled_loo {
        jackknife_with_kappa(&panel, Method::TwPooled, None, KappaPolicy::Fixed).ok()
    } else {
        None
    };

    let draws = cfg
        .estimators
        .iter()
        .map(|&m| {
            let est: Option<SlopeEstimates> = match m {
                Method::TwPooled => pooled_full.clone(),
                _ => estimate(&panel, m, None).ok(),
            };
            let Some(est) = est else {
                return EstimatorDraw::default();
            };
            let mut draw = EstimatorDraw {
                beta: Some(est.beta_hat.clone()),
                ..Default::default()
            };
            if has_inference(m) {
                let jk = jackknife_with_kappa(&panel, m, est.kappa_used, cfg.kappa_policy);
                let covered: Option<Vec<bool>> = jk.as_ref().ok().and_then(|jk| {
                    (0..k)
                        .map(|j| {
                            confidence_interval(&est, jk, cfg.level, j)
                                .ok()
                                .map(|ci| ci.contains(truth.beta0[j]))
                        })
                        .collect()
                });
                let rejected = match (&jk, &pooled_full, &pooled_jk) {
                    (Ok(jk), Some(pf), Some(pjk)) => {
                        poolability_from_parts(&est, pf, &jk.loo_estimates, &pjk.loo_estimates)
                            .ok()
                            .map(|r| r.joint_pvalue < cfg.test_level)
                    }
                    _ => None,
                };
                draw.inference_failed = covered.is_none() || rejected.is_none();
                draw.covered = covered;
                draw.rejected = rejected;
            }
            draw
        })
        .collect();
    (truth.beta0, draws)
}

/// Runs every cell of `grid` for `cfg.replications` replications.
///
/// Replications run in parallel on the current rayon pool; results are
/// aggregated in replication order, so the report does not depend on the
/// number of threads.
pub fn run_monte_carlo(grid: &[GridCell], cfg: &MonteCarloConfig) -> Result<SimReport, SimError> {
    if cfg.replications == 0 {
        return Err(SimError::NoReplications);
    }
    let mut rows = Vec::new();
    let mut wall_time_s = Vec::with_capacity(grid.len());
    for cell in grid {
        GridCell::new(cell.dgp, cell.n_units, cell.n_periods)?;
        let start = Instant::now();
        let results: Vec<(DVector<f64>, Vec<EstimatorDraw>)> = (0..cfg.replications)
            .into_par_iter()
            .map(|r| one_replication(cell, r, cfg))
            .collect();
        wall_time_s.push(start.elapsed().as_secs_f64());
        rows.extend(aggregate(cell, cfg, &results));
    }
    Ok(SimReport {
        schema: SCHEMA.to_string(),
        base_seed: cfg.base_seed,
        replications: cfg.replications,
        rows,
        wall_time_s,
    })
}

fn aggregate(
    cell: &GridCell,
    cfg: &MonteCarloConfig,
    results: &[(DVector<f64>, Vec<EstimatorDraw>)],
) -> Vec<SimRow> {
    let k = results[0].0.len();
    let mut rows = Vec::new();
    for (e, &method) in cfg.estimators.iter().enumerate() {
        let ok: Vec<(&DVector<f64>, &EstimatorDraw)> = results
            .iter()
            .filter(|(_, d)| d[e].beta.is_some())
            .map(|(b0, d)| (b0, &d[e]))
            .collect();
        let failures = results.len() - ok.len();
        let inference_failures = ok.iter().filter(|(_, d)| d.inference_failed).count();
        for j in 0..k {
            let count = ok.len() as f64;
            let (bias, mse) = if ok.is_empty() {
                (None, None)
            } else {
                let mut sum = 0.0;
                let mut sum_sq = 0.0;
                for (b0, d) in &ok {
                    let err = d.beta.as_ref().unwrap()[j] - b0[j];
                    sum += err;
                    sum_sq += err * err;
                }
                (Some(10.0 * sum / count), Some(100.0 * sum_sq / count))
            };
            let (coverage, rejection) = if has_inference(method) {
                let cov: Vec<bool> = ok
                    .iter()
                    .filter_map(|(_, d)| d.covered.as_ref().map(|c| c[j]))
                    .collect();
                let rej: Vec<bool> = ok.iter().filter_map(|(_, d)| d.rejected).collect();
                (frequency(&cov), frequency(&rej))
            } else {
                (None, None)
            };
            let inference = has_inference(method);
            rows.push(SimRow {
                dgp: cell.dgp,
                n: cell.n_units,
                t: cell.n_periods,
                estimator: method,
                coefficient: j + 1,
                replications: results.len(),
                failures,
                inference_failures,
                bias_x10: bias,
                mse_x100: mse,
                ci_level: inference.then_some(cfg.level),
                coverage,
                test_level: inference.then_some(cfg.test_level),
                rejection_rate: rejection,
            });
        }
    }
    rows
}

fn frequency(hits: &[bool]) -> Option<f64> {
    if hits.is_empty() {
        None
    } else {
        Some(hits.iter().filter(|h| **h).count() as f64 / hits.len() as f64)
    }
}

impl SimReport {
    pub fn row(
        &self,
        dgp: u8,
        n: usize,
        t: usize,
        estimator: Method,
        coefficient: usize,
    ) -> Option<&SimRow> {
        self.rows.iter().find(|r| {
            r.dgp == dgp
                && r.n == n
                && r.t == t
                && r.estimator == estimator
                && r.coefficient == coefficient
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, SimError> {
        serde_json::from_str(s).map_err(|e| SimError::Io(e.to_string()))
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r).expect("row serializes");
        }
        String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8 csv")
    }

    /// Parses rows written by [`SimReport::to_csv`]. The CSV carries no seed,
    /// so `base_seed` is taken from the caller.
    pub fn from_csv(s: &str, base_seed: u64) -> Result<Self, SimError> {
        let mut rdr = csv::Reader::from_reader(s.as_bytes());
        let rows: Vec<SimRow> = rdr
            .deserialize()
            .collect::<Result<_, _>>()
            .map_err(|e| SimError::Io(e.to_string()))?;
        let replications = rows.first().map_or(0, |r| r.replications);
        Ok(SimReport {
            schema: SCHEMA.to_string(),
            base_seed,
            replications,
            rows,
            wall_time_s: Vec::new(),
        })
    }

    /// Plain-text summary: bias×10, MSE×100, coverage and rejection rate per
    /// cell and estimator.
    pub fn summary_table(&self) -> String {
        let fmt =
            |v: Option<f64>, prec: usize| v.map_or("-".to_string(), |x| format!("{x:.prec$}"));
        let mut out = format!(
            "{:>4} {:>5} {:>3} {:>12} {:>4} {:>9} {:>9} {:>8} {:>8} {:>6}\n",
            "dgp", "N", "T", "estimator", "coef", "bias×10", "MSE×100", "cover", "reject", "fail"
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{:>4} {:>5} {:>3} {:>12} {:>4} {:>9} {:>9} {:>8} {:>8} {:>6}\n",
                r.dgp,
                r.n,
                r.t,
                r.estimator.name(),
                r.coefficient,
                fmt(r.bias_x10, 2),
                fmt(r.mse_x100, 2),
                fmt(r.coverage, 3),
                fmt(r.rejection_rate, 3),
                r.failures
            ));
        }
        out
    }
}
