//! Estimation and inference for fixed-`T` panels with heterogeneous slopes
//! and two-way fixed effects.
//!
//! The model is `y_it = β_i' x_it + α_i + α_t + e_it` with `β_i = β⁰ + η_i`.
//! The two-way mean-group (TW-MG) estimator fits every `β_i` jointly by least
//! squares with unit and period dummies and averages them; the pooled two-way
//! fixed-effects estimator fits a single slope. Leave-one-out jackknife
//! covariances give confidence intervals for `β⁰` and a Hausman-type test of
//! whether pooling is justified.
//!
//! ```
//! use panelmg::{estimate_tw_mg, jackknife, confidence_interval, KappaPolicy, Method};
//! use panelmg::simulation::{simulate_dgp, DgpSpec};
//!
//! let (panel, _) = simulate_dgp(&DgpSpec::new(3, 60, 6, 1).unwrap());
//! let est = estimate_tw_mg(&panel).unwrap();
//! let jk = jackknife(&panel, Method::TwMg, KappaPolicy::Fixed).unwrap();
//! let ci = confidence_interval(&est, &jk, 0.95, 0).unwrap();
//! assert!(ci.lower < ci.point && ci.point < ci.upper);
//! ```

pub mod demean;
pub mod estimators;
pub mod gram;
pub mod inference;
pub mod io;
pub mod panel;
pub mod simulation;
pub mod special;

/// Version tag carried by every serialized report.
pub const SCHEMA: &str = "panelmg/1";

pub use nalgebra::{DMatrix, DVector};

pub use demean::{double_demean, DemeanedPanel};
pub use estimators::{
    compute_ridge_kappa, estimate, estimate_standard_mg, estimate_tw_mg, estimate_tw_mg_ridge,
    estimate_tw_pooled, EstimationError, Method, SlopeEstimates,
};
pub use gram::{build_gram, BlockLowRankGram, GramFactorization, LinalgError};
pub use inference::{
    confidence_interval, holm_adjust, jackknife, jackknife_with_kappa, poolability_test,
    poolability_test_with_kappa, ConfidenceInterval, InferenceError, JackknifeCovariance,
    KappaPolicy, PoolabilityReport,
};
pub use io::{read_panel, read_panel_csv, write_panel_csv};
pub use panel::{PanelData, PanelError, Record};
pub use special::{chi_square_upper_tail, normal_quantile, normal_upper_quantile};
