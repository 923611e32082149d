//! Structured solves against the demeaned Gram matrix.
//!
//! For the unit-specific slope model the two-way within Gram matrix
//! `Q = (1/T) X' (M_N ⊗ M_T) X` (with `X = bdiag(x_1, ..., x_N)`) splits as
//!
//! ```text
//! Q = D - C C',   D = bdiag(q_11, ..., q_NN),   q_ii = (1/T) ẋ_i' ẋ_i,
//!                 c_i = (N T)^(-1/2) ẋ_i'   (K x T row block of C),
//! ```
//!
//! where `ẋ_i` holds unit `i`'s regressors with their time mean removed. A
//! ridge shift `κ` is added to every diagonal block. Solves use the
//! Woodbury identity
//!
//! ```text
//! (D - C C')^{-1} = D^{-1} + D^{-1} C (I_T - C' D^{-1} C)^{-1} C' D^{-1},
//! ```
//!
//! so the cost is `O(N K^3 + N T K^2 + N T^2 K + T^3)` instead of `O((N K)^3)`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use thiserror::Error;

use crate::demean::DemeanedPanel;

/// Minimum reciprocal condition number accepted for a diagonal block.
pub const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    /// Diagonal blocks (by unit index) that fail the condition threshold.
    #[error("singular diagonal block for unit(s) {units:?}")]
    SingularBlock { units: Vec<usize> },
    #[error("singular Woodbury capacitance matrix (reciprocal condition {rcond:e})")]
    SingularCapacitance { rcond: f64 },
    #[error("right-hand side has length {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Reciprocal condition number of a symmetric matrix from its eigenvalues.
/// Returns 0 for matrices that are not positive definite.
pub fn reciprocal_condition(m: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(m.clone()).eigenvalues;
    let max = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(max > 0.0) || !(min > 0.0) {
        0.0
    } else {
        min / max
    }
}

/// `Q = blockdiag(q_ii + κ I) - C C'`, stored in factored form.
#[derive(Debug, Clone)]
pub struct BlockLowRankGram {
    /// `q_ii = (1/T) ẋ_i' ẋ_i` without the ridge shift.
    pub diag_blocks: Vec<DMatrix<f64>>,
    /// `NK x T`; row block `i` is `(NT)^(-1/2) ẋ_i'`.
    pub low_rank_factor: DMatrix<f64>,
    pub ridge_shift: f64,
}

impl BlockLowRankGram {
    pub fn n_units(&self) -> usize {
        self.diag_blocks.len()
    }

    pub fn n_regressors(&self) -> usize {
        self.diag_blocks[0].nrows()
    }

    pub fn n_periods(&self) -> usize {
        self.low_rank_factor.ncols()
    }

    /// Diagonal block `i` including the ridge shift.
    pub fn shifted_block(&self, i: usize) -> DMatrix<f64> {
        let k = self.n_regressors();
        &self.diag_blocks[i] + DMatrix::<f64>::identity(k, k) * self.ridge_shift
    }

    fn factor_rows(&self, i: usize) -> nalgebra::DMatrixView<'_, f64> {
        let k = self.n_regressors();
        self.low_rank_factor.rows(i * k, k)
    }

    /// Structured product `Q v`.
    pub fn mul_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        let k = self.n_regressors();
        let ctv = self.low_rank_factor.tr_mul(v);
        let mut out = &self.low_rank_factor * ctv;
        out.neg_mut();
        for i in 0..self.n_units() {
            let vi = v.rows(i * k, k);
            let di = self.shifted_block(i) * vi;
            let mut oi = out.rows_mut(i * k, k);
            oi += di;
        }
        out
    }

    /// Explicit `NK x NK` matrix. Only meant for small problems and tests.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let k = self.n_regressors();
        let mut q = -(&self.low_rank_factor * self.low_rank_factor.transpose());
        for i in 0..self.n_units() {
            let mut blk = q.view_mut((i * k, i * k), (k, k));
            blk += self.shifted_block(i);
        }
        q
    }

    /// Factorizes every diagonal block and the Woodbury capacitance matrix.
    pub fn factorize(&self) -> Result<GramFactorization, LinalgError> {
        let n = self.n_units();
        let t = self.n_periods();

        let mut singular = Vec::new();
        let mut condition_report = Vec::with_capacity(n);
        let mut block_factors = Vec::with_capacity(n);
        for i in 0..n {
            let blk = self.shifted_block(i);
            let rc = reciprocal_condition(&blk);
            condition_report.push(rc);
            if rc < RANK_TOLERANCE {
                singular.push(i);
                continue;
            }
            match Cholesky::new(blk) {
                Some(ch) => block_factors.push(ch),
                None => singular.push(i),
            }
        }
        if !singular.is_empty() {
            return Err(LinalgError::SingularBlock { units: singular });
        }

        // D^{-1} C, kept for the back-substitution step of every solve.
        let mut dinv_c = DMatrix::zeros(self.low_rank_factor.nrows(), t);
        let mut capacitance = DMatrix::<f64>::identity(t, t);
        let k = self.n_regressors();
        for (i, ch) in block_factors.iter().enumerate() {
            let ci = self.factor_rows(i).into_owned();
            let di_ci = ch.solve(&ci);
            capacitance -= ci.tr_mul(&di_ci);
            dinv_c.rows_mut(i * k, k).copy_from(&di_ci);
        }
        // the capacitance matrix is symmetric up to rounding
        let capacitance = (&capacitance + capacitance.transpose()) * 0.5;
        let rcond = reciprocal_condition(&capacitance);
        if rcond < RANK_TOLERANCE {
            return Err(LinalgError::SingularCapacitance { rcond });
        }
        let capacitance_factor =
            Cholesky::new(capacitance).ok_or(LinalgError::SingularCapacitance { rcond })?;

        Ok(GramFactorization {
            n_regressors: k,
            block_factors,
            low_rank_factor: self.low_rank_factor.clone(),
            dinv_c,
            capacitance_factor,
            condition_report,
        })
    }
}

/// Builds the structured Gram matrix of a demeaned panel.
pub fn build_gram(dp: &DemeanedPanel, kappa: f64) -> BlockLowRankGram {
    let n = dp.n_units();
    let t = dp.n_periods();
    let k = dp.n_regressors();
    let inv_t = 1.0 / t as f64;
    let scale = 1.0 / ((n * t) as f64).sqrt();

    let mut diag_blocks = Vec::with_capacity(n);
    let mut low_rank_factor = DMatrix::zeros(n * k, t);
    for (i, xi) in dp.x_unit_dm.iter().enumerate() {
        diag_blocks.push(xi.tr_mul(xi) * inv_t);
        low_rank_factor
            .rows_mut(i * k, k)
            .copy_from(&(xi.transpose() * scale));
    }
    BlockLowRankGram {
        diag_blocks,
        low_rank_factor,
        ridge_shift: kappa,
    }
}

/// Factored form of a [`BlockLowRankGram`].
#[derive(Debug, Clone)]
pub struct GramFactorization {
    n_regressors: usize,
    pub block_factors: Vec<Cholesky<f64, Dyn>>,
    low_rank_factor: DMatrix<f64>,
    dinv_c: DMatrix<f64>,
    pub capacitance_factor: Cholesky<f64, Dyn>,
    /// Reciprocal condition number of each shifted diagonal block.
    pub condition_report: Vec<f64>,
}

impl GramFactorization {
    pub fn dim(&self) -> usize {
        self.block_factors.len() * self.n_regressors
    }

    /// Solves `Q z = rhs`.
    pub fn solve(&self, rhs: &DVector<f64>) -> Result<DVector<f64>, LinalgError> {
        if rhs.len() != self.dim() {
            return Err(LinalgError::DimensionMismatch {
                expected: self.dim(),
                got: rhs.len(),
            });
        }
        let k = self.n_regressors;
        let mut z = DVector::zeros(rhs.len());
        for (i, ch) in self.block_factors.iter().enumerate() {
            let wi = ch.solve(&rhs.rows(i * k, k).into_owned());
            z.rows_mut(i * k, k).copy_from(&wi);
        }
        let s = self.low_rank_factor.tr_mul(&z);
        let m = self.capacitance_factor.solve(&s);
        z += &self.dinv_c * m;
        Ok(z)
    }
}
