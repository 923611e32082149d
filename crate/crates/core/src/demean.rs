//! Within transformations.
//!
//! The double-demean operator `M_N ⊗ M_T` removes additive unit and period
//! effects:
//!
//! `z̈[i,t] = z[i,t] − mean_j z[j,t] − mean_s z[i,s] + mean_{j,s} z[j,s]`.
//!
//! It is computed as two passes (unit means first, then period means of the
//! unit-demeaned values), which is algebraically identical to the four-term
//! form. Means are a plain sum followed by a division.

use nalgebra::DMatrix;

use crate::panel::PanelData;

/// Demeaned views of a panel consumed by every estimator.
#[derive(Debug, Clone)]
pub struct DemeanedPanel {
    /// Double-demeaned outcome, `N x T`.
    pub y_dd: DMatrix<f64>,
    /// Double-demeaned regressors, one `T x K` block per unit.
    pub x_dd: Vec<DMatrix<f64>>,
    /// Outcome with each unit's time mean removed, `N x T`.
    pub y_unit_dm: DMatrix<f64>,
    /// Regressors with each unit's time mean removed, one `T x K` block per unit.
    pub x_unit_dm: Vec<DMatrix<f64>>,
}

impl DemeanedPanel {
    pub fn n_units(&self) -> usize {
        self.y_dd.nrows()
    }

    pub fn n_periods(&self) -> usize {
        self.y_dd.ncols()
    }

    pub fn n_regressors(&self) -> usize {
        self.x_dd[0].ncols()
    }
}

/// Removes unit (row) means from an `N x T` matrix.
pub fn unit_demean(z: &DMatrix<f64>) -> DMatrix<f64> {
    let t = z.ncols() as f64;
    let mut out = z.clone();
    for mut row in out.row_iter_mut() {
        let mean = row.iter().sum::<f64>() / t;
        row.iter_mut().for_each(|v| *v -= mean);
    }
    out
}

/// Applies `M_N ⊗ M_T` to an `N x T` matrix.
pub fn double_demean_matrix(z: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = unit_demean(z);
    let n = out.nrows() as f64;
    for mut col in out.column_iter_mut() {
        let mean = col.iter().sum::<f64>() / n;
        col.iter_mut().for_each(|v| *v -= mean);
    }
    out
}

fn demean_blocks(blocks: &[DMatrix<f64>]) -> (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) {
    let t = blocks[0].nrows();
    let k = blocks[0].ncols();
    let n = blocks.len() as f64;

    let unit_dm: Vec<DMatrix<f64>> = blocks
        .iter()
        .map(|b| {
            let mut d = b.clone();
            for mut col in d.column_iter_mut() {
                let mean = col.iter().sum::<f64>() / t as f64;
                col.iter_mut().for_each(|v| *v -= mean);
            }
            d
        })
        .collect();

    let mut period_mean = DMatrix::<f64>::zeros(t, k);
    for d in &unit_dm {
        period_mean += d;
    }
    period_mean /= n;

    let dd = unit_dm.iter().map(|d| d - &period_mean).collect();
    (unit_dm, dd)
}

/// Computes the unit-demeaned and double-demeaned outcome and regressors.
pub fn double_demean(p: &PanelData) -> DemeanedPanel {
    let y_unit_dm = unit_demean(p.y());
    let y_dd = double_demean_matrix(p.y());
    let (x_unit_dm, x_dd) = demean_blocks(p.x_blocks());
    DemeanedPanel {
        y_dd,
        x_dd,
        y_unit_dm,
        x_unit_dm,
    }
}
