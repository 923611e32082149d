//! Dense reference implementations shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use panelmg::PanelData;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Random balanced panel with heterogeneous slopes correlated with the
/// regressors, additive unit and period effects, and unit labels `u1..uN`.
pub fn random_panel(n: usize, t: usize, k: usize, seed: u64) -> PanelData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = |rng: &mut ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };
    let unit_fx: Vec<f64> = (0..n).map(|_| z(&mut rng)).collect();
    let time_fx: Vec<f64> = (0..t).map(|_| z(&mut rng)).collect();
    let mut y = DMatrix::zeros(n, t);
    let mut x = Vec::with_capacity(n);
    for i in 0..n {
        let loading: Vec<f64> = (0..k).map(|_| z(&mut rng)).collect();
        let beta: Vec<f64> = loading.iter().map(|l| 1.0 + 0.5 * l).collect();
        let mut xi = DMatrix::zeros(t, k);
        for s in 0..t {
            let mut yit = unit_fx[i] + time_fx[s] + 0.5 * z(&mut rng);
            for j in 0..k {
                let v = loading[j] + 0.3 * time_fx[s] + z(&mut rng);
                xi[(s, j)] = v;
                yit += beta[j] * v;
            }
            y[(i, s)] = yit;
        }
        x.push(xi);
    }
    let (units, times) = panelmg::panel::default_labels(n, t);
    PanelData::new(units, times, y, x).unwrap()
}

fn dummies(p: &PanelData, design: &mut DMatrix<f64>, first_col: usize) {
    let (n, t) = (p.n_units(), p.n_periods());
    for i in 0..n {
        for s in 0..t {
            let row = i * t + s;
            design[(row, first_col + i)] = 1.0;
            if s > 0 {
                design[(row, first_col + n + s - 1)] = 1.0;
            }
        }
    }
}

fn stacked_y(p: &PanelData) -> DVector<f64> {
    let (n, t) = (p.n_units(), p.n_periods());
    DVector::from_fn(n * t, |r, _| p.y()[(r / t, r % t)])
}

/// Least squares via Householder QR; `None` when the design has numerically
/// deficient column rank (judged from its singular values).
fn lstsq(design: DMatrix<f64>, y: &DVector<f64>) -> Option<DVector<f64>> {
    if design.ncols() > design.nrows() {
        return None;
    }
    let sv = design.singular_values();
    if sv.min() <= 1e-7 * sv.max() {
        return None;
    }
    let qr = design.qr();
    let qty = qr.q().transpose() * y;
    qr.r().solve_upper_triangular(&qty)
}

/// Unit-specific slopes from OLS of `y` on block-diagonal regressors, `N`
/// unit dummies and `T − 1` period dummies. Returns `N x K`.
pub fn lsdv_unit_slopes(p: &PanelData) -> Option<DMatrix<f64>> {
    let (n, t, k) = (p.n_units(), p.n_periods(), p.n_regressors());
    let mut design = DMatrix::zeros(n * t, n * k + n + t - 1);
    for i in 0..n {
        let xi = p.x_unit(i);
        for s in 0..t {
            for j in 0..k {
                design[(i * t + s, i * k + j)] = xi[(s, j)];
            }
        }
    }
    dummies(p, &mut design, n * k);
    let coef = lstsq(design, &stacked_y(p))?;
    Some(DMatrix::from_fn(n, k, |i, j| coef[i * k + j]))
}

pub fn lsdv_mean_group(p: &PanelData) -> Option<DVector<f64>> {
    let b = lsdv_unit_slopes(p)?;
    let n = b.nrows() as f64;
    Some(DVector::from_iterator(
        b.ncols(),
        b.column_iter().map(|c| c.sum() / n),
    ))
}

/// Single-slope OLS with unit and period dummies.
pub fn lsdv_pooled(p: &PanelData) -> Option<DVector<f64>> {
    let (n, t, k) = (p.n_units(), p.n_periods(), p.n_regressors());
    let mut design = DMatrix::zeros(n * t, k + n + t - 1);
    for i in 0..n {
        let xi = p.x_unit(i);
        for s in 0..t {
            for j in 0..k {
                design[(i * t + s, j)] = xi[(s, j)];
            }
        }
    }
    dummies(p, &mut design, k);
    Some(lstsq(design, &stacked_y(p))?.rows(0, k).into_owned())
}

/// Per-unit time-series OLS with an intercept, averaged over units.
pub fn per_unit_ols_mean(p: &PanelData) -> DVector<f64> {
    let (n, t, k) = (p.n_units(), p.n_periods(), p.n_regressors());
    let mut acc = DVector::zeros(k);
    for i in 0..n {
        let mut design = DMatrix::from_element(t, k + 1, 1.0);
        design.columns_mut(1, k).copy_from(p.x_unit(i));
        let yi = p.y().row(i).transpose();
        let coef = (design.transpose() * &design)
            .lu()
            .solve(&(design.transpose() * yi))
            .unwrap();
        acc += coef.rows(1, k);
    }
    acc / n as f64
}

/// Leave-one-out rows `(N x K)` of an estimator given as a closure.
pub fn leave_one_out(
    p: &PanelData,
    f: impl Fn(&PanelData) -> Option<DVector<f64>>,
) -> Option<DMatrix<f64>> {
    let n = p.n_units();
    let rows: Vec<DVector<f64>> = (0..n)
        .map(|i| {
            let keep: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            f(&p.select_units(&keep).unwrap())
        })
        .collect::<Option<_>>()?;
    let k = rows[0].len();
    Some(DMatrix::from_fn(n, k, |i, j| rows[i][j]))
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    (a - b).amax()
}
