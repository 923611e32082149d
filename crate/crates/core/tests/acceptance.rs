//! Acceptance suite. Runs every criterion in order, prints one
//! `[PASS]`/`[FAIL]` line per criterion and exits non-zero if any failed.
//!
//! Run with `cargo test -p panelmg --test acceptance`; append `-- 1 7` to run
//! only the listed criteria.

mod common;

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use panelmg::simulation::{run_monte_carlo, GridCell, MonteCarloConfig, SimReport};
use panelmg::{
    estimate_standard_mg, estimate_tw_mg, estimate_tw_mg_ridge, estimate_tw_pooled, holm_adjust,
    jackknife, poolability_test, KappaPolicy, Method, PanelData,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 20240101;
const REPS: usize = 250;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn in_range(v: f64, lo: f64, hi: f64) -> bool {
    v >= lo && v <= hi
}

fn monte_carlo() -> &'static SimReport {
    static REPORT: OnceLock<SimReport> = OnceLock::new();
    REPORT.get_or_init(|| {
        let mut grid = Vec::new();
        for dgp in 1..=4 {
            grid.push(GridCell::new(dgp, 200, 10).unwrap());
            grid.push(GridCell::new(dgp, 100, 5).unwrap());
        }
        grid.push(GridCell::new(5, 200, 3).unwrap());
        let cfg = MonteCarloConfig {
            replications: REPS,
            base_seed: SEED,
            ..MonteCarloConfig::default()
        };
        let start = Instant::now();
        let report = run_monte_carlo(&grid, &cfg).unwrap();
        println!(
            "    monte carlo: {} cells x {REPS} replications in {:.1} s",
            grid.len(),
            start.elapsed().as_secs_f64()
        );
        report
    })
}

fn stat(
    report: &SimReport,
    dgp: u8,
    n: usize,
    t: usize,
    m: Method,
    coef: usize,
) -> &panelmg::simulation::SimRow {
    report
        .row(dgp, n, t, m, coef)
        .unwrap_or_else(|| panic!("missing row dgp={dgp} n={n} t={t} {m} coef={coef}"))
}

fn dense_oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst = 0.0f64;
    let mut compared = 0;
    let mut refused = 0;
    let mut problems = Vec::new();
    for case in 0..200 {
        let n = rng.gen_range(3..=12);
        let k = rng.gen_range(1..=3);
        let t = rng.gen_range(k + 2..=8);
        let p = common::random_panel(n, t, k, rng.gen());

        // unit slopes and pooled slope on the full sample
        match (common::lsdv_unit_slopes(&p), estimate_tw_mg(&p)) {
            (Some(oracle), Ok(est)) => {
                worst = worst.max(common::max_abs_diff(
                    est.unit_slopes.as_ref().unwrap(),
                    &oracle,
                ));
                compared += 1;
            }
            (None, Err(_)) => refused += 1,
            (o, e) => problems.push(format!(
                "case {case} (N={n},T={t},K={k}): oracle identified={} estimator ok={}",
                o.is_some(),
                e.is_ok()
            )),
        }
        let pooled = common::lsdv_pooled(&p).expect("pooled design has full rank");
        let est = estimate_tw_pooled(&p).map_err(|e| format!("case {case}: pooled failed: {e}"))?;
        worst = worst.max((&est.beta_hat - &pooled).amax());

        // exact leave-one-out estimates
        match (
            common::leave_one_out(&p, common::lsdv_mean_group),
            jackknife(&p, Method::TwMg, KappaPolicy::Fixed),
        ) {
            (Some(oracle), Ok(jk)) => {
                worst = worst.max(common::max_abs_diff(&jk.loo_estimates, &oracle));
            }
            (None, Err(_)) => {}
            (o, e) => problems.push(format!(
                "case {case} (N={n},T={t},K={k}): leave-one-out oracle identified={} jackknife ok={}",
                o.is_some(),
                e.is_ok()
            )),
        }
        let oracle = common::leave_one_out(&p, common::lsdv_pooled).unwrap();
        let jk = jackknife(&p, Method::TwPooled, KappaPolicy::Fixed)
            .map_err(|e| format!("case {case}: pooled jackknife failed: {e}"))?;
        worst = worst.max(common::max_abs_diff(&jk.loo_estimates, &oracle));
    }
    let elapsed = start.elapsed();
    check(
        problems.is_empty() && worst <= 1e-8 && elapsed < Duration::from_secs(30),
        format!(
            "max-abs diff {worst:.2e} over {compared} identified panels ({refused} unidentified panels refused by both), {:.1} s{}",
            elapsed.as_secs_f64(),
            if problems.is_empty() { String::new() } else { format!("; {}", problems.join("; ")) }
        ),
    )
}

fn homogeneous_design_bias_and_mse() -> Outcome {
    let r = monte_carlo();
    let mg = stat(r, 1, 200, 10, Method::TwMg, 1);
    let pooled = stat(r, 1, 200, 10, Method::TwPooled, 1);
    let smg = stat(r, 1, 200, 10, Method::StandardMg, 1);
    let (b, m) = (mg.bias_x10.unwrap(), mg.mse_x100.unwrap());
    let pm = pooled.mse_x100.unwrap();
    let sb = smg.bias_x10.unwrap();
    check(
        in_range(b, -0.15, 0.15)
            && in_range(m, 0.06, 0.18)
            && in_range(pm, 0.08, 0.25)
            && in_range(sb, 6.0, 8.5),
        format!(
            "TW-MG bias×10 {b:.3} MSE×100 {m:.3}; TW-pooled MSE×100 {pm:.3}; MG bias×10 {sb:.3}"
        ),
    )
}

fn correlated_slopes_break_pooling() -> Outcome {
    let r = monte_carlo();
    let pb = stat(r, 3, 200, 10, Method::TwPooled, 1).bias_x10.unwrap();
    let mb = stat(r, 3, 200, 10, Method::TwMg, 1).bias_x10.unwrap();
    check(
        in_range(pb, 4.2, 6.2) && mb.abs() <= 0.2,
        format!("TW-pooled bias×10 {pb:.3}; TW-MG bias×10 {mb:.3}"),
    )
}

fn jackknife_coverage() -> Outcome {
    let r = monte_carlo();
    let mut cells = Vec::new();
    let mut ok = true;
    for dgp in 1..=4u8 {
        let k = if dgp == 4 { 2 } else { 1 };
        for m in [Method::TwMg, Method::TwMgRidge] {
            for coef in 1..=k {
                let c = stat(r, dgp, 100, 5, m, coef).coverage.unwrap();
                ok &= in_range(c, 0.90, 0.99);
                cells.push(format!("d{dgp} {m} b{coef} {c:.3}"));
            }
        }
    }
    check(ok, cells.join(", "))
}

fn poolability_size_and_power() -> Outcome {
    let r = monte_carlo();
    let mut cells = Vec::new();
    let mut ok = true;
    for dgp in 1..=4u8 {
        for m in [Method::TwMg, Method::TwMgRidge] {
            let rej = stat(r, dgp, 200, 10, m, 1).rejection_rate.unwrap();
            ok &= if dgp <= 2 { rej <= 0.10 } else { rej >= 0.95 };
            cells.push(format!("d{dgp} {m} {rej:.3}"));
        }
    }
    check(ok, cells.join(", "))
}

fn short_panel_design() -> Outcome {
    let r = monte_carlo();
    let m = stat(r, 5, 200, 3, Method::TwMg, 1).mse_x100.unwrap();
    let pb = stat(r, 5, 200, 3, Method::TwPooled, 1).bias_x10.unwrap();
    check(
        in_range(m, 0.8, 2.1) && in_range(pb, 4.2, 6.4),
        format!("TW-MG MSE×100 {m:.3}; TW-pooled bias×10 {pb:.3}"),
    )
}

fn shifted(p: &PanelData, rng: &mut ChaCha8Rng) -> PanelData {
    let (n, t) = (p.n_units(), p.n_periods());
    let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-50.0..50.0)).collect();
    let b: Vec<f64> = (0..t).map(|_| rng.gen_range(-50.0..50.0)).collect();
    p.with_y(DMatrix::from_fn(n, t, |i, s| p.y()[(i, s)] + a[i] + b[s]))
        .unwrap()
}

fn scaled(p: &PanelData, col: usize, c: f64) -> PanelData {
    let x = p
        .x_blocks()
        .iter()
        .map(|xi| {
            let mut xi = xi.clone();
            xi.column_mut(col).scale_mut(c);
            xi
        })
        .collect();
    p.with_x(x).unwrap()
}

fn close(a: &DVector<f64>, b: &DVector<f64>, tol: f64) -> bool {
    (a - b).amax() <= tol * (1.0 + a.amax().max(b.amax()))
}

fn invariance_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED ^ 7);
    let mut failures: Vec<String> = Vec::new();
    let mut checks = 0;
    let mut expect = |ok: bool, what: String| {
        checks += 1;
        if !ok {
            failures.push(what);
        }
    };
    for case in 0..20 {
        let k = 1 + case % 3;
        let n = rng.gen_range(10..=30);
        let t = rng.gen_range(k + 3..=9);
        let p = common::random_panel(n, t, k, rng.gen());
        let tw = estimate_tw_mg(&p).unwrap();
        let pooled = estimate_tw_pooled(&p).unwrap();
        let smg = estimate_standard_mg(&p).unwrap();
        let ridge = estimate_tw_mg_ridge(&p, None).unwrap();
        let kappa = ridge.kappa_used;

        // fixed-effect shift
        let q = shifted(&p, &mut rng);
        expect(
            close(&estimate_tw_mg(&q).unwrap().beta_hat, &tw.beta_hat, 1e-8),
            format!("case {case}: shift TW-MG"),
        );
        expect(
            close(
                &estimate_tw_pooled(&q).unwrap().beta_hat,
                &pooled.beta_hat,
                1e-8,
            ),
            format!("case {case}: shift pooled"),
        );
        expect(
            close(
                &estimate_tw_mg_ridge(&q, kappa).unwrap().beta_hat,
                &ridge.beta_hat,
                1e-8,
            ),
            format!("case {case}: shift ridge"),
        );

        // regressor scaling
        let col = case % k;
        let c = [0.01, 3.0, -250.0][case % 3];
        let s = scaled(&p, col, c);
        for (name, before, after) in [
            ("TW-MG", &tw.beta_hat, estimate_tw_mg(&s).unwrap().beta_hat),
            (
                "pooled",
                &pooled.beta_hat,
                estimate_tw_pooled(&s).unwrap().beta_hat,
            ),
            (
                "MG",
                &smg.beta_hat,
                estimate_standard_mg(&s).unwrap().beta_hat,
            ),
        ] {
            let mut expected = before.clone();
            expected[col] /= c;
            expect(
                close(&after, &expected, 1e-8),
                format!("case {case}: scaling {name}"),
            );
        }

        // unit permutation
        let mut order: Vec<usize> = (0..n).collect();
        order.reverse();
        order.rotate_left(case % n);
        let perm = p.select_units(&order).unwrap();
        let tw_perm = estimate_tw_mg(&perm).unwrap();
        expect(
            close(&tw_perm.beta_hat, &tw.beta_hat, 1e-10),
            format!("case {case}: permutation TW-MG"),
        );
        let slopes = tw.unit_slopes.as_ref().unwrap();
        let slopes_perm = tw_perm.unit_slopes.as_ref().unwrap();
        let permuted_ok = order.iter().enumerate().all(|(r, &i)| {
            close(
                &slopes_perm.row(r).transpose(),
                &slopes.row(i).transpose(),
                1e-10,
            )
        });
        expect(permuted_ok, format!("case {case}: permutation unit slopes"));
        expect(
            close(
                &estimate_tw_pooled(&perm).unwrap().beta_hat,
                &pooled.beta_hat,
                1e-10,
            ),
            format!("case {case}: permutation pooled"),
        );

        // jackknife covariance: symmetric and PSD
        for m in [Method::TwMg, Method::TwMgRidge, Method::TwPooled] {
            let jk = jackknife(&p, m, KappaPolicy::Fixed).unwrap();
            let om = &jk.omega_hat;
            let sym = (om - om.transpose()).amax() <= 1e-12 * (1.0 + om.amax());
            let min_eig = om.clone().symmetric_eigen().eigenvalues.min();
            expect(
                sym && min_eig >= -1e-10 * om.trace(),
                format!("case {case}: {m} omega PSD"),
            );
        }
        let jk = jackknife(&p, Method::TwMg, KappaPolicy::Fixed).unwrap();
        let jk_scaled = jackknife(&s, Method::TwMg, KappaPolicy::Fixed).unwrap();
        let ratio = jk_scaled.omega_hat[(col, col)] * c * c / jk.omega_hat[(col, col)];
        expect(
            (ratio - 1.0).abs() <= 1e-6,
            format!("case {case}: omega scaling ratio {ratio}"),
        );

        // poolability statistic
        for ridge_test in [false, true] {
            let r = poolability_test(&p, ridge_test).unwrap();
            let valid = r.joint_stat >= 0.0
                && (0.0..=1.0).contains(&r.joint_pvalue)
                && r.per_coef
                    .iter()
                    .all(|c| c.holm_pvalue >= c.pvalue && c.holm_pvalue <= 1.0);
            expect(
                valid,
                format!("case {case}: poolability ranges (ridge={ridge_test})"),
            );
        }
        let j = poolability_test(&p, false).unwrap().joint_stat;
        let rel = |a: f64| (a - j).abs() <= 1e-6 * j.max(1e-12);
        expect(
            rel(poolability_test(&s, false).unwrap().joint_stat),
            format!("case {case}: J scaling"),
        );
        expect(
            rel(poolability_test(&perm, false).unwrap().joint_stat),
            format!("case {case}: J permutation"),
        );
        expect(
            rel(poolability_test(&q, false).unwrap().joint_stat),
            format!("case {case}: J shift"),
        );
    }
    check(
        failures.is_empty(),
        format!(
            "{} of {checks} checks passed{}",
            checks - failures.len(),
            if failures.is_empty() {
                String::new()
            } else {
                format!("; failed: {}", failures.join(", "))
            }
        ),
    )
}

fn holm_exactness() -> Outcome {
    let adj = holm_adjust(&[0.027, 0.019, 0.009]).map_err(|e| e.to_string())?;
    let formula = [
        (1.0f64 * 0.027).min(1.0),
        (2.0f64 * 0.019).min(1.0),
        (3.0f64 * 0.009).min(1.0),
    ];
    let bits = adj
        .iter()
        .zip(formula)
        .all(|(a, f)| a.to_bits() == f.to_bits());
    let near = adj
        .iter()
        .zip([0.027, 0.038, 0.027])
        .all(|(a, e)| (a - e).abs() < 1e-15);
    check(bits && near, format!("{adj:?}"))
}

fn min_time<T>(reps: usize, mut f: impl FnMut() -> T) -> Duration {
    (0..reps)
        .map(|_| {
            let start = Instant::now();
            std::hint::black_box(f());
            start.elapsed()
        })
        .min()
        .unwrap()
}

fn performance() -> Outcome {
    let single = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    single.install(|| {
        let big = common::random_panel(5000, 10, 2, 1);
        let est_time = min_time(3, || estimate_tw_mg(&big).unwrap());

        let half = common::random_panel(2500, 10, 2, 2);
        let half_time = min_time(3, || estimate_tw_mg(&half).unwrap());
        let ratio = est_time.as_secs_f64() / half_time.as_secs_f64();

        let p = common::random_panel(1000, 10, 2, 3);
        let start = Instant::now();
        jackknife(&p, Method::TwMg, KappaPolicy::Fixed).unwrap();
        let jk_time = start.elapsed();

        check(
            est_time < Duration::from_secs(2) && jk_time < Duration::from_secs(30) && ratio <= 3.0,
            format!(
                "estimate N=5000: {:.3} s; jackknife N=1000 single-threaded: {:.2} s; time ratio N=5000/N=2500: {ratio:.2}",
                est_time.as_secs_f64(),
                jk_time.as_secs_f64()
            ),
        )
    })
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("1 dense-oracle equivalence", dense_oracle_equivalence),
        (
            "2 homogeneous design bias and MSE",
            homogeneous_design_bias_and_mse,
        ),
        (
            "3 correlated slopes break pooling",
            correlated_slopes_break_pooling,
        ),
        ("4 jackknife interval coverage", jackknife_coverage),
        (
            "5 poolability test size and power",
            poolability_size_and_power,
        ),
        ("6 short panel design", short_panel_design),
        ("7 invariance suite", invariance_suite),
        ("8 Holm adjustment exactness", holm_exactness),
        ("9 performance contract", performance),
    ];
    // optional criterion numbers on the command line select a subset
    let only: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    let mut ran = 0;
    for (name, run) in criteria {
        if !only.is_empty()
            && !only
                .iter()
                .any(|o| name.split(' ').next() == Some(o.as_str()))
        {
            continue;
        }
        ran += 1;
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("[PASS] {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("[FAIL] {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
