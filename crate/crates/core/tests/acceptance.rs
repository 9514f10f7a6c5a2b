//! Acceptance criteria, one test each. Every test prints a single
//! `criterion N: PASS|FAIL ...` line before asserting.
//!
//! Run with
//! `cargo test --release -p evnsp-core --test acceptance -- --nocapture --include-ignored --test-threads=1`.
//! The tests also serialize themselves so the timing in criterion 1 is not
//! shared with other work.

use evnsp_core::diagnostics::UnipolarDiagnostics;
use evnsp_core::grid::{BoundarySpec, Grid};
use evnsp_core::init::{well_prepared_init, InitParams};
use evnsp_core::model_full::{BipolarModel, BipolarParams, BipolarState, FullState, PhysParams, UnipolarModel};
use evnsp_core::poisson::PoissonTolerances;
use evnsp_core::runtime;
use evnsp_core::timestep::{cfl_dt, step_ssprk3, CflParams};
use evnsp_core::verify::{self, Check, OperatorSet, Report, Suite, SuiteReport, VerifyOptions};
use std::f64::consts::TAU;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::{Duration, Instant};

fn serial() -> MutexGuard<'static, ()> {
    static LOCK: Mutex<()> = Mutex::new(());
    let guard = LOCK.lock().unwrap_or_else(|e| e.into_inner());
    runtime::init().unwrap();
    guard
}

/// The full verification run at default options, computed once.
fn full_report() -> &'static Report {
    static REPORT: OnceLock<Report> = OnceLock::new();
    REPORT.get_or_init(|| verify::run(&Suite::ALL, &VerifyOptions::default()))
}

fn suite(s: Suite) -> &'static SuiteReport {
    full_report().suites.iter().find(|r| r.suite == s).unwrap()
}

fn summary<'a>(checks: impl IntoIterator<Item = &'a Check>) -> (bool, String) {
    let checks: Vec<_> = checks.into_iter().collect();
    let ok = checks.iter().all(|c| c.passed);
    let text = checks.iter().map(|c| format!("{} {:.3e}", c.name, c.measured)).collect::<Vec<_>>().join(", ");
    (ok, text)
}

fn report(n: u32, ok: bool, detail: &str) {
    println!("criterion {n}: {} {detail}", if ok { "PASS" } else { "FAIL" });
}

fn suite_criterion(n: u32, s: Suite, filter: impl Fn(&Check) -> bool) {
    let r = suite(s);
    let (ok, text) = summary(r.checks.iter().filter(|c| filter(c)));
    let ok = ok && r.error.is_none();
    report(n, ok, &format!("[{s}] {text}{}", r.error.as_deref().map(|e| format!(" error: {e}")).unwrap_or_default()));
    assert!(ok, "{r:#?}");
}

const EQ_STEPS: usize = 1000;
const EQ_BUDGET: Duration = Duration::from_secs(30);

#[test]
fn criterion_1_equilibrium_fixed_point() {
    let _g = serial();
    let g = Grid::new(32, 32, 32, TAU, TAU, TAU).unwrap();
    let tol = PoissonTolerances::default();
    let bc = BoundarySpec::DIRICHLET;
    let p = PhysParams::default();

    let s0 = FullState::equilibrium(&g);
    let dt = cfl_dt(&s0.rho, &s0.u, &p, &g, &CflParams::default());
    let m = UnipolarModel::new(&g, p, bc, tol).unwrap();
    let t0 = Instant::now();
    let mut s = s0.clone();
    for _ in 0..EQ_STEPS {
        s = step_ssprk3(&m, &s, dt).unwrap();
    }
    let uni_time = t0.elapsed();
    let uni_dev = s.max_diff(&s0);

    let b0 = BipolarState::equilibrium(&g);
    let m = BipolarModel::new(&g, BipolarParams::default(), bc, tol).unwrap();
    let t0 = Instant::now();
    let mut b = b0.clone();
    for _ in 0..EQ_STEPS {
        b = step_ssprk3(&m, &b, dt).unwrap();
    }
    let bi_time = t0.elapsed();
    let bi_dev = b.negative.max_diff(&b0.negative).max(b.positive.max_diff(&b0.positive));

    let ok = uni_dev <= 1e-12 && bi_dev <= 1e-12 && uni_time < EQ_BUDGET && bi_time < EQ_BUDGET;
    report(
        1,
        ok,
        &format!(
            "unipolar max change {uni_dev:.1e} in {:.1} s, bipolar max change {bi_dev:.1e} in {:.1} s ({EQ_STEPS} steps, 32^3, {} threads)",
            uni_time.as_secs_f64(),
            bi_time.as_secs_f64(),
            rayon::current_num_threads()
        ),
    );
    assert!(uni_dev <= 1e-12 && bi_dev <= 1e-12);
    assert!(uni_time < EQ_BUDGET && bi_time < EQ_BUDGET, "unipolar {uni_time:?}, bipolar {bi_time:?}");
}

#[test]
fn criterion_2_poisson_manufactured_solutions() {
    let _g = serial();
    suite_criterion(2, Suite::Poisson, |_| true);
}

#[test]
fn criterion_3_constraint_residual_orders() {
    let _g = serial();
    suite_criterion(3, Suite::Constraints, |c| c.name.ends_with("order"));
}

/// The determinant residual converges at second order in `h` but its
/// magnitude at desk-scale grids is far above the absolute bound.
#[test]
#[ignore = "det(F)ρ − 1 is O(ε²h²) in the full formulation, about 1e-7 at 64 cells, above the 1e-10 bound"]
fn criterion_3_determinant_residual_bound() {
    let _g = serial();
    suite_criterion(3, Suite::Constraints, |c| c.name.starts_with("det"));
}

#[test]
fn criterion_4_energy_dissipation_defect() {
    let _g = serial();
    suite_criterion(4, Suite::Energy, |_| true);
}

#[test]
fn criterion_5_formulation_equivalence() {
    let _g = serial();
    suite_criterion(5, Suite::Equivalence, |_| true);
}

/// `sobolev_H ≤ 2 sobolev_H(0)` up to `T = 5` and `E_total` nonincreasing
/// within `1e-8` per unit time; the undamped run must complete.
#[test]
fn criterion_6_small_data_boundedness() {
    let _g = serial();
    let t_end = 5.0;
    let g = Grid::new_2d(32, 33, TAU, TAU).unwrap();
    let tol = PoissonTolerances::default();
    let bc = BoundarySpec::DIRICHLET;
    let run = |p: PhysParams, eps: f64| -> Result<(f64, f64), evnsp_core::Error> {
        let m = UnipolarModel::new(&g, p, bc, tol)?;
        let d = UnipolarDiagnostics::new(&g, p, bc, tol)?;
        let (mut s, _) = well_prepared_init(&g, &InitParams { amplitude: eps, ..Default::default() })?;
        let dt = cfl_dt(&s.rho, &s.u, &p, &g, &CflParams::default());
        let n = (t_end / dt).ceil() as usize;
        let dt = t_end / n as f64;
        let mut prev = d.record(0.0, &s, None)?;
        let h0 = prev.sobolev_h;
        let (mut h_ratio, mut rate): (f64, f64) = (1.0, f64::NEG_INFINITY);
        for i in 1..=n {
            s = step_ssprk3(&m, &s, dt)?;
            let rec = d.record(i as f64 * dt, &s, None)?;
            h_ratio = h_ratio.max(rec.sobolev_h / h0);
            rate = rate.max((rec.e_total - prev.e_total) / (rec.time - prev.time));
            prev = rec;
        }
        Ok((h_ratio, rate))
    };
    let mut ok = true;
    let mut parts = vec![];
    for eps in [1e-3, 1e-2] {
        let (h, r) = run(PhysParams::default(), eps).unwrap();
        ok &= h <= 2.0 && r <= 1e-8;
        parts.push(format!("eps {eps:e}: max H/H0 {h:.3}, max dE/dt {r:.2e}"));
    }
    let undamped = run(PhysParams { alpha: 0.0, ..Default::default() }, 1e-2);
    ok &= undamped.is_ok();
    parts.push(format!("alpha = 0 run {}", if undamped.is_ok() { "completed" } else { "failed" }));
    report(6, ok, &parts.join("; "));
    assert!(ok);
}

#[test]
fn criterion_7_steady_boltzmann_balance() {
    let _g = serial();
    suite_criterion(7, Suite::BoltzmannSteady, |_| true);
}

#[test]
fn criterion_8_time_order_and_negative_control() {
    let _g = serial();
    let time = suite(Suite::TimeOrder);
    let ops = suite(Suite::Operators);
    let broken = verify::run_suite(
        Suite::Operators,
        &VerifyOptions { operators: OperatorSet::broken_gradient(), ..Default::default() },
    );
    let slope = broken.checks.iter().find(|c| c.name == "gradient order").map(|c| c.measured).unwrap_or(f64::NAN);
    let ok = time.passed && ops.passed && !broken.passed && slope < 1.5;
    let (_, t) = summary(&time.checks);
    report(8, ok, &format!("{t}; standard operators {}; broken gradient slope {slope:.3}", if ops.passed { "pass" } else { "fail" }));
    assert!(ok);
}

#[test]
fn criterion_9_full_verification_runtime() {
    let _g = serial();
    let r = full_report();
    let ok = r.seconds < 300.0;
    let failing = r.failures();
    report(9, ok, &format!("{} suites in {:.1} s; failing checks: {}", r.suites.len(), r.seconds, if failing.is_empty() { "none".into() } else { failing.join("; ") }));
    assert!(ok);
}
