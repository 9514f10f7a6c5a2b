//! Refinement harness: manufactured solutions and self-convergence studies
//! grouped into suites, each reporting measured values against fixed
//! thresholds.
//!
//! Elliptic and operator suites run on 3D grids; the dynamic suites run in
//! 2D (`ny = 1`). `levels` are the numbers of cells across the slab, so a
//! level `n` has `n + 1` nodes in `z`. The 2D grids use `2n` cells in `x`
//! over the same period: with `hx = hz` the centered truncation errors of
//! the initial modes coincide in both directions and partly cancel, which
//! flatters the measured orders.

use crate::diagnostics::{constraint_residuals, dissipation_balance, BipolarDiagnostics, UnipolarDiagnostics};
use crate::error::{Error, Result};
use crate::field::{norm_linf, ScalarField, TensorField, VectorField};
use crate::grid::{BoundarySpec, Grid, WallCondition};
use crate::init::{well_prepared_bipolar, well_prepared_init, InitParams};
use crate::model_full::{steady_positive_check, BipolarModel, BipolarParams, PhysParams, UnipolarModel};
use crate::model_reduced::{reconstruct_full, ReducedModel};
use crate::ops;
use crate::poisson::{PoissonSolver, PoissonTolerances};
use crate::timestep::{cfl_dt, cfl_dt_reduced, step_ssprk3, CflParams, CoEvolution, OdeSystem};
use serde::Serialize;
use std::f64::consts::{PI, TAU};
use std::time::Instant;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Poisson,
    Operators,
    Constraints,
    Energy,
    Equivalence,
    BoltzmannSteady,
    TimeOrder,
}

impl Suite {
    pub const ALL: [Suite; 7] = [
        Suite::Poisson,
        Suite::Operators,
        Suite::Constraints,
        Suite::Energy,
        Suite::Equivalence,
        Suite::BoltzmannSteady,
        Suite::TimeOrder,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Poisson => "poisson",
            Suite::Operators => "operators",
            Suite::Constraints => "constraints",
            Suite::Energy => "energy",
            Suite::Equivalence => "equivalence",
            Suite::BoltzmannSteady => "boltzmann_steady",
            Suite::TimeOrder => "time_order",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        Suite::ALL.into_iter().find(|x| x.name() == key).ok_or_else(|| {
            let names: Vec<_> = Suite::ALL.iter().map(|x| x.name()).collect();
            Error::Config(format!("unknown suite {s:?}; expected one of {}", names.join(", ")))
        })
    }
}

impl std::fmt::Display for Suite {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Bound {
    #[serde(rename = ">=")]
    AtLeast,
    #[serde(rename = "<=")]
    AtMost,
}

/// One measured quantity and its acceptance threshold.
#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub bound: Bound,
    pub threshold: f64,
    pub passed: bool,
    /// Per-level raw values behind `measured`, coarsest first.
    pub values: Vec<f64>,
}

impl Check {
    pub fn at_least(name: impl Into<String>, measured: f64, threshold: f64, values: Vec<f64>) -> Self {
        Check { name: name.into(), measured, bound: Bound::AtLeast, threshold, passed: measured >= threshold, values }
    }

    pub fn at_most(name: impl Into<String>, measured: f64, threshold: f64, values: Vec<f64>) -> Self {
        Check { name: name.into(), measured, bound: Bound::AtMost, threshold, passed: measured <= threshold, values }
    }
}

impl std::fmt::Display for Check {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let op = match self.bound {
            Bound::AtLeast => ">=",
            Bound::AtMost => "<=",
        };
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {:.4e} (need {op} {:e})", self.name, self.measured, self.threshold)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub passed: bool,
    pub seconds: f64,
    pub levels: Vec<usize>,
    pub checks: Vec<Check>,
    /// Set when the suite aborted before producing its checks.
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub passed: bool,
    pub seconds: f64,
    pub suites: Vec<SuiteReport>,
}

impl Report {
    pub fn failures(&self) -> Vec<String> {
        let mut out = vec![];
        for s in &self.suites {
            if let Some(e) = &s.error {
                out.push(format!("{}: {e}", s.suite));
            }
            out.extend(s.checks.iter().filter(|c| !c.passed).map(|c| format!("{}: {c}", s.suite)));
        }
        out
    }

    /// `Err(Verification)` listing the failed checks, if any.
    pub fn into_result(self) -> Result<Self> {
        if self.passed {
            Ok(self)
        } else {
            Err(Error::Verification(self.failures().join("; ")))
        }
    }
}

type Scalar = ScalarField<f64>;
type Vector = VectorField<f64>;
type Tensor = TensorField<f64>;

/// The discrete operators exercised by the operator suite. Swapping one
/// entry for a defective stencil must make the suite fail.
#[derive(Clone, Copy)]
pub struct OperatorSet {
    pub gradient: fn(&Scalar) -> Vector,
    pub divergence: fn(&Vector) -> Scalar,
    pub vector_gradient: fn(&Vector) -> Tensor,
    pub tensor_divergence: fn(&Tensor) -> Vector,
    pub laplacian: fn(&Scalar) -> Scalar,
    pub advect: fn(&Vector, &Vector) -> Vector,
}

impl std::fmt::Debug for OperatorSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("OperatorSet")
    }
}

impl OperatorSet {
    pub fn standard() -> Self {
        OperatorSet {
            gradient: ops::gradient,
            divergence: ops::divergence,
            vector_gradient: ops::vector_gradient,
            tensor_divergence: ops::tensor_divergence,
            laplacian: ops::laplacian_scalar,
            advect: |u, v| ops::advect(u, v),
        }
    }

    /// Negative control: the gradient uses a one-sided forward difference
    /// in `x`, which is only first order.
    pub fn broken_gradient() -> Self {
        OperatorSet { gradient: forward_difference_gradient, ..Self::standard() }
    }
}

impl Default for OperatorSet {
    fn default() -> Self {
        Self::standard()
    }
}

fn forward_difference_gradient(f: &Scalar) -> Vector {
    let mut g = ops::gradient(f);
    let grid = f.grid;
    for k in 0..grid.nz {
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let ip = (i + 1) % grid.nx;
                g.c[0][grid.idx(i, j, k)] = (f.at(ip, j, k) - f.at(i, j, k)) / grid.hx;
            }
        }
    }
    g
}

#[derive(Clone, Debug)]
pub struct VerifyOptions {
    /// Cell counts across the slab, coarsest first.
    pub levels: Vec<usize>,
    pub operators: OperatorSet,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions { levels: vec![16, 32, 64], operators: OperatorSet::standard() }
    }
}

/// Runs `suites` in order. A suite that errors is reported as failed; the
/// remaining suites still run.
pub fn run(suites: &[Suite], opts: &VerifyOptions) -> Report {
    let t0 = Instant::now();
    let suites: Vec<_> = suites.iter().map(|&s| run_suite(s, opts)).collect();
    Report { passed: suites.iter().all(|s| s.passed), seconds: t0.elapsed().as_secs_f64(), suites }
}

pub fn run_suite(suite: Suite, opts: &VerifyOptions) -> SuiteReport {
    let t0 = Instant::now();
    let result = if opts.levels.len() < 2 {
        Err(Error::Config("verification needs at least two refinement levels".into()))
    } else {
        let l = &opts.levels;
        match suite {
            Suite::Poisson => poisson_suite(l),
            Suite::Operators => operator_suite(l, &opts.operators),
            Suite::Constraints => constraint_suite(l),
            Suite::Energy => energy_suite(l),
            Suite::Equivalence => equivalence_suite(l),
            Suite::BoltzmannSteady => boltzmann_steady_suite(l),
            Suite::TimeOrder => time_order_suite(),
        }
    };
    let (checks, error) = match result {
        Ok(c) => (c, None),
        Err(e) => (vec![], Some(e.to_string())),
    };
    SuiteReport {
        suite,
        passed: error.is_none() && checks.iter().all(|c| c.passed),
        seconds: t0.elapsed().as_secs_f64(),
        levels: opts.levels.clone(),
        checks,
        error,
    }
}

/// Least-squares slope of `ln e` against `ln h`.
pub fn fitted_order(h: &[f64], e: &[f64]) -> f64 {
    let n = h.len() as f64;
    let (lx, ly): (Vec<f64>, Vec<f64>) = h.iter().zip(e).map(|(h, e)| (h.ln(), e.ln())).unzip();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Smallest order between consecutive levels.
pub fn worst_pairwise_order(h: &[f64], e: &[f64]) -> f64 {
    h.windows(2)
        .zip(e.windows(2))
        .map(|(h, e)| (e[0] / e[1]).ln() / (h[0] / h[1]).ln())
        .fold(f64::INFINITY, f64::min)
}

fn grid3(n: usize) -> Result<Grid<f64>> {
    Grid::new(n, n, n + 1, 1.0, 1.0, 1.0)
}

fn grid2(n: usize) -> Result<Grid<f64>> {
    Grid::new_2d(2 * n, n + 1, TAU, TAU)
}

/// `sin(2πx + a) cos(2πy + b) e^{cz}` on the unit box with its first and
/// second derivatives.
#[derive(Clone, Copy)]
struct Mode {
    a: f64,
    b: f64,
    c: f64,
}

impl Mode {
    const K: f64 = TAU;

    fn value(self, x: f64, y: f64, z: f64) -> f64 {
        (Self::K * x + self.a).sin() * (Self::K * y + self.b).cos() * (self.c * z).exp()
    }

    fn grad(self, x: f64, y: f64, z: f64) -> [f64; 3] {
        let (sx, cx) = (Self::K * x + self.a).sin_cos();
        let (sy, cy) = (Self::K * y + self.b).sin_cos();
        let ez = (self.c * z).exp();
        [Self::K * cx * cy * ez, -Self::K * sx * sy * ez, self.c * sx * cy * ez]
    }

    fn laplacian(self, x: f64, y: f64, z: f64) -> f64 {
        (self.c * self.c - 2.0 * Self::K * Self::K) * self.value(x, y, z)
    }
}

fn mode(m: usize) -> Mode {
    let t = m as f64;
    Mode { a: 0.3 + 0.7 * t, b: -0.2 + 0.45 * t, c: 0.5 - 0.15 * t }
}

fn operator_suite(levels: &[usize], set: &OperatorSet) -> Result<Vec<Check>> {
    let names = ["gradient", "divergence", "vector_gradient", "tensor_divergence", "laplacian", "advection"];
    let mut errs = vec![vec![]; names.len()];
    let mut hs = vec![];
    for &n in levels {
        let g = grid3(n)?;
        let f = ScalarField::from_fn(&g, |x, y, z| mode(0).value(x, y, z));
        let v = VectorField::from_fn(&g, |x, y, z| std::array::from_fn(|i| mode(i + 1).value(x, y, z)));
        let t = TensorField::from_fn(&g, |x, y, z| std::array::from_fn(|i| std::array::from_fn(|j| mode(3 * i + j + 4).value(x, y, z))));

        let grad = VectorField::from_fn(&g, |x, y, z| mode(0).grad(x, y, z));
        let div = ScalarField::from_fn(&g, |x, y, z| (0..3).map(|i| mode(i + 1).grad(x, y, z)[i]).sum());
        let vgrad = TensorField::from_fn(&g, |x, y, z| std::array::from_fn(|i| mode(i + 1).grad(x, y, z)));
        let tdiv = VectorField::from_fn(&g, |x, y, z| {
            std::array::from_fn(|i| (0..3).map(|j| mode(3 * i + j + 4).grad(x, y, z)[j]).sum())
        });
        let lap = ScalarField::from_fn(&g, |x, y, z| mode(0).laplacian(x, y, z));
        // (v·∇)v
        let adv = VectorField::from_fn(&g, |x, y, z| {
            let vv: [f64; 3] = std::array::from_fn(|i| mode(i + 1).value(x, y, z));
            std::array::from_fn(|i| {
                let d = mode(i + 1).grad(x, y, z);
                vv[0] * d[0] + vv[1] * d[1] + vv[2] * d[2]
            })
        });

        errs[0].push(norm_linf(&(&(set.gradient)(&f) - &grad)));
        errs[1].push((&(set.divergence)(&v) - &div).max_abs());
        errs[2].push(norm_linf(&(&(set.vector_gradient)(&v) - &vgrad)));
        errs[3].push(norm_linf(&(&(set.tensor_divergence)(&t) - &tdiv)));
        errs[4].push((&(set.laplacian)(&f) - &lap).max_abs());
        errs[5].push(norm_linf(&(&(set.advect)(&v, &v) - &adv)));
        hs.push(g.hz);
    }
    Ok(names
        .iter()
        .zip(errs)
        .map(|(name, e)| Check::at_least(format!("{name} order"), fitted_order(&hs, &e), 1.9, e))
        .collect())
}

/// Newton residuals below this are round-off, not convergence behaviour.
const NEWTON_FLOOR: f64 = 1e-10;

/// Smallest observed local convergence order of a residual history,
/// `ln(r₊/r) / ln(r/r₋)`, over triples whose newest entry is above the
/// floor. Histories too short to estimate report 2 when they reach the
/// floor in at most two steps from a residual below one.
pub fn newton_local_order(r: &[f64]) -> f64 {
    let above: Vec<f64> = r.iter().copied().take_while(|&v| v > NEWTON_FLOOR).collect();
    let mut p = f64::INFINITY;
    for w in above.windows(3) {
        p = p.min((w[2] / w[1]).ln() / (w[1] / w[0]).ln());
    }
    if p.is_finite() {
        p
    } else if above.len() < r.len() && above.len() <= 2 {
        2.0
    } else {
        f64::NAN
    }
}

fn poisson_suite(levels: &[usize]) -> Result<Vec<Check>> {
    type Profile = fn(f64) -> (f64, f64);
    let cases: [(&str, BoundarySpec, Profile); 3] = [
        ("dirichlet", BoundarySpec::DIRICHLET, |z| {
            let s = (PI * z).sin();
            (s, -PI * PI * s)
        }),
        ("neumann", BoundarySpec::NEUMANN, |z| {
            let c = (PI * z).cos();
            (c, -PI * PI * c)
        }),
        ("mixed", BoundarySpec::new(WallCondition::Dirichlet, WallCondition::Neumann), |z| {
            let s = (0.5 * PI * z).sin();
            (s, -0.25 * PI * PI * s)
        }),
    ];
    let tol = PoissonTolerances::default();
    let mut checks = vec![];
    let mut hs = vec![];
    let mut errs = vec![vec![]; cases.len()];
    let mut res = vec![vec![]; cases.len()];
    for &n in levels {
        let g = grid3(n)?;
        hs.push(g.hz);
        let tang = |x: f64, y: f64| (TAU * x).sin() * (TAU * y).cos();
        for (c, (_, bc, profile)) in cases.iter().enumerate() {
            let exact = ScalarField::from_fn(&g, |x, y, z| tang(x, y) * profile(z).0);
            let f = ScalarField::from_fn(&g, |x, y, z| {
                let (p, p2) = profile(z);
                tang(x, y) * (p2 - 2.0 * TAU * TAU * p)
            });
            let s = PoissonSolver::new(&g, *bc, tol);
            let psi = s.solve_linear(&f)?;
            errs[c].push((&psi - &exact).max_abs());
            res[c].push(s.residual_inf(&psi, &f, 0.0) / (1.0 + f.max_abs()));
        }
    }
    for (c, (name, _, _)) in cases.iter().enumerate() {
        checks.push(Check::at_least(format!("{name} order"), fitted_order(&hs, &errs[c]), 1.9, errs[c].clone()));
        let worst = res[c].iter().copied().fold(0.0, f64::max);
        checks.push(Check::at_most(format!("{name} relative residual"), worst, 1e-11, res[c].clone()));
    }

    // nonlinear: Δψ = ρ − e^{−ψ} with ρ built from ψ* = A sin x cos y sin z
    let amp = 0.2;
    let exact_fn = |x: f64, y: f64, z: f64| amp * x.sin() * y.cos() * z.sin();
    let (mut errs, mut iters, mut orders, mut hs) = (vec![], vec![], vec![], vec![]);
    for &n in levels {
        let g = Grid::new(n, n, n + 1, TAU, TAU, PI)?;
        let exact = ScalarField::from_fn(&g, exact_fn);
        let rho = ScalarField::from_fn(&g, |x, y, z| {
            let p = exact_fn(x, y, z);
            -3.0 * p + (-p).exp()
        });
        let sol = PoissonSolver::new(&g, BoundarySpec::DIRICHLET, tol).solve_boltzmann(&rho)?;
        errs.push((&sol.psi - &exact).max_abs());
        iters.push(sol.iterations as f64);
        orders.push(newton_local_order(&sol.residuals));
        hs.push(g.hz);
    }
    let worst_iters = iters.iter().copied().fold(0.0, f64::max);
    checks.push(Check::at_most("boltzmann newton iterations", worst_iters, 6.0, iters));
    let worst_local = orders.iter().copied().fold(f64::INFINITY, f64::min);
    checks.push(Check::at_least("boltzmann newton local order", worst_local, 1.8, orders));
    checks.push(Check::at_least("boltzmann order", fitted_order(&hs, &errs), 1.9, errs));
    Ok(checks)
}

/// Runs `sys` from `y` to `t_end` in equal steps no longer than `dt_max`.
fn integrate<S: OdeSystem<f64>>(sys: &S, mut y: S::State, t_end: f64, dt_max: f64, mut each: impl FnMut(&S::State) -> Result<()>) -> Result<S::State> {
    let n = (t_end / dt_max).ceil().max(1.0) as usize;
    let dt = t_end / n as f64;
    for _ in 0..n {
        y = step_ssprk3(sys, &y, dt)?;
        each(&y)?;
    }
    Ok(y)
}

fn small_data() -> InitParams {
    InitParams { amplitude: 1e-2, ..InitParams::default() }
}

fn constraint_suite(levels: &[usize]) -> Result<Vec<Check>> {
    let t_end = 5.0;
    let p = PhysParams::default();
    let tol = PoissonTolerances::default();
    let (mut det, mut piola, mut compat, mut curl, mut hs) = (vec![], vec![], vec![], vec![], vec![]);
    for &n in levels {
        let g = grid2(n)?;
        let m = UnipolarModel::new(&g, p, BoundarySpec::DIRICHLET, tol)?;
        let (s0, _) = well_prepared_init(&g, &small_data())?;
        let dt = cfl_dt(&s0.rho, &s0.u, &p, &g, &CflParams::default());
        let mut worst_det: f64 = constraint_residuals(&s0)?.det;
        let s = integrate(&m, s0, t_end, dt, |s| {
            let d = (&s.rho * &s.f.det3()).map(|v| v - 1.0).max_abs();
            worst_det = worst_det.max(d);
            Ok(())
        })?;
        let r = constraint_residuals(&s)?;
        det.push(worst_det);
        piola.push(r.piola);
        compat.push(r.compat);
        curl.push(r.curl_k);
        hs.push(g.hz);
    }
    let worst_det = det.iter().copied().fold(0.0, f64::max);
    Ok(vec![
        Check::at_most("det residual max over run", worst_det, 1e-10, det),
        Check::at_least("piola order", worst_pairwise_order(&hs, &piola), 1.7, piola),
        Check::at_least("compat order", worst_pairwise_order(&hs, &compat), 1.7, compat),
        Check::at_least("curl_k order", worst_pairwise_order(&hs, &curl), 1.7, curl),
    ])
}

/// Step size of the coarsest energy level; halved with each refinement.
const ENERGY_DT_COARSE: f64 = 5.6e-3;
const ENERGY_T: f64 = 0.5;

fn worst_ratio(v: &[f64]) -> f64 {
    v.windows(2).map(|w| w[0] / w[1]).fold(f64::INFINITY, f64::min)
}

fn energy_suite(levels: &[usize]) -> Result<Vec<Check>> {
    let tol = PoissonTolerances::default();
    let bc = BoundarySpec::DIRICHLET;
    let (mut bip, mut uni) = (vec![], vec![]);
    for &n in levels {
        let g = grid2(n)?;
        let dt = ENERGY_DT_COARSE * levels[0] as f64 / n as f64;
        let steps = (ENERGY_T / dt).round() as usize;
        let (t1, t2) = (steps as f64 * dt, (steps + 1) as f64 * dt);

        let bp = BipolarParams::default();
        let m = BipolarModel::new(&g, bp, bc, tol)?;
        let d = BipolarDiagnostics::new(&g, bp, bc, tol)?;
        let s = integrate(&m, well_prepared_bipolar(&g, &small_data())?, t1, dt, |_| Ok(()))?;
        let s2 = step_ssprk3(&m, &s, dt)?;
        let (a, b) = (d.record(t1, &s)?, d.record(t2, &s2)?);
        bip.push(dissipation_balance(&a, &b, 0.5 * (a.d_total() + b.d_total())));

        let p = PhysParams::default();
        let m = UnipolarModel::new(&g, p, bc, tol)?;
        let d = UnipolarDiagnostics::new(&g, p, bc, tol)?;
        let s = integrate(&m, well_prepared_init(&g, &small_data())?.0, t1, dt, |_| Ok(()))?;
        let s2 = step_ssprk3(&m, &s, dt)?;
        let (a, b) = (d.record(t1, &s, None)?, d.record(t2, &s2, None)?);
        uni.push(dissipation_balance(&a, &b, 0.5 * (a.d_total() + b.d_total())));
    }
    Ok(vec![
        Check::at_least("bipolar defect reduction", worst_ratio(&bip), 3.0, bip),
        Check::at_least("unipolar defect reduction", worst_ratio(&uni), 3.0, uni),
    ])
}

fn equivalence_suite(levels: &[usize]) -> Result<Vec<Check>> {
    let t_end = 1.0;
    let p = PhysParams::default();
    let tol = PoissonTolerances::default();
    let bc = BoundarySpec::DIRICHLET;
    let (mut drho, mut du, mut trip, mut hs) = (vec![], vec![], vec![], vec![]);
    for &n in levels {
        let g = grid2(n)?;
        let full = UnipolarModel::new(&g, p, bc, tol)?;
        let reduced = ReducedModel::new(&g, p, bc, tol)?;
        let y0 = well_prepared_init(&g, &small_data())?;

        let back = reduced.project(&reconstruct_full(&y0.1)?)?;
        trip.push(norm_linf(&(&back.phi - &y0.1.phi)));

        let cfl = CflParams::default();
        let dt = cfl_dt(&y0.0.rho, &y0.0.u, &p, &g, &cfl).min(cfl_dt_reduced(&y0.1, &p, &cfl)?);
        let y = integrate(&CoEvolution { full: &full, reduced: &reduced }, y0, t_end, dt, |_| Ok(()))?;
        let rec = reconstruct_full(&y.1)?;
        drho.push((&y.0.rho - &rec.rho).max_abs());
        du.push(norm_linf(&(&y.0.u - &y.1.u)));
        hs.push(g.hz);
    }
    Ok(vec![
        Check::at_least("density gap order", worst_pairwise_order(&hs, &drho), 1.7, drho),
        Check::at_least("velocity gap order", worst_pairwise_order(&hs, &du), 1.7, du),
        Check::at_least("round trip order", worst_pairwise_order(&hs, &trip), 1.9, trip),
    ])
}

fn boltzmann_steady_suite(levels: &[usize]) -> Result<Vec<Check>> {
    let (mut e, mut hs) = (vec![], vec![]);
    for &n in levels {
        let g = grid2(n)?;
        let rho = ScalarField::from_fn(&g, |x, _, z| 1.0 + 0.3 * x.cos() * (0.5 * z).sin());
        let s = PoissonSolver::new(&g, BoundarySpec::DIRICHLET, PoissonTolerances::default());
        let psi = s.solve_boltzmann(&rho)?.psi;
        e.push(steady_positive_check(&psi.map(|v| (-v).exp()), &psi));
        hs.push(g.hz);
    }
    let c = e.iter().zip(&hs).map(|(e, h)| e / (h * h)).fold(0.0, f64::max);
    Ok(vec![
        Check::at_least("balance order", fitted_order(&hs, &e), 1.9, e.clone()),
        Check::at_most("balance / h^2", c, 1.0, e),
    ])
}

fn time_order_suite() -> Result<Vec<Check>> {
    let g = grid2(16)?;
    let p = PhysParams::default();
    let m = UnipolarModel::new(&g, p, BoundarySpec::DIRICHLET, PoissonTolerances::default())?;
    let (s0, _) = well_prepared_init(&g, &small_data())?;
    let t_end = 0.2;
    let run = |n: usize| integrate(&m, s0.clone(), t_end, t_end / n as f64, |_| Ok(()));
    let reference = run(160)?;
    let counts = [10usize, 20, 40];
    let mut e = vec![];
    for n in counts {
        e.push(run(n)?.max_diff_evolved(&reference));
    }
    let dts: Vec<f64> = counts.iter().map(|&n| t_end / n as f64).collect();
    Ok(vec![Check::at_least("ssprk3 order", worst_pairwise_order(&dts, &e), 2.7, e)])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names_round_trip() {
        for s in Suite::ALL {
            assert_eq!(Suite::parse(s.name()).unwrap(), s);
        }
        assert_eq!(Suite::parse("time-order").unwrap(), Suite::TimeOrder);
        assert_eq!(Suite::parse("nope").unwrap_err().exit_code(), 2);
    }

    #[test]
    fn order_estimates() {
        let h = [0.4, 0.2, 0.1];
        let e: Vec<f64> = h.iter().map(|h| 3.0 * h * h).collect();
        assert!((fitted_order(&h, &e) - 2.0).abs() < 1e-12);
        assert!((worst_pairwise_order(&h, &e) - 2.0).abs() < 1e-12);
        let e = [1.0, 0.25, 0.125];
        assert!((worst_pairwise_order(&h, &e) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn newton_order_estimate() {
        assert!((newton_local_order(&[1e-1, 1e-2, 1e-4, 1e-8, 1e-15]) - 2.0).abs() < 1e-12);
        assert!(newton_local_order(&[1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-15]) < 1.1);
        assert_eq!(newton_local_order(&[1e-3, 1e-12]), 2.0);
    }

    #[test]
    fn operator_suite_passes_and_detects_broken_stencil() {
        let levels = [8, 16, 32];
        let good = operator_suite(&levels, &OperatorSet::standard()).unwrap();
        assert!(good.iter().all(|c| c.passed), "{good:#?}");
        let bad = operator_suite(&levels, &OperatorSet::broken_gradient()).unwrap();
        let grad = bad.iter().find(|c| c.name == "gradient order").unwrap();
        assert!(!grad.passed && grad.measured < 1.5, "{grad}");
        assert!(bad.iter().filter(|c| c.name != "gradient order").all(|c| c.passed));
    }

    #[test]
    fn failed_report_maps_to_verification_error() {
        let opts = VerifyOptions { levels: vec![8, 16], operators: OperatorSet::broken_gradient() };
        let r = run(&[Suite::Operators], &opts);
        assert!(!r.passed);
        assert_eq!(r.into_result().unwrap_err().exit_code(), 4);
    }

    #[test]
    fn single_level_is_rejected() {
        let r = run_suite(Suite::Poisson, &VerifyOptions { levels: vec![16], ..Default::default() });
        assert!(!r.passed && r.error.is_some());
    }
}
