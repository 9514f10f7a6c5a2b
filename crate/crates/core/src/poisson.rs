//! Electrostatic subproblem on the slab.
//!
//! The discrete operator is the compact second difference in every
//! direction. Wall rows depend on the condition: Dirichlet rows pin
//! `ψ = 0`; Neumann rows impose the equation with a mirrored ghost node,
//! which is the centered discrete form of `∂zψ = 0`. With trapezoidal
//! weights in z this operator is self-adjoint, so the direct transform
//! solver and the conjugate-gradient fallback solve the same system.

use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::grid::{BoundarySpec, Grid, WallCondition};
use crate::real::Real;

const PAR_THRESHOLD: usize = 1 << 15;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoissonTolerances {
    /// Relative residual target of the iterative solvers.
    pub solver_tol: f64,
    /// Largest admissible source mean for the pure-Neumann problem.
    pub mean_tol: f64,
    /// Newton stops once `‖G(ψ)‖∞` falls below this.
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub cg_max_iter: usize,
}

impl Default for PoissonTolerances {
    fn default() -> Self {
        PoissonTolerances {
            solver_tol: 1e-12,
            mean_tol: 1e-8,
            newton_tol: 1e-11,
            newton_max_iter: 20,
            cg_max_iter: 1000,
        }
    }
}

/// Right-hand side of the electrostatic equation.
#[derive(Clone, Debug)]
pub enum PoissonMode<T> {
    /// `Δψ = f`
    Linear(ScalarField<T>),
    /// `Δψ = ρ − e^{−ψ}`
    Boltzmann(ScalarField<T>),
}

#[derive(Clone, Debug)]
pub struct PoissonProblem<T> {
    pub grid: Grid<T>,
    pub bc: BoundarySpec,
    pub mode: PoissonMode<T>,
    pub tol: PoissonTolerances,
}

/// Result of a Newton solve, with the residual after each iterate.
#[derive(Clone, Debug)]
pub struct BoltzmannSolution<T> {
    pub psi: ScalarField<T>,
    pub iterations: usize,
    pub residuals: Vec<f64>,
}

/// Cached transforms and wall data for one grid and boundary spec.
#[derive(Clone)]
pub struct PoissonSolver<T: Real> {
    grid: Grid<T>,
    bc: BoundarySpec,
    tol: PoissonTolerances,
    fft_x: Arc<dyn Fft<T>>,
    ifft_x: Arc<dyn Fft<T>>,
    fft_y: Arc<dyn Fft<T>>,
    ifft_y: Arc<dyn Fft<T>>,
    /// Tangential eigenvalues of the periodic second difference, per plane mode.
    lambda: Vec<T>,
}

impl<T: Real> std::fmt::Debug for PoissonSolver<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PoissonSolver").field("grid", &self.grid).field("bc", &self.bc).finish()
    }
}

impl<T: Real> PoissonSolver<T> {
    pub fn new(grid: &Grid<T>, bc: BoundarySpec, tol: PoissonTolerances) -> Self {
        let mut planner = FftPlanner::<T>::new();
        let fft_x = planner.plan_fft_forward(grid.nx);
        let ifft_x = planner.plan_fft_inverse(grid.nx);
        let fft_y = planner.plan_fft_forward(grid.ny);
        let ifft_y = planner.plan_fft_inverse(grid.ny);
        let pi = T::PI();
        let four = T::c(4.0);
        let eig = |m: usize, n: usize, h: T| -> T {
            if n == 1 {
                return T::zero();
            }
            let s = (pi * T::from_usize_lossy(m) / T::from_usize_lossy(n)).sin();
            -four * s * s / (h * h)
        };
        let mut lambda = Vec::with_capacity(grid.plane_len());
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                lambda.push(eig(i, grid.nx, grid.hx) + eig(j, grid.ny, grid.hy));
            }
        }
        PoissonSolver { grid: *grid, bc, tol, fft_x, ifft_x, fft_y, ifft_y, lambda }
    }

    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    pub fn bc(&self) -> BoundarySpec {
        self.bc
    }

    pub fn tolerances(&self) -> &PoissonTolerances {
        &self.tol
    }

    fn wall(&self, k: usize) -> Option<WallCondition> {
        if k == 0 {
            Some(self.bc.bottom)
        } else if k + 1 == self.grid.nz {
            Some(self.bc.top)
        } else {
            None
        }
    }

    /// Whether node layer `k` carries the differential equation (as
    /// opposed to a Dirichlet pin).
    fn equation_row(&self, k: usize) -> bool {
        self.wall(k) != Some(WallCondition::Dirichlet)
    }

    /// Applies `Δh − σ` on equation rows. Dirichlet rows return `ψ`
    /// itself, so `apply(ψ) = f` with `f = 0` there reproduces the pin.
    pub fn apply(&self, psi: &ScalarField<T>, sigma: T) -> ScalarField<T> {
        let g = self.grid;
        let (nx, ny, nz) = (g.nx, g.ny, g.nz);
        let p = g.plane_len();
        let two = T::c(2.0);
        let (rx, ry, rz) = (
            if nx > 1 { T::one() / (g.hx * g.hx) } else { T::zero() },
            if ny > 1 { T::one() / (g.hy * g.hy) } else { T::zero() },
            T::one() / (g.hz * g.hz),
        );
        let src = &psi.data;
        let mut out = ScalarField::zeros(&g);
        for k in 0..nz {
            let wall = self.wall(k);
            for j in 0..ny {
                let jp = if j + 1 == ny { 0 } else { j + 1 };
                let jm = if j == 0 { ny - 1 } else { j - 1 };
                for i in 0..nx {
                    let n = g.idx(i, j, k);
                    let c = src[n];
                    if wall == Some(WallCondition::Dirichlet) {
                        out.data[n] = c;
                        continue;
                    }
                    let ip = if i + 1 == nx { 0 } else { i + 1 };
                    let im = if i == 0 { nx - 1 } else { i - 1 };
                    let mut v = rx * (src[g.idx(ip, j, k)] - two * c + src[g.idx(im, j, k)])
                        + ry * (src[g.idx(i, jp, k)] - two * c + src[g.idx(i, jm, k)]);
                    v += match wall {
                        None => rz * (src[n + p] - two * c + src[n - p]),
                        Some(_) if k == 0 => two * rz * (src[n + p] - c),
                        Some(_) => two * rz * (src[n - p] - c),
                    };
                    out.data[n] = v - sigma * c;
                }
            }
        }
        out
    }

    /// `‖(Δh − σ)ψ − f‖∞` over equation rows, together with `|ψ|` on
    /// Dirichlet walls.
    pub fn residual_inf(&self, psi: &ScalarField<T>, f: &ScalarField<T>, sigma: T) -> T {
        let a = self.apply(psi, sigma);
        let p = self.grid.plane_len();
        let mut r = T::zero();
        for n in 0..self.grid.len() {
            let k = n / p;
            let e = if self.equation_row(k) { a[n] - f[n] } else { psi[n] };
            r = r.max(e.abs());
        }
        r
    }

    fn check_source(&self, f: &ScalarField<T>) -> Result<()> {
        if !self.grid.same_shape(&f.grid) {
            return Err(Error::ShapeMismatch("Poisson source does not match solver grid".into()));
        }
        if !f.is_finite() {
            return Err(Error::NonFinite("Poisson source".into()));
        }
        Ok(())
    }

    /// Copies `f`, zeroing Dirichlet rows and removing the mean in the
    /// pure-Neumann unscreened case (after checking compatibility).
    fn prepare_source(&self, f: &ScalarField<T>, sigma: T) -> Result<ScalarField<T>> {
        self.check_source(f)?;
        let mut rhs = f.clone();
        let p = self.grid.plane_len();
        let n = rhs.data.len();
        if self.bc.bottom == WallCondition::Dirichlet {
            rhs.data[..p].iter_mut().for_each(|v| *v = T::zero());
        }
        if self.bc.top == WallCondition::Dirichlet {
            rhs.data[n - p..].iter_mut().for_each(|v| *v = T::zero());
        }
        if self.bc.is_pure_neumann() && sigma == T::zero() {
            let mean = rhs.mean();
            if mean.abs().to_f64_lossy() > self.tol.mean_tol {
                return Err(Error::NeumannIncompatible { mean: mean.to_f64_lossy() });
            }
            rhs.data.iter_mut().for_each(|v| *v -= mean);
        }
        Ok(rhs)
    }

    /// Direct solve of `Δh ψ = f`.
    pub fn solve_linear(&self, f: &ScalarField<T>) -> Result<ScalarField<T>> {
        self.solve_screened(f, T::zero())
    }

    /// Direct solve of `(Δh − σ) ψ = f` for a constant `σ ≥ 0`: tangential
    /// Fourier transform, then one tridiagonal solve in z per mode.
    pub fn solve_screened(&self, f: &ScalarField<T>, sigma: T) -> Result<ScalarField<T>> {
        if sigma < T::zero() {
            return Err(Error::InvalidParams(format!("screening {sigma} < 0")));
        }
        let rhs = self.prepare_source(f, sigma)?;
        let psi = self.transform_solve(&rhs, sigma);
        if !psi.is_finite() {
            return Err(Error::NonFinite("Poisson solution".into()));
        }
        Ok(psi)
    }

    fn transform_solve(&self, rhs: &ScalarField<T>, sigma: T) -> ScalarField<T> {
        let g = self.grid;
        let (nx, ny, nz) = (g.nx, g.ny, g.nz);
        let p = g.plane_len();
        let par = g.len() >= PAR_THRESHOLD && rayon::current_num_threads() > 1;
        let mut buf: Vec<Complex<T>> = rhs.data.iter().map(|&v| Complex::new(v, T::zero())).collect();

        self.tangential_fft(&mut buf, true, par);

        // z-lines, one per tangential mode
        let pure_neumann = self.bc.is_pure_neumann();
        let solve_line = |c: &mut Vec<T>, (m, line): (usize, &mut [Complex<T>])| {
            let lam = self.lambda[m] - sigma;
            let pin_mean = pure_neumann && m == 0 && sigma == T::zero();
            self.tridiagonal_z(lam, line, pin_mean, c);
        };
        let mut lines: Vec<Complex<T>> = vec![Complex::new(T::zero(), T::zero()); g.len()];
        // gather to mode-major so each z-line is contiguous
        for k in 0..nz {
            for m in 0..p {
                lines[m * nz + k] = buf[k * p + m];
            }
        }
        if par {
            lines.par_chunks_mut(nz).enumerate().for_each_init(|| vec![T::zero(); nz], solve_line);
        } else {
            let mut c = vec![T::zero(); nz];
            lines.chunks_mut(nz).enumerate().for_each(|ml| solve_line(&mut c, ml));
        }
        for k in 0..nz {
            for m in 0..p {
                buf[k * p + m] = lines[m * nz + k];
            }
        }

        self.tangential_fft(&mut buf, false, par);
        let scale = T::one() / T::from_usize_lossy(nx * ny);
        let mut psi = ScalarField::from_vec(&g, buf.iter().map(|c| c.re * scale).collect()).expect("shape");
        if pure_neumann && sigma == T::zero() {
            let mean = psi.mean();
            psi.data.iter_mut().for_each(|v| *v -= mean);
        }
        psi
    }

    fn tangential_fft(&self, buf: &mut [Complex<T>], forward: bool, par: bool) {
        let g = self.grid;
        let (nx, ny) = (g.nx, g.ny);
        let p = g.plane_len();
        let (fx, fy) = if forward { (&self.fft_x, &self.fft_y) } else { (&self.ifft_x, &self.ifft_y) };
        let zero = Complex::new(T::zero(), T::zero());
        let scratch_len = fx.get_inplace_scratch_len().max(fy.get_inplace_scratch_len());
        // per-thread scratch plus a transposed plane for the y-transforms
        let init = || (vec![zero; scratch_len], vec![zero; p]);
        let plane_op = |(scratch, cols): &mut (Vec<Complex<T>>, Vec<Complex<T>>), plane: &mut [Complex<T>]| {
            if nx > 1 {
                fx.process_with_scratch(plane, scratch);
            }
            if ny > 1 {
                for j in 0..ny {
                    for i in 0..nx {
                        cols[i * ny + j] = plane[j * nx + i];
                    }
                }
                fy.process_with_scratch(cols, scratch);
                for j in 0..ny {
                    for i in 0..nx {
                        plane[j * nx + i] = cols[i * ny + j];
                    }
                }
            }
        };
        if par {
            buf.par_chunks_mut(p).for_each_init(init, plane_op);
        } else {
            let mut st = init();
            buf.chunks_mut(p).for_each(|plane| plane_op(&mut st, plane));
        }
    }

    /// Thomas algorithm for one z-line with tangential eigenvalue folded
    /// into the diagonal. `pin_mean` replaces the bottom row by `ψ0 = 0`
    /// to remove the constant null mode.
    fn tridiagonal_z(&self, lam: T, line: &mut [Complex<T>], pin_mean: bool, c: &mut [T]) {
        let nz = line.len();
        let r = T::one() / (self.grid.hz * self.grid.hz);
        let two = T::c(2.0);
        let coef = |k: usize| -> (T, T, T) {
            if pin_mean && k == 0 {
                return (T::zero(), T::one(), T::zero());
            }
            match self.wall(k) {
                Some(WallCondition::Dirichlet) => (T::zero(), T::one(), T::zero()),
                Some(WallCondition::Neumann) if k == 0 => (T::zero(), -two * r + lam, two * r),
                Some(WallCondition::Neumann) => (two * r, -two * r + lam, T::zero()),
                None => (r, -two * r + lam, r),
            }
        };
        if pin_mean {
            line[0] = Complex::new(T::zero(), T::zero());
        }
        // forward sweep, reusing `line` for the modified right-hand side
        let (_, d0, u0) = coef(0);
        c[0] = u0 / d0;
        line[0] /= d0;
        for k in 1..nz {
            let (lo, di, up) = coef(k);
            let m = di - lo * c[k - 1];
            c[k] = up / m;
            line[k] = (line[k] - line[k - 1] * lo) / m;
        }
        for k in (0..nz - 1).rev() {
            line[k] -= line[k + 1] * c[k];
        }
    }

    fn weighted_dot(&self, a: &ScalarField<T>, b: &ScalarField<T>) -> T {
        let g = self.grid;
        let p = g.plane_len();
        let mut total = T::zero();
        for k in 0..g.nz {
            if !self.equation_row(k) {
                continue;
            }
            let s: T = a.data[k * p..(k + 1) * p].iter().zip(&b.data[k * p..(k + 1) * p]).map(|(&x, &y)| x * y).sum();
            total += g.trapezoid_weight_z(k) * s;
        }
        total
    }

    /// Preconditioned conjugate gradients for `−(Δh − diag(s)) ψ = −f`
    /// in the trapezoid-weighted inner product. The preconditioner is the
    /// direct solver screened by the mean of `s`.
    fn pcg(
        &self,
        f: &ScalarField<T>,
        screening: &ScalarField<T>,
        precondition: bool,
    ) -> Result<(ScalarField<T>, usize)> {
        let g = self.grid;
        let mean_s = screening.mean().max(T::zero());
        let singular = self.bc.is_pure_neumann() && screening.max_abs() == T::zero();
        let apply = |x: &ScalarField<T>| -> ScalarField<T> {
            // −(Δh − s) x on equation rows, identity on pins
            let mut a = self.apply(x, T::zero());
            let p = g.plane_len();
            for n in 0..g.len() {
                if self.equation_row(n / p) {
                    a.data[n] = screening.data[n] * x.data[n] - a.data[n];
                }
            }
            a
        };
        let project = |x: &mut ScalarField<T>| {
            if singular {
                let m = x.mean();
                x.data.iter_mut().for_each(|v| *v -= m);
            }
        };
        let precond = |r: &ScalarField<T>| -> ScalarField<T> {
            if !precondition {
                return r.clone();
            }
            // M ≈ −(Δh − s̄): z = −solve_screened(r)
            let mut z = self.transform_solve(r, mean_s);
            z.scale(-T::one());
            z
        };
        let mut rhs = f.scaled(-T::one());
        let p = g.plane_len();
        for n in 0..g.len() {
            if !self.equation_row(n / p) {
                rhs.data[n] = T::zero();
            }
        }
        project(&mut rhs);
        let bnorm = rhs.max_abs();
        let target = T::c(self.tol.solver_tol) * (T::one() + f.max_abs());
        let mut x = ScalarField::zeros(&g);
        let mut r = rhs.clone();
        if bnorm <= target {
            return Ok((x, 0));
        }
        let mut z = precond(&r);
        project(&mut z);
        let mut d = z.clone();
        let mut rz = self.weighted_dot(&r, &z);
        for it in 1..=self.tol.cg_max_iter {
            let ad = apply(&d);
            let dad = self.weighted_dot(&d, &ad);
            if !(dad > T::zero()) {
                return Err(Error::NonConvergence { iterations: it, residual: r.max_abs().to_f64_lossy() });
            }
            let alpha = rz / dad;
            x.axpy(alpha, &d);
            r.axpy(-alpha, &ad);
            project(&mut r);
            if r.max_abs() <= target {
                project(&mut x);
                return Ok((x, it));
            }
            z = precond(&r);
            project(&mut z);
            let rz_new = self.weighted_dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for (dv, &zv) in d.data.iter_mut().zip(&z.data) {
                *dv = zv + beta * *dv;
            }
        }
        Err(Error::NonConvergence { iterations: self.tol.cg_max_iter, residual: r.max_abs().to_f64_lossy() })
    }

    /// Unpreconditioned conjugate-gradient solve of `Δh ψ = f`; the
    /// independent cross-check of [`PoissonSolver::solve_linear`].
    pub fn solve_linear_iterative(&self, f: &ScalarField<T>) -> Result<(ScalarField<T>, usize)> {
        let rhs = self.prepare_source(f, T::zero())?;
        let zero = ScalarField::zeros(&self.grid);
        let (mut psi, it) = self.pcg(&rhs, &zero, false)?;
        if self.bc.is_pure_neumann() {
            let m = psi.mean();
            psi.data.iter_mut().for_each(|v| *v -= m);
        }
        Ok((psi, it))
    }

    /// `(Δh − diag(s)) ψ = f` for a nonnegative variable screening `s`.
    pub fn solve_variable_screened(&self, f: &ScalarField<T>, s: &ScalarField<T>) -> Result<ScalarField<T>> {
        self.check_source(f)?;
        if s.min() < T::zero() {
            return Err(Error::InvalidParams("negative screening coefficient".into()));
        }
        if s.max_abs() == T::zero() {
            return self.solve_linear(f);
        }
        self.pcg(f, s, true).map(|(x, _)| x)
    }

    /// `G(ψ) = Δhψ − ρ + e^{−ψ}` on equation rows, `ψ` on Dirichlet pins.
    pub fn boltzmann_residual_field(&self, psi: &ScalarField<T>, rho: &ScalarField<T>) -> ScalarField<T> {
        let mut g = self.apply(psi, T::zero());
        let p = self.grid.plane_len();
        for n in 0..self.grid.len() {
            if self.equation_row(n / p) {
                g.data[n] = g.data[n] - rho.data[n] + (-psi.data[n]).exp();
            }
        }
        g
    }

    /// Newton iteration for `Δψ = ρ − e^{−ψ}` from `ψ0 = 0`.
    pub fn solve_boltzmann(&self, rho: &ScalarField<T>) -> Result<BoltzmannSolution<T>> {
        self.check_source(rho)?;
        if let Some((node, &v)) = rho.data.iter().enumerate().find(|(_, &v)| !(v > T::zero())) {
            return Err(Error::NegativeDensity { node, value: v.to_f64_lossy() });
        }
        let mut psi = ScalarField::zeros(&self.grid);
        let mut residuals = Vec::new();
        for it in 0..=self.tol.newton_max_iter {
            let g = self.boltzmann_residual_field(&psi, rho);
            let res = g.max_abs().to_f64_lossy();
            residuals.push(res);
            if !res.is_finite() {
                return Err(Error::NonFinite("Boltzmann residual".into()));
            }
            if res <= self.tol.newton_tol {
                return Ok(BoltzmannSolution { psi, iterations: it, residuals });
            }
            if it == self.tol.newton_max_iter {
                break;
            }
            // (Δh − e^{−ψ}) δ = −G
            let s = psi.map(|v| (-v).exp());
            let delta = self.pcg(&g.scaled(-T::one()), &s, true)?.0;
            psi.axpy(T::one(), &delta);
        }
        Err(Error::NonConvergence {
            iterations: self.tol.newton_max_iter,
            residual: *residuals.last().unwrap_or(&f64::NAN),
        })
    }

    /// Linearized Boltzmann problem `Δψ − ψ = ρ − 1`, kept for comparison
    /// with the exact nonlinear solve.
    pub fn solve_boltzmann_linearized(&self, rho: &ScalarField<T>) -> Result<ScalarField<T>> {
        self.solve_screened(&rho.map(|v| v - T::one()), T::one())
    }
}

/// Direct solve of the linear problem.
pub fn solve_linear<T: Real>(p: &PoissonProblem<T>) -> Result<ScalarField<T>> {
    let PoissonMode::Linear(f) = &p.mode else {
        return Err(Error::InvalidParams("solve_linear needs a linear problem".into()));
    };
    PoissonSolver::new(&p.grid, p.bc, p.tol).solve_linear(f)
}

pub fn solve_boltzmann<T: Real>(p: &PoissonProblem<T>) -> Result<BoltzmannSolution<T>> {
    let PoissonMode::Boltzmann(rho) = &p.mode else {
        return Err(Error::InvalidParams("solve_boltzmann needs a Boltzmann problem".into()));
    };
    PoissonSolver::new(&p.grid, p.bc, p.tol).solve_boltzmann(rho)
}

/// `‖Δhψ − (ρ − ρ₊(ψ))‖∞`, with `ρ − ρ₊` read as `f` in linear mode.
pub fn poisson_residual<T: Real>(psi: &ScalarField<T>, p: &PoissonProblem<T>) -> T {
    let solver = PoissonSolver::new(&p.grid, p.bc, p.tol);
    match &p.mode {
        PoissonMode::Linear(f) => solver.residual_inf(psi, f, T::zero()),
        PoissonMode::Boltzmann(rho) => solver.boltzmann_residual_field(psi, rho).max_abs(),
    }
}
