//! Right-hand sides of the full formulations: the unipolar system with a
//! constant or Boltzmann background, and the bipolar two-fluid system.
//!
//! Momentum is advanced in velocity form,
//!
//! ```text
//! u̇ = −u·∇u + [−∇P + μΔu + (μ+λ)∇div u + c² div(ρFFᵀ)]/ρ ± ∇ψ − αu
//! ρ̇ = −div(ρu)
//! Ḟ = −u·∇F + ∇u F
//! ```
//!
//! and `u̇` is zeroed on both walls after every evaluation.

use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{self, Components, ScalarField, TensorField, VectorField};
use crate::grid::{BoundarySpec, Grid};
use crate::ops::{self, Axis};
use crate::poisson::{PoissonSolver, PoissonTolerances};
use crate::real::Real;

/// Runs abort once the density drops below this.
pub const RHO_FLOOR: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum PressureLaw {
    /// `P(ρ) = ρ`, free energy `ω(ρ) = ρ ln ρ`.
    Linear,
    /// `P(ρ) = ρ^γ/γ`, free energy `ω(ρ) = ρ^γ/(γ(γ−1))`.
    Gamma(f64),
}

impl PressureLaw {
    pub fn pressure<T: Real>(&self, rho: T) -> T {
        match *self {
            PressureLaw::Linear => rho,
            PressureLaw::Gamma(g) => rho.powf(T::c(g)) / T::c(g),
        }
    }

    pub fn pressure_prime<T: Real>(&self, rho: T) -> T {
        match *self {
            PressureLaw::Linear => T::one(),
            PressureLaw::Gamma(g) => rho.powf(T::c(g - 1.0)),
        }
    }

    /// Free-energy density with `ρω′ − ω = P`.
    pub fn free_energy<T: Real>(&self, rho: T) -> T {
        match *self {
            PressureLaw::Linear => rho * rho.ln(),
            PressureLaw::Gamma(g) => rho.powf(T::c(g)) / T::c(g * (g - 1.0)),
        }
    }

    pub fn free_energy_prime<T: Real>(&self, rho: T) -> T {
        match *self {
            PressureLaw::Linear => rho.ln() + T::one(),
            PressureLaw::Gamma(g) => rho.powf(T::c(g - 1.0)) / T::c(g - 1.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            PressureLaw::Linear => Ok(()),
            PressureLaw::Gamma(g) if g > 1.0 && g.is_finite() => Ok(()),
            PressureLaw::Gamma(g) => Err(Error::InvalidParams(format!("gamma = {g} must exceed 1"))),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "linear" {
            return Ok(PressureLaw::Linear);
        }
        if let Some(g) = s.strip_prefix("gamma:") {
            let g: f64 = g.trim().parse().map_err(|_| Error::Config(format!("bad gamma in pressure = {s:?}")))?;
            let law = PressureLaw::Gamma(g);
            law.validate().map_err(|e| Error::Config(e.to_string()))?;
            return Ok(law);
        }
        Err(Error::Config(format!("pressure must be \"linear\" or \"gamma:<γ>\", got {s:?}")))
    }
}

impl std::fmt::Display for PressureLaw {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PressureLaw::Linear => write!(f, "linear"),
            PressureLaw::Gamma(g) => write!(f, "gamma:{g}"),
        }
    }
}

/// Positive background charge.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Background {
    Constant(f64),
    /// `ρ₊ = e^{−ψ}`
    Boltzmann,
}

impl Background {
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "boltzmann" {
            return Ok(Background::Boltzmann);
        }
        if let Some(v) = s.strip_prefix("constant:") {
            let v: f64 = v.trim().parse().map_err(|_| Error::Config(format!("bad background {s:?}")))?;
            if !(v > 0.0) {
                return Err(Error::Config(format!("background density {v} must be positive")));
            }
            return Ok(Background::Constant(v));
        }
        Err(Error::Config(format!("background must be \"constant:<ρ̄>\" or \"boltzmann\", got {s:?}")))
    }
}

impl std::fmt::Display for Background {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Background::Constant(v) => write!(f, "constant:{v}"),
            Background::Boltzmann => write!(f, "boltzmann"),
        }
    }
}

/// Sign of the electrostatic body force.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChargeSign {
    /// Negatively charged fluid: force `+ρ∇ψ`.
    Minus,
    /// Positively charged fluid: force `−ρ∇ψ`.
    Plus,
}

impl ChargeSign {
    pub fn factor<T: Real>(self) -> T {
        match self {
            ChargeSign::Minus => T::one(),
            ChargeSign::Plus => -T::one(),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "-" | "minus" | "negative" => Ok(ChargeSign::Minus),
            "+" | "plus" | "positive" => Ok(ChargeSign::Plus),
            other => Err(Error::Config(format!("charge_sign must be \"-\" or \"+\", got {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhysParams {
    pub mu: f64,
    pub lambda: f64,
    /// Elastic modulus `c²`.
    pub c2: f64,
    /// Friction coefficient.
    pub alpha: f64,
    pub pressure: PressureLaw,
    pub background: Background,
    pub charge_sign: ChargeSign,
}

impl Default for PhysParams {
    fn default() -> Self {
        PhysParams {
            mu: 0.2,
            lambda: 0.0,
            c2: 1.0,
            alpha: 1.0,
            pressure: PressureLaw::Linear,
            background: Background::Constant(1.0),
            charge_sign: ChargeSign::Minus,
        }
    }
}

impl PhysParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0) {
            return Err(Error::InvalidParams(format!("mu = {} must be positive", self.mu)));
        }
        if !(3.0 * self.lambda + 2.0 * self.mu >= 0.0) {
            return Err(Error::InvalidParams(format!("3λ+2μ = {} < 0", 3.0 * self.lambda + 2.0 * self.mu)));
        }
        if !(self.c2 > 0.0) {
            return Err(Error::InvalidParams(format!("c2 = {} must be positive", self.c2)));
        }
        if !(self.alpha >= 0.0) {
            return Err(Error::InvalidParams(format!("alpha = {} must be nonnegative", self.alpha)));
        }
        self.pressure.validate()
    }

    /// The decay theory needs `α > 0`; `α = 0` runs are permitted but flagged.
    pub fn undamped(&self) -> bool {
        self.alpha == 0.0
    }

    /// Whether `c² = P′(1) = α = 1`, the normalization of the linear split.
    pub fn is_unit_normalized(&self) -> bool {
        self.c2 == 1.0 && self.alpha == 1.0 && (self.pressure.pressure_prime::<f64>(1.0) - 1.0).abs() < 1e-15
    }
}

/// Pointwise `P(ρ)`.
pub fn pressure<T: Real>(rho: &ScalarField<T>, law: PressureLaw) -> ScalarField<T> {
    rho.map(|r| law.pressure(r))
}

pub fn pressure_prime<T: Real>(rho: &ScalarField<T>, law: PressureLaw) -> ScalarField<T> {
    rho.map(|r| law.pressure_prime(r))
}

/// `c² ρ F Fᵀ`
pub fn elastic_stress<T: Real>(rho: &ScalarField<T>, f: &TensorField<T>, c2: T) -> TensorField<T> {
    let fft = f.mul_transpose_self();
    fft.mul_scalar_field(&rho.scaled(c2))
}

#[derive(Clone, Debug, PartialEq)]
pub struct FullState<T> {
    pub rho: ScalarField<T>,
    pub u: VectorField<T>,
    /// Deformation gradient.
    pub f: TensorField<T>,
    /// Electrostatic potential of the most recent evaluation.
    pub psi: ScalarField<T>,
}

/// Time derivatives of a [`FullState`] plus the potential they were built from.
#[derive(Clone, Debug)]
pub struct FullRates<T> {
    pub rho: ScalarField<T>,
    pub u: VectorField<T>,
    pub f: TensorField<T>,
    pub psi: ScalarField<T>,
}

impl<T: Real> FullState<T> {
    /// `(ρ, u, F, ψ) = (1, 0, I, 0)`
    pub fn equilibrium(grid: &Grid<T>) -> Self {
        FullState {
            rho: ScalarField::constant(grid, T::one()),
            u: VectorField::zeros(grid),
            f: TensorField::identity(grid),
            psi: ScalarField::zeros(grid),
        }
    }

    pub fn grid(&self) -> &Grid<T> {
        &self.rho.grid
    }

    /// Checks the density floor, `det F ≥ DET_FLOOR` and finiteness.
    pub fn validate(&self) -> Result<()> {
        check_density(&self.rho)?;
        let n = self.rho.data.len();
        let [a, b, c, d, e, f, g, h, i] = self.f.c.each_ref().map(|c| &c.data[..n]);
        let floor = T::c(field::DET_FLOOR);
        let det = |m: usize| {
            a[m] * (e[m] * i[m] - f[m] * h[m]) - b[m] * (d[m] * i[m] - f[m] * g[m]) + c[m] * (d[m] * h[m] - e[m] * g[m])
        };
        // scan without early exit, then locate the first offender
        let mut bad = false;
        for m in 0..n {
            bad |= !(det(m) >= floor);
        }
        if bad {
            let m = (0..n).find(|&m| !(det(m) >= floor)).unwrap_or(0);
            return Err(Error::SingularTensor { node: m, det: det(m).to_f64_lossy() });
        }
        if !field::all_finite(&self.u) {
            return Err(Error::NonFinite("velocity".into()));
        }
        Ok(())
    }

    /// `y ← a y + b x` on the evolved fields.
    pub fn lincomb(&mut self, a: T, b: T, other: &Self) {
        for (s, o) in self.evolved_mut().into_iter().zip(other.evolved()) {
            for (v, &w) in s.data.iter_mut().zip(&o.data) {
                *v = a * *v + b * w;
            }
        }
    }

    pub fn add_rates(&mut self, dt: T, rates: &FullRates<T>) {
        self.rho.axpy(dt, &rates.rho);
        self.u.axpy(dt, &rates.u);
        self.f.axpy(dt, &rates.f);
    }

    pub fn enforce_walls(&mut self) {
        self.u.set_walls(T::zero());
    }

    /// The time-evolved components `ρ, u, F` (13 scalars per node).
    pub fn evolved(&self) -> Vec<&ScalarField<T>> {
        let mut v = vec![&self.rho];
        v.extend(self.u.c.iter());
        v.extend(self.f.c.iter());
        v
    }

    pub fn evolved_mut(&mut self) -> Vec<&mut ScalarField<T>> {
        let mut v = vec![&mut self.rho];
        v.extend(self.u.c.iter_mut());
        v.extend(self.f.c.iter_mut());
        v
    }

    /// Largest nodal difference over `ρ, u, F, ψ`.
    pub fn max_diff(&self, other: &Self) -> T {
        self.max_diff_evolved(other).max((&self.psi - &other.psi).max_abs())
    }

    /// Largest nodal difference over the evolved fields `ρ, u, F`.
    pub fn max_diff_evolved(&self, other: &Self) -> T {
        let mut m = T::zero();
        for (a, b) in self.evolved().into_iter().zip(other.evolved()) {
            m = m.max((a - b).max_abs());
        }
        m
    }
}

fn check_density<T: Real>(rho: &ScalarField<T>) -> Result<()> {
    let floor = T::c(RHO_FLOOR);
    if let Some((node, &v)) = rho.data.iter().enumerate().find(|(_, &v)| !(v >= floor)) {
        if v.is_nan() {
            return Err(Error::NonFinite("density".into()));
        }
        return Err(Error::DensityFloor { node, value: v.to_f64_lossy(), floor: RHO_FLOOR });
    }
    Ok(())
}

/// Momentum rate in velocity form for given fields and potential; walls zeroed.
pub fn momentum_rate<T: Real>(
    rho: &ScalarField<T>,
    u: &VectorField<T>,
    f: &TensorField<T>,
    psi: &ScalarField<T>,
    p: &PhysParams,
    sign: ChargeSign,
) -> VectorField<T> {
    let grid = *rho.grid();
    let mu = T::c(p.mu);
    let mu_lambda = T::c(p.mu + p.lambda);
    let alpha = T::c(p.alpha);
    let s = sign.factor::<T>();

    let pres = match p.pressure {
        PressureLaw::Linear => Cow::Borrowed(rho),
        law => Cow::Owned(pressure(rho, law)),
    };
    let stress = symmetric_stress(rho, f, T::c(p.c2));
    let partial: [ScalarField<T>; 3] = std::array::from_fn(|j| ops::diff1(&u.c[j], Axis::ALL[j]));
    let axes: Vec<(usize, Axis)> = Axis::ALL.into_iter().enumerate().filter(|&(_, a)| ops::is_active(&grid, a)).collect();
    let nz = grid.nz;

    let mut out = VectorField::zeros(&grid);
    let [o0, o1, o2] = &mut out.c;
    ops::for_each_plane_of(&grid, [o0, o1, o2], 0, |k, planes, _| {
        if k == 0 || k + 1 == nz {
            return;
        }
        let r = ops::plane_of(rho, k);
        for (i, o) in planes.iter_mut().enumerate() {
            let o: &mut [T] = o;
            let ai = Axis::ALL[i];
            // force density first, then the per-mass terms
            if ops::is_active(&grid, ai) {
                ops::plane_diff1_acc(&pres, ai, k, -T::one(), o);
                ops::plane_diff2_acc(&u.c[i], ai, k, mu_lambda, o);
                for (jj, pj) in partial.iter().enumerate() {
                    if jj != i {
                        ops::plane_diff1_acc(pj, ai, k, mu_lambda, o);
                    }
                }
            }
            for &(jj, aj) in &axes {
                ops::plane_diff2_acc(&u.c[i], aj, k, mu, o);
                ops::plane_diff1_acc(&stress[SYM[3 * i + jj]], aj, k, T::one(), o);
            }
            for (v, &rv) in o.iter_mut().zip(r) {
                *v /= rv;
            }
            for &(kk, ak) in &axes {
                ops::plane_diff1_acc_weighted(&u.c[i], ak, k, -T::one(), ops::plane_of(&u.c[kk], k), o);
            }
            if ops::is_active(&grid, ai) {
                ops::plane_diff1_acc(psi, ai, k, s, o);
            }
            for (v, &w) in o.iter_mut().zip(ops::plane_of(&u.c[i], k)) {
                *v -= alpha * w;
            }
        }
    });
    out
}

/// Storage slot of tensor component `3i + j` in the packed symmetric layout.
const SYM: [usize; 9] = [0, 1, 2, 1, 3, 4, 2, 4, 5];

/// The six distinct components of `c² ρ F Fᵀ`.
fn symmetric_stress<T: Real>(rho: &ScalarField<T>, f: &TensorField<T>, c2: T) -> [ScalarField<T>; 6] {
    let grid = *rho.grid();
    let mut out: [ScalarField<T>; 6] = std::array::from_fn(|_| ScalarField::zeros(&grid));
    let n = grid.len();
    let [f0, f1, f2, f3, f4, f5, f6, f7, f8] = f.c.each_ref().map(|c| &c.data[..n]);
    let r = &rho.data[..n];
    let [s0, s1, s2, s3, s4, s5] = out.each_mut().map(|c| &mut c.data[..n]);
    for m in 0..n {
        let w = c2 * r[m];
        let (a, b, c) = ([f0[m], f1[m], f2[m]], [f3[m], f4[m], f5[m]], [f6[m], f7[m], f8[m]]);
        let dot = |x: [T; 3], y: [T; 3]| x[0] * y[0] + x[1] * y[1] + x[2] * y[2];
        s0[m] = w * dot(a, a);
        s1[m] = w * dot(a, b);
        s2[m] = w * dot(a, c);
        s3[m] = w * dot(b, b);
        s4[m] = w * dot(b, c);
        s5[m] = w * dot(c, c);
    }
    out
}

/// `ρ̇ = −div(ρu)`
pub fn continuity_rate<T: Real>(rho: &ScalarField<T>, u: &VectorField<T>) -> ScalarField<T> {
    let grid = *rho.grid();
    let flux = u.mul_scalar_field(rho);
    let mut out = ScalarField::zeros(&grid);
    ops::for_each_plane_of(&grid, [&mut out], 0, |k, o, _| {
        let o: &mut [T] = o[0];
        for (axis, q) in Axis::ALL.into_iter().zip(&flux.c) {
            if ops::is_active(&grid, axis) {
                ops::plane_diff1_acc(q, axis, k, -T::one(), o);
            }
        }
    });
    out
}

/// `Ḟ = −u·∇F + ∇u F`
pub fn deformation_rate<T: Real>(u: &VectorField<T>, f: &TensorField<T>) -> TensorField<T> {
    let grid = *u.grid();
    let p = grid.plane_len();
    let axes: Vec<(usize, Axis)> = Axis::ALL.into_iter().enumerate().filter(|&(_, a)| ops::is_active(&grid, a)).collect();
    let mut out = TensorField::zeros(&grid);
    let outs = out.c.each_mut();
    ops::for_each_plane_of(&grid, outs, 9 * p, |k, planes, gu| {
        // ∇u on this plane, component (i, m) at gu[(3i + m) p ..]
        for (q, g) in gu.chunks_mut(p).enumerate() {
            let axis = Axis::ALL[q % 3];
            if ops::is_active(&grid, axis) {
                ops::plane_diff1(&u.c[q / 3], axis, k, g, |v, d| *v = d);
            } else {
                g.fill(T::zero());
            }
        }
        for (q, o) in planes.iter_mut().enumerate() {
            let o: &mut [T] = o;
            let (i, jc) = (q / 3, q % 3);
            for m in 0..3 {
                let g = &gu[(3 * i + m) * p..(3 * i + m + 1) * p];
                for ((v, &a), &b) in o.iter_mut().zip(g).zip(ops::plane_of(&f.c[3 * m + jc], k)) {
                    *v += a * b;
                }
            }
            for &(kk, ak) in &axes {
                ops::plane_diff1_acc_weighted(&f.c[q], ak, k, -T::one(), ops::plane_of(&u.c[kk], k), o);
            }
        }
    });
    out
}

/// Unipolar model: fields, parameters, walls and a cached Poisson solver.
#[derive(Clone, Debug)]
pub struct UnipolarModel<T: Real> {
    pub params: PhysParams,
    pub bc: BoundarySpec,
    pub poisson: PoissonSolver<T>,
}

impl<T: Real> UnipolarModel<T> {
    pub fn new(grid: &Grid<T>, params: PhysParams, bc: BoundarySpec, tol: PoissonTolerances) -> Result<Self> {
        params.validate()?;
        Ok(UnipolarModel { params, bc, poisson: PoissonSolver::new(grid, bc, tol) })
    }

    /// Electrostatic potential for density `ρ`.
    pub fn potential(&self, rho: &ScalarField<T>) -> Result<ScalarField<T>> {
        match self.params.background {
            Background::Constant(bar) => {
                let source = rho.map(|r| r - T::c(bar));
                solve_charge_density(&self.poisson, &source)
            }
            Background::Boltzmann => Ok(self.poisson.solve_boltzmann(rho)?.psi),
        }
    }

    /// Background density `ρ₊` for the potential `ψ`.
    pub fn background_density(&self, psi: &ScalarField<T>) -> ScalarField<T> {
        match self.params.background {
            Background::Constant(bar) => ScalarField::constant(psi.grid(), T::c(bar)),
            Background::Boltzmann => psi.map(|v| (-v).exp()),
        }
    }

    pub fn rhs(&self, s: &FullState<T>) -> Result<FullRates<T>> {
        s.validate()?;
        let psi = self.potential(&s.rho)?;
        Ok(FullRates {
            rho: continuity_rate(&s.rho, &s.u),
            u: momentum_rate(&s.rho, &s.u, &s.f, &psi, &self.params, self.params.charge_sign),
            f: deformation_rate(&s.u, &s.f),
            psi,
        })
    }
}

/// Solves `Δψ = q` for a net charge density `q`. Under pure-Neumann walls
/// the conserved mean of `q` (conservative quadrature) must vanish within
/// tolerance; the residual trapezoidal mean is quadrature error and is
/// removed before the solve.
pub fn solve_charge_density<T: Real>(poisson: &PoissonSolver<T>, q: &ScalarField<T>) -> Result<ScalarField<T>> {
    if poisson.bc().is_pure_neumann() {
        let conserved = q.mean_conservative();
        if conserved.abs().to_f64_lossy() > poisson.tolerances().mean_tol {
            return Err(Error::NeumannIncompatible { mean: conserved.to_f64_lossy() });
        }
        let m = q.mean();
        return poisson.solve_linear(&q.map(|v| v - m));
    }
    poisson.solve_linear(q)
}

/// `rhs_unipolar` as a free function.
pub fn rhs_unipolar<T: Real>(s: &FullState<T>, p: &PhysParams, bc: BoundarySpec) -> Result<FullRates<T>> {
    UnipolarModel::new(s.grid(), *p, bc, PoissonTolerances::default())?.rhs(s)
}

/// Per-species parameters for the two-fluid system.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BipolarParams {
    pub negative: PhysParams,
    pub positive: PhysParams,
}

impl Default for BipolarParams {
    fn default() -> Self {
        let negative = PhysParams { charge_sign: ChargeSign::Minus, ..PhysParams::default() };
        let positive = PhysParams { charge_sign: ChargeSign::Plus, ..PhysParams::default() };
        BipolarParams { negative, positive }
    }
}

/// Two species sharing one potential; `Δψ = ρ₋ − ρ₊`.
#[derive(Clone, Debug, PartialEq)]
pub struct BipolarState<T> {
    pub negative: FullState<T>,
    pub positive: FullState<T>,
}

#[derive(Clone, Debug)]
pub struct BipolarRates<T> {
    pub negative: FullRates<T>,
    pub positive: FullRates<T>,
    pub psi: ScalarField<T>,
}

impl<T: Real> BipolarState<T> {
    pub fn equilibrium(grid: &Grid<T>) -> Self {
        BipolarState { negative: FullState::equilibrium(grid), positive: FullState::equilibrium(grid) }
    }

    pub fn grid(&self) -> &Grid<T> {
        self.negative.grid()
    }

    pub fn psi(&self) -> &ScalarField<T> {
        &self.negative.psi
    }
}

#[derive(Clone, Debug)]
pub struct BipolarModel<T: Real> {
    pub params: BipolarParams,
    pub bc: BoundarySpec,
    pub poisson: PoissonSolver<T>,
}

impl<T: Real> BipolarModel<T> {
    pub fn new(grid: &Grid<T>, params: BipolarParams, bc: BoundarySpec, tol: PoissonTolerances) -> Result<Self> {
        params.negative.validate()?;
        params.positive.validate()?;
        Ok(BipolarModel { params, bc, poisson: PoissonSolver::new(grid, bc, tol) })
    }

    pub fn potential(&self, s: &BipolarState<T>) -> Result<ScalarField<T>> {
        solve_charge_density(&self.poisson, &(&s.negative.rho - &s.positive.rho))
    }

    pub fn rhs(&self, s: &BipolarState<T>) -> Result<BipolarRates<T>> {
        s.negative.validate()?;
        s.positive.validate()?;
        let psi = self.potential(s)?;
        let species = |st: &FullState<T>, p: &PhysParams, sign: ChargeSign| FullRates {
            rho: continuity_rate(&st.rho, &st.u),
            u: momentum_rate(&st.rho, &st.u, &st.f, &psi, p, sign),
            f: deformation_rate(&st.u, &st.f),
            psi: psi.clone(),
        };
        Ok(BipolarRates {
            negative: species(&s.negative, &self.params.negative, ChargeSign::Minus),
            positive: species(&s.positive, &self.params.positive, ChargeSign::Plus),
            psi: psi.clone(),
        })
    }
}

pub fn rhs_bipolar<T: Real>(s: &BipolarState<T>, p: &BipolarParams, bc: BoundarySpec) -> Result<BipolarRates<T>> {
    BipolarModel::new(s.grid(), *p, bc, PoissonTolerances::default())?.rhs(s)
}

/// Both sides of `∇_j(ρF^{ik}F^{jk}) = ρF^{jk}∇_jF^{ik}` (valid under the
/// Piola constraint) and the `L∞` mismatch between them.
pub fn stress_divergence_identity<T: Real>(
    rho: &ScalarField<T>,
    f: &TensorField<T>,
) -> (VectorField<T>, VectorField<T>, T) {
    let grid = *rho.grid();
    let a = ops::tensor_divergence(&elastic_stress(rho, f, T::one()));
    // ∂_j F^{ik} for all i, k, j
    let df: Vec<[ScalarField<T>; 3]> = f.c.iter().map(|c| Axis::ALL.map(|ax| ops::diff1(c, ax))).collect();
    let mut b = VectorField::zeros(&grid);
    for n in 0..grid.len() {
        let fm = f.at(n);
        for i in 0..3 {
            let mut acc = T::zero();
            for j in 0..3 {
                for k in 0..3 {
                    acc += fm[j][k] * df[3 * i + k][j][n];
                }
            }
            b.c[i][n] = rho[n] * acc;
        }
    }
    let mismatch = field::norm_linf(&(&a - &b));
    (a, b, mismatch)
}

/// `‖∇P₊(ρ₊) + ρ₊∇ψ‖∞` for `P₊(ρ) = ρ`; vanishes iff `ρ₊ ∝ e^{−ψ}`.
pub fn steady_positive_check<T: Real>(rho_plus: &ScalarField<T>, psi: &ScalarField<T>) -> T {
    let gp = ops::gradient(rho_plus);
    let gpsi = ops::gradient(psi);
    let balance = &gp + &gpsi.mul_scalar_field(rho_plus);
    field::norm_linf(&balance)
}

impl<T: Real> Components<T> for FullState<T> {
    fn grid(&self) -> &Grid<T> {
        self.grid()
    }
    fn components(&self) -> Vec<&ScalarField<T>> {
        self.evolved()
    }
    fn components_mut(&mut self) -> Vec<&mut ScalarField<T>> {
        self.evolved_mut()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::norm_linf;
    use crate::grid::WallCondition;
    use std::f64::consts::PI;

    fn grid() -> Grid<f64> {
        Grid::new_2d(16, 17, 1.0, 1.0).unwrap()
    }

    fn wavy_state(g: &Grid<f64>) -> FullState<f64> {
        let mut s = FullState::equilibrium(g);
        s.rho = ScalarField::from_fn(g, |x, y, z| 1.0 + 0.1 * (2.0 * PI * x).sin() * (1.0 + z * z) + 0.05 * (2.0 * PI * y).cos());
        s.u = VectorField::from_fn(g, |x, y, z| {
            let w = (PI * z).sin();
            [0.2 * w * (2.0 * PI * x).cos(), 0.1 * w * (2.0 * PI * y).sin(), 0.15 * w * (2.0 * PI * (x + y)).sin()]
        });
        s.f = TensorField::from_fn(g, |x, y, z| {
            let e = 0.1 * (2.0 * PI * x).sin() * z + 0.05 * (2.0 * PI * y).cos();
            [[1.0 + e, 0.3 * e, -0.2 * e], [0.1 * e, 1.0 - e, 0.4 * e], [0.2 * e, -0.1 * e, 1.0 + 0.5 * e]]
        });
        s.psi = ScalarField::from_fn(g, |x, _, z| (2.0 * PI * x).cos() * z * (1.0 - z));
        s
    }

    #[test]
    fn fused_rates_match_composed_operators() {
        for g in [Grid::new(8, 6, 9, 1.0, 1.0, 1.0).unwrap(), Grid::new_2d(12, 9, 1.0, 1.0).unwrap()] {
            let st = wavy_state(&g);
            let p = PhysParams { lambda: 0.3, mu: 0.15, c2: 1.3, alpha: 0.7, ..PhysParams::default() };
            let force = &(&(&ops::laplacian_vector(&st.u).scaled(p.mu)
                + &ops::grad_div(&st.u).scaled(p.mu + p.lambda))
                + &ops::tensor_divergence(&elastic_stress(&st.rho, &st.f, p.c2)))
                - &ops::gradient(&pressure(&st.rho, p.pressure));
            let inv_rho = st.rho.map(|r| 1.0 / r);
            for sign in [ChargeSign::Minus, ChargeSign::Plus] {
                let mut expect = &(&force.mul_scalar_field(&inv_rho) - &ops::advect(&st.u, &st.u))
                    - &st.u.scaled(p.alpha);
                expect.axpy(sign.factor(), &ops::gradient(&st.psi));
                expect.set_walls(0.0);
                let got = momentum_rate(&st.rho, &st.u, &st.f, &st.psi, &p, sign);
                assert!(norm_linf(&(&got - &expect)) < 1e-11);
            }
            let expect = &ops::vector_gradient(&st.u).matmul(&st.f) - &ops::advect(&st.u, &st.f);
            assert!(norm_linf(&(&deformation_rate(&st.u, &st.f) - &expect)) < 1e-11);
        }
    }

    #[test]
    fn default_pressure_normalization() {
        let law = PressureLaw::Linear;
        assert_eq!(law.pressure(1.0f64), 1.0);
        assert_eq!(law.pressure_prime(1.0f64), 1.0);
        assert_eq!(law.pressure(0.7f64), 0.7);
        assert!((PressureLaw::Gamma(2.0).pressure_prime(1.0f64) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn legendre_relation_holds() {
        for law in [PressureLaw::Linear, PressureLaw::Gamma(2.0), PressureLaw::Gamma(1.4)] {
            for i in 0..=20 {
                let r = 0.5 + i as f64 * 0.05;
                let lhs = r * law.free_energy_prime(r) - law.free_energy(r);
                assert!((lhs - law.pressure(r)).abs() < 1e-12, "{law:?} at {r}");
            }
        }
    }

    #[test]
    fn parses_config_strings() {
        assert_eq!(PressureLaw::parse("gamma:2").unwrap(), PressureLaw::Gamma(2.0));
        assert!(PressureLaw::parse("gamma:1").is_err());
        assert_eq!(Background::parse("constant:1.5").unwrap(), Background::Constant(1.5));
        assert_eq!(Background::parse("boltzmann").unwrap(), Background::Boltzmann);
        assert_eq!(ChargeSign::parse("+").unwrap(), ChargeSign::Plus);
    }

    #[test]
    fn rejects_unphysical_viscosity() {
        let p = PhysParams { mu: 1.0, lambda: -1.0, ..Default::default() };
        assert!(p.validate().is_err());
        let p = PhysParams { alpha: 0.0, ..Default::default() };
        assert!(p.validate().is_ok() && p.undamped());
    }

    #[test]
    fn elastic_stress_examples() {
        let g = grid();
        let c2 = 2.5;
        let t = elastic_stress(&ScalarField::constant(&g, 1.0), &TensorField::identity(&g), c2);
        assert_eq!(t.at(0), [[c2, 0.0, 0.0], [0.0, c2, 0.0], [0.0, 0.0, c2]]);

        let s = 1.3;
        let f = TensorField::constant(&g, [[s, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        let t = elastic_stress(&ScalarField::constant(&g, 1.0 / s), &f, c2);
        let m = t.at(3);
        assert!((m[0][0] - c2 * s).abs() < 1e-14);
        assert!((m[1][1] - c2 / s).abs() < 1e-14);
        assert!((m[2][2] - c2 / s).abs() < 1e-14);
    }

    #[test]
    fn elastic_stress_is_symmetric() {
        let g = grid();
        let f = TensorField::from_fn(&g, |x, _, z| {
            [[1.0 + 0.1 * x, 0.2 * z, 0.05], [0.3 * x * z, 0.9, -0.1], [0.0, 0.2, 1.1 - z * 0.1]]
        });
        let rho = ScalarField::from_fn(&g, |x, _, _| 1.0 + 0.1 * (2.0 * PI * x).sin());
        let t = elastic_stress(&rho, &f, 1.0);
        assert!(norm_linf(&(&t - &t.transpose())) <= 1e-15);
    }

    #[test]
    fn equilibrium_is_fixed_point() {
        let g = Grid::new(8, 6, 9, 1.0, 1.0, 1.0).unwrap();
        for bc in [BoundarySpec::DIRICHLET, BoundarySpec::NEUMANN] {
            let s = FullState::equilibrium(&g);
            let r = rhs_unipolar(&s, &PhysParams::default(), bc).unwrap();
            assert!(r.rho.max_abs() <= 1e-13);
            assert!(norm_linf(&r.u) <= 1e-13);
            assert!(norm_linf(&r.f) <= 1e-13);
            assert!(r.psi.max_abs() <= 1e-13);
        }
        let b = BipolarState::equilibrium(&g);
        let r = rhs_bipolar(&b, &BipolarParams::default(), BoundarySpec::DIRICHLET).unwrap();
        assert!(norm_linf(&r.negative.u) <= 1e-13 && norm_linf(&r.positive.u) <= 1e-13);
        assert!(r.psi.max_abs() <= 1e-13);
    }

    #[test]
    fn boltzmann_equilibrium_is_fixed_point() {
        let g = grid();
        let p = PhysParams { background: Background::Boltzmann, ..Default::default() };
        let r = rhs_unipolar(&FullState::equilibrium(&g), &p, BoundarySpec::DIRICHLET).unwrap();
        assert!(norm_linf(&r.u) <= 1e-13 && r.psi.max_abs() == 0.0);
    }

    #[test]
    fn uniform_deformation_under_linear_flow() {
        // periodic-only subcase: u = A x with x-dependence only is not periodic,
        // so use a z-linear flow and check interior nodes
        let g = Grid::new_2d(8, 9, 1.0, 1.0).unwrap();
        let a13 = 0.3;
        let a33 = -0.2;
        let u = VectorField::from_fn(&g, |_, _, z| [a13 * z, 0.0, a33 * z]);
        let f0: [[f64; 3]; 3] = [[1.1, 0.05, -0.02], [0.0, 0.95, 0.1], [0.03, 0.0, 1.02]];
        let f = TensorField::constant(&g, f0);
        let fdot = deformation_rate(&u, &f);
        let a = [[0.0, 0.0, a13], [0.0, 0.0, 0.0], [0.0, 0.0, a33]];
        let expected = field::mat_mul(&a, &f0);
        for n in 0..g.len() {
            let m = fdot.at(n);
            for i in 0..3 {
                for j in 0..3 {
                    assert!((m[i][j] - expected[i][j]).abs() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn stress_identity_trivial_and_negative_control() {
        let g = grid();
        let (_, _, m) = stress_divergence_identity(&ScalarField::constant(&g, 1.0), &TensorField::identity(&g));
        assert_eq!(m, 0.0);
        let f = TensorField::from_fn(&g, |x, _, z| {
            let s = (2.0 * PI * x).sin();
            [[1.0 + 0.2 * s, 0.1 * z, 0.0], [0.0, 1.0, 0.0], [0.3 * s * z, 0.0, 1.0]]
        });
        let (_, _, m) = stress_divergence_identity(&ScalarField::constant(&g, 1.0), &f);
        assert!(m > 0.1, "non-Piola tensor should be flagged, got {m}");
    }

    #[test]
    fn steady_positive_examples() {
        let g = grid();
        let one = ScalarField::constant(&g, 1.0);
        assert_eq!(steady_positive_check(&one, &ScalarField::zeros(&g)), 0.0);
        let psi = ScalarField::from_fn(&g, |x, _, z| 0.1 * (2.0 * PI * x).sin() * z);
        assert!(steady_positive_check(&one, &psi) > 0.05);
    }

    #[test]
    fn bipolar_species_feel_opposite_forces() {
        let g = grid();
        let eps = 1e-4;
        let bump = ScalarField::from_fn(&g, |x, _, z| (2.0 * PI * x).sin() * (PI * z).sin().powi(2));
        let mut s = BipolarState::equilibrium(&g);
        s.negative.rho = bump.map(|b| 1.0 + eps * b);
        s.positive.rho = bump.map(|b| 1.0 - eps * b);
        let bc = BoundarySpec::new(WallCondition::Dirichlet, WallCondition::Neumann);
        let r = rhs_bipolar(&s, &BipolarParams::default(), bc).unwrap();
        let sum = &r.negative.u + &r.positive.u;
        let scale = norm_linf(&r.negative.u);
        assert!(scale > 0.0);
        // the pressure parts mirror exactly; the electrostatic parts are equal and opposite
        // only to first order in ε
        assert!(norm_linf(&sum) / scale < 10.0 * eps, "{}", norm_linf(&sum) / scale);
    }
}
