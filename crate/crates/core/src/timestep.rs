//! Three-stage SSP Runge-Kutta (Shu-Osher form) and the CFL step bound.

use crate::error::{Error, Result};
use crate::field::{ScalarField, VectorField};
use crate::grid::Grid;
use crate::model_full::{BipolarModel, BipolarRates, BipolarState, FullRates, FullState, PhysParams, UnipolarModel};
use crate::model_reduced::{reconstruct_full, ReducedModel, ReducedRates, ReducedState};
use crate::real::Real;

/// A semi-discrete system `y′ = L(y)` with wall conditions re-imposed after
/// each stage.
pub trait OdeSystem<T: Real> {
    type State: Clone;
    type Rate;

    fn rhs(&self, y: &Self::State) -> Result<Self::Rate>;
    /// `y ← y + dt·r`
    fn add_rate(&self, y: &mut Self::State, dt: T, r: &Self::Rate);
    /// `y ← a·y + b·x`
    fn lincomb(&self, y: &mut Self::State, a: T, b: T, x: &Self::State);
    fn enforce_walls(&self, _y: &mut Self::State) {}
    /// Called after each stage with that stage's rate.
    fn observe(&self, _y: &mut Self::State, _r: &Self::Rate) {}
}

fn stage<T: Real, S: OdeSystem<T>>(sys: &S, y: &S::State, k: usize) -> Result<S::Rate> {
    sys.rhs(y).map_err(|e| Error::StepAbort { stage: k, source: Box::new(e) })
}

/// One SSP-RK3 step:
///
/// ```text
/// y⁽¹⁾ = yⁿ + Δt L(yⁿ)
/// y⁽²⁾ = ¾ yⁿ + ¼ (y⁽¹⁾ + Δt L(y⁽¹⁾))
/// yⁿ⁺¹ = ⅓ yⁿ + ⅔ (y⁽²⁾ + Δt L(y⁽²⁾))
/// ```
pub fn step_ssprk3<T: Real, S: OdeSystem<T>>(sys: &S, y: &S::State, dt: T) -> Result<S::State> {
    let k1 = stage(sys, y, 1)?;
    let mut y1 = y.clone();
    sys.observe(&mut y1, &k1);
    sys.add_rate(&mut y1, dt, &k1);
    sys.enforce_walls(&mut y1);

    let k2 = stage(sys, &y1, 2)?;
    let mut y2 = y1;
    sys.observe(&mut y2, &k2);
    sys.add_rate(&mut y2, dt, &k2);
    sys.lincomb(&mut y2, T::c(0.25), T::c(0.75), y);
    sys.enforce_walls(&mut y2);

    let k3 = stage(sys, &y2, 3)?;
    let mut y3 = y2;
    sys.observe(&mut y3, &k3);
    sys.add_rate(&mut y3, dt, &k3);
    sys.lincomb(&mut y3, T::c(2.0 / 3.0), T::c(1.0 / 3.0), y);
    sys.enforce_walls(&mut y3);
    Ok(y3)
}

/// Step-size controls.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CflParams {
    pub advective: f64,
    pub diffusive: f64,
    pub dt_max: f64,
}

impl Default for CflParams {
    fn default() -> Self {
        CflParams { advective: 0.4, diffusive: 0.25, dt_max: 0.05 }
    }
}

/// `min(cfl_adv h/(‖u‖∞ + c_wave), cfl_diff h²/(2d ν_max), dt_max)` with
/// `c_wave = √max P′(ρ) + c` and `ν_max = (2μ+λ)/ρ_min`.
pub fn cfl_dt<T: Real>(rho: &ScalarField<T>, u: &VectorField<T>, p: &PhysParams, grid: &Grid<T>, cfl: &CflParams) -> f64 {
    let h = grid.min_spacing().to_f64_lossy();
    let umax = crate::field::norm_linf(u).to_f64_lossy();
    let pmax = rho.data.iter().map(|&r| p.pressure.pressure_prime(r).to_f64_lossy()).fold(0.0, f64::max);
    let c_wave = pmax.sqrt() + p.c2.sqrt();
    let rho_min = rho.min().to_f64_lossy();
    let nu_max = (2.0 * p.mu + p.lambda) / rho_min;
    let d = grid.dim() as f64;
    let adv = cfl.advective * h / (umax + c_wave);
    let diff = cfl.diffusive * h * h / (2.0 * d * nu_max);
    adv.min(diff).min(cfl.dt_max)
}

impl<T: Real> OdeSystem<T> for UnipolarModel<T> {
    type State = FullState<T>;
    type Rate = FullRates<T>;

    fn rhs(&self, y: &FullState<T>) -> Result<FullRates<T>> {
        UnipolarModel::rhs(self, y)
    }
    fn add_rate(&self, y: &mut FullState<T>, dt: T, r: &FullRates<T>) {
        y.add_rates(dt, r);
    }
    fn lincomb(&self, y: &mut FullState<T>, a: T, b: T, x: &FullState<T>) {
        y.lincomb(a, b, x);
    }
    fn enforce_walls(&self, y: &mut FullState<T>) {
        y.enforce_walls();
    }
    fn observe(&self, y: &mut FullState<T>, r: &FullRates<T>) {
        y.psi.clone_from(&r.psi);
    }
}

impl<T: Real> OdeSystem<T> for BipolarModel<T> {
    type State = BipolarState<T>;
    type Rate = BipolarRates<T>;

    fn rhs(&self, y: &BipolarState<T>) -> Result<BipolarRates<T>> {
        BipolarModel::rhs(self, y)
    }
    fn add_rate(&self, y: &mut BipolarState<T>, dt: T, r: &BipolarRates<T>) {
        y.negative.add_rates(dt, &r.negative);
        y.positive.add_rates(dt, &r.positive);
    }
    fn lincomb(&self, y: &mut BipolarState<T>, a: T, b: T, x: &BipolarState<T>) {
        y.negative.lincomb(a, b, &x.negative);
        y.positive.lincomb(a, b, &x.positive);
    }
    fn enforce_walls(&self, y: &mut BipolarState<T>) {
        y.negative.enforce_walls();
        y.positive.enforce_walls();
    }
    fn observe(&self, y: &mut BipolarState<T>, r: &BipolarRates<T>) {
        y.negative.psi.clone_from(&r.psi);
        y.positive.psi.clone_from(&r.psi);
    }
}

impl<T: Real> OdeSystem<T> for ReducedModel<T> {
    type State = ReducedState<T>;
    type Rate = ReducedRates<T>;

    fn rhs(&self, y: &ReducedState<T>) -> Result<ReducedRates<T>> {
        ReducedModel::rhs(self, y)
    }
    fn add_rate(&self, y: &mut ReducedState<T>, dt: T, r: &ReducedRates<T>) {
        y.add_rates(dt, r);
    }
    fn lincomb(&self, y: &mut ReducedState<T>, a: T, b: T, x: &ReducedState<T>) {
        y.lincomb(a, b, x);
    }
    fn enforce_walls(&self, y: &mut ReducedState<T>) {
        y.enforce_walls();
    }
    fn observe(&self, y: &mut ReducedState<T>, r: &ReducedRates<T>) {
        y.psi.clone_from(&r.psi);
    }
}

/// Full and reduced formulations advanced side by side with a shared step.
#[derive(Clone, Debug)]
pub struct CoEvolution<'a, T: Real> {
    pub full: &'a UnipolarModel<T>,
    pub reduced: &'a ReducedModel<T>,
}

impl<T: Real> OdeSystem<T> for CoEvolution<'_, T> {
    type State = (FullState<T>, ReducedState<T>);
    type Rate = (FullRates<T>, ReducedRates<T>);

    fn rhs(&self, y: &Self::State) -> Result<Self::Rate> {
        Ok((self.full.rhs(&y.0)?, self.reduced.rhs(&y.1)?))
    }
    fn add_rate(&self, y: &mut Self::State, dt: T, r: &Self::Rate) {
        y.0.add_rates(dt, &r.0);
        y.1.add_rates(dt, &r.1);
    }
    fn lincomb(&self, y: &mut Self::State, a: T, b: T, x: &Self::State) {
        y.0.lincomb(a, b, &x.0);
        y.1.lincomb(a, b, &x.1);
    }
    fn enforce_walls(&self, y: &mut Self::State) {
        y.0.enforce_walls();
        y.1.enforce_walls();
    }
    fn observe(&self, y: &mut Self::State, r: &Self::Rate) {
        y.0.psi.clone_from(&r.0.psi);
        y.1.psi.clone_from(&r.1.psi);
    }
}

/// CFL bound for a reduced state, using its reconstructed density.
pub fn cfl_dt_reduced<T: Real>(r: &ReducedState<T>, p: &PhysParams, cfl: &CflParams) -> Result<f64> {
    let s = reconstruct_full(r)?;
    Ok(cfl_dt(&s.rho, &s.u, p, r.grid(), cfl))
}
