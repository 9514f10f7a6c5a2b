//! Reduced deformation formulation: evolve `(u, φ)` with `φ = X(x,t) − x`,
//! `φ̇ = −u·∇φ − u`, and rebuild `F = (I + ∇φ)⁻¹`, `ρ = det(I + ∇φ)` for the
//! momentum equation.
//!
//! Composed-derivative mismatches are measured away from the two wall layers
//! on each side (see [`WALL_MARGIN`]): one-sided wall stencils composed with
//! each other are only first order there.

use crate::error::{Error, Result};
use crate::field::{self, Components, Mat3, ScalarField, TensorField, VectorField};
use crate::grid::{BoundarySpec, Grid};
use crate::model_full::{momentum_rate, FullState, PhysParams, UnipolarModel};
use crate::ops;
use crate::poisson::{PoissonSolver, PoissonTolerances};
use crate::real::Real;

/// Largest admissible pointwise spectral norm of `∇φ`.
pub const GRAD_PHI_BOUND: f64 = 0.5;

/// Wall layers skipped when comparing composed discrete operators.
pub const WALL_MARGIN: usize = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct ReducedState<T> {
    pub u: VectorField<T>,
    /// Deformation vector `φ = X − x`.
    pub phi: VectorField<T>,
    pub psi: ScalarField<T>,
}

#[derive(Clone, Debug)]
pub struct ReducedRates<T> {
    pub u: VectorField<T>,
    pub phi: VectorField<T>,
    pub psi: ScalarField<T>,
}

impl<T: Real> ReducedState<T> {
    pub fn equilibrium(grid: &Grid<T>) -> Self {
        ReducedState { u: VectorField::zeros(grid), phi: VectorField::zeros(grid), psi: ScalarField::zeros(grid) }
    }

    pub fn grid(&self) -> &Grid<T> {
        self.u.grid()
    }

    pub fn lincomb(&mut self, a: T, b: T, other: &Self) {
        for (s, o) in self.components_mut().into_iter().zip(other.components()) {
            for (v, &w) in s.data.iter_mut().zip(&o.data) {
                *v = a * *v + b * w;
            }
        }
    }

    pub fn add_rates(&mut self, dt: T, rates: &ReducedRates<T>) {
        self.u.axpy(dt, &rates.u);
        self.phi.axpy(dt, &rates.phi);
    }

    pub fn enforce_walls(&mut self) {
        self.u.set_walls(T::zero());
        self.phi.set_walls(T::zero());
    }

    pub fn max_diff(&self, other: &Self) -> T {
        let du = field::norm_linf(&(&self.u - &other.u));
        let dp = field::norm_linf(&(&self.phi - &other.phi));
        du.max(dp).max((&self.psi - &other.psi).max_abs())
    }
}

impl<T: Real> Components<T> for ReducedState<T> {
    fn grid(&self) -> &Grid<T> {
        self.u.grid()
    }
    fn components(&self) -> Vec<&ScalarField<T>> {
        self.u.c.iter().chain(self.phi.c.iter()).collect()
    }
    fn components_mut(&mut self) -> Vec<&mut ScalarField<T>> {
        self.u.c.iter_mut().chain(self.phi.c.iter_mut()).collect()
    }
}

/// Largest singular value of a 3×3 matrix.
pub fn spectral_norm<T: Real>(k: &Mat3<T>) -> T {
    // eigenvalues of the symmetric KᵀK, trigonometric closed form
    let kt = field::transpose(k);
    let a = field::mat_mul(&kt, k);
    let p1 = a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2];
    let q = (a[0][0] + a[1][1] + a[2][2]) / T::c(3.0);
    if p1 == T::zero() {
        return a[0][0].max(a[1][1]).max(a[2][2]).max(T::zero()).sqrt();
    }
    let p2 = (a[0][0] - q).powi(2) + (a[1][1] - q).powi(2) + (a[2][2] - q).powi(2) + T::c(2.0) * p1;
    let p = (p2 / T::c(6.0)).sqrt();
    let mut b = a;
    for (i, row) in b.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let d = if i == j { q } else { T::zero() };
            *v = (a[i][j] - d) / p;
        }
    }
    let r = (field::det(&b) / T::c(2.0)).max(-T::one()).min(T::one());
    let phi = r.acos() / T::c(3.0);
    let eig_max = q + T::c(2.0) * p * phi.cos();
    eig_max.max(T::zero()).sqrt()
}

/// `I + ∇φ` with the spectral bound enforced.
fn deformation_inverse<T: Real>(phi: &VectorField<T>) -> Result<TensorField<T>> {
    let k = ops::vector_gradient(phi);
    let bound = T::c(GRAD_PHI_BOUND);
    for n in 0..k.grid().len() {
        let m = k.at(n);
        if !(spectral_norm(&m) < bound) {
            let mut a = m;
            for (i, row) in a.iter_mut().enumerate() {
                row[i] += T::one();
            }
            return Err(Error::SingularTensor { node: n, det: field::det(&a).to_f64_lossy() });
        }
    }
    Ok(&TensorField::identity(k.grid()) + &k)
}

/// `F = (I + ∇φ)⁻¹`, `ρ = det(I + ∇φ)`; `u` and `ψ` are carried over.
pub fn reconstruct_full<T: Real>(r: &ReducedState<T>) -> Result<FullState<T>> {
    let a = deformation_inverse(&r.phi)?;
    Ok(FullState { rho: a.det3(), u: r.u.clone(), f: a.inv3()?, psi: r.psi.clone() })
}

/// Reduced model with a unipolar momentum equation and a Dirichlet solver
/// for recovering `φ` from `F`.
#[derive(Clone, Debug)]
pub struct ReducedModel<T: Real> {
    pub full: UnipolarModel<T>,
    dirichlet: PoissonSolver<T>,
}

impl<T: Real> ReducedModel<T> {
    pub fn new(grid: &Grid<T>, params: PhysParams, bc: BoundarySpec, tol: PoissonTolerances) -> Result<Self> {
        Ok(ReducedModel {
            full: UnipolarModel::new(grid, params, bc, tol)?,
            dirichlet: PoissonSolver::new(grid, BoundarySpec::DIRICHLET, tol),
        })
    }

    pub fn params(&self) -> &PhysParams {
        &self.full.params
    }

    /// `Δφⁱ = ∂ⱼKⁱʲ` with `K = F⁻¹ − I` and `φ = 0` on both walls.
    pub fn project(&self, s: &FullState<T>) -> Result<ReducedState<T>> {
        let k = &s.f.inv3()? - &TensorField::identity(s.grid());
        let src = ops::tensor_divergence(&k);
        let c = [0, 1, 2].map(|i| self.dirichlet.solve_linear(&src.c[i]));
        let [a, b, d] = c;
        Ok(ReducedState { u: s.u.clone(), phi: VectorField::from_components([a?, b?, d?]), psi: s.psi.clone() })
    }

    pub fn rhs(&self, r: &ReducedState<T>) -> Result<ReducedRates<T>> {
        let s = reconstruct_full(r)?;
        s.validate()?;
        let psi = self.full.potential(&s.rho)?;
        let p = &self.full.params;
        let u = momentum_rate(&s.rho, &s.u, &s.f, &psi, p, p.charge_sign);
        Ok(ReducedRates { u, phi: phi_rate(&r.u, &r.phi), psi })
    }

    /// Terms of the linearized momentum and deformation equations.
    pub fn linear_split(&self, r: &ReducedState<T>) -> Result<LinearSplit<T>> {
        let p = self.params();
        if !p.is_unit_normalized() {
            return Err(Error::Normalization(format!(
                "linear split needs c2 = alpha = P'(1) = 1, got c2 = {}, alpha = {}, P'(1) = {}",
                p.c2,
                p.alpha,
                p.pressure.pressure_prime::<f64>(1.0)
            )));
        }
        let rates = self.rhs(r)?;
        let mu = T::c(p.mu);
        let mu_lambda = T::c(p.mu + p.lambda);
        let visc = {
            let mut v = ops::laplacian_vector(&r.u).scaled(mu);
            v.axpy(mu_lambda, &ops::grad_div(&r.u));
            v
        };
        let elastic = &ops::laplacian_vector(&r.phi) + &ops::grad_div(&r.phi);
        let grad_psi = ops::gradient(&rates.psi);
        let mut l1 = rates.u.clone();
        l1.axpy(-T::one(), &visc);
        l1.axpy(T::one(), &elastic);
        l1.axpy(-T::one(), &grad_psi);
        l1.axpy(T::one(), &r.u);
        let l2 = &rates.phi + &r.u;
        let mut r2 = ops::advect(&r.u, &r.phi);
        r2 = r2.scaled(-T::one());
        let linear_scale = [&rates.u, &visc, &elastic, &grad_psi, &r.u]
            .into_iter()
            .map(|f| ops::interior_linf(f, WALL_MARGIN))
            .fold(T::zero(), T::max);
        Ok(LinearSplit { r1: l1.clone(), l1, l2, r2, linear_scale })
    }
}

/// `φ̇ = −u·∇φ − u`
pub fn phi_rate<T: Real>(u: &VectorField<T>, phi: &VectorField<T>) -> VectorField<T> {
    let mut out = ops::advect(u, phi);
    out.axpy(T::one(), u);
    out.scaled(-T::one())
}

/// Linear operators of the reduced system applied to a state, with the
/// exact remainders `R₁ := L₁` and `R₂ := −u·∇φ`.
#[derive(Clone, Debug)]
pub struct LinearSplit<T> {
    pub l1: VectorField<T>,
    pub l2: VectorField<T>,
    pub r1: VectorField<T>,
    pub r2: VectorField<T>,
    /// Largest interior `L∞` norm among the individual linear terms of `L₁`.
    pub linear_scale: T,
}

impl<T: Real> LinearSplit<T> {
    /// `‖R₁‖/linear_scale` away from the walls, where `u̇` is pinned to zero.
    pub fn remainder_ratio(&self) -> T {
        ops::interior_linf(&self.r1, WALL_MARGIN) / self.linear_scale
    }
}

pub fn project_reduced<T: Real>(s: &FullState<T>) -> Result<ReducedState<T>> {
    ReducedModel::new(s.grid(), PhysParams::default(), BoundarySpec::DIRICHLET, PoissonTolerances::default())?.project(s)
}

pub fn rhs_reduced<T: Real>(r: &ReducedState<T>, p: &PhysParams, bc: BoundarySpec) -> Result<ReducedRates<T>> {
    ReducedModel::new(r.grid(), *p, bc, PoissonTolerances::default())?.rhs(r)
}

pub fn linear_split<T: Real>(r: &ReducedState<T>, p: &PhysParams, bc: BoundarySpec) -> Result<LinearSplit<T>> {
    ReducedModel::new(r.grid(), *p, bc, PoissonTolerances::default())?.linear_split(r)
}

/// Interior `L∞` mismatch in `div u = −(∂ₜ div φ + u·∇ div φ) − (∇u)ᵀ:∇φ`,
/// with `∂ₜφ` supplied.
pub fn material_div_identity<T: Real>(u: &VectorField<T>, phi: &VectorField<T>, phi_dot: &VectorField<T>) -> T {
    let lhs = ops::divergence(u);
    let div_phi = ops::divergence(phi);
    let mut rhs = ops::divergence(phi_dot);
    rhs.axpy(T::one(), &ops::advect(u, &div_phi));
    let gu = ops::vector_gradient(u);
    let gp = ops::vector_gradient(phi);
    // (∇u)ᵀ:∇φ = Σ ∂ᵢuʲ ∂ⱼφⁱ = Σ (∇u)^{ji} (∇φ)^{ij}
    for i in 0..3 {
        for j in 0..3 {
            let prod = &gu[(j, i)] * &gp[(i, j)];
            rhs.axpy(T::one(), &prod);
        }
    }
    let mismatch = &lhs + &rhs;
    ops::interior_max_abs(&mismatch, WALL_MARGIN)
}

/// Interior `L∞` mismatch between `Ḟ = −F (∇φ̇) F` and `−u·∇F + ∇u F`.
pub fn chain_rule_mismatch<T: Real>(r: &ReducedState<T>, phi_dot: &VectorField<T>) -> Result<T> {
    let s = reconstruct_full(r)?;
    let kdot = ops::vector_gradient(phi_dot);
    let chain = s.f.matmul(&kdot).matmul(&s.f).scaled(-T::one());
    let transport = crate::model_full::deformation_rate(&s.u, &s.f);
    Ok(ops::interior_linf(&(&chain - &transport), WALL_MARGIN))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::norm_linf;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn phi_field(g: &Grid<f64>, eps: f64) -> VectorField<f64> {
        let (lx, lz) = (g.lx, g.lz);
        VectorField::from_fn(g, |x, _, z| {
            let w = (PI * z / lz).sin().powi(2);
            let sx = (2.0 * PI * x / lx).sin();
            let cx = (2.0 * PI * x / lx).cos();
            [eps * sx * w, 0.0, eps * 0.5 * cx * w]
        })
    }

    fn u_field(g: &Grid<f64>, eps: f64) -> VectorField<f64> {
        let (lx, lz) = (g.lx, g.lz);
        VectorField::from_fn(g, |x, _, z| {
            let w = (PI * z / lz).sin().powi(2);
            [eps * (2.0 * PI * x / lx).cos() * w, 0.0, eps * 0.7 * (2.0 * PI * x / lx).sin() * w]
        })
    }

    #[test]
    fn spectral_norm_examples() {
        let d: Mat3<f64> = [[0.3, 0.0, 0.0], [0.0, -0.4, 0.0], [0.0, 0.0, 0.1]];
        assert!((spectral_norm(&d) - 0.4).abs() < 1e-14);
        let s: Mat3<f64> = [[0.0, 0.2, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]];
        assert!((spectral_norm(&s) - 0.2).abs() < 1e-14);
        assert_eq!(spectral_norm(&[[0.0f64; 3]; 3]), 0.0);
    }

    proptest! {
        #[test]
        fn spectral_norm_bounds(v in proptest::collection::vec(-1.0f64..1.0, 9)) {
            let m = [[v[0], v[1], v[2]], [v[3], v[4], v[5]], [v[6], v[7], v[8]]];
            let s = spectral_norm(&m);
            let fro = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            let max_entry = v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
            prop_assert!(s <= fro + 1e-12);
            prop_assert!(s + 1e-12 >= max_entry);
            prop_assert!(s + 1e-12 >= fro / 3f64.sqrt());
        }

        #[test]
        fn reconstruction_satisfies_det_constraint(a in -0.04f64..0.04, b in -0.04f64..0.04, c in -0.04f64..0.04) {
            let g = Grid::new(6, 5, 9, 1.0, 1.0, 1.0).unwrap();
            let phi = VectorField::from_fn(&g, |x, y, z| {
                let w = (PI * z).sin().powi(2);
                [a * (2.0 * PI * y).sin() * w, b * (2.0 * PI * x).cos() * w, c * (2.0 * PI * (x + y)).sin() * w]
            });
            let s = reconstruct_full(&ReducedState { u: VectorField::zeros(&g), phi, psi: ScalarField::zeros(&g) }).unwrap();
            let prod = &s.rho * &s.f.det3();
            prop_assert!(prod.map(|v| v - 1.0).max_abs() <= 1e-13);
        }
    }

    #[test]
    fn zero_deformation_reconstructs_equilibrium() {
        let g = Grid::new_2d(8, 9, 1.0, 1.0).unwrap();
        let s = reconstruct_full(&ReducedState::equilibrium(&g)).unwrap();
        assert_eq!(s, FullState::equilibrium(&g));
    }

    #[test]
    fn reconstructed_density_matches_determinant() {
        let g = Grid::new_2d(16, 17, 1.0, 1.0).unwrap();
        let eps = 0.05;
        let phi = VectorField::from_fn(&g, |x, _, z| [eps * (2.0 * PI * x).sin() * (PI * z).sin().powi(2), 0.0, 0.0]);
        let r = ReducedState { u: VectorField::zeros(&g), phi: phi.clone(), psi: ScalarField::zeros(&g) };
        let s = reconstruct_full(&r).unwrap();
        let k = ops::vector_gradient(&phi);
        for n in 0..g.len() {
            let m = k.at(n);
            // only the first row is nonzero: det(I+K) = 1 + ∂ₓφ¹
            assert!((s.rho[n] - (1.0 + m[0][0])).abs() < 1e-15);
        }
    }

    #[test]
    fn large_gradient_is_rejected() {
        let g = Grid::new_2d(16, 17, 1.0, 1.0).unwrap();
        let phi = VectorField::from_fn(&g, |x, _, z| [0.5 * (2.0 * PI * x).sin() * (PI * z).sin().powi(2), 0.0, 0.0]);
        let r = ReducedState { u: VectorField::zeros(&g), phi, psi: ScalarField::zeros(&g) };
        assert!(matches!(reconstruct_full(&r), Err(Error::SingularTensor { .. })));
    }

    #[test]
    fn identity_deformation_projects_to_zero() {
        let g = Grid::new(8, 4, 9, 1.0, 1.0, 1.0).unwrap();
        let r = project_reduced(&FullState::equilibrium(&g)).unwrap();
        assert_eq!(norm_linf(&r.phi), 0.0);
    }

    #[test]
    fn round_trip_recovers_deformation() {
        let mut errs = vec![];
        for nz in [17, 33, 65] {
            let g = Grid::new_2d(nz - 1, nz, 1.0, 1.0).unwrap();
            let phi = phi_field(&g, 0.02);
            let r = ReducedState { u: VectorField::zeros(&g), phi: phi.clone(), psi: ScalarField::zeros(&g) };
            let back = project_reduced(&reconstruct_full(&r).unwrap()).unwrap();
            errs.push(norm_linf(&(&back.phi - &phi)));
        }
        for w in errs.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!(order >= 1.9, "round-trip order {order}, errors {errs:?}");
        }
    }

    #[test]
    fn equilibrium_rates_vanish() {
        let g = Grid::new_2d(8, 9, 1.0, 1.0).unwrap();
        let r = ReducedState::equilibrium(&g);
        let rates = rhs_reduced(&r, &PhysParams::default(), BoundarySpec::DIRICHLET).unwrap();
        assert!(norm_linf(&rates.u) <= 1e-13 && norm_linf(&rates.phi) == 0.0);
        let split = linear_split(&r, &PhysParams::default(), BoundarySpec::DIRICHLET).unwrap();
        for f in [&split.l1, &split.l2, &split.r1, &split.r2] {
            assert!(norm_linf(f) <= 1e-13);
        }
    }

    #[test]
    fn at_rest_only_forces_act() {
        let g = Grid::new_2d(16, 17, 1.0, 1.0).unwrap();
        let p = PhysParams::default();
        let r = ReducedState { u: VectorField::zeros(&g), phi: phi_field(&g, 0.02), psi: ScalarField::zeros(&g) };
        let rates = rhs_reduced(&r, &p, BoundarySpec::DIRICHLET).unwrap();
        assert_eq!(norm_linf(&rates.phi), 0.0);
        assert!(norm_linf(&rates.u) > 0.0);
        let full = crate::model_full::rhs_unipolar(&reconstruct_full(&r).unwrap(), &p, BoundarySpec::DIRICHLET).unwrap();
        assert_eq!(norm_linf(&(&full.u - &rates.u)), 0.0);
    }

    #[test]
    fn remainder_identity_and_normalization_gate() {
        let g = Grid::new_2d(16, 17, 1.0, 1.0).unwrap();
        let r = ReducedState { u: u_field(&g, 0.01), phi: phi_field(&g, 0.01), psi: ScalarField::zeros(&g) };
        let split = linear_split(&r, &PhysParams::default(), BoundarySpec::DIRICHLET).unwrap();
        let adv = ops::advect(&r.u, &r.phi);
        assert!(norm_linf(&(&split.r2 + &adv)) <= 1e-16);
        assert!(norm_linf(&(&split.l2 - &split.r2)) <= 1e-16);
        let bad = PhysParams { c2: 2.0, ..Default::default() };
        assert!(matches!(linear_split(&r, &bad, BoundarySpec::DIRICHLET), Err(Error::Normalization(_))));
    }

    #[test]
    fn remainder_is_quadratic() {
        let g = Grid::new_2d(24, 25, 2.0, 1.0).unwrap();
        let ratio = |eps: f64| {
            let r = ReducedState { u: u_field(&g, eps), phi: phi_field(&g, eps), psi: ScalarField::zeros(&g) };
            let s = linear_split(&r, &PhysParams::default(), BoundarySpec::DIRICHLET).unwrap();
            s.remainder_ratio()
        };
        let (a, b) = (ratio(4e-2), ratio(2e-2));
        assert!((a / b - 2.0).abs() < 0.4, "ratio halving {} -> {}", a, b);
    }

    #[test]
    fn material_identity_converges() {
        let mut errs = vec![];
        for nz in [17, 33, 65] {
            let g = Grid::new_2d(nz - 1, nz, 1.0, 1.0).unwrap();
            let (u, phi) = (u_field(&g, 0.05), phi_field(&g, 0.05));
            let pd = phi_rate(&u, &phi);
            errs.push(material_div_identity(&u, &phi, &pd));
        }
        for w in errs.windows(2) {
            assert!((w[0] / w[1]).log2() >= 1.9, "{errs:?}");
        }
        let g = Grid::new_2d(8, 9, 1.0, 1.0).unwrap();
        let z = VectorField::zeros(&g);
        assert_eq!(material_div_identity(&z, &phi_field(&g, 0.05), &z), 0.0);
    }

    #[test]
    fn chain_rule_matches_transport() {
        let mut errs = vec![];
        for nz in [17, 33, 65] {
            let g = Grid::new_2d(nz - 1, nz, 1.0, 1.0).unwrap();
            let r = ReducedState { u: u_field(&g, 0.05), phi: phi_field(&g, 0.05), psi: ScalarField::zeros(&g) };
            let pd = phi_rate(&r.u, &r.phi);
            errs.push(chain_rule_mismatch(&r, &pd).unwrap());
        }
        for w in errs.windows(2) {
            assert!((w[0] / w[1]).log2() >= 1.9, "{errs:?}");
        }
    }
}
