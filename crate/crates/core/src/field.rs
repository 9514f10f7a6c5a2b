//! Scalar, vector and tensor fields on a [`Grid`], with pointwise algebra,
//! quadrature and discrete norms.
//!
//! Each component is stored as its own contiguous array (x fastest).
//! Tensor component `(i, j)` lives at index `3 i + j`; for a deformation
//! gradient it is `∂x_i/∂X_j`.

use std::ops::{Add, Index, IndexMut, Mul, Sub};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::real::Real;

pub type Mat3<T> = [[T; 3]; 3];

/// Pointwise `|det| < DET_FLOOR` is treated as a singular tensor.
pub const DET_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField<T> {
    pub grid: Grid<T>,
    pub data: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VectorField<T> {
    pub c: [ScalarField<T>; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorField<T> {
    pub c: [ScalarField<T>; 9],
}

/// Anything made of scalar component fields.
pub trait Components<T: Real> {
    fn grid(&self) -> &Grid<T>;
    fn components(&self) -> Vec<&ScalarField<T>>;
    fn components_mut(&mut self) -> Vec<&mut ScalarField<T>>;
}

impl<T: Real> ScalarField<T> {
    pub fn zeros(grid: &Grid<T>) -> Self {
        Self::constant(grid, T::zero())
    }

    pub fn constant(grid: &Grid<T>, value: T) -> Self {
        ScalarField { grid: *grid, data: vec![value; grid.len()] }
    }

    pub fn from_vec(grid: &Grid<T>, data: Vec<T>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a grid of {} nodes",
                data.len(),
                grid.len()
            )));
        }
        Ok(ScalarField { grid: *grid, data })
    }

    /// Samples `f(x, y, z)` at every node.
    pub fn from_fn(grid: &Grid<T>, f: impl Fn(T, T, T) -> T) -> Self {
        let data = (0..grid.len())
            .map(|n| {
                let [x, y, z] = grid.coords(n);
                f(x, y, z)
            })
            .collect();
        ScalarField { grid: *grid, data }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize, k: usize) -> T {
        self.data[self.grid.idx(i, j, k)]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        ScalarField { grid: self.grid, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        debug_assert!(self.grid.same_shape(&other.grid));
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        ScalarField { grid: self.grid, data }
    }

    /// `self += a * other`
    pub fn axpy(&mut self, a: T, other: &Self) {
        debug_assert!(self.grid.same_shape(&other.grid));
        for (s, &o) in self.data.iter_mut().zip(&other.data) {
            *s += a * o;
        }
    }

    pub fn scale(&mut self, a: T) {
        for v in &mut self.data {
            *v *= a;
        }
    }

    pub fn scaled(&self, a: T) -> Self {
        self.map(|v| a * v)
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    /// Sets every node of the two wall layers to `v`.
    pub fn set_walls(&mut self, v: T) {
        let p = self.grid.plane_len();
        let n = self.data.len();
        self.data[..p].iter_mut().for_each(|x| *x = v);
        self.data[n - p..].iter_mut().for_each(|x| *x = v);
    }

    /// Trapezoidal-in-z, uniform-in-x,y integral.
    pub fn integrate(&self) -> T {
        integrate_with(&self.grid, &self.data, |k| self.grid.trapezoid_weight_z(k))
    }

    /// Integral with the wall-normal weights that make discrete
    /// divergences of no-flux fields sum to zero.
    pub fn integrate_conservative(&self) -> T {
        integrate_with(&self.grid, &self.data, |k| self.grid.conservative_weight_z(k))
    }

    pub fn mean(&self) -> T {
        self.integrate() / self.grid.volume()
    }

    pub fn mean_conservative(&self) -> T {
        self.integrate_conservative() / self.grid.volume()
    }

    pub fn min(&self) -> T {
        self.data.iter().copied().fold(T::infinity(), T::min)
    }

    pub fn max(&self) -> T {
        self.data.iter().copied().fold(T::neg_infinity(), T::max)
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> ScalarField<U> {
        ScalarField {
            grid: self.grid.cast(),
            data: self.data.iter().map(|v| U::c(v.to_f64_lossy())).collect(),
        }
    }
}

fn integrate_with<T: Real>(grid: &Grid<T>, data: &[T], wz: impl Fn(usize) -> T) -> T {
    let p = grid.plane_len();
    let mut total = T::zero();
    for (k, plane) in data.chunks_exact(p).enumerate() {
        let s: T = plane.iter().copied().sum();
        total += wz(k) * s;
    }
    total * grid.tangential_cell()
}

impl<T: Real> Index<usize> for ScalarField<T> {
    type Output = T;
    #[inline]
    fn index(&self, n: usize) -> &T {
        &self.data[n]
    }
}

impl<T: Real> IndexMut<usize> for ScalarField<T> {
    #[inline]
    fn index_mut(&mut self, n: usize) -> &mut T {
        &mut self.data[n]
    }
}

impl<T: Real> Add for &ScalarField<T> {
    type Output = ScalarField<T>;
    fn add(self, rhs: Self) -> ScalarField<T> {
        self.zip_map(rhs, |a, b| a + b)
    }
}

impl<T: Real> Sub for &ScalarField<T> {
    type Output = ScalarField<T>;
    fn sub(self, rhs: Self) -> ScalarField<T> {
        self.zip_map(rhs, |a, b| a - b)
    }
}

/// Pointwise product.
impl<T: Real> Mul for &ScalarField<T> {
    type Output = ScalarField<T>;
    fn mul(self, rhs: Self) -> ScalarField<T> {
        self.zip_map(rhs, |a, b| a * b)
    }
}

impl<T: Real> VectorField<T> {
    pub fn zeros(grid: &Grid<T>) -> Self {
        VectorField { c: std::array::from_fn(|_| ScalarField::zeros(grid)) }
    }

    pub fn from_components(c: [ScalarField<T>; 3]) -> Self {
        VectorField { c }
    }

    pub fn from_fn(grid: &Grid<T>, f: impl Fn(T, T, T) -> [T; 3]) -> Self {
        let mut v = Self::zeros(grid);
        for n in 0..grid.len() {
            let [x, y, z] = grid.coords(n);
            let val = f(x, y, z);
            for i in 0..3 {
                v.c[i].data[n] = val[i];
            }
        }
        v
    }

    #[inline]
    pub fn at(&self, n: usize) -> [T; 3] {
        [self.c[0][n], self.c[1][n], self.c[2][n]]
    }

    pub fn axpy(&mut self, a: T, other: &Self) {
        for i in 0..3 {
            self.c[i].axpy(a, &other.c[i]);
        }
    }

    pub fn scaled(&self, a: T) -> Self {
        VectorField { c: std::array::from_fn(|i| self.c[i].scaled(a)) }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T + Copy) -> Self {
        VectorField { c: std::array::from_fn(|i| self.c[i].zip_map(&other.c[i], f)) }
    }

    /// Multiplies every component by the scalar field `s` pointwise.
    pub fn mul_scalar_field(&self, s: &ScalarField<T>) -> Self {
        VectorField { c: std::array::from_fn(|i| &self.c[i] * s) }
    }

    /// Pointwise dot product.
    pub fn dot(&self, other: &Self) -> ScalarField<T> {
        let mut out = &self.c[0] * &other.c[0];
        for i in 1..3 {
            for (o, (&a, &b)) in out.data.iter_mut().zip(self.c[i].data.iter().zip(&other.c[i].data)) {
                *o += a * b;
            }
        }
        out
    }

    pub fn norm_sq_pointwise(&self) -> ScalarField<T> {
        self.dot(self)
    }

    pub fn set_walls(&mut self, v: T) {
        for c in &mut self.c {
            c.set_walls(v);
        }
    }
}

impl<T: Real> Add for &VectorField<T> {
    type Output = VectorField<T>;
    fn add(self, rhs: Self) -> VectorField<T> {
        self.zip_map(rhs, |a, b| a + b)
    }
}

impl<T: Real> Sub for &VectorField<T> {
    type Output = VectorField<T>;
    fn sub(self, rhs: Self) -> VectorField<T> {
        self.zip_map(rhs, |a, b| a - b)
    }
}

impl<T: Real> Index<usize> for VectorField<T> {
    type Output = ScalarField<T>;
    fn index(&self, i: usize) -> &ScalarField<T> {
        &self.c[i]
    }
}

impl<T: Real> IndexMut<usize> for VectorField<T> {
    fn index_mut(&mut self, i: usize) -> &mut ScalarField<T> {
        &mut self.c[i]
    }
}

impl<T: Real> TensorField<T> {
    pub fn zeros(grid: &Grid<T>) -> Self {
        TensorField { c: std::array::from_fn(|_| ScalarField::zeros(grid)) }
    }

    pub fn identity(grid: &Grid<T>) -> Self {
        Self::constant(grid, identity())
    }

    pub fn constant(grid: &Grid<T>, m: Mat3<T>) -> Self {
        TensorField { c: std::array::from_fn(|a| ScalarField::constant(grid, m[a / 3][a % 3])) }
    }

    pub fn from_fn(grid: &Grid<T>, f: impl Fn(T, T, T) -> Mat3<T>) -> Self {
        let mut t = Self::zeros(grid);
        for n in 0..grid.len() {
            let [x, y, z] = grid.coords(n);
            t.set_at(n, &f(x, y, z));
        }
        t
    }

    /// Builds a tensor from its rows, `T(i, j) = rows[i][j]`.
    pub fn from_rows(rows: [VectorField<T>; 3]) -> Self {
        let [r0, r1, r2] = rows;
        let [a, b, c] = r0.c;
        let [d, e, f] = r1.c;
        let [g, h, i] = r2.c;
        TensorField { c: [a, b, c, d, e, f, g, h, i] }
    }

    pub fn grid(&self) -> &Grid<T> {
        &self.c[0].grid
    }

    #[inline]
    pub fn at(&self, n: usize) -> Mat3<T> {
        std::array::from_fn(|i| std::array::from_fn(|j| self.c[3 * i + j][n]))
    }

    #[inline]
    pub fn set_at(&mut self, n: usize, m: &Mat3<T>) {
        for i in 0..3 {
            for j in 0..3 {
                self.c[3 * i + j][n] = m[i][j];
            }
        }
    }

    pub fn row(&self, i: usize) -> VectorField<T> {
        VectorField { c: std::array::from_fn(|j| self.c[3 * i + j].clone()) }
    }

    pub fn axpy(&mut self, a: T, other: &Self) {
        for i in 0..9 {
            self.c[i].axpy(a, &other.c[i]);
        }
    }

    pub fn scaled(&self, a: T) -> Self {
        TensorField { c: std::array::from_fn(|i| self.c[i].scaled(a)) }
    }

    pub fn mul_scalar_field(&self, s: &ScalarField<T>) -> Self {
        TensorField { c: std::array::from_fn(|i| &self.c[i] * s) }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T + Copy) -> Self {
        TensorField { c: std::array::from_fn(|i| self.c[i].zip_map(&other.c[i], f)) }
    }

    pub fn map_pointwise(&self, f: impl Fn(&Mat3<T>) -> Mat3<T>) -> Self {
        let grid = *self.grid();
        let mut out = Self::zeros(&grid);
        map_nodes(self.slices(), out.c.each_mut().map(|c| &mut c.data[..]), |x: [T; 9]| {
            flatten(&f(&unflatten(&x)))
        });
        out
    }

    fn slices(&self) -> [&[T]; 9] {
        self.c.each_ref().map(|c| &c.data[..])
    }

    pub fn transpose(&self) -> Self {
        TensorField { c: std::array::from_fn(|a| self.c[3 * (a % 3) + a / 3].clone()) }
    }

    /// Pointwise matrix product `self · rhs`.
    pub fn matmul(&self, rhs: &Self) -> Self {
        let grid = *self.grid();
        let mut out = Self::zeros(&grid);
        let (a, b) = (self.slices(), rhs.slices());
        let ins: [&[T]; 18] = std::array::from_fn(|q| if q < 9 { a[q] } else { b[q - 9] });
        map_nodes(ins, out.c.each_mut().map(|c| &mut c.data[..]), |x: [T; 18]| {
            std::array::from_fn(|q| {
                let (i, j) = (q / 3, q % 3);
                x[3 * i] * x[9 + j] + x[3 * i + 1] * x[12 + j] + x[3 * i + 2] * x[15 + j]
            })
        });
        out
    }

    /// Pointwise `self · selfᵀ`.
    pub fn mul_transpose_self(&self) -> Self {
        self.map_pointwise(|m| mat_mul(m, &transpose(m)))
    }

    /// Pointwise matrix-vector product.
    pub fn mat_vec(&self, v: &VectorField<T>) -> VectorField<T> {
        let grid = *self.grid();
        let mut out = VectorField::zeros(&grid);
        let m = self.slices();
        let ins: [&[T]; 12] = std::array::from_fn(|q| if q < 9 { m[q] } else { &v.c[q - 9].data[..] });
        map_nodes(ins, out.c.each_mut().map(|c| &mut c.data[..]), |x: [T; 12]| {
            std::array::from_fn(|i| x[3 * i] * x[9] + x[3 * i + 1] * x[10] + x[3 * i + 2] * x[11])
        });
        out
    }

    /// Pointwise Frobenius inner product `A : B`.
    pub fn frobenius_dot(&self, other: &Self) -> ScalarField<T> {
        let mut out = &self.c[0] * &other.c[0];
        for a in 1..9 {
            for (o, (&x, &y)) in out.data.iter_mut().zip(self.c[a].data.iter().zip(&other.c[a].data)) {
                *o += x * y;
            }
        }
        out
    }

    pub fn trace(&self) -> ScalarField<T> {
        &(&self.c[0] + &self.c[4]) + &self.c[8]
    }

    pub fn det3(&self) -> ScalarField<T> {
        let grid = *self.grid();
        let mut out = ScalarField::zeros(&grid);
        map_nodes(self.slices(), [&mut out.data[..]], |x: [T; 9]| [det(&unflatten(&x))]);
        out
    }

    /// Pointwise inverse via cofactors.
    pub fn inv3(&self) -> Result<Self> {
        let grid = *self.grid();
        let mut out = Self::zeros(&grid);
        let src = self.slices();
        let dst = out.c.each_mut().map(|c| &mut c.data[..]);
        for n in 0..grid.len() {
            let m = gather(&src, n);
            let inv = inverse(&m).ok_or_else(|| Error::SingularTensor {
                node: n,
                det: det(&m).to_f64_lossy(),
            })?;
            for a in 0..9 {
                dst[a][n] = inv[a / 3][a % 3];
            }
        }
        Ok(out)
    }

    pub fn set_walls(&mut self, v: T) {
        for c in &mut self.c {
            c.set_walls(v);
        }
    }
}

impl<T: Real> Add for &TensorField<T> {
    type Output = TensorField<T>;
    fn add(self, rhs: Self) -> TensorField<T> {
        self.zip_map(rhs, |a, b| a + b)
    }
}

impl<T: Real> Sub for &TensorField<T> {
    type Output = TensorField<T>;
    fn sub(self, rhs: Self) -> TensorField<T> {
        self.zip_map(rhs, |a, b| a - b)
    }
}

impl<T: Real> Index<(usize, usize)> for TensorField<T> {
    type Output = ScalarField<T>;
    fn index(&self, (i, j): (usize, usize)) -> &ScalarField<T> {
        &self.c[3 * i + j]
    }
}

impl<T: Real> IndexMut<(usize, usize)> for TensorField<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut ScalarField<T> {
        &mut self.c[3 * i + j]
    }
}

impl<T: Real> Components<T> for ScalarField<T> {
    fn grid(&self) -> &Grid<T> {
        &self.grid
    }
    fn components(&self) -> Vec<&ScalarField<T>> {
        vec![self]
    }
    fn components_mut(&mut self) -> Vec<&mut ScalarField<T>> {
        vec![self]
    }
}

impl<T: Real> Components<T> for VectorField<T> {
    fn grid(&self) -> &Grid<T> {
        &self.c[0].grid
    }
    fn components(&self) -> Vec<&ScalarField<T>> {
        self.c.iter().collect()
    }
    fn components_mut(&mut self) -> Vec<&mut ScalarField<T>> {
        self.c.iter_mut().collect()
    }
}

impl<T: Real> Components<T> for TensorField<T> {
    fn grid(&self) -> &Grid<T> {
        &self.c[0].grid
    }
    fn components(&self) -> Vec<&ScalarField<T>> {
        self.c.iter().collect()
    }
    fn components_mut(&mut self) -> Vec<&mut ScalarField<T>> {
        self.c.iter_mut().collect()
    }
}

/// Volume-weighted root-sum-square over all components.
pub fn norm_l2<T: Real, F: Components<T> + ?Sized>(f: &F) -> T {
    norm_l2_sq(f).sqrt()
}

pub fn norm_l2_sq<T: Real, F: Components<T> + ?Sized>(f: &F) -> T {
    f.components().into_iter().map(|c| c.map(|v| v * v).integrate()).sum()
}

/// Largest absolute nodal value over all components.
pub fn norm_linf<T: Real, F: Components<T> + ?Sized>(f: &F) -> T {
    f.components().into_iter().fold(T::zero(), |m, c| m.max(c.max_abs()))
}

pub fn all_finite<T: Real, F: Components<T> + ?Sized>(f: &F) -> bool {
    f.components().into_iter().all(|c| c.is_finite())
}

// ---- 3x3 pointwise algebra ----

#[inline(always)]
fn gather<T: Copy>(src: &[&[T]; 9], n: usize) -> Mat3<T> {
    [
        [src[0][n], src[1][n], src[2][n]],
        [src[3][n], src[4][n], src[5][n]],
        [src[6][n], src[7][n], src[8][n]],
    ]
}

#[inline(always)]
fn unflatten<T: Copy>(x: &[T; 9]) -> Mat3<T> {
    [[x[0], x[1], x[2]], [x[3], x[4], x[5]], [x[6], x[7], x[8]]]
}

#[inline(always)]
fn flatten<T: Copy>(m: &Mat3<T>) -> [T; 9] {
    [m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2]]
}

/// Nodes per block in [`map_nodes`].
const BLOCK: usize = 64;

/// Applies `f` node by node to `I` input arrays, writing `O` output arrays.
///
/// Works on fixed-size blocks copied to the stack so the per-node kernel
/// sees constant bounds.
pub fn map_nodes<T: Real, const I: usize, const O: usize>(
    ins: [&[T]; I],
    mut outs: [&mut [T]; O],
    f: impl Fn([T; I]) -> [T; O],
) {
    let len = outs.first().map_or(0, |o| o.len());
    let mut xb = [[T::zero(); BLOCK]; I];
    let mut yb = [[T::zero(); BLOCK]; O];
    let mut start = 0;
    while start < len {
        let m = BLOCK.min(len - start);
        for (b, src) in xb.iter_mut().zip(&ins) {
            b[..m].copy_from_slice(&src[start..start + m]);
        }
        for n in 0..BLOCK {
            let mut x = [T::zero(); I];
            for q in 0..I {
                x[q] = xb[q][n];
            }
            let y = f(x);
            for q in 0..O {
                yb[q][n] = y[q];
            }
        }
        for (b, dst) in yb.iter().zip(outs.iter_mut()) {
            dst[start..start + m].copy_from_slice(&b[..m]);
        }
        start += m;
    }
}

pub fn identity<T: Real>() -> Mat3<T> {
    let mut m = [[T::zero(); 3]; 3];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = T::one();
    }
    m
}

#[inline]
pub fn det<T: Real>(m: &Mat3<T>) -> T {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Cofactor inverse; `None` when `|det| < DET_FLOOR`.
#[inline]
pub fn inverse<T: Real>(m: &Mat3<T>) -> Option<Mat3<T>> {
    let d = det(m);
    if !(d.abs() >= T::c(DET_FLOOR)) {
        return None;
    }
    let r = T::one() / d;
    Some([
        [
            (m[1][1] * m[2][2] - m[1][2] * m[2][1]) * r,
            (m[0][2] * m[2][1] - m[0][1] * m[2][2]) * r,
            (m[0][1] * m[1][2] - m[0][2] * m[1][1]) * r,
        ],
        [
            (m[1][2] * m[2][0] - m[1][0] * m[2][2]) * r,
            (m[0][0] * m[2][2] - m[0][2] * m[2][0]) * r,
            (m[0][2] * m[1][0] - m[0][0] * m[1][2]) * r,
        ],
        [
            (m[1][0] * m[2][1] - m[1][1] * m[2][0]) * r,
            (m[0][1] * m[2][0] - m[0][0] * m[2][1]) * r,
            (m[0][0] * m[1][1] - m[0][1] * m[1][0]) * r,
        ],
    ])
}

#[inline]
pub fn mat_mul<T: Real>(a: &Mat3<T>, b: &Mat3<T>) -> Mat3<T> {
    std::array::from_fn(|i| std::array::from_fn(|j| a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j]))
}

#[inline]
pub fn transpose<T: Real>(a: &Mat3<T>) -> Mat3<T> {
    std::array::from_fn(|i| std::array::from_fn(|j| a[j][i]))
}
