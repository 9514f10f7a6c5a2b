//! Second-order finite-difference operators.
//!
//! Periodic directions use central differences. The wall-normal direction
//! uses central differences in the interior and second-order one-sided
//! stencils on the two wall layers. A direction with a single node has
//! identically zero derivatives.

use rayon::prelude::*;

use crate::field::{Components, ScalarField, TensorField, VectorField};
use crate::grid::Grid;
use crate::real::Real;

/// Grids at or above this many nodes evaluate planes in parallel.
const PAR_THRESHOLD: usize = 1 << 15;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn index(self) -> usize {
        self as usize
    }
}

fn for_each_plane<T: Real>(grid: &Grid<T>, out: &mut [T], f: impl Fn(usize, &mut [T]) + Sync + Send) {
    let p = grid.plane_len();
    if grid.len() >= PAR_THRESHOLD && rayon::current_num_threads() > 1 {
        out.par_chunks_mut(p).enumerate().for_each(|(k, plane)| f(k, plane));
    } else {
        out.chunks_mut(p).enumerate().for_each(|(k, plane)| f(k, plane));
    }
}

/// Runs `f(k, planes, scratch)` over every z-plane, where `planes` are the
/// matching planes of the `N` output fields and `scratch` holds
/// `scratch_len` values private to the calling thread.
pub fn for_each_plane_of<T: Real, const N: usize>(
    grid: &Grid<T>,
    outs: [&mut ScalarField<T>; N],
    scratch_len: usize,
    f: impl Fn(usize, &mut [&mut [T]; N], &mut [T]) + Sync + Send,
) {
    let p = grid.plane_len();
    let mut iters = outs.map(|o| o.data.chunks_mut(p));
    let planes: Vec<[&mut [T]; N]> =
        (0..grid.nz).map(|_| iters.each_mut().map(|it| it.next().expect("plane"))).collect();
    if grid.len() >= PAR_THRESHOLD && rayon::current_num_threads() > 1 {
        planes.into_par_iter().enumerate().for_each_init(
            || vec![T::zero(); scratch_len],
            |scratch, (k, mut pl)| f(k, &mut pl, scratch),
        );
    } else {
        let mut scratch = vec![T::zero(); scratch_len];
        for (k, mut pl) in planes.into_iter().enumerate() {
            f(k, &mut pl, &mut scratch);
        }
    }
}

/// Per-node multiplier passed to stencil visitors. Segments are sliced to
/// the exact length of the output range so indexing stays check-free.
trait Weights<T>: Copy {
    fn seg(self, start: usize, len: usize) -> Self;
    fn at(self, i: usize) -> T;
}

#[derive(Clone, Copy)]
struct Unit;

impl<T: Real> Weights<T> for Unit {
    #[inline(always)]
    fn seg(self, _: usize, _: usize) -> Self {
        Unit
    }
    #[inline(always)]
    fn at(self, _: usize) -> T {
        T::one()
    }
}

impl<T: Real> Weights<T> for &[T] {
    #[inline(always)]
    fn seg(self, start: usize, len: usize) -> Self {
        &self[start..start + len]
    }
    #[inline(always)]
    fn at(self, i: usize) -> T {
        self[i]
    }
}

/// Periodic three-point stencil along each contiguous row of a plane.
#[inline(always)]
fn periodic_rows<T: Real, W: Weights<T>>(
    s: &[T],
    o: &mut [T],
    w: W,
    nx: usize,
    st: impl Fn(T, T, T) -> T,
    op: &impl Fn(&mut T, T, T),
) {
    for (r, (s, o)) in s.chunks_exact(nx).zip(o.chunks_exact_mut(nx)).enumerate() {
        let w = w.seg(r * nx, nx);
        if nx == 1 {
            op(&mut o[0], T::zero(), w.at(0));
            continue;
        }
        op(&mut o[0], st(s[nx - 1], s[0], s[1]), w.at(0));
        for i in 1..nx - 1 {
            op(&mut o[i], st(s[i - 1], s[i], s[i + 1]), w.at(i));
        }
        op(&mut o[nx - 1], st(s[nx - 2], s[nx - 1], s[0]), w.at(nx - 1));
    }
}

/// Plane `k` of a field.
#[inline(always)]
pub fn plane_of<T: Real>(f: &ScalarField<T>, k: usize) -> &[T] {
    let p = f.grid.plane_len();
    &f.data[k * p..(k + 1) * p]
}

/// `o[m] ⊕= d` for `d = r (a[m] − b[m])` over a contiguous range.
#[inline(always)]
fn central<T: Real, W: Weights<T>>(o: &mut [T], a: &[T], b: &[T], r: T, w: W, m0: usize, op: &impl Fn(&mut T, T, T)) {
    let n = o.len();
    let (a, b, w) = (&a[..n], &b[..n], w.seg(m0, n));
    for i in 0..n {
        op(&mut o[i], r * (a[i] - b[i]), w.at(i));
    }
}

/// `o[m] ⊕= d` for `d = r (a[m] − 2 c[m] + b[m])` over a contiguous range.
#[inline(always)]
fn central2<T: Real, W: Weights<T>>(
    o: &mut [T],
    a: &[T],
    c: &[T],
    b: &[T],
    r: T,
    w: W,
    m0: usize,
    op: &impl Fn(&mut T, T, T),
) {
    let n = o.len();
    let (a, c, b, w) = (&a[..n], &c[..n], &b[..n], w.seg(m0, n));
    let two = T::c(2.0);
    for i in 0..n {
        op(&mut o[i], r * (a[i] - two * c[i] + b[i]), w.at(i));
    }
}

#[inline(always)]
fn zero_rows<T: Real, W: Weights<T>>(o: &mut [T], w: W, op: &impl Fn(&mut T, T, T)) {
    let w = w.seg(0, o.len());
    o.iter_mut().enumerate().for_each(|(m, v)| op(v, T::zero(), w.at(m)));
}

#[inline(always)]
fn diff1_with<T: Real, W: Weights<T>>(f: &ScalarField<T>, axis: Axis, k: usize, o: &mut [T], w: W, op: impl Fn(&mut T, T, T)) {
    let g = &f.grid;
    let (nx, ny, nz, p) = (g.nx, g.ny, g.nz, g.plane_len());
    let half = T::c(0.5);
    match axis {
        Axis::X => {
            let r = half / g.hx;
            periodic_rows(plane_of(f, k), o, w, nx, |a, _, c| r * (c - a), &op);
        }
        Axis::Y => {
            if ny <= 2 {
                return zero_rows(o, w, &op);
            }
            let s = plane_of(f, k);
            let r = half / g.hy;
            let last = (ny - 1) * nx;
            central(&mut o[..nx], &s[nx..], &s[last..], r, w, 0, &op);
            central(&mut o[nx..last], &s[2 * nx..], s, r, w, nx, &op);
            central(&mut o[last..], &s[..nx], &s[last - nx..], r, w, last, &op);
        }
        Axis::Z => {
            let r = half / g.hz;
            if k == 0 || k + 1 == nz {
                // one-sided stencils written as differences so constants map to exact zeros
                let four = T::c(4.0);
                let (sg, a, b) = if k == 0 {
                    (r, plane_of(f, 1), plane_of(f, 2))
                } else {
                    (-r, plane_of(f, k - 1), plane_of(f, k - 2))
                };
                let c = plane_of(f, k);
                let (a, b, o, w) = (&a[..p], &b[..p], &mut o[..p], w.seg(0, p));
                for m in 0..p {
                    let f0 = c[m];
                    op(&mut o[m], sg * (four * (a[m] - f0) - (b[m] - f0)), w.at(m));
                }
            } else {
                central(o, plane_of(f, k + 1), plane_of(f, k - 1), r, w, 0, &op);
            }
        }
    }
}

#[inline(always)]
fn diff2_with<T: Real, W: Weights<T>>(f: &ScalarField<T>, axis: Axis, k: usize, o: &mut [T], w: W, op: impl Fn(&mut T, T, T)) {
    let g = &f.grid;
    let (nx, ny, nz, p) = (g.nx, g.ny, g.nz, g.plane_len());
    let two = T::c(2.0);
    match axis {
        Axis::X => {
            let r = T::one() / (g.hx * g.hx);
            periodic_rows(plane_of(f, k), o, w, nx, |a, b, c| r * (c - two * b + a), &op);
        }
        Axis::Y => {
            if ny == 1 {
                return zero_rows(o, w, &op);
            }
            let s = plane_of(f, k);
            let r = T::one() / (g.hy * g.hy);
            let last = (ny - 1) * nx;
            if ny == 2 {
                central2(&mut o[..nx], &s[nx..], &s[..nx], &s[nx..], r, w, 0, &op);
                central2(&mut o[nx..], &s[..nx], &s[nx..], &s[..nx], r, w, nx, &op);
                return;
            }
            central2(&mut o[..nx], &s[nx..], &s[..nx], &s[last..], r, w, 0, &op);
            central2(&mut o[nx..last], &s[2 * nx..], &s[nx..], s, r, w, nx, &op);
            central2(&mut o[last..], &s[..nx], &s[last..], &s[last - nx..], r, w, last, &op);
        }
        Axis::Z => {
            let r = T::one() / (g.hz * g.hz);
            if k == 0 || k + 1 == nz {
                let (four, five) = (T::c(4.0), T::c(5.0));
                let (a, b, c) = if k == 0 {
                    (plane_of(f, 1), plane_of(f, 2), plane_of(f, 3))
                } else {
                    (plane_of(f, k - 1), plane_of(f, k - 2), plane_of(f, k - 3))
                };
                let s0 = plane_of(f, k);
                let (a, b, c, o, w) = (&a[..p], &b[..p], &c[..p], &mut o[..p], w.seg(0, p));
                for m in 0..p {
                    let f0 = s0[m];
                    op(&mut o[m], r * (-five * (a[m] - f0) + four * (b[m] - f0) - (c[m] - f0)), w.at(m));
                }
            } else {
                central2(o, plane_of(f, k + 1), plane_of(f, k), plane_of(f, k - 1), r, w, 0, &op);
            }
        }
    }
}

/// Visits `∂f/∂axis` on plane `k` as `op(&mut o[m], d)`.
#[inline(always)]
pub fn plane_diff1<T: Real>(f: &ScalarField<T>, axis: Axis, k: usize, o: &mut [T], op: impl Fn(&mut T, T)) {
    diff1_with(f, axis, k, o, Unit, |v, d, _| op(v, d));
}

/// Visits `∂²f/∂axis²` on plane `k` as `op(&mut o[m], d)`.
#[inline(always)]
pub fn plane_diff2<T: Real>(f: &ScalarField<T>, axis: Axis, k: usize, o: &mut [T], op: impl Fn(&mut T, T)) {
    diff2_with(f, axis, k, o, Unit, |v, d, _| op(v, d));
}

/// `o += a ∂f/∂axis` on plane `k`.
#[inline(always)]
pub fn plane_diff1_acc<T: Real>(f: &ScalarField<T>, axis: Axis, k: usize, a: T, o: &mut [T]) {
    plane_diff1(f, axis, k, o, |v, d| *v += a * d);
}

/// `o += a w ∂f/∂axis` on plane `k` with a plane of weights `w`.
#[inline(always)]
pub fn plane_diff1_acc_weighted<T: Real>(f: &ScalarField<T>, axis: Axis, k: usize, a: T, w: &[T], o: &mut [T]) {
    diff1_with(f, axis, k, o, w, |v, d, wm| *v += a * wm * d);
}

/// `o += a ∂²f/∂axis²` on plane `k`.
#[inline(always)]
pub fn plane_diff2_acc<T: Real>(f: &ScalarField<T>, axis: Axis, k: usize, a: T, o: &mut [T]) {
    plane_diff2(f, axis, k, o, |v, d| *v += a * d);
}

/// Whether derivatives along `axis` can be nonzero on `grid`.
#[inline]
pub fn is_active<T>(grid: &Grid<T>, axis: Axis) -> bool {
    match axis {
        Axis::X => grid.nx > 1,
        Axis::Y => grid.ny > 1,
        Axis::Z => true,
    }
}

/// Visits `∂f/∂axis` at every node as `op(&mut out[n], d)`.
pub fn apply_diff1<T: Real>(f: &ScalarField<T>, axis: Axis, out: &mut [T], op: impl Fn(&mut T, T) + Sync + Send) {
    for_each_plane(&f.grid, out, |k, o| plane_diff1(f, axis, k, o, &op));
}

/// Visits `∂²f/∂axis²` at every node as `op(&mut out[n], d)`.
pub fn apply_diff2<T: Real>(f: &ScalarField<T>, axis: Axis, out: &mut [T], op: impl Fn(&mut T, T) + Sync + Send) {
    for_each_plane(&f.grid, out, |k, o| plane_diff2(f, axis, k, o, &op));
}

/// First derivative along `axis`.
pub fn diff1<T: Real>(f: &ScalarField<T>, axis: Axis) -> ScalarField<T> {
    let mut out = ScalarField::zeros(&f.grid);
    apply_diff1(f, axis, &mut out.data, |o, d| *o = d);
    out
}

/// `out += a ∂f/∂axis`
pub fn diff1_acc<T: Real>(f: &ScalarField<T>, axis: Axis, a: T, out: &mut ScalarField<T>) {
    apply_diff1(f, axis, &mut out.data, |o, d| *o += a * d);
}

/// `out += a w ∂f/∂axis` with a pointwise weight `w`.
pub fn diff1_acc_weighted<T: Real>(f: &ScalarField<T>, axis: Axis, a: T, w: &ScalarField<T>, out: &mut ScalarField<T>) {
    for_each_plane(&f.grid, &mut out.data, |k, o| plane_diff1_acc_weighted(f, axis, k, a, plane_of(w, k), o));
}

/// Second derivative along `axis` (compact three-point stencil, four-point
/// one-sided at the walls).
pub fn diff2<T: Real>(f: &ScalarField<T>, axis: Axis) -> ScalarField<T> {
    let mut out = ScalarField::zeros(&f.grid);
    apply_diff2(f, axis, &mut out.data, |o, d| *o = d);
    out
}

/// `out += a ∂²f/∂axis²`
pub fn diff2_acc<T: Real>(f: &ScalarField<T>, axis: Axis, a: T, out: &mut ScalarField<T>) {
    apply_diff2(f, axis, &mut out.data, |o, d| *o += a * d);
}

pub fn gradient<T: Real>(f: &ScalarField<T>) -> VectorField<T> {
    VectorField { c: Axis::ALL.map(|a| diff1(f, a)) }
}

/// `Σ_i ∂_i v^i`
pub fn divergence<T: Real>(v: &VectorField<T>) -> ScalarField<T> {
    let mut out = diff1(&v.c[0], Axis::X);
    diff1_acc(&v.c[1], Axis::Y, T::one(), &mut out);
    diff1_acc(&v.c[2], Axis::Z, T::one(), &mut out);
    out
}

/// `(∇v)^{ij} = ∂v^i/∂x_j`
pub fn vector_gradient<T: Real>(v: &VectorField<T>) -> TensorField<T> {
    TensorField { c: std::array::from_fn(|a| diff1(&v.c[a / 3], Axis::ALL[a % 3])) }
}

/// Divergence over the second index, `(div T)^i = Σ_j ∂_j T^{ij}`.
pub fn tensor_divergence<T: Real>(t: &TensorField<T>) -> VectorField<T> {
    VectorField {
        c: std::array::from_fn(|i| {
            let mut out = diff1(&t.c[3 * i], Axis::X);
            diff1_acc(&t.c[3 * i + 1], Axis::Y, T::one(), &mut out);
            diff1_acc(&t.c[3 * i + 2], Axis::Z, T::one(), &mut out);
            out
        }),
    }
}

pub fn laplacian_scalar<T: Real>(f: &ScalarField<T>) -> ScalarField<T> {
    let mut out = diff2(f, Axis::X);
    diff2_acc(f, Axis::Y, T::one(), &mut out);
    diff2_acc(f, Axis::Z, T::one(), &mut out);
    out
}

pub fn laplacian_vector<T: Real>(v: &VectorField<T>) -> VectorField<T> {
    VectorField { c: std::array::from_fn(|i| laplacian_scalar(&v.c[i])) }
}

/// `∇ div v`, with compact second differences on the diagonal terms and
/// composed first differences for the mixed ones.
pub fn grad_div<T: Real>(v: &VectorField<T>) -> VectorField<T> {
    let mut out = VectorField::zeros(&v.c[0].grid);
    grad_div_acc(v, T::one(), &mut out);
    out
}

/// `out += a ∇ div v`
pub fn grad_div_acc<T: Real>(v: &VectorField<T>, a: T, out: &mut VectorField<T>) {
    let partial: [ScalarField<T>; 3] = std::array::from_fn(|j| diff1(&v.c[j], Axis::ALL[j]));
    for (i, ai) in Axis::ALL.into_iter().enumerate() {
        diff2_acc(&v.c[i], ai, a, &mut out.c[i]);
        for (j, pj) in partial.iter().enumerate() {
            if j != i {
                diff1_acc(pj, ai, a, &mut out.c[i]);
            }
        }
    }
}

/// Material transport `u·∇(·)` of a scalar, vector or tensor field.
pub trait Advect<T: Real>: Sized {
    fn advect_by(&self, u: &VectorField<T>) -> Self;
}

/// `out += a u·∇f`
pub fn advect_acc<T: Real>(u: &VectorField<T>, f: &ScalarField<T>, a: T, out: &mut ScalarField<T>) {
    for (k, axis) in Axis::ALL.into_iter().enumerate() {
        if (axis == Axis::X && f.grid.nx == 1) || (axis == Axis::Y && f.grid.ny == 1) {
            continue;
        }
        diff1_acc_weighted(f, axis, a, &u.c[k], out);
    }
}

fn advect_component<T: Real>(u: &VectorField<T>, f: &ScalarField<T>) -> ScalarField<T> {
    let mut out = ScalarField::zeros(&f.grid);
    advect_acc(u, f, T::one(), &mut out);
    out
}

impl<T: Real> Advect<T> for ScalarField<T> {
    fn advect_by(&self, u: &VectorField<T>) -> Self {
        advect_component(u, self)
    }
}

impl<T: Real> Advect<T> for VectorField<T> {
    fn advect_by(&self, u: &VectorField<T>) -> Self {
        VectorField { c: std::array::from_fn(|i| advect_component(u, &self.c[i])) }
    }
}

impl<T: Real> Advect<T> for TensorField<T> {
    fn advect_by(&self, u: &VectorField<T>) -> Self {
        TensorField { c: std::array::from_fn(|i| advect_component(u, &self.c[i])) }
    }
}

/// `u·∇f`, central in the interior and one-sided on the walls.
pub fn advect<T: Real, F: Advect<T>>(u: &VectorField<T>, f: &F) -> F {
    f.advect_by(u)
}

/// Largest `|f|` over nodes at least `margin` layers away from both walls.
pub fn interior_max_abs<T: Real>(f: &ScalarField<T>, margin: usize) -> T {
    let g = f.grid;
    let p = g.plane_len();
    let (lo, hi) = (margin.min(g.nz), g.nz.saturating_sub(margin));
    if lo >= hi {
        return T::zero();
    }
    f.data[lo * p..hi * p].iter().fold(T::zero(), |m, v| m.max(v.abs()))
}

/// [`interior_max_abs`] over all components.
pub fn interior_linf<T: Real, F: Components<T> + ?Sized>(f: &F, margin: usize) -> T {
    f.components().into_iter().fold(T::zero(), |m, c| m.max(interior_max_abs(c, margin)))
}

/// Applies the gradient `k` times to every component and takes the L² norm
/// of the result.
pub fn seminorm_grad_k<T: Real, F: Components<T> + ?Sized>(f: &F, k: usize) -> T {
    seminorm_grad_k_sq(f, k).sqrt()
}

pub fn seminorm_grad_k_sq<T: Real, F: Components<T> + ?Sized>(f: &F, k: usize) -> T {
    fn rec<T: Real>(c: &ScalarField<T>, k: usize) -> T {
        if k == 0 {
            return c.map(|v| v * v).integrate();
        }
        let g = c.grid;
        let mut acc = T::zero();
        for (a, axis) in Axis::ALL.into_iter().enumerate() {
            if (a == 0 && g.nx == 1) || (a == 1 && g.ny == 1) {
                continue;
            }
            acc += rec(&diff1(c, axis), k - 1);
        }
        acc
    }
    f.components().into_iter().map(|c| rec(c, k)).sum()
}
