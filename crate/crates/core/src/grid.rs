//! Slab grid: periodic in x and y, walled in z.
//!
//! Nodes sit at `x_i = i hx` (`i < nx`), `y_j = j hy` (`j < ny`) and
//! `z_k = k hz` (`k < nz`), so both walls `z = 0` and `z = Lz` are nodes.
//! Storage order is x fastest, then y, then z.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;

/// Smallest wall-normal node count supported by the one-sided stencils.
pub const MIN_NZ: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid<T> {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub lx: T,
    pub ly: T,
    pub lz: T,
    pub hx: T,
    pub hy: T,
    pub hz: T,
}

impl<T: Real> Grid<T> {
    pub fn new(nx: usize, ny: usize, nz: usize, lx: T, ly: T, lz: T) -> Result<Self> {
        if nx < 1 || ny < 1 {
            return Err(Error::InvalidGrid(format!("nx = {nx}, ny = {ny}; both must be >= 1")));
        }
        if nz < MIN_NZ {
            return Err(Error::InvalidGrid(format!("nz = {nz} < {MIN_NZ}")));
        }
        for (name, l) in [("Lx", lx), ("Ly", ly), ("Lz", lz)] {
            if !(l > T::zero()) || !l.is_finite() {
                return Err(Error::InvalidGrid(format!("{name} = {l} must be positive")));
            }
        }
        Ok(Grid {
            nx,
            ny,
            nz,
            lx,
            ly,
            lz,
            hx: lx / T::from_usize_lossy(nx),
            hy: ly / T::from_usize_lossy(ny),
            hz: lz / T::from_usize_lossy(nz - 1),
        })
    }

    /// Two-dimensional x-z grid (`ny = 1`).
    pub fn new_2d(nx: usize, nz: usize, lx: T, lz: T) -> Result<Self> {
        Self::new(nx, 1, nz, lx, T::one(), lz)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn plane_len(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn is_2d(&self) -> bool {
        self.ny == 1
    }

    /// Number of directions with nontrivial derivatives.
    pub fn dim(&self) -> usize {
        1 + usize::from(self.nx > 1) + usize::from(self.ny > 1)
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.nx * (j + self.ny * k)
    }

    /// Inverse of [`Grid::idx`].
    #[inline]
    pub fn ijk(&self, n: usize) -> (usize, usize, usize) {
        let i = n % self.nx;
        let j = (n / self.nx) % self.ny;
        let k = n / self.plane_len();
        (i, j, k)
    }

    #[inline]
    pub fn x(&self, i: usize) -> T {
        T::from_usize_lossy(i) * self.hx
    }

    #[inline]
    pub fn y(&self, j: usize) -> T {
        T::from_usize_lossy(j) * self.hy
    }

    #[inline]
    pub fn z(&self, k: usize) -> T {
        if k + 1 == self.nz {
            self.lz
        } else {
            T::from_usize_lossy(k) * self.hz
        }
    }

    pub fn coords(&self, n: usize) -> [T; 3] {
        let (i, j, k) = self.ijk(n);
        [self.x(i), self.y(j), self.z(k)]
    }

    #[inline]
    pub fn is_wall(&self, k: usize) -> bool {
        k == 0 || k + 1 == self.nz
    }

    /// Smallest spacing over the directions that carry derivatives.
    pub fn min_spacing(&self) -> T {
        let mut h = self.hz;
        if self.nx > 1 {
            h = h.min(self.hx);
        }
        if self.ny > 1 {
            h = h.min(self.hy);
        }
        h
    }

    /// Volume of the box (area of the x-z rectangle in 2D mode).
    pub fn volume(&self) -> T {
        if self.is_2d() {
            self.lx * self.lz
        } else {
            self.lx * self.ly * self.lz
        }
    }

    /// Trapezoidal quadrature weight of wall-normal layer `k`.
    #[inline]
    pub fn trapezoid_weight_z(&self, k: usize) -> T {
        if self.is_wall(k) {
            self.hz * T::c(0.5)
        } else {
            self.hz
        }
    }

    /// Wall-normal weights `(1/4, 5/4, 1, .., 1, 5/4, 1/4) hz`.
    ///
    /// These are the left null vector of the one-sided first-derivative
    /// operator on wall-vanishing data, so the weighted sum of a discrete
    /// divergence of a no-flux field is zero to round-off.
    #[inline]
    pub fn conservative_weight_z(&self, k: usize) -> T {
        let last = self.nz - 1;
        let c = if k == 0 || k == last {
            0.25
        } else if k == 1 || k + 1 == last {
            1.25
        } else {
            1.0
        };
        self.hz * T::c(c)
    }

    /// Tangential cell area (`hx hy`, or `hx` in 2D mode).
    #[inline]
    pub fn tangential_cell(&self) -> T {
        if self.is_2d() {
            self.hx
        } else {
            self.hx * self.hy
        }
    }

    pub fn same_shape(&self, other: &Grid<T>) -> bool {
        self.nx == other.nx && self.ny == other.ny && self.nz == other.nz
    }

    pub fn cast<U: Real>(&self) -> Grid<U> {
        Grid::new(
            self.nx,
            self.ny,
            self.nz,
            U::c(self.lx.to_f64_lossy()),
            U::c(self.ly.to_f64_lossy()),
            U::c(self.lz.to_f64_lossy()),
        )
        .expect("valid grid stays valid")
    }
}

/// Electrostatic condition at one wall.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WallCondition {
    Dirichlet,
    Neumann,
}

/// Boundary data. Velocity is always no-slip at both walls; the
/// electrostatic potential takes one condition per wall.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BoundarySpec {
    pub bottom: WallCondition,
    pub top: WallCondition,
}

impl BoundarySpec {
    pub const DIRICHLET: Self = BoundarySpec {
        bottom: WallCondition::Dirichlet,
        top: WallCondition::Dirichlet,
    };
    pub const NEUMANN: Self = BoundarySpec {
        bottom: WallCondition::Neumann,
        top: WallCondition::Neumann,
    };

    pub fn new(bottom: WallCondition, top: WallCondition) -> Self {
        BoundarySpec { bottom, top }
    }

    pub fn is_pure_neumann(&self) -> bool {
        self.bottom == WallCondition::Neumann && self.top == WallCondition::Neumann
    }

    /// Outward unit normal `z`-component at wall `k` (-1 at the bottom, +1 at the top).
    pub fn outward_normal_z(k_is_top: bool) -> i8 {
        if k_is_top {
            1
        } else {
            -1
        }
    }
}

impl Default for BoundarySpec {
    fn default() -> Self {
        Self::DIRICHLET
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_short_wall_direction() {
        assert!(Grid::<f64>::new(4, 4, 4, 1.0, 1.0, 1.0).is_err());
        assert!(Grid::<f64>::new(0, 4, 8, 1.0, 1.0, 1.0).is_err());
        assert!(Grid::<f64>::new(4, 4, 8, 1.0, -1.0, 1.0).is_err());
    }

    #[test]
    fn walls_are_nodes() {
        let g = Grid::<f64>::new(8, 1, 11, 1.0, 1.0, 2.5).unwrap();
        assert_eq!(g.z(0), 0.0);
        assert_eq!(g.z(10), 2.5);
        assert!(g.is_2d());
        assert_eq!(g.dim(), 2);
        assert_eq!(g.ijk(g.idx(3, 0, 7)), (3, 0, 7));
    }

    #[test]
    fn quadrature_weights_sum_to_length() {
        let g = Grid::<f64>::new(4, 1, 17, 1.0, 1.0, 3.0).unwrap();
        let trap: f64 = (0..g.nz).map(|k| g.trapezoid_weight_z(k)).sum();
        let cons: f64 = (0..g.nz).map(|k| g.conservative_weight_z(k)).sum();
        assert!((trap - 3.0).abs() < 1e-14);
        assert!((cons - 3.0).abs() < 1e-14);
    }
}
