//! Finite-difference test problems on the unit square / cube.
//!
//! Unknowns are the interior nodes of a uniform grid with spacing
//! `h = 1/(n+1)`; Dirichlet values are eliminated. Nodes are numbered
//! `i + n j + n^2 k`, so every block row of the resulting block-tridiagonal
//! system is one plane of fixed last coordinate.

mod field;

use std::io::Write;

use crate::cluster::plane_points;
use crate::sparse::CsrMatrix;
use crate::{AcrError, Real, Result};

pub use field::{gaussian_random_field, CoefficientField, FieldKind, GaussianSampler};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Grid {
    n: usize,
    dim: usize,
}

impl Grid {
    /// `n` interior points per dimension in `dim` (2 or 3) dimensions.
    pub fn new(n: usize, dim: usize) -> Result<Self> {
        if n < 2 {
            return Err(AcrError::InvalidInput(format!("grid needs n >= 2, got {n}")));
        }
        if dim != 2 && dim != 3 {
            return Err(AcrError::InvalidInput(format!("grid dimension must be 2 or 3, got {dim}")));
        }
        Ok(Self { n, dim })
    }

    pub fn cube(n: usize) -> Result<Self> {
        Self::new(n, 3)
    }

    pub fn square(n: usize) -> Result<Self> {
        Self::new(n, 2)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn h(&self) -> f64 {
        1.0 / (self.n + 1) as f64
    }

    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Unknowns per block row.
    pub fn plane_len(&self) -> usize {
        self.n.pow(self.dim as u32 - 1)
    }

    pub fn index(&self, ijk: [usize; 3]) -> usize {
        ijk[0] + self.n * ijk[1] + self.n * self.n * ijk[2]
    }

    pub fn ijk(&self, p: usize) -> [usize; 3] {
        let n = self.n;
        [p % n, (p / n) % n, p / (n * n)]
    }

    /// Physical coordinates; the third one is 0 in 2D.
    pub fn coords(&self, p: usize) -> [f64; 3] {
        let h = self.h();
        let [i, j, k] = self.ijk(p);
        let z = if self.dim == 3 { (k + 1) as f64 * h } else { 0.0 };
        [(i + 1) as f64 * h, (j + 1) as f64 * h, z]
    }

    /// In-plane coordinates of one block row, used to build cluster trees.
    pub fn plane_points(&self) -> Vec<[f64; 2]> {
        if self.dim == 3 {
            plane_points(self.n, self.h())
        } else {
            (0..self.n).map(|i| [(i + 1) as f64 * self.h(), 0.0]).collect()
        }
    }

    /// Interior neighbor of `p` one step along `axis` in direction `dir`
    /// (`-1` or `+1`), or `None` if that neighbor is a boundary node.
    fn neighbor(&self, p: usize, axis: usize, dir: isize) -> Option<usize> {
        let mut ijk = self.ijk(p);
        let c = ijk[axis] as isize + dir;
        if c < 0 || c >= self.n as isize {
            return None;
        }
        ijk[axis] = c as usize;
        Some(self.index(ijk))
    }
}

/// `2 a b / (a + b)`.
pub fn harmonic_mean(a: f64, b: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
        return Err(AcrError::InvalidInput(format!("harmonic mean needs positive inputs, got {a}, {b}")));
    }
    Ok(2.0 * a * b / (a + b))
}

/// Block-tridiagonal system with sparse diagonal blocks and diagonal
/// couplings between consecutive block rows.
#[derive(Clone, Debug)]
pub struct BlockTridiagonalSystem<T: Real> {
    diag: Vec<CsrMatrix<T>>,
    /// `lower[i]` couples row `i` to row `i - 1`; empty for `i = 0`.
    lower: Vec<Vec<T>>,
    /// `upper[i]` couples row `i` to row `i + 1`; empty for the last row.
    upper: Vec<Vec<T>>,
    rhs: Vec<T>,
    symmetric: bool,
    points: Vec<[f64; 2]>,
}

impl<T: Real> BlockTridiagonalSystem<T> {
    /// Generic constructor. `points` are the in-plane coordinates of one
    /// block row (one point per unknown of a block).
    pub fn new(
        diag: Vec<CsrMatrix<T>>,
        lower: Vec<Vec<T>>,
        upper: Vec<Vec<T>>,
        rhs: Vec<T>,
        points: Vec<[f64; 2]>,
    ) -> Result<Self> {
        let nb = diag.len();
        if nb == 0 {
            return Err(AcrError::InvalidInput("system needs at least one block row".into()));
        }
        let m = points.len();
        for d in &diag {
            if d.nrows() != m || d.ncols() != m {
                return Err(AcrError::ShapeMismatch { expected: (m, m), got: (d.nrows(), d.ncols()) });
            }
        }
        if lower.len() != nb || upper.len() != nb {
            return Err(AcrError::LengthMismatch { expected: nb, got: lower.len().min(upper.len()) });
        }
        for i in 0..nb {
            let want_l = if i == 0 { 0 } else { m };
            let want_u = if i + 1 == nb { 0 } else { m };
            if lower[i].len() != want_l {
                return Err(AcrError::LengthMismatch { expected: want_l, got: lower[i].len() });
            }
            if upper[i].len() != want_u {
                return Err(AcrError::LengthMismatch { expected: want_u, got: upper[i].len() });
            }
        }
        if rhs.len() != nb * m {
            return Err(AcrError::LengthMismatch { expected: nb * m, got: rhs.len() });
        }
        let mut sys = Self { diag, lower, upper, rhs, symmetric: false, points };
        sys.symmetric = sys.check_symmetric();
        Ok(sys)
    }

    fn check_symmetric(&self) -> bool {
        self.diag.iter().all(|d| d.is_symmetric()) && (1..self.nblocks()).all(|i| self.lower[i] == self.upper[i - 1])
    }

    pub fn nblocks(&self) -> usize {
        self.diag.len()
    }

    pub fn block_size(&self) -> usize {
        self.points.len()
    }

    pub fn len(&self) -> usize {
        self.nblocks() * self.block_size()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn diag(&self, i: usize) -> &CsrMatrix<T> {
        &self.diag[i]
    }

    /// Diagonal of `L_i`, absent for the first row.
    pub fn lower(&self, i: usize) -> Option<&[T]> {
        (i > 0).then(|| self.lower[i].as_slice())
    }

    /// Diagonal of `U_i`, absent for the last row.
    pub fn upper(&self, i: usize) -> Option<&[T]> {
        (i + 1 < self.nblocks()).then(|| self.upper[i].as_slice())
    }

    pub fn rhs(&self) -> &[T] {
        &self.rhs
    }

    pub fn set_rhs(&mut self, rhs: Vec<T>) -> Result<()> {
        if rhs.len() != self.len() {
            return Err(AcrError::LengthMismatch { expected: self.len(), got: rhs.len() });
        }
        self.rhs = rhs;
        Ok(())
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    /// `y = A x`.
    pub fn apply(&self, x: &[T], y: &mut [T]) {
        let m = self.block_size();
        assert_eq!(x.len(), self.len());
        assert_eq!(y.len(), self.len());
        for i in 0..self.nblocks() {
            let yi = &mut y[i * m..(i + 1) * m];
            self.diag[i].mul_vec(&x[i * m..(i + 1) * m], yi);
            if let Some(l) = self.lower(i) {
                for (k, out) in yi.iter_mut().enumerate() {
                    *out += l[k] * x[(i - 1) * m + k];
                }
            }
            if let Some(u) = self.upper(i) {
                for (k, out) in yi.iter_mut().enumerate() {
                    *out += u[k] * x[(i + 1) * m + k];
                }
            }
        }
    }

    pub fn matvec(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.len() {
            return Err(AcrError::LengthMismatch { expected: self.len(), got: x.len() });
        }
        let mut y = vec![T::zero(); self.len()];
        self.apply(x, &mut y);
        Ok(y)
    }

    /// `||b - A x|| / ||b||`.
    pub fn relative_residual(&self, x: &[T], b: &[T]) -> Result<f64> {
        let ax = self.matvec(x)?;
        let num: f64 = ax.iter().zip(b).map(|(a, b)| (*b - *a).as_f64().powi(2)).sum();
        let den: f64 = b.iter().map(|v| v.as_f64().powi(2)).sum();
        Ok(if den == 0.0 { num.sqrt() } else { (num / den).sqrt() })
    }

    /// Global sparse matrix.
    pub fn to_csr(&self) -> CsrMatrix<T> {
        let m = self.block_size();
        let mut trip = Vec::new();
        for i in 0..self.nblocks() {
            let off = i * m;
            trip.extend(self.diag[i].triplets().map(|(r, c, v)| (off + r, off + c, v)));
            if let Some(l) = self.lower(i) {
                trip.extend(l.iter().enumerate().map(|(k, &v)| (off + k, off - m + k, v)));
            }
            if let Some(u) = self.upper(i) {
                trip.extend(u.iter().enumerate().map(|(k, &v)| (off + k, off + m + k, v)));
            }
        }
        let n = self.len();
        CsrMatrix::from_triplets(n, n, &trip).expect("indices in range")
    }

    pub fn write_matrix_market<W: Write>(&self, w: W) -> Result<()> {
        self.to_csr().write_matrix_market(w)
    }
}

/// Assemble a global operator into block-tridiagonal form. Couplings
/// between consecutive planes must be diagonal.
fn split_planes<T: Real>(grid: &Grid, a: &CsrMatrix<T>, rhs: Vec<T>) -> BlockTridiagonalSystem<T> {
    let m = grid.plane_len();
    let nb = grid.len() / m;
    let mut diag_trip: Vec<Vec<(usize, usize, T)>> = vec![Vec::new(); nb];
    let mut lower = vec![Vec::new(); nb];
    let mut upper = vec![Vec::new(); nb];
    for i in 0..nb {
        if i > 0 {
            lower[i] = vec![T::zero(); m];
        }
        if i + 1 < nb {
            upper[i] = vec![T::zero(); m];
        }
    }
    for (r, c, v) in a.triplets() {
        let (bi, bj) = (r / m, c / m);
        let (lr, lc) = (r % m, c % m);
        if bi == bj {
            diag_trip[bi].push((lr, lc, v));
        } else {
            assert_eq!(lr, lc, "plane coupling must be diagonal");
            if bj + 1 == bi {
                lower[bi][lr] = v;
            } else if bi + 1 == bj {
                upper[bi][lr] = v;
            } else {
                panic!("operator is not block tridiagonal");
            }
        }
    }
    let diag = diag_trip.iter().map(|t| CsrMatrix::from_triplets(m, m, t).expect("indices in range")).collect();
    BlockTridiagonalSystem::new(diag, lower, upper, rhs, grid.plane_points()).expect("consistent blocks")
}

/// Diffusion stencil `-div(kappa grad u)` with harmonic face coefficients.
///
/// A face towards a boundary node uses the node's own coefficient.
fn diffusion_triplets(grid: &Grid, kappa: &[f64]) -> Result<Vec<(usize, usize, f64)>> {
    let h2 = grid.h() * grid.h();
    let mut trip = Vec::with_capacity(grid.len() * (2 * grid.dim() + 1));
    for p in 0..grid.len() {
        let mut d = 0.0;
        for axis in 0..grid.dim() {
            for dir in [-1, 1] {
                match grid.neighbor(p, axis, dir) {
                    Some(q) => {
                        let k = harmonic_mean(kappa[p], kappa[q])? / h2;
                        trip.push((p, q, -k));
                        d += k;
                    }
                    None => d += kappa[p] / h2,
                }
            }
        }
        trip.push((p, p, d));
    }
    Ok(trip)
}

fn check_field(grid: &Grid, f: &CoefficientField) -> Result<()> {
    if f.grid() != grid {
        return Err(AcrError::InvalidInput("coefficient field lives on a different grid".into()));
    }
    Ok(())
}

fn to_system<T: Real>(grid: &Grid, trip: &[(usize, usize, f64)], rhs: Vec<f64>) -> Result<BlockTridiagonalSystem<T>> {
    let t: Vec<_> = trip.iter().map(|&(r, c, v)| (r, c, T::of(v))).collect();
    let a = CsrMatrix::from_triplets(grid.len(), grid.len(), &t)?;
    Ok(split_planes(grid, &a, rhs.into_iter().map(T::of).collect()))
}

/// `-div(kappa grad u) = 1` with homogeneous Dirichlet conditions.
pub fn poisson_system<T: Real>(grid: &Grid, kappa: &CoefficientField) -> Result<BlockTridiagonalSystem<T>> {
    check_field(grid, kappa)?;
    let trip = diffusion_triplets(grid, kappa.values())?;
    to_system(grid, &trip, vec![1.0; grid.len()])
}

/// Recirculating flow with vortex parameter `a`.
pub fn flow_eval(x: [f64; 3], a: f64) -> [f64; 3] {
    let w = a * 2.0 * std::f64::consts::PI;
    let (sx, cx) = (w * x[0]).sin_cos();
    let (sy, cy) = (w * (0.125 + x[1])).sin_cos();
    let (sz8, cz8) = (w * (0.125 + x[2])).sin_cos();
    let (sz, cz) = (w * x[2]).sin_cos();
    [sx * sy + sz8 * sx, cx * cy + cy * cz, cx * cz8 + sy * sz]
}

/// `-div(kappa grad u) + alpha b . grad u = 1`, convection by first-order
/// upwinding on the sign of each component of `b` at the node.
pub fn convdiff_system<T: Real>(
    grid: &Grid,
    kappa: &CoefficientField,
    alpha: f64,
    a: f64,
) -> Result<BlockTridiagonalSystem<T>> {
    check_field(grid, kappa)?;
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(AcrError::InvalidInput(format!("alpha must be >= 0, got {alpha}")));
    }
    let mut trip = diffusion_triplets(grid, kappa.values())?;
    if alpha > 0.0 {
        let h = grid.h();
        for p in 0..grid.len() {
            let b = flow_eval(grid.coords(p), a);
            for (axis, &bd) in b.iter().enumerate().take(grid.dim()) {
                if bd == 0.0 {
                    continue;
                }
                let c = alpha * bd.abs() / h;
                trip.push((p, p, c));
                let dir = if bd > 0.0 { -1 } else { 1 };
                if let Some(q) = grid.neighbor(p, axis, dir) {
                    trip.push((p, q, -c));
                }
            }
        }
    }
    to_system(grid, &trip, vec![1.0; grid.len()])
}

/// Waveguide velocity model.
pub fn velocity_eval(x: [f64; 3]) -> f64 {
    let r2 = (x[0] - 0.5).powi(2) + (x[1] - 0.5).powi(2);
    1.25 * (1.0 - 0.4 * (-32.0 * r2).exp())
}

/// Exact solution used for the Helmholtz right-hand side.
pub fn helmholtz_exact(x: [f64; 3]) -> f64 {
    let pi = std::f64::consts::PI;
    (pi * x[0]).sin() * (pi * x[1]).sin() * (pi * x[2]).sin()
}

/// `-lap u - (2 pi f)^2 / c^2 u = g` with `g` chosen so that
/// `u = sin(pi x) sin(pi y) sin(pi z)` solves the continuous problem.
pub fn helmholtz_system<T: Real>(grid: &Grid, freq: f64) -> Result<BlockTridiagonalSystem<T>> {
    if !(freq >= 0.0 && freq.is_finite()) {
        return Err(AcrError::InvalidInput(format!("frequency must be >= 0, got {freq}")));
    }
    if grid.dim() != 3 {
        return Err(AcrError::InvalidInput("the Helmholtz problem is defined on the unit cube".into()));
    }
    let mut trip = diffusion_triplets(grid, &vec![1.0; grid.len()])?;
    let omega = 2.0 * std::f64::consts::PI * freq;
    let pi2 = std::f64::consts::PI.powi(2);
    let mut rhs = Vec::with_capacity(grid.len());
    for p in 0..grid.len() {
        let x = grid.coords(p);
        let shift = omega * omega / velocity_eval(x).powi(2);
        if shift != 0.0 {
            trip.push((p, p, -shift));
        }
        let u = helmholtz_exact(x);
        rhs.push(3.0 * pi2 * u - shift * u);
    }
    to_system(grid, &trip, rhs)
}

/// `c_min / (f h)` for the waveguide model (`c_min = 0.75`).
pub fn points_per_wavelength(grid: &Grid, freq: f64) -> f64 {
    0.75 / (freq * grid.h())
}

/// Frequency giving `ppw` points per wavelength on `grid`.
pub fn frequency_for_ppw(grid: &Grid, ppw: f64) -> f64 {
    0.75 / (ppw * grid.h())
}

#[cfg(test)]
mod tests;
