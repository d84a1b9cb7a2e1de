//! Nodal coefficient fields and log-normal random permeability sampling.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::Grid;
use crate::{AcrError, Result};

const MAGIC: &[u8; 4] = b"ACRF";

/// Largest grid sampled through a dense covariance factorization.
const DENSE_LIMIT: usize = 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FieldKind {
    Constant,
    LogNormal,
    Velocity,
    Custom,
}

impl FieldKind {
    fn code(self) -> u8 {
        match self {
            FieldKind::Constant => 0,
            FieldKind::LogNormal => 1,
            FieldKind::Velocity => 2,
            FieldKind::Custom => 3,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        Ok(match c {
            0 => FieldKind::Constant,
            1 => FieldKind::LogNormal,
            2 => FieldKind::Velocity,
            3 => FieldKind::Custom,
            _ => return Err(AcrError::InvalidInput(format!("unknown field kind {c}"))),
        })
    }
}

/// Strictly positive nodal samples on a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientField {
    grid: Grid,
    kind: FieldKind,
    seed: u64,
    contrast: f64,
    values: Vec<f64>,
}

impl CoefficientField {
    pub fn constant(grid: Grid, value: f64) -> Result<Self> {
        let mut f = Self::from_values(grid, vec![value; grid.len()])?;
        f.kind = FieldKind::Constant;
        Ok(f)
    }

    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(AcrError::LengthMismatch { expected: grid.len(), got: values.len() });
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(AcrError::InvalidInput(format!("coefficients must be positive and finite, got {v}")));
        }
        let contrast = log_contrast(&values);
        Ok(Self { grid, kind: FieldKind::Custom, seed: 0, contrast, values })
    }

    /// Waveguide velocity sampled at the nodes.
    pub fn velocity(grid: Grid) -> Self {
        let values: Vec<f64> = (0..grid.len()).map(|p| super::velocity_eval(grid.coords(p))).collect();
        let contrast = log_contrast(&values);
        Self { grid, kind: FieldKind::Velocity, seed: 0, contrast, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn kind(&self) -> FieldKind {
        self.kind
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// `log10(max / min)`.
    pub fn contrast(&self) -> f64 {
        self.contrast
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Little-endian binary: magic, n, dim, kind, seed, contrast, count,
    /// then the values as `f64`.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.grid.n() as u64).to_le_bytes())?;
        w.write_all(&[self.grid.dim() as u8, self.kind.code()])?;
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&self.contrast.to_le_bytes())?;
        w.write_all(&(self.values.len() as u64).to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(AcrError::InvalidInput("not a coefficient field file".into()));
        }
        let mut b8 = [0u8; 8];
        let mut u64_ = |r: &mut R| -> Result<u64> {
            r.read_exact(&mut b8)?;
            Ok(u64::from_le_bytes(b8))
        };
        let n = u64_(&mut r)? as usize;
        let mut b2 = [0u8; 2];
        r.read_exact(&mut b2)?;
        let seed = u64_(&mut r)?;
        let contrast = f64::from_bits(u64_(&mut r)?);
        let count = u64_(&mut r)? as usize;
        let grid = Grid::new(n, b2[0] as usize)?;
        if count != grid.len() {
            return Err(AcrError::LengthMismatch { expected: grid.len(), got: count });
        }
        let mut values = Vec::with_capacity(count);
        for _ in 0..count {
            values.push(f64::from_bits(u64_(&mut r)?));
        }
        let mut f = Self::from_values(grid, values)?;
        f.kind = FieldKind::from_code(b2[1])?;
        f.seed = seed;
        f.contrast = contrast;
        Ok(f)
    }
}

fn log_contrast(values: &[f64]) -> f64 {
    let (lo, hi) = values.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    (hi / lo).log10()
}

/// Zero-mean Gaussian sampler with covariance `exp(-|x - y| / lambda)`.
///
/// Small grids factor the dense covariance; larger ones use circulant
/// embedding on a periodic grid and FFTs.
pub struct GaussianSampler {
    grid: Grid,
    backend: Backend,
}

enum Backend {
    Dense(DMatrix<f64>),
    Circulant { m: usize, sqrt_eig: Vec<f64> },
}

impl GaussianSampler {
    pub fn new(grid: Grid, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(AcrError::InvalidInput(format!("correlation length must be > 0, got {lambda}")));
        }
        let backend = if grid.len() <= DENSE_LIMIT {
            Backend::Dense(dense_factor(&grid, lambda)?)
        } else {
            circulant(&grid, lambda)?
        };
        Ok(Self { grid, backend })
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        match &self.backend {
            Backend::Dense(l) => {
                let xi = DVector::from_fn(self.grid.len(), |_, _| StandardNormal.sample(rng));
                (l * xi).as_slice().to_vec()
            }
            Backend::Circulant { m, sqrt_eig } => {
                let mut data: Vec<Complex<f64>> = sqrt_eig
                    .iter()
                    .map(|&s| {
                        let (re, im): (f64, f64) = (StandardNormal.sample(rng), StandardNormal.sample(rng));
                        Complex::new(s * re, s * im)
                    })
                    .collect();
                fft_nd(&mut data, *m, self.grid.dim());
                (0..self.grid.len())
                    .map(|p| {
                        let [i, j, k] = self.grid.ijk(p);
                        data[i + m * j + m * m * k].re
                    })
                    .collect()
            }
        }
    }
}

fn dense_factor(grid: &Grid, lambda: f64) -> Result<DMatrix<f64>> {
    let n = grid.len();
    let pts: Vec<[f64; 3]> = (0..n).map(|p| grid.coords(p)).collect();
    let cov = DMatrix::from_fn(n, n, |i, j| {
        let d: f64 = (0..3).map(|a| (pts[i][a] - pts[j][a]).powi(2)).sum::<f64>().sqrt();
        (-d / lambda).exp()
    });
    for jitter in [0.0, 1e-12, 1e-10, 1e-8] {
        let c = &cov + DMatrix::identity(n, n) * jitter;
        if let Some(ch) = c.cholesky() {
            return Ok(ch.unpack());
        }
    }
    Err(AcrError::Factorization("covariance is not positive definite".into()))
}

fn circulant(grid: &Grid, lambda: f64) -> Result<Backend> {
    let (n, dim, h) = (grid.n(), grid.dim(), grid.h());
    let mut m = 2 * (n - 1);
    for _ in 0..4 {
        let total = m.pow(dim as u32);
        let mut data: Vec<Complex<f64>> = (0..total)
            .map(|p| {
                let idx = [p % m, (p / m) % m, p / (m * m)];
                let d2: f64 = idx[..dim].iter().map(|&k| (k.min(m - k) as f64 * h).powi(2)).sum();
                Complex::new((-d2.sqrt() / lambda).exp(), 0.0)
            })
            .collect();
        fft_nd(&mut data, m, dim);
        let eig: Vec<f64> = data.iter().map(|c| c.re).collect();
        let max = eig.iter().cloned().fold(0.0, f64::max);
        let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
        if min >= -1e-10 * max {
            let scale = 1.0 / total as f64;
            let sqrt_eig = eig.iter().map(|&e| (e.max(0.0) * scale).sqrt()).collect();
            return Ok(Backend::Circulant { m, sqrt_eig });
        }
        m *= 2;
    }
    Err(AcrError::Factorization("circulant embedding has negative eigenvalues".into()))
}

/// In-place forward FFT over a `m^dim` array stored axis-0 fastest.
fn fft_nd(data: &mut [Complex<f64>], m: usize, dim: usize) {
    let fft = FftPlanner::new().plan_fft_forward(m);
    let mut line = vec![Complex::new(0.0, 0.0); m];
    for axis in 0..dim {
        let stride = m.pow(axis as u32);
        let outer = data.len() / m;
        for o in 0..outer {
            // base index of the o-th line along `axis`
            let lo = o % stride;
            let hi = o / stride;
            let base = lo + hi * stride * m;
            for (t, v) in line.iter_mut().enumerate() {
                *v = data[base + t * stride];
            }
            fft.process(&mut line);
            for (t, v) in line.iter().enumerate() {
                data[base + t * stride] = *v;
            }
        }
    }
}

/// Log-normal field with `log10(max / min) = contrast_orders` exactly.
///
/// A Gaussian sample `Z` is mapped to
/// `log10 kappa = c (Z - mid) / (max Z - min Z)` with `mid` the midrange, so
/// the field spans `[10^(-c/2), 10^(c/2)]`.
pub fn gaussian_random_field(grid: &Grid, lambda: f64, contrast_orders: f64, seed: u64) -> Result<CoefficientField> {
    if !(contrast_orders >= 0.0 && contrast_orders.is_finite()) {
        return Err(AcrError::InvalidInput(format!("contrast must be >= 0, got {contrast_orders}")));
    }
    if contrast_orders == 0.0 {
        let mut f = CoefficientField::constant(*grid, 1.0)?;
        f.kind = FieldKind::LogNormal;
        f.seed = seed;
        return Ok(f);
    }
    let sampler = GaussianSampler::new(*grid, lambda)?;
    let z = sampler.sample(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(log_normal_from(*grid, &z, contrast_orders, seed))
}

pub(crate) fn log_normal_from(grid: Grid, z: &[f64], contrast: f64, seed: u64) -> CoefficientField {
    let (lo, hi) = z.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    let mid = 0.5 * (hi + lo);
    let values: Vec<f64> = if range > 0.0 {
        z.iter().map(|&v| 10f64.powf(contrast * (v - mid) / range)).collect()
    } else {
        vec![1.0; z.len()]
    };
    CoefficientField { grid, kind: FieldKind::LogNormal, seed, contrast: log_contrast(&values), values }
}
