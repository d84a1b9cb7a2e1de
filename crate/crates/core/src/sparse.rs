//! Minimal compressed-sparse-row matrix used for the assembled PDE operators.

use std::io::Write;

use nalgebra::DMatrix;

use crate::{AcrError, Real, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix<T> {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<T>,
}

impl<T: Real> CsrMatrix<T> {
    /// Build from `(row, col, value)` triplets; duplicates are summed and
    /// columns are sorted within each row.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, T)]) -> Result<Self> {
        let mut counts = vec![0usize; nrows + 1];
        for &(r, c, _) in triplets {
            if r >= nrows || c >= ncols {
                return Err(AcrError::InvalidInput(format!("triplet ({r}, {c}) outside {nrows}x{ncols}")));
            }
            counts[r + 1] += 1;
        }
        for i in 0..nrows {
            counts[i + 1] += counts[i];
        }
        let mut next = counts.clone();
        let mut entries = vec![(0usize, T::zero()); triplets.len()];
        for &(r, c, v) in triplets {
            entries[next[r]] = (c, v);
            next[r] += 1;
        }
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        row_ptr.push(0);
        for r in 0..nrows {
            let row = &mut entries[counts[r]..counts[r + 1]];
            row.sort_by_key(|e| e.0);
            for &(c, v) in row.iter() {
                if col_idx.len() > row_ptr[r] && *col_idx.last().unwrap() == c {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_idx.push(c);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Ok(Self { nrows, ncols, row_ptr, col_idx, values })
    }

    pub fn identity(n: usize) -> Self {
        Self { nrows: n, ncols: n, row_ptr: (0..=n).collect(), col_idx: (0..n).collect(), values: vec![T::one(); n] }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Iterate `(col, value)` of one row.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()].iter().copied().zip(self.values[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        match self.col_idx[span.clone()].binary_search(&c) {
            Ok(k) => self.values[span.start + k],
            Err(_) => T::zero(),
        }
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        (0..self.nrows).flat_map(move |r| self.row(r).map(move |(c, v)| (r, c, v)))
    }

    /// `y = A x`.
    pub fn mul_vec(&self, x: &[T], y: &mut [T]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for (r, out) in y.iter_mut().enumerate() {
            *out = self.row(r).fold(T::zero(), |acc, (c, v)| acc + v * x[c]);
        }
    }

    pub fn matvec(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.ncols {
            return Err(AcrError::LengthMismatch { expected: self.ncols, got: x.len() });
        }
        let mut y = vec![T::zero(); self.nrows];
        self.mul_vec(x, &mut y);
        Ok(y)
    }

    pub fn transpose(&self) -> Self {
        let trip: Vec<_> = self.triplets().map(|(r, c, v)| (c, r, v)).collect();
        Self::from_triplets(self.ncols, self.nrows, &trip).expect("indices in range")
    }

    pub fn to_dense(&self) -> DMatrix<T> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for (r, c, v) in self.triplets() {
            m[(r, c)] += v;
        }
        m
    }

    /// `self + alpha * other` with matching shapes.
    pub fn add_scaled(&self, alpha: T, other: &Self) -> Result<Self> {
        if self.nrows != other.nrows || self.ncols != other.ncols {
            return Err(AcrError::ShapeMismatch {
                expected: (self.nrows, self.ncols),
                got: (other.nrows, other.ncols),
            });
        }
        let trip: Vec<_> = self.triplets().chain(other.triplets().map(|(r, c, v)| (r, c, alpha * v))).collect();
        Self::from_triplets(self.nrows, self.ncols, &trip)
    }

    /// Exact structural and numerical equality with the transpose.
    pub fn is_symmetric(&self) -> bool {
        self.nrows == self.ncols && self.triplets().all(|(r, c, v)| self.get(c, r) == v)
    }

    pub fn frobenius(&self) -> f64 {
        self.values.iter().map(|v| v.as_f64().powi(2)).sum::<f64>().sqrt()
    }

    /// MatrixMarket `coordinate real general`, 1-based indices.
    pub fn write_matrix_market<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(w, "{} {} {}", self.nrows, self.ncols, self.nnz())?;
        for (r, c, v) in self.triplets() {
            writeln!(w, "{} {} {:.17e}", r + 1, c + 1, v.as_f64())?;
        }
        Ok(())
    }

    pub fn read_matrix_market<R: std::io::BufRead>(r: R) -> Result<Self> {
        let bad = |msg: &str| AcrError::InvalidInput(format!("MatrixMarket: {msg}"));
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| bad("empty input"))??;
        if !header.starts_with("%%MatrixMarket matrix coordinate real") {
            return Err(bad("unsupported header"));
        }
        let mut size = None;
        let mut trip = Vec::new();
        for line in lines {
            let line = line?;
            let t = line.trim();
            if t.is_empty() || t.starts_with('%') {
                continue;
            }
            let f: Vec<&str> = t.split_whitespace().collect();
            if size.is_none() {
                if f.len() != 3 {
                    return Err(bad("size line"));
                }
                let p = |s: &str| s.parse::<usize>().map_err(|_| bad("size line"));
                size = Some((p(f[0])?, p(f[1])?, p(f[2])?));
                continue;
            }
            if f.len() != 3 {
                return Err(bad("entry line"));
            }
            let r: usize = f[0].parse().map_err(|_| bad("row index"))?;
            let c: usize = f[1].parse().map_err(|_| bad("col index"))?;
            let v: f64 = f[2].parse().map_err(|_| bad("value"))?;
            if r == 0 || c == 0 {
                return Err(bad("indices are 1-based"));
            }
            trip.push((r - 1, c - 1, T::of(v)));
        }
        let (m, n, nnz) = size.ok_or_else(|| bad("missing size line"))?;
        if nnz != trip.len() {
            return Err(bad("entry count does not match header"));
        }
        Self::from_triplets(m, n, &trip)
    }
}
