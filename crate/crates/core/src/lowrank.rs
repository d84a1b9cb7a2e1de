//! Dense and factored (rank-k) blocks, and the Frobenius-tail truncation
//! every low-rank leaf goes through.

use nalgebra::DMatrix;

use crate::dense::{all_finite, frobenius, svd, tview};
use crate::{AcrError, Real, Result};

/// Dense leaf payload.
pub type DenseBlock<T> = DMatrix<T>;

/// A block stored as `U * V^T` with `U: rows x k` and `V: cols x k`.
#[derive(Clone, Debug)]
pub struct LowRankBlock<T: Real> {
    u: DMatrix<T>,
    v: DMatrix<T>,
    /// Factors were stacked without re-truncation.
    pending: bool,
}

impl<T: Real> PartialEq for LowRankBlock<T> {
    fn eq(&self, other: &Self) -> bool {
        self.u == other.u && self.v == other.v
    }
}

impl<T: Real> LowRankBlock<T> {
    pub fn new(u: DMatrix<T>, v: DMatrix<T>) -> Result<Self> {
        if u.ncols() != v.ncols() {
            return Err(AcrError::ShapeMismatch { expected: (u.nrows(), u.ncols()), got: (v.nrows(), v.ncols()) });
        }
        Ok(Self { u, v, pending: false })
    }

    /// Stacked factors awaiting truncation.
    pub(crate) fn untruncated(u: DMatrix<T>, v: DMatrix<T>) -> Self {
        debug_assert_eq!(u.ncols(), v.ncols());
        Self { u, v, pending: true }
    }

    pub(crate) fn is_pending(&self) -> bool {
        self.pending
    }

    /// The rank-0 block of the given shape.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { u: DMatrix::zeros(rows, 0), v: DMatrix::zeros(cols, 0), pending: false }
    }

    pub fn rows(&self) -> usize {
        self.u.nrows()
    }

    pub fn cols(&self) -> usize {
        self.v.nrows()
    }

    pub fn rank(&self) -> usize {
        self.u.ncols()
    }

    pub fn u(&self) -> &DMatrix<T> {
        &self.u
    }

    pub fn v(&self) -> &DMatrix<T> {
        &self.v
    }

    pub fn into_factors(self) -> (DMatrix<T>, DMatrix<T>) {
        (self.u, self.v)
    }

    pub fn to_dense(&self) -> DMatrix<T> {
        let mut out = DMatrix::zeros(self.rows(), self.cols());
        if self.rank() > 0 {
            out.gemm(T::one(), &self.u, &tview(&self.v), T::zero());
        }
        out
    }

    pub fn scale(&mut self, alpha: T) {
        self.u *= alpha;
    }

    /// `diag(left) * B * diag(right)`.
    pub(crate) fn scale_diag(&mut self, left: Option<&[T]>, right: Option<&[T]>) {
        if let Some(l) = left {
            for (i, mut row) in self.u.row_iter_mut().enumerate() {
                row *= l[i];
            }
        }
        if let Some(r) = right {
            for (j, mut row) in self.v.row_iter_mut().enumerate() {
                row *= r[j];
            }
        }
    }

    /// Storage in bytes: `k * (rows + cols)` scalars.
    pub fn bytes(&self) -> usize {
        std::mem::size_of::<T>() * self.rank() * (self.rows() + self.cols())
    }
}

/// Smallest `k` such that `sqrt(sum_{i>=k} s_i^2) <= eps * sqrt(sum_i s_i^2)`.
///
/// `sv` must be sorted in descending order. `eps = 0` keeps every nonzero
/// singular value.
pub(crate) fn truncation_rank<T: Real>(sv: &[T], eps: f64) -> usize {
    let total = sv.iter().fold(T::zero(), |acc, &s| acc + s * s);
    let thr = T::of(eps * eps) * total;
    let mut k = sv.len();
    let mut tail = T::zero();
    while k > 0 {
        let next = tail + sv[k - 1] * sv[k - 1];
        if next > thr {
            break;
        }
        tail = next;
        k -= 1;
    }
    k
}

fn floored_rank<T: Real>(sv: &mut [T], eps: f64, floor: T) -> usize {
    for s in sv.iter_mut().filter(|s| **s <= floor) {
        *s = T::zero();
    }
    truncation_rank(sv, eps)
}

fn check_eps(eps: f64) -> Result<()> {
    if eps.is_finite() && eps >= 0.0 {
        Ok(())
    } else {
        Err(AcrError::InvalidInput(format!("tolerance must be finite and >= 0, got {eps}")))
    }
}

/// Truncated SVD with the singular values absorbed into `U`.
pub fn truncated_svd<T: Real>(a: &DMatrix<T>, eps: f64) -> Result<LowRankBlock<T>> {
    check_eps(eps)?;
    if !all_finite(a) {
        return Err(AcrError::InvalidInput("non-finite entry in dense block".into()));
    }
    Ok(svd_truncate(a.clone(), eps))
}

pub(crate) fn svd_truncate<T: Real>(a: DMatrix<T>, eps: f64) -> LowRankBlock<T> {
    svd_truncate_above(a, eps, T::zero())
}

/// Singular values at or below `floor` are treated as zero.
fn svd_truncate_above<T: Real>(a: DMatrix<T>, eps: f64, floor: T) -> LowRankBlock<T> {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return LowRankBlock::zeros(m, n);
    }
    let mut d = svd(&a);
    let k = floored_rank(&mut d.s, eps, floor);
    let mut u = d.u.columns(0, k).into_owned();
    for (j, mut col) in u.column_iter_mut().enumerate() {
        col *= d.s[j];
    }
    let v = d.v.columns(0, k).into_owned();
    LowRankBlock { u, v, pending: false }
}

/// Re-truncate `U V^T` to relative Frobenius accuracy `eps`.
///
/// Orthogonalizes both factors and truncates the SVD of the small core
/// `R_u R_v^T`, so the cost is linear in the block dimensions.
pub(crate) fn truncate_factors<T: Real>(u: DMatrix<T>, v: DMatrix<T>, eps: f64) -> LowRankBlock<T> {
    let (m, k) = u.shape();
    let n = v.nrows();
    if k == 0 {
        return LowRankBlock::zeros(m, n);
    }
    // rounding level of the product, so exact cancellation yields rank 0
    let floor = T::default_epsilon() * T::of(k as f64) * frobenius(&u) * frobenius(&v);
    if 2 * k >= m.min(n) {
        let mut dense = DMatrix::zeros(m, n);
        dense.gemm(T::one(), &u, &tview(&v), T::zero());
        return svd_truncate_above(dense, eps, floor);
    }
    let qu = u.qr();
    let qv = v.qr();
    let ru = qu.r();
    let rv = qv.r();
    let mut core = DMatrix::zeros(k, k);
    core.gemm(T::one(), &ru, &tview(&rv), T::zero());
    let mut d = svd(&core);
    let r = floored_rank(&mut d.s, eps, floor);
    if r == 0 {
        return LowRankBlock::zeros(m, n);
    }
    let mut w = d.u.columns(0, r).into_owned();
    for (j, mut col) in w.column_iter_mut().enumerate() {
        col *= d.s[j];
    }
    let z = d.v.columns(0, r).into_owned();
    let mut out_u = DMatrix::zeros(m, r);
    out_u.gemm(T::one(), &qu.q(), &w, T::zero());
    let mut out_v = DMatrix::zeros(n, r);
    out_v.gemm(T::one(), &qv.q(), &z, T::zero());
    LowRankBlock { u: out_u, v: out_v, pending: false }
}

/// `b1 + b2` re-truncated to accuracy `eps`.
pub fn recompress_sum<T: Real>(b1: &LowRankBlock<T>, b2: &LowRankBlock<T>, eps: f64) -> Result<LowRankBlock<T>> {
    check_eps(eps)?;
    if b1.rows() != b2.rows() || b1.cols() != b2.cols() {
        return Err(AcrError::ShapeMismatch { expected: (b1.rows(), b1.cols()), got: (b2.rows(), b2.cols()) });
    }
    let (u, v) = stack_factors(b1, b2);
    Ok(truncate_factors(u, v, eps))
}

pub(crate) fn stack_factors<T: Real>(b1: &LowRankBlock<T>, b2: &LowRankBlock<T>) -> (DMatrix<T>, DMatrix<T>) {
    let (k1, k2) = (b1.rank(), b2.rank());
    let mut u = DMatrix::zeros(b1.rows(), k1 + k2);
    let mut v = DMatrix::zeros(b1.cols(), k1 + k2);
    u.columns_mut(0, k1).copy_from(&b1.u);
    u.columns_mut(k1, k2).copy_from(&b2.u);
    v.columns_mut(0, k1).copy_from(&b1.v);
    v.columns_mut(k1, k2).copy_from(&b2.v);
    (u, v)
}

/// Relative Frobenius error of a factorization against a dense reference.
pub fn relative_error<T: Real>(reference: &DMatrix<T>, approx: &LowRankBlock<T>) -> f64 {
    let norm = frobenius(reference).as_f64();
    let diff = frobenius(&(reference - approx.to_dense())).as_f64();
    if norm == 0.0 {
        diff
    } else {
        diff / norm
    }
}
