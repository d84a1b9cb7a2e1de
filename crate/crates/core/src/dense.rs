//! Small dense helpers on top of nalgebra.

use nalgebra::{DMatrix, Dyn, Matrix, MatrixView, Storage, StorageMut};

use crate::Real;

pub(crate) type StridedView<'a, T> = MatrixView<'a, T, Dyn, Dyn, Dyn, Dyn>;

/// Transposed view of a column-major matrix without copying.
///
/// nalgebra's `tr_mul`/`gemm_tr` fall back to dot products; routing the
/// transpose through strides lets `gemm` reach the blocked kernel.
pub(crate) fn tview<T: Real>(m: &DMatrix<T>) -> StridedView<'_, T> {
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        // transpose is c x r; the non-empty extent gets stride 0
        let (rs, cs) = if c == 0 { (1, 0) } else { (0, 1) };
        return StridedView::from_slice_with_strides(&[], c, r, rs, cs);
    }
    StridedView::from_slice_with_strides(m.as_slice(), c, r, r, 1)
}

/// `y = alpha a^T x + beta y`.
///
/// Large shapes go through [`tview`]; nalgebra's small-matrix fallback
/// mis-handles a strided left operand, so small ones use `gemm_tr`.
pub(crate) fn gemm_tn<T, S1, S2>(
    y: &mut Matrix<T, Dyn, Dyn, S1>,
    alpha: T,
    a: &DMatrix<T>,
    x: &Matrix<T, Dyn, Dyn, S2>,
    beta: T,
) where
    T: Real,
    S1: StorageMut<T, Dyn, Dyn>,
    S2: Storage<T, Dyn, Dyn>,
{
    const SMALL: usize = 5;
    if y.nrows() > SMALL && y.ncols() > SMALL && a.nrows() > SMALL {
        y.gemm(alpha, &tview(a), x, beta);
    } else {
        y.gemm_tr(alpha, a, x, beta);
    }
}

/// Thin SVD `A = U diag(s) V^T` with `s` in descending order.
pub(crate) struct Svd<T> {
    pub u: DMatrix<T>,
    pub s: Vec<T>,
    pub v: DMatrix<T>,
}

/// Thin SVD computed by faer in double precision.
///
/// nalgebra's bidiagonal SVD loses accuracy on (nearly) rank-deficient
/// blocks, which is exactly what low-rank truncation feeds it.
pub(crate) fn svd<T: Real>(a: &DMatrix<T>) -> Svd<T> {
    let (m, n) = a.shape();
    let r = m.min(n);
    if r == 0 {
        return Svd { u: DMatrix::zeros(m, 0), s: Vec::new(), v: DMatrix::zeros(n, 0) };
    }
    let fa = faer::Mat::<f64>::from_fn(m, n, |i, j| a[(i, j)].as_f64());
    let d = fa.thin_svd().expect("SVD did not converge");
    let (u, s, v) = (d.U(), d.S().column_vector(), d.V());
    Svd {
        u: DMatrix::from_fn(m, r, |i, j| T::of(u[(i, j)])),
        s: (0..r).map(|k| T::of(s[k])).collect(),
        v: DMatrix::from_fn(n, r, |i, j| T::of(v[(i, j)])),
    }
}

pub(crate) fn frobenius<T: Real>(m: &DMatrix<T>) -> T {
    m.iter().fold(T::zero(), |acc, &x| acc + x * x).sqrt()
}

pub(crate) fn all_finite<T: Real>(m: &DMatrix<T>) -> bool {
    m.iter().all(|x| x.is_finite())
}

pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

pub(crate) fn norm2<T: Real>(a: &[T]) -> T {
    dot(a, a).sqrt()
}
