//! Classical block cyclic reduction with exact dense blocks.

use nalgebra::{DMatrix, DVector, Dyn, LU};

use crate::problems::BlockTridiagonalSystem;
use crate::{AcrError, Real, Result};

struct Rows<T: Real> {
    /// Plane index of each row.
    id: Vec<usize>,
    d: Vec<DMatrix<T>>,
    l: Vec<Option<DMatrix<T>>>,
    u: Vec<Option<DMatrix<T>>>,
    f: Vec<DVector<T>>,
}

/// Solve `A x = f` by cyclic reduction with dense blocks.
///
/// Rows at even 0-based positions are eliminated at each level.
pub fn exact_cr_solve<T: Real>(sys: &BlockTridiagonalSystem<T>, f: &[T]) -> Result<Vec<T>> {
    if f.len() != sys.len() {
        return Err(AcrError::LengthMismatch { expected: sys.len(), got: f.len() });
    }
    let (nb, m) = (sys.nblocks(), sys.block_size());
    let diag_mat = |v: &[T]| DMatrix::from_diagonal(&DVector::from_column_slice(v));
    let rows = Rows {
        id: (0..nb).collect(),
        d: (0..nb).map(|i| sys.diag(i).to_dense()).collect(),
        l: (0..nb).map(|i| sys.lower(i).map(diag_mat)).collect(),
        u: (0..nb).map(|i| sys.upper(i).map(diag_mat)).collect(),
        f: (0..nb).map(|i| DVector::from_column_slice(&f[i * m..(i + 1) * m])).collect(),
    };
    let x = reduce(rows, 0, m)?;
    Ok(x.iter().flat_map(|v| v.iter().copied()).collect())
}

fn reduce<T: Real>(rows: Rows<T>, level: usize, m: usize) -> Result<Vec<DVector<T>>> {
    let n = rows.id.len();
    let mut lus: Vec<LU<T, Dyn, Dyn>> = Vec::with_capacity(n.div_ceil(2));
    for i in (0..n).step_by(2) {
        let lu = rows.d[i].clone().lu();
        if !lu.is_invertible() {
            let b = rows.id[i];
            return Err(
                AcrError::SingularPivot { level: None, block: None, lo: b * m, hi: (b + 1) * m }.at_block(level, b)
            );
        }
        lus.push(lu);
    }
    let solve = |i: usize, b: &DMatrix<T>| lus[i / 2].solve(b).expect("invertible");
    let solve_v = |i: usize, b: &DVector<T>| lus[i / 2].solve(b).expect("invertible");

    let mut next = Rows { id: Vec::new(), d: Vec::new(), l: Vec::new(), u: Vec::new(), f: Vec::new() };
    for j in (1..n).step_by(2) {
        let lj = rows.l[j].as_ref().expect("black rows have a left neighbor");
        let mut d = rows.d[j].clone();
        let mut f = rows.f[j].clone();
        d -= lj * solve(j - 1, rows.u[j - 1].as_ref().unwrap());
        f -= lj * solve_v(j - 1, &rows.f[j - 1]);
        let l = rows.l[j - 1].as_ref().map(|ll| -(lj * solve(j - 1, ll)));
        let mut u = None;
        if j + 1 < n {
            let uj = rows.u[j].as_ref().unwrap();
            d -= uj * solve(j + 1, rows.l[j + 1].as_ref().unwrap());
            f -= uj * solve_v(j + 1, &rows.f[j + 1]);
            u = rows.u[j + 1].as_ref().map(|uu| -(uj * solve(j + 1, uu)));
        }
        next.id.push(rows.id[j]);
        next.d.push(d);
        next.l.push(l);
        next.u.push(u);
        next.f.push(f);
    }
    let black = if next.id.is_empty() { Vec::new() } else { reduce(next, level + 1, m)? };

    let mut x = vec![DVector::zeros(0); n];
    for (k, xb) in black.into_iter().enumerate() {
        x[2 * k + 1] = xb;
    }
    for i in (0..n).step_by(2) {
        let mut r = rows.f[i].clone();
        if i > 0 {
            r -= rows.l[i].as_ref().unwrap() * &x[i - 1];
        }
        if i + 1 < n {
            r -= rows.u[i].as_ref().unwrap() * &x[i + 1];
        }
        x[i] = solve_v(i, &r);
    }
    Ok(x)
}
