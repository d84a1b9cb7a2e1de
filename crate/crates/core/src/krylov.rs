//! Preconditioned CG and left-preconditioned restarted GMRES.

use std::io::Write;

use nalgebra::DMatrix;

use crate::dense::{dot, norm2};
use crate::hmatrix::HMatrix;
use crate::problems::BlockTridiagonalSystem;
use crate::sparse::CsrMatrix;
use crate::{AcrError, Real, Result};

/// Square operator `y = A x`.
pub trait LinearOperator<T: Real> {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[T], y: &mut [T]) -> Result<()>;
}

/// The identity, used as "no preconditioner".
#[derive(Clone, Copy, Debug)]
pub struct Identity(pub usize);

impl<T: Real> LinearOperator<T> for Identity {
    fn dim(&self) -> usize {
        self.0
    }

    fn apply(&self, x: &[T], y: &mut [T]) -> Result<()> {
        check(self.0, x, y)?;
        y.copy_from_slice(x);
        Ok(())
    }
}

/// Wraps a closure `(x, y) -> y = A x`.
pub struct FnOperator<F> {
    dim: usize,
    f: F,
}

impl<F> FnOperator<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<T: Real, F: Fn(&[T], &mut [T])> LinearOperator<T> for FnOperator<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, x: &[T], y: &mut [T]) -> Result<()> {
        check(self.dim, x, y)?;
        (self.f)(x, y);
        Ok(())
    }
}

impl<T: Real> LinearOperator<T> for CsrMatrix<T> {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, x: &[T], y: &mut [T]) -> Result<()> {
        check(self.nrows(), x, y)?;
        self.mul_vec(x, y);
        Ok(())
    }
}

impl<T: Real> LinearOperator<T> for BlockTridiagonalSystem<T> {
    fn dim(&self) -> usize {
        self.len()
    }

    fn apply(&self, x: &[T], y: &mut [T]) -> Result<()> {
        check(self.len(), x, y)?;
        BlockTridiagonalSystem::apply(self, x, y);
        Ok(())
    }
}

impl<T: Real> LinearOperator<T> for DMatrix<T> {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, x: &[T], y: &mut [T]) -> Result<()> {
        check(self.nrows(), x, y)?;
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = (0..x.len()).fold(T::zero(), |acc, j| acc + self[(i, j)] * x[j]);
        }
        Ok(())
    }
}

impl<T: Real> LinearOperator<T> for HMatrix<T> {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, x: &[T], y: &mut [T]) -> Result<()> {
        check(self.nrows(), x, y)?;
        y.copy_from_slice(&self.matvec(x)?);
        Ok(())
    }
}

fn check<T>(n: usize, x: &[T], y: &[T]) -> Result<()> {
    if x.len() != n {
        return Err(AcrError::LengthMismatch { expected: n, got: x.len() });
    }
    if y.len() != n {
        return Err(AcrError::LengthMismatch { expected: n, got: y.len() });
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KrylovOptions {
    /// Target relative residual `||b - A x|| / ||b||`.
    pub tol: f64,
    pub max_iters: usize,
    /// GMRES restart length.
    pub restart: usize,
    /// Let [`cg`] switch to GMRES when it breaks down.
    pub gmres_fallback: bool,
}

impl Default for KrylovOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iters: 1000, restart: 30, gmres_fallback: false }
    }
}

impl KrylovOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(AcrError::InvalidInput(format!("tol must be > 0, got {}", self.tol)));
        }
        if self.restart == 0 {
            return Err(AcrError::InvalidInput("restart must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KrylovResult<T> {
    pub x: Vec<T>,
    pub iterations: usize,
    pub converged: bool,
    /// Relative residual after each iteration, starting with the initial
    /// one. CG records the true residual, GMRES the preconditioned one.
    pub history: Vec<f64>,
    /// `||b - A x|| / ||b||` recomputed for the returned `x`.
    pub relres: f64,
    /// Set when CG broke down and GMRES produced the result.
    pub fell_back: bool,
}

impl<T> KrylovResult<T> {
    pub fn write_history_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "iter,relres")?;
        for (i, r) in self.history.iter().enumerate() {
            writeln!(w, "{i},{r:e}")?;
        }
        Ok(())
    }
}

fn true_relres<T: Real, A: LinearOperator<T> + ?Sized>(a: &A, x: &[T], b: &[T], bnorm: f64) -> Result<(Vec<T>, f64)> {
    let mut r = vec![T::zero(); b.len()];
    a.apply(x, &mut r)?;
    for (ri, &bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    let rn = norm2(&r).as_f64();
    Ok((r, rn / bnorm))
}

fn setup<T: Real, A, M>(a: &A, m: &M, b: &[T], opts: &KrylovOptions) -> Result<f64>
where
    A: LinearOperator<T> + ?Sized,
    M: LinearOperator<T> + ?Sized,
{
    opts.validate()?;
    let n = a.dim();
    if b.len() != n {
        return Err(AcrError::LengthMismatch { expected: n, got: b.len() });
    }
    if m.dim() != n {
        return Err(AcrError::LengthMismatch { expected: n, got: m.dim() });
    }
    Ok(norm2(b).as_f64())
}

fn zero_rhs<T: Real>(n: usize) -> KrylovResult<T> {
    KrylovResult {
        x: vec![T::zero(); n],
        iterations: 0,
        converged: true,
        history: vec![0.0],
        relres: 0.0,
        fell_back: false,
    }
}

/// Preconditioned conjugate gradients from a zero initial guess.
pub fn cg<T: Real, A, M>(a: &A, m: &M, b: &[T], opts: &KrylovOptions) -> Result<KrylovResult<T>>
where
    A: LinearOperator<T> + ?Sized,
    M: LinearOperator<T> + ?Sized,
{
    let bnorm = setup(a, m, b, opts)?;
    let n = b.len();
    if bnorm == 0.0 {
        return Ok(zero_rhs(n));
    }
    match cg_inner(a, m, b, opts, bnorm) {
        Err(AcrError::Breakdown { .. }) if opts.gmres_fallback => {
            let mut res = gmres(a, m, b, opts)?;
            res.fell_back = true;
            Ok(res)
        }
        other => other,
    }
}

// Negated comparisons so that NaN also counts as breakdown.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
fn cg_inner<T: Real, A, M>(a: &A, m: &M, b: &[T], opts: &KrylovOptions, bnorm: f64) -> Result<KrylovResult<T>>
where
    A: LinearOperator<T> + ?Sized,
    M: LinearOperator<T> + ?Sized,
{
    let n = b.len();
    let mut x = vec![T::zero(); n];
    let mut r = b.to_vec();
    let mut z = vec![T::zero(); n];
    let mut q = vec![T::zero(); n];
    m.apply(&r, &mut z)?;
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut history = vec![1.0];
    let mut it = 0;
    let mut converged = false;
    while it < opts.max_iters {
        a.apply(&p, &mut q)?;
        let pq = dot(&p, &q);
        if !(pq > T::zero()) {
            return Err(AcrError::Breakdown { iteration: it + 1, reason: "p^T A p <= 0" });
        }
        let alpha = rz / pq;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * q[i];
        }
        it += 1;
        let mut rel = norm2(&r).as_f64() / bnorm;
        if rel <= opts.tol {
            // confirm on the true residual before stopping
            let (rt, t) = true_relres(a, &x, b, bnorm)?;
            rel = t;
            r = rt;
            if t <= opts.tol {
                history.push(rel);
                converged = true;
                break;
            }
        }
        history.push(rel);
        m.apply(&r, &mut z)?;
        let rz_new = dot(&r, &z);
        if !(rz_new > T::zero()) {
            return Err(AcrError::Breakdown { iteration: it, reason: "r^T M r <= 0" });
        }
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let (_, relres) = true_relres(a, &x, b, bnorm)?;
    Ok(KrylovResult { x, iterations: it, converged, history, relres, fell_back: false })
}

/// Left-preconditioned GMRES(`restart`) with modified Gram-Schmidt, from a
/// zero initial guess.
///
/// Convergence is decided on the true residual, checked whenever the
/// preconditioned estimate predicts it has reached `tol` and at restarts.
pub fn gmres<T: Real, A, M>(a: &A, m: &M, b: &[T], opts: &KrylovOptions) -> Result<KrylovResult<T>>
where
    A: LinearOperator<T> + ?Sized,
    M: LinearOperator<T> + ?Sized,
{
    let bnorm = setup(a, m, b, opts)?;
    let n = b.len();
    if bnorm == 0.0 {
        return Ok(zero_rhs(n));
    }
    let mut mb = vec![T::zero(); n];
    m.apply(b, &mut mb)?;
    let mbnorm = norm2(&mb).as_f64();
    if mbnorm == 0.0 {
        return Err(AcrError::Breakdown { iteration: 0, reason: "preconditioner maps b to zero" });
    }

    let k = opts.restart;
    let mut x = vec![T::zero(); n];
    let mut history = vec![1.0];
    let mut it = 0;
    let mut tmp = vec![T::zero(); n];
    loop {
        let (r, rel) = true_relres(a, &x, b, bnorm)?;
        if rel <= opts.tol {
            return Ok(KrylovResult { x, iterations: it, converged: true, history, relres: rel, fell_back: false });
        }
        if it >= opts.max_iters {
            return Ok(KrylovResult { x, iterations: it, converged: false, history, relres: rel, fell_back: false });
        }
        let mut v0 = vec![T::zero(); n];
        m.apply(&r, &mut v0)?;
        let beta = norm2(&v0);
        if beta == T::zero() {
            return Err(AcrError::Breakdown { iteration: it, reason: "preconditioned residual vanished" });
        }
        // ratio of true to preconditioned residual, to translate the target
        let ratio = rel * bnorm / beta.as_f64();
        let inv = T::one() / beta;
        v0.iter_mut().for_each(|v| *v *= inv);

        let mut basis = vec![v0];
        let mut hess = DMatrix::<T>::zeros(k + 1, k);
        let (mut cs, mut sn) = (vec![T::zero(); k], vec![T::zero(); k]);
        let mut g = vec![T::zero(); k + 1];
        g[0] = beta;
        let mut steps = 0;
        while steps < k && it < opts.max_iters {
            let j = steps;
            a.apply(&basis[j], &mut tmp)?;
            let mut w = vec![T::zero(); n];
            m.apply(&tmp, &mut w)?;
            for (i, vi) in basis.iter().enumerate() {
                let hij = dot(&w, vi);
                hess[(i, j)] = hij;
                for (wl, &vl) in w.iter_mut().zip(vi) {
                    *wl -= hij * vl;
                }
            }
            let hnext = norm2(&w);
            hess[(j + 1, j)] = hnext;
            for i in 0..j {
                let (h0, h1) = (hess[(i, j)], hess[(i + 1, j)]);
                hess[(i, j)] = cs[i] * h0 + sn[i] * h1;
                hess[(i + 1, j)] = -sn[i] * h0 + cs[i] * h1;
            }
            let (h0, h1) = (hess[(j, j)], hess[(j + 1, j)]);
            let rho = (h0 * h0 + h1 * h1).sqrt();
            if rho == T::zero() {
                return Err(AcrError::Breakdown { iteration: it + 1, reason: "singular Hessenberg matrix" });
            }
            cs[j] = h0 / rho;
            sn[j] = h1 / rho;
            hess[(j, j)] = rho;
            hess[(j + 1, j)] = T::zero();
            g[j + 1] = -sn[j] * g[j];
            g[j] = cs[j] * g[j];
            steps += 1;
            it += 1;
            let est = g[j + 1].abs().as_f64();
            history.push(est / mbnorm);
            let happy = hnext.as_f64() <= 1e-14 * rho.as_f64();
            if happy || est * ratio <= opts.tol * bnorm {
                break;
            }
            let inv = T::one() / hnext;
            w.iter_mut().for_each(|v| *v *= inv);
            basis.push(w);
        }
        // back substitution on the triangularized Hessenberg system
        let mut y = vec![T::zero(); steps];
        for i in (0..steps).rev() {
            let s = ((i + 1)..steps).fold(g[i], |acc, l| acc - hess[(i, l)] * y[l]);
            y[i] = s / hess[(i, i)];
        }
        for (yi, vi) in y.iter().zip(&basis) {
            for (xl, &vl) in x.iter_mut().zip(vi) {
                *xl += *yi * vl;
            }
        }
    }
}
