//! Truncated H-arithmetic on square matrices sharing one cluster tree.
//!
//! Products and sums keep the block structure of the target; every update of
//! a low-rank leaf is re-truncated to the requested accuracy.

use std::sync::Arc;

use nalgebra::{DMatrix, DMatrixView};

use super::{gemm_acc, HMatrix, HNode};
use crate::cluster::{BlockKind, ClusterTree};
use crate::lowrank::{svd_truncate, truncate_factors, LowRankBlock};
use crate::{AcrError, Real, Result};

/// Low-rank leaves accumulate updates until their rank exceeds
/// `min(rows, cols) / LAZY_DIV`.
const LAZY_DIV: usize = 4;

pub(crate) struct Arith<'a> {
    tree: &'a ClusterTree,
    bt: &'a crate::cluster::BlockTree,
    eps: f64,
}

impl<'a> Arith<'a> {
    pub(crate) fn new(bt: &'a crate::cluster::BlockTree, eps: f64) -> Self {
        Self { tree: bt.row_tree(), bt, eps }
    }

    fn len(&self, c: usize) -> usize {
        self.tree.node(c).len()
    }

    fn kids(&self, c: usize) -> [usize; 2] {
        self.tree.node(c).children.expect("subdivided cluster")
    }

    fn offset(&self, child: usize, parent: usize) -> usize {
        self.tree.node(child).lo - self.tree.node(parent).lo
    }

    pub(crate) fn zeros<T: Real>(&self, r: usize, c: usize) -> HNode<T> {
        match self.bt.classify(r, c) {
            BlockKind::Dense => HNode::Dense(DMatrix::zeros(self.len(r), self.len(c))),
            BlockKind::LowRank => HNode::LowRank(LowRankBlock::zeros(self.len(r), self.len(c))),
            BlockKind::Subdivided => {
                let [r0, r1] = self.kids(r);
                let [c0, c1] = self.kids(c);
                HNode::Sub(Box::new([self.zeros(r0, c0), self.zeros(r0, c1), self.zeros(r1, c0), self.zeros(r1, c1)]))
            }
        }
    }

    /// `y += alpha op(node) x`.
    #[allow(clippy::too_many_arguments)]
    fn gemm<T: Real>(
        &self,
        alpha: T,
        node: &HNode<T>,
        r: usize,
        c: usize,
        trans: bool,
        x: &DMatrix<T>,
        y: &mut DMatrix<T>,
    ) {
        gemm_acc(self.tree, self.tree, alpha, node, r, c, trans, x.as_view(), y.as_view_mut());
    }

    /// Dense copy of a node.
    fn densify<T: Real>(&self, node: &HNode<T>, r: usize, c: usize) -> DMatrix<T> {
        match node {
            HNode::Dense(d) => d.clone(),
            HNode::LowRank(l) => l.to_dense(),
            HNode::Sub(_) => {
                let eye = DMatrix::identity(self.len(c), self.len(c));
                let mut out = DMatrix::zeros(self.len(r), self.len(c));
                self.gemm(T::one(), node, r, c, false, &eye, &mut out);
                out
            }
        }
    }

    /// `c += u v^T`, truncating every touched low-rank leaf.
    fn add_lowrank<T: Real>(&self, c: &mut HNode<T>, r: usize, t: usize, u: DMatrix<T>, v: DMatrix<T>) {
        if u.ncols() == 0 {
            return;
        }
        match c {
            HNode::Dense(d) => d.gemm(T::one(), &u, &crate::dense::tview(&v), T::one()),
            HNode::LowRank(l) => {
                let k = l.rank() + u.ncols();
                if 2 * k >= l.rows().min(l.cols()) {
                    // factors no longer pay off: accumulate densely until finalize
                    let mut d = l.to_dense();
                    d.gemm(T::one(), &u, &crate::dense::tview(&v), T::one());
                    *c = HNode::Dense(d);
                    return;
                }
                let add = LowRankBlock::new(u, v).expect("matching ranks");
                let (su, sv) = crate::lowrank::stack_factors(l, &add);
                // defer truncation while the stacked rank stays small
                *l = if LAZY_DIV * k < l.rows().min(l.cols()) {
                    LowRankBlock::untruncated(su, sv)
                } else {
                    truncate_factors(su, sv, self.eps)
                };
            }
            HNode::Sub(ch) => {
                let [r0, r1] = self.kids(r);
                let [t0, t1] = self.kids(t);
                for (child, (ri, ti)) in ch.iter_mut().zip([(r0, t0), (r0, t1), (r1, t0), (r1, t1)]) {
                    let us = u.rows(self.offset(ri, r), self.len(ri)).into_owned();
                    let vs = v.rows(self.offset(ti, t), self.len(ti)).into_owned();
                    self.add_lowrank(child, ri, ti, us, vs);
                }
            }
        }
    }

    /// Truncate every low-rank leaf with deferred updates and compress
    /// leaves that were accumulated densely.
    pub(crate) fn finalize<T: Real>(&self, node: &mut HNode<T>, r: usize, t: usize) {
        match node {
            HNode::Dense(d) => {
                if self.bt.classify(r, t) == BlockKind::LowRank {
                    let d = std::mem::replace(d, DMatrix::zeros(0, 0));
                    *node = HNode::LowRank(svd_truncate(d, self.eps));
                }
            }
            HNode::LowRank(l) => {
                if l.is_pending() {
                    let (u, v) = std::mem::replace(l, LowRankBlock::zeros(0, 0)).into_factors();
                    *l = truncate_factors(u, v, self.eps);
                }
            }
            HNode::Sub(ch) => {
                let [r0, r1] = self.kids(r);
                let [t0, t1] = self.kids(t);
                for (child, (ri, ti)) in ch.iter_mut().zip([(r0, t0), (r0, t1), (r1, t0), (r1, t1)]) {
                    self.finalize(child, ri, ti);
                }
            }
        }
    }

    /// Collapse a node into a single truncated low-rank block.
    fn to_lowrank<T: Real>(&self, node: HNode<T>, r: usize, t: usize) -> LowRankBlock<T> {
        match node {
            HNode::LowRank(l) if l.is_pending() => {
                let (u, v) = l.into_factors();
                truncate_factors(u, v, self.eps)
            }
            HNode::LowRank(l) => l,
            HNode::Dense(d) => svd_truncate(d, self.eps),
            HNode::Sub(ch) => {
                let [r0, r1] = self.kids(r);
                let [t0, t1] = self.kids(t);
                let pairs = [(r0, t0), (r0, t1), (r1, t0), (r1, t1)];
                let parts: Vec<LowRankBlock<T>> = ch
                    .into_iter()
                    .zip(pairs)
                    .map(|(child, (ri, ti))| match child {
                        // stacked below and truncated once
                        HNode::LowRank(l) => l,
                        other => self.to_lowrank(other, ri, ti),
                    })
                    .collect();
                let k: usize = parts.iter().map(|p| p.rank()).sum();
                let mut u = DMatrix::zeros(self.len(r), k);
                let mut v = DMatrix::zeros(self.len(t), k);
                let mut off = 0;
                for (p, (ri, ti)) in parts.iter().zip(pairs) {
                    let kp = p.rank();
                    u.view_mut((self.offset(ri, r), off), (self.len(ri), kp)).copy_from(p.u());
                    v.view_mut((self.offset(ti, t), off), (self.len(ti), kp)).copy_from(p.v());
                    off += kp;
                }
                truncate_factors(u, v, self.eps)
            }
        }
    }

    /// Split a low-rank block along the cluster children (no truncation).
    fn split<T: Real>(&self, l: &LowRankBlock<T>, r: usize, t: usize) -> HNode<T> {
        let [r0, r1] = self.kids(r);
        let [t0, t1] = self.kids(t);
        let part = |ri: usize, ti: usize| {
            let u = l.u().rows(self.offset(ri, r), self.len(ri)).into_owned();
            let v = l.v().rows(self.offset(ti, t), self.len(ti)).into_owned();
            HNode::LowRank(LowRankBlock::new(u, v).expect("matching ranks"))
        };
        HNode::Sub(Box::new([part(r0, t0), part(r0, t1), part(r1, t0), part(r1, t1)]))
    }

    /// `c += alpha * a * b` with `a: (r,s)`, `b: (s,t)`, `c: (r,t)`.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn mul_add<T: Real>(
        &self,
        alpha: T,
        a: &HNode<T>,
        b: &HNode<T>,
        c: &mut HNode<T>,
        r: usize,
        s: usize,
        t: usize,
    ) {
        let (nr, ns, nt) = (self.len(r), self.len(s), self.len(t));
        match (a, b) {
            (HNode::LowRank(la), _) => {
                if la.rank() == 0 {
                    return;
                }
                // U (B^T V)^T
                let mut z = DMatrix::zeros(nt, la.rank());
                self.gemm(T::one(), b, s, t, true, la.v(), &mut z);
                self.add_lowrank(c, r, t, la.u() * alpha, z);
            }
            (_, HNode::LowRank(lb)) => {
                if lb.rank() == 0 {
                    return;
                }
                let mut y = DMatrix::zeros(nr, lb.rank());
                self.gemm(alpha, a, r, s, false, lb.u(), &mut y);
                self.add_lowrank(c, r, t, y, lb.v().clone());
            }
            (HNode::Dense(da), HNode::Dense(db)) => match c {
                HNode::Dense(dc) => dc.gemm(alpha, da, db, T::one()),
                _ if ns <= nr.min(nt) => self.add_lowrank(c, r, t, da * alpha, db.transpose()),
                _ => {
                    let mut p = DMatrix::zeros(nr, nt);
                    p.gemm(alpha, da, db, T::zero());
                    self.add_dense_product(c, r, t, p);
                }
            },
            (HNode::Dense(da), HNode::Sub(_)) => {
                // row cluster is a leaf here: form (B^T A^T)^T
                let at = da.transpose();
                let mut z = DMatrix::zeros(nt, nr);
                self.gemm(alpha, b, s, t, true, &at, &mut z);
                match c {
                    HNode::Dense(dc) => *dc += z.transpose(),
                    _ => self.add_lowrank(c, r, t, DMatrix::identity(nr, nr), z),
                }
            }
            (HNode::Sub(_), HNode::Dense(db)) => {
                let mut y = DMatrix::zeros(nr, nt);
                self.gemm(alpha, a, r, s, false, db, &mut y);
                self.add_dense_product(c, r, t, y);
            }
            (HNode::Sub(ca), HNode::Sub(cb)) => match c {
                HNode::Sub(cc) => {
                    let [r0, r1] = self.kids(r);
                    let [s0, s1] = self.kids(s);
                    let [t0, t1] = self.kids(t);
                    let (rr, ss, tt) = ([r0, r1], [s0, s1], [t0, t1]);
                    for i in 0..2 {
                        for j in 0..2 {
                            for k in 0..2 {
                                self.mul_add(
                                    alpha,
                                    &ca[2 * i + k],
                                    &cb[2 * k + j],
                                    &mut cc[2 * i + j],
                                    rr[i],
                                    ss[k],
                                    tt[j],
                                );
                            }
                        }
                    }
                }
                HNode::LowRank(lc) => {
                    let mut tmp = self.split(lc, r, t);
                    self.mul_add(alpha, a, b, &mut tmp, r, s, t);
                    *c = HNode::LowRank(self.to_lowrank(tmp, r, t));
                }
                HNode::Dense(dc) => {
                    let db = self.densify(b, s, t);
                    let mut y = DMatrix::zeros(nr, nt);
                    self.gemm(alpha, a, r, s, false, &db, &mut y);
                    *dc += y;
                }
            },
        }
    }

    /// Add a dense `|r| x |t|` product whose smaller side is a leaf cluster.
    fn add_dense_product<T: Real>(&self, c: &mut HNode<T>, r: usize, t: usize, p: DMatrix<T>) {
        match c {
            HNode::Dense(dc) => *dc += p,
            _ => {
                let (nr, nt) = p.shape();
                if nr <= nt {
                    self.add_lowrank(c, r, t, DMatrix::identity(nr, nr), p.transpose());
                } else {
                    self.add_lowrank(c, r, t, p, DMatrix::identity(nt, nt));
                }
            }
        }
    }

    /// `c += alpha * a` for nodes over the same block.
    pub(crate) fn add_node<T: Real>(&self, alpha: T, a: &HNode<T>, c: &mut HNode<T>, r: usize, t: usize) {
        match (a, &mut *c) {
            (HNode::Dense(da), HNode::Dense(dc)) => *dc += da * alpha,
            (HNode::LowRank(la), _) => self.add_lowrank(c, r, t, la.u() * alpha, la.v().clone()),
            (HNode::Sub(ca), HNode::Sub(cc)) => {
                let [r0, r1] = self.kids(r);
                let [t0, t1] = self.kids(t);
                for (k, (ri, ti)) in [(r0, t0), (r0, t1), (r1, t0), (r1, t1)].into_iter().enumerate() {
                    self.add_node(alpha, &ca[k], &mut cc[k], ri, ti);
                }
            }
            (_, HNode::Dense(dc)) => *dc += self.densify(a, r, t) * alpha,
            (_, HNode::LowRank(lc)) => {
                let sum = lc.to_dense() + self.densify(a, r, t) * alpha;
                *c = HNode::Dense(sum);
            }
            (HNode::Dense(da), HNode::Sub(_)) => {
                let (nr, nt) = da.shape();
                if nr <= nt {
                    self.add_lowrank(c, r, t, DMatrix::identity(nr, nr), da.transpose() * alpha);
                } else {
                    self.add_lowrank(c, r, t, da * alpha, DMatrix::identity(nt, nt));
                }
            }
        }
    }

    /// Recursive 2x2 block inversion of a diagonal node.
    pub(crate) fn invert<T: Real>(&self, a: HNode<T>, r: usize) -> Result<HNode<T>> {
        let node = self.tree.node(r);
        let singular = || AcrError::SingularPivot { level: None, block: None, lo: node.lo, hi: node.hi };
        match a {
            HNode::Dense(d) => {
                let inv = d.lu().try_inverse().ok_or_else(singular)?;
                if inv.iter().any(|x| !x.is_finite()) {
                    return Err(singular());
                }
                Ok(HNode::Dense(inv))
            }
            HNode::LowRank(_) => Err(singular()),
            HNode::Sub(ch) => {
                let [r1, r2] = self.kids(r);
                let [a11, a12, a21, a22] = *ch;
                let one = T::one();
                let mut x11 = self.invert(a11, r1)?;
                let mut t21 = self.zeros(r2, r1);
                self.mul_add(one, &a21, &x11, &mut t21, r2, r1, r1);
                self.finalize(&mut t21, r2, r1);
                let mut schur = a22;
                self.mul_add(-one, &t21, &a12, &mut schur, r2, r1, r2);
                self.finalize(&mut schur, r2, r2);
                let x22 = self.invert(schur, r2)?;
                let mut t12 = self.zeros(r1, r2);
                self.mul_add(one, &x11, &a12, &mut t12, r1, r1, r2);
                self.finalize(&mut t12, r1, r2);
                let mut x12 = self.zeros(r1, r2);
                self.mul_add(-one, &t12, &x22, &mut x12, r1, r2, r2);
                self.finalize(&mut x12, r1, r2);
                let mut x21 = self.zeros(r2, r1);
                self.mul_add(-one, &x22, &t21, &mut x21, r2, r2, r1);
                self.finalize(&mut x21, r2, r1);
                self.mul_add(-one, &x12, &t21, &mut x11, r1, r2, r1);
                self.finalize(&mut x11, r1, r1);
                Ok(HNode::Sub(Box::new([x11, x12, x21, x22])))
            }
        }
    }
}

fn check_square<T: Real>(a: &HMatrix<T>) -> Result<()> {
    if a.structure.is_square() {
        Ok(())
    } else {
        Err(AcrError::TreeMismatch)
    }
}

fn check_pair<T: Real>(a: &HMatrix<T>, b: &HMatrix<T>) -> Result<()> {
    check_square(a)?;
    if a.structure.same_structure(&b.structure) {
        Ok(())
    } else {
        Err(AcrError::TreeMismatch)
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if eps.is_finite() && eps >= 0.0 {
        Ok(())
    } else {
        Err(AcrError::InvalidInput(format!("tolerance must be >= 0, got {eps}")))
    }
}

/// Truncated sum `a + b`.
pub fn h_add<T: Real>(a: &HMatrix<T>, b: &HMatrix<T>, eps: f64) -> Result<HMatrix<T>> {
    let mut c = a.clone();
    c.add_scaled(T::one(), b, eps)?;
    Ok(c)
}

/// Truncated product `a * b`, stored in the common block structure.
pub fn h_mul<T: Real>(a: &HMatrix<T>, b: &HMatrix<T>, eps: f64) -> Result<HMatrix<T>> {
    let mut c = HMatrix::zeros(a.structure.clone());
    c.mul_add(T::one(), a, b, eps)?;
    Ok(c)
}

/// Approximate inverse by recursive block elimination without pivoting
/// between blocks; dense diagonal leaves use partially pivoted LU.
pub fn h_invert<T: Real>(a: &HMatrix<T>, eps: f64) -> Result<HMatrix<T>> {
    a.clone().into_inverse(eps)
}

impl<T: Real> HMatrix<T> {
    /// `self += alpha * a * b`.
    pub fn mul_add(&mut self, alpha: T, a: &HMatrix<T>, b: &HMatrix<T>, eps: f64) -> Result<()> {
        check_eps(eps)?;
        check_pair(a, b)?;
        check_pair(a, self)?;
        let root = ClusterTree::ROOT;
        let ar = Arith::new(&a.structure, eps);
        ar.mul_add(alpha, &a.root, &b.root, &mut self.root, root, root, root);
        ar.finalize(&mut self.root, root, root);
        Ok(())
    }

    /// `self += alpha * a`.
    pub fn add_scaled(&mut self, alpha: T, a: &HMatrix<T>, eps: f64) -> Result<()> {
        check_eps(eps)?;
        check_pair(self, a)?;
        let root = ClusterTree::ROOT;
        let ar = Arith::new(&self.structure, eps);
        ar.add_node(alpha, &a.root, &mut self.root, root, root);
        ar.finalize(&mut self.root, root, root);
        Ok(())
    }

    pub fn into_inverse(self, eps: f64) -> Result<HMatrix<T>> {
        check_eps(eps)?;
        check_square(&self)?;
        let structure: Arc<_> = self.structure;
        let root = Arith::new(&structure, eps).invert(self.root, ClusterTree::ROOT)?;
        Ok(HMatrix::from_parts(structure, root))
    }

    /// `y += alpha H x` for a block of column vectors in tree numbering.
    pub fn gemm_tree(&self, alpha: T, x: DMatrixView<'_, T>, y: nalgebra::DMatrixViewMut<'_, T>) {
        let (rt, ct) = (self.structure.row_tree(), self.structure.col_tree());
        gemm_acc(rt, ct, alpha, &self.root, ClusterTree::ROOT, ClusterTree::ROOT, false, x, y);
    }
}
