//! Hierarchical matrices over a block cluster tree.
//!
//! Leaves are dense blocks or `U V^T` factorizations; inner nodes split into
//! the 2x2 product of the row and column cluster children. All vectors passed
//! to the public API use the original point numbering; the internal storage
//! uses the cluster-tree ordering so that every node maps to contiguous rows
//! and columns.

mod arith;

use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DMatrixView, DMatrixViewMut};

use crate::cluster::{BlockKind, BlockTree, ClusterTree};
use crate::dense::gemm_tn;
use crate::lowrank::{truncated_svd, LowRankBlock};
use crate::sparse::CsrMatrix;
use crate::{AcrError, Real, Result};

pub use arith::{h_add, h_invert, h_mul};

/// Block payload, mirroring the block cluster tree.
#[derive(Clone, Debug)]
pub enum HNode<T: Real> {
    Dense(DMatrix<T>),
    LowRank(LowRankBlock<T>),
    /// Children ordered `(r0,c0), (r0,c1), (r1,c0), (r1,c1)`.
    Sub(Box<[HNode<T>; 4]>),
}

#[derive(Clone, Debug)]
pub struct HMatrix<T: Real> {
    structure: Arc<BlockTree>,
    root: HNode<T>,
}

/// One leaf of an H-matrix, in tree-ordered index ranges.
#[derive(Clone, Debug, PartialEq)]
pub struct LeafInfo {
    pub rows: std::ops::Range<usize>,
    pub cols: std::ops::Range<usize>,
    pub kind: BlockKind,
    /// Zero for dense leaves.
    pub rank: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RankStats {
    pub max_rank: usize,
    /// Mean rank over low-rank leaves (0 when there are none).
    pub avg_rank: f64,
    pub lowrank_leaves: usize,
    rank_sum: usize,
}

impl RankStats {
    pub fn merge(&mut self, other: &RankStats) {
        self.max_rank = self.max_rank.max(other.max_rank);
        self.rank_sum += other.rank_sum;
        self.lowrank_leaves += other.lowrank_leaves;
        self.avg_rank = if self.lowrank_leaves == 0 { 0.0 } else { self.rank_sum as f64 / self.lowrank_leaves as f64 };
    }

    fn push(&mut self, rank: usize) {
        self.merge(&RankStats { max_rank: rank, avg_rank: rank as f64, lowrank_leaves: 1, rank_sum: rank });
    }
}

impl<T: Real> HMatrix<T> {
    pub(crate) fn from_parts(structure: Arc<BlockTree>, root: HNode<T>) -> Self {
        Self { structure, root }
    }

    pub fn structure(&self) -> &Arc<BlockTree> {
        &self.structure
    }

    pub fn root(&self) -> &HNode<T> {
        &self.root
    }

    pub fn nrows(&self) -> usize {
        self.structure.row_tree().size()
    }

    pub fn ncols(&self) -> usize {
        self.structure.col_tree().size()
    }

    pub fn epsilon(&self) -> f64 {
        self.structure.opts().epsilon
    }

    /// All-zero matrix: zero dense leaves, rank-0 low-rank leaves.
    pub fn zeros(structure: Arc<BlockTree>) -> Self {
        let root = zero_node(&structure, BlockTree::ROOT);
        Self { structure, root }
    }

    pub fn identity(structure: Arc<BlockTree>) -> Result<Self> {
        let n = structure.row_tree().size();
        Self::from_diagonal(structure, &vec![T::one(); n])
    }

    /// Exact H-form of a diagonal matrix (given in original numbering).
    pub fn from_diagonal(structure: Arc<BlockTree>, diag: &[T]) -> Result<Self> {
        let n = structure.row_tree().size();
        if diag.len() != n || structure.col_tree().size() != n {
            return Err(AcrError::LengthMismatch { expected: n, got: diag.len() });
        }
        let trip: Vec<_> = diag.iter().enumerate().map(|(i, &d)| (i, i, d)).collect();
        Self::assemble_sparse(&CsrMatrix::from_triplets(n, n, &trip)?, structure)
    }

    /// Assemble from an entry oracle `(i, j) -> a_ij` in original numbering.
    ///
    /// Dense leaves are filled exactly; low-rank leaves are materialized and
    /// truncated at the structure's epsilon.
    pub fn assemble<F>(entry: F, structure: Arc<BlockTree>) -> Result<Self>
    where
        F: Fn(usize, usize) -> T,
    {
        let eps = structure.opts().epsilon;
        let root = assemble_node(&structure, BlockTree::ROOT, &entry, eps)?;
        Ok(Self { structure, root })
    }

    /// Assemble a sparse operator; low-rank leaves only touch the nonzero
    /// rows and columns of their block.
    pub fn assemble_sparse(a: &CsrMatrix<T>, structure: Arc<BlockTree>) -> Result<Self> {
        let (rt, ct) = (structure.row_tree(), structure.col_tree());
        if a.nrows() != rt.size() || a.ncols() != ct.size() {
            return Err(AcrError::ShapeMismatch { expected: (rt.size(), ct.size()), got: (a.nrows(), a.ncols()) });
        }
        if a.triplets().any(|(_, _, v)| !v.is_finite()) {
            return Err(AcrError::InvalidInput("non-finite matrix entry".into()));
        }
        let (ri, ci) = (rt.inverse_perm(), ct.inverse_perm());
        let entries: Vec<(usize, usize, T)> = a.triplets().map(|(r, c, v)| (ri[r], ci[c], v)).collect();
        let eps = structure.opts().epsilon;
        let root = sparse_node(&structure, BlockTree::ROOT, entries, eps)?;
        Ok(Self { structure, root })
    }

    /// `y = H x` in original numbering.
    pub fn matvec(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.ncols() {
            return Err(AcrError::LengthMismatch { expected: self.ncols(), got: x.len() });
        }
        let xt = self.structure.col_tree().to_tree_order(x);
        let mut yt = vec![T::zero(); self.nrows()];
        self.apply_tree(T::one(), &xt, &mut yt);
        Ok(self.structure.row_tree().to_original_order(&yt))
    }

    /// `y += alpha H x` with both vectors in tree numbering.
    pub fn apply_tree(&self, alpha: T, x: &[T], y: &mut [T]) {
        assert_eq!(x.len(), self.ncols());
        assert_eq!(y.len(), self.nrows());
        let xv = DMatrixView::from_slice(x, x.len(), 1);
        let yv = DMatrixViewMut::from_slice(y, self.nrows(), 1);
        gemm_acc(
            self.structure.row_tree(),
            self.structure.col_tree(),
            alpha,
            &self.root,
            ClusterTree::ROOT,
            ClusterTree::ROOT,
            false,
            xv,
            yv,
        );
    }

    /// Dense copy in tree numbering.
    pub fn to_dense_tree(&self) -> DMatrix<T> {
        let mut out = DMatrix::zeros(self.nrows(), self.ncols());
        for (leaf, node) in self.leaf_nodes() {
            let mut dst = out.view_mut((leaf.rows.start, leaf.cols.start), (leaf.rows.len(), leaf.cols.len()));
            match node {
                HNode::Dense(d) => dst.copy_from(d),
                HNode::LowRank(l) => dst.copy_from(&l.to_dense()),
                HNode::Sub(_) => unreachable!(),
            }
        }
        out
    }

    /// Dense copy in original numbering.
    pub fn to_dense(&self) -> DMatrix<T> {
        let t = self.to_dense_tree();
        let (rp, cp) = (self.structure.row_tree().inverse_perm(), self.structure.col_tree().inverse_perm());
        DMatrix::from_fn(self.nrows(), self.ncols(), |i, j| t[(rp[i], cp[j])])
    }

    pub fn leaves(&self) -> Vec<LeafInfo> {
        self.leaf_nodes().into_iter().map(|(l, _)| l).collect()
    }

    fn leaf_nodes(&self) -> Vec<(LeafInfo, &HNode<T>)> {
        let mut out = Vec::new();
        collect_leaves(&self.structure, &self.root, ClusterTree::ROOT, ClusterTree::ROOT, &mut out);
        out
    }

    /// Storage in bytes over all leaves.
    pub fn footprint(&self) -> usize {
        self.leaf_nodes()
            .iter()
            .map(|(_, n)| match n {
                HNode::Dense(d) => std::mem::size_of::<T>() * d.len(),
                HNode::LowRank(l) => l.bytes(),
                HNode::Sub(_) => 0,
            })
            .sum()
    }

    /// Bytes the same matrix would take stored densely.
    pub fn dense_bytes(&self) -> usize {
        std::mem::size_of::<T>() * self.nrows() * self.ncols()
    }

    pub fn rank_stats(&self) -> RankStats {
        let mut stats = RankStats::default();
        for (leaf, _) in self.leaf_nodes() {
            if leaf.kind == BlockKind::LowRank {
                stats.push(leaf.rank);
            }
        }
        stats
    }

    pub fn scale(&mut self, alpha: T) {
        scale_node(&mut self.root, alpha);
    }

    /// `diag(left) * H * diag(right)` with the diagonals in tree numbering.
    pub fn scale_diag(&mut self, left: Option<&[T]>, right: Option<&[T]>) {
        scale_diag_node(&self.structure, &mut self.root, ClusterTree::ROOT, ClusterTree::ROOT, left, right);
    }

    /// One CSV record per leaf: tree-ordered ranges, kind and rank.
    pub fn write_structure_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "row_lo,row_hi,col_lo,col_hi,kind,rank")?;
        for leaf in self.leaves() {
            let kind = match leaf.kind {
                BlockKind::Dense => "dense",
                BlockKind::LowRank => "lowrank",
                BlockKind::Subdivided => "subdivided",
            };
            writeln!(
                w,
                "{},{},{},{},{},{}",
                leaf.rows.start, leaf.rows.end, leaf.cols.start, leaf.cols.end, kind, leaf.rank
            )?;
        }
        Ok(())
    }
}

/// Free-standing matvec in original numbering.
pub fn h_matvec<T: Real>(h: &HMatrix<T>, x: &[T]) -> Result<Vec<T>> {
    h.matvec(x)
}

pub fn footprint<T: Real>(h: &HMatrix<T>) -> usize {
    h.footprint()
}

pub fn rank_stats<T: Real>(h: &HMatrix<T>) -> RankStats {
    h.rank_stats()
}

fn scale_node<T: Real>(node: &mut HNode<T>, alpha: T) {
    match node {
        HNode::Dense(d) => *d *= alpha,
        HNode::LowRank(l) => l.scale(alpha),
        HNode::Sub(ch) => ch.iter_mut().for_each(|c| scale_node(c, alpha)),
    }
}

fn scale_diag_node<T: Real>(
    bt: &BlockTree,
    node: &mut HNode<T>,
    r: usize,
    c: usize,
    left: Option<&[T]>,
    right: Option<&[T]>,
) {
    let (rn, cn) = (bt.row_tree().node(r), bt.col_tree().node(c));
    let l = left.map(|l| &l[rn.lo..rn.hi]);
    let rr = right.map(|r| &r[cn.lo..cn.hi]);
    match node {
        HNode::Dense(d) => {
            for j in 0..d.ncols() {
                for i in 0..d.nrows() {
                    let s = l.map_or(T::one(), |l| l[i]) * rr.map_or(T::one(), |r| r[j]);
                    d[(i, j)] *= s;
                }
            }
        }
        HNode::LowRank(b) => b.scale_diag(l, rr),
        HNode::Sub(ch) => {
            let [r0, r1] = rn.children.expect("subdivided row cluster");
            let [c0, c1] = cn.children.expect("subdivided col cluster");
            for (child, (ri, ci)) in ch.iter_mut().zip([(r0, c0), (r0, c1), (r1, c0), (r1, c1)]) {
                scale_diag_node(bt, child, ri, ci, left, right);
            }
        }
    }
}

fn collect_leaves<'a, T: Real>(
    bt: &BlockTree,
    node: &'a HNode<T>,
    r: usize,
    c: usize,
    out: &mut Vec<(LeafInfo, &'a HNode<T>)>,
) {
    let (rn, cn) = (bt.row_tree().node(r), bt.col_tree().node(c));
    let (kind, rank) = match node {
        HNode::Dense(_) => (BlockKind::Dense, 0),
        HNode::LowRank(l) => (BlockKind::LowRank, l.rank()),
        HNode::Sub(ch) => {
            let [r0, r1] = rn.children.expect("subdivided row cluster");
            let [c0, c1] = cn.children.expect("subdivided col cluster");
            for (child, (ri, ci)) in ch.iter().zip([(r0, c0), (r0, c1), (r1, c0), (r1, c1)]) {
                collect_leaves(bt, child, ri, ci, out);
            }
            return;
        }
    };
    out.push((LeafInfo { rows: rn.lo..rn.hi, cols: cn.lo..cn.hi, kind, rank }, node));
}

pub(crate) fn zero_node<T: Real>(bt: &BlockTree, id: usize) -> HNode<T> {
    let b = bt.node(id);
    let (m, n) = (bt.row_tree().node(b.row).len(), bt.col_tree().node(b.col).len());
    match b.kind {
        BlockKind::Dense => HNode::Dense(DMatrix::zeros(m, n)),
        BlockKind::LowRank => HNode::LowRank(LowRankBlock::zeros(m, n)),
        BlockKind::Subdivided => {
            let ch = b.children.expect("subdivided");
            HNode::Sub(Box::new(ch.map(|c| zero_node(bt, c))))
        }
    }
}

fn assemble_node<T: Real, F: Fn(usize, usize) -> T>(
    bt: &BlockTree,
    id: usize,
    entry: &F,
    eps: f64,
) -> Result<HNode<T>> {
    let b = bt.node(id);
    let (rt, ct) = (bt.row_tree(), bt.col_tree());
    let (rn, cn) = (rt.node(b.row), ct.node(b.col));
    let materialize = || {
        let (rp, cp) = (rt.perm(), ct.perm());
        DMatrix::from_fn(rn.len(), cn.len(), |i, j| entry(rp[rn.lo + i], cp[cn.lo + j]))
    };
    Ok(match b.kind {
        BlockKind::Dense => {
            let d = materialize();
            if d.iter().any(|x| !x.is_finite()) {
                return Err(AcrError::InvalidInput("non-finite matrix entry".into()));
            }
            HNode::Dense(d)
        }
        BlockKind::LowRank => HNode::LowRank(truncated_svd(&materialize(), eps)?),
        BlockKind::Subdivided => {
            let ch = b.children.expect("subdivided");
            HNode::Sub(Box::new([
                assemble_node(bt, ch[0], entry, eps)?,
                assemble_node(bt, ch[1], entry, eps)?,
                assemble_node(bt, ch[2], entry, eps)?,
                assemble_node(bt, ch[3], entry, eps)?,
            ]))
        }
    })
}

fn sparse_node<T: Real>(bt: &BlockTree, id: usize, entries: Vec<(usize, usize, T)>, eps: f64) -> Result<HNode<T>> {
    let b = bt.node(id);
    let (rn, cn) = (bt.row_tree().node(b.row), bt.col_tree().node(b.col));
    Ok(match b.kind {
        BlockKind::Dense => {
            let mut d = DMatrix::zeros(rn.len(), cn.len());
            for (i, j, v) in entries {
                d[(i - rn.lo, j - cn.lo)] += v;
            }
            HNode::Dense(d)
        }
        BlockKind::LowRank => {
            if entries.is_empty() {
                return Ok(HNode::LowRank(LowRankBlock::zeros(rn.len(), cn.len())));
            }
            // compress only the nonzero rows x nonzero cols
            let mut rows: Vec<usize> = entries.iter().map(|e| e.0).collect();
            let mut cols: Vec<usize> = entries.iter().map(|e| e.1).collect();
            rows.sort_unstable();
            rows.dedup();
            cols.sort_unstable();
            cols.dedup();
            let mut d = DMatrix::zeros(rows.len(), cols.len());
            for (i, j, v) in entries {
                let (a, b) = (rows.binary_search(&i).unwrap(), cols.binary_search(&j).unwrap());
                d[(a, b)] += v;
            }
            let small = truncated_svd(&d, eps)?;
            let k = small.rank();
            let mut u = DMatrix::zeros(rn.len(), k);
            let mut v = DMatrix::zeros(cn.len(), k);
            for (a, &i) in rows.iter().enumerate() {
                u.row_mut(i - rn.lo).copy_from(&small.u().row(a));
            }
            for (b, &j) in cols.iter().enumerate() {
                v.row_mut(j - cn.lo).copy_from(&small.v().row(b));
            }
            HNode::LowRank(LowRankBlock::new(u, v)?)
        }
        BlockKind::Subdivided => {
            let ch = b.children.expect("subdivided");
            let mut parts: [Vec<(usize, usize, T)>; 4] = Default::default();
            let rmid = bt.row_tree().node(bt.node(ch[2]).row).lo;
            let cmid = bt.col_tree().node(bt.node(ch[1]).col).lo;
            for e in entries {
                let k = 2 * usize::from(e.0 >= rmid) + usize::from(e.1 >= cmid);
                parts[k].push(e);
            }
            let [p0, p1, p2, p3] = parts;
            HNode::Sub(Box::new([
                sparse_node(bt, ch[0], p0, eps)?,
                sparse_node(bt, ch[1], p1, eps)?,
                sparse_node(bt, ch[2], p2, eps)?,
                sparse_node(bt, ch[3], p3, eps)?,
            ]))
        }
    })
}

/// `y += alpha * op(H_node) * x` where `op` is the identity or transpose.
///
/// `x` and `y` are local to the node: rows of `x` follow the column cluster
/// (row cluster when transposed) and rows of `y` the other one.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_acc<T: Real>(
    rt: &ClusterTree,
    ct: &ClusterTree,
    alpha: T,
    node: &HNode<T>,
    r: usize,
    c: usize,
    trans: bool,
    x: DMatrixView<'_, T>,
    mut y: DMatrixViewMut<'_, T>,
) {
    let (m, n) = (rt.node(r).len(), ct.node(c).len());
    let (xr, yr) = if trans { (m, n) } else { (n, m) };
    debug_assert!(x.nrows() == xr && y.nrows() == yr && x.ncols() == y.ncols(), "gemm_acc shape");
    match node {
        HNode::Dense(d) => {
            if trans {
                gemm_tn(&mut y, alpha, d, &x, T::one());
            } else {
                y.gemm(alpha, d, &x, T::one());
            }
        }
        HNode::LowRank(l) => {
            if l.rank() == 0 {
                return;
            }
            let (inner, outer) = if trans { (l.u(), l.v()) } else { (l.v(), l.u()) };
            let mut tmp = DMatrix::zeros(l.rank(), x.ncols());
            gemm_tn(&mut tmp, T::one(), inner, &x, T::zero());
            y.gemm(alpha, outer, &tmp, T::one());
        }
        HNode::Sub(ch) => {
            let (rn, cn) = (rt.node(r), ct.node(c));
            let [r0, r1] = rn.children.expect("subdivided row cluster");
            let [c0, c1] = cn.children.expect("subdivided col cluster");
            for (child, (ri, ci)) in ch.iter().zip([(r0, c0), (r0, c1), (r1, c0), (r1, c1)]) {
                let (a, b) = (rt.node(ri), ct.node(ci));
                let (xs, ys) = if trans {
                    (x.rows(a.lo - rn.lo, a.len()), y.rows_mut(b.lo - cn.lo, b.len()))
                } else {
                    (x.rows(b.lo - cn.lo, b.len()), y.rows_mut(a.lo - rn.lo, a.len()))
                };
                gemm_acc(rt, ct, alpha, child, ri, ci, trans, xs, ys);
            }
        }
    }
}
