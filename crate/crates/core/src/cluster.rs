//! Geometric cluster trees over planar point sets and the block cluster
//! tree induced by the admissibility condition.

use std::sync::Arc;

use crate::{AcrError, Result};

/// Axis-aligned bounding box in the plane.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundingBox {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl BoundingBox {
    pub fn new(min: [f64; 2], max: [f64; 2]) -> Self {
        Self { min, max }
    }

    pub fn of_points<'a>(points: impl IntoIterator<Item = &'a [f64; 2]>) -> Self {
        let mut min = [f64::INFINITY; 2];
        let mut max = [f64::NEG_INFINITY; 2];
        for p in points {
            for d in 0..2 {
                min[d] = min[d].min(p[d]);
                max[d] = max[d].max(p[d]);
            }
        }
        Self { min, max }
    }

    pub fn extent(&self, axis: usize) -> f64 {
        self.max[axis] - self.min[axis]
    }

    pub fn diameter(&self) -> f64 {
        self.extent(0).hypot(self.extent(1))
    }

    /// Euclidean distance between the boxes (0 when they touch or overlap).
    pub fn distance(&self, other: &BoundingBox) -> f64 {
        let gap = |d: usize| (other.min[d] - self.max[d]).max(self.min[d] - other.max[d]).max(0.0);
        gap(0).hypot(gap(1))
    }

    pub fn contains(&self, p: &[f64; 2]) -> bool {
        (0..2).all(|d| self.min[d] <= p[d] && p[d] <= self.max[d])
    }
}

/// One node of a cluster tree: the contiguous slice `[lo, hi)` of the tree
/// ordering together with its bounding box.
#[derive(Clone, Debug, PartialEq)]
pub struct Cluster {
    pub lo: usize,
    pub hi: usize,
    pub bbox: BoundingBox,
    pub children: Option<[usize; 2]>,
    pub depth: usize,
}

impl Cluster {
    pub fn len(&self) -> usize {
        self.hi - self.lo
    }

    pub fn is_empty(&self) -> bool {
        self.hi == self.lo
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_none()
    }
}

/// Binary cluster tree built by recursive bisection.
///
/// `perm[k]` is the original index of the point at tree position `k`; every
/// node owns the contiguous range `[lo, hi)` of tree positions.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterTree {
    nodes: Vec<Cluster>,
    perm: Vec<usize>,
    inverse: Vec<usize>,
    points: Vec<[f64; 2]>,
    n_min: usize,
}

impl ClusterTree {
    pub fn build(points: &[[f64; 2]], n_min: usize) -> Result<Self> {
        if points.is_empty() {
            return Err(AcrError::InvalidInput("cluster tree needs at least one point".into()));
        }
        if n_min == 0 {
            return Err(AcrError::InvalidInput("n_min must be >= 1".into()));
        }
        if points.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
            return Err(AcrError::InvalidInput("non-finite point coordinate".into()));
        }
        let mut perm: Vec<usize> = (0..points.len()).collect();
        let mut nodes = Vec::new();
        split(points, &mut perm, 0, points.len(), 0, n_min, &mut nodes);
        let mut inverse = vec![0; perm.len()];
        for (k, &orig) in perm.iter().enumerate() {
            inverse[orig] = k;
        }
        Ok(Self { nodes, perm, inverse, points: points.to_vec(), n_min })
    }

    pub const ROOT: usize = 0;

    pub fn node(&self, id: usize) -> &Cluster {
        &self.nodes[id]
    }

    pub fn nodes(&self) -> &[Cluster] {
        &self.nodes
    }

    /// Number of points.
    pub fn size(&self) -> usize {
        self.perm.len()
    }

    pub fn n_min(&self) -> usize {
        self.n_min
    }

    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    /// `inverse[orig]` is the tree position of original point `orig`.
    pub fn inverse_perm(&self) -> &[usize] {
        &self.inverse
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn leaves(&self) -> impl Iterator<Item = &Cluster> {
        self.nodes.iter().filter(|c| c.is_leaf())
    }

    pub fn depth(&self) -> usize {
        self.nodes.iter().map(|c| c.depth).max().unwrap_or(0)
    }

    /// Reorder a vector from original numbering into tree numbering.
    pub fn to_tree_order<T: Copy>(&self, x: &[T]) -> Vec<T> {
        self.perm.iter().map(|&i| x[i]).collect()
    }

    /// Inverse of [`ClusterTree::to_tree_order`].
    pub fn to_original_order<T: Copy>(&self, x: &[T]) -> Vec<T> {
        self.inverse.iter().map(|&k| x[k]).collect()
    }
}

fn split(
    points: &[[f64; 2]],
    perm: &mut [usize],
    lo: usize,
    hi: usize,
    depth: usize,
    n_min: usize,
    nodes: &mut Vec<Cluster>,
) -> usize {
    let bbox = BoundingBox::of_points(perm[lo..hi].iter().map(|&i| &points[i]));
    let id = nodes.len();
    nodes.push(Cluster { lo, hi, bbox, children: None, depth });
    let count = hi - lo;
    if count <= n_min || count < 2 {
        return id;
    }
    let axis = if bbox.extent(0) >= bbox.extent(1) { 0 } else { 1 };
    perm[lo..hi].sort_by(|&a, &b| points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b)));
    let mid = lo + count.div_ceil(2);
    let left = split(points, perm, lo, mid, depth + 1, n_min, nodes);
    let right = split(points, perm, mid, hi, depth + 1, n_min, nodes);
    nodes[id].children = Some([left, right]);
    id
}

/// Free-standing constructor.
pub fn build_cluster_tree(points: &[[f64; 2]], n_min: usize) -> Result<ClusterTree> {
    ClusterTree::build(points, n_min)
}

/// Admissibility rule for off-diagonal blocks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Admissibility {
    /// `min(diam(t), diam(s)) <= eta * dist(t, s)`.
    Standard(f64),
    /// Every pair of disjoint clusters is admissible.
    Weak,
}

impl Admissibility {
    pub fn strong() -> Self {
        Admissibility::Standard(2.0)
    }

    /// `eta = n / 2` for an `n x n` plane.
    pub fn intermediate(n: usize) -> Self {
        Admissibility::Standard(n as f64 / 2.0)
    }

    /// `eta = 2n`: every separated pair of an `n x n` plane passes.
    pub fn coarse(n: usize) -> Self {
        Admissibility::Standard(2.0 * n as f64)
    }

    pub fn check(&self, tau: &BoundingBox, sigma: &BoundingBox) -> bool {
        let dist = tau.distance(sigma);
        if dist <= 0.0 {
            return false;
        }
        match *self {
            Admissibility::Weak => true,
            Admissibility::Standard(eta) => tau.diameter().min(sigma.diameter()) <= eta * dist,
        }
    }
}

impl std::fmt::Display for Admissibility {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Admissibility::Standard(eta) => write!(f, "{eta}"),
            Admissibility::Weak => f.write_str("weak"),
        }
    }
}

impl std::str::FromStr for Admissibility {
    type Err = AcrError;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("weak") {
            return Ok(Admissibility::Weak);
        }
        match s.parse::<f64>() {
            Ok(eta) if eta >= 0.0 && eta.is_finite() => Ok(Admissibility::Standard(eta)),
            _ => Err(AcrError::InvalidInput(format!("eta must be a number >= 0 or 'weak', got {s:?}"))),
        }
    }
}

/// Standard admissibility test between two clusters.
///
/// Clusters at distance zero are never admissible, so diagonal blocks stay
/// dense or subdivided.
pub fn is_admissible(tau: &Cluster, sigma: &Cluster, adm: Admissibility) -> bool {
    adm.check(&tau.bbox, &sigma.bbox)
}

/// The three H-format tuning parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HOptions {
    /// Block-wise relative accuracy of low-rank blocks and H-arithmetic.
    pub epsilon: f64,
    pub admissibility: Admissibility,
    /// Clusters with at most this many points are not split.
    pub n_min: usize,
}

impl Default for HOptions {
    fn default() -> Self {
        Self { epsilon: 1e-2, admissibility: Admissibility::strong(), n_min: 32 }
    }
}

impl HOptions {
    pub fn new(epsilon: f64, admissibility: Admissibility, n_min: usize) -> Self {
        Self { epsilon, admissibility, n_min }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(AcrError::InvalidInput(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        if self.n_min == 0 {
            return Err(AcrError::InvalidInput("n_min must be >= 1".into()));
        }
        if let Admissibility::Standard(eta) = self.admissibility {
            if !(eta >= 0.0 && eta.is_finite()) {
                return Err(AcrError::InvalidInput(format!("eta must be >= 0, got {eta}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BlockKind {
    Subdivided,
    LowRank,
    Dense,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockNode {
    pub row: usize,
    pub col: usize,
    pub kind: BlockKind,
    /// `(r0,c0), (r0,c1), (r1,c0), (r1,c1)` when subdivided.
    pub children: Option<[usize; 4]>,
}

/// Block cluster tree: the hierarchical partition of `rows x cols`.
#[derive(Clone, Debug)]
pub struct BlockTree {
    row_tree: Arc<ClusterTree>,
    col_tree: Arc<ClusterTree>,
    opts: HOptions,
    nodes: Vec<BlockNode>,
}

impl BlockTree {
    pub fn build(row_tree: Arc<ClusterTree>, col_tree: Arc<ClusterTree>, opts: HOptions) -> Result<Self> {
        opts.validate()?;
        let mut nodes = Vec::new();
        descend(&row_tree, &col_tree, opts.admissibility, ClusterTree::ROOT, ClusterTree::ROOT, &mut nodes);
        Ok(Self { row_tree, col_tree, opts, nodes })
    }

    /// Square block tree over one point set.
    pub fn square(points: &[[f64; 2]], opts: HOptions) -> Result<Self> {
        let tree = Arc::new(ClusterTree::build(points, opts.n_min)?);
        Self::build(tree.clone(), tree, opts)
    }

    pub const ROOT: usize = 0;

    pub fn row_tree(&self) -> &Arc<ClusterTree> {
        &self.row_tree
    }

    pub fn col_tree(&self) -> &Arc<ClusterTree> {
        &self.col_tree
    }

    pub fn opts(&self) -> &HOptions {
        &self.opts
    }

    pub fn nodes(&self) -> &[BlockNode] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> &BlockNode {
        &self.nodes[id]
    }

    pub fn leaves(&self) -> impl Iterator<Item = &BlockNode> {
        self.nodes.iter().filter(|b| b.kind != BlockKind::Subdivided)
    }

    pub fn is_square(&self) -> bool {
        Arc::ptr_eq(&self.row_tree, &self.col_tree) || self.row_tree == self.col_tree
    }

    /// Kind of the block `(row, col)` under this tree's rule.
    pub fn classify(&self, row: usize, col: usize) -> BlockKind {
        classify(&self.row_tree, &self.col_tree, self.opts.admissibility, row, col)
    }

    /// Same partition (trees and admissibility), possibly different epsilon.
    pub fn same_structure(&self, other: &BlockTree) -> bool {
        (Arc::ptr_eq(&self.row_tree, &other.row_tree) || self.row_tree == other.row_tree)
            && (Arc::ptr_eq(&self.col_tree, &other.col_tree) || self.col_tree == other.col_tree)
            && self.opts.admissibility == other.opts.admissibility
    }

    /// Maximum depth over all block nodes (root has depth 0).
    pub fn depth(&self) -> usize {
        fn walk(t: &BlockTree, id: usize) -> usize {
            match t.nodes[id].children {
                None => 0,
                Some(ch) => 1 + ch.iter().map(|&c| walk(t, c)).max().unwrap_or(0),
            }
        }
        walk(self, Self::ROOT)
    }
}

fn classify(rt: &ClusterTree, ct: &ClusterTree, adm: Admissibility, r: usize, c: usize) -> BlockKind {
    let (rn, cn) = (rt.node(r), ct.node(c));
    if is_admissible(rn, cn, adm) {
        BlockKind::LowRank
    } else if rn.is_leaf() || cn.is_leaf() {
        BlockKind::Dense
    } else {
        BlockKind::Subdivided
    }
}

fn descend(
    rt: &ClusterTree,
    ct: &ClusterTree,
    adm: Admissibility,
    r: usize,
    c: usize,
    nodes: &mut Vec<BlockNode>,
) -> usize {
    let kind = classify(rt, ct, adm, r, c);
    let id = nodes.len();
    nodes.push(BlockNode { row: r, col: c, kind, children: None });
    if kind == BlockKind::Subdivided {
        let [r0, r1] = rt.node(r).children.expect("non-leaf");
        let [c0, c1] = ct.node(c).children.expect("non-leaf");
        let ch = [
            descend(rt, ct, adm, r0, c0, nodes),
            descend(rt, ct, adm, r0, c1, nodes),
            descend(rt, ct, adm, r1, c0, nodes),
            descend(rt, ct, adm, r1, c1, nodes),
        ];
        nodes[id].children = Some(ch);
    }
    id
}

/// Free-standing constructor.
pub fn build_block_tree(row_tree: Arc<ClusterTree>, col_tree: Arc<ClusterTree>, opts: HOptions) -> Result<BlockTree> {
    BlockTree::build(row_tree, col_tree, opts)
}

/// Coordinates of an `n x n` plane of interior grid nodes with spacing `h`,
/// numbered lexicographically (x fastest).
pub fn plane_points(n: usize, h: f64) -> Vec<[f64; 2]> {
    let mut pts = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            pts.push([(i + 1) as f64 * h, (j + 1) as f64 * h]);
        }
    }
    pts
}
