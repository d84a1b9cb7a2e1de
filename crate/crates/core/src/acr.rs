//! Accelerated cyclic reduction: block cyclic reduction with every block
//! stored as an H-matrix.
//!
//! Setup eliminates the rows at even 0-based positions of each level and
//! keeps, per level, the approximate inverses of the eliminated diagonals and
//! the couplings of all rows of that level. Apply replays the elimination on
//! a right-hand side and back-substitutes.

use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector, Dyn, LU};
use rayon::prelude::*;

use crate::cluster::{BlockTree, HOptions};
use crate::hmatrix::{h_mul, HMatrix, RankStats};
use crate::krylov::LinearOperator;
use crate::problems::BlockTridiagonalSystem;
use crate::{AcrError, Real, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AcrOptions {
    pub h: HOptions,
    /// Stop reducing once at most this many rows remain and solve them
    /// densely. `1` reduces all the way down.
    pub coarse_rows: usize,
}

impl Default for AcrOptions {
    fn default() -> Self {
        Self { h: HOptions::default(), coarse_rows: 1 }
    }
}

impl AcrOptions {
    pub fn new(h: HOptions) -> Self {
        Self { h, coarse_rows: 1 }
    }
}

/// Off-diagonal block. The couplings of the input system are diagonal and
/// are kept that way until the first product turns them into H-matrices.
#[derive(Clone, Debug)]
enum Coupling<T: Real> {
    /// Diagonal in tree numbering.
    Diagonal(Vec<T>),
    H(HMatrix<T>),
}

impl<T: Real> Coupling<T> {
    /// `y += alpha C x` in tree numbering.
    fn apply(&self, alpha: T, x: &[T], y: &mut [T]) {
        match self {
            Coupling::Diagonal(d) => {
                for ((y, &d), &x) in y.iter_mut().zip(d).zip(x) {
                    *y += alpha * d * x;
                }
            }
            Coupling::H(h) => h.apply_tree(alpha, x, y),
        }
    }

    /// `self * x`.
    fn times(&self, x: &HMatrix<T>, eps: f64) -> Result<HMatrix<T>> {
        match self {
            Coupling::Diagonal(l) => {
                let mut p = x.clone();
                p.scale_diag(Some(l), None);
                Ok(p)
            }
            Coupling::H(a) => h_mul(a, x, eps),
        }
    }

    /// `target += alpha * t * self`.
    fn mul_into(&self, target: &mut HMatrix<T>, alpha: T, t: &HMatrix<T>, eps: f64) -> Result<()> {
        match self {
            Coupling::Diagonal(r) => {
                let mut p = t.clone();
                p.scale_diag(None, Some(r));
                target.add_scaled(alpha, &p, eps)
            }
            Coupling::H(b) => target.mul_add(alpha, t, b, eps),
        }
    }

    /// `-t * self` as a new coupling.
    fn neg_after(&self, t: &HMatrix<T>, eps: f64) -> Result<Coupling<T>> {
        let mut p = match self {
            Coupling::Diagonal(r) => {
                let mut p = t.clone();
                p.scale_diag(None, Some(r));
                p
            }
            Coupling::H(b) => h_mul(t, b, eps)?,
        };
        p.scale(-T::one());
        Ok(Coupling::H(p))
    }

    fn footprint(&self) -> usize {
        match self {
            Coupling::Diagonal(d) => std::mem::size_of::<T>() * d.len(),
            Coupling::H(h) => h.footprint(),
        }
    }

    fn rank_stats(&self) -> RankStats {
        match self {
            Coupling::Diagonal(_) => RankStats::default(),
            Coupling::H(h) => h.rank_stats(),
        }
    }

    fn to_dense_tree(&self) -> DMatrix<T> {
        match self {
            Coupling::Diagonal(d) => DMatrix::from_diagonal(&DVector::from_column_slice(d)),
            Coupling::H(h) => h.to_dense_tree(),
        }
    }
}

/// Per-level setup statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelStats {
    pub level: usize,
    /// Rows present when the level started.
    pub rows_remaining: usize,
    pub eliminated: usize,
    pub max_rank: usize,
    pub avg_rank: f64,
    /// Bytes stored for this level.
    pub bytes: usize,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SolveStats {
    pub levels: Vec<LevelStats>,
    /// Bytes of the dense coarse solve, zero when reducing to one row.
    pub coarse_bytes: usize,
    pub setup_seconds: f64,
}

impl SolveStats {
    pub fn bytes(&self) -> usize {
        self.levels.iter().map(|l| l.bytes).sum::<usize>() + self.coarse_bytes
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "level,rows_remaining,max_rank,avg_rank,bytes,elapsed")?;
        for l in &self.levels {
            writeln!(
                w,
                "{},{},{},{:.3},{},{:.6}",
                l.level, l.rows_remaining, l.max_rank, l.avg_rank, l.bytes, l.seconds
            )?;
        }
        Ok(())
    }
}

struct Level<T: Real> {
    /// Block-row (plane) indices present at this level.
    rows: Vec<usize>,
    /// Approximate inverses of the diagonals at even positions.
    inv: Vec<HMatrix<T>>,
    lower: Vec<Option<Coupling<T>>>,
    upper: Vec<Option<Coupling<T>>>,
    rank: RankStats,
}

impl<T: Real> Level<T> {
    fn stored(&self) -> impl Iterator<Item = usize> + '_ {
        let inv = self.inv.iter().map(|h| h.footprint());
        let cpl = self.lower.iter().chain(&self.upper).flatten().map(|c| c.footprint());
        inv.chain(cpl)
    }
}

struct Coarse<T: Real> {
    rows: Vec<usize>,
    lu: LU<T, Dyn, Dyn>,
}

/// Updated diagonal and new couplings of a surviving row.
type ReducedRow<T> = (HMatrix<T>, Option<Coupling<T>>, Option<Coupling<T>>);

/// ACR factorization of a block-tridiagonal system.
pub struct AcrPreconditioner<T: Real> {
    opts: AcrOptions,
    structure: Arc<BlockTree>,
    nblocks: usize,
    block_size: usize,
    levels: Vec<Level<T>>,
    coarse: Option<Coarse<T>>,
    stats: SolveStats,
}

impl<T: Real> AcrPreconditioner<T> {
    pub fn setup(sys: &BlockTridiagonalSystem<T>, opts: AcrOptions) -> Result<Self> {
        opts.h.validate()?;
        if opts.coarse_rows == 0 {
            return Err(AcrError::InvalidInput("coarse_rows must be >= 1".into()));
        }
        let start = Instant::now();
        let structure = Arc::new(BlockTree::square(sys.points(), opts.h)?);
        let eps = opts.h.epsilon;
        let nb = sys.nblocks();
        let to_tree = |v: &[T]| Coupling::Diagonal(structure.row_tree().to_tree_order(v));

        let mut rows: Vec<usize> = (0..nb).collect();
        let mut d: Vec<HMatrix<T>> =
            (0..nb).map(|i| HMatrix::assemble_sparse(sys.diag(i), structure.clone())).collect::<Result<_>>()?;
        let mut l: Vec<Option<Coupling<T>>> = (0..nb).map(|i| sys.lower(i).map(to_tree)).collect();
        let mut u: Vec<Option<Coupling<T>>> = (0..nb).map(|i| sys.upper(i).map(to_tree)).collect();

        let mut levels = Vec::new();
        let mut stats = SolveStats::default();
        let mut coarse = None;
        while !rows.is_empty() {
            let lvl = levels.len();
            let n = rows.len();
            if opts.coarse_rows > 1 && n <= opts.coarse_rows {
                let c = dense_coarse(&rows, &d, &l, &u, structure.row_tree().size())
                    .map_err(|e| e.at_block(lvl, rows[0]))?;
                stats.coarse_bytes = std::mem::size_of::<T>() * (n * sys.block_size()).pow(2);
                coarse = Some(c);
                break;
            }
            let t0 = Instant::now();

            let mut red = Vec::with_capacity(n.div_ceil(2));
            let mut black = Vec::with_capacity(n / 2);
            for (p, dp) in d.into_iter().enumerate() {
                if p % 2 == 0 {
                    red.push((p, dp))
                } else {
                    black.push((p, dp))
                }
            }
            let inv: Vec<HMatrix<T>> = red
                .into_par_iter()
                .map(|(p, dp)| dp.into_inverse(eps).map_err(|e| e.at_block(lvl, rows[p])))
                .collect::<Result<_>>()?;

            let reduced: Vec<ReducedRow<T>> = black
                .into_par_iter()
                .map(|(j, mut dj)| {
                    let lj = l[j].as_ref().expect("black rows have a left neighbor");
                    let tl = lj.times(&inv[(j - 1) / 2], eps)?;
                    u[j - 1].as_ref().unwrap().mul_into(&mut dj, -T::one(), &tl, eps)?;
                    let new_l = match &l[j - 1] {
                        Some(ll) => Some(ll.neg_after(&tl, eps)?),
                        None => None,
                    };
                    let mut new_u = None;
                    if j + 1 < n {
                        let tr = u[j].as_ref().unwrap().times(&inv[j.div_ceil(2)], eps)?;
                        l[j + 1].as_ref().unwrap().mul_into(&mut dj, -T::one(), &tr, eps)?;
                        if let Some(uu) = &u[j + 1] {
                            new_u = Some(uu.neg_after(&tr, eps)?);
                        }
                    }
                    Ok((dj, new_l, new_u))
                })
                .collect::<Result<_>>()?;

            let mut level = Level { rows: rows.clone(), inv, lower: l, upper: u, rank: RankStats::default() };
            let mut rank = RankStats::default();
            for h in &level.inv {
                rank.merge(&h.rank_stats());
            }
            for c in level.lower.iter().chain(&level.upper).flatten() {
                rank.merge(&c.rank_stats());
            }
            level.rank = rank;
            stats.levels.push(LevelStats {
                level: lvl,
                rows_remaining: n,
                eliminated: level.inv.len(),
                max_rank: rank.max_rank,
                avg_rank: rank.avg_rank,
                bytes: level.stored().sum(),
                seconds: t0.elapsed().as_secs_f64(),
            });
            levels.push(level);

            rows = rows.iter().skip(1).step_by(2).copied().collect();
            (d, l, u) = (Vec::new(), Vec::new(), Vec::new());
            for (dj, lj, uj) in reduced {
                d.push(dj);
                l.push(lj);
                u.push(uj);
            }
        }
        stats.setup_seconds = start.elapsed().as_secs_f64();
        Ok(Self { opts, structure, nblocks: nb, block_size: sys.block_size(), levels, coarse, stats })
    }

    pub fn options(&self) -> &AcrOptions {
        &self.opts
    }

    /// Block tree shared by every stored H-matrix.
    pub fn structure(&self) -> &Arc<BlockTree> {
        &self.structure
    }

    pub fn len(&self) -> usize {
        self.nblocks * self.block_size
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of reduction levels, not counting a dense coarse solve.
    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    /// Block rows present at the start of `level`.
    pub fn rows(&self, level: usize) -> &[usize] {
        &self.levels[level].rows
    }

    /// Block rows eliminated at `level`.
    pub fn eliminated(&self, level: usize) -> Vec<usize> {
        self.levels[level].rows.iter().step_by(2).copied().collect()
    }

    /// Block rows handled by the dense coarse solve.
    pub fn coarse_rows(&self) -> &[usize] {
        self.coarse.as_ref().map_or(&[], |c| &c.rows)
    }

    /// Checks that every level couples each row only to its neighbors in
    /// that level and that the survivors are the odd positions.
    pub fn is_block_tridiagonal(&self) -> bool {
        self.levels.iter().enumerate().all(|(k, lv)| {
            let n = lv.rows.len();
            let links = (0..n).all(|p| lv.lower[p].is_some() == (p > 0) && lv.upper[p].is_some() == (p + 1 < n));
            let sorted = lv.rows.windows(2).all(|w| w[0] < w[1]);
            let next: Vec<usize> = lv.rows.iter().skip(1).step_by(2).copied().collect();
            let follows = match self.levels.get(k + 1) {
                Some(nx) => nx.rows == next,
                None => self.coarse_rows() == next.as_slice(),
            };
            links && sorted && follows && lv.inv.len() == n.div_ceil(2)
        })
    }

    pub fn stats(&self) -> &SolveStats {
        &self.stats
    }

    /// Bytes of every stored block.
    pub fn footprint(&self) -> usize {
        self.stats.bytes()
    }

    /// Bytes the stored blocks would take if they were dense.
    pub fn dense_bytes(&self) -> usize {
        let m2 = std::mem::size_of::<T>() * self.block_size * self.block_size;
        let per_level: usize =
            self.levels.iter().map(|lv| lv.inv.len() + lv.lower.iter().chain(&lv.upper).flatten().count()).sum();
        per_level * m2 + self.stats.coarse_bytes
    }

    pub fn rank_stats(&self) -> RankStats {
        let mut r = RankStats::default();
        for lv in &self.levels {
            r.merge(&lv.rank);
        }
        r
    }

    /// Approximate `A^{-1} f`.
    pub fn apply(&self, f: &[T]) -> Result<Vec<T>> {
        let mut y = vec![T::zero(); self.len()];
        self.apply_into(f, &mut y)?;
        Ok(y)
    }

    pub fn apply_into(&self, f: &[T], out: &mut [T]) -> Result<()> {
        let len = self.len();
        if f.len() != len {
            return Err(AcrError::LengthMismatch { expected: len, got: f.len() });
        }
        if out.len() != len {
            return Err(AcrError::LengthMismatch { expected: len, got: out.len() });
        }
        let m = self.block_size;
        let tree = self.structure.row_tree();
        let mut cur: Vec<Vec<T>> = f.chunks(m).map(|c| tree.to_tree_order(c)).collect();

        // forward: fold the eliminated rows into the survivors
        let mut saved = Vec::with_capacity(self.levels.len());
        for lv in &self.levels {
            let n = lv.rows.len();
            let g: Vec<Vec<T>> = lv
                .inv
                .iter()
                .enumerate()
                .map(|(k, x)| {
                    let mut y = vec![T::zero(); m];
                    x.apply_tree(T::one(), &cur[2 * k], &mut y);
                    y
                })
                .collect();
            let mut next = Vec::with_capacity(n / 2);
            let mut red = Vec::with_capacity(g.len());
            for (p, fp) in cur.into_iter().enumerate() {
                if p % 2 == 0 {
                    red.push(fp);
                    continue;
                }
                let mut fp = fp;
                lv.lower[p].as_ref().unwrap().apply(-T::one(), &g[(p - 1) / 2], &mut fp);
                if p + 1 < n {
                    lv.upper[p].as_ref().unwrap().apply(-T::one(), &g[p.div_ceil(2)], &mut fp);
                }
                next.push(fp);
            }
            saved.push(red);
            cur = next;
        }

        let mut x: Vec<Vec<T>> = match &self.coarse {
            Some(c) => {
                let rhs = DVector::from_iterator(c.rows.len() * m, cur.iter().flatten().copied());
                let sol = c.lu.solve(&rhs).expect("coarse system was checked invertible");
                sol.as_slice().chunks(m).map(|s| s.to_vec()).collect()
            }
            None => Vec::new(),
        };

        // backward: recover the eliminated rows level by level
        for (lv, red) in self.levels.iter().zip(saved).rev() {
            let n = lv.rows.len();
            let mut full: Vec<Vec<T>> = Vec::with_capacity(n);
            let mut black = x.into_iter();
            for p in 0..n {
                full.push(if p % 2 == 1 { black.next().expect("survivor solution") } else { Vec::new() });
            }
            for (k, mut r) in red.into_iter().enumerate() {
                let p = 2 * k;
                if p > 0 {
                    lv.lower[p].as_ref().unwrap().apply(-T::one(), &full[p - 1], &mut r);
                }
                if p + 1 < n {
                    lv.upper[p].as_ref().unwrap().apply(-T::one(), &full[p + 1], &mut r);
                }
                let mut xp = vec![T::zero(); m];
                lv.inv[k].apply_tree(T::one(), &r, &mut xp);
                full[p] = xp;
            }
            x = full;
        }

        for (i, xi) in x.iter().enumerate() {
            out[i * m..(i + 1) * m].copy_from_slice(&tree.to_original_order(xi));
        }
        Ok(())
    }
}

impl<T: Real> LinearOperator<T> for AcrPreconditioner<T> {
    fn dim(&self) -> usize {
        self.len()
    }

    fn apply(&self, x: &[T], y: &mut [T]) -> Result<()> {
        self.apply_into(x, y)
    }
}

fn dense_coarse<T: Real>(
    rows: &[usize],
    d: &[HMatrix<T>],
    l: &[Option<Coupling<T>>],
    u: &[Option<Coupling<T>>],
    m: usize,
) -> Result<Coarse<T>> {
    let n = rows.len();
    let mut a = DMatrix::zeros(n * m, n * m);
    for p in 0..n {
        a.view_mut((p * m, p * m), (m, m)).copy_from(&d[p].to_dense_tree());
        if let Some(c) = &l[p] {
            a.view_mut((p * m, (p - 1) * m), (m, m)).copy_from(&c.to_dense_tree());
        }
        if let Some(c) = &u[p] {
            a.view_mut((p * m, (p + 1) * m), (m, m)).copy_from(&c.to_dense_tree());
        }
    }
    let lu = a.lu();
    if !lu.is_invertible() {
        return Err(AcrError::SingularPivot { level: None, block: None, lo: 0, hi: n * m });
    }
    Ok(Coarse { rows: rows.to_vec(), lu })
}

#[cfg(test)]
mod tests;
