//! Acceptance suite. Runs every criterion in sequence and prints one
//! PASS/FAIL line each. Pass criterion numbers as arguments to run a subset.

use std::io::Write;
use std::sync::{Arc, OnceLock};
use std::time::Instant;

use acr_bench::{comm_volume, plane_assignment};
use acr_core::lowrank::relative_error;
use acr_core::{
    cg, convdiff_system, exact_cr_solve, flow_eval, frequency_for_ppw, gaussian_random_field, gmres, h_invert,
    harmonic_mean, helmholtz_system, is_admissible, points_per_wavelength, poisson_system, truncated_svd, AcrOptions,
    AcrPreconditioner, Admissibility, BlockKind, BlockTree, BlockTridiagonalSystem, CoefficientField, Grid, HMatrix,
    HOptions, Identity, KrylovOptions,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn rel_diff(x: &[f64], y: &[f64]) -> f64 {
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    norm(&d) / norm(y)
}

fn field(grid: &Grid, contrast: f64) -> CoefficientField {
    if contrast > 0.0 {
        gaussian_random_field(grid, 3.0 * grid.h(), contrast, 1).unwrap()
    } else {
        CoefficientField::constant(*grid, 1.0).unwrap()
    }
}

fn setup(sys: &BlockTridiagonalSystem<f64>, eps: f64) -> AcrPreconditioner<f64> {
    AcrPreconditioner::setup(sys, AcrOptions::new(HOptions::new(eps, Admissibility::strong(), 32))).unwrap()
}

fn criterion_1() -> Outcome {
    let grid = Grid::cube(15).unwrap();
    let sys = poisson_system::<f64>(&grid, &field(&grid, 0.0)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let f: Vec<f64> = (0..sys.len()).map(|_| rng.random_range(-1.0..1.0)).collect();

    let a = sys.to_csr().to_dense();
    let x_lu: Vec<f64> = a.clone().lu().solve(&DVector::from_column_slice(&f)).unwrap().as_slice().to_vec();

    let dense_only = HOptions::new(0.0, Admissibility::Weak, grid.plane_len());
    let pre = AcrPreconditioner::setup(&sys, AcrOptions::new(dense_only)).unwrap();
    let x = pre.apply(&f).unwrap();
    let res = sys.relative_residual(&x, &f).unwrap();
    let err = rel_diff(&x, &x_lu);

    let x_cr = exact_cr_solve(&sys, &f).unwrap();
    let err_cr = rel_diff(&x_cr, &x_lu);
    check(
        res <= 1e-10 && err <= 1e-8 && err_cr <= 1e-12,
        format!("residual {res:.1e}, ACR vs LU {err:.1e}, exact CR vs LU {err_cr:.1e}"),
    )
}

struct SweepPoint {
    eps: f64,
    iterations: usize,
    converged: bool,
    bytes: usize,
    dense_bytes: usize,
    max_rank: usize,
}

const EPS_SWEEP: [f64; 4] = [1e-1, 1e-2, 1e-4, 1e-6];

/// Variable-coefficient Poisson, n = 31, contrast 4, shared by criteria 2 and 4.
fn poisson_sweep() -> &'static [SweepPoint] {
    static SWEEP: OnceLock<Vec<SweepPoint>> = OnceLock::new();
    SWEEP.get_or_init(|| {
        let grid = Grid::cube(31).unwrap();
        let sys = poisson_system::<f64>(&grid, &field(&grid, 4.0)).unwrap();
        EPS_SWEEP
            .iter()
            .map(|&eps| {
                let pre = setup(&sys, eps);
                let r = cg(&sys, &pre, sys.rhs(), &KrylovOptions::default()).unwrap();
                SweepPoint {
                    eps,
                    iterations: r.iterations,
                    converged: r.converged && r.relres <= 1e-8,
                    bytes: pre.footprint(),
                    dense_bytes: pre.dense_bytes(),
                    max_rank: pre.rank_stats().max_rank,
                }
            })
            .collect()
    })
}

fn criterion_2() -> Outcome {
    let sweep = poisson_sweep();
    let its: Vec<usize> = sweep.iter().map(|p| p.iterations).collect();
    let monotone = its.windows(2).all(|w| w[1] <= w[0]);
    let p4 = sweep.iter().find(|p| p.eps == 1e-4).unwrap();
    check(
        monotone && sweep.iter().all(|p| p.converged) && p4.iterations <= 10,
        format!("CG iterations over eps {EPS_SWEEP:?}: {its:?}"),
    )
}

fn criterion_3() -> Outcome {
    let grid = Grid::cube(31).unwrap();
    let sys = poisson_system::<f64>(&grid, &field(&grid, 6.0)).unwrap();
    let opts = KrylovOptions { max_iters: 5000, ..KrylovOptions::default() };
    let plain = cg(&sys, &Identity(sys.len()), sys.rhs(), &opts).unwrap();
    let pre = setup(&sys, 1e-2);
    let acr = cg(&sys, &pre, sys.rhs(), &opts).unwrap();
    check(
        acr.converged && acr.iterations <= 100 && plain.iterations >= 5 * acr.iterations,
        format!(
            "ACR(1e-2)+CG {} iterations, plain CG {} iterations (converged {})",
            acr.iterations, plain.iterations, plain.converged
        ),
    )
}

fn criterion_4() -> Outcome {
    let sweep = poisson_sweep();
    let bytes: Vec<usize> = sweep.iter().map(|p| p.bytes).collect();
    let ranks: Vec<usize> = sweep.iter().map(|p| p.max_rank).collect();
    let ok = bytes.windows(2).all(|w| w[1] >= w[0])
        && ranks.windows(2).all(|w| w[1] >= w[0])
        && sweep[0].bytes < sweep[0].dense_bytes;
    check(ok, format!("bytes {bytes:?}, max ranks {ranks:?}, dense {}", sweep[0].dense_bytes))
}

fn criterion_5() -> Outcome {
    let eps = 1e-6;
    let grid = Grid::square(128).unwrap();
    let a = poisson_system::<f64>(&grid, &field(&grid, 4.0)).unwrap().to_csr();
    let pts: Vec<[f64; 2]> = (0..grid.len())
        .map(|p| {
            let c = grid.coords(p);
            [c[0], c[1]]
        })
        .collect();
    let etas = [
        Admissibility::Standard(32.0),
        Admissibility::Standard(64.0),
        Admissibility::Standard(128.0),
        Admissibility::Weak,
    ];
    let mut rows = Vec::new();
    for adm in etas {
        let tree = Arc::new(BlockTree::square(&pts, HOptions::new(eps, adm, 32)).unwrap());
        let inv = h_invert(&HMatrix::assemble_sparse(&a, tree).unwrap(), eps).unwrap();
        // Hutchinson estimate of ||A X - I||_F with Rademacher probes.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let probes = 64;
        let mut sum = 0.0;
        for _ in 0..probes {
            let z: Vec<f64> = (0..grid.len()).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
            let az = a.matvec(&inv.matvec(&z).unwrap()).unwrap();
            sum += az.iter().zip(&z).map(|(p, q)| (p - q).powi(2)).sum::<f64>();
        }
        rows.push((adm, (sum / probes as f64).sqrt(), inv.footprint(), inv.rank_stats().max_rank));
    }
    let weak = rows[3].2;
    let ok = rows[..3].iter().any(|r| r.2 <= weak) && rows.iter().all(|r| r.1 <= 1e-1);
    let detail: Vec<String> =
        rows.iter().map(|(a, e, b, k)| format!("eta {a}: err {e:.1e} bytes {b} rank {k}")).collect();
    check(ok, detail.join("; "))
}

fn criterion_6() -> Outcome {
    let n = 31;
    let grid = Grid::cube(n).unwrap();
    // Cell Peclet number of alpha = 6 on the 128^3 grid.
    let alpha = 6.0 * (n + 1) as f64 / 129.0;
    let sys = convdiff_system::<f64>(&grid, &field(&grid, 4.0), alpha, 8.0).unwrap();
    let opts = KrylovOptions::default();
    let plain = gmres(&sys, &Identity(sys.len()), sys.rhs(), &opts).unwrap();
    let pre = setup(&sys, 1e-2);
    let acr = gmres(&sys, &pre, sys.rhs(), &opts).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let h = 1e-6;
    let mut max_div: f64 = 0.0;
    for _ in 0..100 {
        let x: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..1.0));
        let mut div = 0.0;
        for d in 0..3 {
            let (mut p, mut m) = (x, x);
            p[d] += h;
            m[d] -= h;
            div += (flow_eval(p, 8.0)[d] - flow_eval(m, 8.0)[d]) / (2.0 * h);
        }
        max_div = max_div.max(div.abs());
    }
    check(
        acr.converged && acr.iterations <= 100 && !plain.converged && max_div <= 1e-6,
        format!(
            "alpha {alpha:.3}: GMRES+ACR(1e-2) {} iterations, GMRES(30) relres {:.1e} after {}, max |div b| {max_div:.1e}",
            acr.iterations, plain.relres, plain.iterations
        ),
    )
}

fn criterion_7() -> Outcome {
    let grid = Grid::cube(31).unwrap();
    let ladder = [1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6];
    let opts = KrylovOptions { max_iters: 60, ..KrylovOptions::default() };
    let mut found = Vec::new();
    for ppw in [48.0, 24.0, 12.0] {
        let freq = frequency_for_ppw(&grid, ppw);
        let sys = helmholtz_system::<f64>(&grid, freq).unwrap();
        let mut hit = None;
        for &eps in &ladder {
            let Ok(pre) =
                AcrPreconditioner::setup(&sys, AcrOptions::new(HOptions::new(eps, Admissibility::strong(), 32)))
            else {
                continue;
            };
            let r = gmres(&sys, &pre, sys.rhs(), &opts).unwrap();
            if r.converged && r.iterations <= 20 {
                hit = Some((eps, r.iterations, pre.rank_stats().max_rank));
                break;
            }
        }
        found.push((points_per_wavelength(&grid, freq), freq, hit));
    }
    let detail: Vec<String> = found
        .iter()
        .map(|(ppw, f, hit)| match hit {
            Some((e, it, k)) => format!("{ppw:.0} ppw (f {f}): eps {e:e}, {it} iterations, max rank {k}"),
            None => format!("{ppw:.0} ppw (f {f}): no eps converged in 20 iterations"),
        })
        .collect();
    let hits: Option<Vec<(f64, usize, usize)>> = found.iter().map(|f| f.2).collect();
    let ok = match &hits {
        Some(h) => h.windows(2).all(|w| w[1].0 <= w[0].0) && h[2].2 > h[0].2,
        None => false,
    };
    check(ok, detail.join("; "))
}

fn slope(x: &[f64], y: &[f64]) -> f64 {
    let m = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / m, y.iter().sum::<f64>() / m);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

fn criterion_8() -> Outcome {
    let mut xs_mem = Vec::new();
    let mut xs_time = Vec::new();
    let mut bytes = Vec::new();
    let mut secs = Vec::new();
    for n in [15, 31, 63] {
        let grid = Grid::cube(n).unwrap();
        let sys = poisson_system::<f64>(&grid, &field(&grid, 0.0)).unwrap();
        let start = Instant::now();
        let pre = setup(&sys, 1e-1);
        secs.push(start.elapsed().as_secs_f64());
        bytes.push(pre.footprint() as f64);
        let big_n = sys.len() as f64;
        xs_mem.push((big_n * big_n.ln()).ln());
        xs_time.push((big_n * big_n.ln().powi(2)).ln());
    }
    let s_mem = slope(&xs_mem, &bytes.iter().map(|b| b.ln()).collect::<Vec<_>>());
    let s_time = slope(&xs_time, &secs.iter().map(|s| s.ln()).collect::<Vec<_>>());
    check(
        (0.8..=1.25).contains(&s_mem) && (0.7..=1.5).contains(&s_time),
        format!("footprint slope {s_mem:.3} (bytes {bytes:?}), setup slope {s_time:.3} (seconds {secs:.2?})"),
    )
}

fn criterion_9() -> Outcome {
    let plan = plane_assignment(16, 4).unwrap();
    let fig = plan.planes_per_node[0] == vec![4; 4] && plan.c_level == 2;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut mismatches = 0;
    for _ in 0..20 {
        let ln = rng.random_range(1u32..12);
        let lp = rng.random_range(0..=ln);
        let k = rng.random_range(1u64..100);
        let (n, p) = (1u64 << ln, 1u64 << lp);
        let exact = k * p * n * n * ln as u64 * ((ln - lp) as u64 + 1);
        if comm_volume(n as usize, p as usize, k as usize) != exact as f64 {
            mismatches += 1;
        }
    }
    check(
        fig && mismatches == 0,
        format!(
            "n=16 p=4: {:?} planes per node, C-level {}; {mismatches}/20 volume mismatches",
            plan.planes_per_node[0], plan.c_level
        ),
    )
}

fn criterion_10() -> Outcome {
    let mut failures = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(10);

    // Truncation meets the relative Frobenius bound.
    for &eps in &[1e-1, 1e-3, 1e-6] {
        for _ in 0..20 {
            let (m, n) = (rng.random_range(1..40), rng.random_range(1..40));
            let a = DMatrix::from_fn(m, n, |i, j| {
                1.0 / (1.0 + i as f64 + j as f64) + 1e-3 * rng.random_range(-1.0..1.0) * ((i * j) % 3) as f64
            });
            let lr = truncated_svd(&a, eps).unwrap();
            let diff = &a - lr.u() * lr.v().transpose();
            if diff.norm() > eps * a.norm() * (1.0 + 1e-10) || relative_error(&a, &lr) > eps * (1.0 + 1e-10) {
                failures.push(format!("truncation {m}x{n} eps {eps}"));
            }
        }
    }

    // Block partition: exact tiling, admissible low-rank leaves.
    let grid = Grid::square(24).unwrap();
    let pts: Vec<[f64; 2]> = (0..grid.len())
        .map(|p| {
            let c = grid.coords(p);
            [c[0], c[1]]
        })
        .collect();
    for adm in [Admissibility::Standard(0.5), Admissibility::strong(), Admissibility::Weak] {
        let tree = BlockTree::square(&pts, HOptions::new(1e-2, adm, 16)).unwrap();
        let mut cover = vec![0u8; pts.len() * pts.len()];
        for leaf in tree.leaves() {
            let (r, c) = (tree.row_tree().node(leaf.row), tree.col_tree().node(leaf.col));
            if leaf.kind == BlockKind::LowRank && !is_admissible(r, c, adm) {
                failures.push(format!("inadmissible low-rank leaf ({adm})"));
            }
            if leaf.kind == BlockKind::Dense && is_admissible(r, c, adm) && !(r.is_leaf() || c.is_leaf()) {
                failures.push(format!("admissible dense block above the leaves ({adm})"));
            }
            for i in r.lo..r.hi {
                for j in c.lo..c.hi {
                    cover[i * pts.len() + j] += 1;
                }
            }
        }
        if cover.iter().any(|&c| c != 1) {
            failures.push(format!("partition is not a tiling ({adm})"));
        }
    }

    // CR level count and block-tridiagonal structure at every level.
    for n in 2..=33 {
        let g = Grid::square(n).unwrap();
        let sys = poisson_system::<f64>(&g, &field(&g, 0.0)).unwrap();
        let pre = setup(&sys, 1e-2);
        let expected = (usize::BITS - n.leading_zeros()) as usize;
        if pre.num_levels() != expected || !pre.is_block_tridiagonal() {
            failures.push(format!("CR levels for n={n}: {} vs {expected}", pre.num_levels()));
        }
    }

    // Harmonic means.
    for _ in 0..100 {
        let (a, b) = (10f64.powf(rng.random_range(-6.0..6.0)), 10f64.powf(rng.random_range(-6.0..6.0)));
        let h = harmonic_mean(a, b).unwrap();
        let ok = (h - 2.0 * a * b / (a + b)).abs() <= 1e-14 * h
            && h == harmonic_mean(b, a).unwrap()
            && h <= (a + b) / 2.0 * (1.0 + 1e-15)
            && h >= a.min(b)
            && (harmonic_mean(a, a).unwrap() - a).abs() <= 1e-15 * a;
        if !ok {
            failures.push(format!("harmonic mean of {a} and {b}"));
        }
    }

    // Random fields: determinism and exact contrast.
    let g = Grid::cube(8).unwrap();
    for seed in 0..5 {
        let k1 = gaussian_random_field(&g, 3.0 * g.h(), 4.0, seed).unwrap();
        let k2 = gaussian_random_field(&g, 3.0 * g.h(), 4.0, seed).unwrap();
        let (lo, hi) = k1.values().iter().fold((f64::MAX, 0f64), |(l, h), &v| (l.min(v), h.max(v)));
        if k1.values() != k2.values() || ((hi / lo).log10() - 4.0).abs() > 1e-12 {
            failures.push(format!("random field seed {seed}"));
        }
    }

    // Krylov on the identity.
    for n in [1, 10, 1000] {
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let opts = KrylovOptions::default();
        let c = cg(&Identity(n), &Identity(n), &b, &opts).unwrap();
        let g = gmres(&Identity(n), &Identity(n), &b, &opts).unwrap();
        if c.iterations != 1 || g.iterations != 1 || rel_diff(&c.x, &b) > 1e-14 || rel_diff(&g.x, &b) > 1e-14 {
            failures.push(format!("identity Krylov n={n}"));
        }
    }

    if failures.is_empty() {
        Ok("truncation, partition, admissibility, CR levels, harmonic means, fields, identity Krylov".into())
    } else {
        Err(failures.join("; "))
    }
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("oracle equivalence", criterion_1),
        ("preconditioner tunability", criterion_2),
        ("contrast robustness", criterion_3),
        ("memory and rank trends", criterion_4),
        ("eta trade-off", criterion_5),
        ("convection-diffusion robustness", criterion_6),
        ("Helmholtz frequency ladder", criterion_7),
        ("complexity trends", criterion_8),
        ("parallel plan model", criterion_9),
        ("unit and property invariants", criterion_10),
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    let mut out = std::io::stdout();
    for (i, (name, run)) in criteria.iter().enumerate() {
        let id = i + 1;
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        failed += outcome.is_err() as usize;
        writeln!(out, "criterion {id:>2} {tag} [{name}] {detail} ({secs:.1}s)").unwrap();
        out.flush().unwrap();
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
