use nalgebra::DVector;
use proptest::prelude::*;

use super::*;
use crate::cluster::Admissibility;
use crate::cr::exact_cr_solve;
use crate::krylov::{cg, Identity, KrylovOptions};
use crate::problems::{gaussian_random_field, poisson_system, CoefficientField, Grid};
use crate::sparse::CsrMatrix;

fn exact_opts(plane: usize) -> AcrOptions {
    AcrOptions::new(HOptions::new(0.0, Admissibility::strong(), plane))
}

fn scalar_system(d: &[f64], l: f64, u: f64) -> BlockTridiagonalSystem<f64> {
    let n = d.len();
    let diag = d.iter().map(|&v| CsrMatrix::from_triplets(1, 1, &[(0, 0, v)]).unwrap()).collect();
    let lower = (0..n).map(|i| if i == 0 { vec![] } else { vec![l] }).collect();
    let upper = (0..n).map(|i| if i + 1 == n { vec![] } else { vec![u] }).collect();
    BlockTridiagonalSystem::new(diag, lower, upper, vec![1.0; n], vec![[0.0, 0.0]]).unwrap()
}

fn poisson(n: usize, contrast: f64, seed: u64) -> BlockTridiagonalSystem<f64> {
    let g = Grid::cube(n).unwrap();
    let k = gaussian_random_field(&g, 3.0 * g.h(), contrast, seed).unwrap();
    poisson_system(&g, &k).unwrap()
}

fn rhs(len: usize) -> Vec<f64> {
    (0..len).map(|i| ((i * 37 % 101) as f64) / 50.0 - 1.0).collect()
}

#[test]
fn scalar_three_row_example() {
    let sys = scalar_system(&[2.0; 3], -1.0, -1.0);
    let p = AcrPreconditioner::setup(&sys, exact_opts(1)).unwrap();
    assert_eq!(p.num_levels(), 2);
    assert_eq!(p.eliminated(0), vec![0, 2]);
    let x = p.apply(&[1.0; 3]).unwrap();
    for (a, b) in x.iter().zip([1.5, 2.0, 1.5]) {
        assert!((a - b).abs() < 1e-14, "{x:?}");
    }
    // the surviving row is 2 - 2 * (1/2) = 1, so x_2 = 1 + 0.5 + 0.5
    let y = p.apply(&[0.0, 1.0, 0.0]).unwrap();
    assert!((y[1] - 1.0).abs() < 1e-14);
}

#[test]
fn identity_system_gives_identity() {
    let n = 5;
    let m = 9;
    let diag = (0..n).map(|_| CsrMatrix::identity(m)).collect();
    let lower = (0..n).map(|i| if i == 0 { vec![] } else { vec![0.0; m] }).collect();
    let upper = (0..n).map(|i| if i + 1 == n { vec![] } else { vec![0.0; m] }).collect();
    let pts = crate::cluster::plane_points(3, 0.25);
    let sys = BlockTridiagonalSystem::new(diag, lower, upper, vec![1.0; n * m], pts).unwrap();
    let p = AcrPreconditioner::setup(&sys, AcrOptions::new(HOptions::new(1e-2, Admissibility::strong(), 2))).unwrap();
    let f = rhs(n * m);
    let x = p.apply(&f).unwrap();
    assert!(x.iter().zip(&f).all(|(a, b)| (a - b).abs() < 1e-14));
}

#[test]
fn exact_mode_matches_lu() {
    let sys = poisson(7, 2.0, 3);
    let p = AcrPreconditioner::setup(&sys, exact_opts(49)).unwrap();
    let f = rhs(sys.len());
    let x = p.apply(&f).unwrap();
    let lu = sys.to_csr().to_dense().lu().solve(&DVector::from_column_slice(&f)).unwrap();
    let err = (DVector::from_column_slice(&x) - &lu).norm() / lu.norm();
    assert!(err <= 1e-12, "err {err}");
    assert!(sys.relative_residual(&x, &f).unwrap() <= 1e-12);
    let cr = exact_cr_solve(&sys, &f).unwrap();
    let d = x.iter().zip(&cr).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(d <= 1e-10 * lu.amax());
}

#[test]
fn exact_mode_with_hierarchical_blocks() {
    // epsilon = 0 keeps every low-rank block exact, so the result is still a
    // direct solve
    let sys = poisson(8, 1.0, 2);
    let p = AcrPreconditioner::setup(&sys, AcrOptions::new(HOptions::new(0.0, Admissibility::strong(), 8))).unwrap();
    assert!(p.rank_stats().lowrank_leaves > 0);
    let f = rhs(sys.len());
    let x = p.apply(&f).unwrap();
    assert!(sys.relative_residual(&x, &f).unwrap() <= 1e-10);
}

#[test]
fn level_count_and_partition() {
    for n in 1..=17 {
        let sys = scalar_system(&vec![4.0; n], -1.0, -1.0);
        let p = AcrPreconditioner::setup(&sys, exact_opts(1)).unwrap();
        let want = ((n + 1) as f64).log2().ceil() as usize;
        assert_eq!(p.num_levels(), want, "n={n}");
        assert!(p.is_block_tridiagonal());
        let mut all: Vec<usize> = (0..p.num_levels()).flat_map(|l| p.eliminated(l)).collect();
        all.sort_unstable();
        assert_eq!(all, (0..n).collect::<Vec<_>>());
        let x = p.apply(sys.rhs()).unwrap();
        assert!(sys.relative_residual(&x, sys.rhs()).unwrap() < 1e-14);
    }
}

#[test]
fn early_stop_uses_dense_coarse_solve() {
    let sys = poisson(6, 2.0, 5);
    let mut opts = exact_opts(36);
    opts.coarse_rows = 3;
    let p = AcrPreconditioner::setup(&sys, opts).unwrap();
    assert_eq!(p.num_levels(), 1);
    assert_eq!(p.coarse_rows(), &[1, 3, 5]);
    assert!(p.is_block_tridiagonal());
    let f = rhs(sys.len());
    let x = p.apply(&f).unwrap();
    assert!(sys.relative_residual(&x, &f).unwrap() <= 1e-12);
}

#[test]
fn footprint_is_sum_of_levels_and_grows_as_epsilon_tightens() {
    let sys = poisson(15, 4.0, 1);
    let mut last = 0;
    for eps in [1e-1, 1e-4] {
        let p =
            AcrPreconditioner::setup(&sys, AcrOptions::new(HOptions::new(eps, Admissibility::strong(), 16))).unwrap();
        let s = p.stats();
        assert_eq!(p.footprint(), s.levels.iter().map(|l| l.bytes).sum::<usize>());
        assert!(p.footprint() < p.dense_bytes());
        assert!(p.footprint() > last);
        last = p.footprint();
    }
}

#[test]
fn preconditioned_cg_beats_plain_cg() {
    let sys = poisson(15, 2.0, 4);
    let p = AcrPreconditioner::setup(&sys, AcrOptions::new(HOptions::new(1e-3, Admissibility::strong(), 16))).unwrap();
    let opts = KrylovOptions::default();
    let with = cg(&sys, &p, sys.rhs(), &opts).unwrap();
    let without = cg(&sys, &Identity(sys.len()), sys.rhs(), &opts).unwrap();
    assert!(with.converged && without.converged);
    assert!(with.iterations * 3 < without.iterations, "{} vs {}", with.iterations, without.iterations);
}

#[test]
fn singular_pivot_reports_level_and_block() {
    let sys = scalar_system(&[1.0, 2.0, 1.0], 1.0, 1.0);
    match AcrPreconditioner::setup(&sys, exact_opts(1)) {
        Err(AcrError::SingularPivot { level: Some(1), block: Some(1), .. }) => {}
        Err(e) => panic!("unexpected {e:?}"),
        Ok(_) => panic!("expected a singular pivot"),
    }
}

#[test]
fn apply_checks_length() {
    let sys = scalar_system(&[2.0; 3], -1.0, -1.0);
    let p = AcrPreconditioner::setup(&sys, exact_opts(1)).unwrap();
    assert!(matches!(p.apply(&[1.0; 2]), Err(AcrError::LengthMismatch { .. })));
}

#[test]
fn stats_csv_has_one_line_per_level() {
    let g = Grid::cube(4).unwrap();
    let sys = poisson_system::<f64>(&g, &CoefficientField::constant(g, 1.0).unwrap()).unwrap();
    let p = AcrPreconditioner::setup(&sys, AcrOptions::default()).unwrap();
    let mut buf = Vec::new();
    p.stats().write_csv(&mut buf).unwrap();
    let s = String::from_utf8(buf).unwrap();
    assert_eq!(s.lines().next(), Some("level,rows_remaining,max_rank,avg_rank,bytes,elapsed"));
    assert_eq!(s.lines().count(), p.num_levels() + 1);
}

#[test]
fn single_precision_setup() {
    let g = Grid::cube(5).unwrap();
    let sys = poisson_system::<f32>(&g, &CoefficientField::constant(g, 1.0).unwrap()).unwrap();
    let p = AcrPreconditioner::setup(&sys, AcrOptions::new(HOptions::new(0.0, Admissibility::strong(), 25))).unwrap();
    let x = p.apply(sys.rhs()).unwrap();
    assert!(sys.relative_residual(&x, sys.rhs()).unwrap() < 1e-4);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn exact_mode_solves_random_tridiagonal_systems(
        d in proptest::collection::vec(3.0f64..6.0, 1..40),
        l in -1.0f64..1.0,
        u in -1.0f64..1.0,
    ) {
        let sys = scalar_system(&d, l, u);
        let p = AcrPreconditioner::setup(&sys, exact_opts(1)).unwrap();
        prop_assert!(p.is_block_tridiagonal());
        let x = p.apply(sys.rhs()).unwrap();
        prop_assert!(sys.relative_residual(&x, sys.rhs()).unwrap() < 1e-13);
    }
}
