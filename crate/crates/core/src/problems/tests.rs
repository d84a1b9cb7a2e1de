use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;

fn unit(grid: Grid) -> CoefficientField {
    CoefficientField::constant(grid, 1.0).unwrap()
}

#[test]
fn harmonic_mean_examples() {
    assert_eq!(harmonic_mean(1.0, 1.0).unwrap(), 1.0);
    assert_eq!(harmonic_mean(1.0, 3.0).unwrap(), 1.5);
    assert!(harmonic_mean(0.0, 1.0).is_err());
    assert!(harmonic_mean(-1.0, 1.0).is_err());
}

proptest! {
    #[test]
    fn harmonic_mean_is_idempotent(a in 1e-6f64..1e6) {
        prop_assert!((harmonic_mean(a, a).unwrap() - a).abs() <= 1e-12 * a);
    }

    #[test]
    fn harmonic_mean_lies_between_min_and_double_min(a in 1e-3f64..1e3, b in 1e-3f64..1e3) {
        let m = harmonic_mean(a, b).unwrap();
        prop_assert!(m >= a.min(b) * (1.0 - 1e-12) && m <= 2.0 * a.min(b) * (1.0 + 1e-12));
        prop_assert_eq!(m, harmonic_mean(b, a).unwrap());
    }
}

#[test]
fn constant_poisson_has_laplacian_stencil() {
    let g = Grid::cube(5).unwrap();
    let a = poisson_system::<f64>(&g, &unit(g)).unwrap().to_csr();
    let h2 = g.h() * g.h();
    let p = g.index([2, 2, 2]);
    assert!((a.get(p, p) - 6.0 / h2).abs() < 1e-9);
    let off: Vec<f64> = a.row(p).filter(|&(c, _)| c != p).map(|e| e.1).collect();
    assert_eq!(off.len(), 6);
    assert!(off.iter().all(|v| (v + 1.0 / h2).abs() < 1e-9));
}

#[test]
fn variable_poisson_is_symmetric_and_positive_definite() {
    let g = Grid::cube(7).unwrap();
    let kappa = gaussian_random_field(&g, 3.0 * g.h(), 2.0, 11).unwrap();
    let sys = poisson_system::<f64>(&g, &kappa).unwrap();
    assert!(sys.is_symmetric());
    let a = sys.to_csr();
    assert!(a.is_symmetric());
    let eig = a.to_dense().symmetric_eigenvalues();
    assert!(eig.min() > 0.0);
}

#[test]
fn initial_couplings_are_face_coefficients() {
    let g = Grid::cube(4).unwrap();
    let kappa = gaussian_random_field(&g, 3.0 * g.h(), 1.0, 3).unwrap();
    let sys = poisson_system::<f64>(&g, &kappa).unwrap();
    let h2 = g.h() * g.h();
    let k = kappa.values();
    for i in 1..sys.nblocks() {
        for (j, &v) in sys.lower(i).unwrap().iter().enumerate() {
            let (p, q) = (i * 16 + j, (i - 1) * 16 + j);
            assert!((v + harmonic_mean(k[p], k[q]).unwrap() / h2).abs() < 1e-9);
        }
    }
    assert!(sys.lower(0).is_none() && sys.upper(3).is_none());
}

#[test]
fn flow_examples() {
    let b = flow_eval([0.0, 0.0, 0.0], 1.0);
    let r2 = std::f64::consts::SQRT_2;
    assert!(b[0].abs() < 1e-15 && (b[1] - r2).abs() < 1e-14 && (b[2] - r2 / 2.0).abs() < 1e-14);
}

proptest! {
    #[test]
    fn flow_is_periodic_for_integer_a(x in 0.0f64..1.0, y in 0.0f64..1.0, z in 0.0f64..1.0, a in 1u32..6, axis in 0usize..3) {
        let p = [x, y, z];
        let mut q = p;
        q[axis] += 1.0;
        let (b0, b1) = (flow_eval(p, a as f64), flow_eval(q, a as f64));
        for d in 0..3 {
            prop_assert!((b0[d] - b1[d]).abs() < 1e-9);
        }
    }
}

#[test]
fn flow_is_divergence_free() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let h = 1e-5;
    for _ in 0..100 {
        let x: [f64; 3] = std::array::from_fn(|_| rand::Rng::random_range(&mut rng, 0.0..1.0));
        let mut div = 0.0;
        for d in 0..3 {
            let (mut p, mut m) = (x, x);
            p[d] += h;
            m[d] -= h;
            div += (flow_eval(p, 1.0)[d] - flow_eval(m, 1.0)[d]) / (2.0 * h);
        }
        assert!(div.abs() <= 1e-6, "div {div}");
    }
}

#[test]
fn convdiff_reduces_to_poisson_without_convection() {
    let g = Grid::cube(5).unwrap();
    let kappa = gaussian_random_field(&g, 3.0 * g.h(), 2.0, 1).unwrap();
    let a = convdiff_system::<f64>(&g, &kappa, 0.0, 4.0).unwrap().to_csr();
    let b = poisson_system::<f64>(&g, &kappa).unwrap().to_csr();
    assert_eq!(a, b);
}

#[test]
fn convdiff_is_nonsymmetric() {
    let g = Grid::cube(6).unwrap();
    let sys = convdiff_system::<f64>(&g, &unit(g), 8.0, 4.0).unwrap();
    assert!(!sys.is_symmetric());
    let a = sys.to_csr();
    let d = a.add_scaled(-1.0, &a.transpose()).unwrap();
    assert!(d.frobenius() > 0.0);
}

#[test]
fn upwind_convection_annihilates_constants_in_the_interior() {
    let g = Grid::cube(7).unwrap();
    let base = poisson_system::<f64>(&g, &unit(g)).unwrap().to_csr();
    let conv = convdiff_system::<f64>(&g, &unit(g), 1.0, 1.0).unwrap().to_csr();
    let c = conv.add_scaled(-1.0, &base).unwrap();
    let ones = vec![1.0; g.len()];
    let rs = c.matvec(&ones).unwrap();
    for (p, r) in rs.iter().enumerate() {
        if g.ijk(p).iter().all(|&i| i > 0 && i + 1 < g.n()) {
            assert!(r.abs() < 1e-9, "row {p}: {r}");
        }
    }
}

#[test]
fn velocity_examples() {
    assert!((velocity_eval([0.5, 0.5, 0.3]) - 0.75).abs() < 1e-15);
    assert!((velocity_eval([0.0, 0.0, 0.9]) - 1.25 * (1.0 - 0.4 * (-16.0f64).exp())).abs() < 1e-15);
}

#[test]
fn zero_frequency_helmholtz_is_unit_poisson() {
    let g = Grid::cube(5).unwrap();
    let a = helmholtz_system::<f64>(&g, 0.0).unwrap().to_csr();
    let b = poisson_system::<f64>(&g, &unit(g)).unwrap().to_csr();
    assert_eq!(a, b);
}

#[test]
fn points_per_wavelength_matches_reference_grid() {
    let g = Grid::cube(128).unwrap();
    let h: f64 = 1.0 / 127.0;
    let ppw = 0.75 / (8.0 * h);
    assert!((ppw - 11.9).abs() < 0.05);
    assert!((points_per_wavelength(&g, 8.0) - 0.75 * 129.0 / 8.0).abs() < 1e-12);
    let g31 = Grid::cube(31).unwrap();
    assert!((points_per_wavelength(&g31, frequency_for_ppw(&g31, 24.0)) - 24.0).abs() < 1e-12);
}

#[test]
fn manufactured_solution_converges_at_second_order() {
    let mut errs = Vec::new();
    for n in [7, 15] {
        let g = Grid::cube(n).unwrap();
        let sys = helmholtz_system::<f64>(&g, 0.0).unwrap();
        let a = sys.to_csr().to_dense();
        let x = a.lu().solve(&nalgebra::DVector::from_column_slice(sys.rhs())).unwrap();
        let err = (0..g.len()).map(|p| (x[p] - helmholtz_exact(g.coords(p))).abs()).fold(0.0, f64::max);
        errs.push((g.h(), err));
    }
    let rate = (errs[0].1 / errs[1].1).ln() / (errs[0].0 / errs[1].0).ln();
    assert!(rate > 1.8 && rate < 2.2, "rate {rate}");
}

#[test]
fn field_contrast_is_exact_and_deterministic() {
    let g = Grid::cube(16).unwrap();
    let a = gaussian_random_field(&g, 3.0 * g.h(), 4.0, 42).unwrap();
    let b = gaussian_random_field(&g, 3.0 * g.h(), 4.0, 42).unwrap();
    assert_eq!(a.values(), b.values());
    let lo = a.values().iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = a.values().iter().cloned().fold(0.0, f64::max);
    assert!(((hi / lo).log10() - 4.0).abs() <= 1e-12);
    let c = gaussian_random_field(&g, 3.0 * g.h(), 4.0, 43).unwrap();
    assert_ne!(a.values(), c.values());
    let flat = gaussian_random_field(&g, 3.0 * g.h(), 0.0, 42).unwrap();
    assert!(flat.values().iter().all(|&v| v == 1.0));
}

/// Average correlation at lag `3h` along x over many seeds.
fn lag_correlation(sampler: &GaussianSampler, g: &Grid, seeds: u64) -> f64 {
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for seed in 0..seeds {
        let z = sampler.sample(&mut ChaCha8Rng::seed_from_u64(seed));
        for p in 0..g.len() {
            let [i, j, k] = g.ijk(p);
            if i + 3 < g.n() {
                let q = g.index([i + 3, j, k]);
                sxy += z[p] * z[q];
                sxx += z[p] * z[p];
                syy += z[q] * z[q];
            }
        }
    }
    sxy / (sxx * syy).sqrt()
}

#[test]
fn field_correlation_at_lag_three_h_is_one_over_e() {
    let g = Grid::cube(16).unwrap();
    let sampler = GaussianSampler::new(g, 3.0 * g.h()).unwrap();
    let rho = lag_correlation(&sampler, &g, 200);
    assert!((rho - (-1.0f64).exp()).abs() < 0.03, "rho {rho}");
}

#[test]
fn dense_sampler_matches_covariance() {
    let g = Grid::square(12).unwrap();
    let sampler = GaussianSampler::new(g, 3.0 * g.h()).unwrap();
    let rho = lag_correlation(&sampler, &g, 400);
    assert!((rho - (-1.0f64).exp()).abs() < 0.03, "rho {rho}");
}

#[test]
fn field_binary_roundtrip() {
    let g = Grid::square(9).unwrap();
    let f = gaussian_random_field(&g, 0.2, 3.0, 7).unwrap();
    let mut buf = Vec::new();
    f.write_binary(&mut buf).unwrap();
    let back = CoefficientField::read_binary(&buf[..]).unwrap();
    assert_eq!(f, back);
    assert!(CoefficientField::read_binary(&b"XXXX"[..]).is_err());
}

#[test]
fn system_matvec_matches_assembled_matrix() {
    let g = Grid::cube(5).unwrap();
    let sys = convdiff_system::<f64>(&g, &unit(g), 2.0, 2.0).unwrap();
    let x: Vec<f64> = (0..g.len()).map(|i| (i as f64 * 0.37).sin()).collect();
    let y = sys.matvec(&x).unwrap();
    let z = sys.to_csr().matvec(&x).unwrap();
    let d = DMatrix::from_column_slice(g.len(), 1, &y) - DMatrix::from_column_slice(g.len(), 1, &z);
    assert!(d.norm() < 1e-9);
}

#[test]
fn two_dimensional_plane_operator() {
    let g = Grid::square(6).unwrap();
    let sys = poisson_system::<f64>(&g, &unit(g)).unwrap();
    assert_eq!((sys.nblocks(), sys.block_size()), (6, 6));
    let a = sys.to_csr();
    let h2 = g.h() * g.h();
    assert!((a.get(7, 7) - 4.0 / h2).abs() < 1e-9);
}
