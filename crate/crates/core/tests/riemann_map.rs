use num_complex::Complex64;
use stationary_discs::disc_solver::{canonical_disc, SolverConfig};
use stationary_discs::linalg::cvec_norm;
use stationary_discs::riemann_map::{
    annulus_samples, build_indicatrix, check_bounds, check_foliation, check_indicatrix_pseudoconvex, identity_map, map_samples,
    orbit_directions, riemann_map_eval, riemann_map_inverse, shell_samples, verify_equivalence, RiemannMapData,
};
use stationary_discs::structures::{sample_polynomial, sample_pullback, StructureField};

type C64 = Complex64;

fn config(lambda: f64) -> SolverConfig {
    SolverConfig {
        step: lambda,
        max_step: lambda,
        ..SolverConfig::default()
    }
}

fn dist(a: &[C64], b: &[C64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt()
}

#[test]
fn unit_sphere_indicatrix_has_unit_levi_form() {
    let s = sample_polynomial(2, 0.0, 1.0).unwrap();
    let grid = build_indicatrix(&s, 4, &SolverConfig::default()).unwrap();
    for sample in &grid.samples {
        assert!((cvec_norm(&sample.v) - 1.0).abs() < 1e-12);
    }
    let report = check_indicatrix_pseudoconvex(&grid, &StructureField::standard(2)).unwrap();
    assert!((report.min_eigenvalue - 1.0).abs() < 1e-3, "{report:?}");
    assert!(report.sphere_distance < 1e-12);
}

#[test]
fn deformed_indicatrix_stays_strictly_pseudoconvex() {
    let lambda = 0.02;
    let s = sample_polynomial(2, lambda, 1.0).unwrap();
    let grid = build_indicatrix(&s, 6, &config(lambda)).unwrap();
    let report = check_indicatrix_pseudoconvex(&grid, &StructureField::standard(2)).unwrap();
    assert!(report.min_eigenvalue >= 0.5, "{report:?}");
    // a smooth deformation: distance to the sphere of order lambda
    assert!(report.sphere_distance > 0.0 && report.sphere_distance < 10.0 * lambda, "{report:?}");
}

#[test]
fn riemann_map_straightens_canonical_discs() {
    let lambda = 0.03;
    let s = sample_polynomial(2, lambda, 1.0).unwrap();
    let data = RiemannMapData::new(s.clone(), config(lambda));
    let mut worst = 0.0f64;
    for u in orbit_directions(2, 3).iter().step_by(3) {
        let disc = canonical_disc(&s, u, &data.config).unwrap();
        let v = disc.tangent();
        for t in [0.2, 0.5, 0.8] {
            let z = disc.f.eval(C64::new(t, 0.0));
            let psi = riemann_map_eval(&data, &z).unwrap().psi;
            let expected: Vec<C64> = v.iter().map(|c| c * t).collect();
            worst = worst.max(dist(&psi, &expected));
        }
    }
    assert!(worst <= 1e-7, "{worst:e}");
}

#[test]
fn riemann_map_commutes_with_rotations_for_integrable_structures() {
    let lambda = 0.03;
    let s = sample_pullback(2, lambda, 1.0).unwrap();
    let data = RiemannMapData::new(s.clone(), config(lambda));
    let disc = canonical_disc(&s, &[C64::new(0.6, 0.0), C64::new(0.0, 0.8)], &data.config).unwrap();
    let v = disc.tangent();
    let mut worst = 0.0f64;
    for theta in [0.7, 2.0, 4.1] {
        let zeta = C64::from_polar(0.5, theta);
        let psi = riemann_map_eval(&data, &disc.f.eval(zeta)).unwrap().psi;
        let expected: Vec<C64> = v.iter().map(|c| c * zeta).collect();
        worst = worst.max(dist(&psi, &expected));
    }
    assert!(worst <= 1e-7, "{worst:e}");
}

#[test]
fn inverse_map_round_trip() {
    let lambda = 0.03;
    let data = RiemannMapData::new(sample_polynomial(2, lambda, 1.0).unwrap(), config(lambda));
    for z in map_samples(2, 3, 0.8, 5) {
        let psi = riemann_map_eval(&data, &z).unwrap().psi;
        let back = riemann_map_inverse(&data, &psi).unwrap();
        assert!(dist(&back, &z) <= 1e-8, "{:e}", dist(&back, &z));
    }
}

#[test]
fn standard_structure_has_unit_bounds_and_trivial_foliation() {
    let s = StructureField::standard(2);
    let data = RiemannMapData::new(s.clone(), SolverConfig::default());
    let r = check_bounds(&data, &shell_samples(2, 6, &[0.3, 0.7], 2)).unwrap();
    assert!((r.lower - 1.0).abs() <= 1e-10 && (r.upper - 1.0).abs() <= 1e-10, "{r:?}");
    let f = check_foliation(&s, &annulus_samples(2, 6, 0.05, 3), 2, &SolverConfig::default()).unwrap();
    assert!(f.passes(1e-10), "{f:?}");
    assert!((f.min_jacobian - 1.0).abs() < 1e-4, "{f:?}");
}

#[test]
fn pullback_is_equivalent_to_the_standard_structure() {
    let lambda = 0.03;
    let s = sample_pullback(2, lambda, 1.0).unwrap();
    let phi = s.ball_map().unwrap();
    let r = verify_equivalence(&s, &StructureField::standard(2), &phi, &map_samples(2, 3, 0.8, 7), &config(lambda)).unwrap();
    assert!(r.max_discrepancy <= 1e-5, "{r:?}");
}

#[test]
fn identity_is_the_only_self_map_with_unit_differential() {
    let lambda = 0.02;
    let s = sample_polynomial(2, lambda, 1.0).unwrap();
    let r = verify_equivalence(&s, &s, &identity_map(2), &map_samples(2, 2, 0.7, 8), &config(lambda)).unwrap();
    assert!(r.max_discrepancy <= 1e-8, "{r:?}");
}
