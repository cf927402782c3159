//! The lift must commute with cotangent lifts of diffeomorphisms:
//! `dpsi . lift(E)(x, p) . dpsi^{-1} = lift(phi_* E)(psi(x, p))`.

mod common;

use common::{both_sides, lift_difference_defect};
use nalgebra::DMatrix;
use num_complex::Complex64;
use stationary_discs::structures::{sample_polynomial, vertical_lift};

#[test]
fn lift_is_natural_under_cotangent_lifts() {
    for (x, p) in [
        ([0.1, -0.2, 0.3, 0.05], [1.0, 0.5, -0.3, 0.2]),
        ([-0.4, 0.1, 0.0, 0.2], [0.2, -1.0, 0.7, 0.4]),
    ] {
        let s = both_sides(&sample_polynomial(2, 0.4, 1.0).unwrap(), &x, &p);
        let scale = s.pushed.norm();
        assert!((&s.pushed - &s.direct).norm() < 1e-12 * scale, "{}", (&s.pushed - &s.direct).norm());
        assert!((&s.pushed - &s.direct_flipped).norm() > 1e-3);
    }
}

fn lift_square_defect(s: &stationary_discs::structures::StructureField) -> f64 {
    let x = [0.2, 0.1, -0.3, 0.4];
    let xc: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let (j, dj) = s.eval_with_derivatives(&xc);
    let j = j.map(|z| z.re);
    let dj: Vec<DMatrix<f64>> = dj.iter().map(|d| d.map(|z| z.re)).collect();
    let t = vertical_lift(&j, &dj, &[0.3, -0.7, 1.1, 0.2]);
    (&t * &t + DMatrix::identity(8, 8)).norm()
}

#[test]
fn lift_is_complex_exactly_for_integrable_samples() {
    use stationary_discs::structures::sample_pullback;
    assert!(lift_square_defect(&sample_pullback(2, 0.4, 1.0).unwrap()) < 1e-12);
    assert!(lift_square_defect(&sample_polynomial(2, 0.4, 1.0).unwrap()) > 1e-3);
}

#[test]
fn lift_entries_match_differences() {
    let s = sample_polynomial(2, 0.4, 1.0).unwrap();
    let d = lift_difference_defect(&s, &[0.1, -0.2, 0.3, 0.05], &[1.0, 0.5, -0.3, 0.2]);
    assert!(d < 1e-8, "{d}");
}
