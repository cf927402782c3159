//! Helpers shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use stationary_discs::poly::{power_table, Poly, PolyMap};
use stationary_discs::structures::{lift_lower_block, vertical_lift, StructureField};

pub fn chart_map() -> PolyMap {
    let m = 4;
    let x = |i| Poly::var(m, i);
    PolyMap::new(vec![
        x(0).add(&x(1).mul(&x(2)).scale(0.3)),
        x(1).add(&x(0).mul(&x(0)).scale(-0.2)),
        x(2).add(&x(3).mul(&x(1)).scale(0.25)),
        x(3).add(&x(2).mul(&x(0)).scale(0.15)).add(&x(3).mul(&x(3)).scale(0.1)),
    ])
}

pub struct Sides {
    pub pushed: DMatrix<f64>,
    pub direct: DMatrix<f64>,
    pub direct_flipped: DMatrix<f64>,
}

/// Both sides of the naturality identity for `structure` at `(x, p)`.
pub fn both_sides(s: &StructureField, x: &[f64], p: &[f64]) -> Sides {
    let m = 4;
    let xc: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let (j, dj) = s.eval_with_derivatives(&xc);
    let j = j.map(|z| z.re);
    let dj: Vec<DMatrix<f64>> = dj.iter().map(|d| d.map(|z| z.re)).collect();

    let phi = chart_map();
    let pow = power_table(&xc, phi.max_exp());
    let jac = phi.jacobian_with(&pow);
    let dphi = DMatrix::from_fn(m, m, |r, c| jac[r * m + c].re);
    let second = phi.second_with(&pow);
    let hk: Vec<DMatrix<f64>> = second
        .iter()
        .map(|h| DMatrix::from_fn(m, m, |r, c| h[r * m + c].re))
        .collect();
    let dinv = dphi.clone().try_inverse().unwrap();
    let dinv_t = dinv.transpose();
    let pv = DVector::from_column_slice(p);

    // image structure and its derivatives in the target coordinates
    let g = &dphi * &j * &dinv;
    let dg: Vec<DMatrix<f64>> = (0..m)
        .map(|k| &hk[k] * &j * &dinv + &dphi * &dj[k] * &dinv - &g * &hk[k] * &dinv)
        .collect();
    let dy: Vec<DMatrix<f64>> = (0..m)
        .map(|l| {
            let mut acc = DMatrix::zeros(m, m);
            for k in 0..m {
                acc += &dg[k] * dinv[(k, l)];
            }
            acc
        })
        .collect();
    let p_new = &dinv_t * &pv;
    let direct = vertical_lift(&g, &dy, p_new.as_slice());
    let mut direct_flipped = direct.clone();
    let l = lift_lower_block(&dy, p_new.as_slice());
    direct_flipped.view_mut((m, 0), (m, m)).copy_from(&(-l));

    let mut dpsi = DMatrix::zeros(2 * m, 2 * m);
    dpsi.view_mut((0, 0), (m, m)).copy_from(&dphi);
    dpsi.view_mut((m, m), (m, m)).copy_from(&dinv_t);
    for k in 0..m {
        let col = -(&dinv_t * hk[k].transpose() * &dinv_t * &pv);
        for r in 0..m {
            dpsi[(m + r, k)] = col[r];
        }
    }
    let lift = vertical_lift(&j, &dj, p);
    let pushed = &dpsi * lift * dpsi.clone().try_inverse().unwrap();
    Sides {
        pushed,
        direct,
        direct_flipped,
    }
}

/// Largest entry gap between the lift built from analytic derivatives of
/// the structure and the one built from central differences.
pub fn lift_difference_defect(s: &StructureField, x: &[f64], p: &[f64]) -> f64 {
    let m = x.len();
    let xc: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let (j, dj) = s.eval_with_derivatives(&xc);
    let j = j.map(|z| z.re);
    let dj: Vec<DMatrix<f64>> = dj.iter().map(|d| d.map(|z| z.re)).collect();
    let h = 1e-5;
    let dj_fd: Vec<DMatrix<f64>> = (0..m)
        .map(|k| {
            let mut a = x.to_vec();
            let mut b = x.to_vec();
            a[k] += h;
            b[k] -= h;
            (s.eval_real(&a) - s.eval_real(&b)) / (2.0 * h)
        })
        .collect();
    (vertical_lift(&j, &dj, p) - vertical_lift(&j, &dj_fd, p)).amax()
}
