//! Real-form conventions: `x[2k] = Re z_k`, `x[2k+1] = Im z_k`, and the
//! standard structure `J0` acts as multiplication by `i`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

pub const I: Complex64 = Complex64::new(0.0, 1.0);
pub const ONE: Complex64 = Complex64::new(1.0, 0.0);
pub const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// The standard structure on `R^{2n}`.
pub fn j0(n: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(2 * n, 2 * n);
    for k in 0..n {
        m[(2 * k, 2 * k + 1)] = -1.0;
        m[(2 * k + 1, 2 * k)] = 1.0;
    }
    m
}

pub fn j0_complex(n: usize) -> CMat {
    j0(n).map(|v| Complex64::new(v, 0.0))
}

/// Real form of complex conjugation, `diag(1, -1, ...)`.
pub fn conj_matrix(n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(2 * n, 2 * n, |r, c| {
        if r != c {
            0.0
        } else if r % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    })
}

pub fn to_complex(m: &DMatrix<f64>) -> CMat {
    m.map(|v| Complex64::new(v, 0.0))
}

/// Packs a complex `n`-vector into its real form.
pub fn real_form(z: &[Complex64]) -> Vec<f64> {
    z.iter().flat_map(|c| [c.re, c.im]).collect()
}

/// Unpacks a real form into complex coordinates.
pub fn complex_form(x: &[f64]) -> Vec<Complex64> {
    x.chunks(2).map(|p| Complex64::new(p[0], p[1])).collect()
}

/// Real form of a complex vector from its holomorphic continuation `z` and
/// the continuation `zs` of its conjugate; entries are complex off the
/// real slice.
pub fn real_form_pair(z: &[Complex64], zs: &[Complex64], out: &mut [Complex64]) {
    for (k, (a, b)) in z.iter().zip(zs).enumerate() {
        out[2 * k] = (a + b) * 0.5;
        out[2 * k + 1] = (a - b) * Complex64::new(0.0, -0.5);
    }
}

/// Recombines a complexified real form into the complex coordinates
/// `x[2k] + i x[2k+1]`.
pub fn complex_from_pairs(x: &[Complex64]) -> Vec<Complex64> {
    x.chunks(2).map(|p| p[0] + I * p[1]).collect()
}

/// Real `2n x 2n` matrix of a complex-linear map `C^n -> C^n`.
pub fn realify(u: &CMat) -> DMatrix<f64> {
    let n = u.nrows();
    let m = u.ncols();
    let mut out = DMatrix::zeros(2 * n, 2 * m);
    for r in 0..n {
        for c in 0..m {
            let z = u[(r, c)];
            out[(2 * r, 2 * c)] = z.re;
            out[(2 * r, 2 * c + 1)] = -z.im;
            out[(2 * r + 1, 2 * c)] = z.im;
            out[(2 * r + 1, 2 * c + 1)] = z.re;
        }
    }
    out
}

/// Unitary `U` with `U u = |u| e_1`, built by completing `u` to an
/// orthonormal basis.
pub fn unitary_to_e1(u: &[Complex64]) -> CMat {
    let n = u.len();
    let norm = u.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    let mut basis: Vec<CVec> = vec![CVec::from_iterator(n, u.iter().map(|c| c / norm))];
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| u[a].norm().partial_cmp(&u[b].norm()).unwrap());
    for &k in &order {
        if basis.len() == n {
            break;
        }
        let mut v = CVec::zeros(n);
        v[k] = ONE;
        for b in &basis {
            let proj = b.dotc(&v);
            v -= b * proj;
        }
        let nv = v.norm();
        if nv > 1e-8 {
            basis.push(v / Complex64::new(nv, 0.0));
        }
    }
    // rows of U are conjugated basis vectors, so U b_0 = e_1
    CMat::from_fn(n, n, |r, c| basis[r][c].conj())
}

/// Largest singular value of a small complex matrix.
pub fn op_norm(m: &CMat) -> f64 {
    m.clone().singular_values().iter().cloned().fold(0.0, f64::max)
}

pub fn op_norm_real(m: &DMatrix<f64>) -> f64 {
    m.clone().singular_values().iter().cloned().fold(0.0, f64::max)
}

pub fn vec_norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn cvec_norm(x: &[Complex64]) -> f64 {
    x.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn j0_is_multiplication_by_i() {
        let z = [Complex64::new(0.3, -0.2), Complex64::new(1.0, 2.0)];
        let x = DVector::from_vec(real_form(&z));
        let y = j0(2) * x;
        let w = complex_form(y.as_slice());
        for k in 0..2 {
            assert!((w[k] - I * z[k]).norm() < 1e-15);
        }
    }

    #[test]
    fn unitary_frame() {
        let u = [Complex64::new(0.0, 0.6), Complex64::new(0.8, 0.0)];
        let m = unitary_to_e1(&u);
        let v = &m * CVec::from_column_slice(&u);
        assert!((v[0] - ONE).norm() < 1e-14 && v[1].norm() < 1e-14);
        let id = &m * m.adjoint();
        assert!((id - CMat::identity(2, 2)).norm() < 1e-14);
        let r = realify(&m);
        let jj = &r * j0(2) - j0(2) * &r;
        assert!(jj.norm() < 1e-14);
    }
}
