//! Totally real fibrations over the circle and the matrices `K`, `B` of
//! their conjugate gradients along a lifted disc.
//!
//! For the sphere the fiber coordinate `w` is the `(1,0)`-coframe value of
//! the lifted covector, and the meromorphic lift is `t = zeta^{-1} w`, the
//! product taken in the fiber complex structure of the current structure
//! (multiplication by `i` acts on `w` as `C J^T C`). For the standard
//! structure this is plain complex multiplication.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{self, CMat, I, ZERO};
use crate::loop_algebra::{winding_of, FourierLoop};
use crate::structures::StructureField;

/// Circle-parametrised family of `N` real defining functions on `C^N`.
pub trait FibrationSystem: Sync {
    /// Complex ambient dimension, equal to the number of defining functions.
    fn dim(&self) -> usize;

    /// Values `r^j(w, zeta)`.
    fn eval(&self, zeta: Complex64, w: &[Complex64]) -> Vec<f64>;

    /// Real gradient `d r^j / d (Re w_k, Im w_k)`, an `N x 2N` matrix.
    fn real_gradient(&self, zeta: Complex64, w: &[Complex64]) -> DMatrix<f64>;

    /// Whether `r^j(z, s w) = s r^j(z, w)` for `j >= 2` and real `s`.
    fn fiber_homogeneous(&self) -> bool {
        false
    }

    /// Conjugate gradient rows `d r^j / d conj(w_k)`.
    fn conj_gradient(&self, zeta: Complex64, w: &[Complex64]) -> CMat {
        let g = self.real_gradient(zeta, w);
        let n = self.dim();
        CMat::from_fn(n, n, |j, k| {
            Complex64::new(g[(j, 2 * k)], g[(j, 2 * k + 1)]) * 0.5
        })
    }
}

/// The conormal bundle of the unit sphere in `C^n`; `N = 2n`, coordinates
/// `w = (z, fiber)`.
#[derive(Clone, Debug)]
pub struct SphereConormal {
    n: usize,
    structure: Option<StructureField>,
}

/// `r = 2 Re(c F)` with Wirtinger data of `F` on the variables `(z, t)`.
struct RealPart {
    c: Complex64,
    /// `(variable, dF/du, dF/dconj(u))`
    partials: Vec<(usize, Complex64, Complex64)>,
}

impl SphereConormal {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::Invalid("sphere conormal system needs n >= 2".into()));
        }
        Ok(Self { n, structure: None })
    }

    /// The system with fiber multiplication taken in the structure's
    /// cotangent complex structure.
    pub fn deformed(structure: StructureField) -> Result<Self> {
        let mut s = Self::new(structure.n())?;
        s.structure = Some(structure);
        Ok(s)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn structure(&self) -> Option<&StructureField> {
        self.structure.as_ref()
    }

    /// Fiber complex structure `C J^T C` and its derivatives at a real base point.
    fn fiber_structure(&self, z: &[f64]) -> (DMatrix<f64>, Vec<DMatrix<f64>>) {
        let m = 2 * self.n;
        match &self.structure {
            None => (linalg::j0(self.n), vec![DMatrix::zeros(m, m); m]),
            Some(s) => {
                let c = linalg::conj_matrix(self.n);
                let zc: Vec<Complex64> = z.iter().map(|&v| Complex64::new(v, 0.0)).collect();
                let (j, dj) = s.eval_with_derivatives(&zc);
                let b = &c * j.map(|v| v.re).transpose() * &c;
                let db = dj
                    .iter()
                    .map(|d| &c * d.map(|v| v.re).transpose() * &c)
                    .collect();
                (b, db)
            }
        }
    }

    /// Meromorphic lift `t = zeta^{-1} w` of a fiber value, real forms.
    pub fn lift_fiber(&self, zeta: Complex64, z: &[f64], w: &[f64]) -> Vec<f64> {
        let (b, _) = self.fiber_structure(z);
        let th = zeta.arg();
        let rot = DMatrix::identity(2 * self.n, 2 * self.n) * th.cos() - b * th.sin();
        (rot * nalgebra::DVector::from_column_slice(w)).as_slice().to_vec()
    }

    /// The printed functions in the variables `(z, t)`.
    fn parts(&self, z: &[Complex64], t: &[Complex64]) -> Vec<RealPart> {
        let n = self.n;
        let tv = |k: usize| n + k;
        let mut out = Vec::with_capacity(2 * n);
        // r1 = |z|^2 - 1 is handled separately; r2 = 2 Re(i z1 t1)
        out.push(RealPart {
            c: I,
            partials: vec![(0, t[0], ZERO), (tv(0), z[0], ZERO)],
        });
        for k in 1..n {
            // A = conj(z1) t_k - conj(z_k) t1
            let partials = vec![
                (0, ZERO, t[k]),
                (k, ZERO, -t[0]),
                (tv(k), z[0].conj(), ZERO),
                (tv(0), -z[k].conj(), ZERO),
            ];
            out.push(RealPart {
                c: Complex64::new(1.0, 0.0),
                partials: partials.clone(),
            });
            out.push(RealPart { c: I, partials });
        }
        out
    }

    fn values_in_zt(&self, z: &[Complex64], t: &[Complex64]) -> Vec<f64> {
        let n = self.n;
        let mut out = Vec::with_capacity(2 * n);
        out.push(z.iter().map(|v| v.norm_sqr()).sum::<f64>() - 1.0);
        out.push((I * z[0] * t[0]).re * 2.0);
        for k in 1..n {
            let a = z[0].conj() * t[k] - z[k].conj() * t[0];
            out.push(2.0 * a.re);
            out.push(2.0 * (I * a).re);
        }
        out
    }
}

impl FibrationSystem for SphereConormal {
    fn dim(&self) -> usize {
        2 * self.n
    }

    fn fiber_homogeneous(&self) -> bool {
        true
    }

    fn eval(&self, zeta: Complex64, w: &[Complex64]) -> Vec<f64> {
        let n = self.n;
        let zr = linalg::real_form(&w[..n]);
        let wr = linalg::real_form(&w[n..]);
        let t = linalg::complex_form(&self.lift_fiber(zeta, &zr, &wr));
        self.values_in_zt(&w[..n], &t)
    }

    fn real_gradient(&self, zeta: Complex64, w: &[Complex64]) -> DMatrix<f64> {
        let n = self.n;
        let m = 2 * n;
        let zr = linalg::real_form(&w[..n]);
        let wr = linalg::real_form(&w[n..]);
        let (b, db) = self.fiber_structure(&zr);
        let th = zeta.arg();
        let rot = DMatrix::identity(m, m) * th.cos() - &b * th.sin();
        let wv = nalgebra::DVector::from_column_slice(&wr);
        let t = linalg::complex_form((&rot * &wv).as_slice());
        let z = &w[..n];

        // gradient in (Re/Im z, Re/Im t)
        let mut gzt = DMatrix::zeros(m, 2 * m);
        for k in 0..n {
            gzt[(0, 2 * k)] = 2.0 * z[k].re;
            gzt[(0, 2 * k + 1)] = 2.0 * z[k].im;
        }
        for (row, part) in self.parts(z, &t).into_iter().enumerate() {
            for (var, du, dub) in part.partials {
                // d/da = F_u + F_ubar, d/db = i (F_u - F_ubar)
                let da = 2.0 * (part.c * (du + dub)).re;
                let dbv = 2.0 * (part.c * I * (du - dub)).re;
                gzt[(row + 1, 2 * var)] += da;
                gzt[(row + 1, 2 * var + 1)] += dbv;
            }
        }
        let gz = gzt.columns(0, m).into_owned();
        let gt = gzt.columns(m, m).into_owned();
        let mut out = DMatrix::zeros(m, 2 * m);
        // t = R(z) w, dR/dz_c = -sin(theta) dB/dz_c
        let mut gz_total = gz;
        for c in 0..m {
            let dt = -(&db[c] * &wv) * th.sin();
            let col = &gt * dt;
            for r in 0..m {
                gz_total[(r, c)] += col[r];
            }
        }
        out.columns_mut(0, m).copy_from(&gz_total);
        out.columns_mut(m, m).copy_from(&(&gt * &rot));
        out
    }
}

/// Fibration given by closures, for experiments and tests.
pub struct FnFibration<E, G>
where
    E: Fn(Complex64, &[Complex64]) -> Vec<f64> + Sync,
    G: Fn(Complex64, &[Complex64]) -> DMatrix<f64> + Sync,
{
    pub dim: usize,
    pub eval: E,
    pub gradient: G,
}

impl<E, G> FibrationSystem for FnFibration<E, G>
where
    E: Fn(Complex64, &[Complex64]) -> Vec<f64> + Sync,
    G: Fn(Complex64, &[Complex64]) -> DMatrix<f64> + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, zeta: Complex64, w: &[Complex64]) -> Vec<f64> {
        (self.eval)(zeta, w)
    }

    fn real_gradient(&self, zeta: Complex64, w: &[Complex64]) -> DMatrix<f64> {
        (self.gradient)(zeta, w)
    }
}

/// Square matrix-valued loop sampled on a uniform circle grid.
#[derive(Clone, Debug)]
pub struct LoopMatrix {
    size: usize,
    values: Vec<CMat>,
}

impl LoopMatrix {
    /// Samples `f` at `zeta_p = exp(2 pi i p / points)`.
    pub fn from_fn<F: Fn(Complex64) -> CMat>(size: usize, points: usize, f: F) -> Self {
        let values = (0..points)
            .map(|p| {
                let zeta = Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * p as f64 / points as f64);
                let v = f(zeta);
                assert_eq!(v.nrows(), size);
                v
            })
            .collect();
        Self { size, values }
    }

    pub fn from_values(size: usize, values: Vec<CMat>) -> Self {
        Self { size, values }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn points(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[CMat] {
        &self.values
    }

    pub fn zeta(&self, p: usize) -> Complex64 {
        Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * p as f64 / self.points() as f64)
    }

    /// Entry `(r, c)` as a Fourier loop with the given number of modes.
    pub fn entry(&self, r: usize, c: usize, modes: usize) -> Result<FourierLoop> {
        let vals = vec![self.values.iter().map(|m| m[(r, c)]).collect::<Vec<_>>()];
        FourierLoop::from_grid(&vals, modes)
    }

    /// Fourier coefficient matrices `k = -modes..=modes`.
    pub fn fourier(&self, modes: usize) -> Result<Vec<CMat>> {
        let mut out = vec![CMat::zeros(self.size, self.size); 2 * modes + 1];
        for r in 0..self.size {
            for c in 0..self.size {
                let l = self.entry(r, c, modes)?;
                for (idx, v) in l.coeffs()[0].iter().enumerate() {
                    out[idx][(r, c)] = *v;
                }
            }
        }
        Ok(out)
    }

    /// Largest mode whose coefficient exceeds `tol` times the largest one.
    pub fn bandwidth(&self, tol: f64) -> Result<usize> {
        let modes = (self.points() - 1) / 2;
        let coeffs = self.fourier(modes)?;
        let norms: Vec<f64> = coeffs.iter().map(|m| m.norm()).collect();
        let top = norms.iter().cloned().fold(0.0, f64::max);
        let mut band = 0;
        for (idx, v) in norms.iter().enumerate() {
            if *v > tol * top {
                band = band.max((idx as i64 - modes as i64).unsigned_abs() as usize);
            }
        }
        Ok(band)
    }

    /// Smallest singular value over the grid.
    pub fn min_singular(&self) -> f64 {
        self.values
            .iter()
            .map(|m| m.clone().singular_values().iter().cloned().fold(f64::INFINITY, f64::min))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max_norm(&self) -> f64 {
        self.values.iter().map(linalg::op_norm).fold(0.0, f64::max)
    }

    pub fn map<F: Fn(&CMat) -> CMat>(&self, f: F) -> Self {
        Self {
            size: self.size,
            values: self.values.iter().map(f).collect(),
        }
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        if self.points() != other.points() || self.size != other.size {
            return Err(Error::Dimension("loop matrix product".into()));
        }
        Ok(Self {
            size: self.size,
            values: self.values.iter().zip(&other.values).map(|(a, b)| a * b).collect(),
        })
    }

    /// Winding number of `det` around the origin, from the Fourier
    /// interpolant of the sampled determinant.
    pub fn det_winding(&self) -> Result<i64> {
        let dets: Vec<Complex64> = self.values.iter().map(|m| m.determinant()).collect();
        let points = dets.len();
        let modes = (points - 1) / 2;
        let l = FourierLoop::from_grid(&[dets], modes)?;
        let row = l.coeffs()[0].clone();
        let m = modes as i64;
        winding_of(
            |t| {
                row.iter()
                    .enumerate()
                    .map(|(idx, &c)| c * Complex64::from_polar(1.0, (idx as i64 - m) as f64 * t))
                    .sum()
            },
            4 * points,
        )
    }
}

/// `K(zeta)` along boundary values `w(zeta_p)` of a lifted disc.
pub fn matrix_k<F: FibrationSystem + ?Sized>(fib: &F, boundary: &[Vec<Complex64>]) -> Result<LoopMatrix> {
    let n = fib.dim();
    let points = boundary.first().map(Vec::len).unwrap_or(0);
    if boundary.len() != n {
        return Err(Error::Dimension("boundary values for K".into()));
    }
    let values: Vec<CMat> = (0..points)
        .map(|p| {
            let zeta = Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * p as f64 / points as f64);
            let w: Vec<Complex64> = boundary.iter().map(|row| row[p]).collect();
            fib.conj_gradient(zeta, &w)
        })
        .collect();
    let k = LoopMatrix::from_values(n, values);
    let smin = k.min_singular();
    if !(smin > 1e-10 * k.max_norm().max(1.0)) {
        return Err(Error::Singular("K along the disc"));
    }
    Ok(k)
}

/// `B = -conj(K)^{-1} K` pointwise.
pub fn matrix_b(k: &LoopMatrix) -> Result<LoopMatrix> {
    let mut values = Vec::with_capacity(k.points());
    for m in k.values() {
        let kb = m.map(|z| z.conj());
        let sol = kb.lu().solve(m).ok_or(Error::Singular("conj(K)"))?;
        values.push(-sol);
    }
    Ok(LoopMatrix::from_values(k.size(), values))
}

/// Central lifted disc of the sphere on a grid: `w = (zeta e1, e1)`.
pub fn central_lift(n: usize, points: usize) -> Vec<Vec<Complex64>> {
    let mut out = vec![vec![ZERO; points]; 2 * n];
    for p in 0..points {
        let zeta = Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * p as f64 / points as f64);
        out[0][p] = zeta;
        out[n][p] = Complex64::new(1.0, 0.0);
    }
    out
}

/// Verdict of [`totally_real_check`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TotallyReal {
    pub totally_real: bool,
    /// smallest principal angle between the fiber tangent space and its
    /// `J0`-image
    pub margin: f64,
}

/// Tangent space of the fiber `{r(., zeta) = 0}` at `w` against its image
/// under multiplication by `i`.
pub fn totally_real_check<F: FibrationSystem + ?Sized>(
    fib: &F,
    zeta: Complex64,
    w: &[Complex64],
) -> Result<TotallyReal> {
    let n = fib.dim();
    let g = fib.real_gradient(zeta, w);
    let svd = g.clone().svd(false, true);
    let sv = &svd.singular_values;
    let top = sv.iter().cloned().fold(0.0, f64::max);
    let rank = sv.iter().filter(|&&s| s > 1e-10 * top.max(1e-300)).count();
    if rank < n {
        return Err(Error::RankDeficient { rank, expected: n });
    }
    // tangent space = kernel of the gradient, orthonormal basis via the
    // complement of the row space
    let full = g.transpose().svd(true, false);
    let u = full.u.ok_or(Error::Singular("gradient factorisation"))?;
    let q = {
        // complete the row space basis to R^{2N} and take the remainder
        let mut basis: Vec<nalgebra::DVector<f64>> = (0..n).map(|k| u.column(k).into_owned()).collect();
        let mut tangent = Vec::with_capacity(n);
        for e in 0..2 * n {
            let mut v = nalgebra::DVector::zeros(2 * n);
            v[e] = 1.0;
            for b in &basis {
                let p = b.dot(&v);
                v -= b * p;
            }
            let nv = v.norm();
            if nv > 1e-8 {
                let v = v / nv;
                basis.push(v.clone());
                tangent.push(v);
            }
            if tangent.len() == n {
                break;
            }
        }
        DMatrix::from_columns(&tangent)
    };
    let jq = linalg::j0(n) * &q;
    let cosines = (q.transpose() * jq).singular_values();
    let max_cos = cosines.iter().cloned().fold(0.0, f64::max).min(1.0);
    let margin = max_cos.acos();
    Ok(TotallyReal {
        totally_real: margin > 1e-8,
        margin,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn central_lift_lies_on_the_fibration() {
        for n in [2, 3] {
            let fib = SphereConormal::new(n).unwrap();
            let pts = 16;
            let b = central_lift(n, pts);
            for p in 0..pts {
                let zeta = Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * p as f64 / pts as f64);
                let w: Vec<Complex64> = b.iter().map(|r| r[p]).collect();
                assert!(fib.eval(zeta, &w).iter().all(|v| v.abs() < 1e-14));
            }
        }
    }

    #[test]
    fn r1_at_origin() {
        let fib = SphereConormal::new(2).unwrap();
        let w = vec![ZERO; 4];
        assert_eq!(fib.eval(c(1.0, 0.0), &w)[0], -1.0);
    }

    #[test]
    fn fiber_homogeneity() {
        let fib = SphereConormal::new(2).unwrap();
        let zeta = Complex64::from_polar(1.0, 0.4);
        let w = [c(0.3, 0.1), c(-0.2, 0.5), c(0.7, -0.4), c(0.1, 0.9)];
        let w2: Vec<Complex64> = w.iter().enumerate().map(|(k, v)| if k >= 2 { v * 2.0 } else { *v }).collect();
        let a = fib.eval(zeta, &w);
        let b = fib.eval(zeta, &w2);
        for j in 1..4 {
            assert!((b[j] - 2.0 * a[j]).abs() < 1e-15);
        }
    }

    #[test]
    fn printed_k_entries() {
        let n = 2;
        let fib = SphereConormal::new(n).unwrap();
        let zeta = Complex64::from_polar(1.0, 0.7);
        let w = [zeta, ZERO, c(1.0, 0.0), ZERO];
        let k = fib.conj_gradient(zeta, &w);
        assert!((k[(0, 0)] - zeta).norm() < 1e-14);
        assert!((k[(1, n)] - c(0.0, -1.0)).norm() < 1e-14);
        assert!((k[(2, 1)] + zeta.inv()).norm() < 1e-14);
        assert!((k[(2, n + 1)] - zeta * zeta).norm() < 1e-14);
        assert!((k[(3, n + 1)] - c(0.0, -1.0) * zeta * zeta).norm() < 1e-14);
    }

    #[test]
    fn gradient_matches_finite_differences_when_deformed() {
        let s = crate::structures::sample_polynomial(2, 0.2, 1.0).unwrap();
        let fib = SphereConormal::deformed(s).unwrap();
        let zeta = Complex64::from_polar(1.0, 1.1);
        let w = [c(0.6, 0.3), c(-0.2, 0.5), c(0.7, -0.4), c(0.1, 0.9)];
        let g = fib.real_gradient(zeta, &w);
        let h = 1e-6;
        for v in 0..8 {
            let mut wp = w;
            let mut wm = w;
            let d = if v % 2 == 0 { c(h, 0.0) } else { c(0.0, h) };
            wp[v / 2] += d;
            wm[v / 2] -= d;
            let fp = fib.eval(zeta, &wp);
            let fm = fib.eval(zeta, &wm);
            for j in 0..4 {
                let fd = (fp[j] - fm[j]) / (2.0 * h);
                assert!((fd - g[(j, v)]).abs() < 1e-8, "row {j} var {v}: {fd} vs {}", g[(j, v)]);
            }
        }
    }

    #[test]
    fn printed_b_blocks() {
        let n = 2;
        let fib = SphereConormal::new(n).unwrap();
        let k = matrix_k(&fib, &central_lift(n, 32)).unwrap();
        let b = matrix_b(&k).unwrap();
        for (p, m) in b.values().iter().enumerate() {
            let z = b.zeta(p);
            let neg = -m;
            assert!((neg[(0, 0)] - z * z).norm() < 1e-13);
            assert!((neg[(n, 0)] + z * 2.0).norm() < 1e-13);
            assert!((neg[(n, n)] + 1.0).norm() < 1e-13);
            assert!((neg[(1, n + 1)] + z).norm() < 1e-13);
            assert!((neg[(n + 1, 1)] + z).norm() < 1e-13);
            let inv = m.map(|v| v.conj()) * m;
            assert!((inv - CMat::identity(4, 4)).norm() < 1e-12);
        }
    }

    #[test]
    fn sphere_fiber_is_totally_real() {
        let n = 2;
        let fib = SphereConormal::new(n).unwrap();
        let b = central_lift(n, 8);
        for p in 0..8 {
            let zeta = Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * p as f64 / 8.0);
            let w: Vec<Complex64> = b.iter().map(|r| r[p]).collect();
            let v = totally_real_check(&fib, zeta, &w).unwrap();
            assert!(v.totally_real && v.margin > 0.1);
        }
    }

    #[test]
    fn real_span_is_totally_real() {
        let n = 3;
        let fib = FnFibration {
            dim: n,
            eval: |_z: Complex64, w: &[Complex64]| w.iter().map(|v| v.im).collect(),
            gradient: |_z: Complex64, _w: &[Complex64]| {
                DMatrix::from_fn(3, 6, |r, c| if c == 2 * r + 1 { 1.0 } else { 0.0 })
            },
        };
        let v = totally_real_check(&fib, c(1.0, 0.0), &[ZERO; 3]).unwrap();
        assert!(v.totally_real);
        assert!((v.margin - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn complex_tangent_fiber_is_rejected() {
        // Re and Im of w1^2 at w = 0: both gradients vanish
        let fib = FnFibration {
            dim: 2,
            eval: |_z: Complex64, w: &[Complex64]| vec![(w[0] * w[0]).re, (w[0] * w[0]).im],
            gradient: |_z: Complex64, w: &[Complex64]| {
                let d = w[0] * 2.0;
                DMatrix::from_row_slice(2, 4, &[d.re, -d.im, 0.0, 0.0, d.im, d.re, 0.0, 0.0])
            },
        };
        assert!(matches!(
            totally_real_check(&fib, c(1.0, 0.0), &[ZERO, ZERO]),
            Err(Error::RankDeficient { .. })
        ));
    }

    #[test]
    fn doubling_functions_doubles_k() {
        let n = 2;
        let fib = SphereConormal::new(n).unwrap();
        let zeta = Complex64::from_polar(1.0, 0.3);
        let w = [c(0.6, 0.3), c(-0.2, 0.5), c(0.7, -0.4), c(0.1, 0.9)];
        let k = fib.conj_gradient(zeta, &w);
        let twice = FnFibration {
            dim: 4,
            eval: |z: Complex64, w: &[Complex64]| fib.eval(z, w).iter().map(|v| 2.0 * v).collect(),
            gradient: |z: Complex64, w: &[Complex64]| fib.real_gradient(z, w) * 2.0,
        };
        assert!((twice.conj_gradient(zeta, &w) - k * Complex64::new(2.0, 0.0)).norm() < 1e-15);
    }
}
