//! Almost complex structures near the closed unit ball, their lift to the
//! cotangent bundle and the coefficient fields of the associated
//! Beltrami-type systems.

use nalgebra::{ComplexField, DMatrix};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{self, CMat, ZERO};
use crate::poly::{power_table, ComplexPoly, Poly, PolyMap};

#[derive(Clone, Debug)]
pub enum StructureKind {
    /// `J = J0`.
    Standard,
    /// `J = J0 + lambda S(x)` with `S` anticommuting with `J0` and `S^2 = 0`,
    /// so `J^2 = -I` for every `lambda`.
    Polynomial {
        /// row-major `2n x 2n`
        deviation: Vec<Poly>,
        /// `deviation_d[k][entry] = d S_entry / d x_k`
        deviation_d: Vec<Vec<Poly>>,
        max_exp: u32,
    },
    /// `J = dPhi^{-1} J0 dPhi` with `Phi(x) = x + lambda P(x)` and `P`
    /// vanishing at the origin and on the unit sphere.
    Pullback { generator: PolyMap },
    /// `J'(y) = A J(shift + scale A^{-1} y) A^{-1}`.
    Affine(Box<AffineChart>),
}

#[derive(Clone, Debug)]
pub struct AffineChart {
    pub base: StructureField,
    pub shift: Vec<f64>,
    pub a: DMatrix<f64>,
    pub a_inv: DMatrix<f64>,
    pub scale: f64,
}

impl AffineChart {
    /// Chart coordinates of a base point.
    pub fn to_chart(&self, x: &[f64]) -> Vec<f64> {
        let d: Vec<f64> = x.iter().zip(&self.shift).map(|(a, b)| (a - b) / self.scale).collect();
        (&self.a * nalgebra::DVector::from_vec(d)).as_slice().to_vec()
    }

    pub fn from_chart(&self, y: &[f64]) -> Vec<f64> {
        let v = &self.a_inv * nalgebra::DVector::from_column_slice(y);
        v.iter().zip(&self.shift).map(|(a, b)| b + self.scale * a).collect()
    }
}

#[derive(Clone, Debug)]
pub struct StructureField {
    n: usize,
    lambda: f64,
    kind: StructureKind,
}

impl StructureField {
    pub fn standard(n: usize) -> Self {
        Self {
            n,
            lambda: 0.0,
            kind: StructureKind::Standard,
        }
    }

    /// `J = J0 + lambda S`; `deviation` is the row-major `2n x 2n` matrix `S`.
    pub fn polynomial(n: usize, lambda: f64, deviation: Vec<Poly>) -> Result<Self> {
        let m = 2 * n;
        if deviation.len() != m * m || deviation.iter().any(|p| p.vars() != m && !p.is_zero()) {
            return Err(Error::Dimension(format!(
                "deviation must be {m}x{m} polynomials in {m} variables"
            )));
        }
        let deviation: Vec<Poly> = deviation
            .into_iter()
            .map(|p| if p.vars() == m { p } else { Poly::zero(m) })
            .collect();
        let deviation_d = (0..m)
            .map(|k| deviation.iter().map(|p| p.derivative(k)).collect())
            .collect();
        let max_exp = deviation.iter().map(Poly::max_exp).max().unwrap_or(0);
        let out = Self {
            n,
            lambda,
            kind: StructureKind::Polynomial {
                deviation,
                deviation_d,
                max_exp,
            },
        };
        out.check_polynomial_family()?;
        Ok(out)
    }

    /// Pullback of `J0` by `Phi(x) = x + lambda P(x)`.
    pub fn pullback(n: usize, lambda: f64, generator: PolyMap) -> Result<Self> {
        if generator.dim() != 2 * n {
            return Err(Error::Dimension("generator dimension".into()));
        }
        let out = Self {
            n,
            lambda,
            kind: StructureKind::Pullback { generator },
        };
        out.check_ball_preserving()?;
        Ok(out)
    }

    /// Direct image under the affine chart `y = A (x - shift) / scale`.
    pub fn affine(base: StructureField, shift: Vec<f64>, a: DMatrix<f64>, scale: f64) -> Result<Self> {
        let a_inv = a
            .clone()
            .try_inverse()
            .ok_or(Error::Singular("affine chart"))?;
        Ok(Self {
            n: base.n,
            lambda: base.lambda,
            kind: StructureKind::Affine(Box::new(AffineChart {
                base,
                shift,
                a,
                a_inv,
                scale,
            })),
        })
    }

    /// Conjugation by a unitary map, `J'(y) = U J(U^{-1} y) U^{-1}`.
    pub fn rotated(&self, u: &CMat) -> Result<Self> {
        let a = linalg::realify(u);
        Self::affine(self.clone(), vec![0.0; 2 * self.n], a, 1.0)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn kind(&self) -> &StructureKind {
        &self.kind
    }

    /// The same family at another parameter value.
    pub fn with_lambda(&self, lambda: f64) -> Self {
        let kind = match &self.kind {
            StructureKind::Affine(ch) => StructureKind::Affine(Box::new(AffineChart {
                base: ch.base.with_lambda(lambda),
                ..(**ch).clone()
            })),
            k => k.clone(),
        };
        Self {
            n: self.n,
            lambda,
            kind,
        }
    }

    /// True when `J = J0` identically.
    pub fn is_standard(&self) -> bool {
        match &self.kind {
            StructureKind::Standard => true,
            StructureKind::Polynomial { .. } | StructureKind::Pullback { .. } => self.lambda == 0.0,
            StructureKind::Affine(ch) => {
                let j0 = linalg::j0(self.n);
                ch.base.is_standard() && (&ch.a * &j0 - &j0 * &ch.a).norm() < 1e-13 * ch.a.norm()
            }
        }
    }

    /// The ball map `Phi` of a pullback structure.
    pub fn ball_map(&self) -> Option<BallMap> {
        match &self.kind {
            StructureKind::Pullback { generator } => Some(BallMap {
                generator: generator.clone(),
                lambda: self.lambda,
            }),
            _ => None,
        }
    }

    pub fn eval_real(&self, x: &[f64]) -> DMatrix<f64> {
        let xc: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.eval(&xc).map(|z| z.re)
    }

    /// `J(x)` at a possibly complex point.
    pub fn eval(&self, x: &[Complex64]) -> CMat {
        let m = 2 * self.n;
        match &self.kind {
            StructureKind::Standard => linalg::j0_complex(self.n),
            StructureKind::Polynomial {
                deviation, max_exp, ..
            } => {
                let pow = power_table(x, *max_exp);
                let mut j = linalg::j0_complex(self.n);
                for r in 0..m {
                    for c in 0..m {
                        let p = &deviation[r * m + c];
                        if !p.is_zero() {
                            j[(r, c)] += p.eval_with(&pow) * self.lambda;
                        }
                    }
                }
                j
            }
            StructureKind::Pullback { generator } => {
                let pow = power_table(x, generator.max_exp());
                let dphi = self.dphi_from(generator, &pow);
                let inv = dphi.clone().try_inverse().unwrap_or_else(|| CMat::identity(m, m));
                inv * linalg::j0_complex(self.n) * dphi
            }
            StructureKind::Affine(ch) => {
                let xb = chart_preimage(ch, x);
                let jb = ch.base.eval(&xb);
                let a = linalg::to_complex(&ch.a);
                let ai = linalg::to_complex(&ch.a_inv);
                a * jb * ai
            }
        }
    }

    fn dphi_from(&self, generator: &PolyMap, pow: &[Vec<Complex64>]) -> CMat {
        let m = 2 * self.n;
        let jac = generator.jacobian_with(pow);
        let mut d = CMat::identity(m, m);
        for r in 0..m {
            for c in 0..m {
                d[(r, c)] += jac[r * m + c] * self.lambda;
            }
        }
        d
    }

    /// `J(x)` together with `dJ/dx_k` for every coordinate.
    pub fn eval_with_derivatives(&self, x: &[Complex64]) -> (CMat, Vec<CMat>) {
        let m = 2 * self.n;
        match &self.kind {
            StructureKind::Standard => (
                linalg::j0_complex(self.n),
                vec![CMat::zeros(m, m); m],
            ),
            StructureKind::Polynomial {
                deviation_d,
                max_exp,
                ..
            } => {
                let j = self.eval(x);
                let pow = power_table(x, *max_exp);
                let dj = deviation_d
                    .iter()
                    .map(|row| {
                        CMat::from_fn(m, m, |r, c| {
                            let p = &row[r * m + c];
                            if p.is_zero() {
                                ZERO
                            } else {
                                p.eval_with(&pow) * self.lambda
                            }
                        })
                    })
                    .collect();
                (j, dj)
            }
            StructureKind::Pullback { generator } => {
                let pow = power_table(x, generator.max_exp());
                let dphi = self.dphi_from(generator, &pow);
                let inv = dphi.clone().try_inverse().unwrap_or_else(|| CMat::identity(m, m));
                let j0 = linalg::j0_complex(self.n);
                let j = &inv * &j0 * &dphi;
                let second = generator.second_with(&pow);
                let dj = second
                    .iter()
                    .map(|h| {
                        let dd = CMat::from_fn(m, m, |r, c| h[r * m + c] * self.lambda);
                        &inv * (&j0 * &dd - &dd * &j)
                    })
                    .collect();
                (j, dj)
            }
            StructureKind::Affine(ch) => {
                let xb = chart_preimage(ch, x);
                let (jb, djb) = ch.base.eval_with_derivatives(&xb);
                let a = linalg::to_complex(&ch.a);
                let ai = linalg::to_complex(&ch.a_inv);
                let j = &a * jb * &ai;
                let dj = (0..m)
                    .map(|c| {
                        let mut acc = CMat::zeros(m, m);
                        for (d, djd) in djb.iter().enumerate() {
                            let w = ch.a_inv[(d, c)] * ch.scale;
                            if w != 0.0 {
                                acc += djd * Complex64::new(w, 0.0);
                            }
                        }
                        &a * acc * &ai
                    })
                    .collect();
                (j, dj)
            }
        }
    }

    /// `|J(0) - J0|`, zero for normalised structures.
    pub fn origin_defect(&self) -> f64 {
        let x = vec![ZERO; 2 * self.n];
        (self.eval(&x) - linalg::j0_complex(self.n)).norm()
    }

    /// Largest `|J^2 + I|` over sample points of the closed ball.
    pub fn almost_complex_defect(&self, samples: usize, seed: u64) -> f64 {
        let m = 2 * self.n;
        ball_samples(m, samples, 1.0, seed)
            .iter()
            .map(|x| {
                let j = self.eval_real(x);
                (&j * &j + DMatrix::identity(m, m)).norm()
            })
            .fold(0.0, f64::max)
    }

    fn check_polynomial_family(&self) -> Result<()> {
        // J^2 = -I for all lambda needs S J0 + J0 S = 0 and S^2 = 0
        let unit = self.with_lambda(1.0);
        let m = 2 * self.n;
        let j0 = linalg::j0(self.n);
        let mut defect: f64 = 0.0;
        for x in ball_samples(m, 64, 1.2, 7) {
            let s = unit.eval_real(&x) - &j0;
            defect = defect.max((&s * &j0 + &j0 * &s).norm()).max((&s * &s).norm());
        }
        if defect > 1e-10 {
            return Err(Error::NotAlmostComplex { defect });
        }
        Ok(())
    }

    fn check_ball_preserving(&self) -> Result<()> {
        let StructureKind::Pullback { generator } = &self.kind else {
            return Ok(());
        };
        let m = 2 * self.n;
        let scale = generator.eval_real(&vec![0.5; m]).iter().map(|v| v.abs()).fold(1.0, f64::max);
        let mut defect = generator.eval_real(&vec![0.0; m]).iter().map(|v| v.abs()).fold(0.0, f64::max);
        for x in sphere_samples(m, 64, 11) {
            let v = generator.eval_real(&x);
            defect = defect.max(v.iter().map(|c| c.abs()).fold(0.0, f64::max));
        }
        if defect > 1e-12 * scale {
            return Err(Error::NotBallPreserving { defect });
        }
        Ok(())
    }
}

fn chart_preimage(ch: &AffineChart, y: &[Complex64]) -> Vec<Complex64> {
    let m = y.len();
    (0..m)
        .map(|r| {
            let mut acc = Complex64::new(ch.shift[r], 0.0);
            for (c, yc) in y.iter().enumerate() {
                acc += yc * (ch.a_inv[(r, c)] * ch.scale);
            }
            acc
        })
        .collect()
}

/// `Phi(x) = x + lambda P(x)`.
#[derive(Clone, Debug)]
pub struct BallMap {
    pub generator: PolyMap,
    pub lambda: f64,
}

impl BallMap {
    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let p = self.generator.eval_real(x);
        x.iter().zip(p).map(|(a, b)| a + self.lambda * b).collect()
    }

    pub fn differential(&self, x: &[f64]) -> DMatrix<f64> {
        let m = x.len();
        let xc: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        let pow = power_table(&xc, self.generator.max_exp());
        let jac = self.generator.jacobian_with(&pow);
        DMatrix::from_fn(m, m, |r, c| {
            (if r == c { 1.0 } else { 0.0 }) + self.lambda * jac[r * m + c].re
        })
    }
}

/// Deterministic points of the ball of radius `radius` in `R^m`.
pub fn ball_samples(m: usize, count: usize, radius: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|k| {
            let dir = random_unit(&mut rng, m);
            let r = if k == 0 {
                0.0
            } else {
                radius * rng.gen::<f64>().powf(1.0 / m as f64)
            };
            dir.into_iter().map(|v| v * r).collect()
        })
        .collect()
}

/// Deterministic points of the unit sphere in `R^m`.
pub fn sphere_samples(m: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| random_unit(&mut rng, m)).collect()
}

/// Uniform random unit vector in `R^m`.
pub fn random_unit<R: Rng>(rng: &mut R, m: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..m)
            .map(|_| {
                // Box-Muller
                let u1: f64 = rng.gen::<f64>().max(1e-300);
                let u2: f64 = rng.gen();
                (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
            })
            .collect();
        let n = linalg::vec_norm(&v);
        if n > 1e-6 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Nilpotent sample deviation `S(c) = (sum_{j>=2} b_j(x) conj(c_j), 0, ..)`.
pub fn sample_polynomial(n: usize, lambda: f64, amplitude: f64) -> Result<StructureField> {
    let m = 2 * n;
    let mut s = vec![Poly::zero(m); m * m];
    if n >= 2 {
        for j in 1..n {
            let mut b = ComplexPoly::zbar(n, 0).scale(Complex64::new(0.8, 0.0));
            b = b.add(&ComplexPoly::z(n, j).scale(Complex64::new(0.5, 0.2)));
            b = b.add(
                &ComplexPoly::z(n, 0)
                    .mul(&ComplexPoly::zbar(n, j))
                    .scale(Complex64::new(0.0, 0.6)),
            );
            let b = b.scale(Complex64::new(amplitude / j as f64, 0.0));
            // b * conj(c_j) in real form
            s[2 * j] = b.re.clone();
            s[2 * j + 1] = b.im.clone();
            s[m + 2 * j] = b.im.clone();
            s[m + 2 * j + 1] = b.re.scale(-1.0);
        }
    } else {
        // for n = 1 an antilinear S cannot be nilpotent
        return Err(Error::Invalid("polynomial family needs n >= 2".into()));
    }
    StructureField::polynomial(n, lambda, s)
}

/// Sample generator `P = (1 - |x|^2) Q` with `Q(0) = 0`, `dQ(0)` complex
/// linear and a non-holomorphic quadratic part.
pub fn sample_generator(n: usize, amplitude: f64) -> PolyMap {
    let m = 2 * n;
    let mut bump = Poly::constant(m, 1.0);
    for i in 0..m {
        bump = bump.add(&Poly::var(m, i).mul(&Poly::var(m, i)).scale(-1.0));
    }
    let comps: Vec<ComplexPoly> = (0..n)
        .map(|k| {
            let lin = if k == 0 {
                Complex64::new(0.5, 0.1)
            } else {
                Complex64::new(0.0, -0.3)
            };
            let mut q = ComplexPoly::z(n, k).scale(lin);
            let other = (k + 1) % n;
            q = q.add(
                &ComplexPoly::zbar(n, other)
                    .mul(&ComplexPoly::zbar(n, other))
                    .scale(Complex64::new(0.4, 0.0)),
            );
            q = q.add(
                &ComplexPoly::z(n, 0)
                    .mul(&ComplexPoly::zbar(n, k))
                    .scale(Complex64::new(0.2, -0.25)),
            );
            q.scale(Complex64::new(amplitude, 0.0)).mul_real(&bump)
        })
        .collect();
    PolyMap::from_complex(&comps)
}

pub fn sample_pullback(n: usize, lambda: f64, amplitude: f64) -> Result<StructureField> {
    StructureField::pullback(n, lambda, sample_generator(n, amplitude))
}

/// Lower-left block of the cotangent lift:
/// `L[h][i] = sum_a p_a (d_i J[a][h] - d_h J[a][i])`.
pub fn lift_lower_block<T: ComplexField + Copy>(dj: &[DMatrix<T>], p: &[T]) -> DMatrix<T> {
    let m = p.len();
    DMatrix::from_fn(m, m, |h, i| {
        let mut acc = T::zero();
        for (a, &pa) in p.iter().enumerate() {
            acc += pa * (dj[i][(a, h)] - dj[h][(a, i)]);
        }
        acc
    })
}

/// The lift of `J` to `T^*R^{2n}` at `(x, p)`, in coordinates `(x, p)`:
/// `[[J, 0], [L(x, p), J^T]]`.
pub fn vertical_lift(j: &DMatrix<f64>, dj: &[DMatrix<f64>], p: &[f64]) -> DMatrix<f64> {
    let m = p.len();
    let l = lift_lower_block(dj, p);
    let mut out = DMatrix::zeros(2 * m, 2 * m);
    out.view_mut((0, 0), (m, m)).copy_from(j);
    out.view_mut((m, 0), (m, m)).copy_from(&l);
    out.view_mut((m, m), (m, m)).copy_from(&j.transpose());
    out
}

/// Lifted structure on the cotangent bundle.
#[derive(Clone, Debug)]
pub struct ProlongationTensor {
    pub structure: StructureField,
}

impl ProlongationTensor {
    pub fn new(structure: StructureField) -> Self {
        Self { structure }
    }

    pub fn eval(&self, x: &[f64], p: &[f64]) -> DMatrix<f64> {
        let xc: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        let (j, dj) = self.structure.eval_with_derivatives(&xc);
        let j = j.map(|z| z.re);
        let dj: Vec<DMatrix<f64>> = dj.iter().map(|d| d.map(|z| z.re)).collect();
        vertical_lift(&j, &dj, p)
    }
}

/// `Q = -(I - J0 S / 2)^{-1} (J0 S / 2)` with `S = J - J0`, so that
/// `f_t = J(f) f_s` is equivalent to `dbar f + Q(f) d f = 0`.
pub fn beltrami_coefficient(j: &CMat) -> Result<CMat> {
    let m = j.nrows();
    let j0 = linalg::j0_complex(m / 2);
    let half = (&j0 * (j - &j0)) * Complex64::new(0.5, 0.0);
    let lhs = CMat::identity(m, m) - &half;
    let lu = lhs.lu();
    let sol = lu.solve(&half).ok_or(Error::Singular("Beltrami coefficient"))?;
    Ok(-sol)
}

/// Coefficients of the fiber equation for the coframe coordinate
/// `w = C p` along a disc with tangent `f_s`:
/// `dbar w + Q2 d w + Q3 w = 0` (real forms), where the structure acting on
/// `w` is `C J^T C`.
pub fn prolongation_coefficients(j: &CMat, dj: &[CMat], fs: &[Complex64]) -> Result<(CMat, CMat)> {
    let m = j.nrows();
    let n = m / 2;
    let c = linalg::to_complex(&linalg::conj_matrix(n));
    let j0 = linalg::j0_complex(n);
    let bt = &c * j.transpose() * &c;
    let half_s = (&j0 * (&bt - &j0)) * Complex64::new(0.5, 0.0);
    let lhs = CMat::identity(m, m) - &half_s;
    let lu = lhs.lu();
    let q2 = -lu.solve(&half_s).ok_or(Error::Singular("fiber coefficient"))?;
    // (L f_s)_h = sum_a M[h][a] p_a
    let mmat = CMat::from_fn(m, m, |h, a| {
        let mut acc = ZERO;
        for (i, &v) in fs.iter().enumerate() {
            acc += (dj[i][(a, h)] - dj[h][(a, i)]) * v;
        }
        acc
    });
    let rhs = (&j0 * (&c * mmat * &c)) * Complex64::new(0.5, 0.0);
    let q3 = -lu.solve(&rhs).ok_or(Error::Singular("fiber coefficient"))?;
    Ok((q2, q3))
}

/// Real hypersurface `{r = 0}` with gradient and Hessian.
pub trait Hypersurface: Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
    fn hessian(&self, x: &[f64]) -> DMatrix<f64>;
}

/// `r = |x|^2 - 1`.
#[derive(Clone, Copy, Debug)]
pub struct UnitSphere {
    pub dim: usize,
}

impl Hypersurface for UnitSphere {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum::<f64>() - 1.0
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        x.iter().map(|v| 2.0 * v).collect()
    }

    fn hessian(&self, _x: &[f64]) -> DMatrix<f64> {
        DMatrix::identity(self.dim, self.dim) * 2.0
    }
}

/// Projection of `x0` onto `{dr = 0, dr o J = 0}` at `x`.
fn project_to_complex_tangent(grad: &[f64], j: &DMatrix<f64>, x0: &[f64]) -> Vec<f64> {
    let m = grad.len();
    let g = nalgebra::DVector::from_column_slice(grad);
    let jg = j.transpose() * &g;
    // orthonormalise {g, J^T g}
    let e1 = &g / g.norm();
    let mut e2 = &jg - &e1 * e1.dot(&jg);
    let n2 = e2.norm();
    let mut v = nalgebra::DVector::from_column_slice(x0);
    v -= &e1 * e1.dot(&v);
    if n2 > 1e-14 {
        e2 /= n2;
        v -= &e2 * e2.dot(&v);
    }
    debug_assert_eq!(v.len(), m);
    v.as_slice().to_vec()
}

/// Levi form `dr(J [X, J X])` at a point of the hypersurface, with `X`
/// extended by projecting the constant field `x0` onto the complex tangent
/// spaces of the level sets. Brackets use Richardson-extrapolated central
/// differences.
pub fn levi_form(
    structure: &StructureField,
    surface: &dyn Hypersurface,
    p: &[f64],
    x0: &[f64],
) -> Result<f64> {
    let m = surface.dim();
    if p.len() != m || x0.len() != m || structure.n() * 2 != m {
        return Err(Error::Dimension("levi_form".into()));
    }
    let field_x = |q: &[f64]| -> Vec<f64> {
        let j = structure.eval_real(q);
        project_to_complex_tangent(&surface.gradient(q), &j, x0)
    };
    let field_y = |q: &[f64]| -> Vec<f64> {
        let j = structure.eval_real(q);
        let xv = nalgebra::DVector::from_vec(field_x(q));
        (j * xv).as_slice().to_vec()
    };
    let xp = field_x(p);
    let yp = field_y(p);
    let directional = |field: &dyn Fn(&[f64]) -> Vec<f64>, dir: &[f64], h: f64| -> Vec<f64> {
        let plus: Vec<f64> = p.iter().zip(dir).map(|(a, b)| a + h * b).collect();
        let minus: Vec<f64> = p.iter().zip(dir).map(|(a, b)| a - h * b).collect();
        field(&plus)
            .iter()
            .zip(field(&minus))
            .map(|(a, b)| (a - b) / (2.0 * h))
            .collect()
    };
    let bracket = |h: f64| -> Vec<f64> {
        let dy = directional(&field_y, &xp, h);
        let dx = directional(&field_x, &yp, h);
        dy.iter().zip(dx).map(|(a, b)| a - b).collect()
    };
    let h = 1e-4;
    let b1 = bracket(h);
    let b2 = bracket(h / 2.0);
    let br: Vec<f64> = b1.iter().zip(b2).map(|(a, b)| (4.0 * b - a) / 3.0).collect();
    let j = structure.eval_real(p);
    let jb = j * nalgebra::DVector::from_vec(br);
    let g = surface.gradient(p);
    Ok(g.iter().zip(jb.iter()).map(|(a, b)| a * b).sum::<f64>())
}

/// Result of [`normalize_at_point`].
#[derive(Clone, Debug)]
pub struct NormalizedChart {
    /// the direct-image structure in chart coordinates
    pub structure: StructureField,
    pub dilation: f64,
    /// sup of `|J' - J0|` over the sampled closed unit ball
    pub deviation: f64,
}

/// Affine chart `y = A (x - p) / delta` with `J'(0) = J0` and
/// `|J' - J0| <= bound` on the closed unit ball.
pub fn normalize_at_point(structure: &StructureField, p: &[f64], bound: f64) -> Result<NormalizedChart> {
    let n = structure.n();
    let m = 2 * n;
    if p.len() != m {
        return Err(Error::Dimension("normalize_at_point".into()));
    }
    let jp = structure.eval_real(p);
    // basis (b1, J b1, b2, J b2, ..)
    let mut cols: Vec<nalgebra::DVector<f64>> = Vec::with_capacity(m);
    for k in 0..m {
        if cols.len() == m {
            break;
        }
        let mut v = nalgebra::DVector::zeros(m);
        v[k] = 1.0;
        let mut trial = cols.clone();
        let w = &jp * &v;
        trial.push(v);
        trial.push(w);
        let mat = DMatrix::from_columns(&trial);
        let sv = mat.singular_values();
        let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
        if smin > 1e-6 {
            cols = trial;
        }
    }
    if cols.len() != m {
        return Err(Error::Singular("complex basis"));
    }
    let a_inv = DMatrix::from_columns(&cols);
    let a = a_inv.clone().try_inverse().ok_or(Error::Singular("chart"))?;
    let samples = ball_samples(m, 200, 1.0, 3);
    let j0 = linalg::j0(n);
    let deviation_at = |delta: f64| -> Result<(StructureField, f64)> {
        let s = StructureField::affine(structure.clone(), p.to_vec(), a.clone(), delta)?;
        let dev = samples
            .iter()
            .map(|y| linalg::op_norm_real(&(s.eval_real(y) - &j0)))
            .fold(0.0, f64::max);
        Ok((s, dev))
    };
    let (s1, d1) = deviation_at(1.0)?;
    if d1 <= bound {
        return Ok(NormalizedChart {
            structure: s1,
            dilation: 1.0,
            deviation: d1,
        });
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let (_, d) = deviation_at(mid)?;
        if d <= bound {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if lo == 0.0 {
        return Err(Error::Invalid("no dilation meets the deviation bound".into()));
    }
    let (s, d) = deviation_at(lo)?;
    Ok(NormalizedChart {
        structure: s,
        dilation: lo,
        deviation: d,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn real_point(x: &[f64]) -> Vec<Complex64> {
        x.iter().map(|&v| Complex64::new(v, 0.0)).collect()
    }

    #[test]
    fn sphere_levi_form_is_four_times_the_norm() {
        let j0 = StructureField::standard(2);
        let sphere = UnitSphere { dim: 4 };
        let p = [0.6, 0.0, 0.0, 0.8];
        let x0 = [0.0, 0.0, 0.8, 0.0];
        let proj = project_to_complex_tangent(&sphere.gradient(&p), &j0.eval_real(&p), &x0);
        let norm_sq: f64 = proj.iter().map(|v| v * v).sum();
        let l = levi_form(&j0, &sphere, &p, &proj).unwrap();
        assert!((l - 4.0 * norm_sq).abs() < 1e-6, "{l} vs {}", 4.0 * norm_sq);
    }

    #[test]
    fn sample_structures_are_almost_complex() {
        for s in [
            sample_polynomial(2, 0.05, 1.0).unwrap(),
            sample_pullback(2, 0.05, 1.0).unwrap(),
            sample_pullback(3, 0.05, 1.0).unwrap(),
        ] {
            assert!(s.almost_complex_defect(40, 1) < 1e-12);
            assert!(s.origin_defect() < 1e-14);
        }
    }

    #[test]
    fn non_nilpotent_deviation_rejected() {
        // S = identity does not anticommute with J0
        let m = 4;
        let mut s = vec![Poly::zero(m); m * m];
        for k in 0..m {
            s[k * m + k] = Poly::constant(m, 1.0);
        }
        assert!(matches!(
            StructureField::polynomial(2, 0.1, s),
            Err(Error::NotAlmostComplex { .. })
        ));
    }

    #[test]
    fn generator_not_fixing_sphere_rejected() {
        let m = 4;
        let comps = (0..m).map(|i| Poly::var(m, i).mul(&Poly::var(m, i))).collect();
        assert!(StructureField::pullback(2, 0.1, PolyMap::new(comps)).is_err());
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let x = [0.2, -0.3, 0.1, 0.4];
        for s in [sample_polynomial(2, 0.1, 1.0).unwrap(), sample_pullback(2, 0.1, 1.0).unwrap()] {
            let (_, dj) = s.eval_with_derivatives(&real_point(&x));
            for k in 0..4 {
                let h = 1e-5;
                let mut xp = x;
                let mut xm = x;
                xp[k] += h;
                xm[k] -= h;
                let fd = (s.eval_real(&xp) - s.eval_real(&xm)) / (2.0 * h);
                assert!((fd - dj[k].map(|z| z.re)).norm() < 1e-8);
            }
        }
    }

    #[test]
    fn beltrami_vanishes_for_standard() {
        let q = beltrami_coefficient(&linalg::j0_complex(2)).unwrap();
        assert!(q.norm() < 1e-15);
    }

    #[test]
    fn rotated_structure_is_conjugate() {
        let s = sample_polynomial(2, 0.1, 1.0).unwrap();
        let u = linalg::unitary_to_e1(&[Complex64::new(0.6, 0.0), Complex64::new(0.0, 0.8)]);
        let r = s.rotated(&u).unwrap();
        let ur = linalg::realify(&u);
        let x = [0.1, 0.2, -0.3, 0.05];
        let y = (&ur * nalgebra::DVector::from_column_slice(&x)).as_slice().to_vec();
        let lhs = r.eval_real(&y);
        let rhs = &ur * s.eval_real(&x) * ur.transpose();
        assert!((lhs - rhs).norm() < 1e-13);
    }
}
