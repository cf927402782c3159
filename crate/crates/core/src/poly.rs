//! Sparse real multivariate polynomials evaluated at complex points.

use std::collections::BTreeMap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// One monomial `coef * prod x_i^exp_i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub exp: Vec<u32>,
    pub coef: f64,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Poly {
    vars: usize,
    terms: Vec<Term>,
}

impl Poly {
    pub fn zero(vars: usize) -> Self {
        Self {
            vars,
            terms: Vec::new(),
        }
    }

    pub fn constant(vars: usize, c: f64) -> Self {
        let mut p = Self::zero(vars);
        if c != 0.0 {
            p.terms.push(Term {
                exp: vec![0; vars],
                coef: c,
            });
        }
        p
    }

    pub fn var(vars: usize, i: usize) -> Self {
        let mut exp = vec![0; vars];
        exp[i] = 1;
        Self {
            vars,
            terms: vec![Term { exp, coef: 1.0 }],
        }
    }

    /// Collects like terms and drops zeros.
    pub fn from_terms(vars: usize, terms: impl IntoIterator<Item = Term>) -> Self {
        let mut map: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
        for t in terms {
            assert_eq!(t.exp.len(), vars, "exponent length");
            *map.entry(t.exp).or_insert(0.0) += t.coef;
        }
        Self {
            vars,
            terms: map
                .into_iter()
                .filter(|(_, c)| *c != 0.0)
                .map(|(exp, coef)| Term { exp, coef })
                .collect(),
        }
    }

    pub fn vars(&self) -> usize {
        self.vars
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn degree(&self) -> u32 {
        self.terms
            .iter()
            .map(|t| t.exp.iter().sum())
            .max()
            .unwrap_or(0)
    }

    pub fn max_exp(&self) -> u32 {
        self.terms
            .iter()
            .flat_map(|t| t.exp.iter().copied())
            .max()
            .unwrap_or(0)
    }

    pub fn add(&self, other: &Self) -> Self {
        Self::from_terms(
            self.vars,
            self.terms.iter().cloned().chain(other.terms.iter().cloned()),
        )
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::from_terms(
            self.vars,
            self.terms.iter().map(|t| Term {
                exp: t.exp.clone(),
                coef: t.coef * s,
            }),
        )
    }

    pub fn mul(&self, other: &Self) -> Self {
        let mut out = Vec::with_capacity(self.terms.len() * other.terms.len());
        for a in &self.terms {
            for b in &other.terms {
                out.push(Term {
                    exp: a.exp.iter().zip(&b.exp).map(|(x, y)| x + y).collect(),
                    coef: a.coef * b.coef,
                });
            }
        }
        Self::from_terms(self.vars, out)
    }

    pub fn derivative(&self, i: usize) -> Self {
        Self::from_terms(
            self.vars,
            self.terms.iter().filter(|t| t.exp[i] > 0).map(|t| {
                let mut exp = t.exp.clone();
                exp[i] -= 1;
                Term {
                    exp,
                    coef: t.coef * t.exp[i] as f64,
                }
            }),
        )
    }

    pub fn eval_real(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                t.exp
                    .iter()
                    .zip(x)
                    .fold(t.coef, |acc, (&e, &xi)| acc * xi.powi(e as i32))
            })
            .sum()
    }

    /// Evaluates using a power table `pow[i][e] = x_i^e`.
    pub fn eval_with(&self, pow: &[Vec<Complex64>]) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for t in &self.terms {
            let mut m = Complex64::new(t.coef, 0.0);
            for (i, &e) in t.exp.iter().enumerate() {
                if e > 0 {
                    m *= pow[i][e as usize];
                }
            }
            acc += m;
        }
        acc
    }

    pub fn eval(&self, x: &[Complex64]) -> Complex64 {
        self.eval_with(&power_table(x, self.max_exp()))
    }
}

/// `pow[i][e] = x_i^e` for `e <= max_exp`.
pub fn power_table(x: &[Complex64], max_exp: u32) -> Vec<Vec<Complex64>> {
    x.iter()
        .map(|&xi| {
            let mut row = Vec::with_capacity(max_exp as usize + 1);
            let mut p = Complex64::new(1.0, 0.0);
            for _ in 0..=max_exp {
                row.push(p);
                p *= xi;
            }
            row
        })
        .collect()
}

/// Polynomial with complex coefficients stored as a real/imaginary pair,
/// used to assemble maps written in `z` and `conj(z)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexPoly {
    pub re: Poly,
    pub im: Poly,
}

impl ComplexPoly {
    pub fn zero(vars: usize) -> Self {
        Self {
            re: Poly::zero(vars),
            im: Poly::zero(vars),
        }
    }

    pub fn constant(vars: usize, c: Complex64) -> Self {
        Self {
            re: Poly::constant(vars, c.re),
            im: Poly::constant(vars, c.im),
        }
    }

    /// The holomorphic coordinate `z_j = x_{2j} + i x_{2j+1}`.
    pub fn z(n: usize, j: usize) -> Self {
        Self {
            re: Poly::var(2 * n, 2 * j),
            im: Poly::var(2 * n, 2 * j + 1),
        }
    }

    /// The antiholomorphic coordinate `conj(z_j)`.
    pub fn zbar(n: usize, j: usize) -> Self {
        Self {
            re: Poly::var(2 * n, 2 * j),
            im: Poly::var(2 * n, 2 * j + 1).scale(-1.0),
        }
    }

    pub fn add(&self, o: &Self) -> Self {
        Self {
            re: self.re.add(&o.re),
            im: self.im.add(&o.im),
        }
    }

    pub fn mul(&self, o: &Self) -> Self {
        Self {
            re: self.re.mul(&o.re).add(&self.im.mul(&o.im).scale(-1.0)),
            im: self.re.mul(&o.im).add(&self.im.mul(&o.re)),
        }
    }

    pub fn scale(&self, c: Complex64) -> Self {
        Self {
            re: self.re.scale(c.re).add(&self.im.scale(-c.im)),
            im: self.re.scale(c.im).add(&self.im.scale(c.re)),
        }
    }

    pub fn mul_real(&self, p: &Poly) -> Self {
        Self {
            re: self.re.mul(p),
            im: self.im.mul(p),
        }
    }
}

/// Polynomial self-map of `R^m` with cached first and second derivatives.
#[derive(Clone, Debug, PartialEq)]
pub struct PolyMap {
    comps: Vec<Poly>,
    jac: Vec<Vec<Poly>>,
    hess: Vec<Vec<Vec<Poly>>>,
    max_exp: u32,
}

impl PolyMap {
    pub fn new(comps: Vec<Poly>) -> Self {
        let m = comps.len();
        let jac: Vec<Vec<Poly>> = comps
            .iter()
            .map(|p| (0..m).map(|i| p.derivative(i)).collect())
            .collect();
        let hess = jac
            .iter()
            .map(|row| {
                row.iter()
                    .map(|p| (0..m).map(|i| p.derivative(i)).collect())
                    .collect()
            })
            .collect();
        let max_exp = comps.iter().map(Poly::max_exp).max().unwrap_or(0);
        Self {
            comps,
            jac,
            hess,
            max_exp,
        }
    }

    /// A map `C^n -> C^n` given by complex polynomials, in real form.
    pub fn from_complex(comps: &[ComplexPoly]) -> Self {
        let mut real = Vec::with_capacity(2 * comps.len());
        for c in comps {
            real.push(c.re.clone());
            real.push(c.im.clone());
        }
        Self::new(real)
    }

    pub fn dim(&self) -> usize {
        self.comps.len()
    }

    pub fn components(&self) -> &[Poly] {
        &self.comps
    }

    pub fn max_exp(&self) -> u32 {
        self.max_exp
    }

    pub fn eval(&self, x: &[Complex64]) -> Vec<Complex64> {
        let pow = power_table(x, self.max_exp);
        self.comps.iter().map(|p| p.eval_with(&pow)).collect()
    }

    pub fn eval_real(&self, x: &[f64]) -> Vec<f64> {
        self.comps.iter().map(|p| p.eval_real(x)).collect()
    }

    /// Row-major Jacobian `d out_r / d x_c`.
    pub fn jacobian_with(&self, pow: &[Vec<Complex64>]) -> Vec<Complex64> {
        self.jac
            .iter()
            .flat_map(|row| row.iter().map(|p| p.eval_with(pow)))
            .collect()
    }

    /// `hess[k][r * m + c] = d^2 out_r / d x_c d x_k`.
    pub fn second_with(&self, pow: &[Vec<Complex64>]) -> Vec<Vec<Complex64>> {
        let m = self.dim();
        (0..m)
            .map(|k| {
                let mut out = Vec::with_capacity(m * m);
                for r in 0..m {
                    for c in 0..m {
                        out.push(self.hess[r][c][k].eval_with(pow));
                    }
                }
                out
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_and_derivative() {
        let x = Poly::var(2, 0);
        let y = Poly::var(2, 1);
        let p = x.mul(&y).add(&x.mul(&x).scale(3.0));
        assert_eq!(p.eval_real(&[2.0, 5.0]), 10.0 + 12.0);
        let dx = p.derivative(0);
        assert_eq!(dx.eval_real(&[2.0, 5.0]), 5.0 + 12.0);
        assert_eq!(p.degree(), 2);
    }

    #[test]
    fn complex_monomials_expand() {
        let n = 1;
        let z = ComplexPoly::z(n, 0);
        let zb = ComplexPoly::zbar(n, 0);
        let p = z.mul(&zb);
        let v = [Complex64::new(0.3, 0.0), Complex64::new(0.4, 0.0)];
        assert!((p.re.eval(&v) - Complex64::new(0.25, 0.0)).norm() < 1e-15);
        assert!(p.im.eval(&v).norm() < 1e-15);
        let q = z.mul(&z);
        assert!((q.im.eval(&v).re - 2.0 * 0.3 * 0.4).abs() < 1e-15);
    }

    #[test]
    fn jacobian_of_map() {
        let m = PolyMap::new(vec![
            Poly::var(2, 0).mul(&Poly::var(2, 1)),
            Poly::var(2, 1).mul(&Poly::var(2, 1)),
        ]);
        let x = [Complex64::new(2.0, 0.0), Complex64::new(3.0, 0.0)];
        let pow = power_table(&x, m.max_exp());
        let j = m.jacobian_with(&pow);
        assert_eq!(j[0].re, 3.0);
        assert_eq!(j[1].re, 2.0);
        assert_eq!(j[3].re, 6.0);
        let h = m.second_with(&pow);
        assert_eq!(h[1][0].re, 1.0);
        assert_eq!(h[1][3].re, 2.0);
    }
}
