//! Truncated Fourier loops on the unit circle and bidegree expansions on the
//! closed unit disc.
//!
//! A [`DiscFunction`] stores coefficients `d[a][b]` of `zeta^a conj(zeta)^b`.
//! Nonlinear pointwise operations are carried out on the complexified torus:
//! `zeta` and `conj(zeta)` are replaced by independent unimodular variables
//! `(z1, z2)`, sampled by a 2-D FFT, multiplied pointwise and transformed back.
//! On the diagonal `z2 = conj(z1)` this reproduces the disc function, so the
//! truncated product agrees with the exact one up to aliasing of the highest
//! bidegrees.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Vector-valued trigonometric polynomial with modes `-M..=M`.
#[derive(Clone, Debug, PartialEq)]
pub struct FourierLoop {
    modes: usize,
    /// `coeffs[c][k + M]`
    coeffs: Vec<Vec<Complex64>>,
}

impl FourierLoop {
    pub fn zeros(n_components: usize, modes: usize) -> Self {
        Self {
            modes,
            coeffs: vec![vec![ZERO; 2 * modes + 1]; n_components],
        }
    }

    /// Builds a loop from per-component coefficient vectors ordered `-M..=M`.
    pub fn from_coeffs(coeffs: Vec<Vec<Complex64>>) -> Result<Self> {
        let len = coeffs.first().map(Vec::len).unwrap_or(1);
        if len % 2 == 0 || coeffs.iter().any(|c| c.len() != len) {
            return Err(Error::Dimension(
                "loop coefficients must have equal odd length".into(),
            ));
        }
        Ok(Self {
            modes: len / 2,
            coeffs,
        })
    }

    pub fn n_components(&self) -> usize {
        self.coeffs.len()
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn coeffs(&self) -> &[Vec<Complex64>] {
        &self.coeffs
    }

    pub fn coeff(&self, c: usize, k: i64) -> Complex64 {
        if k.unsigned_abs() as usize > self.modes {
            return ZERO;
        }
        self.coeffs[c][(k + self.modes as i64) as usize]
    }

    pub fn set_coeff(&mut self, c: usize, k: i64, v: Complex64) {
        let m = self.modes as i64;
        assert!(k.abs() <= m, "mode {k} outside -{m}..={m}");
        self.coeffs[c][(k + m) as usize] = v;
    }

    /// Value of every component at `zeta = exp(i theta)`.
    pub fn eval_angle(&self, theta: f64) -> Vec<Complex64> {
        let m = self.modes as i64;
        self.coeffs
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .map(|(idx, &c)| c * Complex64::from_polar(1.0, (idx as i64 - m) as f64 * theta))
                    .sum()
            })
            .collect()
    }

    /// Samples on the uniform grid `theta_p = 2 pi p / points`; result is
    /// `[component][p]`.
    pub fn to_grid(&self, points: usize) -> Result<Vec<Vec<Complex64>>> {
        if points < 2 * self.modes + 1 {
            return Err(Error::GridTooCoarse {
                points,
                modes: self.modes,
            });
        }
        let m = self.modes as i64;
        Ok(self
            .coeffs
            .iter()
            .map(|row| {
                let mut buf = vec![ZERO; points];
                for (idx, &c) in row.iter().enumerate() {
                    let k = idx as i64 - m;
                    buf[k.rem_euclid(points as i64) as usize] += c;
                }
                fft::inverse(&mut buf);
                buf
            })
            .collect())
    }

    /// Interpolates grid samples and truncates to `modes`.
    pub fn from_grid(values: &[Vec<Complex64>], modes: usize) -> Result<Self> {
        let points = values.first().map(Vec::len).unwrap_or(0);
        if points < 2 * modes + 1 {
            return Err(Error::GridTooCoarse { points, modes });
        }
        let scale = 1.0 / points as f64;
        let m = modes as i64;
        let coeffs = values
            .iter()
            .map(|row| {
                let mut buf = row.clone();
                fft::forward(&mut buf);
                (-m..=m)
                    .map(|k| buf[k.rem_euclid(points as i64) as usize] * scale)
                    .collect()
            })
            .collect();
        Ok(Self { modes, coeffs })
    }

    /// True when every component takes real values on the circle.
    pub fn is_real_valued(&self, tol: f64) -> bool {
        let m = self.modes as i64;
        (0..self.n_components()).all(|c| {
            (0..=m).all(|k| (self.coeff(c, k) - self.coeff(c, -k).conj()).norm() <= tol)
        })
    }

    /// Componentwise product, truncated to `modes`.
    pub fn mul_truncated(&self, other: &Self, modes: usize) -> Result<Self> {
        if self.n_components() != other.n_components() {
            return Err(Error::Dimension("loop product".into()));
        }
        let points = (2 * (self.modes + other.modes) + 1).max(2 * modes + 1).next_power_of_two();
        let a = self.to_grid(points)?;
        let b = other.to_grid(points)?;
        let prod: Vec<Vec<Complex64>> = a
            .iter()
            .zip(&b)
            .map(|(x, y)| x.iter().zip(y).map(|(u, v)| u * v).collect())
            .collect();
        Self::from_grid(&prod, modes)
    }

    /// Largest coefficient modulus.
    pub fn max_abs(&self) -> f64 {
        self.coeffs
            .iter()
            .flatten()
            .map(|c| c.norm())
            .fold(0.0, f64::max)
    }

    /// Sum of coefficient moduli per component, an upper bound for the sup norm.
    pub fn l1_norm(&self) -> f64 {
        self.coeffs
            .iter()
            .map(|row| row.iter().map(|c| c.norm()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

/// Splits a loop into its analytic part (modes `>= 0`) and its antianalytic
/// part (modes `< 0`, vanishing at infinity).
pub fn riesz_split(u: &FourierLoop) -> (FourierLoop, FourierLoop) {
    let mut plus = FourierLoop::zeros(u.n_components(), u.modes);
    let mut minus = FourierLoop::zeros(u.n_components(), u.modes);
    let m = u.modes as i64;
    for c in 0..u.n_components() {
        for k in -m..=m {
            if k >= 0 {
                plus.set_coeff(c, k, u.coeff(c, k));
            } else {
                minus.set_coeff(c, k, u.coeff(c, k));
            }
        }
    }
    (plus, minus)
}

/// Winding number about the origin of a closed curve `theta -> f(theta)`.
///
/// Samples are refined until consecutive phase increments stay below one
/// radian; fails if the curve comes too close to the origin.
pub fn winding_of<F: Fn(f64) -> Complex64>(f: F, min_points: usize) -> Result<i64> {
    let mut points = min_points.max(64);
    loop {
        let vals: Vec<Complex64> = (0..points)
            .map(|p| f(2.0 * PI * p as f64 / points as f64))
            .collect();
        let max_mod = vals.iter().map(|v| v.norm()).fold(0.0, f64::max);
        let min_mod = vals.iter().map(|v| v.norm()).fold(f64::INFINITY, f64::min);
        if !(min_mod > 1e-12 * max_mod.max(1e-300)) {
            return Err(Error::VanishingLoop {
                min_modulus: min_mod,
            });
        }
        let mut total = 0.0;
        let mut coarse = false;
        for p in 0..points {
            let step = (vals[(p + 1) % points] / vals[p]).arg();
            if step.abs() > 1.0 {
                coarse = true;
                break;
            }
            total += step;
        }
        if !coarse {
            let w = total / (2.0 * PI);
            return Ok(w.round() as i64);
        }
        if points > 1 << 20 {
            return Err(Error::VanishingLoop {
                min_modulus: min_mod,
            });
        }
        points *= 4;
    }
}

/// Winding number of one component of a Fourier loop.
pub fn winding_number(u: &FourierLoop, component: usize) -> Result<i64> {
    let m = u.modes as i64;
    let row = &u.coeffs[component];
    winding_of(
        |t| {
            row.iter()
                .enumerate()
                .map(|(idx, &c)| c * Complex64::from_polar(1.0, (idx as i64 - m) as f64 * t))
                .sum()
        },
        8 * (2 * u.modes + 1),
    )
}

/// Vector-valued function on the closed disc given by a bidegree expansion
/// `sum d[a][b] zeta^a conj(zeta)^b`, `a <= deg_a`, `b <= deg_b`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscFunction {
    n_components: usize,
    deg_a: usize,
    deg_b: usize,
    coeffs: Vec<Complex64>,
}

impl DiscFunction {
    pub fn zeros(n_components: usize, deg_a: usize, deg_b: usize) -> Self {
        Self {
            n_components,
            deg_a,
            deg_b,
            coeffs: vec![ZERO; n_components * (deg_a + 1) * (deg_b + 1)],
        }
    }

    /// Holomorphic polynomial with `coeffs[c][a]` the coefficient of `zeta^a`.
    pub fn analytic(coeffs: &[Vec<Complex64>], deg_b: usize) -> Result<Self> {
        let deg = coeffs.first().map(Vec::len).unwrap_or(1).saturating_sub(1);
        if coeffs.iter().any(|c| c.len() != deg + 1) {
            return Err(Error::Dimension("analytic coefficients".into()));
        }
        let mut out = Self::zeros(coeffs.len(), deg, deg_b);
        for (c, row) in coeffs.iter().enumerate() {
            for (a, &v) in row.iter().enumerate() {
                out.set(c, a, 0, v);
            }
        }
        Ok(out)
    }

    /// The linear disc `zeta -> zeta v`.
    pub fn linear(v: &[Complex64], deg_a: usize, deg_b: usize) -> Self {
        let mut out = Self::zeros(v.len(), deg_a.max(1), deg_b);
        for (c, &x) in v.iter().enumerate() {
            out.set(c, 1, 0, x);
        }
        out
    }

    pub fn constant(v: &[Complex64], deg_a: usize, deg_b: usize) -> Self {
        let mut out = Self::zeros(v.len(), deg_a, deg_b);
        for (c, &x) in v.iter().enumerate() {
            out.set(c, 0, 0, x);
        }
        out
    }

    /// Rebuilds from a flat coefficient vector in `(component, a, b)` order.
    pub fn from_flat(
        n_components: usize,
        deg_a: usize,
        deg_b: usize,
        coeffs: Vec<Complex64>,
    ) -> Result<Self> {
        if coeffs.len() != n_components * (deg_a + 1) * (deg_b + 1) {
            return Err(Error::Dimension("disc coefficient count".into()));
        }
        Ok(Self {
            n_components,
            deg_a,
            deg_b,
            coeffs,
        })
    }

    pub fn n_components(&self) -> usize {
        self.n_components
    }

    pub fn deg_a(&self) -> usize {
        self.deg_a
    }

    pub fn deg_b(&self) -> usize {
        self.deg_b
    }

    pub fn flat(&self) -> &[Complex64] {
        &self.coeffs
    }

    #[inline]
    fn idx(&self, c: usize, a: usize, b: usize) -> usize {
        (c * (self.deg_a + 1) + a) * (self.deg_b + 1) + b
    }

    #[inline]
    pub fn get(&self, c: usize, a: usize, b: usize) -> Complex64 {
        if a > self.deg_a || b > self.deg_b {
            return ZERO;
        }
        self.coeffs[self.idx(c, a, b)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, a: usize, b: usize, v: Complex64) {
        let i = self.idx(c, a, b);
        self.coeffs[i] = v;
    }

    /// Copy with new degree caps; coefficients beyond the caps are dropped.
    pub fn resized(&self, deg_a: usize, deg_b: usize) -> Self {
        let mut out = Self::zeros(self.n_components, deg_a, deg_b);
        for c in 0..self.n_components {
            for a in 0..=deg_a.min(self.deg_a) {
                for b in 0..=deg_b.min(self.deg_b) {
                    out.set(c, a, b, self.get(c, a, b));
                }
            }
        }
        out
    }

    /// Largest `|d[a][b]|` with `a + b >= min_total`.
    pub fn tail_abs(&self, min_total: usize) -> f64 {
        let mut best: f64 = 0.0;
        for c in 0..self.n_components {
            for a in 0..=self.deg_a {
                for b in 0..=self.deg_b {
                    if a + b >= min_total {
                        best = best.max(self.get(c, a, b).norm());
                    }
                }
            }
        }
        best
    }

    /// Evaluates the complexified expansion at `(z1, z2)`; the disc function
    /// itself is `eval_pair(zeta, conj(zeta))`.
    pub fn eval_pair(&self, z1: Complex64, z2: Complex64) -> Vec<Complex64> {
        let pb: Vec<Complex64> = powers(z2, self.deg_b);
        (0..self.n_components)
            .map(|c| {
                let mut acc = ZERO;
                for a in (0..=self.deg_a).rev() {
                    let base = self.idx(c, a, 0);
                    let row: Complex64 = self.coeffs[base..base + self.deg_b + 1]
                        .iter()
                        .zip(&pb)
                        .map(|(d, p)| d * p)
                        .sum();
                    acc = acc * z1 + row;
                }
                acc
            })
            .collect()
    }

    pub fn eval(&self, zeta: Complex64) -> Vec<Complex64> {
        self.eval_pair(zeta, zeta.conj())
    }

    /// Coefficients of `d/dzeta`.
    pub fn d_zeta(&self) -> Self {
        let mut out = Self::zeros(self.n_components, self.deg_a.saturating_sub(1), self.deg_b);
        for c in 0..self.n_components {
            for a in 1..=self.deg_a {
                for b in 0..=self.deg_b {
                    out.set(c, a - 1, b, self.get(c, a, b) * a as f64);
                }
            }
        }
        out
    }

    /// Coefficients of `d/dconj(zeta)`.
    pub fn d_zetabar(&self) -> Self {
        let mut out = Self::zeros(self.n_components, self.deg_a, self.deg_b.saturating_sub(1));
        for c in 0..self.n_components {
            for a in 0..=self.deg_a {
                for b in 1..=self.deg_b {
                    out.set(c, a, b - 1, self.get(c, a, b) * b as f64);
                }
            }
        }
        out
    }

    /// Expansion of the pointwise complex conjugate: `conj(d[b][a])` at `(a, b)`.
    pub fn star(&self) -> Self {
        let mut out = Self::zeros(self.n_components, self.deg_b, self.deg_a);
        for c in 0..self.n_components {
            for a in 0..=self.deg_a {
                for b in 0..=self.deg_b {
                    out.set(c, b, a, self.get(c, a, b).conj());
                }
            }
        }
        out
    }

    /// Boundary values as a Fourier loop: mode `k` collects `d[a][b]` with `a - b = k`.
    pub fn boundary(&self) -> FourierLoop {
        let modes = self.deg_a.max(self.deg_b);
        let mut out = FourierLoop::zeros(self.n_components, modes);
        for c in 0..self.n_components {
            for a in 0..=self.deg_a {
                for b in 0..=self.deg_b {
                    let k = a as i64 - b as i64;
                    let v = out.coeff(c, k) + self.get(c, a, b);
                    out.set_coeff(c, k, v);
                }
            }
        }
        out
    }

    /// Boundary samples at `theta_p = 2 pi p / points`, `[component][p]`.
    pub fn boundary_grid(&self, points: usize) -> Result<Vec<Vec<Complex64>>> {
        self.boundary().to_grid(points)
    }

    /// True when all coefficients with `b > 0` vanish to `tol`.
    pub fn is_analytic(&self, tol: f64) -> bool {
        (0..self.n_components).all(|c| {
            (0..=self.deg_a).all(|a| (1..=self.deg_b).all(|b| self.get(c, a, b).norm() <= tol))
        })
    }

    /// The analytic part `d[a][0]`.
    pub fn analytic_part(&self) -> Self {
        let mut out = Self::zeros(self.n_components, self.deg_a, self.deg_b);
        for c in 0..self.n_components {
            for a in 0..=self.deg_a {
                out.set(c, a, 0, self.get(c, a, 0));
            }
        }
        out
    }

    /// `f(e^{i theta} zeta)`.
    pub fn rotate_argument(&self, theta: f64) -> Self {
        let mut out = self.clone();
        for c in 0..self.n_components {
            for a in 0..=self.deg_a {
                for b in 0..=self.deg_b {
                    let ph = Complex64::from_polar(1.0, theta * (a as f64 - b as f64));
                    out.set(c, a, b, self.get(c, a, b) * ph);
                }
            }
        }
        out
    }

    /// Applies a constant complex matrix (row-major `n x n`) to the values.
    pub fn map_components(&self, m: &[Complex64], rows: usize) -> Result<Self> {
        if m.len() != rows * self.n_components {
            return Err(Error::Dimension("component map".into()));
        }
        let mut out = Self::zeros(rows, self.deg_a, self.deg_b);
        for r in 0..rows {
            for c in 0..self.n_components {
                let k = m[r * self.n_components + c];
                if k == ZERO {
                    continue;
                }
                for a in 0..=self.deg_a {
                    for b in 0..=self.deg_b {
                        let v = out.get(r, a, b) + k * self.get(c, a, b);
                        out.set(r, a, b, v);
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn scale(&self, s: Complex64) -> Self {
        Self {
            coeffs: self.coeffs.iter().map(|c| c * s).collect(),
            ..self.clone()
        }
    }

    /// Sum with degree caps taken as the larger of the two.
    pub fn add(&self, other: &Self) -> Result<Self> {
        self.combine(other, 1.0)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.combine(other, -1.0)
    }

    fn combine(&self, other: &Self, sign: f64) -> Result<Self> {
        if self.n_components != other.n_components {
            return Err(Error::Dimension("disc sum".into()));
        }
        let mut out = self.resized(self.deg_a.max(other.deg_a), self.deg_b.max(other.deg_b));
        for c in 0..other.n_components {
            for a in 0..=other.deg_a {
                for b in 0..=other.deg_b {
                    let v = out.get(c, a, b) + other.get(c, a, b) * sign;
                    out.set(c, a, b, v);
                }
            }
        }
        Ok(out)
    }

    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    /// Largest componentwise coefficient `l1` norm, an upper bound for the
    /// sup norm on the closed disc.
    pub fn sup_bound(&self) -> f64 {
        (0..self.n_components)
            .map(|c| {
                let s = self.idx(c, 0, 0);
                let e = s + (self.deg_a + 1) * (self.deg_b + 1);
                self.coeffs[s..e].iter().map(|v| v.norm()).sum::<f64>()
            })
            .fold(0.0, f64::max)
    }

    /// Samples on the complexified torus grid `(2 pi i / p, 2 pi j / p)`.
    /// Result is `[component][i * p + j]`.
    pub fn to_torus(&self, p: usize) -> Result<Vec<Vec<Complex64>>> {
        if p < self.deg_a.max(self.deg_b) + 1 {
            return Err(Error::GridTooCoarse {
                points: p,
                modes: self.deg_a.max(self.deg_b),
            });
        }
        Ok((0..self.n_components)
            .map(|c| {
                let mut buf = vec![ZERO; p * p];
                for a in 0..=self.deg_a {
                    let s = self.idx(c, a, 0);
                    buf[a * p..a * p + self.deg_b + 1]
                        .copy_from_slice(&self.coeffs[s..s + self.deg_b + 1]);
                }
                fft::square_2d(&mut buf, p, true);
                buf
            })
            .collect())
    }

    /// Inverse of [`to_torus`](Self::to_torus) followed by truncation to the caps.
    pub fn from_torus(
        values: &[Vec<Complex64>],
        p: usize,
        deg_a: usize,
        deg_b: usize,
    ) -> Result<Self> {
        if p < deg_a.max(deg_b) + 1 {
            return Err(Error::GridTooCoarse {
                points: p,
                modes: deg_a.max(deg_b),
            });
        }
        let scale = 1.0 / (p * p) as f64;
        let mut out = Self::zeros(values.len(), deg_a, deg_b);
        for (c, row) in values.iter().enumerate() {
            let mut buf = row.clone();
            fft::square_2d(&mut buf, p, false);
            for a in 0..=deg_a {
                for b in 0..=deg_b {
                    out.set(c, a, b, buf[a * p + b] * scale);
                }
            }
        }
        Ok(out)
    }
}

fn powers(z: Complex64, deg: usize) -> Vec<Complex64> {
    let mut out = Vec::with_capacity(deg + 1);
    let mut x = Complex64::new(1.0, 0.0);
    for _ in 0..=deg {
        out.push(x);
        x *= z;
    }
    out
}

/// Solves `d u / d conj(zeta) = g` with `u = T g`, using
/// `zeta^a conj(zeta)^b -> zeta^a conj(zeta)^(b+1) / (b+1)`. The result
/// vanishes at the origin and has `deg_b` raised by one, which must stay
/// within `cap_b`.
pub fn cauchy_solve(g: &DiscFunction, cap_b: usize) -> Result<DiscFunction> {
    let needed = g.deg_b + 1;
    if needed > cap_b {
        return Err(Error::TruncationExceeded {
            what: "Cauchy transform",
            needed,
            cap: cap_b,
        });
    }
    let mut out = DiscFunction::zeros(g.n_components, g.deg_a, needed);
    for c in 0..g.n_components {
        for a in 0..=g.deg_a {
            for b in 0..=g.deg_b {
                out.set(c, a, b + 1, g.get(c, a, b) / (b as f64 + 1.0));
            }
        }
    }
    Ok(out)
}
