//! The canonical-disc family over the indicatrix, the Riemann map
//! `Psi(z) = r(z) v(z)` with its inverse, and the checks run on them.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::disc_solver::{
    canonical_disc, circle_rotate, solve_bp, solve_disc_through_point, Constraints, Residuals, SolverConfig, StationaryDiscSolution,
};
use crate::error::{Error, Result};
use crate::fibration::SphereConormal;
use crate::linalg::{self, cvec_norm};
use crate::parallel;
use crate::poly::{ComplexPoly, Poly};
use crate::structures::{ball_samples, levi_form, random_unit, sphere_samples, BallMap, Hypersurface, ProlongationTensor, StructureField};

type C64 = Complex64;

fn describe(z: &[C64]) -> String {
    let parts: Vec<String> = z.iter().map(|c| format!("{:.6}{:+.6}i", c.re, c.im)).collect();
    format!("({})", parts.join(", "))
}

fn direction_error(u: &[C64], e: Error) -> Error {
    Error::Direction {
        direction: describe(u),
        source: Box::new(e),
    }
}

fn diff_norm(a: &[C64], b: &[C64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt()
}

/// Unit directions with first component real and nonnegative, one per circle
/// orbit. For `n = 2` this is `(cos eta, sin eta e^{i phi})` on a product
/// grid plus the two poles; otherwise `resolution^2` seeded random orbits.
pub fn orbit_directions(n: usize, resolution: usize) -> Vec<Vec<C64>> {
    let res = resolution.max(1);
    if n == 1 {
        return vec![vec![C64::new(1.0, 0.0)]];
    }
    if n == 2 {
        let mut out = vec![vec![C64::new(1.0, 0.0), C64::new(0.0, 0.0)]];
        for i in 0..res {
            let eta = std::f64::consts::FRAC_PI_2 * (i as f64 + 0.5) / res as f64;
            for j in 0..res {
                let phi = 2.0 * std::f64::consts::PI * j as f64 / res as f64;
                out.push(vec![C64::new(eta.cos(), 0.0), C64::from_polar(eta.sin(), phi)]);
            }
        }
        out.push(vec![C64::new(0.0, 0.0), C64::new(1.0, 0.0)]);
        return out;
    }
    sphere_samples(2 * n, res * res, 17)
        .into_iter()
        .map(|x| {
            let u = linalg::complex_form(&x);
            let phase = if u[0].norm() > 0.0 { u[0].conj() / u[0].norm() } else { C64::new(1.0, 0.0) };
            u.into_iter().map(|c| c * phase).collect()
        })
        .collect()
}

fn multi_indices(n: usize, d: usize) -> Vec<Vec<u32>> {
    if n == 1 {
        return vec![vec![d as u32]];
    }
    let mut out = Vec::new();
    for first in (0..=d).rev() {
        for mut rest in multi_indices(n - 1, d - first) {
            rest.insert(0, first as u32);
            out.push(rest);
        }
    }
    out
}

fn power(base: &ComplexPoly, k: u32, vars: usize) -> ComplexPoly {
    (0..k).fold(ComplexPoly::constant(vars, C64::new(1.0, 0.0)), |acc, _| acc.mul(base))
}

/// Real basis of the Hermitian forms `z^a conj(z)^b`, `|a| = |b| = d`.
fn hermitian_basis(n: usize, d: usize) -> Vec<Poly> {
    let m = 2 * n;
    let monos: Vec<ComplexPoly> = multi_indices(n, d)
        .iter()
        .map(|a| {
            a.iter()
                .enumerate()
                .fold(ComplexPoly::constant(m, C64::new(1.0, 0.0)), |acc, (j, &k)| acc.mul(&power(&ComplexPoly::z(n, j), k, m)))
        })
        .collect();
    let conj = |p: &ComplexPoly| ComplexPoly {
        re: p.re.clone(),
        im: p.im.scale(-1.0),
    };
    let mut out = Vec::new();
    for (i, a) in monos.iter().enumerate() {
        for (j, b) in monos.iter().enumerate().skip(i) {
            let prod = a.mul(&conj(b));
            out.push(prod.re.clone());
            if j != i {
                out.push(prod.im);
            }
        }
    }
    out
}

/// The radial function of the indicatrix fitted by a circle-invariant
/// Hermitian form `H` of bidegree `(d, d)`, so that `s(u) = H(u)` on unit
/// vectors and the surface is `{ |x|^(4d+2) = H(x)^2 }`.
#[derive(Clone, Debug)]
pub struct RadialFit {
    pub degree: usize,
    pub form: Poly,
    gradient: Vec<Poly>,
    /// max over the samples of `|H(u) - s(u)|`
    pub residual: f64,
}

impl RadialFit {
    pub fn fit(n: usize, samples: &[(Vec<C64>, f64)], max_degree: usize) -> Result<Self> {
        let mut best: Option<Self> = None;
        for d in 0..=max_degree {
            let basis = hermitian_basis(n, d);
            if 2 * basis.len() > samples.len() && d > 0 {
                break;
            }
            let a = DMatrix::from_fn(samples.len(), basis.len(), |i, k| basis[k].eval_real(&linalg::real_form(&samples[i].0)));
            let rhs = DVector::from_iterator(samples.len(), samples.iter().map(|s| s.1));
            let coef = a
                .clone()
                .svd(true, true)
                .solve(&rhs, 1e-13)
                .map_err(|e| Error::Invalid(format!("indicatrix fit: {e}")))?;
            let residual = (&a * &coef - &rhs).amax();
            let form = basis
                .iter()
                .zip(coef.iter())
                .fold(Poly::zero(2 * n), |acc, (b, &c)| acc.add(&b.scale(c)));
            let gradient = (0..2 * n).map(|i| form.derivative(i)).collect();
            let better = best.as_ref().map_or(true, |b| residual < 0.5 * b.residual);
            if better {
                best = Some(Self {
                    degree: d,
                    form,
                    gradient,
                    residual,
                });
            }
            if residual < 1e-11 {
                break;
            }
        }
        best.ok_or_else(|| Error::Invalid("indicatrix fit: no samples".into()))
    }

    /// Fitted `s(u)` for a nonzero `u`.
    pub fn radius(&self, u: &[C64]) -> f64 {
        let norm = cvec_norm(u);
        let x: Vec<f64> = linalg::real_form(u).into_iter().map(|v| v / norm).collect();
        self.form.eval_real(&x)
    }
}

impl Hypersurface for RadialFit {
    fn dim(&self) -> usize {
        self.gradient.len()
    }

    fn value(&self, x: &[f64]) -> f64 {
        let nsq: f64 = x.iter().map(|v| v * v).sum();
        nsq.powi(2 * self.degree as i32 + 1) - self.form.eval_real(x).powi(2)
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let e = 2 * self.degree as i32 + 1;
        let nsq: f64 = x.iter().map(|v| v * v).sum();
        let radial = 2.0 * e as f64 * nsq.powi(e - 1);
        let h = self.form.eval_real(x);
        x.iter()
            .zip(&self.gradient)
            .map(|(xi, g)| radial * xi - 2.0 * h * g.eval_real(x))
            .collect()
    }

    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let m = x.len();
        let step = 1e-6;
        let mut out = DMatrix::zeros(m, m);
        for k in 0..m {
            let mut a = x.to_vec();
            let mut b = x.to_vec();
            a[k] += step;
            b[k] -= step;
            let (ga, gb) = (self.gradient(&a), self.gradient(&b));
            for r in 0..m {
                out[(r, k)] = (ga[r] - gb[r]) / (2.0 * step);
            }
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct IndicatrixSample {
    /// unit direction parameter
    pub direction: Vec<C64>,
    /// tangent vector `v = s(direction) direction` on the indicatrix
    pub v: Vec<C64>,
    pub radius: f64,
    pub solution: StationaryDiscSolution,
}

#[derive(Clone, Debug)]
pub struct IndicatrixGrid {
    pub n: usize,
    pub lambda: f64,
    pub resolution: usize,
    pub samples: Vec<IndicatrixSample>,
    pub fit: RadialFit,
}

/// Solves the canonical disc in every orbit direction of the grid and fits
/// the radial function.
pub fn build_indicatrix(structure: &StructureField, resolution: usize, config: &SolverConfig) -> Result<IndicatrixGrid> {
    let n = structure.n();
    let directions = orbit_directions(n, resolution);
    let solved = parallel::map(&directions, |u| canonical_disc(structure, u, config).map_err(|e| direction_error(u, e)));
    let mut samples = Vec::with_capacity(directions.len());
    for (u, sol) in directions.into_iter().zip(solved) {
        let solution = sol?;
        let v = solution.tangent();
        let radius = cvec_norm(&v);
        samples.push(IndicatrixSample {
            direction: u,
            v,
            radius,
            solution,
        });
    }
    let data: Vec<(Vec<C64>, f64)> = samples.iter().map(|s| (s.direction.clone(), s.radius)).collect();
    let fit = RadialFit::fit(n, &data, 8)?;
    Ok(IndicatrixGrid {
        n,
        lambda: structure.lambda(),
        resolution,
        samples,
        fit,
    })
}

/// What the Riemann map needs: the structure and solver settings, with an
/// optional indicatrix grid.
#[derive(Clone, Debug)]
pub struct RiemannMapData {
    pub structure: StructureField,
    pub config: SolverConfig,
    pub grid: Option<IndicatrixGrid>,
}

impl RiemannMapData {
    pub fn new(structure: StructureField, config: SolverConfig) -> Self {
        Self {
            structure,
            config,
            grid: None,
        }
    }

    pub fn with_grid(structure: StructureField, config: SolverConfig, resolution: usize) -> Result<Self> {
        let grid = build_indicatrix(&structure, resolution, &config)?;
        Ok(Self {
            structure,
            config,
            grid: Some(grid),
        })
    }
}

#[derive(Clone, Debug)]
pub struct MapPoint {
    pub z: Vec<C64>,
    pub psi: Vec<C64>,
    pub v: Vec<C64>,
    pub r: f64,
    pub solution: StationaryDiscSolution,
}

/// `Psi(z) = r(z) v(z)` from the canonical disc through `z`.
pub fn riemann_map_eval(data: &RiemannMapData, z: &[C64]) -> Result<MapPoint> {
    if data.structure.is_standard() {
        let r = cvec_norm(z);
        if !(r > 0.0) || r >= 1.0 {
            return Err(Error::Invalid("the Riemann map needs 0 < |z| < 1".into()));
        }
        let u: Vec<C64> = z.iter().map(|c| c / r).collect();
        let solution = StationaryDiscSolution::linear(&u, &data.config.truncation)?;
        return Ok(MapPoint {
            z: z.to_vec(),
            psi: z.to_vec(),
            v: u,
            r,
            solution,
        });
    }
    let (solution, v, r) = solve_disc_through_point(&data.structure, z, None, &data.config)?;
    let v = linalg::complex_form(&v);
    Ok(MapPoint {
        z: z.to_vec(),
        psi: v.iter().map(|c| c * r).collect(),
        v,
        r,
        solution,
    })
}

/// `F(y) = f_{v(y)}(|y| / s(y / |y|))`, the inverse of the Riemann map.
pub fn riemann_map_inverse(data: &RiemannMapData, y: &[C64]) -> Result<Vec<C64>> {
    if data.structure.is_standard() {
        return Ok(y.to_vec());
    }
    let norm = cvec_norm(y);
    if !(norm > 0.0) {
        return Err(Error::Invalid("the inverse Riemann map is evaluated away from 0".into()));
    }
    let sol = canonical_disc(&data.structure, y, &data.config)?;
    let s = cvec_norm(&sol.tangent());
    let rho = norm / s;
    if rho >= 1.0 {
        return Err(Error::Invalid(format!("{} lies outside the indicatrix domain", describe(y))));
    }
    Ok(sol.f.eval(C64::new(rho, 0.0)))
}

/// Points `t u` for seeded unit `u` and each radius in `radii`.
pub fn shell_samples(n: usize, directions: usize, radii: &[f64], seed: u64) -> Vec<Vec<C64>> {
    let dirs = sphere_samples(2 * n, directions, seed);
    dirs.iter()
        .flat_map(|d| radii.iter().map(move |&t| d.iter().map(|x| x * t).collect::<Vec<f64>>()))
        .map(|x| linalg::complex_form(&x))
        .collect()
}

/// Seeded points of the ball with `margin <= |z| <= 1 - margin`.
pub fn annulus_samples(n: usize, count: usize, margin: f64, seed: u64) -> Vec<Vec<C64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = 2 * n;
    (0..count)
        .map(|_| {
            let dir = random_unit(&mut rng, m);
            let t = margin + (1.0 - 2.0 * margin) * rng.gen::<f64>().powf(1.0 / m as f64);
            linalg::complex_form(&dir.iter().map(|x| x * t).collect::<Vec<f64>>())
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct BoundsReport {
    pub lower: f64,
    pub upper: f64,
    pub samples: usize,
    pub lower_witness: Vec<[f64; 2]>,
    pub upper_witness: Vec<[f64; 2]>,
    pub residuals: Residuals,
}

fn pairs(z: &[C64]) -> Vec<[f64; 2]> {
    z.iter().map(|c| [c.re, c.im]).collect()
}

/// Extremes of `|Psi(z)| / |z|` over the sample.
pub fn check_bounds(data: &RiemannMapData, samples: &[Vec<C64>]) -> Result<BoundsReport> {
    let points = parallel::map(samples, |z| riemann_map_eval(data, z));
    let mut lo = (f64::INFINITY, 0usize);
    let mut hi = (0.0f64, 0usize);
    let mut residuals = Residuals::default();
    for (i, p) in points.into_iter().enumerate() {
        let p = p.map_err(|e| direction_error(&samples[i], e))?;
        residuals = residuals.worst(p.solution.residuals);
        let ratio = cvec_norm(&p.psi) / cvec_norm(&p.z);
        if ratio < lo.0 {
            lo = (ratio, i);
        }
        if ratio > hi.0 {
            hi = (ratio, i);
        }
    }
    if samples.is_empty() {
        return Err(Error::Invalid("check_bounds: empty sample".into()));
    }
    Ok(BoundsReport {
        lower: lo.0,
        upper: hi.0,
        samples: samples.len(),
        lower_witness: pairs(&samples[lo.1]),
        upper_witness: pairs(&samples[hi.1]),
        residuals,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct Witness {
    pub z: Vec<[f64; 2]>,
    pub message: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct FoliationReport {
    pub samples: usize,
    pub solved: usize,
    /// sup over `z` of the distance between the disc and its re-solve
    pub max_leaf_mismatch: f64,
    /// extremes of `|z_i - z_j| / |Psi_i - Psi_j|` over distinct pairs
    pub min_separation_ratio: f64,
    pub max_separation_ratio: f64,
    pub collisions: usize,
    /// min `|det dF|` over the Jacobian sample
    pub min_jacobian: f64,
    pub jacobian_samples: usize,
    pub residuals: Residuals,
    pub failures: Vec<Witness>,
}

impl FoliationReport {
    pub fn passes(&self, leaf_tol: f64) -> bool {
        self.solved == self.samples
            && self.failures.is_empty()
            && self.collisions == 0
            && self.max_leaf_mismatch <= leaf_tol
            && (self.jacobian_samples == 0 || self.min_jacobian > 0.0)
    }
}

/// Randomly perturbed copy of a through-point solution.
fn perturbed_seed(sol: &StationaryDiscSolution, size: f64, seed: u64) -> StationaryDiscSolution {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = sol.clone();
    let n = sol.n();
    for c in 0..n {
        for a in 0..4.min(sol.f.deg_a() + 1) {
            let bump = C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5) * size;
            if a > 0 {
                out.f.set(c, a, 0, sol.f.get(c, a, 0) + bump);
            }
            let bump = C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5) * size;
            out.g.set(c, a, 0, sol.g.get(c, a, 0) + bump);
        }
    }
    if let Some((_, r)) = out.normalization.through.as_mut() {
        *r *= 1.0 + size * (rng.gen::<f64>() - 0.5);
    }
    out
}

fn resolve_from(structure: &StructureField, z: &[C64], seed: &StationaryDiscSolution, config: &SolverConfig) -> Result<StationaryDiscSolution> {
    let tensor = ProlongationTensor::new(structure.clone());
    solve_bp(
        |s: &StructureField| SphereConormal::deformed(s.clone()),
        &tensor,
        structure.lambda(),
        Some(seed),
        &Constraints::ThroughPoint { point: z.to_vec() },
        config,
    )
}

/// Real `2n x 2n` Jacobian of the inverse map at `y`, by forward differences
/// of fresh canonical solves.
fn inverse_jacobian(data: &RiemannMapData, y: &[C64], step: f64) -> Result<f64> {
    let m = 2 * y.len();
    let base = linalg::real_form(&riemann_map_inverse(data, y)?);
    let y_real = linalg::real_form(y);
    let mut jac = DMatrix::zeros(m, m);
    for k in 0..m {
        let mut yk = y_real.clone();
        yk[k] += step;
        let val = linalg::real_form(&riemann_map_inverse(data, &linalg::complex_form(&yk))?);
        for r in 0..m {
            jac[(r, k)] = (val[r] - base[r]) / step;
        }
    }
    Ok(jac.determinant())
}

/// Solves the leaf through every sample point, re-solves from a perturbed
/// seed, checks pairwise separation and (on the first `jacobian_samples`
/// points) the Jacobian of the inverse map.
pub fn check_foliation(structure: &StructureField, samples: &[Vec<C64>], jacobian_samples: usize, config: &SolverConfig) -> Result<FoliationReport> {
    let data = RiemannMapData::new(structure.clone(), config.clone());
    let indexed: Vec<(usize, Vec<C64>)> = samples.iter().cloned().enumerate().collect();
    let results = parallel::map(&indexed, |(i, z)| -> Result<(MapPoint, f64, f64)> {
        let point = riemann_map_eval(&data, z)?;
        let mismatch = if structure.is_standard() {
            0.0
        } else {
            let seed = perturbed_seed(&point.solution, 1e-3, 1000 + *i as u64);
            let again = resolve_from(structure, z, &seed, config)?;
            again.f.sub(&point.solution.f)?.sup_bound()
        };
        let det = if *i < jacobian_samples {
            inverse_jacobian(&data, &point.psi, 1e-6)?
        } else {
            f64::NAN
        };
        Ok((point, mismatch, det))
    });
    let mut report = FoliationReport {
        samples: samples.len(),
        solved: 0,
        max_leaf_mismatch: 0.0,
        min_separation_ratio: f64::INFINITY,
        max_separation_ratio: 0.0,
        collisions: 0,
        min_jacobian: f64::INFINITY,
        jacobian_samples: jacobian_samples.min(samples.len()),
        residuals: Residuals::default(),
        failures: Vec::new(),
    };
    let mut points = Vec::new();
    for (z, res) in samples.iter().zip(results) {
        match res {
            Ok((p, mismatch, det)) => {
                report.solved += 1;
                report.max_leaf_mismatch = report.max_leaf_mismatch.max(mismatch);
                if det.is_finite() {
                    report.min_jacobian = report.min_jacobian.min(det.abs());
                }
                report.residuals = report.residuals.worst(p.solution.residuals);
                points.push(p);
            }
            Err(e) => report.failures.push(Witness {
                z: pairs(z),
                message: e.to_string(),
            }),
        }
    }
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let dz = diff_norm(&points[i].z, &points[j].z);
            let dpsi = diff_norm(&points[i].psi, &points[j].psi);
            if (dz < 1e-8) != (dpsi < 1e-8) {
                report.collisions += 1;
                report.failures.push(Witness {
                    z: pairs(&points[i].z),
                    message: format!("collides with {} (|dz| = {dz:.3e}, |dPsi| = {dpsi:.3e})", describe(&points[j].z)),
                });
                continue;
            }
            if dpsi > 0.0 {
                let ratio = dz / dpsi;
                report.min_separation_ratio = report.min_separation_ratio.min(ratio);
                report.max_separation_ratio = report.max_separation_ratio.max(ratio);
            }
        }
    }
    if report.jacobian_samples == 0 {
        report.min_jacobian = f64::NAN;
    }
    Ok(report)
}

#[derive(Clone, Debug, Serialize)]
pub struct CircledReport {
    /// sup of `|f_{v, theta} - f_{e^{i theta} v}|` over the disc
    pub max_disc_mismatch: f64,
    /// same for the fiber, after matching the real scale
    pub max_fiber_mismatch: f64,
    /// sup of `|s(e^{i theta} u) - s(u)|`
    pub max_radius_mismatch: f64,
    pub directions: usize,
    pub angles: usize,
    pub residuals: Residuals,
}

/// Compares rotated canonical discs with the canonical discs of rotated
/// directions.
pub fn check_circled(structure: &StructureField, directions: &[Vec<C64>], angles: &[f64], config: &SolverConfig) -> Result<CircledReport> {
    let jobs: Vec<(usize, usize)> = (0..directions.len())
        .flat_map(|d| (0..=angles.len()).map(move |a| (d, a)))
        .collect();
    // index `angles.len()` is the unrotated disc
    let solved = parallel::map(&jobs, |&(d, a)| {
        let u = &directions[d];
        let dir: Vec<C64> = if a == angles.len() {
            u.clone()
        } else {
            u.iter().map(|c| c * C64::from_polar(1.0, angles[a])).collect()
        };
        canonical_disc(structure, &dir, config).map_err(|e| direction_error(&dir, e))
    });
    let solved = solved.into_iter().collect::<Result<Vec<_>>>()?;
    let stride = angles.len() + 1;
    let mut report = CircledReport {
        max_disc_mismatch: 0.0,
        max_fiber_mismatch: 0.0,
        max_radius_mismatch: 0.0,
        directions: directions.len(),
        angles: angles.len(),
        residuals: Residuals::default(),
    };
    for d in 0..directions.len() {
        let base = &solved[d * stride + angles.len()];
        let s0 = cvec_norm(&base.tangent());
        for (a, &theta) in angles.iter().enumerate() {
            let direct = &solved[d * stride + a];
            let rotated = circle_rotate(base, structure, theta, &config.truncation)?;
            report.max_disc_mismatch = report.max_disc_mismatch.max(rotated.f.sub(&direct.f)?.sup_bound());
            let num: C64 = rotated.g.flat().iter().zip(direct.g.flat()).map(|(x, y)| y.conj() * x).sum();
            let den: f64 = direct.g.flat().iter().map(|y| y.norm_sqr()).sum();
            let scale = C64::new(num.re / den, 0.0);
            report.max_fiber_mismatch = report.max_fiber_mismatch.max(rotated.g.sub(&direct.g.scale(scale))?.sup_bound());
            report.max_radius_mismatch = report.max_radius_mismatch.max((cvec_norm(&direct.tangent()) - s0).abs());
            report.residuals = report.residuals.worst(direct.residuals);
        }
    }
    Ok(report)
}

#[derive(Clone, Debug, Serialize)]
pub struct EquivalenceReport {
    /// sup of `|phi(z) - F'(d phi_0 Psi(z))|` over the sample
    pub max_discrepancy: f64,
    /// sup of `||phi(x)| - 1|` over sphere samples
    pub ball_defect: f64,
    /// `|L J0 - J0 L|` for `L = d phi_0`
    pub linearity_defect: f64,
    /// sup over the sample of `||L v(z)| - s'(L v(z))|`, with `s'` the target
    /// radial function
    pub indicatrix_defect: f64,
    pub samples: usize,
    pub witness: Vec<[f64; 2]>,
}

/// Evaluates `phi = F' o d phi_0 o Psi` on the sample, where `F'` inverts the
/// Riemann map of `target`.
pub fn verify_equivalence(
    source: &StructureField,
    target: &StructureField,
    phi: &BallMap,
    samples: &[Vec<C64>],
    config: &SolverConfig,
) -> Result<EquivalenceReport> {
    let n = source.n();
    let m = 2 * n;
    if target.n() != n || phi.generator.dim() != m {
        return Err(Error::Dimension("verify_equivalence".into()));
    }
    let origin = phi.eval(&vec![0.0; m]);
    let mut ball_defect = linalg::vec_norm(&origin);
    for x in sphere_samples(m, 64, 5) {
        ball_defect = ball_defect.max((linalg::vec_norm(&phi.eval(&x)) - 1.0).abs());
    }
    if ball_defect > 1e-8 {
        return Err(Error::NotBallPreserving { defect: ball_defect });
    }
    let l = phi.differential(&vec![0.0; m]);
    let j0 = linalg::j0(n);
    let linearity_defect = linalg::op_norm_real(&(&l * &j0 - &j0 * &l));
    let src = RiemannMapData::new(source.clone(), config.clone());
    let dst = RiemannMapData::new(target.clone(), config.clone());
    let apply_l = |z: &[C64]| -> Vec<C64> {
        let y = &l * DVector::from_vec(linalg::real_form(z));
        linalg::complex_form(y.as_slice())
    };
    let results = parallel::map(samples, |z| -> Result<(f64, f64)> {
        let p = riemann_map_eval(&src, z)?;
        let lhs = linalg::real_form(&linalg::complex_form(&phi.eval(&linalg::real_form(z))));
        let rhs = linalg::real_form(&riemann_map_inverse(&dst, &apply_l(&p.psi))?);
        let discrepancy = lhs.iter().zip(&rhs).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let lv = apply_l(&p.v);
        let target_radius = if target.is_standard() {
            1.0
        } else {
            cvec_norm(&canonical_disc(target, &lv, config)?.tangent())
        };
        Ok((discrepancy, (cvec_norm(&lv) - target_radius).abs()))
    });
    let mut report = EquivalenceReport {
        max_discrepancy: 0.0,
        ball_defect,
        linearity_defect,
        indicatrix_defect: 0.0,
        samples: samples.len(),
        witness: Vec::new(),
    };
    for (z, r) in samples.iter().zip(results) {
        let (d, ind) = r.map_err(|e| direction_error(z, e))?;
        if d > report.max_discrepancy {
            report.max_discrepancy = d;
            report.witness = pairs(z);
        }
        report.indicatrix_defect = report.indicatrix_defect.max(ind);
    }
    Ok(report)
}

/// Eigenvalues of the Levi form of `surface` at `p` on the complex tangent
/// space, normalised by `2 |grad r|` so that the unit sphere gives 1.
pub fn levi_eigenvalues(structure: &StructureField, surface: &dyn Hypersurface, p: &[f64]) -> Result<Vec<f64>> {
    let m = p.len();
    let g = DVector::from_vec(surface.gradient(p));
    let j = structure.eval_real(p);
    let mut basis: Vec<DVector<f64>> = vec![g.normalize()];
    let jg = j.transpose() * &g;
    let push = |v: DVector<f64>, basis: &mut Vec<DVector<f64>>| {
        if basis.len() == m {
            return;
        }
        let mut w = v;
        for b in basis.iter() {
            w -= b * b.dot(&w);
        }
        let norm = w.norm();
        if norm > 1e-3 {
            basis.push(w / norm);
        }
    };
    push(jg, &mut basis);
    for k in 0..m {
        push(DVector::from_fn(m, |r, _| if r == k { 1.0 } else { 0.0 }), &mut basis);
    }
    let tangent: Vec<DVector<f64>> = basis.into_iter().skip(2).collect();
    let q = |x: &DVector<f64>| levi_form(structure, surface, p, x.as_slice());
    let dim = tangent.len();
    let mut form = DMatrix::zeros(dim, dim);
    for a in 0..dim {
        form[(a, a)] = q(&tangent[a])?;
        for b in a + 1..dim {
            let val = (q(&(&tangent[a] + &tangent[b]))? - q(&(&tangent[a] - &tangent[b]))?) / 4.0;
            form[(a, b)] = val;
            form[(b, a)] = val;
        }
    }
    let scale = 2.0 * g.norm();
    let mut eig: Vec<f64> = form.symmetric_eigen().eigenvalues.iter().map(|e| e / scale).collect();
    eig.sort_by(f64::total_cmp);
    Ok(eig)
}

#[derive(Clone, Debug, Serialize)]
pub struct PseudoconvexReport {
    pub min_eigenvalue: f64,
    /// sup of `|eigenvalue - 1|`
    pub max_deviation: f64,
    pub fit_degree: usize,
    pub fit_residual: f64,
    /// sup of `|s - 1|` over the samples
    pub sphere_distance: f64,
    pub samples: usize,
}

pub const FIT_TOLERANCE: f64 = 1e-6;

/// Levi eigenvalues of the fitted indicatrix at the sample points, for the
/// Levi form of `levi_structure`.
pub fn check_indicatrix_pseudoconvex(grid: &IndicatrixGrid, levi_structure: &StructureField) -> Result<PseudoconvexReport> {
    if grid.fit.residual > FIT_TOLERANCE {
        return Err(Error::FitResidual {
            residual: grid.fit.residual,
            tolerance: FIT_TOLERANCE,
        });
    }
    let eigs = parallel::map(&grid.samples, |s| {
        let radius = grid.fit.radius(&s.direction);
        let p: Vec<f64> = linalg::real_form(&s.direction).into_iter().map(|x| x * radius).collect();
        levi_eigenvalues(levi_structure, &grid.fit, &p)
    });
    let mut report = PseudoconvexReport {
        min_eigenvalue: f64::INFINITY,
        max_deviation: 0.0,
        fit_degree: grid.fit.degree,
        fit_residual: grid.fit.residual,
        sphere_distance: grid.samples.iter().map(|s| (s.radius - 1.0).abs()).fold(0.0, f64::max),
        samples: grid.samples.len(),
    };
    for e in eigs {
        for v in e? {
            report.min_eigenvalue = report.min_eigenvalue.min(v);
            report.max_deviation = report.max_deviation.max((v - 1.0).abs());
        }
    }
    Ok(report)
}

/// `J0` at the origin with the ball map unchanged: the identity map.
pub fn identity_map(n: usize) -> BallMap {
    BallMap {
        generator: crate::poly::PolyMap::new(vec![Poly::zero(2 * n); 2 * n]),
        lambda: 0.0,
    }
}

/// Seeded ball points for map checks, skipping the origin.
pub fn map_samples(n: usize, count: usize, radius: f64, seed: u64) -> Vec<Vec<C64>> {
    ball_samples(2 * n, count + 1, radius, seed)
        .into_iter()
        .skip(1)
        .map(|x| linalg::complex_form(&x))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hermitian_basis_sizes() {
        assert_eq!(hermitian_basis(2, 0).len(), 1);
        assert_eq!(hermitian_basis(2, 1).len(), 4);
        assert_eq!(hermitian_basis(2, 3).len(), 16);
        assert_eq!(hermitian_basis(3, 1).len(), 9);
    }

    #[test]
    fn basis_is_circle_invariant() {
        let u = vec![C64::new(0.3, 0.4), C64::new(-0.2, 0.5)];
        let rot: Vec<C64> = u.iter().map(|c| c * C64::from_polar(1.0, 0.7)).collect();
        for b in hermitian_basis(2, 2) {
            let a = b.eval_real(&linalg::real_form(&u));
            let c = b.eval_real(&linalg::real_form(&rot));
            assert!((a - c).abs() < 1e-14);
        }
    }

    #[test]
    fn round_sphere_has_unit_levi_eigenvalues() {
        let dirs = orbit_directions(2, 6);
        let data: Vec<(Vec<C64>, f64)> = dirs.iter().map(|u| (u.clone(), 1.0)).collect();
        let fit = RadialFit::fit(2, &data, 4).unwrap();
        assert!(fit.residual < 1e-12);
        let j0 = StructureField::standard(2);
        for u in &dirs[..5] {
            let p = linalg::real_form(u);
            let e = levi_eigenvalues(&j0, &fit, &p).unwrap();
            assert_eq!(e.len(), 2);
            for v in e {
                assert!((v - 1.0).abs() < 1e-6, "{v}");
            }
        }
    }

    #[test]
    fn ellipsoid_levi_eigenvalue_matches_closed_form() {
        // s = 1 + a (|u_2|^2 - |u_1|^2) is a Hermitian form of degree 1
        let a = 0.05;
        let dirs = orbit_directions(2, 8);
        let data: Vec<(Vec<C64>, f64)> = dirs
            .iter()
            .map(|u| (u.clone(), 1.0 + a * (u[1].norm_sqr() - u[0].norm_sqr())))
            .collect();
        let fit = RadialFit::fit(2, &data, 4).unwrap();
        assert_eq!(fit.degree, 1);
        assert!(fit.residual < 1e-12);
        let j0 = StructureField::standard(2);
        let p = linalg::real_form(&[C64::new(1.0 - a, 0.0), C64::new(0.0, 0.0)]);
        let e = levi_eigenvalues(&j0, &fit, &p).unwrap();
        assert!(e[0] > 0.8 && e[0] < 1.2, "{e:?}");
    }

    #[test]
    fn standard_map_is_identity() {
        let data = RiemannMapData::new(StructureField::standard(2), SolverConfig::default());
        for z in map_samples(2, 10, 0.9, 3) {
            let p = riemann_map_eval(&data, &z).unwrap();
            assert!(diff_norm(&p.psi, &z) < 1e-15);
        }
        assert!(riemann_map_eval(&data, &[C64::new(0.0, 0.0); 2]).is_err());
    }

    #[test]
    fn orbit_grid_has_no_duplicates() {
        let d = orbit_directions(2, 4);
        assert_eq!(d.len(), 18);
        for i in 0..d.len() {
            assert!((cvec_norm(&d[i]) - 1.0).abs() < 1e-15);
            for j in 0..i {
                assert!(diff_norm(&d[i], &d[j]) > 1e-3);
            }
        }
    }
}
