//! Stationary discs of the sphere conormal system for deformed structures.
//!
//! A disc is stored as the pair `(f, w)` of interior functions: `f` is the
//! base disc and `w` the fiber coordinate, with meromorphic lift
//! `(f, zeta^{-1} w)`. Both are determined by their analytic parts through
//! the interior equations, so the Newton unknowns are the analytic
//! coefficients only. Solves run in a unitary frame where the direction
//! (or target point) lies on the first axis.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fibration::{matrix_b, matrix_k, FibrationSystem, LoopMatrix, SphereConormal};
use crate::linalg::{self, CMat, CVec, I, ONE, ZERO};
use crate::loop_algebra::{cauchy_solve, DiscFunction};
use crate::riemann_hilbert::RhFactorization;
use crate::structures::{beltrami_coefficient, prolongation_coefficients, ProlongationTensor, StructureField};

/// Truncation of the interior expansions and the sampling grids.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Truncation {
    /// degree in `zeta`
    pub modes: usize,
    /// degree in `conj(zeta)`
    pub modes_bar: usize,
    /// side of the torus grid used for products
    pub torus: usize,
    /// circle points for the boundary condition
    pub boundary: usize,
}

impl Default for Truncation {
    fn default() -> Self {
        Self::with_modes(32)
    }
}

impl Truncation {
    pub fn with_modes(modes: usize) -> Self {
        Self {
            modes,
            modes_bar: modes,
            // products alias only through modes above `torus - modes`,
            // which are far below round-off for smooth data
            torus: (3 * modes).div_ceil(2).max(modes + 2),
            boundary: 8 * modes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let top = self.modes.max(self.modes_bar);
        if self.modes < 2 || self.modes_bar < 1 {
            return Err(Error::Invalid("truncation needs modes >= 2".into()));
        }
        if self.torus < top + 2 {
            return Err(Error::GridTooCoarse {
                points: self.torus,
                modes: top,
            });
        }
        if self.boundary < 2 * top + 2 {
            return Err(Error::GridTooCoarse {
                points: self.boundary,
                modes: top,
            });
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub truncation: Truncation,
    /// initial continuation step in the parameter
    pub step: f64,
    pub min_step: f64,
    /// steps may double up to this size after easy solves
    pub max_step: f64,
    pub boundary_tol: f64,
    pub update_tol: f64,
    /// successive-difference tolerance of the interior fixed points
    pub extension_tol: f64,
    pub max_newton: usize,
    pub max_extension: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            truncation: Truncation::default(),
            step: 0.005,
            min_step: 1e-4,
            max_step: 0.04,
            boundary_tol: 1e-10,
            update_tol: 1e-11,
            extension_tol: 1e-12,
            max_newton: 40,
            max_extension: 200,
        }
    }
}

impl SolverConfig {
    pub fn with_truncation(truncation: Truncation) -> Self {
        Self {
            truncation,
            ..Self::default()
        }
    }
}

/// Outcome of an interior fixed-point iteration.
#[derive(Clone, Debug)]
pub struct Extension {
    pub function: DiscFunction,
    pub iterations: usize,
    /// geometric mean of successive increment ratios above the noise floor
    pub contraction: f64,
    /// last successive difference
    pub increment: f64,
}

fn tor_pair(f: &DiscFunction, p: usize) -> Result<(Vec<Vec<Complex64>>, Vec<Vec<Complex64>>)> {
    Ok((f.to_torus(p)?, f.star().to_torus(p)?))
}

/// `conj(zeta)`-derivative of the interior solution for the base equation,
/// `-Q(f) d f` in complex form.
fn beltrami_rhs(f: &DiscFunction, structure: &StructureField, trunc: &Truncation) -> Result<DiscFunction> {
    let p = trunc.torus;
    let n = f.n_components();
    let (fv, fsv) = tor_pair(f, p)?;
    let (dv, dsv) = tor_pair(&f.d_zeta(), p)?;
    let mut out = vec![vec![ZERO; p * p]; n];
    let mut x = vec![ZERO; 2 * n];
    let mut dx = CVec::zeros(2 * n);
    let mut a = vec![ZERO; n];
    let mut b = vec![ZERO; n];
    for idx in 0..p * p {
        for c in 0..n {
            a[c] = fv[c][idx];
            b[c] = fsv[c][idx];
        }
        linalg::real_form_pair(&a, &b, &mut x);
        for c in 0..n {
            a[c] = dv[c][idx];
            b[c] = dsv[c][idx];
        }
        linalg::real_form_pair(&a, &b, dx.as_mut_slice());
        let q = beltrami_coefficient(&structure.eval(&x))?;
        let z = q * &dx;
        for c in 0..n {
            out[c][idx] = -(z[2 * c] + I * z[2 * c + 1]);
        }
    }
    DiscFunction::from_torus(&out, p, trunc.modes, trunc.modes_bar - 1)
}

struct Stopping {
    iterations: usize,
    contraction: f64,
    increment: f64,
}

/// Runs `u <- h + T(rhs(u))` from `start` until the successive difference
/// drops below `tol`.
fn fixed_point<F>(h: &DiscFunction, start: &DiscFunction, trunc: &Truncation, tol: f64, max_iter: usize, rhs: F) -> Result<(DiscFunction, Stopping)>
where
    F: Fn(&DiscFunction) -> Result<DiscFunction>,
{
    let mut u = analytic_with_tail(h, start, trunc);
    let mut prev_inc = f64::NAN;
    let mut log_ratio = 0.0;
    let mut ratios = 0usize;
    let mut rising = 0usize;
    for it in 1..=max_iter {
        let next = h.add(&cauchy_solve(&rhs(&u)?, trunc.modes_bar)?)?;
        let inc = next.sub(&u)?.max_abs();
        u = next;
        if inc <= tol {
            let contraction = if ratios > 0 { (log_ratio / ratios as f64).exp() } else { 0.0 };
            return Ok((
                u,
                Stopping {
                    iterations: it,
                    contraction,
                    increment: inc,
                },
            ));
        }
        if prev_inc.is_finite() && inc > 100.0 * tol {
            let r = inc / prev_inc;
            log_ratio += r.ln();
            ratios += 1;
            if r >= 1.0 {
                rising += 1;
                if rising >= 3 {
                    return Err(Error::NotContracting { ratio: r });
                }
            } else {
                rising = 0;
            }
        }
        if !inc.is_finite() {
            return Err(Error::NotContracting { ratio: f64::INFINITY });
        }
        prev_inc = inc;
    }
    Err(Error::NoConvergence {
        stage: "interior fixed point",
        iterations: max_iter,
        residual: prev_inc,
    })
}

/// Analytic part from `h`, higher `conj(zeta)` part from `start`.
fn analytic_with_tail(h: &DiscFunction, start: &DiscFunction, trunc: &Truncation) -> DiscFunction {
    let mut u = start.resized(trunc.modes, trunc.modes_bar);
    for c in 0..u.n_components() {
        for a in 0..=trunc.modes {
            u.set(c, a, 0, h.get(c, a, 0));
        }
    }
    u
}

/// Solution of `dbar f + Q(f) d f = 0` with analytic part `h`.
pub fn beltrami_extend(h: &DiscFunction, structure: &StructureField, trunc: &Truncation, tol: f64, max_iter: usize) -> Result<Extension> {
    beltrami_extend_from(h, h, structure, trunc, tol, max_iter)
}

/// As [`beltrami_extend`], iterating from `start`.
pub fn beltrami_extend_from(
    h: &DiscFunction,
    start: &DiscFunction,
    structure: &StructureField,
    trunc: &Truncation,
    tol: f64,
    max_iter: usize,
) -> Result<Extension> {
    trunc.validate()?;
    let h = h.analytic_part().resized(trunc.modes, trunc.modes_bar);
    if structure.is_standard() {
        return Ok(Extension {
            function: h,
            iterations: 1,
            contraction: 0.0,
            increment: 0.0,
        });
    }
    let (f, st) = fixed_point(&h, start, trunc, tol, max_iter, |u| beltrami_rhs(u, structure, trunc))?;
    Ok(Extension {
        function: f,
        iterations: st.iterations,
        contraction: st.contraction,
        increment: st.increment,
    })
}

/// Torus samples of the fiber-equation coefficients along a base disc.
struct FiberCoefficients {
    q2: Vec<CMat>,
    q3: Vec<CMat>,
}

fn fiber_coefficients(f: &DiscFunction, structure: &StructureField, trunc: &Truncation) -> Result<FiberCoefficients> {
    let p = trunc.torus;
    let n = f.n_components();
    let (fv, fsv) = tor_pair(f, p)?;
    let ds = f.d_zeta().add(&f.d_zetabar())?;
    let (sv, ssv) = tor_pair(&ds, p)?;
    let mut q2 = Vec::with_capacity(p * p);
    let mut q3 = Vec::with_capacity(p * p);
    let mut x = vec![ZERO; 2 * n];
    let mut xs = vec![ZERO; 2 * n];
    let mut a = vec![ZERO; n];
    let mut b = vec![ZERO; n];
    for idx in 0..p * p {
        for c in 0..n {
            a[c] = fv[c][idx];
            b[c] = fsv[c][idx];
        }
        linalg::real_form_pair(&a, &b, &mut x);
        for c in 0..n {
            a[c] = sv[c][idx];
            b[c] = ssv[c][idx];
        }
        linalg::real_form_pair(&a, &b, &mut xs);
        let (j, dj) = structure.eval_with_derivatives(&x);
        let (c2, c3) = prolongation_coefficients(&j, &dj, &xs)?;
        q2.push(c2);
        q3.push(c3);
    }
    Ok(FiberCoefficients { q2, q3 })
}

fn fiber_rhs(w: &DiscFunction, coeffs: &FiberCoefficients, trunc: &Truncation) -> Result<DiscFunction> {
    let p = trunc.torus;
    let n = w.n_components();
    let (wv, wsv) = tor_pair(w, p)?;
    let (dv, dsv) = tor_pair(&w.d_zeta(), p)?;
    let mut out = vec![vec![ZERO; p * p]; n];
    let mut x = CVec::zeros(2 * n);
    let mut dx = CVec::zeros(2 * n);
    let mut a = vec![ZERO; n];
    let mut b = vec![ZERO; n];
    for idx in 0..p * p {
        for c in 0..n {
            a[c] = wv[c][idx];
            b[c] = wsv[c][idx];
        }
        linalg::real_form_pair(&a, &b, x.as_mut_slice());
        for c in 0..n {
            a[c] = dv[c][idx];
            b[c] = dsv[c][idx];
        }
        linalg::real_form_pair(&a, &b, dx.as_mut_slice());
        let z = &coeffs.q2[idx] * &dx + &coeffs.q3[idx] * &x;
        for c in 0..n {
            out[c][idx] = -(z[2 * c] + I * z[2 * c + 1]);
        }
    }
    DiscFunction::from_torus(&out, p, trunc.modes, trunc.modes_bar - 1)
}

/// Solution of the fiber equation `dbar w + Q2 d w + Q3 w = 0` along the
/// base disc `f`, with analytic part `h`.
pub fn fiber_extend(
    h: &DiscFunction,
    f: &DiscFunction,
    start: Option<&DiscFunction>,
    structure: &StructureField,
    trunc: &Truncation,
    tol: f64,
    max_iter: usize,
) -> Result<Extension> {
    trunc.validate()?;
    let h = h.analytic_part().resized(trunc.modes, trunc.modes_bar);
    if structure.is_standard() {
        return Ok(Extension {
            function: h,
            iterations: 1,
            contraction: 0.0,
            increment: 0.0,
        });
    }
    let coeffs = fiber_coefficients(f, structure, trunc)?;
    let start = start.unwrap_or(&h);
    let (w, st) = fixed_point(&h, start, trunc, tol, max_iter, |u| fiber_rhs(u, &coeffs, trunc))?;
    Ok(Extension {
        function: w,
        iterations: st.iterations,
        contraction: st.contraction,
        increment: st.increment,
    })
}

/// Sup norms of the equations satisfied by a solution.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    /// defining functions of the fibration on the boundary grid
    pub boundary: f64,
    /// `dbar f + Q d f` and the fiber equation, on the polar grid
    pub interior: f64,
    /// `f_t - J(f) f_s` in real form, on the polar grid
    pub structure: f64,
    /// the same for the lift `(f, p)` and the lifted tensor
    pub lifted: f64,
}

impl Residuals {
    /// Componentwise maximum.
    pub fn worst(self, other: Self) -> Self {
        Self {
            boundary: self.boundary.max(other.boundary),
            interior: self.interior.max(other.interior),
            structure: self.structure.max(other.structure),
            lifted: self.lifted.max(other.lifted),
        }
    }
}

/// How a solution was pinned inside its solution family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    /// unit direction of `df(0)`, or of the target point
    pub direction: Vec<Complex64>,
    /// `Re <g(0), fiber_reference> = |fiber_reference|^2`
    pub fiber_reference: Vec<Complex64>,
    /// target point and parameter for discs through a point
    pub through: Option<(Vec<Complex64>, f64)>,
}

#[derive(Clone, Debug)]
pub struct StationaryDiscSolution {
    pub f: DiscFunction,
    /// fiber coordinate `w = C p` of the lift
    pub g: DiscFunction,
    /// `df(0)(d/dx)` in real form
    pub v: Vec<f64>,
    pub lambda: f64,
    pub residuals: Residuals,
    pub normalization: Normalization,
    /// Newton iterations summed over continuation steps
    pub iterations: usize,
}

impl StationaryDiscSolution {
    pub fn n(&self) -> usize {
        self.f.n_components()
    }

    /// `v` as a complex vector.
    pub fn tangent(&self) -> Vec<Complex64> {
        linalg::complex_form(&self.v)
    }

    /// The exact disc `zeta -> zeta u` with fiber `u^T`-image of `e1` for the
    /// standard structure, in a truncation.
    pub fn linear(direction: &[Complex64], trunc: &Truncation) -> Result<Self> {
        let n = direction.len();
        let u = unit(direction)?;
        let frame = linalg::unitary_to_e1(&u);
        let (f, w) = central_pair(n, trunc);
        let (f, g) = from_frame(&f, &w, &frame)?;
        let reference = fiber_reference(&frame);
        Ok(Self {
            v: linalg::real_form(&u),
            f,
            g,
            lambda: 0.0,
            residuals: Residuals::default(),
            normalization: Normalization {
                direction: u,
                fiber_reference: reference,
                through: None,
            },
            iterations: 0,
        })
    }
}

fn unit(v: &[Complex64]) -> Result<Vec<Complex64>> {
    let norm = linalg::cvec_norm(v);
    if !(norm > 1e-12) || !norm.is_finite() {
        return Err(Error::Invalid("direction must be a nonzero vector".into()));
    }
    Ok(v.iter().map(|c| c / norm).collect())
}

fn central_pair(n: usize, trunc: &Truncation) -> (DiscFunction, DiscFunction) {
    let mut e1 = vec![ZERO; n];
    e1[0] = ONE;
    (
        DiscFunction::linear(&e1, trunc.modes, trunc.modes_bar),
        DiscFunction::constant(&e1, trunc.modes, trunc.modes_bar),
    )
}

/// `g_seed(0) = U^T e1` in the original frame.
fn fiber_reference(frame: &CMat) -> Vec<Complex64> {
    (0..frame.nrows()).map(|r| frame[(0, r)]).collect()
}

fn row_major(m: &CMat) -> Vec<Complex64> {
    let mut out = Vec::with_capacity(m.nrows() * m.ncols());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.push(m[(r, c)]);
        }
    }
    out
}

/// `(U f, conj(U) w)`.
fn to_frame(f: &DiscFunction, w: &DiscFunction, frame: &CMat) -> Result<(DiscFunction, DiscFunction)> {
    let n = frame.nrows();
    Ok((
        f.map_components(&row_major(frame), n)?,
        w.map_components(&row_major(&frame.map(|z| z.conj())), n)?,
    ))
}

/// `(U^H f, U^T w)`.
fn from_frame(f: &DiscFunction, w: &DiscFunction, frame: &CMat) -> Result<(DiscFunction, DiscFunction)> {
    let n = frame.nrows();
    Ok((
        f.map_components(&row_major(&frame.adjoint()), n)?,
        w.map_components(&row_major(&frame.transpose()), n)?,
    ))
}

/// What pins the solution inside the solution family.
#[derive(Clone, Debug, PartialEq)]
pub enum Constraints {
    /// `f(0) = 0`, `df(0)` a positive multiple of the direction
    Canonical { direction: Vec<Complex64> },
    /// `f(0) = 0`, `f(r) = point` for some `r` in `(0, 1)`
    ThroughPoint { point: Vec<Complex64> },
}

impl Constraints {
    fn direction(&self) -> Result<Vec<Complex64>> {
        match self {
            Constraints::Canonical { direction } => unit(direction),
            Constraints::ThroughPoint { point } => {
                let r = linalg::cvec_norm(point);
                if !(r > 1e-8) {
                    return Err(Error::Invalid("the canonical foliation is singular at the origin".into()));
                }
                if r >= 1.0 {
                    return Err(Error::Invalid("point must lie in the open unit ball".into()));
                }
                unit(point)
            }
        }
    }
}

/// Newton state in the working frame.
#[derive(Clone, Debug)]
struct Iterate {
    f: DiscFunction,
    w: DiscFunction,
    radius: f64,
}

/// Boundary values `(f, w)` on the circle grid, `[component][p]`.
fn boundary_values(f: &DiscFunction, w: &DiscFunction, points: usize) -> Result<Vec<Vec<Complex64>>> {
    let mut out = f.boundary_grid(points)?;
    out.extend(w.boundary_grid(points)?);
    Ok(out)
}

fn boundary_residual<F: FibrationSystem + ?Sized>(fib: &F, values: &[Vec<Complex64>]) -> (Vec<Vec<f64>>, f64) {
    let m = fib.dim();
    let points = values[0].len();
    let mut out = vec![vec![0.0; points]; m];
    let mut sup: f64 = 0.0;
    let mut w = vec![ZERO; values.len()];
    for p in 0..points {
        let zeta = Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * p as f64 / points as f64);
        for (c, row) in values.iter().enumerate() {
            w[c] = row[p];
        }
        for (j, v) in fib.eval(zeta, &w).into_iter().enumerate() {
            out[j][p] = v;
            sup = sup.max(v.abs());
        }
    }
    (out, sup)
}

/// Factorised linearisation `h -> 2 Re[conj(K) h]` along a disc.
fn linearisation<F: FibrationSystem + ?Sized>(fib: &F, it: &Iterate, trunc: &Truncation) -> Result<(RhFactorization, LoopMatrix)> {
    let values = boundary_values(&it.f, &it.w, trunc.boundary)?;
    let k = matrix_k(fib, &values)?;
    let g = k.map(|m| m.map(|z| z.conj()));
    Ok((RhFactorization::new(&g, trunc.modes)?, k))
}

/// Shared factorisation at the central disc of the standard sphere.
fn central_factorization(n: usize, trunc: &Truncation) -> Result<Arc<RhFactorization>> {
    static CACHE: OnceLock<Mutex<HashMap<(usize, Truncation), Arc<RhFactorization>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(f) = cache.lock().expect("factorisation cache").get(&(n, *trunc)) {
        return Ok(f.clone());
    }
    let fib = SphereConormal::new(n)?;
    let (f, w) = central_pair(n, trunc);
    let (fact, _) = linearisation(
        &fib,
        &Iterate {
            f,
            w,
            radius: 0.0,
        },
        trunc,
    )?;
    let fact = Arc::new(fact);
    cache.lock().expect("factorisation cache").insert((n, *trunc), fact.clone());
    Ok(fact)
}

/// Kernel dimension and singular-value gap of the linearised boundary
/// operator at the central disc of the standard sphere.
pub fn central_kernel(n: usize, trunc: &Truncation) -> Result<(usize, f64)> {
    trunc.validate()?;
    let fact = central_factorization(n, trunc)?;
    Ok((fact.kernel_dim(), fact.gap()))
}

/// Index of `(component, degree, re/im)` in the Newton unknown vector.
#[inline]
fn unknown(trunc: &Truncation, k: usize, a: usize, part: usize) -> usize {
    2 * (k * (trunc.modes + 1) + a) + part
}

/// Linear constraint rows on `(analytic unknowns, radius)` and their
/// current mismatch `target - value`.
fn constraint_system(it: &Iterate, kind: &ConstraintKind, trunc: &Truncation) -> Result<(DMatrix<f64>, Vec<f64>, DVector<f64>)> {
    let n = it.f.n_components();
    let cols = 2 * 2 * n * (trunc.modes + 1);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut radius_col: Vec<f64> = Vec::new();
    let mut mismatch: Vec<f64> = Vec::new();
    let mut pick = |idx: usize, value: f64, target: f64, rows: &mut Vec<Vec<f64>>, rc: &mut Vec<f64>| {
        let mut r = vec![0.0; cols];
        r[idx] = 1.0;
        rows.push(r);
        rc.push(0.0);
        mismatch.push(target - value);
    };
    for c in 0..n {
        let v = it.f.get(c, 0, 0);
        pick(unknown(trunc, c, 0, 0), v.re, 0.0, &mut rows, &mut radius_col);
        pick(unknown(trunc, c, 0, 1), v.im, 0.0, &mut rows, &mut radius_col);
    }
    let w0 = it.w.get(0, 0, 0);
    pick(unknown(trunc, n, 0, 0), w0.re, 1.0, &mut rows, &mut radius_col);
    match kind {
        ConstraintKind::Canonical => {
            pick(unknown(trunc, 0, 1, 1), it.f.get(0, 1, 0).im, 0.0, &mut rows, &mut radius_col);
            for c in 1..n {
                let v = it.f.get(c, 1, 0);
                pick(unknown(trunc, c, 1, 0), v.re, 0.0, &mut rows, &mut radius_col);
                pick(unknown(trunc, c, 1, 1), v.im, 0.0, &mut rows, &mut radius_col);
            }
        }
        ConstraintKind::ThroughPoint { target } => {
            let r = it.radius;
            let zr = Complex64::new(r, 0.0);
            let value = it.f.eval(zr);
            let ds = it.f.d_zeta().add(&it.f.d_zetabar())?.eval(zr);
            let powers: Vec<f64> = (0..=trunc.modes).scan(1.0, |acc, _| {
                let v = *acc;
                *acc *= r;
                Some(v)
            })
            .collect();
            for c in 0..n {
                for part in 0..2 {
                    let mut row = vec![0.0; cols];
                    for (a, pw) in powers.iter().enumerate() {
                        row[unknown(trunc, c, a, part)] = *pw;
                    }
                    rows.push(row);
                    let (val, tgt, d) = if part == 0 {
                        (value[c].re, target[c].re, ds[c].re)
                    } else {
                        (value[c].im, target[c].im, ds[c].im)
                    };
                    radius_col.push(d);
                    mismatch.push(tgt - val);
                }
            }
        }
    }
    let mut mat = DMatrix::zeros(rows.len(), cols);
    for (i, r) in rows.iter().enumerate() {
        for (j, v) in r.iter().enumerate() {
            mat[(i, j)] = *v;
        }
    }
    Ok((mat, radius_col, DVector::from_vec(mismatch)))
}

#[derive(Clone, Debug)]
enum ConstraintKind {
    Canonical,
    ThroughPoint { target: Vec<Complex64> },
}

impl ConstraintKind {
    fn has_radius(&self) -> bool {
        matches!(self, ConstraintKind::ThroughPoint { .. })
    }
}

/// Update `delta = particular + kernel c` (and the radius change) meeting
/// the linearised constraints.
fn constrained_update(
    fact: &RhFactorization,
    rhs: &[Vec<f64>],
    it: &Iterate,
    kind: &ConstraintKind,
    trunc: &Truncation,
) -> Result<(DVector<f64>, f64)> {
    let particular = fact.solve_scaled(&fact.stack_rhs(rhs));
    let kernel = fact.kernel_matrix();
    let (rows, radius_col, mismatch) = constraint_system(it, kind, trunc)?;
    let extra = usize::from(kind.has_radius());
    let unknowns = kernel.ncols() + extra;
    if rows.nrows() != unknowns {
        return Err(Error::InconsistentIndices(format!(
            "kernel of dimension {} does not match {} normalisation conditions",
            kernel.ncols(),
            rows.nrows() - extra
        )));
    }
    let mut system = DMatrix::zeros(rows.nrows(), unknowns);
    system.columns_mut(0, kernel.ncols()).copy_from(&(&rows * kernel));
    if extra == 1 {
        for (i, v) in radius_col.iter().enumerate() {
            system[(i, unknowns - 1)] = *v;
        }
    }
    let target = mismatch - &rows * &particular;
    let svd = system.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-9 * smax.max(1e-300)) {
        return Err(Error::NotTransverse { sigma: smin / smax.max(1e-300) });
    }
    let coef = svd.solve(&target, 0.0).map_err(|_| Error::Singular("normalisation system"))?;
    let delta = particular + kernel * coef.rows(0, kernel.ncols());
    let dr = if extra == 1 { coef[unknowns - 1] } else { 0.0 };
    Ok((delta, dr))
}

fn apply_update(it: &mut Iterate, delta: &DVector<f64>, dr: f64, trunc: &Truncation) {
    let n = it.f.n_components();
    for k in 0..2 * n {
        for a in 0..=trunc.modes {
            let d = Complex64::new(delta[unknown(trunc, k, a, 0)], delta[unknown(trunc, k, a, 1)]);
            if k < n {
                let v = it.f.get(k, a, 0) + d;
                it.f.set(k, a, 0, v);
            } else {
                let v = it.w.get(k - n, a, 0) + d;
                it.w.set(k - n, a, 0, v);
            }
        }
    }
    it.radius += dr;
}

/// Recomputes the non-analytic parts of `(f, w)` for `structure`.
fn extend(it: &mut Iterate, structure: &StructureField, config: &SolverConfig, tol: f64) -> Result<()> {
    let trunc = &config.truncation;
    let tol = tol.max(config.extension_tol);
    let f = beltrami_extend_from(&it.f, &it.f, structure, trunc, tol, config.max_extension)?.function;
    let w = fiber_extend(&it.w, &f, Some(&it.w), structure, trunc, tol, config.max_extension)?.function;
    it.f = f;
    it.w = w;
    Ok(())
}

/// Chord Newton iteration at a fixed parameter value.
fn newton<F: FibrationSystem + ?Sized>(
    fib: &F,
    structure: &StructureField,
    start: &Iterate,
    fact: &RhFactorization,
    kind: &ConstraintKind,
    config: &SolverConfig,
) -> Result<(Iterate, usize)> {
    let trunc = &config.truncation;
    let mut it = start.clone();
    extend(&mut it, structure, config, 1e-8)?;
    let mut last_update = f64::INFINITY;
    let mut first = f64::NAN;
    let mut prev = f64::INFINITY;
    let mut stalls = 0usize;
    for k in 0..config.max_newton {
        let values = boundary_values(&it.f, &it.w, trunc.boundary)?;
        let (res, sup) = boundary_residual(fib, &values);
        let (_, _, mismatch) = constraint_system(&it, kind, trunc)?;
        let mis = mismatch.amax();
        let size = sup.max(mis);
        if !size.is_finite() {
            break;
        }
        if first.is_nan() {
            first = size;
        }
        if sup <= config.boundary_tol && mis <= config.boundary_tol && last_update <= config.update_tol {
            return Ok((it, k));
        }
        if size > 1e3 * first.max(1e-8) {
            break;
        }
        if size > 0.9 * prev && size > 10.0 * config.boundary_tol {
            stalls += 1;
            if stalls >= 3 {
                break;
            }
        } else {
            stalls = 0;
        }
        prev = size;
        let rhs: Vec<Vec<f64>> = res.iter().map(|r| r.iter().map(|v| -v).collect()).collect();
        let (delta, dr) = constrained_update(fact, &rhs, &it, kind, trunc)?;
        apply_update(&mut it, &delta, dr, trunc);
        if kind.has_radius() && !(it.radius > 0.0 && it.radius < 1.0) {
            return Err(Error::Invalid(format!("disc parameter r = {} left (0, 1)", it.radius)));
        }
        last_update = delta.amax().max(dr.abs());
        // the interior only needs to be as accurate as the next update
        extend(&mut it, structure, config, (1e-3 * last_update).min(1e-6))?;
    }
    let values = boundary_values(&it.f, &it.w, trunc.boundary)?;
    let (_, sup) = boundary_residual(fib, &values);
    Err(Error::NoConvergence {
        stage: "boundary Newton",
        iterations: config.max_newton,
        residual: sup,
    })
}

/// Checks that the linearisation keeps the seed's kernel dimension and
/// Maslov index; with all partial indices `>= -1` the kernel has dimension
/// `N + maslov`, so a change in either signals an index jump.
fn reprobe(fact: &RhFactorization, k: &LoopMatrix, expected_kernel: usize, expected_maslov: i64) -> Result<()> {
    let maslov = matrix_b(k)?.det_winding()?;
    if maslov != expected_maslov || fact.kernel_dim() != expected_kernel {
        return Err(Error::InconsistentIndices(format!(
            "index change along the path: Maslov {maslov} (expected {expected_maslov}), kernel {} (expected {expected_kernel})",
            fact.kernel_dim()
        )));
    }
    Ok(())
}

/// Solves the boundary problem at `lambda` by continuation from `seed`
/// (the exact disc of the standard structure when `None`).
pub fn solve_bp<F, B>(
    fibration: B,
    tensor: &ProlongationTensor,
    lambda: f64,
    seed: Option<&StationaryDiscSolution>,
    constraints: &Constraints,
    config: &SolverConfig,
) -> Result<StationaryDiscSolution>
where
    F: FibrationSystem,
    B: Fn(&StructureField) -> Result<F>,
{
    let trunc = config.truncation;
    trunc.validate()?;
    if !(lambda >= 0.0) {
        return Err(Error::Invalid("lambda must be nonnegative".into()));
    }
    let family = &tensor.structure;
    let n = family.n();
    let target_structure = family.with_lambda(lambda);
    let defect = target_structure.origin_defect();
    if defect > 1e-12 {
        return Err(Error::NotNormalised { defect });
    }
    let direction = constraints.direction()?;
    if direction.len() != n {
        return Err(Error::Dimension("direction and structure dimensions differ".into()));
    }
    let frame = linalg::unitary_to_e1(&direction);
    let rotated = family.rotated(&frame)?;
    let kind = match constraints {
        Constraints::Canonical { .. } => ConstraintKind::Canonical,
        Constraints::ThroughPoint { point } => {
            let mut t = vec![ZERO; n];
            t[0] = Complex64::new(linalg::cvec_norm(point), 0.0);
            ConstraintKind::ThroughPoint { target: t }
        }
    };

    let (mut it, mut lam, mut fact) = match seed {
        None => {
            let (f, w) = central_pair(n, &trunc);
            let radius = match &kind {
                ConstraintKind::ThroughPoint { target } => target[0].re,
                ConstraintKind::Canonical => 0.0,
            };
            let fact = central_factorization(n, &trunc)?;
            (Iterate { f, w, radius }, 0.0, fact)
        }
        Some(s) => {
            let (f, w) = to_frame(&s.f.resized(trunc.modes, trunc.modes_bar), &s.g.resized(trunc.modes, trunc.modes_bar), &frame)?;
            let radius = match (&kind, &s.normalization.through) {
                (ConstraintKind::ThroughPoint { .. }, Some((_, r))) => *r,
                (ConstraintKind::ThroughPoint { target }, None) => target[0].re,
                _ => 0.0,
            };
            // scale the fiber onto this frame's normalisation
            let w0 = w.get(0, 0, 0).re;
            let w = if w0.abs() > 1e-8 { w.scale(Complex64::new(1.0 / w0, 0.0)) } else { w };
            let it = Iterate { f, w, radius };
            let s_structure = rotated.with_lambda(s.lambda);
            let fib = fibration(&s_structure)?;
            let (fact, _) = linearisation(&fib, &it, &trunc)?;
            (it, s.lambda, Arc::new(fact))
        }
    };
    let expected_kernel = fact.kernel_dim();
    let expected_maslov = 2 * n as i64;
    let mut step = config.step.max(config.min_step);
    let mut iterations = 0usize;
    let mut solved = false;
    while !(solved && lam == lambda) {
        let next = if lam == lambda {
            lambda
        } else if lam < lambda {
            (lam + step).min(lambda)
        } else {
            (lam - step).max(lambda)
        };
        let structure = rotated.with_lambda(next);
        let fib = fibration(&structure)?;
        match newton(&fib, &structure, &it, &fact, &kind, config) {
            Ok((sol, k)) => {
                iterations += k;
                let (f2, kmat) = linearisation(&fib, &sol, &trunc)?;
                reprobe(&f2, &kmat, expected_kernel, expected_maslov)?;
                fact = Arc::new(f2);
                it = sol;
                lam = next;
                solved = true;
                if k <= 6 {
                    step = (2.0 * step).min(config.max_step.max(config.step));
                }
            }
            Err(e @ (Error::NotTransverse { .. } | Error::InconsistentIndices(_) | Error::NotNormalised { .. })) => return Err(e),
            Err(e) => {
                if next == lam {
                    return Err(e);
                }
                step *= 0.5;
                if step < config.min_step {
                    return Err(Error::ContinuationStalled { lambda: lam, step });
                }
            }
        }
    }

    let (f, g) = from_frame(&it.f, &it.w, &frame)?;
    let structure = family.with_lambda(lambda);
    let fib = fibration(&structure)?;
    let residuals = residuals(&fib, &structure, &f, &g, trunc.boundary)?;
    let v = tangent_at_origin(&f);
    let through = match constraints {
        Constraints::ThroughPoint { point } => Some((point.clone(), it.radius)),
        Constraints::Canonical { .. } => None,
    };
    Ok(StationaryDiscSolution {
        f,
        g,
        v,
        lambda,
        residuals,
        normalization: Normalization {
            direction,
            fiber_reference: fiber_reference(&frame),
            through,
        },
        iterations,
    })
}

/// `df(0)(d/dx) = d f/d zeta + d f/d conj(zeta)` at the origin, real form.
fn tangent_at_origin(f: &DiscFunction) -> Vec<f64> {
    let v: Vec<Complex64> = (0..f.n_components()).map(|c| f.get(c, 1, 0) + f.get(c, 0, 1)).collect();
    linalg::real_form(&v)
}

/// Canonical disc of the structure (at its own parameter) with `df(0)`
/// along `direction`, for the deformed sphere conormal system.
pub fn canonical_disc(structure: &StructureField, direction: &[Complex64], config: &SolverConfig) -> Result<StationaryDiscSolution> {
    let tensor = ProlongationTensor::new(structure.clone());
    solve_bp(
        |s: &StructureField| SphereConormal::deformed(s.clone()),
        &tensor,
        structure.lambda(),
        None,
        &Constraints::Canonical {
            direction: direction.to_vec(),
        },
        config,
    )
}

/// The canonical disc through `z`, with its tangent vector `v` (real form)
/// and parameter `r`, so that `f(r) = z`.
pub fn solve_disc_through_point(
    structure: &StructureField,
    z: &[Complex64],
    seed: Option<&StationaryDiscSolution>,
    config: &SolverConfig,
) -> Result<(StationaryDiscSolution, Vec<f64>, f64)> {
    let tensor = ProlongationTensor::new(structure.clone());
    let sol = solve_bp(
        |s: &StructureField| SphereConormal::deformed(s.clone()),
        &tensor,
        structure.lambda(),
        seed,
        &Constraints::ThroughPoint { point: z.to_vec() },
        config,
    )?;
    let r = sol.normalization.through.as_ref().map(|t| t.1).unwrap_or(0.0);
    let v = sol.v.clone();
    Ok((sol, v, r))
}

/// `(f(e^{i theta} zeta), e^{-i theta} g(e^{i theta} zeta))`, the fiber
/// product taken in the fiber structure along the disc.
pub fn circle_rotate(sol: &StationaryDiscSolution, structure: &StructureField, theta: f64, trunc: &Truncation) -> Result<StationaryDiscSolution> {
    let f = sol.f.rotate_argument(theta);
    let g0 = sol.g.rotate_argument(theta);
    let g = if structure.is_standard() {
        g0.scale(Complex64::from_polar(1.0, -theta))
    } else {
        twist_fiber(&f, &g0, -theta, structure, trunc)?
    };
    let fib = SphereConormal::deformed(structure.clone())?;
    let residuals = residuals(&fib, structure, &f, &g, trunc.boundary)?;
    let rot = Complex64::from_polar(1.0, theta);
    let direction: Vec<Complex64> = sol.normalization.direction.iter().map(|c| c * rot).collect();
    let reference: Vec<Complex64> = sol.normalization.fiber_reference.iter().map(|c| c / rot).collect();
    Ok(StationaryDiscSolution {
        v: tangent_at_origin(&f),
        f,
        g,
        lambda: sol.lambda,
        residuals,
        normalization: Normalization {
            direction,
            fiber_reference: reference,
            through: sol
                .normalization
                .through
                .as_ref()
                .map(|(z, r)| (z.clone(), *r)),
        },
        iterations: 0,
    })
}

/// Pointwise `e^{i phi} w` with `i` acting as `C J(f)^T C`.
fn twist_fiber(f: &DiscFunction, w: &DiscFunction, phi: f64, structure: &StructureField, trunc: &Truncation) -> Result<DiscFunction> {
    let p = trunc.torus;
    let n = f.n_components();
    let (fv, fsv) = tor_pair(f, p)?;
    let (wv, wsv) = tor_pair(w, p)?;
    let c = linalg::to_complex(&linalg::conj_matrix(n));
    let m = 2 * n;
    let mut out = vec![vec![ZERO; p * p]; n];
    let mut x = vec![ZERO; m];
    let mut wx = CVec::zeros(m);
    let mut a = vec![ZERO; n];
    let mut b = vec![ZERO; n];
    for idx in 0..p * p {
        for k in 0..n {
            a[k] = fv[k][idx];
            b[k] = fsv[k][idx];
        }
        linalg::real_form_pair(&a, &b, &mut x);
        for k in 0..n {
            a[k] = wv[k][idx];
            b[k] = wsv[k][idx];
        }
        linalg::real_form_pair(&a, &b, wx.as_mut_slice());
        let bt = &c * structure.eval(&x).transpose() * &c;
        let z = (CMat::identity(m, m) * Complex64::new(phi.cos(), 0.0) + bt * Complex64::new(phi.sin(), 0.0)) * &wx;
        for k in 0..n {
            out[k][idx] = z[2 * k] + I * z[2 * k + 1];
        }
    }
    DiscFunction::from_torus(&out, p, trunc.modes, trunc.modes_bar)
}

/// Polar sample grid `rho = (i + 1) / 32`, `phi = 2 pi j / 32`.
pub fn polar_grid(size: usize) -> Vec<Complex64> {
    let mut out = Vec::with_capacity(size * size);
    for i in 0..size {
        let rho = (i + 1) as f64 / size as f64;
        for j in 0..size {
            out.push(Complex64::from_polar(rho, 2.0 * std::f64::consts::PI * j as f64 / size as f64));
        }
    }
    out
}

/// Re-evaluates every residual of `(f, g)` from the coefficients.
pub fn residuals<F: FibrationSystem + ?Sized>(
    fib: &F,
    structure: &StructureField,
    f: &DiscFunction,
    g: &DiscFunction,
    boundary_points: usize,
) -> Result<Residuals> {
    let values = boundary_values(f, g, boundary_points)?;
    let (_, boundary) = boundary_residual(fib, &values);
    let n = f.n_components();
    let m = 2 * n;
    let tensor = ProlongationTensor::new(structure.clone());
    let (df, dbf) = (f.d_zeta(), f.d_zetabar());
    let (dg, dbg) = (g.d_zeta(), g.d_zetabar());
    let conj = linalg::conj_matrix(n);
    let mut interior: f64 = 0.0;
    let mut structure_res: f64 = 0.0;
    let mut lifted: f64 = 0.0;
    for zeta in polar_grid(32) {
        let x = linalg::real_form(&f.eval(zeta));
        let (a, b) = (df.eval(zeta), dbf.eval(zeta));
        let fs: Vec<Complex64> = a.iter().zip(&b).map(|(u, v)| u + v).collect();
        let ft: Vec<Complex64> = a.iter().zip(&b).map(|(u, v)| I * (u - v)).collect();
        let (ga, gb) = (dg.eval(zeta), dbg.eval(zeta));
        let gs: Vec<Complex64> = ga.iter().zip(&gb).map(|(u, v)| u + v).collect();
        let gt: Vec<Complex64> = ga.iter().zip(&gb).map(|(u, v)| I * (u - v)).collect();
        let xs = DVector::from_vec(linalg::real_form(&fs));
        let xt = DVector::from_vec(linalg::real_form(&ft));
        let j = structure.eval_real(&x);
        structure_res = structure_res.max((&xt - &j * &xs).amax());

        // Beltrami form of the base equation
        let q = beltrami_coefficient(&linalg::to_complex(&j))?;
        let qa = &q * CVec::from_vec(a.iter().flat_map(|c| [Complex64::new(c.re, 0.0), Complex64::new(c.im, 0.0)]).collect());
        for c in 0..n {
            interior = interior.max((b[c] + qa[2 * c] + I * qa[2 * c + 1]).norm());
        }

        let p = &conj * DVector::from_vec(linalg::real_form(&g.eval(zeta)));
        let ps = &conj * DVector::from_vec(linalg::real_form(&gs));
        let pt = &conj * DVector::from_vec(linalg::real_form(&gt));
        let t = tensor.eval(&x, p.as_slice());
        let mut s_all = DVector::zeros(2 * m);
        let mut t_all = DVector::zeros(2 * m);
        s_all.rows_mut(0, m).copy_from(&xs);
        s_all.rows_mut(m, m).copy_from(&ps);
        t_all.rows_mut(0, m).copy_from(&xt);
        t_all.rows_mut(m, m).copy_from(&pt);
        let lr = &t_all - &t * &s_all;
        lifted = lifted.max(lr.amax());
        // fiber equation in coframe coordinates, the lower half of the lift
        interior = interior.max(lr.rows(m, m).amax());
    }
    Ok(Residuals {
        boundary,
        interior,
        structure: structure_res,
        lifted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structures::{sample_polynomial, sample_pullback};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn small() -> Truncation {
        Truncation::with_modes(16)
    }

    #[test]
    fn standard_extension_is_identity() {
        let h = DiscFunction::linear(&[c(0.3, 0.1), c(0.0, 0.5)], 16, 16);
        let e = beltrami_extend(&h, &StructureField::standard(2), &small(), 1e-12, 10).unwrap();
        assert_eq!(e.iterations, 1);
        assert_eq!(e.function.sub(&h).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn extension_solves_structure_equation() {
        let s = sample_pullback(2, 0.02, 1.0).unwrap();
        let h = DiscFunction::linear(&[c(0.6, 0.0), c(0.0, 0.3)], 16, 16);
        let e = beltrami_extend(&h, &s, &small(), 1e-12, 100).unwrap();
        let f = e.function;
        let (df, dbf) = (f.d_zeta(), f.d_zetabar());
        let mut worst: f64 = 0.0;
        for zeta in polar_grid(12) {
            let x = linalg::real_form(&f.eval(zeta));
            let (a, b) = (df.eval(zeta), dbf.eval(zeta));
            let fs: Vec<Complex64> = a.iter().zip(&b).map(|(u, v)| u + v).collect();
            let ft: Vec<Complex64> = a.iter().zip(&b).map(|(u, v)| I * (u - v)).collect();
            let j = s.eval_real(&x);
            let r = DVector::from_vec(linalg::real_form(&ft)) - j * DVector::from_vec(linalg::real_form(&fs));
            worst = worst.max(r.amax());
        }
        assert!(worst < 1e-9, "structure residual {worst:e}");
    }

    #[test]
    fn frame_round_trip() {
        let u = unit(&[c(0.2, 0.5), c(-0.4, 0.1)]).unwrap();
        let frame = linalg::unitary_to_e1(&u);
        let f = DiscFunction::linear(&[c(1.0, 2.0), c(0.5, -1.0)], 4, 2);
        let w = DiscFunction::constant(&[c(0.3, 0.0), c(0.1, 0.2)], 4, 2);
        let (a, b) = to_frame(&f, &w, &frame).unwrap();
        let (f2, w2) = from_frame(&a, &b, &frame).unwrap();
        assert!(f2.sub(&f).unwrap().max_abs() < 1e-14);
        assert!(w2.sub(&w).unwrap().max_abs() < 1e-14);
    }

    #[test]
    fn linear_disc_at_zero() {
        let s = StructureField::standard(2);
        let v = [c(0.6, 0.0), c(0.0, 0.8)];
        let sol = canonical_disc(&s, &v, &SolverConfig::with_truncation(small())).unwrap();
        let lin = DiscFunction::linear(&v, 16, 16);
        assert!(sol.f.sub(&lin).unwrap().max_abs() < 1e-12);
        assert!(sol.residuals.boundary < 1e-12);
    }

    #[test]
    fn deformed_canonical_disc_converges() {
        let s = sample_polynomial(2, 0.01, 1.0).unwrap();
        let config = SolverConfig::with_truncation(small());
        let sol = canonical_disc(&s, &[c(1.0, 0.0), c(0.0, 0.0)], &config).unwrap();
        assert!(sol.residuals.boundary < 1e-9, "{:?}", sol.residuals);
        assert!(sol.residuals.structure < 1e-8, "{:?}", sol.residuals);
    }
}
