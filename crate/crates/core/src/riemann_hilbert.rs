//! Linear Riemann-Hilbert problems `2 Re[G h] = c` over analytic
//! polynomials, and partial indices of matrix loops by Toeplitz kernel
//! probing.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fibration::LoopMatrix;
use crate::linalg::CMat;
use crate::loop_algebra::DiscFunction;
use crate::parallel;

/// Relative singular value threshold for numerical rank.
pub const RANK_THRESHOLD: f64 = 1e-8;
/// Required ratio between the smallest kept and largest discarded
/// singular value.
pub const GAP_RATIO: f64 = 1e3;
/// deepest Toeplitz section tried before a rank decision is reported ambiguous
const MAX_DEPTH: usize = 192;

/// `2 Re[G h] = rhs` on the circle grid of `g`, with `h` analytic of degree
/// `modes`.
#[derive(Clone, Debug)]
pub struct LinearRhProblem {
    pub g: LoopMatrix,
    /// `rhs[j][p]`, real values on the grid of `g`
    pub rhs: Vec<Vec<f64>>,
    pub modes: usize,
}

/// Factorised collocation operator, reusable for many right-hand sides.
#[derive(Clone, Debug)]
pub struct RhFactorization {
    size: usize,
    modes: usize,
    points: usize,
    /// `Q U_r` restricted to the kept singular directions
    u: DMatrix<f64>,
    sigma: Vec<f64>,
    v: DMatrix<f64>,
    kernel: DMatrix<f64>,
    singular_values: Vec<f64>,
    gap: f64,
}

/// Solution of a linear Riemann-Hilbert problem.
#[derive(Clone, Debug)]
pub struct RhSolution {
    pub particular: DiscFunction,
    pub kernel: Vec<DiscFunction>,
    /// sup norm of `2 Re[G h] - rhs` on the grid
    pub residual: f64,
    /// ratio between the smallest kept and largest discarded singular value
    pub gap: f64,
}

impl RhFactorization {
    /// Builds and factors the real collocation matrix of `h -> 2 Re[G h]`.
    pub fn new(g: &LoopMatrix, modes: usize) -> Result<Self> {
        let a = collocation_matrix(g, modes);
        Self::from_matrix(a, g.size(), modes, g.points())
    }

    /// Factors an already assembled collocation matrix.
    pub fn from_matrix(a: DMatrix<f64>, size: usize, modes: usize, points: usize) -> Result<Self> {
        let cols = a.ncols();
        if a.nrows() < cols {
            return Err(Error::GridTooCoarse { points, modes });
        }
        let qr = a.qr();
        let q = qr.q();
        let r = qr.r();
        let svd = r.svd(true, true);
        let ur = svd.u.ok_or(Error::Singular("collocation SVD"))?;
        let vt = svd.v_t.ok_or(Error::Singular("collocation SVD"))?;
        let mut order: Vec<usize> = (0..cols).collect();
        let sv = svd.singular_values.as_slice().to_vec();
        order.sort_by(|&x, &y| sv[y].partial_cmp(&sv[x]).unwrap());
        let top = sv[order[0]].max(1e-300);
        let kept: Vec<usize> = order.iter().cloned().filter(|&i| sv[i] > RANK_THRESHOLD * top).collect();
        let dropped: Vec<usize> = order.iter().cloned().filter(|&i| sv[i] <= RANK_THRESHOLD * top).collect();
        let gap = match (kept.last(), dropped.first()) {
            (Some(&k), Some(&d)) => sv[k] / sv[d].max(1e-300),
            _ => f64::INFINITY,
        };
        if gap < GAP_RATIO {
            return Err(Error::AmbiguousRank {
                ratio: gap,
                required: GAP_RATIO,
            });
        }
        let qu = &q * &ur;
        let u = DMatrix::from_columns(&kept.iter().map(|&i| qu.column(i).into_owned()).collect::<Vec<_>>());
        let v = DMatrix::from_columns(
            &kept
                .iter()
                .map(|&i| vt.row(i).transpose().into_owned())
                .collect::<Vec<_>>(),
        );
        let kernel = if dropped.is_empty() {
            DMatrix::zeros(cols, 0)
        } else {
            DMatrix::from_columns(
                &dropped
                    .iter()
                    .map(|&i| vt.row(i).transpose().into_owned())
                    .collect::<Vec<_>>(),
            )
        };
        Ok(Self {
            size,
            modes,
            points,
            u,
            sigma: kept.iter().map(|&i| sv[i]).collect(),
            v,
            kernel,
            singular_values: order.iter().map(|&i| sv[i]).collect(),
            gap,
        })
    }

    pub fn kernel_dim(&self) -> usize {
        self.kernel.ncols()
    }

    pub fn gap(&self) -> f64 {
        self.gap
    }

    /// Singular values in decreasing order.
    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    /// Orthonormal kernel basis as columns of real coefficient vectors.
    pub fn kernel_matrix(&self) -> &DMatrix<f64> {
        &self.kernel
    }

    /// Minimal-norm least-squares solution for stacked (scaled) right-hand
    /// side values.
    pub fn solve_scaled(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut c = self.u.transpose() * b;
        for (ci, s) in c.iter_mut().zip(&self.sigma) {
            *ci /= s;
        }
        &self.v * c
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn points(&self) -> usize {
        self.points
    }

    /// Stacks grid values `rhs[j][p]` consistently with the row scaling.
    pub fn stack_rhs(&self, rhs: &[Vec<f64>]) -> DVector<f64> {
        let scale = 1.0 / (self.points as f64).sqrt();
        let mut b = DVector::zeros(self.points * self.size);
        for p in 0..self.points {
            for j in 0..self.size {
                b[p * self.size + j] = rhs[j][p] * scale;
            }
        }
        b
    }
}

/// Real coefficient vector `(Re h_k[a], Im h_k[a])` to an analytic disc function.
pub fn coefficients_to_disc(x: &[f64], size: usize, modes: usize, deg_b: usize) -> DiscFunction {
    let mut out = DiscFunction::zeros(size, modes, deg_b);
    for k in 0..size {
        for a in 0..=modes {
            let i = 2 * (k * (modes + 1) + a);
            out.set(k, a, 0, Complex64::new(x[i], x[i + 1]));
        }
    }
    out
}

/// Rows `(p, j)` scaled by `1/sqrt(P)`, columns `(k, a, re/im)`.
pub fn collocation_matrix(g: &LoopMatrix, modes: usize) -> DMatrix<f64> {
    let n = g.size();
    let points = g.points();
    let cols = 2 * n * (modes + 1);
    let scale = 1.0 / (points as f64).sqrt();
    let mut a = DMatrix::zeros(points * n, cols);
    for p in 0..points {
        let zeta = g.zeta(p);
        let gm = &g.values()[p];
        let mut pw = Complex64::new(1.0, 0.0);
        for deg in 0..=modes {
            for j in 0..n {
                for k in 0..n {
                    let v = gm[(j, k)] * pw * 2.0;
                    let c = 2 * (k * (modes + 1) + deg);
                    a[(p * n + j, c)] = v.re * scale;
                    a[(p * n + j, c + 1)] = -v.im * scale;
                }
            }
            pw *= zeta;
        }
    }
    a
}

/// Least-squares solution with kernel basis.
pub fn solve_linear_rh(problem: &LinearRhProblem) -> Result<RhSolution> {
    let n = problem.g.size();
    if problem.rhs.len() != n || problem.rhs.iter().any(|r| r.len() != problem.g.points()) {
        return Err(Error::Dimension("right-hand side grid".into()));
    }
    let fact = RhFactorization::new(&problem.g, problem.modes)?;
    let b = fact.stack_rhs(&problem.rhs);
    let x = fact.solve_scaled(&b);
    let a = collocation_matrix(&problem.g, problem.modes);
    let resid = (&a * &x - &b) * (problem.g.points() as f64).sqrt();
    let residual = resid.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let scale = problem
        .rhs
        .iter()
        .flatten()
        .map(|v| v.abs())
        .fold(0.0, f64::max);
    if residual > 1e-9 * scale.max(1.0) {
        return Err(Error::NoConvergence {
            stage: "linear Riemann-Hilbert least squares",
            iterations: 1,
            residual,
        });
    }
    let particular = coefficients_to_disc(x.as_slice(), n, problem.modes, 0);
    let kernel = (0..fact.kernel_dim())
        .map(|c| coefficients_to_disc(fact.kernel.column(c).as_slice(), n, problem.modes, 0))
        .collect();
    Ok(RhSolution {
        particular,
        kernel,
        residual,
        gap: fact.gap,
    })
}

/// Partial indices, their sum and the determinant winding of a loop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexReport {
    pub partial_indices: Vec<i64>,
    pub maslov: i64,
    pub det_winding: i64,
    /// per probed shift, the gap ratio used in the rank decision
    pub gaps: Vec<f64>,
}

/// Winding number of `det B`.
pub fn maslov_index(b: &LoopMatrix) -> Result<i64> {
    b.det_winding()
}

/// Kernel dimension of `u -> P_-(zeta^{-m} B u)` on polynomials in
/// `zeta^{-1}` of degree `<= depth`; returns the dimension and gap ratio.
fn toeplitz_kernel(coeffs: &[CMat], band: usize, m: i64, depth: usize) -> Result<(usize, f64)> {
    let n = coeffs[0].nrows();
    let band_i = band as i64;
    // frequencies q < 0 reached by zeta^{k - m - j}
    let q_min = -band_i - m - depth as i64;
    let row_blocks = (-q_min).max(0) as usize;
    let cols = n * (depth + 1);
    if row_blocks == 0 {
        return Ok((cols, f64::INFINITY));
    }
    let mut a = CMat::zeros(row_blocks * n, cols);
    for jb in 0..=depth {
        for rb in 0..row_blocks {
            let q = -1 - rb as i64;
            let k = q + m + jb as i64;
            if k.abs() > band_i {
                continue;
            }
            let bk = &coeffs[(k + band_i) as usize];
            a.view_mut((rb * n, jb * n), (n, n)).copy_from(bk);
        }
    }
    let sv = a.singular_values();
    let mut sv: Vec<f64> = sv.iter().cloned().collect();
    sv.sort_by(|x, y| y.partial_cmp(x).unwrap());
    // missing singular values when there are fewer rows than columns are zero
    while sv.len() < cols {
        sv.push(0.0);
    }
    let top = sv[0].max(1e-300);
    let kept = sv.iter().filter(|&&s| s > RANK_THRESHOLD * top).count();
    let kernel = cols - kept;
    let gap = if kept > 0 && kernel > 0 {
        sv[kept - 1] / sv[kept].max(1e-300)
    } else {
        f64::INFINITY
    };
    if gap < GAP_RATIO {
        return Err(Error::AmbiguousRank {
            ratio: gap,
            required: GAP_RATIO,
        });
    }
    Ok((kernel, gap))
}

/// Kernel vectors of the full section are series in `zeta^{-1}`, so a
/// truncated section only has small singular values of size `rho^depth`.
/// Deepen until the rank decision is clear.
fn deepening_kernel(coeffs: &[CMat], band: usize, m: i64, depth: usize) -> Result<(usize, f64)> {
    let mut depth = depth;
    loop {
        match toeplitz_kernel(coeffs, band, m, depth) {
            Err(Error::AmbiguousRank { .. }) if depth < MAX_DEPTH => depth = (2 * depth).min(MAX_DEPTH),
            other => return other,
        }
    }
}

fn kernel_profile(coeffs: &[CMat], band: usize, shifts: &[i64], depth: usize) -> Result<(Vec<i64>, Vec<f64>)> {
    let probes = parallel::map(shifts, |&m| deepening_kernel(coeffs, band, m, depth));
    let mut phi = Vec::with_capacity(shifts.len());
    let mut gaps = Vec::with_capacity(shifts.len());
    for p in probes {
        let (k, g) = p?;
        phi.push(k as i64);
        gaps.push(g);
    }
    Ok((phi, gaps))
}

/// The kernel of the full section does not depend on the depth, so a
/// profile is accepted once deepening by half leaves it unchanged.
fn stable_profile(coeffs: &[CMat], band: usize, shifts: &[i64], depth: usize) -> Result<(Vec<i64>, Vec<f64>)> {
    let mut depth = depth;
    let mut current = kernel_profile(coeffs, band, shifts, depth)?;
    while depth < MAX_DEPTH {
        depth = (3 * depth / 2).min(MAX_DEPTH);
        let deeper = kernel_profile(coeffs, band, shifts, depth)?;
        if deeper.0 == current.0 {
            return Ok(deeper);
        }
        current = deeper;
    }
    Err(Error::InconsistentIndices(format!(
        "kernel profile still changes at section depth {MAX_DEPTH}"
    )))
}

/// Partial indices by rank probing of the Toeplitz sections of
/// `zeta^{-m} B`: the kernel dimension `phi(m)` equals
/// `sum_i max(0, k_i - m + 1)`, so `phi(m - 1) - phi(m)` counts the
/// indices `>= m - 1`.
pub fn partial_indices(b: &LoopMatrix) -> Result<IndexReport> {
    let n = b.size();
    let det_winding = b.det_winding()?;
    let max_modes = (b.points() - 1) / 2;
    let band = b.bandwidth(1e-14)?.max(1);
    if band * 2 + 1 > b.points() / 2 {
        return Err(Error::GridTooCoarse {
            points: b.points(),
            modes: band,
        });
    }
    let coeffs_full = b.fourier(max_modes)?;
    let coeffs: Vec<CMat> = coeffs_full[(max_modes - band)..=(max_modes + band)].to_vec();
    let mut window = band as i64 + 1 + (det_winding.abs() / n as i64);
    for _attempt in 0..3 {
        let shifts: Vec<i64> = (-window - 1..=window + 1).collect();
        let (phi, gaps) = stable_profile(&coeffs, band, &shifts, (2 * window as usize) + 12)?;
        // phi(m-1) - phi(m) = #{k_i >= m-1}, so delta[i] counts k_i >= i - window - 1
        let delta: Vec<i64> = (1..phi.len()).map(|i| phi[i - 1] - phi[i]).collect();
        let consistent = delta.first() == Some(&(n as i64))
            && delta.last() == Some(&0)
            && delta.windows(2).all(|w| w[0] >= w[1]);
        if !consistent {
            window *= 2;
            continue;
        }
        let mut indices = Vec::with_capacity(n);
        for (i, m) in (-window - 1..window).enumerate() {
            let mult = delta[i] - delta[i + 1];
            for _ in 0..mult {
                indices.push(m);
            }
        }
        indices.sort_by(|a, b| b.cmp(a));
        let maslov: i64 = indices.iter().sum();
        if maslov != det_winding {
            return Err(Error::InconsistentIndices(format!(
                "index sum {maslov} differs from determinant winding {det_winding}"
            )));
        }
        return Ok(IndexReport {
            partial_indices: indices,
            maslov,
            det_winding,
            gaps,
        });
    }
    Err(Error::InconsistentIndices(format!(
        "kernel profile not monotone up to window {window}; enlarge the grid or the window"
    )))
}

/// `B = -G^{-1} conj(G)` for the linearised operator `h -> 2 Re[G h]`.
pub fn b_from_g(g: &LoopMatrix) -> Result<LoopMatrix> {
    let mut values = Vec::with_capacity(g.points());
    for m in g.values() {
        let sol = m
            .clone()
            .lu()
            .solve(&m.map(|z| z.conj()))
            .ok_or(Error::Singular("G"))?;
        values.push(-sol);
    }
    Ok(LoopMatrix::from_values(g.size(), values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fibration::{central_lift, matrix_b, matrix_k, SphereConormal};

    fn monomial_diag(ks: &[i64], points: usize) -> LoopMatrix {
        let n = ks.len();
        LoopMatrix::from_fn(n, points, |z| {
            CMat::from_fn(n, n, |r, c| if r == c { z.powi(ks[r] as i32) } else { Complex64::new(0.0, 0.0) })
        })
    }

    #[test]
    fn diagonal_indices() {
        let r = partial_indices(&monomial_diag(&[2, 0, -1], 64)).unwrap();
        assert_eq!(r.partial_indices, vec![2, 0, -1]);
        assert_eq!(r.maslov, 1);
        assert_eq!(r.det_winding, 1);
    }

    #[test]
    fn two_by_two_example() {
        let b = LoopMatrix::from_fn(2, 64, |z| {
            CMat::from_row_slice(2, 2, &[z * z, Complex64::new(0.0, 0.0), z, Complex64::new(1.0, 0.0)])
        });
        let r = partial_indices(&b).unwrap();
        assert_eq!(r.partial_indices, vec![1, 1]);
    }

    #[test]
    fn sphere_indices() {
        for n in [2, 3] {
            let fib = SphereConormal::new(n).unwrap();
            let b = matrix_b(&matrix_k(&fib, &central_lift(n, 64)).unwrap()).unwrap();
            let r = partial_indices(&b).unwrap();
            assert_eq!(r.partial_indices, vec![1; 2 * n]);
            assert_eq!(r.maslov, 2 * n as i64);
            assert_eq!(maslov_index(&b).unwrap(), 2 * n as i64);
        }
    }

    #[test]
    fn minus_identity_has_zero_maslov() {
        let b = LoopMatrix::from_fn(3, 32, |_| -CMat::identity(3, 3));
        assert_eq!(maslov_index(&b).unwrap(), 0);
    }

    #[test]
    fn identity_kernel() {
        let n = 3;
        let g = LoopMatrix::from_fn(n, 64, |_| CMat::identity(n, n));
        let p = LinearRhProblem {
            g,
            rhs: vec![vec![0.0; 64]; n],
            modes: 8,
        };
        let s = solve_linear_rh(&p).unwrap();
        assert_eq!(s.kernel.len(), n);
        for k in &s.kernel {
            // purely imaginary constants
            assert!(k.get(0, 0, 0).re.abs() < 1e-12);
            assert!(k.tail_abs(1) < 1e-12);
        }
    }

    #[test]
    fn circle_kernel() {
        let g = LoopMatrix::from_fn(1, 64, |z| CMat::from_element(1, 1, z.conj()));
        let p = LinearRhProblem {
            g,
            rhs: vec![vec![0.0; 64]],
            modes: 8,
        };
        assert_eq!(solve_linear_rh(&p).unwrap().kernel.len(), 3);
    }

    #[test]
    fn particular_solution_reproduces_rhs() {
        let g = LoopMatrix::from_fn(1, 64, |z| CMat::from_element(1, 1, z.conj()));
        // rhs = 2 Re[conj(zeta) (zeta^3)] = 2 cos(2 theta)
        let rhs: Vec<f64> = (0..64)
            .map(|p| 2.0 * (2.0 * 2.0 * std::f64::consts::PI * p as f64 / 64.0).cos())
            .collect();
        let s = solve_linear_rh(&LinearRhProblem {
            g,
            rhs: vec![rhs],
            modes: 8,
        })
        .unwrap();
        assert!(s.residual < 1e-12);
    }
}
