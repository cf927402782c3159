//! JSON file formats. Floats are written with 17 significant digits so that
//! identical runs give byte-identical files.

use std::io::Write;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::disc_solver::{Residuals, StationaryDiscSolution};
use crate::error::{Error, Result};
use crate::loop_algebra::{DiscFunction, FourierLoop};
use crate::poly::{Poly, PolyMap, Term};
use crate::structures::{BallMap, StructureField, StructureKind};

/// Compact JSON with `{:.16e}` floats.
#[derive(Clone, Copy, Debug, Default)]
pub struct FixedDigits;

impl serde_json::ser::Formatter for FixedDigits {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()> {
        if value.is_finite() {
            write!(writer, "{value:.16e}")
        } else {
            writer.write_all(b"null")
        }
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> std::io::Result<()> {
        self.write_f64(writer, value as f64)
    }
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, FixedDigits);
    value.serialize(&mut ser)?;
    buf.push(b'\n');
    String::from_utf8(buf).map_err(|e| Error::Invalid(e.to_string()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, to_json(value)?)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| {
        Error::Invalid(format!(
            "{}: line {} column {}: {}",
            path.display(),
            e.line(),
            e.column(),
            e
        ))
    })
}

fn pair(z: Complex64) -> [f64; 2] {
    [z.re, z.im]
}

/// `coeffs[component][k + modes] = [re, im]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopFile {
    pub components: usize,
    pub modes: usize,
    pub coeffs: Vec<Vec<[f64; 2]>>,
}

impl LoopFile {
    pub fn from_loop(l: &FourierLoop) -> Self {
        Self {
            components: l.n_components(),
            modes: l.modes(),
            coeffs: l.coeffs().iter().map(|row| row.iter().map(|&z| pair(z)).collect()).collect(),
        }
    }

    pub fn to_loop(&self) -> Result<FourierLoop> {
        if self.coeffs.len() != self.components || self.coeffs.iter().any(|r| r.len() != 2 * self.modes + 1) {
            return Err(Error::Invalid("loop file: coeffs must be components x (2 modes + 1)".into()));
        }
        FourierLoop::from_coeffs(
            self.coeffs
                .iter()
                .map(|r| r.iter().map(|p| Complex64::new(p[0], p[1])).collect())
                .collect(),
        )
    }
}

/// `coeffs[component][a][b]` of `zeta^a conj(zeta)^b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscCoeffs {
    pub deg_a: usize,
    pub deg_b: usize,
    pub coeffs: Vec<Vec<Vec<[f64; 2]>>>,
}

impl DiscCoeffs {
    pub fn from_disc(d: &DiscFunction) -> Self {
        Self {
            deg_a: d.deg_a(),
            deg_b: d.deg_b(),
            coeffs: (0..d.n_components())
                .map(|c| {
                    (0..=d.deg_a())
                        .map(|a| (0..=d.deg_b()).map(|b| pair(d.get(c, a, b))).collect())
                        .collect()
                })
                .collect(),
        }
    }

    pub fn to_disc(&self) -> Result<DiscFunction> {
        let n = self.coeffs.len();
        let mut out = DiscFunction::zeros(n, self.deg_a, self.deg_b);
        for (c, rows) in self.coeffs.iter().enumerate() {
            if rows.len() != self.deg_a + 1 || rows.iter().any(|r| r.len() != self.deg_b + 1) {
                return Err(Error::Invalid(format!("disc coefficients: component {c} has the wrong shape")));
            }
            for (a, row) in rows.iter().enumerate() {
                for (b, p) in row.iter().enumerate() {
                    out.set(c, a, b, Complex64::new(p[0], p[1]));
                }
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscFile {
    pub n: usize,
    pub lambda: f64,
    pub v: Vec<f64>,
    pub f_coeffs: DiscCoeffs,
    pub g_coeffs: DiscCoeffs,
    pub residuals: Residuals,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
}

impl DiscFile {
    pub fn from_solution(sol: &StationaryDiscSolution) -> Self {
        Self {
            n: sol.n(),
            lambda: sol.lambda,
            v: sol.v.clone(),
            f_coeffs: DiscCoeffs::from_disc(&sol.f),
            g_coeffs: DiscCoeffs::from_disc(&sol.g),
            residuals: sol.residuals,
            radius: sol.normalization.through.as_ref().map(|t| t.1),
        }
    }
}

/// Structure file: the standard structure, a nilpotent polynomial family
/// `J0 + lambda S` or the pullback by `x + lambda P(x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructureFile {
    pub n: usize,
    pub lambda: f64,
    pub kind: String,
    /// row-major `2n x 2n` entries of `S`, each a list of monomials
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deviation_coeffs: Option<Vec<Vec<Term>>>,
    /// the `2n` real components of `P`
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi_coeffs: Option<Vec<Vec<Term>>>,
}

fn terms_to_poly(vars: usize, terms: &[Term], what: &str) -> Result<Poly> {
    if let Some(t) = terms.iter().find(|t| t.exp.len() != vars) {
        return Err(Error::Invalid(format!(
            "structure file: {what}: exponent {:?} should have {vars} entries",
            t.exp
        )));
    }
    Ok(Poly::from_terms(vars, terms.iter().cloned()))
}

impl StructureFile {
    pub fn from_structure(s: &StructureField) -> Result<Self> {
        let n = s.n();
        let base = Self {
            n,
            lambda: s.lambda(),
            kind: String::new(),
            deviation_coeffs: None,
            phi_coeffs: None,
        };
        Ok(match s.kind() {
            StructureKind::Standard => Self {
                kind: "standard".into(),
                ..base
            },
            StructureKind::Polynomial { deviation, .. } => Self {
                kind: "polynomial".into(),
                deviation_coeffs: Some(deviation.iter().map(|p| p.terms().to_vec()).collect()),
                ..base
            },
            StructureKind::Pullback { generator } => Self {
                kind: "pullback".into(),
                phi_coeffs: Some(generator.components().iter().map(|p| p.terms().to_vec()).collect()),
                ..base
            },
            StructureKind::Affine(_) => {
                return Err(Error::Invalid("chart-transformed structures have no file format".into()))
            }
        })
    }

    pub fn to_structure(&self) -> Result<StructureField> {
        let m = 2 * self.n;
        if self.n == 0 {
            return Err(Error::Invalid("structure file: n must be positive".into()));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::Invalid("structure file: lambda must be nonnegative".into()));
        }
        match self.kind.as_str() {
            "standard" => Ok(StructureField::standard(self.n)),
            "polynomial" => {
                let d = self
                    .deviation_coeffs
                    .as_ref()
                    .ok_or_else(|| Error::Invalid("structure file: polynomial kind needs deviation_coeffs".into()))?;
                if d.len() != m * m {
                    return Err(Error::Invalid(format!(
                        "structure file: deviation_coeffs needs {} entries, found {}",
                        m * m,
                        d.len()
                    )));
                }
                let polys = d
                    .iter()
                    .enumerate()
                    .map(|(i, t)| terms_to_poly(m, t, &format!("deviation_coeffs[{i}]")))
                    .collect::<Result<Vec<_>>>()?;
                StructureField::polynomial(self.n, self.lambda, polys)
            }
            "pullback" => {
                let d = self
                    .phi_coeffs
                    .as_ref()
                    .ok_or_else(|| Error::Invalid("structure file: pullback kind needs phi_coeffs".into()))?;
                if d.len() != m {
                    return Err(Error::Invalid(format!(
                        "structure file: phi_coeffs needs {m} entries, found {}",
                        d.len()
                    )));
                }
                let polys = d
                    .iter()
                    .enumerate()
                    .map(|(i, t)| terms_to_poly(m, t, &format!("phi_coeffs[{i}]")))
                    .collect::<Result<Vec<_>>>()?;
                StructureField::pullback(self.n, self.lambda, PolyMap::new(polys))
            }
            other => Err(Error::Invalid(format!(
                "structure file: unknown kind {other:?} (expected standard, polynomial or pullback)"
            ))),
        }
    }
}

/// A ball map `x + lambda P(x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapFile {
    pub n: usize,
    pub lambda: f64,
    /// the `2n` real components of `P`
    pub phi_coeffs: Vec<Vec<Term>>,
}

impl MapFile {
    pub fn from_map(map: &BallMap) -> Self {
        Self {
            n: map.generator.dim() / 2,
            lambda: map.lambda,
            phi_coeffs: map.generator.components().iter().map(|p| p.terms().to_vec()).collect(),
        }
    }

    pub fn to_map(&self) -> Result<BallMap> {
        let m = 2 * self.n;
        if self.phi_coeffs.len() != m {
            return Err(Error::Invalid(format!(
                "map file: phi_coeffs needs {m} entries, found {}",
                self.phi_coeffs.len()
            )));
        }
        let polys = self
            .phi_coeffs
            .iter()
            .enumerate()
            .map(|(i, t)| terms_to_poly(m, t, &format!("phi_coeffs[{i}]")))
            .collect::<Result<Vec<_>>>()?;
        Ok(BallMap {
            generator: PolyMap::new(polys),
            lambda: self.lambda,
        })
    }
}

/// Output of a `check` run.
#[derive(Clone, Debug, Serialize)]
pub struct CheckFile<R: Serialize> {
    pub check: String,
    pub pass: bool,
    pub lambda: f64,
    pub seed: u64,
    pub report: R,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structures::{sample_polynomial, sample_pullback};

    #[test]
    fn floats_have_fixed_width() {
        let s = to_json(&vec![0.1, 1.0, -2.5e-300]).unwrap();
        assert_eq!(s, "[1.0000000000000001e-1,1.0000000000000000e0,-2.5000000000000000e-300]\n");
        let back: Vec<f64> = serde_json::from_str(&s).unwrap();
        assert_eq!(back, vec![0.1, 1.0, -2.5e-300]);
    }

    #[test]
    fn structure_files_round_trip() {
        for s in [sample_polynomial(2, 0.02, 1.0).unwrap(), sample_pullback(2, 0.03, 1.0).unwrap()] {
            let file = StructureFile::from_structure(&s).unwrap();
            let text = to_json(&file).unwrap();
            let back: StructureFile = serde_json::from_str(&text).unwrap();
            let s2 = back.to_structure().unwrap();
            let x = [0.1, -0.2, 0.3, 0.05];
            assert!((s.eval_real(&x) - s2.eval_real(&x)).norm() < 1e-15);
        }
    }

    #[test]
    fn bad_kind_is_reported() {
        let f = StructureFile {
            n: 2,
            lambda: 0.0,
            kind: "spline".into(),
            deviation_coeffs: None,
            phi_coeffs: None,
        };
        assert!(matches!(f.to_structure(), Err(Error::Invalid(m)) if m.contains("spline")));
    }
}
