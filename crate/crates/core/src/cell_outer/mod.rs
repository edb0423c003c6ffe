//! The coarse-scale (`y`, `x3`) relaxation producing the effective bending form.
//!
//! Each regime minimizes `∫ Q_hom(y, ι(x3 A + B) + corrector strain)` over
//! `(−1/2, 1/2) × Q`. The minimum, the *raw infimum*, equals `(1/12) Q2(A)` for
//! constant coefficients; the canonical output multiplies it by 12 so that the
//! plate energy reads `(1/12) ∫ Q̄(Π)` with `Q̄ = Q2` in the constant case.

pub mod finite;
pub mod infinite;
pub mod zero;

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, Matrix3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cell_inner::QhomField;
use crate::error::{Error, Result};
use crate::linsolve::{CellProblem, CgOptions};
use crate::tensor::{in_plane_embedding, relaxed_in_plane_form, QuadForm22, QuadForm33, SymMat22};

/// Limit ratio `γ1 = lim h/ε`; `γ2 = lim h/ε²` is always `+∞`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RegimeSpec {
    Zero,
    Finite(f64),
    Infinite,
}

impl RegimeSpec {
    pub fn finite(gamma1: f64) -> Result<Self> {
        if gamma1 > 0.0 && gamma1.is_finite() {
            Ok(Self::Finite(gamma1))
        } else {
            Err(Error::Config(format!("finite gamma1 must be positive, got {gamma1}")))
        }
    }

    /// `0` → zero, `inf` → infinite, positive number → finite.
    pub fn from_gamma1(gamma1: f64) -> Result<Self> {
        if gamma1 == 0.0 {
            Ok(Self::Zero)
        } else if gamma1 == f64::INFINITY {
            Ok(Self::Infinite)
        } else {
            Self::finite(gamma1)
        }
    }

    pub fn gamma1(&self) -> f64 {
        match self {
            Self::Zero => 0.0,
            Self::Finite(g) => *g,
            Self::Infinite => f64::INFINITY,
        }
    }

    pub fn all_for_tests() -> [Self; 3] {
        [Self::Zero, Self::Finite(1.0), Self::Infinite]
    }
}

impl fmt::Display for RegimeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Zero => write!(f, "zero"),
            Self::Finite(g) => write!(f, "finite({g})"),
            Self::Infinite => write!(f, "infinite"),
        }
    }
}

impl FromStr for RegimeSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "zero" | "0" => Ok(Self::Zero),
            "infinite" | "inf" => Ok(Self::Infinite),
            _ => {
                let inner = s.strip_prefix("finite(").and_then(|r| r.strip_suffix(')')).unwrap_or(s);
                let g: f64 = inner.parse().map_err(|_| Error::Config(format!("invalid regime `{s}`")))?;
                Self::from_gamma1(g)
            }
        }
    }
}

impl Serialize for RegimeSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for RegimeSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Which of the two stored matrices a form is evaluated with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    RawInfimum,
    FjmNormalized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormProvenance {
    pub microstructure_hash: String,
    pub ny: usize,
    pub nz: usize,
    pub nx3: usize,
    pub rtol: f64,
    pub inner_bypassed: bool,
}

/// The effective bending form on 2×2 orthonormal coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveBendingForm {
    pub raw: QuadForm22,
    pub fjm: QuadForm22,
    pub regime: RegimeSpec,
    pub normalization: Normalization,
    pub provenance: FormProvenance,
}

impl EffectiveBendingForm {
    pub fn from_raw(raw: Matrix3<f64>, regime: RegimeSpec, provenance: FormProvenance) -> Self {
        let raw = QuadForm22::from_matrix(raw);
        let fjm = QuadForm22::from_matrix(raw.0 * 12.0);
        Self { raw, fjm, regime, normalization: Normalization::FjmNormalized, provenance }
    }

    /// Matrix under the selected normalization.
    pub fn matrix(&self) -> &Matrix3<f64> {
        match self.normalization {
            Normalization::RawInfimum => &self.raw.0,
            Normalization::FjmNormalized => &self.fjm.0,
        }
    }

    pub fn eval(&self, a: &SymMat22) -> f64 {
        let c = a.coords();
        (c.transpose() * self.matrix() * c)[(0, 0)]
    }

    /// Checks symmetric positive definiteness and the bounds `[lo, hi]` on the
    /// normalized matrix's eigenvalues, with a relative slack.
    pub fn within_bounds(&self, lo: f64, hi: f64, slack: f64) -> bool {
        let m = &self.fjm.0;
        if (m - m.transpose()).norm() > 1e-12 * m.norm() {
            return false;
        }
        let (l, h) = self.fjm.eigen_bounds();
        l > 0.0 && l >= lo * (1.0 - slack) && h <= hi * (1.0 + slack)
    }

    /// Structured text with both matrices at 17 significant digits.
    pub fn to_toml_string(&self) -> String {
        let row = |m: &Matrix3<f64>, i: usize| {
            format!("[{:.16e}, {:.16e}, {:.16e}]", m[(i, 0)], m[(i, 1)], m[(i, 2)])
        };
        let mat = |m: &Matrix3<f64>| format!("[\n  {},\n  {},\n  {},\n]", row(m, 0), row(m, 1), row(m, 2));
        let p = &self.provenance;
        format!(
            "# Effective bending form on orthonormal 2x2 coordinates (a11, a22, sqrt(2) a12).\n\
             regime = \"{}\"\n\
             normalization = \"{}\"\n\
             fjm_normalized = {}\n\
             raw_infimum = {}\n\n\
             [provenance]\n\
             microstructure_hash = \"{}\"\n\
             ny = {}\nnz = {}\nnx3 = {}\nrtol = {:e}\ninner_bypassed = {}\n",
            self.regime,
            match self.normalization {
                Normalization::RawInfimum => "raw_infimum",
                Normalization::FjmNormalized => "fjm_normalized",
            },
            mat(&self.fjm.0),
            mat(&self.raw.0),
            p.microstructure_hash,
            p.ny,
            p.nz,
            p.nx3,
            p.rtol,
            p.inner_bypassed
        )
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Doc {
            regime: RegimeSpec,
            normalization: Normalization,
            fjm_normalized: [[f64; 3]; 3],
            raw_infimum: [[f64; 3]; 3],
            provenance: FormProvenance,
        }
        let doc: Doc = toml::from_str(text).map_err(|e| Error::Config(format!("effective form document: {e}")))?;
        let m = |a: [[f64; 3]; 3]| QuadForm22(Matrix3::from_fn(|i, j| a[i][j]));
        Ok(Self {
            raw: m(doc.raw_infimum),
            fjm: m(doc.fjm_normalized),
            regime: doc.regime,
            normalization: doc.normalization,
            provenance: doc.provenance,
        })
    }
}

/// Regime-tagged minimizer of one loading `A`.
#[derive(Debug, Clone, PartialEq)]
pub enum OuterCorrector {
    /// `φ1` at `(x3 node, y node)` in [`finite::FiniteLayout`] order, with the
    /// thickness mean removed.
    Finite { layout: finite::FiniteLayout, phi: Vec<f64>, b: SymMat22 },
    /// `φ1(x3, y) = x3 φ(y)` (three per node) and `d(x3) = x3 d`.
    Infinite { ny: usize, phi: Vec<f64>, d: [f64; 3], b: SymMat22 },
    /// `ξ(x3, y) = x3 (−∂2ψ, ∂1ψ)(y)` and `η`, as trigonometric coefficients.
    Zero { space: Box<zero::TrigSpace>, psi: Vec<f64>, eta: Vec<f64>, b: SymMat22 },
}

impl OuterCorrector {
    /// All unknowns as one vector, for linearity checks.
    pub fn as_vector(&self) -> Vec<f64> {
        let (mut v, b) = match self {
            Self::Finite { phi, b, .. } => (phi.clone(), b),
            Self::Infinite { phi, d, b, .. } => {
                let mut v = phi.clone();
                v.extend_from_slice(d);
                (v, b)
            }
            Self::Zero { psi, eta, b, .. } => {
                let mut v = psi.clone();
                v.extend_from_slice(eta);
                (v, b)
            }
        };
        v.extend(b.coords().iter());
        v
    }

    pub fn b(&self) -> SymMat22 {
        match self {
            Self::Finite { b, .. } | Self::Infinite { b, .. } | Self::Zero { b, .. } => *b,
        }
    }
}

/// `mean_y Eᵀ Q E` on 2×2 coordinates.
pub(crate) fn in_plane_load_mass(qfield: &[QuadForm33]) -> DMatrix<f64> {
    let e = in_plane_embedding();
    let mut m = Matrix3::zeros();
    for q in qfield {
        m += e.transpose() * q.0 * e;
    }
    m /= qfield.len() as f64;
    DMatrix::from_column_slice(3, 3, m.as_slice())
}

/// `∫ x3² dx3 · mean_y Eᵀ Q E`.
pub(crate) fn thickness_load_mass(qfield: &[QuadForm33]) -> DMatrix<f64> {
    in_plane_load_mass(qfield) / 12.0
}

pub fn reduced_field(qf: &QhomField) -> Result<Vec<QuadForm22>> {
    qf.forms.iter().map(relaxed_in_plane_form).collect()
}

/// Grid and solver settings of the outer stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuterSettings {
    /// Thickness elements for finite `γ1` and the oracle paths.
    pub nx3: usize,
    pub rtol: f64,
}

impl Default for OuterSettings {
    fn default() -> Self {
        Self { nx3: 8, rtol: 1e-10 }
    }
}

fn cg(rtol: f64) -> CgOptions {
    CgOptions::with_rtol(rtol)
}

fn coords(a: &SymMat22) -> Vec<f64> {
    a.coords().iter().copied().collect()
}

fn b_from(u: &[f64], offset: usize) -> SymMat22 {
    SymMat22::from_coords(&nalgebra::Vector3::new(u[offset], u[offset + 1], u[offset + 2]))
}

/// Finite `γ1`: raw infimum for loading `A` and its minimizer.
pub fn homogenize_finite(qf: &QhomField, gamma1: f64, nx3: usize, rtol: f64, a: &SymMat22) -> Result<(f64, OuterCorrector)> {
    let ny = qf.ny();
    let problem = finite::finite_problem(&qf.forms, ny, gamma1, nx3);
    let l = coords(a);
    let (mut u, _) = problem.solve(&l, &cg(rtol))?;
    let value = problem.energy(&u, &l);
    let layout = finite::FiniteLayout { n: ny, nx3 };
    let b = b_from(&u, layout.b_offset());
    u.truncate(layout.phi_len());
    finite::normalize_mean(&mut u, layout);
    Ok((value, OuterCorrector::Finite { layout, phi: u, b }))
}

/// Infinite `γ1`, fast path: `(1/12) m(ι(A))` with `B = 0`.
pub fn homogenize_infinite(qf: &QhomField, rtol: f64, a: &SymMat22) -> Result<(f64, OuterCorrector)> {
    let ny = qf.ny();
    let problem = infinite::slice_problem(&qf.forms, ny);
    let l = coords(a);
    let (mut u, _) = problem.solve(&l, &cg(rtol))?;
    let value = problem.energy(&u, &l) / 12.0;
    let n = 3 * ny * ny;
    let d = [u[n], u[n + 1], u[n + 2]];
    u.truncate(n);
    Ok((value, OuterCorrector::Infinite { ny, phi: u, d, b: SymMat22::ZERO }))
}

/// Infinite `γ1`, monolithic oracle over `nx3` slices: raw infimum and optimal `B`.
pub fn homogenize_infinite_oracle(qf: &QhomField, nx3: usize, rtol: f64, a: &SymMat22) -> Result<(f64, SymMat22)> {
    let ny = qf.ny();
    let problem = infinite::oracle_problem(&qf.forms, ny, nx3);
    let l = coords(a);
    let (u, _) = problem.solve(&l, &cg(rtol))?;
    let layout = infinite::OracleLayout { n: ny, nx3 };
    Ok((problem.energy(&u, &l), b_from(&u, layout.b_offset())))
}

/// Zero `γ1`, fast path: `(1/12) m(A)` on the reduced in-plane forms.
pub fn homogenize_zero(qf: &QhomField, rtol: f64, a: &SymMat22) -> Result<(f64, OuterCorrector)> {
    let ny = qf.ny();
    let red = reduced_field(qf)?;
    let problem = zero::trig_problem(&red, ny);
    let l = coords(a);
    let (mut u, _) = problem.solve(&l, &cg(rtol))?;
    let value = problem.energy(&u, &l) / 12.0;
    let space = zero::TrigSpace::new(ny);
    let eta = u.split_off(space.n_coeffs());
    Ok((value, OuterCorrector::Zero { space: Box::new(space), psi: u, eta, b: SymMat22::ZERO }))
}

/// Zero `γ1`, monolithic oracle over `nx3` slices: raw infimum and optimal `B`.
pub fn homogenize_zero_oracle(qf: &QhomField, nx3: usize, rtol: f64, a: &SymMat22) -> Result<(f64, SymMat22)> {
    let ny = qf.ny();
    let red = reduced_field(qf)?;
    let problem = zero::oracle_problem(&red, ny, nx3);
    let l = coords(a);
    let (u, _) = problem.solve(&l, &cg(rtol))?;
    let b = b_from(&u, u.len() - 3);
    Ok((problem.energy(&u, &l), b))
}

/// The discretized problem of a regime and the factor mapping its minimum to
/// the raw infimum.
pub fn regime_problem(qf: &QhomField, regime: RegimeSpec, nx3: usize) -> Result<(CellProblem, f64)> {
    let ny = qf.ny();
    Ok(match regime {
        RegimeSpec::Finite(g) => (finite::finite_problem(&qf.forms, ny, g, nx3), 1.0),
        RegimeSpec::Infinite => (infinite::slice_problem(&qf.forms, ny), 1.0 / 12.0),
        RegimeSpec::Zero => (zero::trig_problem(&reduced_field(qf)?, ny), 1.0 / 12.0),
    })
}

fn provenance(qf: &QhomField, nx3: usize, rtol: f64) -> FormProvenance {
    let p = &qf.provenance;
    FormProvenance {
        microstructure_hash: p.microstructure_hash.clone(),
        ny: p.ny,
        nz: p.nz,
        nx3,
        rtol,
        inner_bypassed: p.bypassed,
    }
}

fn to_matrix3(m: &DMatrix<f64>) -> Matrix3<f64> {
    Matrix3::from_fn(|i, j| m[(i, j)])
}

/// Effective form from three basis solves and bilinear cross terms.
pub fn effective_form(qf: &QhomField, regime: RegimeSpec, settings: &OuterSettings) -> Result<EffectiveBendingForm> {
    let (problem, factor) = regime_problem(qf, regime, settings.nx3)?;
    let (m, _) = problem.form_bilinear(&cg(settings.rtol))?;
    Ok(EffectiveBendingForm::from_raw(to_matrix3(&m) * factor, regime, provenance(qf, settings.nx3, settings.rtol)))
}

/// Effective form by polarization: six solves, energies evaluated directly.
pub fn effective_form_polarized(
    qf: &QhomField,
    regime: RegimeSpec,
    settings: &OuterSettings,
) -> Result<EffectiveBendingForm> {
    let (problem, factor) = regime_problem(qf, regime, settings.nx3)?;
    let m = problem.form_polarization(&cg(settings.rtol))?;
    Ok(EffectiveBendingForm::from_raw(to_matrix3(&m) * factor, regime, provenance(qf, settings.nx3, settings.rtol)))
}

/// Effective form through the monolithic oracle of the regime (infinite and
/// zero only); finite `γ1` has no separate fast path.
pub fn effective_form_oracle(qf: &QhomField, regime: RegimeSpec, settings: &OuterSettings) -> Result<EffectiveBendingForm> {
    let ny = qf.ny();
    let problem = match regime {
        RegimeSpec::Infinite => infinite::oracle_problem(&qf.forms, ny, settings.nx3),
        RegimeSpec::Zero => zero::oracle_problem(&reduced_field(qf)?, ny, settings.nx3),
        RegimeSpec::Finite(g) => finite::finite_problem(&qf.forms, ny, g, settings.nx3),
    };
    let (m, _) = problem.form_bilinear(&cg(settings.rtol))?;
    Ok(EffectiveBendingForm::from_raw(to_matrix3(&m), regime, provenance(qf, settings.nx3, settings.rtol)))
}

/// Minimizers for a batch of loadings, solved concurrently.
pub fn outer_correctors(
    qf: &QhomField,
    regime: RegimeSpec,
    settings: &OuterSettings,
    loads: &[SymMat22],
) -> Result<Vec<(f64, OuterCorrector)>> {
    loads
        .par_iter()
        .map(|a| match regime {
            RegimeSpec::Finite(g) => homogenize_finite(qf, g, settings.nx3, settings.rtol, a),
            RegimeSpec::Infinite => homogenize_infinite(qf, settings.rtol, a),
            RegimeSpec::Zero => homogenize_zero(qf, settings.rtol, a),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cell_inner::qhom_field;
    use crate::microstructure::{make_isotropic, Lame, MicrostructureField};

    fn q2_matrix() -> Matrix3<f64> {
        Matrix3::new(8.0 / 3.0, 2.0 / 3.0, 0.0, 2.0 / 3.0, 8.0 / 3.0, 0.0, 0.0, 0.0, 2.0)
    }

    fn constant_field(ny: usize) -> QhomField {
        QhomField::uniform(make_isotropic(1.0, 1.0).unwrap(), ny)
    }

    fn smooth_field(ny: usize) -> QhomField {
        let m = MicrostructureField::SinusoidalY { phase: Lame::new(1.0, 1.0), amplitude: 0.3 };
        qhom_field(&m, ny, 4, 1e-12).unwrap()
    }

    #[test]
    fn constant_material_gives_plate_relaxation_in_every_regime() {
        let qf = constant_field(8);
        let settings = OuterSettings { nx3: 4, rtol: 1e-10 };
        for regime in RegimeSpec::all_for_tests() {
            let f = effective_form(&qf, regime, &settings).unwrap();
            assert!((f.fjm.0 - q2_matrix()).norm() < 1e-8, "{regime}: {}", f.fjm.0);
            assert!((f.raw.0 * 12.0 - f.fjm.0).norm() < 1e-14);
        }
    }

    #[test]
    fn finite_constant_corrector_realizes_column_relaxation() {
        let qf = constant_field(4);
        let a = SymMat22::diag(1.0, 0.0);
        let (v, corr) = homogenize_finite(&qf, 1.0, 4, 1e-12, &a).unwrap();
        assert!((v - 2.0 / 9.0).abs() < 1e-9 * 2.0 / 9.0);
        assert!(corr.b().norm() < 1e-10);
        // The third component carries x3²/2 · b3 with b3 = −1/3 (γ1 = 1), mean removed.
        if let OuterCorrector::Finite { layout, phi, .. } = &corr {
            let top = phi[layout.dof(layout.x3_nodes() - 1, 0, 2)];
            let mid = phi[layout.dof(layout.nx3, 0, 2)];
            assert!(((top - mid) - (-1.0 / 3.0) * 0.125).abs() < 1e-9, "{}", top - mid);
            let y_var = phi[layout.dof(1, 1, 2)] - phi[layout.dof(1, 0, 2)];
            assert!(y_var.abs() < 1e-10);
        }
    }

    #[test]
    fn zero_loading_gives_zero() {
        let qf = smooth_field(8);
        for regime in RegimeSpec::all_for_tests() {
            let (v, corr) = &outer_correctors(&qf, regime, &OuterSettings { nx3: 2, rtol: 1e-10 }, &[SymMat22::ZERO])
                .unwrap()[0];
            assert_eq!(*v, 0.0);
            assert!(corr.as_vector().iter().all(|x| *x == 0.0));
        }
    }

    #[test]
    fn quadratic_homogeneity() {
        let qf = smooth_field(8);
        let a = SymMat22::new(1.0, -0.4, 0.7);
        let settings = OuterSettings { nx3: 2, rtol: 1e-12 };
        for regime in RegimeSpec::all_for_tests() {
            let base = outer_correctors(&qf, regime, &settings, &[a]).unwrap()[0].0;
            for t in [2.0, 1.0 / 3.0] {
                let v = outer_correctors(&qf, regime, &settings, &[a.scale(t)]).unwrap()[0].0;
                assert!((v - t * t * base).abs() <= 1e-8 * t * t * base, "{regime}");
            }
        }
    }

    #[test]
    fn fast_paths_match_oracles() {
        let qf = smooth_field(8);
        let settings = OuterSettings { nx3: 4, rtol: 1e-12 };
        for regime in [RegimeSpec::Infinite, RegimeSpec::Zero] {
            let fast = effective_form(&qf, regime, &settings).unwrap();
            let oracle = effective_form_oracle(&qf, regime, &settings).unwrap();
            let rel = (fast.raw.0 - oracle.raw.0).norm() / fast.raw.0.norm();
            assert!(rel < 1e-8, "{regime}: {rel:e}");
        }
        let a = SymMat22::new(0.3, 1.0, -0.2);
        let (_, b) = homogenize_infinite_oracle(&qf, 4, 1e-12, &a).unwrap();
        assert!(b.norm() < 1e-8);
        let (_, b) = homogenize_zero_oracle(&qf, 4, 1e-12, &a).unwrap();
        assert!(b.norm() < 1e-8);
    }

    #[test]
    fn polarized_assembly_agrees() {
        let qf = smooth_field(8);
        let settings = OuterSettings { nx3: 2, rtol: 1e-12 };
        for regime in RegimeSpec::all_for_tests() {
            let a = effective_form(&qf, regime, &settings).unwrap();
            let b = effective_form_polarized(&qf, regime, &settings).unwrap();
            assert!((a.fjm.0 - b.fjm.0).norm() < 1e-8 * a.fjm.0.norm(), "{regime}");
        }
    }

    #[test]
    fn form_document_roundtrip() {
        let f = effective_form(&smooth_field(4), RegimeSpec::Finite(2.5), &OuterSettings { nx3: 2, rtol: 1e-10 }).unwrap();
        let g = EffectiveBendingForm::from_toml_str(&f.to_toml_string()).unwrap();
        assert_eq!(f, g);
    }

    /// Replicates each coarse cell's form onto its four children.
    fn refine(qf: &QhomField) -> QhomField {
        let n = qf.ny();
        let mut out = qf.clone();
        out.provenance.ny = 2 * n;
        out.forms = (0..4 * n * n)
            .map(|i| {
                let (a, b) = (i / (2 * n), i % (2 * n));
                qf.forms[(a / 2) * n + b / 2]
            })
            .collect();
        out
    }

    #[test]
    fn nested_refinement_never_raises_infima() {
        let m = MicrostructureField::CheckerboardY { phases: [Lame::new(1.0, 1.0), Lame::new(5.0, 0.5)] };
        let coarse = QhomField::bypass(&m, 4).unwrap();
        let fine = refine(&coarse);
        let rtol = 1e-12;
        for a in [SymMat22::new(1.0, 0.0, 0.0), SymMat22::new(0.2, -1.0, 0.6)] {
            let (c, _) = homogenize_finite(&coarse, 1.0, 2, rtol, &a).unwrap();
            let (f, _) = homogenize_finite(&fine, 1.0, 2, rtol, &a).unwrap();
            let (t, _) = homogenize_finite(&fine, 1.0, 4, rtol, &a).unwrap();
            assert!(f <= c * (1.0 + 10.0 * rtol) && t <= f * (1.0 + 10.0 * rtol), "{c} {f} {t}");
            assert!(f < c, "refinement should strictly help on a checkerboard");
            let (c, _) = homogenize_infinite(&coarse, rtol, &a).unwrap();
            let (f, _) = homogenize_infinite(&fine, rtol, &a).unwrap();
            assert!(f <= c * (1.0 + 10.0 * rtol), "{c} {f}");
        }
    }

    #[test]
    fn correctors_are_additive() {
        let qf = smooth_field(8);
        let rtol = 1e-10;
        let settings = OuterSettings { nx3: 2, rtol };
        let a1 = SymMat22::new(1.0, 0.3, -0.2);
        let a2 = SymMat22::new(-0.4, 0.8, 0.5);
        let sum = SymMat22::from_coords(&(a1.coords() + a2.coords()));
        for regime in RegimeSpec::all_for_tests() {
            let c = outer_correctors(&qf, regime, &settings, &[a1, a2, sum]).unwrap();
            let (u1, u2, u) = (c[0].1.as_vector(), c[1].1.as_vector(), c[2].1.as_vector());
            let diff: f64 = u.iter().zip(u1.iter().zip(&u2)).map(|(s, (x, y))| (s - x - y).powi(2)).sum::<f64>().sqrt();
            let scale = u.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!(diff <= 10.0 * rtol * scale, "{regime}: {diff:e} vs {scale:e}");
        }
    }

    #[test]
    fn regime_parsing() {
        assert_eq!("zero".parse::<RegimeSpec>().unwrap(), RegimeSpec::Zero);
        assert_eq!("inf".parse::<RegimeSpec>().unwrap(), RegimeSpec::Infinite);
        assert_eq!("finite(0.5)".parse::<RegimeSpec>().unwrap(), RegimeSpec::Finite(0.5));
        assert_eq!("2".parse::<RegimeSpec>().unwrap(), RegimeSpec::Finite(2.0));
        assert!("-1".parse::<RegimeSpec>().is_err());
        for r in RegimeSpec::all_for_tests() {
            assert_eq!(r.to_string().parse::<RegimeSpec>().unwrap(), r);
        }
    }
}
