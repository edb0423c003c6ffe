//! Three-dimensional energies of thin plates and recovery sequences.
//!
//! A deformation of the rescaled plate `Ω = ω × (−1/2, 1/2)` is evaluated
//! through `∇_h u = (∇'u | ∂3u / h)` against the frame-indifferent density
//!
//! ```text
//! W(y, z, F) = μ/2 |FᵀF − I|² + λ/4 (tr(FᵀF − I))²,
//! ```
//!
//! whose second-order expansion at the identity is `2μ|sym G|² + λ(tr G)²`.
//!
//! Recovery sequences have the form
//!
//! ```text
//! u^h(x) = u(x') + h x3 n_u(x') + R(x') w(x', x3, x'/ε, x'/ε²),   R = (∇'u | n_u),
//! ```
//!
//! with `w` assembled from the numerical correctors, linear in the local
//! curvature `Π^u(x')`. The cell minimizers have `B = 0` whenever `Q_hom` does
//! not depend on `x3`, so the in-plane shift fields `α` and `g` vanish.

use std::sync::Arc;

use nalgebra::{Matrix3, Matrix3x2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cell_inner::{inner_correctors, qhom_field, InnerCorrectorSet, QhomField};
use crate::cell_outer::finite::FiniteLayout;
use crate::cell_outer::zero::{wavenumber, TrigSpace};
use crate::cell_outer::{effective_form, outer_correctors, EffectiveBendingForm, OuterCorrector, OuterSettings, RegimeSpec};
use crate::error::{Error, Result};
use crate::mesh::quadratic_lagrange;
use crate::microstructure::{make_isotropic, Lame, MicrostructureField};
use crate::plate::{bending_energy, check_isometry, curvature_of, Domain, IsometricSurface, SurfaceKind, ISOMETRY_TOL, QUAD_ORDER};
use crate::quadrature::gauss_on;
use crate::tensor::{
    rank_one_sym_coords, relax_appended_column, relaxation_minimizer_map, relaxed_in_plane_form, third_column_coords,
    QuadForm22, SymMat22, SymMat33, Vector6, SQRT_2,
};

/// `μ/2 |FᵀF − I|² + λ/4 (tr(FᵀF − I))²`.
pub fn density(l: &Lame, f: &Matrix3<f64>) -> f64 {
    let e = f.transpose() * f - Matrix3::identity();
    0.5 * l.mu * e.norm_squared() + 0.25 * l.lambda * e.trace().powi(2)
}

/// The stored energy density with Lamé fields taken from a catalog microstructure.
#[derive(Debug, Clone, PartialEq)]
pub struct NonlinearDensity {
    field: MicrostructureField,
}

impl NonlinearDensity {
    pub fn new(field: MicrostructureField) -> Result<Self> {
        if matches!(field, MicrostructureField::GridData(_)) {
            return Err(Error::Config("grid data carries no nonlinear density; use a catalog field".into()));
        }
        Ok(Self { field })
    }

    pub fn field(&self) -> &MicrostructureField {
        &self.field
    }

    pub fn lame(&self, y: [f64; 2], z: [f64; 2]) -> Lame {
        self.field.lame_at(y, z).expect("catalog field")
    }

    pub fn eval(&self, y: [f64; 2], z: [f64; 2], f: &Matrix3<f64>) -> f64 {
        density(&self.lame(y, z), f)
    }
}

/// Representative `ε(h)` of each regime: `h/γ1`, `h^{3/2}` for `γ1 = ∞`,
/// `h^{2/3}` for `γ1 = 0`. In all three `h/ε² → ∞`.
pub fn epsilon_for(regime: RegimeSpec, h: f64) -> f64 {
    match regime {
        RegimeSpec::Finite(g) => h / g,
        RegimeSpec::Infinite => h.powf(1.5),
        RegimeSpec::Zero => h.powf(2.0 / 3.0),
    }
}

/// Controls of the energy quadrature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyQuadrature {
    /// Gauss points per axis on every smooth sub-interval of a period.
    pub points_per_cell: usize,
    /// Gauss points per thickness layer.
    pub x3_points: usize,
    /// Minimum number of sub-intervals per unit length, for the midsurface.
    pub panels_per_unit: usize,
    /// Largest admissible number of quadrature points.
    pub cap: u64,
}

impl Default for EnergyQuadrature {
    fn default() -> Self {
        Self { points_per_cell: 2, x3_points: 5, panels_per_unit: 8, cap: 200_000_000 }
    }
}

type ValueFn = Arc<dyn Fn([f64; 3]) -> Vector3<f64> + Send + Sync>;
type GradFn = Arc<dyn Fn([f64; 3]) -> Matrix3<f64> + Send + Sync>;

#[derive(Clone)]
enum DeformationMap {
    /// `u` and its full gradient `(∂1u | ∂2u | ∂3u)`.
    Analytic { value: ValueFn, grad: GradFn },
    Recovery { surface: IsometricSurface, data: Arc<RecoveryData>, flat_curvature: bool },
}

/// A deformation of `Ω` together with its thickness `h` and period `ε(h)`.
#[derive(Clone)]
pub struct ScaledDeformation {
    pub h: f64,
    pub epsilon: f64,
    pub domain: Domain,
    map: DeformationMap,
}

impl std::fmt::Debug for ScaledDeformation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let kind = match &self.map {
            DeformationMap::Analytic { .. } => "analytic".to_string(),
            DeformationMap::Recovery { surface, data, .. } => format!("recovery({}, {})", surface.name(), data.regime),
        };
        f.debug_struct("ScaledDeformation")
            .field("h", &self.h)
            .field("epsilon", &self.epsilon)
            .field("map", &kind)
            .finish()
    }
}

impl ScaledDeformation {
    /// A deformation given by closures for `u(x)` and `∇u(x)`.
    pub fn analytic(
        domain: Domain,
        h: f64,
        epsilon: f64,
        value: impl Fn([f64; 3]) -> Vector3<f64> + Send + Sync + 'static,
        grad: impl Fn([f64; 3]) -> Matrix3<f64> + Send + Sync + 'static,
    ) -> Self {
        Self { h, epsilon, domain, map: DeformationMap::Analytic { value: Arc::new(value), grad: Arc::new(grad) } }
    }

    pub fn value(&self, x: [f64; 3]) -> Result<Vector3<f64>> {
        match &self.map {
            DeformationMap::Analytic { value, .. } => Ok(value(x)),
            DeformationMap::Recovery { surface, data, flat_curvature } => {
                let p = RecoveryPoint::new(surface, data, *flat_curvature, [x[0], x[1]], self.h, self.epsilon)?;
                let j = p.corrector(x[2]);
                Ok(p.jet.u + self.h * x[2] * p.n + p.r * j.w)
            }
        }
    }

    /// `∇_h u = (∇'u | ∂3u / h)`.
    pub fn grad_h(&self, x: [f64; 3]) -> Result<Matrix3<f64>> {
        match &self.map {
            DeformationMap::Analytic { grad, .. } => {
                let mut g = grad(x);
                let c = g.column(2) / self.h;
                g.set_column(2, &c);
                Ok(g)
            }
            DeformationMap::Recovery { surface, data, flat_curvature } => {
                let p = RecoveryPoint::new(surface, data, *flat_curvature, [x[0], x[1]], self.h, self.epsilon)?;
                Ok(p.grad_h(x[2]))
            }
        }
    }

    /// Positions inside a period where the map is not smooth, at scales `ε`
    /// and `ε²`, and the thickness layer count.
    fn breaks(&self) -> (Vec<f64>, Vec<f64>, usize) {
        match &self.map {
            DeformationMap::Analytic { .. } => (vec![], vec![], 1),
            DeformationMap::Recovery { data, .. } => data.breaks(data.blend_width(self.h, self.epsilon)),
        }
    }
}

/// Per-load third-column profile at a coarse cell: maps 2×2 coordinates to `b`.
type ColumnMap = Matrix3<f64>;

#[derive(Debug, Clone)]
enum RecoveryKind {
    /// Constant coefficients: `w = h² x3²/2 · b(Π)`.
    Constant { b: [Vector3<f64>; 3] },
    Finite { gamma1: f64, layout: FiniteLayout, phi: [Vec<f64>; 3] },
    Infinite { n: usize, phi: [Vec<f64>; 3], d: [Vector3<f64>; 3] },
    /// The in-plane profile `x3 ξ1` is not realizable by a deformation with
    /// bounded scaled strain (its `∂3` produces strains of order `ε/h`), so
    /// only `η` and the third-column relaxation enter.
    Zero { space: TrigSpace, eta: [Vec<f64>; 3], maps: Vec<ColumnMap>, reduced: Vec<QuadForm22> },
}

/// Corrector data from which recovery sequences are assembled.
#[derive(Debug, Clone)]
pub struct RecoveryData {
    pub regime: RegimeSpec,
    pub microstructure_hash: String,
    kind: RecoveryKind,
    inner: Option<InnerTable>,
}

/// Inner correctors per coarse cell plus the outer strain there, for the
/// `hε² φ2` term.
#[derive(Debug, Clone)]
struct InnerTable {
    n: usize,
    set: InnerCorrectorSet,
    /// `strain[(cell * 3 + load) * stride + s]`: outer strain samples in `x3`.
    strain: Vec<Vector6>,
    stride: usize,
}

impl RecoveryData {
    /// Constant isotropic material: only the optimal third column is needed.
    pub fn constant(lame: Lame, regime: RegimeSpec) -> Result<Self> {
        let q = make_isotropic(lame.mu, lame.lambda)?;
        let mut b = [Vector3::zeros(); 3];
        for (i, bi) in b.iter_mut().enumerate() {
            *bi = relax_appended_column(&q, &SymMat22::basis(i))?.minimizer;
        }
        Ok(Self {
            regime,
            microstructure_hash: MicrostructureField::Constant(lame).hash_hex(),
            kind: RecoveryKind::Constant { b },
            inner: None,
        })
    }

    /// Assembles recovery data from basis correctors `outer[i]` of the loads
    /// `SymMat22::basis(i)`.
    pub fn from_correctors(
        regime: RegimeSpec,
        qf: &QhomField,
        outer: &[OuterCorrector],
        inner: Option<InnerCorrectorSet>,
    ) -> Result<Self> {
        if outer.len() != 3 {
            return Err(Error::MissingCorrector(format!("need 3 basis correctors, got {}", outer.len())));
        }
        for c in outer {
            if c.b().norm() > 1e-8 {
                return Err(Error::UnsupportedRegime(format!(
                    "corrector has in-plane shift |B| = {:e}; recovery needs B = 0",
                    c.b().norm()
                )));
            }
        }
        let n = qf.ny();
        let mismatch = || Error::MissingCorrector(format!("correctors do not match regime {regime}"));
        let kind = match (regime, &outer[0]) {
            (RegimeSpec::Finite(g), OuterCorrector::Finite { layout, .. }) => {
                let mut phi: [Vec<f64>; 3] = Default::default();
                for (i, c) in outer.iter().enumerate() {
                    match c {
                        OuterCorrector::Finite { phi: p, .. } => phi[i] = p.clone(),
                        _ => return Err(mismatch()),
                    }
                }
                RecoveryKind::Finite { gamma1: g, layout: *layout, phi }
            }
            (RegimeSpec::Infinite, OuterCorrector::Infinite { .. }) => {
                let mut phi: [Vec<f64>; 3] = Default::default();
                let mut d = [Vector3::zeros(); 3];
                for (i, c) in outer.iter().enumerate() {
                    match c {
                        OuterCorrector::Infinite { phi: p, d: di, .. } => {
                            phi[i] = p.clone();
                            d[i] = Vector3::from(*di);
                        }
                        _ => return Err(mismatch()),
                    }
                }
                RecoveryKind::Infinite { n, phi, d }
            }
            (RegimeSpec::Zero, OuterCorrector::Zero { space, .. }) => {
                let mut eta: [Vec<f64>; 3] = Default::default();
                for (i, c) in outer.iter().enumerate() {
                    match c {
                        OuterCorrector::Zero { eta: e, .. } => eta[i] = e.clone(),
                        _ => return Err(mismatch()),
                    }
                }
                let maps = qf.forms.iter().map(relaxation_minimizer_map).collect::<Result<Vec<_>>>()?;
                let reduced = qf.forms.iter().map(relaxed_in_plane_form).collect::<Result<Vec<_>>>()?;
                RecoveryKind::Zero { space: (**space).clone(), eta, maps, reduced }
            }
            _ => return Err(mismatch()),
        };
        let mut data = Self { regime, microstructure_hash: qf.provenance.microstructure_hash.clone(), kind, inner: None };
        if let Some(set) = inner.filter(|s| !s.is_trivial()) {
            if set.ny != n {
                return Err(Error::ResolutionMismatch(format!("inner correctors on ny = {}, outer on {n}", set.ny)));
            }
            data.inner = Some(data.inner_table(n, set));
        }
        Ok(data)
    }

    /// Runs the cell problems for `m` and returns recovery data together with
    /// the effective form of the same discretization.
    pub fn compute(
        m: &MicrostructureField,
        regime: RegimeSpec,
        ny: usize,
        nz: usize,
        settings: &OuterSettings,
    ) -> Result<(Self, EffectiveBendingForm)> {
        let qf = match m {
            MicrostructureField::Constant(l) => {
                let mut qf = QhomField::uniform(make_isotropic(l.mu, l.lambda)?, ny);
                qf.provenance.microstructure_hash = m.hash_hex();
                qf
            }
            _ => qhom_field(m, ny, nz, settings.rtol)?,
        };
        Self::compute_with(m, &qf, regime, settings)
    }

    /// As [`RecoveryData::compute`] with `Q_hom` already at hand.
    pub fn compute_with(
        m: &MicrostructureField,
        qf: &QhomField,
        regime: RegimeSpec,
        settings: &OuterSettings,
    ) -> Result<(Self, EffectiveBendingForm)> {
        let form = effective_form(qf, regime, settings)?;
        if let MicrostructureField::Constant(l) = m {
            return Ok((Self::constant(*l, regime)?, form));
        }
        let loads: Vec<SymMat22> = (0..3).map(SymMat22::basis).collect();
        let outer: Vec<OuterCorrector> =
            outer_correctors(qf, regime, settings, &loads)?.into_iter().map(|(_, c)| c).collect();
        let inner = if m.depends_on_z() {
            Some(inner_correctors(m, qf.ny(), qf.provenance.nz, settings.rtol)?)
        } else {
            None
        };
        Ok((Self::from_correctors(regime, qf, &outer, inner)?, form))
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.kind, RecoveryKind::Constant { .. })
    }

    /// Width of the transition between neighbouring cells, as a fraction of
    /// a cell, for the terms built from cellwise data. It shrinks with `h`
    /// while the strains of the transition, of order `ε/ρ` for the inner
    /// term and `h/(ερ)` for the third column at `γ1 = 0`, still vanish.
    pub fn blend_width(&self, h: f64, eps: f64) -> f64 {
        eps.max(h / eps).sqrt().min(1.0)
    }

    fn breaks(&self, rho: f64) -> (Vec<f64>, Vec<f64>, usize) {
        let lines = |n: usize, shift: f64| (0..n).map(|i| (i as f64 + shift) / n as f64 - 0.5).collect::<Vec<_>>();
        let ramps = |n: usize| {
            let mut v = lines(n, 0.5 * rho);
            v.extend(lines(n, 1.0 - 0.5 * rho));
            v
        };
        let (mut y, layers) = match &self.kind {
            RecoveryKind::Constant { .. } => (vec![], 1),
            RecoveryKind::Finite { layout, .. } => (lines(layout.n, 0.0), layout.nx3),
            RecoveryKind::Infinite { n, .. } => (lines(*n, 0.0), 1),
            RecoveryKind::Zero { space, .. } => (ramps(space.ny), 1),
        };
        let mut z = vec![];
        if let Some(t) = &self.inner {
            y.extend(ramps(t.n));
            z = lines(t.set.nz, 0.0);
        }
        (y, z, layers)
    }

    /// At `γ1 = 0`: `form` with its matrices replaced by those of
    /// [`RecoveryData::zero_regime_realized`]. `None` in the other regimes.
    pub fn zero_regime_realized_form(&self, form: &EffectiveBendingForm) -> Option<EffectiveBendingForm> {
        let f = |a: &SymMat22| self.zero_regime_realized(a);
        let mut m = Matrix3::zeros();
        for i in 0..3 {
            m[(i, i)] = f(&SymMat22::basis(i))?;
        }
        for i in 0..3 {
            for j in 0..i {
                let both = f(&SymMat22::basis(i).add(&SymMat22::basis(j)))?;
                m[(i, j)] = 0.5 * (both - m[(i, i)] - m[(j, j)]);
                m[(j, i)] = m[(i, j)];
            }
        }
        Some(EffectiveBendingForm::from_raw(m / 12.0, form.regime, form.provenance.clone()))
    }

    /// At `γ1 = 0`: the fjm-normalized density `∫ Q̄2(y, A + ∇²η_A) dy` that
    /// the recovery sequence attains, with `η_A` the computed corrector and
    /// the rotational in-plane part left out. `None` in the other regimes.
    pub fn zero_regime_realized(&self, a: &SymMat22) -> Option<f64> {
        let RecoveryKind::Zero { space, eta, reduced, .. } = &self.kind else {
            return None;
        };
        let n = space.ny;
        let coeffs: Vec<f64> = (0..eta[0].len()).map(|k| (0..3).map(|i| a.coords()[i] * eta[i][k]).sum()).collect();
        let h = 1.0 / n as f64;
        let mut total = 0.0;
        for c in 0..n * n {
            let lo = [(c / n) as f64 * h - 0.5, (c % n) as f64 * h - 0.5];
            for &(y1, w1) in &gauss_on(8, lo[0], lo[0] + h) {
                for &(y2, w2) in &gauss_on(8, lo[1], lo[1] + h) {
                    let j = trig_jet(space, &coeffs, [y1, y2]);
                    let s = a.coords() + Vector3::new(j.d2[0], j.d2[2], SQRT_2 * j.d2[1]);
                    total += w1 * w2 * reduced[c].eval_coords(&s);
                }
            }
        }
        Some(total)
    }

    /// Samples of the outer strain `C` at every coarse cell center.
    fn inner_table(&self, n: usize, set: InnerCorrectorSet) -> InnerTable {
        let center = |c: usize| [(c / n) as f64 / n as f64 + 0.5 / n as f64 - 0.5, (c % n) as f64 / n as f64 + 0.5 / n as f64 - 0.5];
        let (stride, samples): (usize, Vec<f64>) = match &self.kind {
            RecoveryKind::Finite { layout, .. } => {
                // Three samples per layer at t = 0, 1/2, 1; C is quadratic there.
                let h3 = 1.0 / layout.nx3 as f64;
                let s: Vec<f64> = (0..layout.nx3).flat_map(|l| [0.0, 0.5, 1.0].map(|t| (l as f64 + t) * h3 - 0.5)).collect();
                (s.len(), s)
            }
            _ => (1, vec![1.0]),
        };
        let mut strain = Vec::with_capacity(n * n * 3 * stride);
        for c in 0..n * n {
            let y = center(c);
            for load in 0..3 {
                for (si, &x3) in samples.iter().enumerate() {
                    let layer = Some(si / 3);
                    strain.push(self.outer_strain(load, x3, y, layer));
                }
            }
        }
        InnerTable { n, set, strain, stride }
    }

    /// The outer strain `C = ι(x3 A) + corrector strain` of basis load `i`.
    /// For the affine-in-`x3` regimes it is evaluated at `x3 = 1` (so it is
    /// the slope). `layer` pins the thickness element on layer boundaries.
    fn outer_strain(&self, i: usize, x3: f64, y: [f64; 2], layer: Option<usize>) -> Vector6 {
        let a = SymMat33::embed(&SymMat22::basis(i)).0;
        match &self.kind {
            RecoveryKind::Constant { .. } => unreachable!("constant data has no inner table"),
            RecoveryKind::Finite { gamma1, layout, phi } => {
                let e = finite_eval(layout, &phi[i], x3, y, layer);
                let mut c = a * x3;
                for k in 0..3 {
                    c += rank_one_sym_coords(k, &[e.grad[k][0], e.grad[k][1], e.d3[k] / gamma1]);
                }
                c
            }
            RecoveryKind::Infinite { n, phi, d } => {
                let (_, g) = node_field_jet(&phi[i], *n, y);
                let mut c = a;
                for k in 0..3 {
                    c += rank_one_sym_coords(k, &[g[k][0], g[k][1], d[i][k]]);
                }
                c
            }
            RecoveryKind::Zero { space, eta, maps, .. } => {
                let j = trig_jet(space, &eta[i], y);
                let s = SymMat22::basis(i).coords() + Vector3::new(j.d2[0], j.d2[2], SQRT_2 * j.d2[1]);
                let m = maps[cell_index(y, space.ny)];
                SymMat33::embed(&SymMat22::from_coords(&s)).0 + third_column_coords(&(m * s))
            }
        }
    }
}

/// Builds the recovery deformation for midsurface `u` at thickness `h`.
pub fn recovery_sequence(u: &IsometricSurface, data: &Arc<RecoveryData>, h: f64) -> Result<ScaledDeformation> {
    if !(h > 0.0 && h < 1.0) {
        return Err(Error::Config(format!("thickness h = {h} must lie in (0, 1)")));
    }
    let report = check_isometry(u, 33, ISOMETRY_TOL);
    if !report.passed {
        return Err(Error::NotIsometric(report));
    }
    let flat_curvature = matches!(u.kind, SurfaceKind::Flat | SurfaceKind::Cylinder { .. });
    Ok(ScaledDeformation {
        h,
        epsilon: epsilon_for(data.regime, h),
        domain: u.domain.clone(),
        map: DeformationMap::Recovery { surface: u.clone(), data: Arc::clone(data), flat_curvature },
    })
}

/// `w`, its total in-plane derivative and `∂3 w` at one point.
#[derive(Debug, Clone, Copy)]
struct WJet {
    w: Vector3<f64>,
    dx: Matrix3x2<f64>,
    d3: Vector3<f64>,
}

impl WJet {
    fn zero() -> Self {
        Self { w: Vector3::zeros(), dx: Matrix3x2::zeros(), d3: Vector3::zeros() }
    }
}

/// Midsurface quantities frozen at one `x'`.
struct RecoveryPoint<'a> {
    data: &'a RecoveryData,
    jet: crate::plate::SurfaceJet,
    n: Vector3<f64>,
    dn: [Vector3<f64>; 2],
    r: Matrix3<f64>,
    dr: [Matrix3<f64>; 2],
    c: Vector3<f64>,
    dc: [Vector3<f64>; 2],
    y: [f64; 2],
    z: [f64; 2],
    h: f64,
    eps: f64,
    rho: f64,
}

const SLOW_STEP: f64 = 1e-5;

impl<'a> RecoveryPoint<'a> {
    fn new(
        surface: &IsometricSurface,
        data: &'a RecoveryData,
        flat_curvature: bool,
        x: [f64; 2],
        h: f64,
        eps: f64,
    ) -> Result<Self> {
        let jet = surface.jet(x)?;
        let n = jet.normal();
        let dn = jet.normal_derivatives();
        let r = Matrix3::from_columns(&[jet.du[0], jet.du[1], n]);
        let dr = [0, 1].map(|a| Matrix3::from_columns(&[jet.ddu[0][a], jet.ddu[1][a], dn[a]]));
        let c = curvature_of(&jet, x).pi.coords();
        let mut dc = [Vector3::zeros(); 2];
        if !flat_curvature {
            for (a, dca) in dc.iter_mut().enumerate() {
                let mut p = x;
                let mut m = x;
                p[a] += SLOW_STEP;
                m[a] -= SLOW_STEP;
                let cp = curvature_of(&surface.jet(p)?, p).pi.coords();
                let cm = curvature_of(&surface.jet(m)?, m).pi.coords();
                *dca = (cp - cm) / (2.0 * SLOW_STEP);
            }
        }
        let y = [x[0] / eps, x[1] / eps];
        let z = [x[0] / (eps * eps), x[1] / (eps * eps)];
        Ok(Self { data, jet, n, dn, r, dr, c, dc, y, z, h, eps, rho: data.blend_width(h, eps) })
    }

    fn grad_h(&self, x3: f64) -> Matrix3<f64> {
        let j = self.corrector(x3);
        let mut f = Matrix3::zeros();
        for a in 0..2 {
            let col = self.jet.du[a] + self.h * x3 * self.dn[a] + self.dr[a] * j.w + self.r * j.dx.column(a);
            f.set_column(a, &col);
        }
        f.set_column(2, &(self.n + self.r * j.d3 / self.h));
        f
    }

    /// `w = Σ_i c_i(x') W_i(x3, y, z)` with total derivatives.
    fn corrector(&self, x3: f64) -> WJet {
        let mut out = WJet::zero();
        for i in 0..3 {
            let (ci, dci) = (self.c[i], [self.dc[0][i], self.dc[1][i]]);
            if ci == 0.0 && dci == [0.0, 0.0] {
                continue;
            }
            let wi = self.load_jet(i, x3);
            out.w += ci * wi.w;
            out.dx += ci * wi.dx;
            out.d3 += ci * wi.d3;
            for a in 0..2 {
                let col = out.dx.column(a) + dci[a] * wi.w;
                out.dx.set_column(a, &col);
            }
        }
        out
    }

    /// Corrector term of basis load `i`; `dx` holds only the fast derivatives.
    fn load_jet(&self, i: usize, x3: f64) -> WJet {
        let (h, eps) = (self.h, self.eps);
        let y = self.y;
        let mut out = WJet::zero();
        match &self.data.kind {
            RecoveryKind::Constant { b } => {
                out.w = 0.5 * h * h * x3 * x3 * b[i];
                out.d3 = h * h * x3 * b[i];
            }
            RecoveryKind::Finite { layout, phi, .. } => {
                let e = finite_eval(layout, &phi[i], x3, y, None);
                let s = h * eps;
                out.w = s * Vector3::from(e.value);
                for k in 0..3 {
                    out.dx[(k, 0)] = s * e.grad[k][0] / eps;
                    out.dx[(k, 1)] = s * e.grad[k][1] / eps;
                }
                out.d3 = s * Vector3::from(e.d3);
            }
            RecoveryKind::Infinite { n, phi, d } => {
                let (v, g) = node_field_jet(&phi[i], *n, y);
                let s = h * eps;
                out.w = s * x3 * Vector3::from(v) + 0.5 * h * h * x3 * x3 * d[i];
                for k in 0..3 {
                    out.dx[(k, 0)] = s * x3 * g[k][0] / eps;
                    out.dx[(k, 1)] = s * x3 * g[k][1] / eps;
                }
                out.d3 = s * Vector3::from(v) + h * h * x3 * d[i];
            }
            RecoveryKind::Zero { space, eta, maps, .. } => {
                let j = trig_jet(space, &eta[i], y);
                // S = A + ∇²η in 2×2 coordinates, and its y-derivatives.
                let s = SymMat22::basis(i).coords() + Vector3::new(j.d2[0], j.d2[2], SQRT_2 * j.d2[1]);
                let ds = [
                    Vector3::new(j.d3[0], j.d3[2], SQRT_2 * j.d3[1]),
                    Vector3::new(j.d3[1], j.d3[3], SQRT_2 * j.d3[2]),
                ];
                let (cells, wts, grads) = ramp_weights(y, space.ny, self.rho);
                let mut m = Matrix3::zeros();
                let mut dm = [Matrix3::zeros(); 2];
                for q in 0..4 {
                    let mc = &maps[cells[q]];
                    m += wts[q] * mc;
                    dm[0] += grads[q][0] * mc;
                    dm[1] += grads[q][1] * mc;
                }
                let g = m * s;
                let grad_eta = Vector3::new(j.d1[0], j.d1[1], 0.0);
                let hess = [Vector3::new(j.d2[0], j.d2[1], 0.0), Vector3::new(j.d2[1], j.d2[2], 0.0)];
                let q2 = 0.5 * h * h * x3 * x3;
                out.w = -eps * eps * j.v * Vector3::z() + h * eps * x3 * grad_eta + q2 * g;
                for a in 0..2 {
                    let dg = dm[a] * s + m * ds[a];
                    let col = -eps * eps * j.d1[a] * Vector3::z() + h * eps * x3 * hess[a] + q2 * dg;
                    out.dx.set_column(a, &(col / eps));
                }
                out.d3 = h * eps * grad_eta + h * h * x3 * g;
            }
        }
        if let Some(t) = &self.data.inner {
            self.add_inner(t, i, x3, &mut out);
        }
        out
    }

    /// `hε² Σ_c N_c(y) φ2(C_c(x3))(z)` over the cells near `y`.
    fn add_inner(&self, t: &InnerTable, i: usize, x3: f64, out: &mut WJet) {
        let (h, eps) = (self.h, self.eps);
        let s = h * eps * eps;
        let (cells, wts, grads) = ramp_weights(self.y, t.n, self.rho);
        for q in 0..4 {
            let basis = &t.set.basis[t.set.slice_of_node[cells[q]] as usize];
            if basis.is_empty() {
                continue;
            }
            let (c, dc) = self.inner_strain(t, cells[q], i, x3);
            let mut v = Vector3::zeros();
            let mut dz = Matrix3x2::zeros();
            let mut d3 = Vector3::zeros();
            for (k, field) in basis.iter().enumerate() {
                if c[k] == 0.0 && dc[k] == 0.0 {
                    continue;
                }
                let (fv, fg) = node_field_jet(field, t.set.nz, self.z);
                for comp in 0..3 {
                    v[comp] += c[k] * fv[comp];
                    d3[comp] += dc[k] * fv[comp];
                    dz[(comp, 0)] += c[k] * fg[comp][0];
                    dz[(comp, 1)] += c[k] * fg[comp][1];
                }
            }
            out.w += s * wts[q] * v;
            out.d3 += s * wts[q] * d3;
            for a in 0..2 {
                let col = out.dx.column(a) + s * (grads[q][a] * v / eps + wts[q] * dz.column(a) / (eps * eps));
                out.dx.set_column(a, &col);
            }
        }
    }

    /// Outer strain at a cell center and its `x3` derivative.
    fn inner_strain(&self, t: &InnerTable, cell: usize, load: usize, x3: f64) -> (Vector6, Vector6) {
        let base = (cell * 3 + load) * t.stride;
        match &self.data.kind {
            RecoveryKind::Finite { layout, .. } => {
                let (l, tt) = layer_of(layout.nx3, x3);
                let (lv, ld) = quadratic_lagrange(tt);
                let h3 = 1.0 / layout.nx3 as f64;
                let mut c = Vector6::zeros();
                let mut dc = Vector6::zeros();
                for xi in 0..3 {
                    let sample = &t.strain[base + 3 * l + xi];
                    c += lv[xi] * sample;
                    dc += ld[xi] / h3 * sample;
                }
                (c, dc)
            }
            _ => {
                let slope = t.strain[base];
                (x3 * slope, slope)
            }
        }
    }
}

fn layer_of(nx3: usize, x3: f64) -> (usize, f64) {
    let s = (x3 + 0.5) * nx3 as f64;
    let l = (s.floor().max(0.0) as usize).min(nx3 - 1);
    (l, s - l as f64)
}

/// Locates `y` on the periodic corner-node grid: element corner nodes, shape
/// values and physical gradients, ordered `(0,0), (1,0), (0,1), (1,1)`.
fn node_weights(y: [f64; 2], n: usize, shift: f64) -> ([usize; 4], [f64; 4], [[f64; 2]; 4]) {
    let nf = n as f64;
    let s = [(y[0] + 0.5 - shift).rem_euclid(1.0) * nf, (y[1] + 0.5 - shift).rem_euclid(1.0) * nf];
    let i = [(s[0].floor() as usize).min(n - 1), (s[1].floor() as usize).min(n - 1)];
    let t = [s[0] - i[0] as f64, s[1] - i[1] as f64];
    let idx = |a: usize, b: usize| ((i[0] + a) % n) * n + (i[1] + b) % n;
    (
        [idx(0, 0), idx(1, 0), idx(0, 1), idx(1, 1)],
        [(1.0 - t[0]) * (1.0 - t[1]), t[0] * (1.0 - t[1]), (1.0 - t[0]) * t[1], t[0] * t[1]],
        [
            [-(1.0 - t[1]) * nf, -(1.0 - t[0]) * nf],
            [(1.0 - t[1]) * nf, -t[0] * nf],
            [-t[1] * nf, (1.0 - t[0]) * nf],
            [t[1] * nf, t[0] * nf],
        ],
    )
}

/// A partition of unity subordinate to the `n × n` cells: weight one inside
/// a cell, linear ramps of width `rho / n` across cell boundaries. Returns the
/// four cells touching `y` with weights and gradients. `rho = 1` gives the
/// bilinear interpolant between cell centers.
fn ramp_weights(y: [f64; 2], n: usize, rho: f64) -> ([usize; 4], [f64; 4], [[f64; 2]; 4]) {
    let axis = |v: f64| {
        let s = (v + 0.5).rem_euclid(1.0) * n as f64;
        let i = (s.floor() as usize).min(n - 1);
        let t = s - i as f64;
        // (lower cell, upper cell, weight of upper, d weight / dv)
        if t < 0.5 * rho {
            ((i + n - 1) % n, i, 0.5 + t / rho, n as f64 / rho)
        } else if t > 1.0 - 0.5 * rho {
            (i, (i + 1) % n, 0.5 + (t - 1.0) / rho, n as f64 / rho)
        } else {
            (i, (i + 1) % n, 0.0, 0.0)
        }
    };
    let (a0, a1, wa, da) = axis(y[0]);
    let (b0, b1, wb, db) = axis(y[1]);
    (
        [a0 * n + b0, a1 * n + b0, a0 * n + b1, a1 * n + b1],
        [(1.0 - wa) * (1.0 - wb), wa * (1.0 - wb), (1.0 - wa) * wb, wa * wb],
        [[-da * (1.0 - wb), -(1.0 - wa) * db], [da * (1.0 - wb), -wa * db], [-da * wb, (1.0 - wa) * db], [da * wb, wa * db]],
    )
}

fn cell_index(y: [f64; 2], n: usize) -> usize {
    let i = |v: f64| (((v + 0.5).rem_euclid(1.0) * n as f64).floor() as usize).min(n - 1);
    i(y[0]) * n + i(y[1])
}

/// Value and gradient of a three-component node-major bilinear field.
fn node_field_jet(field: &[f64], n: usize, y: [f64; 2]) -> ([f64; 3], [[f64; 2]; 3]) {
    let (nodes, w, g) = node_weights(y, n, 0.0);
    let mut v = [0.0; 3];
    let mut grad = [[0.0; 2]; 3];
    for q in 0..4 {
        for k in 0..3 {
            let f = field[3 * nodes[q] + k];
            v[k] += w[q] * f;
            grad[k][0] += g[q][0] * f;
            grad[k][1] += g[q][1] * f;
        }
    }
    (v, grad)
}

struct FiniteEval {
    value: [f64; 3],
    grad: [[f64; 2]; 3],
    d3: [f64; 3],
}

/// `φ1` on the finite-regime layout at `(x3, y)`.
fn finite_eval(layout: &FiniteLayout, phi: &[f64], x3: f64, y: [f64; 2], layer: Option<usize>) -> FiniteEval {
    let (l, t) = match layer {
        Some(l) => (l, (x3 + 0.5) * layout.nx3 as f64 - l as f64),
        None => layer_of(layout.nx3, x3),
    };
    let (lv, ld) = quadratic_lagrange(t);
    let h3 = 1.0 / layout.nx3 as f64;
    let (nodes, w, g) = node_weights(y, layout.n, 0.0);
    let mut e = FiniteEval { value: [0.0; 3], grad: [[0.0; 2]; 3], d3: [0.0; 3] };
    for xi in 0..3 {
        for q in 0..4 {
            for k in 0..3 {
                let f = phi[layout.dof(2 * l + xi, nodes[q], k)];
                e.value[k] += lv[xi] * w[q] * f;
                e.grad[k][0] += lv[xi] * g[q][0] * f;
                e.grad[k][1] += lv[xi] * g[q][1] * f;
                e.d3[k] += ld[xi] / h3 * w[q] * f;
            }
        }
    }
    e
}

/// Derivatives of a trigonometric scalar field up to third order.
struct TrigJet {
    v: f64,
    /// `(∂1, ∂2)`
    d1: [f64; 2],
    /// `(∂11, ∂12, ∂22)`
    d2: [f64; 3],
    /// `(∂111, ∂112, ∂122, ∂222)`
    d3: [f64; 4],
}

fn trig_basis_derivs(i: usize, y: f64) -> [f64; 4] {
    let k = 2.0 * std::f64::consts::PI * wavenumber(i) as f64;
    if i == 0 {
        return [1.0, 0.0, 0.0, 0.0];
    }
    let (s, c) = (k * y).sin_cos();
    let r = SQRT_2;
    if i % 2 == 1 {
        [r * c, -r * k * s, -r * k * k * c, r * k * k * k * s]
    } else {
        [r * s, r * k * c, -r * k * k * s, -r * k * k * k * c]
    }
}

fn trig_jet(space: &TrigSpace, coeffs: &[f64], y: [f64; 2]) -> TrigJet {
    let p = space.p;
    let a: Vec<[f64; 4]> = (0..p).map(|i| trig_basis_derivs(i, y[0])).collect();
    let b: Vec<[f64; 4]> = (0..p).map(|i| trig_basis_derivs(i, y[1])).collect();
    let mut j = TrigJet { v: 0.0, d1: [0.0; 2], d2: [0.0; 3], d3: [0.0; 4] };
    for i in 0..p {
        for k in 0..p {
            let c = coeffs[i * p + k];
            if c == 0.0 {
                continue;
            }
            let (f, g) = (&a[i], &b[k]);
            j.v += c * f[0] * g[0];
            j.d1[0] += c * f[1] * g[0];
            j.d1[1] += c * f[0] * g[1];
            j.d2[0] += c * f[2] * g[0];
            j.d2[1] += c * f[1] * g[1];
            j.d2[2] += c * f[0] * g[2];
            j.d3[0] += c * f[3] * g[0];
            j.d3[1] += c * f[2] * g[1];
            j.d3[2] += c * f[1] * g[2];
            j.d3[3] += c * f[0] * g[3];
        }
    }
    j
}

/// Gauss nodes on `[a, b]` cut at uniform panels and at every periodic
/// break; breaks are cell coordinates in `[-1/2, 1/2)` of a period.
fn axis_rule(
    a: f64,
    b: f64,
    periodic: &[(f64, Vec<f64>)],
    panels_per_unit: usize,
    points: usize,
) -> Vec<(f64, f64)> {
    let mut cuts = vec![a, b];
    let panels = (((b - a) * panels_per_unit as f64).ceil() as usize).max(1);
    cuts.extend((1..panels).map(|i| a + (b - a) * i as f64 / panels as f64));
    for (period, pos) in periodic {
        if pos.is_empty() {
            continue;
        }
        let k0 = (a / period).floor() as i64 - 1;
        let k1 = (b / period).ceil() as i64 + 1;
        for k in k0..=k1 {
            for s in pos {
                let x = period * (k as f64 + s);
                if x > a && x < b {
                    cuts.push(x);
                }
            }
        }
    }
    cuts.sort_by(|p, q| p.partial_cmp(q).unwrap());
    cuts.dedup_by(|p, q| (*p - *q).abs() < 1e-14 * (1.0 + q.abs()));
    cuts.windows(2).flat_map(|w| gauss_on(points, w[0], w[1])).collect()
}

fn merge(mut a: Vec<f64>, b: &[f64]) -> Vec<f64> {
    a.extend_from_slice(b);
    a.sort_by(|p, q| p.partial_cmp(q).unwrap());
    a.dedup_by(|p, q| (*p - *q).abs() < 1e-14);
    a
}

/// `E^h(u) = ∫_Ω W(x'/ε, x'/ε², ∇_h u) dx` by tensor Gauss quadrature refined
/// at every jump of the coefficients and of the deformation, at both scales.
pub fn three_d_energy(d: &ScaledDeformation, w: &NonlinearDensity, quad: &EnergyQuadrature) -> Result<f64> {
    let eps = d.epsilon;
    let (def_y, def_z, layers) = d.breaks();
    let (jy, jz) = w.field().jumps();
    let uniform = vec![-0.5, -0.25, 0.0, 0.25];
    // Breaks are measured from the start of a period at `-1/2`.
    let scale_breaks = |deformation: &[f64], jumps: &[f64], depends: bool| {
        let mut b = merge(deformation.to_vec(), jumps);
        if depends {
            b = merge(b, &uniform);
        }
        b
    };
    let periodic = |axis: usize| {
        vec![
            (eps, scale_breaks(&def_y, &jy[axis], w.field().depends_on_y())),
            (eps * eps, scale_breaks(&def_z, &jz[axis], w.field().depends_on_z())),
        ]
    };
    let x3_rule: Vec<(f64, f64)> = (0..layers)
        .flat_map(|l| gauss_on(quad.x3_points, l as f64 / layers as f64 - 0.5, (l + 1) as f64 / layers as f64 - 0.5))
        .collect();
    let mut rules = Vec::new();
    let mut needed: u64 = 0;
    for r in &d.domain.rects {
        let rx = axis_rule(r.lo[0], r.hi[0], &periodic(0), quad.panels_per_unit, quad.points_per_cell);
        let ry = axis_rule(r.lo[1], r.hi[1], &periodic(1), quad.panels_per_unit, quad.points_per_cell);
        needed = needed.saturating_add((rx.len() as u64) * (ry.len() as u64) * x3_rule.len() as u64);
        if needed > quad.cap {
            return Err(Error::ResolutionCap { needed, cap: quad.cap });
        }
        rules.push((rx, ry));
    }
    let mut total = 0.0;
    for (rx, ry) in &rules {
        let rows: Vec<f64> = rx
            .par_iter()
            .map(|&(x1, w1)| -> Result<f64> {
                let mut row = 0.0;
                for &(x2, w2) in ry {
                    let y = [x1 / eps, x2 / eps];
                    let z = [x1 / (eps * eps), x2 / (eps * eps)];
                    let lame = w.lame(y, z);
                    let mut col = 0.0;
                    match &d.map {
                        DeformationMap::Recovery { surface, data, flat_curvature } => {
                            let p = RecoveryPoint::new(surface, data, *flat_curvature, [x1, x2], d.h, eps)?;
                            for &(x3, w3) in &x3_rule {
                                col += w3 * density(&lame, &p.grad_h(x3));
                            }
                        }
                        DeformationMap::Analytic { .. } => {
                            for &(x3, w3) in &x3_rule {
                                col += w3 * density(&lame, &d.grad_h([x1, x2, x3])?);
                            }
                        }
                    }
                    row += w2 * col;
                }
                Ok(w1 * row)
            })
            .collect::<Result<_>>()?;
        total += rows.iter().sum::<f64>();
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaRow {
    pub h: f64,
    pub epsilon: f64,
    pub energy_over_h2: f64,
    pub limit: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GammaStudy {
    pub regime: RegimeSpec,
    pub rows: Vec<GammaRow>,
    /// Whether the gap column is non-increasing as `h` decreases.
    pub monotone: bool,
}

pub const GAMMA_CSV_HEADER: &str = "h,epsilon,energy_over_h2,limit,gap";

impl GammaStudy {
    pub fn to_csv(&self) -> String {
        let mut s = format!("{GAMMA_CSV_HEADER}\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n",
                r.h, r.epsilon, r.energy_over_h2, r.limit, r.gap
            ));
        }
        s
    }
}

/// Gaps `|E^h(u^h)/h² − (1/12)∫ Q̄(Π^u)|` along a decreasing list of
/// thicknesses.
pub fn gamma_slope_study(
    u: &IsometricSurface,
    data: &Arc<RecoveryData>,
    form: &EffectiveBendingForm,
    h_list: &[f64],
    w: &NonlinearDensity,
    quad: &EnergyQuadrature,
) -> Result<GammaStudy> {
    if h_list.is_empty() || h_list.windows(2).any(|p| p[1] >= p[0]) {
        return Err(Error::Config("h_list must be non-empty and strictly decreasing".into()));
    }
    if form.regime != data.regime {
        return Err(Error::Config(format!("form regime {} differs from corrector regime {}", form.regime, data.regime)));
    }
    if w.field().hash_hex() != data.microstructure_hash {
        return Err(Error::Config("density and correctors come from different microstructures".into()));
    }
    let limit = bending_energy(u, form, QUAD_ORDER)?;
    let rows: Vec<GammaRow> = h_list
        .par_iter()
        .map(|&h| {
            let d = recovery_sequence(u, data, h)?;
            let e = three_d_energy(&d, w, quad)? / (h * h);
            Ok(GammaRow { h, epsilon: d.epsilon, energy_over_h2: e, limit, gap: (e - limit).abs() })
        })
        .collect::<Result<_>>()?;
    let slack = 1e-12 * limit.abs().max(1e-300);
    let monotone = rows.windows(2).all(|p| p[1].gap <= p[0].gap + slack);
    Ok(GammaStudy { regime: data.regime, rows, monotone })
}
