//! Midsurface geometry and the limit plate energy `(1/12) ∫_ω Q̄(Π^u)`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cell_outer::EffectiveBendingForm;
use crate::error::{Error, Result};
use crate::quadrature::gauss_on;
use crate::tensor::SymMat22;

/// Default tolerance on the metric residual `|∂_αu·∂_βu − δ_αβ|`.
pub const ISOMETRY_TOL: f64 = 1e-8;
/// Default Gauss points per axis per unit length.
pub const QUAD_ORDER: usize = 8;
/// Central-difference step of the derivative fallback.
pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
}

impl Rect {
    pub fn new(lo: [f64; 2], hi: [f64; 2]) -> Self {
        assert!(lo[0] < hi[0] && lo[1] < hi[1], "empty rectangle");
        Self { lo, hi }
    }

    pub fn unit() -> Self {
        Self::new([0.0, 0.0], [1.0, 1.0])
    }

    pub fn area(&self) -> f64 {
        (self.hi[0] - self.lo[0]) * (self.hi[1] - self.lo[1])
    }

    pub fn contains(&self, x: [f64; 2]) -> bool {
        let slack = 1e-12;
        (0..2).all(|i| x[i] >= self.lo[i] - slack && x[i] <= self.hi[i] + slack)
    }
}

/// A finite union of axis-aligned rectangles with disjoint interiors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub rects: Vec<Rect>,
}

impl Domain {
    pub fn unit_square() -> Self {
        Self { rects: vec![Rect::unit()] }
    }

    pub fn rect(lo: [f64; 2], hi: [f64; 2]) -> Self {
        Self { rects: vec![Rect::new(lo, hi)] }
    }

    pub fn area(&self) -> f64 {
        self.rects.iter().map(Rect::area).sum()
    }

    pub fn contains(&self, x: [f64; 2]) -> bool {
        self.rects.iter().any(|r| r.contains(x))
    }

    /// Splits every rectangle into `k × k` congruent pieces.
    pub fn subdivide(&self, k: usize) -> Self {
        let mut rects = Vec::with_capacity(self.rects.len() * k * k);
        for r in &self.rects {
            let dx = (r.hi[0] - r.lo[0]) / k as f64;
            let dy = (r.hi[1] - r.lo[1]) / k as f64;
            for i in 0..k {
                for j in 0..k {
                    let lo = [r.lo[0] + i as f64 * dx, r.lo[1] + j as f64 * dy];
                    rects.push(Rect::new(lo, [lo[0] + dx, lo[1] + dy]));
                }
            }
        }
        Self { rects }
    }

    /// Tensor Gauss points with `order` points per axis per unit length
    /// (at least `order` per rectangle side).
    pub fn gauss_points(&self, order: usize) -> Vec<([f64; 2], f64)> {
        let mut pts = Vec::new();
        for r in &self.rects {
            let panels = |a: f64, b: f64| ((b - a).ceil() as usize).max(1);
            let (px, py) = (panels(r.lo[0], r.hi[0]), panels(r.lo[1], r.hi[1]));
            let hx = (r.hi[0] - r.lo[0]) / px as f64;
            let hy = (r.hi[1] - r.lo[1]) / py as f64;
            for i in 0..px {
                let gx = gauss_on(order, r.lo[0] + i as f64 * hx, r.lo[0] + (i + 1) as f64 * hx);
                for j in 0..py {
                    let gy = gauss_on(order, r.lo[1] + j as f64 * hy, r.lo[1] + (j + 1) as f64 * hy);
                    for &(x, wx) in &gx {
                        for &(y, wy) in &gy {
                            pts.push(([x, y], wx * wy));
                        }
                    }
                }
            }
        }
        pts
    }
}

/// Value, first and second derivatives of a parametrization at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceJet {
    pub u: Vector3<f64>,
    /// `[∂_1u, ∂_2u]`
    pub du: [Vector3<f64>; 2],
    /// `ddu[α][β] = ∂²_{αβ}u`
    pub ddu: [[Vector3<f64>; 2]; 2],
}

impl SurfaceJet {
    /// `n_u = ∂_1u ∧ ∂_2u` (unit only at isometric points).
    pub fn normal(&self) -> Vector3<f64> {
        self.du[0].cross(&self.du[1])
    }

    /// `∂_α n_u`, from the product rule.
    pub fn normal_derivatives(&self) -> [Vector3<f64>; 2] {
        [0, 1].map(|a| self.ddu[0][a].cross(&self.du[1]) + self.du[0].cross(&self.ddu[1][a]))
    }

    fn transformed(&self, r: &Matrix3<f64>, c: &Vector3<f64>) -> Self {
        let m = |v: &Vector3<f64>| r * v;
        Self {
            u: r * self.u + c,
            du: [m(&self.du[0]), m(&self.du[1])],
            ddu: [[m(&self.ddu[0][0]), m(&self.ddu[0][1])], [m(&self.ddu[1][0]), m(&self.ddu[1][1])]],
        }
    }
}

type PointFn<T> = Arc<dyn Fn([f64; 2]) -> T + Send + Sync>;

/// A user parametrization; missing derivatives fall back to central
/// differences with step [`FD_STEP`] (first derivatives lose about 1e-10,
/// second derivatives about 1e-6 in absolute accuracy).
#[derive(Clone)]
pub struct ExprSurface {
    pub value: PointFn<Vector3<f64>>,
    pub first: Option<PointFn<[Vector3<f64>; 2]>>,
    pub second: Option<PointFn<[[Vector3<f64>; 2]; 2]>>,
}

impl fmt::Debug for ExprSurface {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ExprSurface")
            .field("first", &self.first.is_some())
            .field("second", &self.second.is_some())
            .finish()
    }
}

impl ExprSurface {
    fn jet(&self, x: [f64; 2]) -> SurfaceJet {
        let h = FD_STEP;
        let u = |a: f64, b: f64| (self.value)([x[0] + a, x[1] + b]);
        let du = match &self.first {
            Some(f) => f(x),
            None => [(u(h, 0.0) - u(-h, 0.0)) / (2.0 * h), (u(0.0, h) - u(0.0, -h)) / (2.0 * h)],
        };
        let ddu = match &self.second {
            Some(f) => f(x),
            None => {
                let c = u(0.0, 0.0);
                let d11 = (u(h, 0.0) - 2.0 * c + u(-h, 0.0)) / (h * h);
                let d22 = (u(0.0, h) - 2.0 * c + u(0.0, -h)) / (h * h);
                let d12 = (u(h, h) - u(h, -h) - u(-h, h) + u(-h, -h)) / (4.0 * h * h);
                [[d11, d12], [d12, d22]]
            }
        };
        SurfaceJet { u: u(0.0, 0.0), du, ddu }
    }
}

#[derive(Debug, Clone)]
pub enum SurfaceKind {
    /// `(x1, x2, 0)`
    Flat,
    /// `(r sin(x1/r), x2, r cos(x1/r))`
    Cylinder { radius: f64 },
    /// `(x1, x2, c·x1²)`; not an isometry unless `c = 0`.
    Parabolic { coef: f64 },
    Expr(ExprSurface),
}

/// A parametrized midsurface `u: ω → R³` followed by a rigid motion.
#[derive(Debug, Clone)]
pub struct IsometricSurface {
    pub kind: SurfaceKind,
    pub domain: Domain,
    pub rotation: Matrix3<f64>,
    pub shift: Vector3<f64>,
}

impl IsometricSurface {
    pub fn new(kind: SurfaceKind, domain: Domain) -> Self {
        Self { kind, domain, rotation: Matrix3::identity(), shift: Vector3::zeros() }
    }

    pub fn flat(domain: Domain) -> Self {
        Self::new(SurfaceKind::Flat, domain)
    }

    pub fn cylinder(radius: f64, domain: Domain) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::Config(format!("cylinder radius must be positive, got {radius}")));
        }
        Ok(Self::new(SurfaceKind::Cylinder { radius }, domain))
    }

    pub fn parabolic(coef: f64, domain: Domain) -> Self {
        Self::new(SurfaceKind::Parabolic { coef }, domain)
    }

    pub fn from_expr(expr: ExprSurface, domain: Domain) -> Self {
        Self::new(SurfaceKind::Expr(expr), domain)
    }

    /// Composes with `x ↦ R x + c`; `R` must be a proper rotation.
    pub fn with_rigid_motion(mut self, r: Matrix3<f64>, c: Vector3<f64>) -> Result<Self> {
        let defect = (r.transpose() * r - Matrix3::identity()).norm();
        if defect > 1e-10 || r.determinant() < 0.0 {
            return Err(Error::Config("rigid motion needs a proper rotation".into()));
        }
        self.shift = r * self.shift + c;
        self.rotation = r * self.rotation;
        Ok(self)
    }

    pub fn name(&self) -> String {
        match &self.kind {
            SurfaceKind::Flat => "flat".into(),
            SurfaceKind::Cylinder { radius } => format!("cylinder(r={radius})"),
            SurfaceKind::Parabolic { coef } => format!("parabolic(c={coef})"),
            SurfaceKind::Expr(_) => "expression".into(),
        }
    }

    /// Jet at `x` with no domain check; fails on non-finite derivatives.
    pub fn jet(&self, x: [f64; 2]) -> Result<SurfaceJet> {
        let z = Vector3::zeros();
        let local = match &self.kind {
            SurfaceKind::Flat => SurfaceJet {
                u: Vector3::new(x[0], x[1], 0.0),
                du: [Vector3::x(), Vector3::y()],
                ddu: [[z, z], [z, z]],
            },
            SurfaceKind::Cylinder { radius: r } => {
                let (s, c) = (x[0] / r).sin_cos();
                SurfaceJet {
                    u: Vector3::new(r * s, x[1], r * c),
                    du: [Vector3::new(c, 0.0, -s), Vector3::y()],
                    ddu: [[Vector3::new(-s / r, 0.0, -c / r), z], [z, z]],
                }
            }
            SurfaceKind::Parabolic { coef } => SurfaceJet {
                u: Vector3::new(x[0], x[1], coef * x[0] * x[0]),
                du: [Vector3::new(1.0, 0.0, 2.0 * coef * x[0]), Vector3::y()],
                ddu: [[Vector3::new(0.0, 0.0, 2.0 * coef), z], [z, z]],
            },
            SurfaceKind::Expr(e) => e.jet(x),
        };
        let jet = local.transformed(&self.rotation, &self.shift);
        let finite = jet.u.iter().chain(jet.du.iter().flat_map(|v| v.iter())).all(|v| v.is_finite())
            && jet.ddu.iter().flatten().flat_map(|v| v.iter()).all(|v| v.is_finite());
        if finite {
            Ok(jet)
        } else {
            Err(Error::Derivative(x[0], x[1]))
        }
    }
}

/// Catalog surface description used by run configurations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfaceSpec {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coef: Option<f64>,
    /// Rectangles `[x_lo, y_lo, x_hi, y_hi]`; the unit square when empty.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub domain: Vec<[f64; 4]>,
}

impl SurfaceSpec {
    pub fn cylinder(radius: f64) -> Self {
        Self { kind: "cylinder".into(), radius: Some(radius), coef: None, domain: vec![] }
    }

    pub fn flat() -> Self {
        Self { kind: "flat".into(), radius: None, coef: None, domain: vec![] }
    }

    pub fn build(&self) -> Result<IsometricSurface> {
        let domain = if self.domain.is_empty() {
            Domain::unit_square()
        } else {
            let mut rects = Vec::new();
            for r in &self.domain {
                if !(r[0] < r[2] && r[1] < r[3]) {
                    return Err(Error::Config(format!("empty domain rectangle {r:?}")));
                }
                rects.push(Rect::new([r[0], r[1]], [r[2], r[3]]));
            }
            Domain { rects }
        };
        match self.kind.as_str() {
            "flat" => Ok(IsometricSurface::flat(domain)),
            "cylinder" => {
                let r = self.radius.ok_or_else(|| Error::Config("cylinder requires `radius`".into()))?;
                IsometricSurface::cylinder(r, domain)
            }
            "parabolic" => {
                let c = self.coef.ok_or_else(|| Error::Config("parabolic requires `coef`".into()))?;
                Ok(IsometricSurface::parabolic(c, domain))
            }
            other => Err(Error::Config(format!("unknown surface kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvatureSample {
    pub point: [f64; 2],
    pub pi: SymMat22,
    pub n: Vector3<f64>,
}

/// `Π_αβ = −∂²_αβ u · n_u` with `n_u = ∂_1u ∧ ∂_2u`.
pub fn second_fundamental_form(s: &IsometricSurface, x: [f64; 2]) -> Result<CurvatureSample> {
    if !s.domain.contains(x) {
        return Err(Error::OutsideDomain(x[0], x[1]));
    }
    let jet = s.jet(x)?;
    Ok(curvature_of(&jet, x))
}

pub(crate) fn curvature_of(jet: &SurfaceJet, x: [f64; 2]) -> CurvatureSample {
    let n = jet.normal();
    let p = |a: usize, b: usize| -jet.ddu[a][b].dot(&n);
    CurvatureSample { point: x, pi: SymMat22::new(p(0, 0), p(1, 1), 0.5 * (p(0, 1) + p(1, 0))), n }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsometryReport {
    pub max_violation: f64,
    pub worst_point: [f64; 2],
    pub passed: bool,
}

/// Largest metric residual over an `nsamples × nsamples` grid (boundaries
/// included) on every rectangle of the domain.
pub fn check_isometry(s: &IsometricSurface, nsamples: usize, tol: f64) -> IsometryReport {
    assert!(nsamples >= 1);
    let coord = |lo: f64, hi: f64, i: usize| {
        if nsamples == 1 {
            0.5 * (lo + hi)
        } else {
            lo + (hi - lo) * i as f64 / (nsamples - 1) as f64
        }
    };
    let mut worst = (0.0f64, [f64::NAN; 2]);
    for r in &s.domain.rects {
        for i in 0..nsamples {
            for j in 0..nsamples {
                let x = [coord(r.lo[0], r.hi[0], i), coord(r.lo[1], r.hi[1], j)];
                let v = match s.jet(x) {
                    Ok(jet) => {
                        let g = |a: usize, b: usize| jet.du[a].dot(&jet.du[b]);
                        (g(0, 0) - 1.0).abs().max((g(1, 1) - 1.0).abs()).max(g(0, 1).abs())
                    }
                    Err(_) => f64::INFINITY,
                };
                if v > worst.0 || worst.1[0].is_nan() {
                    worst = (v, x);
                }
            }
        }
    }
    IsometryReport { max_violation: worst.0, worst_point: worst.1, passed: worst.0 <= tol }
}

/// `(1/12) ∫_ω Q̄(Π^u)` with `Q̄` the fjm-normalized form, by tensor Gauss
/// quadrature with `order` points per axis per unit length.
pub fn bending_energy(s: &IsometricSurface, form: &EffectiveBendingForm, order: usize) -> Result<f64> {
    let report = check_isometry(s, 33, ISOMETRY_TOL);
    if !report.passed {
        return Err(Error::NotIsometric(report));
    }
    let q = &form.fjm;
    let terms: Vec<f64> = s
        .domain
        .gauss_points(order)
        .par_iter()
        .map(|(x, w)| {
            let jet = s.jet(*x)?;
            Ok(w * q.eval(&curvature_of(&jet, *x).pi))
        })
        .collect::<Result<_>>()?;
    Ok(terms.iter().sum::<f64>() / 12.0)
}
