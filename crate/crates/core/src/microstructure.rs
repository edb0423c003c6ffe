//! Two-scale coefficient fields `Q(y, z, ·)` on the periodicity cells.
//!
//! Every field lives on the centered unit square `(-1/2, 1/2)²` in both the
//! coarse variable `y` and the fine variable `z`, extended periodically. The
//! catalog kinds are built from isotropic phases; `grid_data` reads arbitrary
//! coefficient matrices sampled at cell centers.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::{Matrix6, QuadForm33};

/// Lamé pair in nondimensional stress units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lame {
    pub mu: f64,
    pub lambda: f64,
}

impl Lame {
    pub fn new(mu: f64, lambda: f64) -> Self {
        Self { mu, lambda }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { mu: s * self.mu, lambda: s * self.lambda }
    }
}

/// The isotropic form `F ↦ 2μ|sym F|² + λ(tr F)²`.
pub fn make_isotropic(mu: f64, lambda: f64) -> Result<QuadForm33> {
    if !(mu > 0.0) || !(lambda >= 0.0) {
        return Err(Error::NonCoercive { mu, lambda });
    }
    let mut m = Matrix6::identity() * (2.0 * mu);
    for i in 0..3 {
        for j in 0..3 {
            m[(i, j)] += lambda;
        }
    }
    Ok(QuadForm33(m))
}

/// Cell-center coordinate of node `i` on an `n`-point periodic grid.
#[inline]
pub fn cell_center(i: usize, n: usize) -> f64 {
    (i as f64 + 0.5) / n as f64 - 0.5
}

/// Representative of `x` in `[-1/2, 1/2)`.
#[inline]
pub fn wrap_centered(x: f64) -> f64 {
    x - (x + 0.5).floor()
}

/// Coefficient matrices given on a grid, read from a sidecar file.
#[derive(Debug, Clone, PartialEq)]
pub struct GridData {
    pub ny: usize,
    pub nz: usize,
    /// Row-major in `(y-index, z-index)`; each index is `i1 * n + i2`.
    pub forms: Vec<QuadForm33>,
}

impl GridData {
    pub fn form(&self, iy: usize, iz: usize) -> &QuadForm33 {
        &self.forms[iy * self.nz * self.nz + iz]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MicrostructureField {
    Constant(Lame),
    /// Two phases stacked along `z[axis]`; phase 0 occupies the first `fraction` of the cell.
    LaminateZ { phases: [Lame; 2], fraction: f64, axis: usize },
    /// Phase 0 where `y1` and `y2` have the same sign, phase 1 elsewhere.
    CheckerboardY { phases: [Lame; 2] },
    /// y-checkerboard of `phases`, scaled by `contrast` on the second `z`-laminate phase.
    ProductTwoScale { phases: [Lame; 2], fraction: f64, axis: usize, contrast: f64 },
    /// Single phase modulated by `1 + amplitude·cos(2πy1)·cos(2πy2)`.
    SinusoidalY { phase: Lame, amplitude: f64 },
    GridData(GridData),
}

impl MicrostructureField {
    pub fn constant(mu: f64, lambda: f64) -> Self {
        Self::Constant(Lame::new(mu, lambda))
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Self::Constant(_) => "constant",
            Self::LaminateZ { .. } => "laminate_z",
            Self::CheckerboardY { .. } => "checkerboard_y",
            Self::ProductTwoScale { .. } => "product_two_scale",
            Self::SinusoidalY { .. } => "sinusoidal_y",
            Self::GridData(_) => "grid_data",
        }
    }

    pub fn depends_on_y(&self) -> bool {
        !matches!(self, Self::Constant(_) | Self::LaminateZ { .. })
    }

    pub fn depends_on_z(&self) -> bool {
        match self {
            Self::LaminateZ { .. } => true,
            Self::ProductTwoScale { contrast, .. } => *contrast != 1.0,
            Self::GridData(_) => true,
            _ => false,
        }
    }

    /// Positions in `[-1/2, 1/2)` where the coefficients jump, per axis of
    /// `y` and of `z`.
    pub fn jumps(&self) -> ([Vec<f64>; 2], [Vec<f64>; 2]) {
        let none = || [Vec::new(), Vec::new()];
        let layer = |fraction: f64, axis: usize| {
            let mut z = none();
            z[axis] = vec![-0.5, fraction - 0.5];
            z
        };
        match self {
            Self::LaminateZ { fraction, axis, .. } => (none(), layer(*fraction, *axis)),
            Self::CheckerboardY { .. } => ([vec![-0.5, 0.0], vec![-0.5, 0.0]], none()),
            Self::ProductTwoScale { fraction, axis, .. } => ([vec![-0.5, 0.0], vec![-0.5, 0.0]], layer(*fraction, *axis)),
            Self::GridData(g) => {
                let lines = |n: usize| (0..n).map(|i| i as f64 / n as f64 - 0.5).collect::<Vec<_>>();
                ([lines(g.ny), lines(g.ny)], [lines(g.nz), lines(g.nz)])
            }
            Self::Constant(_) | Self::SinusoidalY { .. } => (none(), none()),
        }
    }

    /// Lamé parameters at `(y, z)`; `None` for grid data, which carries no
    /// nonlinear model.
    pub fn lame_at(&self, y: [f64; 2], z: [f64; 2]) -> Option<Lame> {
        let y = [wrap_centered(y[0]), wrap_centered(y[1])];
        let z = [wrap_centered(z[0]), wrap_centered(z[1])];
        let checker = |p: &[Lame; 2]| if (y[0] < 0.0) == (y[1] < 0.0) { p[0] } else { p[1] };
        let layer = |fraction: f64, axis: usize| z[axis] + 0.5 < fraction;
        match self {
            Self::Constant(l) => Some(*l),
            Self::LaminateZ { phases, fraction, axis } => {
                Some(if layer(*fraction, *axis) { phases[0] } else { phases[1] })
            }
            Self::CheckerboardY { phases } => Some(checker(phases)),
            Self::ProductTwoScale { phases, fraction, axis, contrast } => {
                let s = if layer(*fraction, *axis) { 1.0 } else { *contrast };
                Some(checker(phases).scaled(s))
            }
            Self::SinusoidalY { phase, amplitude } => {
                let two_pi = 2.0 * std::f64::consts::PI;
                Some(phase.scaled(1.0 + amplitude * (two_pi * y[0]).cos() * (two_pi * y[1]).cos()))
            }
            Self::GridData(_) => None,
        }
    }

    /// `Q(y, z, ·)` at an arbitrary point.
    pub fn form_at(&self, y: [f64; 2], z: [f64; 2]) -> QuadForm33 {
        match self {
            Self::GridData(g) => {
                let idx = |p: [f64; 2], n: usize| {
                    let i = |x: f64| (((wrap_centered(x) + 0.5) * n as f64).floor() as usize).min(n - 1);
                    i(p[0]) * n + i(p[1])
                };
                *g.form(idx(y, g.ny), idx(z, g.nz))
            }
            _ => {
                let l = self.lame_at(y, z).expect("catalog field");
                make_isotropic(l.mu, l.lambda).expect("validated phases")
            }
        }
    }

    /// Form at grid nodes `(iy, iz)` of an `(ny × ny) × (nz × nz)` sampling.
    pub fn form_at_node(&self, iy: usize, iz: usize, ny: usize, nz: usize) -> QuadForm33 {
        if let Self::GridData(g) = self {
            return *g.form(iy, iz);
        }
        let y = [cell_center(iy / ny, ny), cell_center(iy % ny, ny)];
        let z = [cell_center(iz / nz, nz), cell_center(iz % nz, nz)];
        self.form_at(y, z)
    }

    pub fn check_resolution(&self, ny: usize, nz: usize) -> Result<()> {
        if ny == 0 || nz == 0 {
            return Err(Error::Config("grid sizes must be at least 1".into()));
        }
        if let Self::GridData(g) = self {
            if g.ny != ny || g.nz != nz {
                return Err(Error::ResolutionMismatch(format!(
                    "grid data is {}x{} (y) by {}x{} (z), requested {ny}x{ny} by {nz}x{nz}",
                    g.ny, g.ny, g.nz, g.nz
                )));
            }
        }
        Ok(())
    }

    /// Coefficients of the `z`-slice at coarse node `iy`.
    pub fn slice(&self, iy: usize, ny: usize, nz: usize) -> Vec<QuadForm33> {
        (0..nz * nz).map(|iz| self.form_at_node(iy, iz, ny, nz)).collect()
    }

    /// Hex digest identifying the field for caches and provenance.
    pub fn hash_hex(&self) -> String {
        let mut hasher = Sha256::new();
        match self {
            Self::GridData(g) => {
                hasher.update(format!("grid_data:{}:{}", g.ny, g.nz));
                for f in &g.forms {
                    for v in f.upper_triangle() {
                        hasher.update(v.to_le_bytes());
                    }
                }
            }
            other => hasher.update(format!("{other:?}")),
        }
        hex::encode(hasher.finalize())
    }

    fn validate(&self) -> Result<()> {
        let phases: Vec<Lame> = match self {
            Self::Constant(l) => vec![*l],
            Self::LaminateZ { phases, .. } | Self::CheckerboardY { phases } => phases.to_vec(),
            Self::ProductTwoScale { phases, contrast, .. } => {
                let mut v = phases.to_vec();
                v.extend(phases.iter().map(|p| p.scaled(*contrast)));
                v
            }
            Self::SinusoidalY { phase, amplitude } => {
                if !(amplitude.abs() < 1.0) {
                    return Err(Error::Config(format!("sinusoidal amplitude {amplitude} must lie in (-1, 1)")));
                }
                vec![*phase]
            }
            Self::GridData(g) => {
                for (k, f) in g.forms.iter().enumerate() {
                    let (lo, _) = f.eigen_bounds();
                    if !(lo > 0.0) {
                        return Err(Error::Config(format!("grid data node {k} is not positive definite")));
                    }
                }
                vec![]
            }
        };
        for p in phases {
            make_isotropic(p.mu, p.lambda)?;
        }
        match self {
            Self::LaminateZ { fraction, axis, .. } | Self::ProductTwoScale { fraction, axis, .. } => {
                if !(*fraction > 0.0 && *fraction < 1.0) {
                    return Err(Error::Config(format!("fraction {fraction} must lie in (0, 1)")));
                }
                if *axis > 1 {
                    return Err(Error::Config("axis must be 1 or 2".into()));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// Distinct forms on a sampled grid plus a per-node index into them.
#[derive(Debug, Clone)]
pub struct FieldSamples {
    pub ny: usize,
    pub nz: usize,
    pub palette: Vec<QuadForm33>,
    /// Node `(iy, iz)` maps to `palette[index[iy * nz² + iz]]`.
    pub index: Vec<u32>,
}

impl FieldSamples {
    pub fn get(&self, iy: usize, iz: usize) -> &QuadForm33 {
        &self.palette[self.index[iy * self.nz * self.nz + iz] as usize]
    }
}

fn form_key(f: &QuadForm33) -> [u64; 21] {
    let mut k = [0u64; 21];
    for (slot, v) in k.iter_mut().zip(f.upper_triangle()) {
        *slot = v.to_bits();
    }
    k
}

/// Samples `Q` at the cell centers of an `ny × ny` coarse and `nz × nz` fine grid.
pub fn sample_field(m: &MicrostructureField, ny: usize, nz: usize) -> Result<FieldSamples> {
    m.check_resolution(ny, nz)?;
    let mut lookup: HashMap<[u64; 21], u32> = HashMap::new();
    let mut palette = Vec::new();
    let mut index = Vec::with_capacity(ny * ny * nz * nz);
    for iy in 0..ny * ny {
        for iz in 0..nz * nz {
            let f = m.form_at_node(iy, iz, ny, nz);
            let id = *lookup.entry(form_key(&f)).or_insert_with(|| {
                palette.push(f);
                (palette.len() - 1) as u32
            });
            index.push(id);
        }
    }
    Ok(FieldSamples { ny, nz, palette, index })
}

/// Extreme eigenvalues of the sampled coefficient matrices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoercivityBounds {
    pub c_lo: f64,
    pub c_hi: f64,
}

pub fn coercivity_bounds(m: &MicrostructureField, ny: usize, nz: usize) -> Result<CoercivityBounds> {
    let samples = sample_field(m, ny, nz)?;
    Ok(bounds_of(&samples.palette))
}

pub fn bounds_of(forms: &[QuadForm33]) -> CoercivityBounds {
    let mut c_lo = f64::INFINITY;
    let mut c_hi = f64::NEG_INFINITY;
    for f in forms {
        let (lo, hi) = f.eigen_bounds();
        c_lo = c_lo.min(lo);
        c_hi = c_hi.max(hi);
    }
    CoercivityBounds { c_lo, c_hi }
}

/// Declarative description of a field, as written in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MicrostructureSpec {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub phases: Vec<Lame>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fraction: Option<f64>,
    /// Lamination axis, 1 or 2.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axis: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contrast: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<f64>,
    /// Sidecar CSV for `grid_data`, relative to the document.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ny: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nz: Option<usize>,
}

impl MicrostructureSpec {
    pub fn catalog(kind: &str) -> Self {
        Self {
            kind: kind.to_string(),
            phases: vec![],
            fraction: None,
            axis: None,
            contrast: None,
            amplitude: None,
            data: None,
            ny: None,
            nz: None,
        }
    }

    /// Reads a single-document TOML description.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Parse { path: path.to_path_buf(), msg: e.to_string() })
    }

    /// Resolves the description, reading sidecar data relative to `base_dir`.
    pub fn build(&self, base_dir: &Path) -> Result<MicrostructureField> {
        let need = |name: &str, v: Option<f64>| {
            v.ok_or_else(|| Error::Config(format!("kind {} requires `{name}`", self.kind)))
        };
        let two_phases = || -> Result<[Lame; 2]> {
            match self.phases.as_slice() {
                [a, b] => Ok([*a, *b]),
                [a] => {
                    let c = need("contrast", self.contrast)?;
                    Ok([*a, a.scaled(c)])
                }
                _ => Err(Error::Config(format!("kind {} requires one or two phases", self.kind))),
            }
        };
        let axis = || -> Result<usize> {
            match self.axis.unwrap_or(1) {
                a @ (1 | 2) => Ok(a - 1),
                a => Err(Error::Config(format!("axis {a} must be 1 or 2"))),
            }
        };
        let field = match self.kind.as_str() {
            "constant" => match self.phases.as_slice() {
                [p] => MicrostructureField::Constant(*p),
                _ => return Err(Error::Config("kind constant requires exactly one phase".into())),
            },
            "laminate_z" => MicrostructureField::LaminateZ {
                phases: two_phases()?,
                fraction: self.fraction.unwrap_or(0.5),
                axis: axis()?,
            },
            "checkerboard_y" => MicrostructureField::CheckerboardY { phases: two_phases()? },
            "product_two_scale" => {
                let phases = match self.phases.as_slice() {
                    [a, b] => [*a, *b],
                    _ => return Err(Error::Config("kind product_two_scale requires two phases".into())),
                };
                MicrostructureField::ProductTwoScale {
                    phases,
                    fraction: self.fraction.unwrap_or(0.5),
                    axis: axis()?,
                    contrast: need("contrast", self.contrast)?,
                }
            }
            "sinusoidal_y" => match self.phases.as_slice() {
                [p] => MicrostructureField::SinusoidalY { phase: *p, amplitude: need("amplitude", self.amplitude)? },
                _ => return Err(Error::Config("kind sinusoidal_y requires exactly one phase".into())),
            },
            "grid_data" => {
                let rel = self
                    .data
                    .as_ref()
                    .ok_or_else(|| Error::Config("kind grid_data requires `data`".into()))?;
                let ny = self.ny.ok_or_else(|| Error::Config("kind grid_data requires `ny`".into()))?;
                let nz = self.nz.ok_or_else(|| Error::Config("kind grid_data requires `nz`".into()))?;
                MicrostructureField::GridData(read_grid_csv(&base_dir.join(rel), ny, nz)?)
            }
            other => return Err(Error::Config(format!("unknown microstructure kind `{other}`"))),
        };
        field.validate()?;
        Ok(field)
    }
}

/// Reads `ny²·nz²` rows of 21 upper-triangle coefficients.
pub fn read_grid_csv(path: &Path, ny: usize, nz: usize) -> Result<GridData> {
    let text = std::fs::read_to_string(path)?;
    let parse_err = |msg: String| Error::Parse { path: path.to_path_buf(), msg };
    let mut forms = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals: std::result::Result<Vec<f64>, _> = line.split(',').map(|s| s.trim().parse::<f64>()).collect();
        let vals = vals.map_err(|e| parse_err(format!("line {}: {e}", lineno + 1)))?;
        let arr: [f64; 21] = vals
            .try_into()
            .map_err(|v: Vec<f64>| parse_err(format!("line {}: expected 21 values, found {}", lineno + 1, v.len())))?;
        forms.push(QuadForm33::from_upper_triangle(&arr));
    }
    let expected = ny * ny * nz * nz;
    if forms.len() != expected {
        return Err(Error::ResolutionMismatch(format!(
            "{} has {} rows, expected {expected} for ny={ny}, nz={nz}",
            path.display(),
            forms.len()
        )));
    }
    Ok(GridData { ny, nz, forms })
}

/// Writes a sampled field in the `grid_data` sidecar layout.
pub fn write_grid_csv(path: &Path, m: &MicrostructureField, ny: usize, nz: usize) -> Result<()> {
    m.check_resolution(ny, nz)?;
    let mut out = String::new();
    writeln!(out, "# 21 upper-triangle coefficients per node; rows ordered by (y-index, z-index)").unwrap();
    for iy in 0..ny * ny {
        for iz in 0..nz * nz {
            let f = m.form_at_node(iy, iz, ny, nz);
            let row: Vec<String> = f.upper_triangle().iter().map(|v| format!("{v:.17e}")).collect();
            writeln!(out, "{}", row.join(",")).unwrap();
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn laminate() -> MicrostructureField {
        MicrostructureField::LaminateZ { phases: [Lame::new(1.0, 0.0), Lame::new(10.0, 0.0)], fraction: 0.5, axis: 0 }
    }

    #[test]
    fn isotropic_examples() {
        let q = make_isotropic(1.0, 0.0).unwrap();
        let mut f = nalgebra::Matrix3::zeros();
        f[(0, 1)] = 1.0;
        assert_abs_diff_eq!(crate::tensor::quadform_eval(&q, &f), 1.0, epsilon = 1e-14);
        let (lo, hi) = make_isotropic(2.0, 3.0).unwrap().eigen_bounds();
        assert_abs_diff_eq!(lo, 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(hi, 13.0, epsilon = 1e-12);
    }

    #[test]
    fn non_coercive_is_rejected() {
        assert!(matches!(make_isotropic(0.0, 1.0), Err(Error::NonCoercive { .. })));
        assert!(matches!(make_isotropic(-1.0, 1.0), Err(Error::NonCoercive { .. })));
    }

    #[test]
    fn constant_sampling_is_uniform() {
        let s = sample_field(&MicrostructureField::constant(1.0, 1.0), 3, 5).unwrap();
        assert_eq!(s.palette.len(), 1);
        assert_eq!(s.palette[0], make_isotropic(1.0, 1.0).unwrap());
    }

    #[test]
    fn laminate_sampling_along_z1() {
        let s = sample_field(&laminate(), 1, 4).unwrap();
        let soft = make_isotropic(1.0, 0.0).unwrap();
        let stiff = make_isotropic(10.0, 0.0).unwrap();
        for i1 in 0..4 {
            for i2 in 0..4 {
                let expect = if i1 < 2 { soft } else { stiff };
                assert_eq!(*s.get(0, i1 * 4 + i2), expect);
            }
        }
    }

    #[test]
    fn checkerboard_alternates() {
        let spec = MicrostructureSpec {
            phases: vec![Lame::new(1.0, 1.0)],
            contrast: Some(2.0),
            ..MicrostructureSpec::catalog("checkerboard_y")
        };
        let m = spec.build(Path::new(".")).unwrap();
        let s = sample_field(&m, 2, 1).unwrap();
        let a = make_isotropic(1.0, 1.0).unwrap();
        let b = make_isotropic(2.0, 2.0).unwrap();
        assert_eq!(*s.get(0, 0), a);
        assert_eq!(*s.get(1, 0), b);
        assert_eq!(*s.get(2, 0), b);
        assert_eq!(*s.get(3, 0), a);
    }

    #[test]
    fn coercivity_examples() {
        let b = coercivity_bounds(&MicrostructureField::constant(1.0, 1.0), 2, 2).unwrap();
        assert_abs_diff_eq!(b.c_lo, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(b.c_hi, 5.0, epsilon = 1e-12);
        let b = coercivity_bounds(&laminate(), 2, 4).unwrap();
        assert_abs_diff_eq!(b.c_lo, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(b.c_hi, 20.0, epsilon = 1e-12);
        let b = coercivity_bounds(&MicrostructureField::constant(1.0, 0.0), 2, 2).unwrap();
        assert_abs_diff_eq!(b.c_lo, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(b.c_hi, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn product_with_unit_z_factor_matches_checkerboard() {
        let phases = [Lame::new(1.0, 0.5), Lame::new(3.0, 1.0)];
        let prod = MicrostructureField::ProductTwoScale { phases, fraction: 0.25, axis: 1, contrast: 1.0 };
        let chk = MicrostructureField::CheckerboardY { phases };
        for iy in 0..16 {
            for iz in 0..16 {
                assert_eq!(prod.form_at_node(iy, iz, 4, 4), chk.form_at_node(iy, iz, 4, 4));
            }
        }
        assert!(!prod.depends_on_z());
    }

    #[test]
    fn grid_data_roundtrip_and_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.csv");
        let m = MicrostructureField::ProductTwoScale {
            phases: [Lame::new(1.0, 0.5), Lame::new(3.0, 1.0)],
            fraction: 0.5,
            axis: 0,
            contrast: 4.0,
        };
        write_grid_csv(&path, &m, 2, 2).unwrap();
        let spec = MicrostructureSpec {
            data: Some(PathBuf::from("g.csv")),
            ny: Some(2),
            nz: Some(2),
            ..MicrostructureSpec::catalog("grid_data")
        };
        let g = spec.build(dir.path()).unwrap();
        let a = sample_field(&g, 2, 2).unwrap();
        let b = sample_field(&m, 2, 2).unwrap();
        for iy in 0..4 {
            for iz in 0..4 {
                assert_eq!(a.get(iy, iz), b.get(iy, iz));
            }
        }
        assert!(matches!(sample_field(&g, 4, 2), Err(Error::ResolutionMismatch(_))));
        assert!(matches!(read_grid_csv(&path, 2, 4), Err(Error::ResolutionMismatch(_))));
    }

    #[test]
    fn periodic_in_both_variables() {
        let m = MicrostructureField::ProductTwoScale {
            phases: [Lame::new(1.0, 0.5), Lame::new(3.0, 1.0)],
            fraction: 0.3,
            axis: 1,
            contrast: 2.0,
        };
        let y = [0.13, -0.41];
        let z = [0.27, 0.05];
        assert_eq!(m.form_at(y, z), m.form_at([y[0] + 1.0, y[1] - 2.0], [z[0] - 3.0, z[1] + 1.0]));
    }

    #[test]
    fn spec_rejects_bad_inputs() {
        let bad_kind = MicrostructureSpec::catalog("voronoi");
        assert!(bad_kind.build(Path::new(".")).is_err());
        let bad_phase = MicrostructureSpec { phases: vec![Lame::new(0.0, 1.0)], ..MicrostructureSpec::catalog("constant") };
        assert!(matches!(bad_phase.build(Path::new(".")), Err(Error::NonCoercive { .. })));
    }
}
