//! Run configuration, command orchestration and output files.
//!
//! A run is described by one TOML document:
//!
//! ```toml
//! out_dir = "out"
//!
//! [microstructure]          # or: microstructure_file = "field.toml"
//! kind = "checkerboard_y"
//! phases = [{ mu = 1.0, lambda = 1.0 }, { mu = 4.0, lambda = 0.2 }]
//!
//! [regime]
//! gamma1 = 1.0              # 0, a positive number, or inf
//!
//! [grid]
//! ny = 16
//! nz = 16
//! nx3 = 8
//!
//! [surface]
//! kind = "cylinder"
//! radius = 1.0
//! ```
//!
//! Output files and their columns:
//!
//! | file | contents |
//! |------|----------|
//! | `effective_form.toml` | fjm-normalized and raw matrices, provenance |
//! | `energy.toml` | plate bending energy of the surface |
//! | `gamma_study.csv` | `h,epsilon,energy_over_h2,limit,gap` |
//! | `convergence.csv` | `ny,nz,nx3,q11,q22,q33,q23,q13,q12,raw11,raw22,raw33` |
//! | `manifest.toml` | config echo, version, hashes, timings, cache use |

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cell_inner::{qhom_field_cached, QhomCache, QhomField};
use crate::cell_outer::{effective_form, EffectiveBendingForm, OuterSettings, RegimeSpec};
use crate::error::{Error, Result};
use crate::gamma::{gamma_slope_study, EnergyQuadrature, GammaStudy, NonlinearDensity, RecoveryData};
use crate::microstructure::{MicrostructureField, MicrostructureSpec};
use crate::plate::{bending_energy, check_isometry, SurfaceSpec, ISOMETRY_TOL, QUAD_ORDER};

pub const FORM_FILE: &str = "effective_form.toml";
pub const ENERGY_FILE: &str = "energy.toml";
pub const GAMMA_FILE: &str = "gamma_study.csv";
pub const CONVERGENCE_FILE: &str = "convergence.csv";
pub const MANIFEST_FILE: &str = "manifest.toml";

pub const CONVERGENCE_CSV_HEADER: &str = "ny,nz,nx3,q11,q22,q33,q23,q13,q12,raw11,raw22,raw33";

/// `γ1 = lim h/ε` and, optionally, `γ2 = lim h/ε²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegimeConfig {
    pub gamma1: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma2: Option<f64>,
}

impl RegimeConfig {
    pub fn resolve(&self) -> Result<RegimeSpec> {
        let (g1, g2) = (self.gamma1, self.gamma2.unwrap_or(f64::INFINITY));
        if g1.is_nan() || g1 < 0.0 || g2.is_nan() || g2 < 0.0 {
            return Err(Error::Config(format!("gamma1 = {g1}, gamma2 = {g2} must be non-negative")));
        }
        if g2.is_finite() {
            return Err(if g1 == 0.0 {
                Error::UnsupportedRegime(format!(
                    "gamma1 = 0 with finite gamma2 = {g2}: the effective energy in this regime remains an open question"
                ))
            } else {
                Error::Config(format!("gamma1 = {g1} > 0 forces gamma2 = inf, got {g2}"))
            });
        }
        RegimeSpec::from_gamma1(g1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub ny: usize,
    pub nz: usize,
    #[serde(default = "default_nx3")]
    pub nx3: usize,
}

fn default_nx3() -> usize {
    8
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "default_rtol")]
    pub rtol: f64,
}

fn default_rtol() -> f64 {
    1e-10
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { rtol: default_rtol() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyConfig {
    /// A previously written `effective_form.toml`; computed afresh if absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub form_file: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GammaConfig {
    pub h_list: Vec<f64>,
    #[serde(default)]
    pub quadrature: EnergyQuadrature,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceConfig {
    /// Coarse grid sizes `ny`, increasing.
    pub grids: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub microstructure_file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub microstructure: Option<MicrostructureSpec>,
    pub regime: RegimeConfig,
    pub grid: GridConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub surface: Option<SurfaceSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub energy: Option<EnergyConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<GammaConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub convergence: Option<ConvergenceConfig>,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

fn check_grid(name: &str, n: usize) -> Result<()> {
    if n < 4 || n % 2 != 0 {
        return Err(Error::Config(format!("{name} = {n} must be even and at least 4")));
    }
    Ok(())
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Parse { path: path.to_path_buf(), msg: e.to_string() })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the serialized configuration.
    pub fn hash_hex(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml_string().as_bytes()))
    }

    /// Checks everything that can be checked without solving.
    pub fn validate(&self) -> Result<RegimeSpec> {
        check_grid("ny", self.grid.ny)?;
        check_grid("nz", self.grid.nz)?;
        check_grid("nx3", self.grid.nx3)?;
        let rtol = self.solver.rtol;
        if !(rtol > 0.0 && rtol < 1.0) {
            return Err(Error::Config(format!("rtol = {rtol} must lie in (0, 1)")));
        }
        match (&self.microstructure, &self.microstructure_file) {
            (Some(_), None) | (None, Some(_)) => {}
            _ => return Err(Error::Config("give exactly one of `microstructure` and `microstructure_file`".into())),
        }
        if let Some(g) = &self.gamma {
            if g.h_list.is_empty() || g.h_list.iter().any(|h| !(*h > 0.0 && *h < 1.0)) {
                return Err(Error::Config("gamma.h_list entries must lie in (0, 1)".into()));
            }
            if g.h_list.windows(2).any(|p| p[1] >= p[0]) {
                return Err(Error::Config("gamma.h_list must be strictly decreasing".into()));
            }
        }
        if let Some(c) = &self.convergence {
            if c.grids.len() < 2 {
                return Err(Error::Config("convergence.grids needs at least two sizes".into()));
            }
            for &n in &c.grids {
                check_grid("convergence grid", n)?;
            }
            if c.grids.windows(2).any(|p| p[1] <= p[0]) {
                return Err(Error::Config("convergence.grids must be strictly increasing".into()));
            }
        }
        self.regime.resolve()
    }

    pub fn settings(&self) -> OuterSettings {
        OuterSettings { nx3: self.grid.nx3, rtol: self.solver.rtol }
    }
}

/// Record of one command run. Two runs of the same configuration and code
/// version differ only in `timings` and the cache counters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config_hash: String,
    pub microstructure_hash: String,
    pub regime: String,
    pub outputs: Vec<String>,
    /// Scalar results, e.g. energies or observed orders.
    pub results: BTreeMap<String, f64>,
    pub cache_hits: usize,
    pub cache_misses: usize,
    /// Seconds per stage.
    pub timings: BTreeMap<String, f64>,
    pub config: RunConfig,
}

impl RunManifest {
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("manifest: {e}")))
    }
}

/// A configured run: resolved inputs, an output directory and bookkeeping.
pub struct Session {
    pub config: RunConfig,
    pub regime: RegimeSpec,
    pub field: MicrostructureField,
    base_dir: PathBuf,
    cache: Option<QhomCache>,
    manifest: RunManifest,
    stage: Option<(String, Instant)>,
}

impl Session {
    /// Validates `config`; relative paths in it resolve against `base_dir`.
    pub fn new(config: RunConfig, base_dir: &Path, cache: Option<QhomCache>) -> Result<Self> {
        let regime = config.validate()?;
        let spec = match (&config.microstructure, &config.microstructure_file) {
            (Some(s), _) => s.clone(),
            (None, Some(p)) => MicrostructureSpec::from_file(&base_dir.join(p))?,
            (None, None) => unreachable!("validated"),
        };
        let field_dir = match &config.microstructure_file {
            Some(p) => base_dir.join(p).parent().map(Path::to_path_buf).unwrap_or_default(),
            None => base_dir.to_path_buf(),
        };
        let field = spec.build(&field_dir)?;
        field.check_resolution(config.grid.ny, config.grid.nz)?;
        let manifest = RunManifest {
            command: String::new(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config.hash_hex(),
            microstructure_hash: field.hash_hex(),
            regime: regime.to_string(),
            outputs: vec![],
            results: BTreeMap::new(),
            cache_hits: 0,
            cache_misses: 0,
            timings: BTreeMap::new(),
            config: config.clone(),
        };
        Ok(Self { config, regime, field, base_dir: base_dir.to_path_buf(), cache, manifest, stage: None })
    }

    /// Reads a config file; relative paths resolve against its directory.
    pub fn from_file(path: &Path, cache: Option<QhomCache>) -> Result<Self> {
        let config = RunConfig::from_file(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::new(config, &base, cache)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.base_dir.join(&self.config.out_dir)
    }

    fn begin(&mut self, name: &str) {
        self.end();
        self.stage = Some((name.to_string(), Instant::now()));
    }

    fn end(&mut self) {
        if let Some((name, t)) = self.stage.take() {
            *self.manifest.timings.entry(name).or_default() += t.elapsed().as_secs_f64();
        }
    }

    fn write(&mut self, name: &str, text: &str) -> Result<PathBuf> {
        let dir = self.out_dir();
        std::fs::create_dir_all(&dir)?;
        let path = dir.join(name);
        std::fs::write(&path, text)?;
        self.manifest.outputs.push(name.to_string());
        Ok(path)
    }

    fn finish(mut self, command: &str) -> Result<RunManifest> {
        self.end();
        self.manifest.command = command.to_string();
        let text = self.manifest.to_toml_string();
        self.write(MANIFEST_FILE, &text)?;
        Ok(self.manifest)
    }

    fn qhom(&mut self, ny: usize) -> Result<QhomField> {
        self.begin(&format!("qhom_ny{ny}"));
        let (qf, hit) =
            qhom_field_cached(&self.field, ny, self.config.grid.nz, self.config.solver.rtol, self.cache.as_ref())?;
        if hit {
            self.manifest.cache_hits += 1;
        } else {
            self.manifest.cache_misses += 1;
        }
        Ok(qf)
    }

    fn form(&mut self, ny: usize, nx3: usize) -> Result<EffectiveBendingForm> {
        let qf = self.qhom(ny)?;
        self.begin(&format!("effective_form_ny{ny}"));
        let settings = OuterSettings { nx3, ..self.config.settings() };
        effective_form(&qf, self.regime, &settings)
    }

    /// Writes `effective_form.toml`.
    pub fn homogenize(mut self) -> Result<(EffectiveBendingForm, RunManifest)> {
        let form = self.form(self.config.grid.ny, self.config.grid.nx3)?;
        self.write(FORM_FILE, &form.to_toml_string())?;
        for (i, name) in ["q11", "q22", "q33"].iter().enumerate() {
            self.manifest.results.insert((*name).into(), form.fjm.0[(i, i)]);
        }
        Ok((form, self.finish("homogenize")?))
    }

    /// Bending energy of the configured surface; writes `energy.toml`.
    pub fn energy(mut self) -> Result<(f64, RunManifest)> {
        let surface = self.surface()?;
        self.begin("isometry");
        let report = check_isometry(&surface, 33, ISOMETRY_TOL);
        if !report.passed {
            return Err(Error::NotIsometric(report));
        }
        let form = match self.config.energy.as_ref().and_then(|e| e.form_file.clone()) {
            Some(p) => {
                let form = EffectiveBendingForm::from_toml_str(&std::fs::read_to_string(self.base_dir.join(p))?)?;
                if form.provenance.microstructure_hash != self.manifest.microstructure_hash || form.regime != self.regime {
                    return Err(Error::Config("form file belongs to another microstructure or regime".into()));
                }
                form
            }
            None => self.form(self.config.grid.ny, self.config.grid.nx3)?,
        };
        self.begin("bending_energy");
        let e = bending_energy(&surface, &form, QUAD_ORDER)?;
        let text = format!(
            "surface = \"{}\"\nregime = \"{}\"\nenergy = {e:.16e}\nmax_isometry_violation = {:e}\n",
            surface.name(),
            self.regime,
            report.max_violation
        );
        self.write(ENERGY_FILE, &text)?;
        self.manifest.results.insert("energy".into(), e);
        Ok((e, self.finish("energy")?))
    }

    /// Recovery-sequence study; writes `gamma_study.csv`.
    pub fn gamma_check(mut self) -> Result<(GammaStudy, RunManifest)> {
        let surface = self.surface()?;
        let g = self
            .config
            .gamma
            .clone()
            .ok_or_else(|| Error::Config("gamma-check needs a [gamma] section".into()))?;
        let density = NonlinearDensity::new(self.field.clone())?;
        let qf = self.qhom(self.config.grid.ny)?;
        self.begin("correctors");
        let (data, form) = RecoveryData::compute_with(&self.field, &qf, self.regime, &self.config.settings())?;
        let data = Arc::new(data);
        self.begin("gamma_study");
        let study = gamma_slope_study(&surface, &data, &form, &g.h_list, &density, &g.quadrature)?;
        self.write(GAMMA_FILE, &study.to_csv())?;
        let last = study.rows.last().expect("non-empty");
        self.manifest.results.insert("limit".into(), last.limit);
        self.manifest.results.insert("final_gap".into(), last.gap);
        self.manifest.results.insert("monotone".into(), if study.monotone { 1.0 } else { 0.0 });
        // At γ1 = 0 the recovery realizes only the η part of the corrector;
        // record the limit it actually approaches.
        if let Some(realized) = data.zero_regime_realized_form(&form) {
            self.manifest.results.insert("realized_limit".into(), bending_energy(&surface, &realized, QUAD_ORDER)?);
        }
        Ok((study, self.finish("gamma-check")?))
    }

    /// Effective forms over the configured grids; writes `convergence.csv`.
    pub fn convergence(mut self) -> Result<(ConvergenceReport, RunManifest)> {
        let grids = self
            .config
            .convergence
            .clone()
            .ok_or_else(|| Error::Config("convergence needs a [convergence] section".into()))?
            .grids;
        let mut rows = Vec::with_capacity(grids.len());
        for &ny in &grids {
            // Thickness refinement follows the in-plane one on the finite path.
            let nx3 = self.config.grid.nx3 * ny / grids[0];
            let form = self.form(ny, nx3)?;
            rows.push(ConvergenceRow { ny, nz: self.config.grid.nz, nx3, form });
        }
        self.end();
        let report = ConvergenceReport::new(rows, self.regime, &self.field, self.config.solver.rtol);
        self.write(CONVERGENCE_FILE, &report.to_csv())?;
        if let Some(p) = report.observed_order {
            self.manifest.results.insert("observed_order_q11".into(), p);
        }
        if let Some(m) = report.nested_monotone {
            self.manifest.results.insert("nested_monotone".into(), if m { 1.0 } else { 0.0 });
        }
        Ok((report, self.finish("convergence")?))
    }

    /// Resolves every input without solving.
    pub fn validate(mut self) -> Result<RunManifest> {
        if self.config.surface.is_some() {
            let s = self.surface()?;
            let report = check_isometry(&s, 33, ISOMETRY_TOL);
            self.manifest.results.insert("max_isometry_violation".into(), report.max_violation);
        }
        self.finish("validate")
    }

    fn surface(&self) -> Result<crate::plate::IsometricSurface> {
        self.config.surface.as_ref().ok_or_else(|| Error::Config("this command needs a [surface] section".into()))?.build()
    }
}

#[derive(Debug, Clone)]
pub struct ConvergenceRow {
    pub ny: usize,
    pub nz: usize,
    pub nx3: usize,
    pub form: EffectiveBendingForm,
}

#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub rows: Vec<ConvergenceRow>,
    /// Richardson estimate from the last three rows on the `(1,1)` entry.
    pub observed_order: Option<f64>,
    /// Whether raw infima never increase under refinement; `None` when the
    /// grids are not nested (non-bilinear path, or coefficients that are
    /// resampled differently on each grid).
    pub nested_monotone: Option<bool>,
}

impl ConvergenceReport {
    fn new(rows: Vec<ConvergenceRow>, regime: RegimeSpec, field: &MicrostructureField, rtol: f64) -> Self {
        let n = rows.len();
        let observed_order = (n >= 3).then(|| {
            let q = |i: usize| rows[i].form.fjm.0[(0, 0)];
            let (d1, d2) = ((q(n - 3) - q(n - 2)).abs(), (q(n - 2) - q(n - 1)).abs());
            let r = rows[n - 2].ny as f64 / rows[n - 3].ny as f64;
            (d1 / d2).ln() / r.ln()
        });
        let nested = rows.windows(2).all(|p| p[1].ny % p[0].ny == 0);
        let bilinear = !matches!(regime, RegimeSpec::Zero);
        let nested_monotone = (nested && bilinear && cellwise_constant(field)).then(|| {
            rows.windows(2).all(|p| {
                (0..3).all(|i| {
                    let (a, b) = (p[0].form.raw.0[(i, i)], p[1].form.raw.0[(i, i)]);
                    b <= a + 10.0 * rtol * a.abs()
                })
            })
        });
        Self { rows, observed_order, nested_monotone }
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{CONVERGENCE_CSV_HEADER}\n");
        for r in &self.rows {
            let (q, raw) = (&r.form.fjm.0, &r.form.raw.0);
            s.push_str(&format!(
                "{},{},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n",
                r.ny,
                r.nz,
                r.nx3,
                q[(0, 0)],
                q[(1, 1)],
                q[(2, 2)],
                q[(1, 2)],
                q[(0, 2)],
                q[(0, 1)],
                raw[(0, 0)],
                raw[(1, 1)],
                raw[(2, 2)]
            ));
        }
        s
    }
}

/// Fields whose cell-center samples on a grid are reproduced exactly on
/// every refinement of it.
fn cellwise_constant(field: &MicrostructureField) -> bool {
    matches!(
        field,
        MicrostructureField::Constant(_)
            | MicrostructureField::LaminateZ { .. }
            | MicrostructureField::CheckerboardY { .. }
            | MicrostructureField::ProductTwoScale { .. }
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    const CHECKER: &str = r#"
out_dir = "results"

[microstructure]
kind = "checkerboard_y"
phases = [{ mu = 1.0, lambda = 1.0 }, { mu = 4.0, lambda = 0.2 }]

[regime]
gamma1 = inf

[grid]
ny = 8
nz = 4
nx3 = 4

[solver]
rtol = 1e-10

[surface]
kind = "cylinder"
radius = 1.0

[gamma]
h_list = [0.25, 0.125]

[convergence]
grids = [4, 8, 16]
"#;

    #[test]
    fn config_round_trips() {
        let c = RunConfig::from_toml_str(CHECKER).unwrap();
        assert_eq!(c.regime.resolve().unwrap(), RegimeSpec::Infinite);
        let again = RunConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(c, again);
        assert_eq!(c.hash_hex(), again.hash_hex());
    }

    #[test]
    fn validation_rejects_bad_configs() {
        let base = RunConfig::from_toml_str(CHECKER).unwrap();
        let mut c = base.clone();
        c.grid.ny = 7;
        assert!(matches!(c.validate(), Err(Error::Config(m)) if m.contains("ny")));
        let mut c = base.clone();
        c.grid.nz = 2;
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.solver.rtol = 1.0;
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.gamma.as_mut().unwrap().h_list = vec![0.1, 0.2];
        assert!(matches!(c.validate(), Err(Error::Config(m)) if m.contains("decreasing")));
        let mut c = base.clone();
        c.microstructure_file = Some("x.toml".into());
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.regime = RegimeConfig { gamma1: 0.0, gamma2: Some(2.0) };
        let err = c.validate().unwrap_err().to_string();
        assert!(err.contains("remains an open question"), "{err}");
        let mut c = base;
        c.regime = RegimeConfig { gamma1: 1.0, gamma2: Some(2.0) };
        assert!(c.validate().is_err());
        assert!(RunConfig::from_toml_str("[grid]\nny = 4\nnz = 4\nbogus = 1\n").is_err());
    }

    #[test]
    fn commands_write_their_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let cache = QhomCache::new(dir.path().join("cache"));
        let c = RunConfig::from_toml_str(CHECKER).unwrap();
        let session = || Session::new(c.clone(), dir.path(), Some(cache.clone())).unwrap();
        let (form, m1) = session().homogenize().unwrap();
        assert_eq!(m1.cache_misses, 1);
        let out = dir.path().join("results");
        let text = std::fs::read_to_string(out.join(FORM_FILE)).unwrap();
        let (again, m2) = session().homogenize().unwrap();
        assert_eq!(m2.cache_hits, 1);
        assert_eq!(form.fjm.0, again.fjm.0);
        assert_eq!(text, std::fs::read_to_string(out.join(FORM_FILE)).unwrap());
        let strip = |mut m: RunManifest| {
            m.timings.clear();
            m.cache_hits = 0;
            m.cache_misses = 0;
            m
        };
        assert_eq!(strip(m1), strip(m2));
        let manifest = RunManifest::from_toml_str(&std::fs::read_to_string(out.join(MANIFEST_FILE)).unwrap()).unwrap();
        assert_eq!(manifest.command, "homogenize");

        let (e, _) = session().energy().unwrap();
        assert!((e - form.eval(&crate::tensor::SymMat22::diag(0.0, 1.0)) / 12.0).abs() < 1e-10);
        let (study, _) = session().gamma_check().unwrap();
        assert_eq!(study.rows.len(), 2);
        assert!(std::fs::read_to_string(out.join(GAMMA_FILE)).unwrap().starts_with("h,epsilon"));
        let (report, _) = session().convergence().unwrap();
        assert_eq!(report.nested_monotone, Some(true));
        assert_eq!(std::fs::read_to_string(out.join(CONVERGENCE_FILE)).unwrap().lines().count(), 4);
        assert_eq!(session().validate().unwrap().command, "validate");
    }

    #[test]
    fn energy_rejects_non_isometric_surfaces() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = RunConfig::from_toml_str(CHECKER).unwrap();
        c.surface = Some(SurfaceSpec { kind: "parabolic".into(), radius: None, coef: Some(0.5), domain: vec![] });
        let s = Session::new(c, dir.path(), None).unwrap();
        assert!(matches!(s.energy(), Err(Error::NotIsometric(_))));
    }

    #[test]
    fn constant_field_converges_trivially() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = RunConfig::from_toml_str(CHECKER).unwrap();
        c.microstructure = Some(MicrostructureSpec {
            phases: vec![crate::microstructure::Lame::new(1.0, 1.0)],
            ..MicrostructureSpec::catalog("constant")
        });
        c.regime.gamma1 = 1.0;
        let (report, _) = Session::new(c, dir.path(), None).unwrap().convergence().unwrap();
        let q0 = report.rows[0].form.fjm.0;
        for r in &report.rows {
            assert!((r.form.fjm.0 - q0).abs().max() < 1e-10);
        }
    }
    fn refinement(kind: &str, phases: Vec<crate::microstructure::Lame>, amplitude: Option<f64>) -> ConvergenceReport {
        let dir = tempfile::tempdir().unwrap();
        let mut c = RunConfig::from_toml_str(CHECKER).unwrap();
        c.microstructure = Some(MicrostructureSpec { phases, amplitude, ..MicrostructureSpec::catalog(kind) });
        c.convergence = Some(ConvergenceConfig { grids: vec![8, 16, 32, 64] });
        Session::new(c, dir.path(), None).unwrap().convergence().unwrap().0
    }

    #[test]
    fn checkerboard_infima_decrease_under_refinement() {
        use crate::microstructure::Lame;
        let report = refinement("checkerboard_y", vec![Lame::new(1.0, 1.0), Lame::new(4.0, 0.2)], None);
        assert_eq!(report.nested_monotone, Some(true));
    }

    #[test]
    fn smooth_field_converges_at_second_order() {
        let report = refinement("sinusoidal_y", vec![crate::microstructure::Lame::new(1.0, 1.0)], Some(0.5));
        let p = report.observed_order.unwrap();
        assert!(p >= 1.5, "observed order {p}");
    }
}
