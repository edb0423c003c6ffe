//! The fine-scale (`z`) corrector problem and the homogenized tensor field over `y`.
//!
//! For a fixed coarse point `y`, `Q_hom(y, C)` is the minimum over periodic
//! `φ2: Q → R³` of `∫_Q Q(y, z, C + sym(∇φ2 | 0)) dz`. The problem is discretized
//! with periodic bilinear elements on an `nz × nz` grid; the coefficient of each
//! element is the cell-center sample.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linsolve::{build_element_problem, CellProblem, CgOptions, ElementBlock, ElementLayout};
use crate::mesh::{bilinear_points, PeriodicGrid};
use crate::microstructure::MicrostructureField;
use crate::tensor::{rank_one_sym_coords, QuadForm33, SymMat33};

/// Periodic zero-mean corrector `φ2` on the nodes of an `nz × nz` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerCorrector {
    pub nz: usize,
    /// Three components per node, node-major.
    pub phi: Vec<f64>,
    pub energy: f64,
}

impl InnerCorrector {
    pub fn component_mean(&self, k: usize) -> f64 {
        self.phi.iter().skip(k).step_by(3).sum::<f64>() / (self.nz * self.nz) as f64
    }

    /// Bilinear interpolation at `z`, extended periodically.
    pub fn value_at(&self, z: [f64; 2]) -> [f64; 3] {
        interpolate_periodic(&self.phi, self.nz, 3, z)
    }
}

/// Bilinear interpolation of a node-major periodic field with `ncomp` components
/// on the corner nodes of an `n × n` grid.
pub fn interpolate_periodic(field: &[f64], n: usize, ncomp: usize, z: [f64; 2]) -> [f64; 3] {
    let grid = PeriodicGrid::new(n);
    let s = [(z[0] + 0.5).rem_euclid(1.0) * n as f64, (z[1] + 0.5).rem_euclid(1.0) * n as f64];
    let i = [(s[0].floor() as usize).min(n - 1), (s[1].floor() as usize).min(n - 1)];
    let t = [s[0] - i[0] as f64, s[1] - i[1] as f64];
    let w = [(1.0 - t[0]) * (1.0 - t[1]), t[0] * (1.0 - t[1]), (1.0 - t[0]) * t[1], t[0] * t[1]];
    let nodes = [
        grid.node(i[0], i[1]),
        grid.node(i[0] + 1, i[1]),
        grid.node(i[0], i[1] + 1),
        grid.node(i[0] + 1, i[1] + 1),
    ];
    let mut out = [0.0; 3];
    for (node, wi) in nodes.iter().zip(w) {
        for (k, o) in out.iter_mut().enumerate().take(ncomp) {
            *o += wi * field[node * ncomp + k];
        }
    }
    out
}

/// Distinct forms of a slice and the per-element index into them.
pub(crate) fn palette_of(forms: &[QuadForm33]) -> (Vec<QuadForm33>, Vec<u32>) {
    let mut lookup: HashMap<[u64; 21], u32> = HashMap::new();
    let mut palette = Vec::new();
    let index = forms
        .iter()
        .map(|f| {
            let mut key = [0u64; 21];
            for (k, v) in key.iter_mut().zip(f.upper_triangle()) {
                *k = v.to_bits();
            }
            *lookup.entry(key).or_insert_with(|| {
                palette.push(*f);
                (palette.len() - 1) as u32
            })
        })
        .collect();
    (palette, index)
}

/// The discretized inner problem on a slice of `nz × nz` cell-center forms.
///
/// Unknowns are three components per node (node-major); loads are the six
/// orthonormal coordinates of `C`.
pub fn inner_problem(qslice: &[QuadForm33], nz: usize) -> CellProblem {
    assert_eq!(qslice.len(), nz * nz);
    let grid = PeriodicGrid::new(nz);
    let (palette, kind) = palette_of(qslice);
    let points = bilinear_points(grid.spacing());
    let strain: Vec<DMatrix<f64>> = points
        .iter()
        .map(|p| {
            let mut d = DMatrix::zeros(6, 12);
            for a in 0..4 {
                for k in 0..3 {
                    let g = [p.grad[a][0], p.grad[a][1], 0.0];
                    d.set_column(3 * a + k, &rank_one_sym_coords(k, &g));
                }
            }
            d
        })
        .collect();
    let blocks: Vec<ElementBlock> = palette
        .par_iter()
        .map(|q| {
            let qm = DMatrix::from_column_slice(6, 6, q.0.as_slice());
            let mut k = DMatrix::zeros(12, 12);
            let mut g = DMatrix::zeros(12, 6);
            for (p, d) in points.iter().zip(&strain) {
                let dq = d.transpose() * &qm * p.weight;
                k += &dq * d;
                g += dq;
            }
            ElementBlock { stiffness: k, coupling: vec![g] }
        })
        .collect();
    let mut dofs = Vec::with_capacity(12 * nz * nz);
    for e in 0..nz * nz {
        for node in grid.element_nodes(e) {
            for k in 0..3 {
                dofs.push((3 * node + k) as u32);
            }
        }
    }
    let kernel = (0..3).map(|k| (0..grid.nodes()).map(|n| (3 * n + k) as u32).collect()).collect();
    let mut mass = DMatrix::zeros(6, 6);
    for q in qslice {
        mass += DMatrix::from_column_slice(6, 6, q.0.as_slice());
    }
    mass /= qslice.len() as f64;
    let layout = ElementLayout {
        dim: 3 * grid.nodes(),
        dpe: 12,
        dofs,
        kind,
        weights: vec![1.0; nz * nz],
        kernel,
    };
    build_element_problem(layout, blocks, mass)
}

fn slice_is_uniform(qslice: &[QuadForm33]) -> bool {
    qslice.iter().all(|q| *q == qslice[0])
}

/// Minimizes the discrete inner energy for the loading `C`.
pub fn solve_inner(qslice: &[QuadForm33], c: &SymMat33, nz: usize, rtol: f64) -> Result<InnerCorrector> {
    if slice_is_uniform(qslice) {
        return Ok(InnerCorrector { nz, phi: vec![0.0; 3 * nz * nz], energy: qslice[0].eval_sym(c) });
    }
    let problem = inner_problem(qslice, nz);
    let l = c.coords().as_slice().to_vec();
    let (phi, _) = problem.solve(&l, &CgOptions::with_rtol(rtol))?;
    let energy = problem.energy(&phi, &l);
    Ok(InnerCorrector { nz, phi, energy })
}

/// `Q_hom(y, ·)` on one slice, from six solves and bilinear cross terms.
pub fn qhom_tensor(qslice: &[QuadForm33], nz: usize, rtol: f64) -> Result<QuadForm33> {
    let problem = inner_problem(qslice, nz);
    let (m, _) = problem.form_bilinear(&CgOptions::with_rtol(rtol))?;
    Ok(QuadForm33::from_matrix(nalgebra::Matrix6::from_iterator(m.iter().copied())))
}

/// `Q_hom(y, ·)` by polarization over 21 loadings, each energy evaluated directly.
pub fn qhom_tensor_polarized(qslice: &[QuadForm33], nz: usize, rtol: f64) -> Result<QuadForm33> {
    let problem = inner_problem(qslice, nz);
    let m = problem.form_polarization(&CgOptions::with_rtol(rtol))?;
    Ok(QuadForm33::from_matrix(nalgebra::Matrix6::from_iterator(m.iter().copied())))
}

/// Where a [`QhomField`] came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QhomProvenance {
    pub microstructure_hash: String,
    pub ny: usize,
    pub nz: usize,
    pub rtol: f64,
    /// True when `Q_hom := Q` was taken without solving inner problems.
    pub bypassed: bool,
}

/// `Q_hom(y, ·)` at the cell centers of an `ny × ny` grid, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct QhomField {
    pub forms: Vec<QuadForm33>,
    pub provenance: QhomProvenance,
}

impl QhomField {
    pub fn ny(&self) -> usize {
        self.provenance.ny
    }

    /// A field that is the same form at every node.
    pub fn uniform(q: QuadForm33, ny: usize) -> Self {
        Self {
            forms: vec![q; ny * ny],
            provenance: QhomProvenance { microstructure_hash: String::new(), ny, nz: 0, rtol: 0.0, bypassed: true },
        }
    }

    /// The single-scale pipeline: `Q_hom(y, ·) := Q(y, z₀, ·)` with no inner solve.
    pub fn bypass(m: &MicrostructureField, ny: usize) -> Result<Self> {
        let nz = match m {
            MicrostructureField::GridData(g) => g.nz,
            _ => 1,
        };
        m.check_resolution(ny, nz)?;
        let forms = (0..ny * ny).map(|iy| m.form_at_node(iy, 0, ny, nz)).collect();
        Ok(Self {
            forms,
            provenance: QhomProvenance { microstructure_hash: m.hash_hex(), ny, nz, rtol: 0.0, bypassed: true },
        })
    }
}

/// Digest of a slice's coefficients, used to solve each distinct slice once.
fn slice_digest(qslice: &[QuadForm33]) -> [u8; 32] {
    let mut h = Sha256::new();
    for q in qslice {
        for v in q.upper_triangle() {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().into()
}

/// For each coarse node, the index of its distinct slice; plus one
/// representative coarse node per distinct slice.
pub(crate) fn distinct_slices(m: &MicrostructureField, ny: usize, nz: usize) -> (Vec<u32>, Vec<usize>) {
    let mut lookup: HashMap<[u8; 32], u32> = HashMap::new();
    let mut reps = Vec::new();
    let ids = (0..ny * ny)
        .map(|iy| {
            let d = slice_digest(&m.slice(iy, ny, nz));
            *lookup.entry(d).or_insert_with(|| {
                reps.push(iy);
                (reps.len() - 1) as u32
            })
        })
        .collect();
    (ids, reps)
}

/// Homogenized tensors at every coarse node. Identical slices are solved once;
/// slices constant in `z` need no solve at all.
pub fn qhom_field(m: &MicrostructureField, ny: usize, nz: usize, rtol: f64) -> Result<QhomField> {
    m.check_resolution(ny, nz)?;
    let (ids, reps) = distinct_slices(m, ny, nz);
    log::debug!("qhom field: {} distinct slices over {} coarse nodes", reps.len(), ny * ny);
    let distinct: Vec<QuadForm33> = reps
        .par_iter()
        .map(|&iy| {
            let slice = m.slice(iy, ny, nz);
            if slice_is_uniform(&slice) {
                Ok(slice[0])
            } else {
                qhom_tensor(&slice, nz, rtol)
            }
        })
        .collect::<Result<_>>()?;
    let forms = ids.iter().map(|&i| distinct[i as usize]).collect();
    Ok(QhomField {
        forms,
        provenance: QhomProvenance { microstructure_hash: m.hash_hex(), ny, nz, rtol, bypassed: false },
    })
}

/// Basis correctors `φ2(E_k)`, k = 1..6, for every distinct slice.
#[derive(Debug, Clone)]
pub struct InnerCorrectorSet {
    pub ny: usize,
    pub nz: usize,
    pub slice_of_node: Vec<u32>,
    /// Per distinct slice: empty when the slice is constant in `z`
    /// (zero corrector), otherwise six node-major fields.
    pub basis: Vec<Vec<Vec<f64>>>,
}

impl InnerCorrectorSet {
    /// `φ2(C)(z)` at coarse node `iy`, by linearity in `C`.
    pub fn value(&self, iy: usize, c: &SymMat33, z: [f64; 2]) -> [f64; 3] {
        let basis = &self.basis[self.slice_of_node[iy] as usize];
        let mut out = [0.0; 3];
        for (k, field) in basis.iter().enumerate() {
            let ck = c.0[k];
            if ck != 0.0 {
                let v = interpolate_periodic(field, self.nz, 3, z);
                for i in 0..3 {
                    out[i] += ck * v[i];
                }
            }
        }
        out
    }

    pub fn is_trivial(&self) -> bool {
        self.basis.iter().all(|b| b.is_empty())
    }
}

pub fn inner_correctors(m: &MicrostructureField, ny: usize, nz: usize, rtol: f64) -> Result<InnerCorrectorSet> {
    m.check_resolution(ny, nz)?;
    let (ids, reps) = distinct_slices(m, ny, nz);
    let basis = reps
        .par_iter()
        .map(|&iy| {
            let slice = m.slice(iy, ny, nz);
            if slice_is_uniform(&slice) {
                return Ok(vec![]);
            }
            let problem = inner_problem(&slice, nz);
            Ok(problem.basis_correctors(&CgOptions::with_rtol(rtol))?.into_iter().map(|s| s.0).collect())
        })
        .collect::<Result<_>>()?;
    Ok(InnerCorrectorSet { ny, nz, slice_of_node: ids, basis })
}

const CACHE_MAGIC: &str = "bendhom-qhom v1";

/// On-disk cache of homogenized tensor fields.
///
/// Each entry is a text file: a header of `key value` lines (magic, hash, ny,
/// nz, rtol, checksum) followed by one line of 21 upper-triangle coefficients
/// per coarse node. The checksum is the SHA-256 of the body.
#[derive(Debug, Clone)]
pub struct QhomCache {
    pub dir: PathBuf,
}

impl QhomCache {
    pub const ENV_VAR: &'static str = "BENDHOM_CACHE_DIR";

    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    /// The directory named by `BENDHOM_CACHE_DIR`, or `.bendhom-cache`.
    pub fn from_env() -> Self {
        Self::new(std::env::var_os(Self::ENV_VAR).map(PathBuf::from).unwrap_or_else(|| ".bendhom-cache".into()))
    }

    pub fn entry_path(&self, hash: &str, ny: usize, nz: usize, rtol: f64) -> PathBuf {
        let short = &hash[..hash.len().min(16)];
        self.dir.join(format!("qhom-{short}-ny{ny}-nz{nz}-rtol{rtol:e}.txt"))
    }

    pub fn load(&self, hash: &str, ny: usize, nz: usize, rtol: f64) -> Option<QhomField> {
        let path = self.entry_path(hash, ny, nz, rtol);
        if !path.exists() {
            return None;
        }
        match read_cache_file(&path, hash, ny, nz, rtol) {
            Ok(f) => Some(f),
            Err(e) => {
                log::warn!("ignoring corrupt cache entry {}: {e}", path.display());
                None
            }
        }
    }

    pub fn store(&self, field: &QhomField) -> Result<PathBuf> {
        let p = &field.provenance;
        std::fs::create_dir_all(&self.dir)?;
        let path = self.entry_path(&p.microstructure_hash, p.ny, p.nz, p.rtol);
        let mut body = String::new();
        for q in &field.forms {
            let row: Vec<String> = q.upper_triangle().iter().map(|v| format!("{v:.16e}")).collect();
            writeln!(body, "{}", row.join(" ")).unwrap();
        }
        let checksum = hex::encode(Sha256::digest(body.as_bytes()));
        let text = format!(
            "{CACHE_MAGIC}\nhash {}\nny {}\nnz {}\nrtol {:e}\nchecksum {checksum}\n{body}",
            p.microstructure_hash, p.ny, p.nz, p.rtol
        );
        let tmp = path.with_extension(format!("tmp.{}", std::process::id()));
        std::fs::write(&tmp, text)?;
        std::fs::rename(&tmp, &path)?;
        Ok(path)
    }
}

fn read_cache_file(path: &Path, hash: &str, ny: usize, nz: usize, rtol: f64) -> Result<QhomField> {
    let text = std::fs::read_to_string(path)?;
    let bad = |msg: &str| Error::Parse { path: path.to_path_buf(), msg: msg.to_string() };
    let mut lines = text.splitn(7, '\n');
    let mut header = |key: &str| -> Result<String> {
        let line = lines.next().ok_or_else(|| bad("truncated header"))?;
        if key.is_empty() {
            return Ok(line.to_string());
        }
        line.strip_prefix(key)
            .and_then(|r| r.strip_prefix(' '))
            .map(str::to_string)
            .ok_or_else(|| bad(&format!("expected `{key}`")))
    };
    if header("")? != CACHE_MAGIC {
        return Err(bad("unknown cache format"));
    }
    let h = header("hash")?;
    let fny: usize = header("ny")?.parse().map_err(|_| bad("ny"))?;
    let fnz: usize = header("nz")?.parse().map_err(|_| bad("nz"))?;
    let frtol: f64 = header("rtol")?.parse().map_err(|_| bad("rtol"))?;
    let checksum = header("checksum")?;
    let body = lines.next().unwrap_or("");
    if h != hash || fny != ny || fnz != nz || frtol != rtol {
        return Err(bad("provenance does not match request"));
    }
    if hex::encode(Sha256::digest(body.as_bytes())) != checksum {
        return Err(bad("checksum mismatch"));
    }
    let mut forms = Vec::with_capacity(ny * ny);
    for line in body.lines() {
        let vals: Vec<f64> = line.split_whitespace().map(str::parse).collect::<std::result::Result<_, _>>().map_err(|_| bad("bad number"))?;
        let arr: [f64; 21] = vals.try_into().map_err(|_| bad("expected 21 coefficients"))?;
        forms.push(QuadForm33::from_upper_triangle(&arr));
    }
    if forms.len() != ny * ny {
        return Err(bad("wrong number of rows"));
    }
    Ok(QhomField {
        forms,
        provenance: QhomProvenance { microstructure_hash: hash.to_string(), ny, nz, rtol, bypassed: false },
    })
}

/// [`qhom_field`] through the disk cache. Returns the field and whether it was a cache hit.
pub fn qhom_field_cached(
    m: &MicrostructureField,
    ny: usize,
    nz: usize,
    rtol: f64,
    cache: Option<&QhomCache>,
) -> Result<(QhomField, bool)> {
    m.check_resolution(ny, nz)?;
    let hash = m.hash_hex();
    if let Some(c) = cache {
        if let Some(f) = c.load(&hash, ny, nz, rtol) {
            return Ok((f, true));
        }
    }
    let field = qhom_field(m, ny, nz, rtol)?;
    if let Some(c) = cache {
        if let Err(e) = c.store(&field) {
            log::warn!("could not write cache entry: {e}");
        }
    }
    Ok((field, false))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::microstructure::{make_isotropic, Lame};
    use crate::tensor::SymMat22;

    fn two_phase_slice(nz: usize) -> Vec<QuadForm33> {
        let a = make_isotropic(1.0, 0.5).unwrap();
        let b = make_isotropic(4.0, 1.0).unwrap();
        // Inclusion in the lower-left quarter.
        (0..nz * nz).map(|i| if i / nz < nz / 2 && i % nz < nz / 2 { b } else { a }).collect()
    }

    #[test]
    fn constant_slice_has_zero_corrector() {
        let q = make_isotropic(1.0, 1.0).unwrap();
        let c = SymMat33::embed(&SymMat22::new(1.0, -0.5, 0.3));
        let sol = solve_inner(&vec![q; 16], &c, 4, 1e-10).unwrap();
        assert!(sol.phi.iter().all(|v| *v == 0.0));
        assert!((sol.energy - q.eval_sym(&c)).abs() < 1e-14);
        let t = qhom_tensor(&vec![q; 64], 8, 1e-10).unwrap();
        assert!((t.0 - q.0).norm() < 1e-10);
    }

    #[test]
    fn zero_loading_gives_zero() {
        let sol = solve_inner(&two_phase_slice(8), &SymMat33::zero(), 8, 1e-10).unwrap();
        assert_eq!(sol.energy, 0.0);
        assert!(sol.phi.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn corrector_is_mean_free_and_energy_consistent() {
        let slice = two_phase_slice(8);
        let c = SymMat33::basis(0);
        let sol = solve_inner(&slice, &c, 8, 1e-12).unwrap();
        for k in 0..3 {
            assert!(sol.component_mean(k).abs() < 1e-12);
        }
        let t = qhom_tensor(&slice, 8, 1e-12).unwrap();
        assert!((t.0[(0, 0)] - sol.energy).abs() < 1e-9 * sol.energy);
    }

    #[test]
    fn bilinear_and_polarized_assembly_agree() {
        let slice = two_phase_slice(8);
        let a = qhom_tensor(&slice, 8, 1e-12).unwrap();
        let b = qhom_tensor_polarized(&slice, 8, 1e-12).unwrap();
        assert!((a.0 - b.0).norm() < 1e-8 * a.0.norm(), "{}", (a.0 - b.0).norm());
        assert!((a.0 - a.0.transpose()).norm() <= 1e-12);
    }

    #[test]
    fn bounds_against_average_and_coercivity() {
        let slice = two_phase_slice(8);
        let t = qhom_tensor(&slice, 8, 1e-12).unwrap();
        let mut avg = nalgebra::Matrix6::zeros();
        for q in &slice {
            avg += q.0;
        }
        avg /= slice.len() as f64;
        let diff = avg - t.0;
        assert!(diff.symmetric_eigenvalues().min() > -1e-10);
        assert!(t.eigen_bounds().0 >= 2.0 - 1e-10);
    }

    #[test]
    fn z_independent_field_reduces_to_samples() {
        let m = MicrostructureField::CheckerboardY { phases: [Lame::new(1.0, 1.0), Lame::new(2.0, 0.5)] };
        let f = qhom_field(&m, 4, 4, 1e-10).unwrap();
        let bypass = QhomField::bypass(&m, 4).unwrap();
        for (a, b) in f.forms.iter().zip(&bypass.forms) {
            assert!((a.0 - b.0).norm() < 1e-10);
        }
    }

    #[test]
    fn cache_roundtrip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let cache = QhomCache::new(dir.path());
        let m = MicrostructureField::ProductTwoScale {
            phases: [Lame::new(1.0, 1.0), Lame::new(2.0, 0.5)],
            fraction: 0.5,
            axis: 0,
            contrast: 3.0,
        };
        let (a, hit) = qhom_field_cached(&m, 4, 4, 1e-10, Some(&cache)).unwrap();
        assert!(!hit);
        let (b, hit) = qhom_field_cached(&m, 4, 4, 1e-10, Some(&cache)).unwrap();
        assert!(hit);
        assert_eq!(a.forms, b.forms);
        let path = cache.entry_path(&m.hash_hex(), 4, 4, 1e-10);
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, &text[..text.len() * 2 / 3]).unwrap();
        let (c, hit) = qhom_field_cached(&m, 4, 4, 1e-10, Some(&cache)).unwrap();
        assert!(!hit);
        assert_eq!(a.forms, c.forms);
    }

    #[test]
    fn interpolation_reproduces_nodes() {
        let n = 4;
        let field: Vec<f64> = (0..3 * n * n).map(|i| i as f64).collect();
        let v = interpolate_periodic(&field, n, 3, [-0.5 + 0.25, -0.5 + 0.5]);
        let node = 1 * n + 2;
        assert_eq!(v, [field[3 * node], field[3 * node + 1], field[3 * node + 2]]);
    }
}
