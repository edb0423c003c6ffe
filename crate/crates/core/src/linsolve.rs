//! Symmetric positive semidefinite cell operators and a projected conjugate
//! gradient solver.
//!
//! Every discretized cell problem in this crate has the form
//!
//! ```text
//! E(u; L) = Lᵀ M L − 2 b(L)ᵀ u + uᵀ K u
//! ```
//!
//! with a loading `L`, an SPSD stiffness `K` whose kernel is spanned by
//! indicator vectors of known index groups, and load vectors `b(L)` linear in
//! `L`. [`CellProblem`] bundles these pieces.

use std::str::FromStr;

use nalgebra::DMatrix;
use nalgebra_sparse::{CooMatrix, CsrMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Matrix-free action of a symmetric operator.
pub trait LinearOperator: Send + Sync {
    fn dim(&self) -> usize;
    /// Overwrites `y` with `A x`.
    fn apply(&self, x: &[f64], y: &mut [f64]);
    fn diagonal(&self) -> Vec<f64>;
    /// Explicit sparse form, when the operator has one.
    fn to_csr(&self) -> Option<CsrMatrix<f64>> {
        None
    }
}

/// Operator stored as a list of small dense element matrices.
///
/// Elements sharing a coefficient share one matrix, so memory scales with the
/// number of distinct coefficients rather than the number of elements.
#[derive(Debug, Clone)]
pub struct ElementOperator {
    dim: usize,
    dpe: usize,
    dofs: Vec<u32>,
    kind: Vec<u32>,
    mats: Vec<Vec<f64>>,
}

impl ElementOperator {
    /// `dofs` holds `dpe` global indices per element; `kind[e]` selects the
    /// element matrix. Matrices are symmetrized on entry.
    pub fn new(dim: usize, dpe: usize, dofs: Vec<u32>, kind: Vec<u32>, mats: Vec<DMatrix<f64>>) -> Self {
        assert_eq!(dofs.len(), dpe * kind.len());
        let mats = mats
            .into_iter()
            .map(|m| {
                assert_eq!(m.shape(), (dpe, dpe));
                let s = (&m + m.transpose()) * 0.5;
                // Row-major copy for the apply loop.
                s.transpose().as_slice().to_vec()
            })
            .collect();
        Self { dim, dpe, dofs, kind, mats }
    }

    pub fn n_elements(&self) -> usize {
        self.kind.len()
    }

    pub fn element_dofs(&self, e: usize) -> &[u32] {
        &self.dofs[e * self.dpe..(e + 1) * self.dpe]
    }
}

impl LinearOperator for ElementOperator {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        let d = self.dpe;
        let mut xe = vec![0.0; d];
        for (e, &k) in self.kind.iter().enumerate() {
            let dofs = &self.dofs[e * d..(e + 1) * d];
            for (xl, &g) in xe.iter_mut().zip(dofs) {
                *xl = x[g as usize];
            }
            let m = &self.mats[k as usize];
            for (a, &g) in dofs.iter().enumerate() {
                let row = &m[a * d..(a + 1) * d];
                let s: f64 = row.iter().zip(&xe).map(|(r, v)| r * v).sum();
                y[g as usize] += s;
            }
        }
    }

    fn diagonal(&self) -> Vec<f64> {
        let d = self.dpe;
        let mut diag = vec![0.0; self.dim];
        for (e, &k) in self.kind.iter().enumerate() {
            let m = &self.mats[k as usize];
            for (a, &g) in self.dofs[e * d..(e + 1) * d].iter().enumerate() {
                diag[g as usize] += m[a * d + a];
            }
        }
        diag
    }

    fn to_csr(&self) -> Option<CsrMatrix<f64>> {
        let d = self.dpe;
        let mut coo = CooMatrix::new(self.dim, self.dim);
        for (e, &k) in self.kind.iter().enumerate() {
            let m = &self.mats[k as usize];
            let dofs = &self.dofs[e * d..(e + 1) * d];
            for (a, &ga) in dofs.iter().enumerate() {
                for (b, &gb) in dofs.iter().enumerate() {
                    coo.push(ga as usize, gb as usize, m[a * d + b]);
                }
            }
        }
        Some(CsrMatrix::from(&coo))
    }
}

/// Dense symmetric operator, for small spectral systems and tests.
#[derive(Debug, Clone)]
pub struct DenseOperator(pub DMatrix<f64>);

impl LinearOperator for DenseOperator {
    fn dim(&self) -> usize {
        self.0.nrows()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let n = self.dim();
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = (0..n).map(|j| self.0[(i, j)] * x[j]).sum();
        }
    }

    fn diagonal(&self) -> Vec<f64> {
        self.0.diagonal().iter().copied().collect()
    }
}

/// A symmetric operator together with its declared kernel.
///
/// Each kernel group is a set of indices whose indicator vector spans one
/// kernel direction; the groups must be disjoint.
pub struct CellOperator {
    op: Box<dyn LinearOperator>,
    kernel: Vec<Vec<u32>>,
}

impl CellOperator {
    pub fn new(op: Box<dyn LinearOperator>, kernel: Vec<Vec<u32>>) -> Self {
        Self { op, kernel }
    }

    pub fn dim(&self) -> usize {
        self.op.dim()
    }

    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.op.apply(x, y)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        self.op.diagonal()
    }

    pub fn kernel(&self) -> &[Vec<u32>] {
        &self.kernel
    }

    pub fn to_csr(&self) -> Option<CsrMatrix<f64>> {
        self.op.to_csr()
    }

    /// Removes the component along every kernel group.
    pub fn project(&self, v: &mut [f64]) {
        for group in &self.kernel {
            let mean = group.iter().map(|&i| v[i as usize]).sum::<f64>() / group.len() as f64;
            for &i in group {
                v[i as usize] -= mean;
            }
        }
    }

    pub fn quadratic(&self, x: &[f64]) -> f64 {
        let mut y = vec![0.0; self.dim()];
        self.apply(x, &mut y);
        dot(x, &y)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Symmetry defect over `pairs` random probes, relative to `‖A‖‖x‖‖y‖`
/// with `‖A‖` estimated from the probes themselves.
pub fn probe_symmetry(op: &dyn LinearOperator, pairs: usize, seed: u64) -> f64 {
    let n = op.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ax = vec![0.0; n];
    let mut ay = vec![0.0; n];
    let mut worst: f64 = 0.0;
    for _ in 0..pairs {
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        op.apply(&x, &mut ax);
        op.apply(&y, &mut ay);
        let (nx, ny) = (norm(&x), norm(&y));
        let scale = (norm(&ax) / nx).max(norm(&ay) / ny).max(f64::MIN_POSITIVE);
        let defect = (dot(&ax, &y) - dot(&x, &ay)).abs() / (scale * nx * ny);
        worst = worst.max(defect);
    }
    worst
}

/// Fails with [`Error::NotSymmetric`] when the probe defect exceeds `1e-12`.
pub fn check_symmetry(op: &CellOperator) -> Result<()> {
    let defect = probe_symmetry(op.op.as_ref(), 32, 0x5eed);
    if defect > 1e-12 {
        return Err(Error::NotSymmetric { defect });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgOptions {
    pub rtol: f64,
    /// Absolute residual floor; stops iterating on right-hand sides that are
    /// pure rounding noise.
    pub atol: f64,
    pub max_iter: Option<usize>,
    /// Diagonal (Jacobi) preconditioning.
    pub jacobi: bool,
}

impl Default for CgOptions {
    fn default() -> Self {
        Self { rtol: 1e-10, atol: 0.0, max_iter: None, jacobi: false }
    }
}

impl CgOptions {
    pub fn with_rtol(rtol: f64) -> Self {
        Self { rtol, ..Self::default() }
    }
}

pub fn default_max_iter(n: usize) -> usize {
    20 * (n as f64).sqrt().ceil() as usize + 200
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    /// `‖A x − b‖ / ‖b‖` recomputed from the returned iterate.
    pub residual: f64,
    /// `½ xᵀA x − bᵀx` at the returned iterate.
    pub energy: f64,
}

/// Conjugate gradients on the complement of the operator's kernel.
///
/// The right-hand side is projected first; iterates stay orthogonal to every
/// kernel group. On success the true relative residual is at most
/// `max(rtol, atol/‖b‖)`.
pub fn cg_solve(op: &CellOperator, rhs: &[f64], opts: &CgOptions) -> Result<(Vec<f64>, SolveReport)> {
    let n = op.dim();
    assert_eq!(rhs.len(), n);
    let mut b = rhs.to_vec();
    op.project(&mut b);
    let bnorm = norm(&b);
    let mut x = vec![0.0; n];
    if bnorm <= opts.atol || bnorm == 0.0 {
        return Ok((x, SolveReport { iterations: 0, residual: 0.0, energy: 0.0 }));
    }
    let tol = (opts.rtol * bnorm).max(opts.atol);
    let max_iter = opts.max_iter.unwrap_or_else(|| default_max_iter(n));
    let inv_diag: Option<Vec<f64>> = opts.jacobi.then(|| {
        op.diagonal().iter().map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 }).collect()
    });
    let precondition = |r: &[f64], z: &mut [f64]| {
        match &inv_diag {
            Some(inv) => z.iter_mut().zip(r.iter().zip(inv)).for_each(|(z, (r, d))| *z = r * d),
            None => z.copy_from_slice(r),
        }
        op.project(z);
    };

    let mut r = b.clone();
    let mut z = vec![0.0; n];
    let mut q = vec![0.0; n];
    let mut best = (f64::INFINITY, x.clone());
    let mut iterations = 0;
    // A few restarts from the true residual guard against drift of the
    // recursively updated one.
    for _restart in 0..4 {
        precondition(&r, &mut z);
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        let mut rnorm = norm(&r);
        while rnorm > tol && iterations < max_iter {
            op.apply(&p, &mut q);
            op.project(&mut q);
            let pq = dot(&p, &q);
            if !(pq > 0.0) {
                break;
            }
            let alpha = rz / pq;
            x.iter_mut().zip(&p).for_each(|(x, p)| *x += alpha * p);
            r.iter_mut().zip(&q).for_each(|(r, q)| *r -= alpha * q);
            iterations += 1;
            rnorm = norm(&r);
            if rnorm < best.0 {
                best.0 = rnorm;
                best.1.copy_from_slice(&x);
            }
            precondition(&r, &mut z);
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            p.iter_mut().zip(&z).for_each(|(p, z)| *p = z + beta * *p);
        }
        op.project(&mut x);
        op.apply(&x, &mut q);
        op.project(&mut q);
        r.iter_mut().zip(b.iter().zip(&q)).for_each(|(r, (b, q))| *r = b - q);
        let true_norm = norm(&r);
        if true_norm <= tol {
            let energy = 0.5 * dot(&x, &q) - dot(&b, &x);
            return Ok((x, SolveReport { iterations, residual: true_norm / bnorm, energy }));
        }
        if iterations >= max_iter {
            break;
        }
    }
    Err(Error::NotConverged { iterations, residual: best.0 / bnorm, best: Box::new(best.1) })
}

/// A discretized quadratic cell problem `E(u; L) = LᵀML − 2b(L)ᵀu + uᵀKu`.
pub struct CellProblem {
    pub op: CellOperator,
    /// `b(e_k)` for each load basis vector.
    pub loads: Vec<Vec<f64>>,
    /// `M`, the energy of the loading with zero corrector.
    pub load_mass: DMatrix<f64>,
    /// Magnitude scale of the load vectors, for the absolute residual floor.
    pub load_scale: f64,
    /// Always precondition with the operator's diagonal.
    pub jacobi: bool,
}

impl CellProblem {
    pub fn new(op: CellOperator, loads: Vec<Vec<f64>>, load_mass: DMatrix<f64>, load_scale: f64) -> Self {
        Self { op, loads, load_mass, load_scale, jacobi: false }
    }

    pub fn nload(&self) -> usize {
        self.loads.len()
    }

    pub fn rhs(&self, l: &[f64]) -> Vec<f64> {
        let mut b = vec![0.0; self.op.dim()];
        for (lk, bk) in l.iter().zip(&self.loads) {
            if *lk != 0.0 {
                b.iter_mut().zip(bk).for_each(|(b, v)| *b += lk * v);
            }
        }
        b
    }

    fn options(&self, opts: &CgOptions, l: &[f64]) -> CgOptions {
        let lnorm = l.iter().map(|v| v * v).sum::<f64>().sqrt();
        CgOptions {
            atol: opts.atol.max(1e-13 * self.load_scale * lnorm),
            jacobi: opts.jacobi || self.jacobi,
            ..*opts
        }
    }

    pub fn solve(&self, l: &[f64], opts: &CgOptions) -> Result<(Vec<f64>, SolveReport)> {
        cg_solve(&self.op, &self.rhs(l), &self.options(opts, l))
    }

    /// Energy evaluated directly from its definition.
    pub fn energy(&self, u: &[f64], l: &[f64]) -> f64 {
        let lv = nalgebra::DVector::from_column_slice(l);
        let m = (lv.transpose() * &self.load_mass * &lv)[(0, 0)];
        m - 2.0 * dot(&self.rhs(l), u) + self.op.quadratic(u)
    }

    /// Minimizers for each basis loading, solved in parallel.
    pub fn basis_correctors(&self, opts: &CgOptions) -> Result<Vec<(Vec<f64>, SolveReport)>> {
        (0..self.nload())
            .into_par_iter()
            .map(|k| {
                let mut l = vec![0.0; self.nload()];
                l[k] = 1.0;
                self.solve(&l, opts)
            })
            .collect()
    }

    /// The minimized energy as a matrix, from one solve per basis loading and
    /// bilinear cross terms `M_ij − b_iᵀ u_j`.
    pub fn form_bilinear(&self, opts: &CgOptions) -> Result<(DMatrix<f64>, Vec<Vec<f64>>)> {
        let sols = self.basis_correctors(opts)?;
        let n = self.nload();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = self.load_mass[(i, j)] - dot(&self.loads[i], &sols[j].0);
            }
        }
        let m = (&m + m.transpose()) * 0.5;
        Ok((m, sols.into_iter().map(|s| s.0).collect()))
    }

    /// The minimized energy as a matrix by polarization: one solve per basis
    /// loading and per pair sum, each energy evaluated directly.
    pub fn form_polarization(&self, opts: &CgOptions) -> Result<DMatrix<f64>> {
        let n = self.nload();
        let mut loads = Vec::new();
        for i in 0..n {
            for j in i..n {
                let mut l = vec![0.0; n];
                l[i] += 1.0;
                if j != i {
                    l[j] += 1.0;
                }
                loads.push((i, j, l));
            }
        }
        let energies: Vec<f64> = loads
            .par_iter()
            .map(|(_, _, l)| self.solve(l, opts).map(|(u, _)| self.energy(&u, l)))
            .collect::<Result<_>>()?;
        let mut m = DMatrix::zeros(n, n);
        for ((i, j, _), e) in loads.iter().zip(&energies) {
            if i == j {
                m[(*i, *i)] = *e;
            }
        }
        for ((i, j, _), e) in loads.iter().zip(&energies) {
            if i != j {
                let v = 0.5 * (e - m[(*i, *i)] - m[(*j, *j)]);
                m[(*i, *j)] = v;
                m[(*j, *i)] = v;
            }
        }
        Ok(m)
    }
}

/// Element-level pieces shared by all elements with one coefficient.
#[derive(Debug, Clone)]
pub struct ElementBlock {
    pub stiffness: DMatrix<f64>,
    /// Load couplings `Σ_q w Dᵀ Q P_q`, combined per element with weights.
    pub coupling: Vec<DMatrix<f64>>,
}

/// Connectivity of an element-based cell problem.
pub struct ElementLayout {
    pub dim: usize,
    pub dpe: usize,
    pub dofs: Vec<u32>,
    pub kind: Vec<u32>,
    /// `coupling.len()` weights per element.
    pub weights: Vec<f64>,
    pub kernel: Vec<Vec<u32>>,
}

/// Assembles load vectors and the stiffness operator of an element-based problem.
pub fn build_element_problem(layout: ElementLayout, blocks: Vec<ElementBlock>, load_mass: DMatrix<f64>) -> CellProblem {
    let ElementLayout { dim, dpe, dofs, kind, weights, kernel } = layout;
    let nload = load_mass.nrows();
    let nparts = blocks.first().map_or(0, |b| b.coupling.len());
    let mut loads = vec![vec![0.0; dim]; nload];
    let mut magnitude = vec![0.0; dim];
    for (e, &k) in kind.iter().enumerate() {
        let block = &blocks[k as usize];
        let w = &weights[e * nparts..(e + 1) * nparts];
        for (a, &g) in dofs[e * dpe..(e + 1) * dpe].iter().enumerate() {
            for (l, load) in loads.iter_mut().enumerate() {
                let v: f64 = block.coupling.iter().zip(w).map(|(c, wp)| wp * c[(a, l)]).sum();
                load[g as usize] -= v;
                magnitude[g as usize] += v.abs();
            }
        }
    }
    let load_scale = norm(&magnitude);
    let mats = blocks.into_iter().map(|b| b.stiffness).collect();
    let op = ElementOperator::new(dim, dpe, dofs, kind, mats);
    CellProblem::new(CellOperator::new(Box::new(op), kernel), loads, load_mass, load_scale)
}

/// Discrete derivative operators of the corrector problems.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GradientRule {
    /// `sym(∇_z φ | 0)`, the inner problem.
    AppendedZeroColumn,
    /// `sym(∇_y φ | ∂_3 φ / γ1)` plus the in-plane constant `B`.
    ScaledThirdDerivative(f64),
    /// `sym ∇_y ξ + ∇_y² η` on the relaxed in-plane form.
    InPlaneWithHessian,
}

impl FromStr for GradientRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "appended_zero_column" => return Ok(Self::AppendedZeroColumn),
            "in_plane_with_hessian" => return Ok(Self::InPlaneWithHessian),
            _ => {}
        }
        if let Some(rest) = s.strip_prefix("scaled_third_derivative") {
            let arg = rest.trim_start_matches([':', '(', '=']).trim_end_matches(')').trim();
            if let Ok(g) = arg.parse::<f64>() {
                if g > 0.0 && g.is_finite() {
                    return Ok(Self::ScaledThirdDerivative(g));
                }
            }
        }
        Err(Error::UnknownRule(s.to_string()))
    }
}

/// Grid sizes for [`assemble_gradient_operator`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridDims {
    /// Cells per axis of the periodic in-plane grid.
    pub n: usize,
    /// Elements through the thickness, for rules that have an `x3` direction.
    pub nx3: usize,
}

/// Assembles the stiffness of the chosen rule on a cell-centered coefficient grid
/// (`n × n` forms, row-major) and checks its symmetry.
pub fn assemble_gradient_operator(
    qfield: &[crate::tensor::QuadForm33],
    rule: GradientRule,
    dims: GridDims,
) -> Result<CellOperator> {
    if qfield.len() != dims.n * dims.n {
        return Err(Error::ResolutionMismatch(format!(
            "{} coefficients for a {}x{} grid",
            qfield.len(),
            dims.n,
            dims.n
        )));
    }
    let problem = match rule {
        GradientRule::AppendedZeroColumn => crate::cell_inner::inner_problem(qfield, dims.n),
        GradientRule::ScaledThirdDerivative(g) => crate::cell_outer::finite::finite_problem(qfield, dims.n, g, dims.nx3),
        GradientRule::InPlaneWithHessian => {
            let red: Vec<_> =
                qfield.iter().map(crate::tensor::relaxed_in_plane_form).collect::<Result<_>>()?;
            crate::cell_outer::zero::trig_problem(&red, dims.n)
        }
    };
    check_symmetry(&problem.op)?;
    Ok(problem.op)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Periodic second-difference matrix `2x_i − x_{i−1} − x_{i+1}`.
    fn periodic_laplacian(n: usize) -> CellOperator {
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] += 2.0;
            m[(i, (i + 1) % n)] -= 1.0;
            m[(i, (i + n - 1) % n)] -= 1.0;
        }
        CellOperator::new(Box::new(DenseOperator(m)), vec![(0..n as u32).collect()])
    }

    #[test]
    fn identity_on_mean_free_subspace() {
        let n = 10;
        let op = CellOperator::new(Box::new(DenseOperator(DMatrix::identity(n, n))), vec![(0..n as u32).collect()]);
        let mut v: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        op.project(&mut v);
        let (x, rep) = cg_solve(&op, &v, &CgOptions::default()).unwrap();
        assert!(rep.iterations <= 2);
        for (a, b) in x.iter().zip(&v) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn constant_rhs_projects_to_zero() {
        let op = periodic_laplacian(8);
        let (x, rep) = cg_solve(&op, &[3.0; 8], &CgOptions::default()).unwrap();
        assert_eq!(rep.iterations, 0);
        assert!(x.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn sine_mode_scaled_by_inverse_eigenvalue() {
        let n = 32;
        let k = 3.0;
        let op = periodic_laplacian(n);
        let theta = 2.0 * std::f64::consts::PI * k / n as f64;
        let eig = 2.0 - 2.0 * theta.cos();
        let rhs: Vec<f64> = (0..n).map(|i| (theta * i as f64).sin()).collect();
        let (x, rep) = cg_solve(&op, &rhs, &CgOptions::default()).unwrap();
        assert!(rep.residual <= 1e-10);
        for (xi, bi) in x.iter().zip(&rhs) {
            assert!((xi - bi / eig).abs() < 1e-10);
        }
        for jacobi in [false, true] {
            let opts = CgOptions { jacobi, ..CgOptions::default() };
            let (y, _) = cg_solve(&op, &rhs, &opts).unwrap();
            assert!(x.iter().zip(&y).all(|(a, b)| (a - b).abs() < 1e-10));
        }
    }

    #[test]
    fn nonconvergence_carries_best_iterate() {
        let op = periodic_laplacian(64);
        let rhs: Vec<f64> = (0..64).map(|i| ((i * i) % 7) as f64).collect();
        let opts = CgOptions { max_iter: Some(3), ..CgOptions::default() };
        match cg_solve(&op, &rhs, &opts) {
            Err(Error::NotConverged { iterations, best, .. }) => {
                assert_eq!(iterations, 3);
                assert_eq!(best.len(), 64);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn asymmetric_operator_fails_probe() {
        let mut m = DMatrix::identity(6, 6);
        m[(0, 1)] = 0.5;
        let op = CellOperator::new(Box::new(DenseOperator(m)), vec![]);
        assert!(matches!(check_symmetry(&op), Err(Error::NotSymmetric { .. })));
        assert!(check_symmetry(&periodic_laplacian(6)).is_ok());
    }

    #[test]
    fn gradient_rule_parsing() {
        assert_eq!("appended_zero_column".parse::<GradientRule>().unwrap(), GradientRule::AppendedZeroColumn);
        assert_eq!(
            "scaled_third_derivative(2.5)".parse::<GradientRule>().unwrap(),
            GradientRule::ScaledThirdDerivative(2.5)
        );
        assert_eq!("scaled_third_derivative:1".parse::<GradientRule>().unwrap(), GradientRule::ScaledThirdDerivative(1.0));
        assert!(matches!("curl".parse::<GradientRule>(), Err(Error::UnknownRule(_))));
        assert!(matches!("scaled_third_derivative(0)".parse::<GradientRule>(), Err(Error::UnknownRule(_))));
    }

    #[test]
    fn element_operator_matches_csr() {
        // Two 1-D periodic linear elements on three nodes.
        let k = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        let op = ElementOperator::new(3, 2, vec![0, 1, 1, 2, 2, 0], vec![0, 0, 0], vec![k]);
        let csr = op.to_csr().unwrap();
        let x = [1.0, -2.0, 0.5];
        let mut y = [0.0; 3];
        op.apply(&x, &mut y);
        let dense = DMatrix::from(&csr);
        let yd = &dense * nalgebra::DVector::from_column_slice(&x);
        for i in 0..3 {
            assert!((y[i] - yd[i]).abs() < 1e-15);
        }
        assert_eq!(op.diagonal(), vec![2.0, 2.0, 2.0]);
    }
}
