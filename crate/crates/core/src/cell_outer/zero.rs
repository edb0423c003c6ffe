//! Zero `γ1`: in-plane correctors `sym ∇_y ξ + x3 ∇_y² η` with the third
//! column relaxed pointwise.
//!
//! Relaxing the free fields `g_i` pointwise turns `Q_hom(y, ·)` into the reduced
//! in-plane form `Q_red(y, ·)`. The optimal `ξ` is affine in `x3` and only its
//! odd part survives, so the raw infimum is `(1/12)·m(A)` with
//!
//! ```text
//! m(A) = min_{ξ1, η} ∫_Q Q_red(y, A + sym ∇ξ1 + ∇²η) dy.
//! ```
//!
//! Writing `ξ1 = ∇ψ + ∇⊥ψ̃`, the gradient part duplicates `∇²η`; the fast path
//! therefore keeps only the rotated part, `ξ1 = (−∂2ψ, ∂1ψ)`, which makes the
//! representation unique. Both `ψ` and `η` live in a truncated real Fourier
//! basis, so second derivatives are exact. Integrals use a midpoint grid twice
//! as fine as the coefficient grid.

use nalgebra::{DMatrix, Matrix3, Vector3};

use crate::linsolve::{CellOperator, CellProblem, LinearOperator};
use crate::quadrature::gauss_on;
use crate::tensor::{QuadForm22, SQRT_2};

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Real Fourier basis `f_0 = 1, f_{2k−1} = √2 cos 2πky, f_{2k} = √2 sin 2πky`
/// for `k ≤ kmax`, orthonormal on `(−1/2, 1/2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrigSpace {
    pub ny: usize,
    pub kmax: usize,
    /// Basis functions per axis, `2 kmax + 1`.
    pub p: usize,
    /// Quadrature points per axis.
    pub m: usize,
    f: DMatrix<f64>,
    ft: DMatrix<f64>,
    d: DMatrix<f64>,
    dt: DMatrix<f64>,
    d2: DMatrix<f64>,
    d2t: DMatrix<f64>,
}

/// Wavenumber of 1-D basis index `i`.
pub fn wavenumber(i: usize) -> usize {
    (i + 1) / 2
}

pub fn basis_value(i: usize, y: f64) -> f64 {
    let k = wavenumber(i) as f64;
    match i {
        0 => 1.0,
        _ if i % 2 == 1 => SQRT_2 * (TWO_PI * k * y).cos(),
        _ => SQRT_2 * (TWO_PI * k * y).sin(),
    }
}

/// `(f, f', f'')` of basis index `i` at `y`.
pub fn basis_jet(i: usize, y: f64) -> [f64; 3] {
    let k = TWO_PI * wavenumber(i) as f64;
    match i {
        0 => [1.0, 0.0, 0.0],
        _ if i % 2 == 1 => {
            let (s, c) = (k * y).sin_cos();
            [SQRT_2 * c, -SQRT_2 * k * s, -SQRT_2 * k * k * c]
        }
        _ => {
            let (s, c) = (k * y).sin_cos();
            [SQRT_2 * s, SQRT_2 * k * c, -SQRT_2 * k * k * s]
        }
    }
}

impl TrigSpace {
    /// Modes up to `ny/2 − 1`, quadrature on `2 ny` points per axis.
    pub fn new(ny: usize) -> Self {
        assert!(ny >= 4, "trigonometric space needs ny >= 4");
        let kmax = ny / 2 - 1;
        let p = 2 * kmax + 1;
        let m = 2 * ny;
        let f = DMatrix::from_fn(m, p, |r, i| basis_value(i, (r as f64 + 0.5) / m as f64 - 0.5));
        let mut d = DMatrix::zeros(p, p);
        for k in 1..=kmax {
            let w = TWO_PI * k as f64;
            d[(2 * k, 2 * k - 1)] = -w;
            d[(2 * k - 1, 2 * k)] = w;
        }
        let d2 = &d * &d;
        Self { ny, kmax, p, m, ft: f.transpose(), f, dt: d.transpose(), d2t: d2.transpose(), d, d2 }
    }

    pub fn n_coeffs(&self) -> usize {
        self.p * self.p
    }

    /// Values `F C Fᵀ` on the quadrature grid.
    fn eval(&self, c: &DMatrix<f64>) -> DMatrix<f64> {
        &self.f * c * &self.ft
    }

    fn adjoint(&self, s: &DMatrix<f64>) -> DMatrix<f64> {
        &self.ft * s * &self.f
    }

    /// Quadrature point coordinate along one axis.
    pub fn point(&self, r: usize) -> f64 {
        (r as f64 + 0.5) / self.m as f64 - 0.5
    }

    /// Coarse cell containing quadrature point `(r1, r2)`.
    pub fn cell_of(&self, r1: usize, r2: usize) -> usize {
        let s = self.m / self.ny;
        (r1 / s) * self.ny + r2 / s
    }

    /// Hessian `(η11, η22, √2 η12)` coefficients of a scalar field.
    fn hessian_coords(&self, c: &DMatrix<f64>) -> [DMatrix<f64>; 3] {
        [&self.d2 * c, c * &self.d2t, &self.d * c * &self.dt * SQRT_2]
    }

    /// Adjoint of [`Self::hessian_coords`] followed by evaluation.
    fn hessian_adjoint(&self, x: &[DMatrix<f64>; 3]) -> DMatrix<f64> {
        &self.d2t * &x[0] + &x[1] * &self.d2 + &self.dt * &x[2] * &self.d * SQRT_2
    }

    /// Strain coordinates of the rotated gradient `ξ = (−∂2ψ, ∂1ψ)`.
    fn rotated_coords(&self, c: &DMatrix<f64>) -> [DMatrix<f64>; 3] {
        let mixed = &self.d * c * &self.dt;
        let diff = (&self.d2 * c - c * &self.d2t) / SQRT_2;
        [-&mixed, mixed, diff]
    }

    fn rotated_adjoint(&self, x: &[DMatrix<f64>; 3]) -> DMatrix<f64> {
        &self.dt * (&x[1] - &x[0]) * &self.d + (&self.d2t * &x[2] - &x[2] * &self.d2) / SQRT_2
    }

    /// Strain coordinates of `sym ∇ξ` for a general field `ξ = (ξ_1, ξ_2)`.
    fn sym_grad_coords(&self, c1: &DMatrix<f64>, c2: &DMatrix<f64>) -> [DMatrix<f64>; 3] {
        [&self.d * c1, c2 * &self.dt, (c1 * &self.dt + &self.d * c2) / SQRT_2]
    }

    fn sym_grad_adjoint(&self, x: &[DMatrix<f64>; 3]) -> [DMatrix<f64>; 2] {
        [&self.dt * &x[0] + &x[2] * &self.d / SQRT_2, &x[1] * &self.d + &self.dt * &x[2] / SQRT_2]
    }

    fn to_matrix(&self, x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.p, self.p, x)
    }

    fn write_matrix(&self, c: &DMatrix<f64>, out: &mut [f64]) {
        for i in 0..self.p {
            for j in 0..self.p {
                out[i * self.p + j] = c[(i, j)];
            }
        }
    }

    /// Value and derivatives of a coefficient array at `y`:
    /// `(u, ∂1u, ∂2u, ∂11u, ∂12u, ∂22u)`.
    pub fn jet_at(&self, coeffs: &[f64], y: [f64; 2]) -> [f64; 6] {
        let a: Vec<[f64; 3]> = (0..self.p).map(|i| basis_jet(i, y[0])).collect();
        let b: Vec<[f64; 3]> = (0..self.p).map(|i| basis_jet(i, y[1])).collect();
        let mut out = [0.0; 6];
        for i in 0..self.p {
            for j in 0..self.p {
                let c = coeffs[i * self.p + j];
                if c == 0.0 {
                    continue;
                }
                out[0] += c * a[i][0] * b[j][0];
                out[1] += c * a[i][1] * b[j][0];
                out[2] += c * a[i][0] * b[j][1];
                out[3] += c * a[i][2] * b[j][0];
                out[4] += c * a[i][1] * b[j][1];
                out[5] += c * a[i][0] * b[j][2];
            }
        }
        out
    }

    /// `|k|²` for the 2-D coefficient `(i, j)`, in units of `(2π)²`.
    fn k2(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (wavenumber(i) as f64, wavenumber(j) as f64);
        a * a + b * b
    }
}

/// Reduced forms at every quadrature point plus a representative scale.
struct PointForms {
    forms: Vec<Matrix3<f64>>,
    weight: f64,
    mean_trace: f64,
}

fn point_forms(space: &TrigSpace, red: &[QuadForm22]) -> PointForms {
    let m = space.m;
    let forms: Vec<Matrix3<f64>> =
        (0..m * m).map(|r| red[space.cell_of(r / m, r % m)].0).collect();
    let mean_trace = red.iter().map(|q| q.0.trace()).sum::<f64>() / (3.0 * red.len() as f64);
    PointForms { forms, weight: 1.0 / (m * m) as f64, mean_trace }
}

/// `σ = w Q e` pointwise, for three coordinate arrays.
fn stress(pf: &PointForms, e: &[DMatrix<f64>; 3], scale: f64) -> [DMatrix<f64>; 3] {
    let (r, c) = e[0].shape();
    let mut s = [DMatrix::zeros(r, c), DMatrix::zeros(r, c), DMatrix::zeros(r, c)];
    for i in 0..r {
        for j in 0..c {
            let v = Vector3::new(e[0][(i, j)], e[1][(i, j)], e[2][(i, j)]);
            let q = pf.forms[i * c + j] * v * (pf.weight * scale);
            for a in 0..3 {
                s[a][(i, j)] = q[a];
            }
        }
    }
    s
}

fn add3(a: &[DMatrix<f64>; 3], b: &[DMatrix<f64>; 3]) -> [DMatrix<f64>; 3] {
    [&a[0] + &b[0], &a[1] + &b[1], &a[2] + &b[2]]
}

/// Fast-path operator on `[ψ, η]` coefficients.
struct TrigOperator {
    space: TrigSpace,
    pf: PointForms,
}

impl TrigOperator {
    fn strain(&self, x: &[f64]) -> [DMatrix<f64>; 3] {
        let n = self.space.n_coeffs();
        let psi = self.space.to_matrix(&x[..n]);
        let eta = self.space.to_matrix(&x[n..]);
        let c = add3(&self.space.rotated_coords(&psi), &self.space.hessian_coords(&eta));
        [self.space.eval(&c[0]), self.space.eval(&c[1]), self.space.eval(&c[2])]
    }

    fn adjoint(&self, s: &[DMatrix<f64>; 3], y: &mut [f64]) {
        let n = self.space.n_coeffs();
        let x = [self.space.adjoint(&s[0]), self.space.adjoint(&s[1]), self.space.adjoint(&s[2])];
        self.space.write_matrix(&self.space.rotated_adjoint(&x), &mut y[..n]);
        self.space.write_matrix(&self.space.hessian_adjoint(&x), &mut y[n..]);
    }
}

impl LinearOperator for TrigOperator {
    fn dim(&self) -> usize {
        2 * self.space.n_coeffs()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let e = self.strain(x);
        self.adjoint(&stress(&self.pf, &e, 1.0), y);
    }

    /// Diagonal of the operator with the coefficient replaced by its mean
    /// trace times the identity; used only for preconditioning.
    fn diagonal(&self) -> Vec<f64> {
        let n = self.space.n_coeffs();
        let c = self.pf.mean_trace * TWO_PI.powi(4);
        let mut diag = vec![0.0; 2 * n];
        for i in 0..self.space.p {
            for j in 0..self.space.p {
                let k4 = self.space.k2(i, j).powi(2);
                diag[i * self.space.p + j] = 0.5 * c * k4;
                diag[n + i * self.space.p + j] = c * k4;
            }
        }
        diag
    }
}

/// Loads for the three 2×2 basis matrices and the mass `mean_y Q_red`.
fn constant_loads(
    space: &TrigSpace,
    pf: &PointForms,
    scale: f64,
    adjoint: impl Fn(&[DMatrix<f64>; 3], &mut [f64]),
    dim: usize,
) -> (Vec<Vec<f64>>, DMatrix<f64>, f64) {
    let m = space.m;
    let mut loads = Vec::new();
    let mut magnitude = 0.0f64;
    for k in 0..3 {
        let mut e = [DMatrix::zeros(m, m), DMatrix::zeros(m, m), DMatrix::zeros(m, m)];
        e[k].fill(1.0);
        let s = stress(pf, &e, scale);
        let mut b = vec![0.0; dim];
        adjoint(&s, &mut b);
        b.iter_mut().for_each(|v| *v = -*v);
        let abs_s = [s[0].abs(), s[1].abs(), s[2].abs()];
        let mut a = vec![0.0; dim];
        adjoint(&abs_s, &mut a);
        magnitude = magnitude.max(crate::linsolve::norm(&a));
        loads.push(b);
    }
    let mut mass = DMatrix::zeros(3, 3);
    for q in &pf.forms {
        mass += DMatrix::from_column_slice(3, 3, q.as_slice()) * pf.weight;
    }
    (loads, mass * scale, magnitude)
}

/// Warns when the reduced coefficients jump by more than 25% between neighbors.
fn warn_if_rough(red: &[QuadForm22], ny: usize) {
    let mut worst = 0.0f64;
    for i in 0..ny {
        for j in 0..ny {
            let a = &red[i * ny + j].0;
            for b in [&red[((i + 1) % ny) * ny + j].0, &red[i * ny + (j + 1) % ny].0] {
                worst = worst.max((a - b).norm() / a.norm().max(b.norm()));
            }
        }
    }
    if worst > 0.25 {
        log::warn!(
            "coefficient field jumps by {:.0}% between neighboring cells; the trigonometric zero-regime solver \
             converges slowly for discontinuous fields",
            100.0 * worst
        );
    }
}

/// The fast-path problem `m(A)` on `[ψ, η]` coefficients (row-major `p × p` each).
pub fn trig_problem(red: &[QuadForm22], ny: usize) -> CellProblem {
    assert_eq!(red.len(), ny * ny);
    warn_if_rough(red, ny);
    let space = TrigSpace::new(ny);
    let pf = point_forms(&space, red);
    let n = space.n_coeffs();
    let op = TrigOperator { space, pf };
    let (loads, mass, scale) = constant_loads(&op.space, &op.pf, 1.0, |s, y| op.adjoint(s, y), 2 * n);
    let kernel = vec![vec![0u32], vec![n as u32]];
    let mut problem = CellProblem::new(CellOperator::new(Box::new(op), kernel), loads, mass, scale);
    problem.jacobi = true;
    problem
}

/// Monolithic discretization: `ξ(x3, y)` linear per slice, `η` shared, `B` explicit.
struct ZeroOracleOperator {
    space: TrigSpace,
    pf: PointForms,
    nx3: usize,
}

impl ZeroOracleOperator {
    /// Offset of `ξ_{l, j}` component `c`.
    fn xi(&self, l: usize, j: usize, c: usize) -> usize {
        ((2 * l + j) * 2 + c) * self.space.n_coeffs()
    }

    fn eta(&self) -> usize {
        4 * self.nx3 * self.space.n_coeffs()
    }

    fn b(&self) -> usize {
        self.eta() + self.space.n_coeffs()
    }

    /// Slice centers, profile abscissae and weights: `(x3, τ, w)`.
    fn thickness_points(&self) -> Vec<(usize, f64, f64, f64)> {
        let h = 1.0 / self.nx3 as f64;
        let mut pts = Vec::new();
        for l in 0..self.nx3 {
            let c = (l as f64 + 0.5) * h - 0.5;
            for &(tau, w) in &gauss_on(2, -0.5, 0.5) {
                pts.push((l, c + h * tau, tau, w * h));
            }
        }
        pts
    }
}

impl LinearOperator for ZeroOracleOperator {
    fn dim(&self) -> usize {
        self.b() + 3
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let sp = &self.space;
        let n = sp.n_coeffs();
        let mat = |off: usize| sp.to_matrix(&x[off..off + n]);
        let ev = |c: [DMatrix<f64>; 3]| [sp.eval(&c[0]), sp.eval(&c[1]), sp.eval(&c[2])];
        let h_eta = ev(sp.hessian_coords(&mat(self.eta())));
        let b = [x[self.b()], x[self.b() + 1], x[self.b() + 2]];
        let grads: Vec<[DMatrix<f64>; 3]> = (0..self.nx3)
            .flat_map(|l| (0..2).map(move |j| (l, j)))
            .map(|(l, j)| ev(sp.sym_grad_coords(&mat(self.xi(l, j, 0)), &mat(self.xi(l, j, 1)))))
            .collect();
        let zero = || [DMatrix::zeros(sp.m, sp.m), DMatrix::zeros(sp.m, sp.m), DMatrix::zeros(sp.m, sp.m)];
        let mut s_eta = zero();
        let mut s_xi: Vec<[DMatrix<f64>; 3]> = (0..2 * self.nx3).map(|_| zero()).collect();
        let mut s_b = [0.0; 3];
        for (l, x3, tau, w) in self.thickness_points() {
            let prof = [1.0, tau];
            let mut e = [&h_eta[0] * x3, &h_eta[1] * x3, &h_eta[2] * x3];
            for a in 0..3 {
                e[a].add_scalar_mut(b[a]);
                for j in 0..2 {
                    e[a] += &grads[2 * l + j][a] * prof[j];
                }
            }
            let s = stress(&self.pf, &e, w);
            for a in 0..3 {
                s_eta[a] += &s[a] * x3;
                for j in 0..2 {
                    s_xi[2 * l + j][a] += &s[a] * prof[j];
                }
                s_b[a] += s[a].sum();
            }
        }
        let adj = |s: &[DMatrix<f64>; 3]| [sp.adjoint(&s[0]), sp.adjoint(&s[1]), sp.adjoint(&s[2])];
        let eta = self.eta();
        sp.write_matrix(&sp.hessian_adjoint(&adj(&s_eta)), &mut y[eta..eta + n]);
        for l in 0..self.nx3 {
            for j in 0..2 {
                let g = sp.sym_grad_adjoint(&adj(&s_xi[2 * l + j]));
                for c in 0..2 {
                    let off = self.xi(l, j, c);
                    sp.write_matrix(&g[c], &mut y[off..off + n]);
                }
            }
        }
        y[self.b()..].copy_from_slice(&s_b);
    }

    fn diagonal(&self) -> Vec<f64> {
        let sp = &self.space;
        let n = sp.n_coeffs();
        let c = self.pf.mean_trace;
        let h = 1.0 / self.nx3 as f64;
        let mut diag = vec![c; self.dim()];
        for i in 0..sp.p {
            for jj in 0..sp.p {
                let idx = i * sp.p + jj;
                let (k1, k2) = (wavenumber(i) as f64, wavenumber(jj) as f64);
                let k4 = sp.k2(i, jj).powi(2);
                diag[self.eta() + idx] = c * TWO_PI.powi(4) * k4 / 12.0;
                for l in 0..self.nx3 {
                    for (j, pw) in [1.0, 1.0 / 12.0].iter().enumerate() {
                        let s = c * TWO_PI.powi(2) * h * pw;
                        diag[self.xi(l, j, 0) + idx] = s * (k1 * k1 + 0.5 * k2 * k2);
                        diag[self.xi(l, j, 1) + idx] = s * (k2 * k2 + 0.5 * k1 * k1);
                    }
                }
            }
        }
        let _ = n;
        diag
    }
}

/// The monolithic zero-regime problem with `nx3` slices. Its operator has a
/// nontrivial kernel (thickness-linear gradient fields traded against `η`)
/// that is left undeclared: the system is consistent and only the minimal
/// energy is used.
pub fn oracle_problem(red: &[QuadForm22], ny: usize, nx3: usize) -> CellProblem {
    assert_eq!(red.len(), ny * ny);
    let space = TrigSpace::new(ny);
    let pf = point_forms(&space, red);
    let op = ZeroOracleOperator { space, pf, nx3 };
    let dim = op.dim();
    let n = op.space.n_coeffs();
    // The load `x3 A` integrates against `x3` per thickness point.
    let m = op.space.m;
    let mut loads = Vec::new();
    let mut magnitude = 0.0f64;
    for k in 0..3 {
        let mut b = vec![0.0; dim];
        let mut a = vec![0.0; dim];
        for (l, x3, tau, w) in op.thickness_points() {
            let mut e = [DMatrix::zeros(m, m), DMatrix::zeros(m, m), DMatrix::zeros(m, m)];
            e[k].fill(x3);
            let s = stress(&op.pf, &e, w);
            let abs_s = [s[0].abs(), s[1].abs(), s[2].abs()];
            for (target, sv) in [(&mut b, &s), (&mut a, &abs_s)] {
                let sp = &op.space;
                let adj = [sp.adjoint(&sv[0]), sp.adjoint(&sv[1]), sp.adjoint(&sv[2])];
                let mut acc = vec![0.0; dim];
                let eta = op.eta();
                sp.write_matrix(&(sp.hessian_adjoint(&adj) * x3), &mut acc[eta..eta + n]);
                for j in 0..2 {
                    let prof = [1.0, tau][j];
                    let g = sp.sym_grad_adjoint(&adj);
                    for c in 0..2 {
                        let off = op.xi(l, j, c);
                        sp.write_matrix(&(&g[c] * prof), &mut acc[off..off + n]);
                    }
                }
                for a in 0..3 {
                    acc[op.b() + a] = sv[a].sum();
                }
                target.iter_mut().zip(&acc).for_each(|(t, v)| *t += v);
            }
        }
        b.iter_mut().for_each(|v| *v = -*v);
        magnitude = magnitude.max(crate::linsolve::norm(&a));
        loads.push(b);
    }
    let mut mass = DMatrix::zeros(3, 3);
    for q in &op.pf.forms {
        mass += DMatrix::from_column_slice(3, 3, q.as_slice()) * (op.pf.weight / 12.0);
    }
    let mut kernel = Vec::new();
    for l in 0..nx3 {
        for j in 0..2 {
            for c in 0..2 {
                kernel.push(vec![op.xi(l, j, c) as u32]);
            }
        }
    }
    kernel.push(vec![op.eta() as u32]);
    let mut problem = CellProblem::new(CellOperator::new(Box::new(op), kernel), loads, mass, magnitude);
    problem.jacobi = true;
    problem
}
