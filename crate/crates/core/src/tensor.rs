//! Symmetric tensor algebra in an orthonormal (√2-weighted) basis.
//!
//! A symmetric 3×3 matrix `M` is stored by its coordinates in the basis
//!
//! ```text
//! E1 = e1⊗e1, E2 = e2⊗e2, E3 = e3⊗e3,
//! E4 = (e2⊗e3 + e3⊗e2)/√2, E5 = (e1⊗e3 + e3⊗e1)/√2, E6 = (e1⊗e2 + e2⊗e1)/√2
//! ```
//!
//! so that the Frobenius product of two matrices is the Euclidean product of
//! their coordinates. Symmetric 2×2 matrices use `(a11, a22, √2·a12)` and
//! embed into the in-plane slots `(1, 2, 6)`. Quadratic forms become plain
//! symmetric coefficient matrices acting on these coordinates.

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vector6 = SVector<f64, 6>;
pub type Matrix6 = SMatrix<f64, 6, 6>;

pub const SQRT_2: f64 = std::f64::consts::SQRT_2;

/// Positions of the in-plane coordinates of an embedded 2×2 matrix.
pub const IN_PLANE_SLOTS: [usize; 3] = [0, 1, 5];

/// Symmetric 2×2 matrix `[[a11, a12], [a12, a22]]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SymMat22 {
    pub a11: f64,
    pub a22: f64,
    pub a12: f64,
}

impl SymMat22 {
    pub const ZERO: Self = Self { a11: 0.0, a22: 0.0, a12: 0.0 };

    pub fn new(a11: f64, a22: f64, a12: f64) -> Self {
        Self { a11, a22, a12 }
    }

    pub fn diag(a11: f64, a22: f64) -> Self {
        Self { a11, a22, a12: 0.0 }
    }

    pub fn identity() -> Self {
        Self::diag(1.0, 1.0)
    }

    /// Orthonormal basis element `i` (0: e1⊗e1, 1: e2⊗e2, 2: shear).
    pub fn basis(i: usize) -> Self {
        Self::from_coords(&Vector3::ith(i, 1.0))
    }

    pub fn coords(&self) -> Vector3<f64> {
        Vector3::new(self.a11, self.a22, SQRT_2 * self.a12)
    }

    pub fn from_coords(c: &Vector3<f64>) -> Self {
        Self { a11: c[0], a22: c[1], a12: c[2] / SQRT_2 }
    }

    pub fn from_matrix(m: &nalgebra::Matrix2<f64>) -> Self {
        Self { a11: m[(0, 0)], a22: m[(1, 1)], a12: 0.5 * (m[(0, 1)] + m[(1, 0)]) }
    }

    pub fn to_matrix(&self) -> nalgebra::Matrix2<f64> {
        nalgebra::Matrix2::new(self.a11, self.a12, self.a12, self.a22)
    }

    pub fn norm(&self) -> f64 {
        self.coords().norm()
    }

    pub fn trace(&self) -> f64 {
        self.a11 + self.a22
    }

    pub fn scale(&self, t: f64) -> Self {
        Self { a11: t * self.a11, a22: t * self.a22, a12: t * self.a12 }
    }

    pub fn add(&self, o: &Self) -> Self {
        Self { a11: self.a11 + o.a11, a22: self.a22 + o.a22, a12: self.a12 + o.a12 }
    }
}

/// Symmetric 3×3 matrix stored by orthonormal coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SymMat33(pub Vector6);

impl SymMat33 {
    pub fn zero() -> Self {
        Self(Vector6::zeros())
    }

    pub fn basis(i: usize) -> Self {
        Self(Vector6::ith(i, 1.0))
    }

    pub fn coords(&self) -> &Vector6 {
        &self.0
    }

    /// Coordinates of `sym F` for an arbitrary 3×3 matrix.
    pub fn sym_of(f: &Matrix3<f64>) -> Self {
        Self(sym_coords(f))
    }

    /// Embedding ι of a symmetric 2×2 matrix (zero third row and column).
    pub fn embed(a: &SymMat22) -> Self {
        let mut c = Vector6::zeros();
        let ac = a.coords();
        for (k, &slot) in IN_PLANE_SLOTS.iter().enumerate() {
            c[slot] = ac[k];
        }
        Self(c)
    }

    pub fn to_matrix(&self) -> Matrix3<f64> {
        let c = &self.0;
        let s = 1.0 / SQRT_2;
        Matrix3::new(
            c[0],
            c[5] * s,
            c[4] * s,
            c[5] * s,
            c[1],
            c[3] * s,
            c[4] * s,
            c[3] * s,
            c[2],
        )
    }

    pub fn trace(&self) -> f64 {
        self.0[0] + self.0[1] + self.0[2]
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }
}

/// Orthonormal coordinates of `sym F`.
#[inline]
pub fn sym_coords(f: &Matrix3<f64>) -> Vector6 {
    let s = 1.0 / SQRT_2;
    Vector6::new(
        f[(0, 0)],
        f[(1, 1)],
        f[(2, 2)],
        (f[(1, 2)] + f[(2, 1)]) * s,
        (f[(0, 2)] + f[(2, 0)]) * s,
        (f[(0, 1)] + f[(1, 0)]) * s,
    )
}

/// Coordinates of `sym(0 | 0 | b)`, the symmetrized matrix whose third column is `b`.
#[inline]
pub fn third_column_coords(b: &Vector3<f64>) -> Vector6 {
    let s = 1.0 / SQRT_2;
    Vector6::new(0.0, 0.0, b[2], b[1] * s, b[0] * s, 0.0)
}

/// The 6×3 map `b ↦ coords(sym(0|0|b))`.
pub fn third_column_map() -> SMatrix<f64, 6, 3> {
    let mut t = SMatrix::<f64, 6, 3>::zeros();
    for j in 0..3 {
        let col = third_column_coords(&Vector3::ith(j, 1.0));
        t.set_column(j, &col);
    }
    t
}

/// Coordinates of `sym(e_k ⊗ g)`: the strain of a field whose component `k`
/// has gradient `g`.
#[inline]
pub fn rank_one_sym_coords(k: usize, g: &[f64; 3]) -> Vector6 {
    let mut f = Matrix3::zeros();
    for j in 0..3 {
        f[(k, j)] = g[j];
    }
    sym_coords(&f)
}

/// The 6×3 map from 2×2 coordinates to coordinates of the embedded matrix ι(G).
pub fn in_plane_embedding() -> SMatrix<f64, 6, 3> {
    let mut p = SMatrix::<f64, 6, 3>::zeros();
    for (a, &i) in IN_PLANE_SLOTS.iter().enumerate() {
        p[(i, a)] = 1.0;
    }
    p
}

/// ι(x3·A + B).
pub fn voigt_embed(a: &SymMat22, x3: f64, b: &SymMat22) -> SymMat33 {
    SymMat33::embed(&a.scale(x3).add(b))
}

/// Quadratic form on symmetric 3×3 matrices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadForm33(pub Matrix6);

impl QuadForm33 {
    /// Builds a form from a coefficient matrix, symmetrizing it.
    pub fn from_matrix(m: Matrix6) -> Self {
        Self(0.5 * (m + m.transpose()))
    }

    pub fn matrix(&self) -> &Matrix6 {
        &self.0
    }

    #[inline]
    pub fn eval_coords(&self, c: &Vector6) -> f64 {
        c.dot(&(self.0 * c))
    }

    #[inline]
    pub fn bilinear(&self, a: &Vector6, b: &Vector6) -> f64 {
        a.dot(&(self.0 * b))
    }

    pub fn eval_sym(&self, m: &SymMat33) -> f64 {
        self.eval_coords(&m.0)
    }

    /// Extreme eigenvalues `(min, max)` of the coefficient matrix.
    pub fn eigen_bounds(&self) -> (f64, f64) {
        let ev = self.0.symmetric_eigenvalues();
        (ev.min(), ev.max())
    }

    /// Symmetric 21-vector of upper-triangle coefficients, row-major.
    pub fn upper_triangle(&self) -> [f64; 21] {
        let mut out = [0.0; 21];
        let mut k = 0;
        for i in 0..6 {
            for j in i..6 {
                out[k] = self.0[(i, j)];
                k += 1;
            }
        }
        out
    }

    pub fn from_upper_triangle(v: &[f64; 21]) -> Self {
        let mut m = Matrix6::zeros();
        let mut k = 0;
        for i in 0..6 {
            for j in i..6 {
                m[(i, j)] = v[k];
                m[(j, i)] = v[k];
                k += 1;
            }
        }
        Self(m)
    }

    /// Restriction to embedded 2×2 matrices.
    pub fn in_plane(&self) -> QuadForm22 {
        let mut m = nalgebra::Matrix3::zeros();
        for (a, &i) in IN_PLANE_SLOTS.iter().enumerate() {
            for (b, &j) in IN_PLANE_SLOTS.iter().enumerate() {
                m[(a, b)] = self.0[(i, j)];
            }
        }
        QuadForm22(m)
    }
}

/// `Q(sym F)` for an arbitrary 3×3 matrix `F`.
pub fn quadform_eval(q: &QuadForm33, f: &Matrix3<f64>) -> f64 {
    q.eval_coords(&sym_coords(f))
}

/// Quadratic form on symmetric 2×2 matrices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadForm22(pub Matrix3<f64>);

impl QuadForm22 {
    pub fn from_matrix(m: Matrix3<f64>) -> Self {
        Self(0.5 * (m + m.transpose()))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn eval(&self, a: &SymMat22) -> f64 {
        let c = a.coords();
        c.dot(&(self.0 * c))
    }

    pub fn eval_coords(&self, c: &Vector3<f64>) -> f64 {
        c.dot(&(self.0 * c))
    }

    pub fn eigen_bounds(&self) -> (f64, f64) {
        let ev = self.0.symmetric_eigenvalues();
        (ev.min(), ev.max())
    }
}

/// Result of relaxing the third column of an embedded 2×2 loading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Relaxation {
    pub value: f64,
    pub minimizer: Vector3<f64>,
}

/// Reduced 3×3 system `TᵀQT` for the third-column perturbation.
fn column_block(q: &QuadForm33) -> Result<nalgebra::Cholesky<f64, nalgebra::U3>> {
    let t = third_column_map();
    let k = t.transpose() * q.0 * t;
    k.cholesky().ok_or(Error::DegenerateForm)
}

/// `min_b Q(ι(G) + sym(0|0|b))` together with the minimizing `b`.
pub fn relax_appended_column(q: &QuadForm33, g: &SymMat22) -> Result<Relaxation> {
    let chol = column_block(q)?;
    let t = third_column_map();
    let gc = SymMat33::embed(g).0;
    let rhs = -(t.transpose() * (q.0 * gc));
    let b = chol.solve(&rhs);
    let full = gc + t * b;
    Ok(Relaxation { value: q.eval_coords(&full), minimizer: b })
}

/// The reduced in-plane form `G ↦ min_b Q(ι(G) + sym(0|0|b))` as a matrix
/// (Schur complement of the third-column block).
pub fn relaxed_in_plane_form(q: &QuadForm33) -> Result<QuadForm22> {
    let chol = column_block(q)?;
    let t = third_column_map();
    let p = in_plane_embedding();
    let qpp = p.transpose() * q.0 * p;
    let qtp = t.transpose() * q.0 * p;
    let sol = chol.solve(&qtp);
    Ok(QuadForm22::from_matrix(qpp - qtp.transpose() * sol))
}

/// Linear map `G ↦ b(G)` (3×3 in 2×2 coordinates) of the relaxation minimizer.
pub fn relaxation_minimizer_map(q: &QuadForm33) -> Result<Matrix3<f64>> {
    let chol = column_block(q)?;
    let t = third_column_map();
    let p = in_plane_embedding();
    let qtp = t.transpose() * q.0 * p;
    Ok(-chol.solve(&qtp))
}
