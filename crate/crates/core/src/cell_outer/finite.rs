//! Finite `γ1`: the corrector `φ1(x3, y)` couples the thickness direction
//! through `∂_3 φ1 / γ1`.
//!
//! Discretization: continuous quadratic Lagrange elements in `x3` (free ends)
//! times periodic bilinear elements in `y`, plus the three coordinates of `B`.
//! Integrals are exact for the element-wise constant coefficients.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::cell_inner::palette_of;
use crate::linsolve::{build_element_problem, CellProblem, ElementBlock, ElementLayout};
use crate::mesh::{bilinear_points, quadratic_lagrange, PeriodicGrid};
use crate::quadrature::gauss_unit;
use crate::tensor::{in_plane_embedding, rank_one_sym_coords, QuadForm33};

/// Index of node-major unknowns `(x3 node, y node, component)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FiniteLayout {
    pub n: usize,
    pub nx3: usize,
}

impl FiniteLayout {
    pub fn x3_nodes(&self) -> usize {
        2 * self.nx3 + 1
    }

    pub fn phi_len(&self) -> usize {
        3 * self.n * self.n * self.x3_nodes()
    }

    pub fn dof(&self, x3_node: usize, y_node: usize, k: usize) -> usize {
        3 * (x3_node * self.n * self.n + y_node) + k
    }

    /// First of the three `B` unknowns.
    pub fn b_offset(&self) -> usize {
        self.phi_len()
    }

    /// `x3` coordinate of a thickness node.
    pub fn x3_of(&self, x3_node: usize) -> f64 {
        x3_node as f64 / (2 * self.nx3) as f64 - 0.5
    }

    /// Quadrature weights of the thickness nodes (Simpson's rule per element).
    pub fn x3_weights(&self) -> Vec<f64> {
        let h = 1.0 / self.nx3 as f64;
        let mut w = vec![0.0; self.x3_nodes()];
        for l in 0..self.nx3 {
            w[2 * l] += h / 6.0;
            w[2 * l + 1] += 4.0 * h / 6.0;
            w[2 * l + 2] += h / 6.0;
        }
        w
    }
}

/// The finite-`γ1` cell problem on an `n × n` field of `Q_hom` samples with
/// `nx3` quadratic elements through the thickness. Loads are the 2×2
/// coordinates of `A`.
pub fn finite_problem(qfield: &[QuadForm33], n: usize, gamma1: f64, nx3: usize) -> CellProblem {
    assert!(gamma1 > 0.0 && nx3 >= 1);
    assert_eq!(qfield.len(), n * n);
    let grid = PeriodicGrid::new(n);
    let layout = FiniteLayout { n, nx3 };
    let h3 = 1.0 / nx3 as f64;
    let (palette, ykind) = palette_of(qfield);
    let ypts = bilinear_points(grid.spacing());
    let tpts = gauss_unit(3);
    let e = in_plane_embedding();
    let dpe = 36 + 3;

    // Strain columns and load profile at each quadrature point of the
    // reference layer element.
    let mut points = Vec::new();
    for &(t, wt) in &tpts {
        let (lv, ld) = quadratic_lagrange(t);
        for yp in &ypts {
            let mut d = DMatrix::zeros(6, dpe);
            for xi in 0..3 {
                for a in 0..4 {
                    let g = [lv[xi] * yp.grad[a][0], lv[xi] * yp.grad[a][1], ld[xi] / h3 * yp.value[a] / gamma1];
                    for k in 0..3 {
                        d.set_column(12 * xi + 3 * a + k, &rank_one_sym_coords(k, &g));
                    }
                }
            }
            for c in 0..3 {
                d.set_column(36 + c, &e.column(c));
            }
            points.push((wt * h3 * yp.weight, t - 0.5, d));
        }
    }
    let em = DMatrix::from_column_slice(6, 3, e.as_slice());
    let blocks: Vec<ElementBlock> = palette
        .par_iter()
        .map(|q| {
            let qm = DMatrix::from_column_slice(6, 6, q.0.as_slice());
            let qe = &qm * &em;
            let mut k = DMatrix::zeros(dpe, dpe);
            let mut g0 = DMatrix::zeros(dpe, 3);
            let mut g1 = DMatrix::zeros(dpe, 3);
            for (w, tau, d) in &points {
                let dt = d.transpose();
                k += &dt * &qm * d * *w;
                let c = &dt * &qe * *w;
                g1 += &c * *tau;
                g0 += c;
            }
            // x3 = layer center + h3 * (t - 1/2)
            ElementBlock { stiffness: k, coupling: vec![g0, g1] }
        })
        .collect();

    let nelem = nx3 * n * n;
    let mut dofs = Vec::with_capacity(dpe * nelem);
    let mut kind = Vec::with_capacity(nelem);
    let mut weights = Vec::with_capacity(2 * nelem);
    for l in 0..nx3 {
        let center = (l as f64 + 0.5) * h3 - 0.5;
        for ye in 0..n * n {
            let nodes = grid.element_nodes(ye);
            for xi in 0..3 {
                for &node in &nodes {
                    for k in 0..3 {
                        dofs.push(layout.dof(2 * l + xi, node, k) as u32);
                    }
                }
            }
            for c in 0..3 {
                dofs.push((layout.b_offset() + c) as u32);
            }
            kind.push(ykind[ye]);
            weights.push(center);
            weights.push(h3);
        }
    }
    let kernel = (0..3)
        .map(|k| (0..layout.phi_len() / 3).map(|i| (3 * i + k) as u32).collect())
        .collect();
    let layout_e = ElementLayout { dim: layout.phi_len() + 3, dpe, dofs, kind, weights, kernel };
    build_element_problem(layout_e, blocks, super::thickness_load_mass(qfield))
}

/// Shifts each component of `φ1` to zero mean over `(-1/2, 1/2) × Q`.
pub fn normalize_mean(u: &mut [f64], layout: FiniteLayout) {
    let w = layout.x3_weights();
    let ny2 = layout.n * layout.n;
    for k in 0..3 {
        let mut mean = 0.0;
        for (j, wj) in w.iter().enumerate() {
            for y in 0..ny2 {
                mean += wj * u[layout.dof(j, y, k)];
            }
        }
        mean /= ny2 as f64;
        for j in 0..w.len() {
            for y in 0..ny2 {
                u[layout.dof(j, y, k)] -= mean;
            }
        }
    }
}
