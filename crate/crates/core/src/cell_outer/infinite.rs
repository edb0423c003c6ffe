//! Infinite `γ1`: `φ1` is only square integrable in `x3` and the third column
//! of the strain is a free profile `d(x3)`.
//!
//! For fixed `B` the problem decouples across `x3`. The fast path solves the
//! slice problem `m(C) = min_{φ, d} ∫_Q Q_hom(y, C + sym(∇_y φ | d)) dy` once;
//! the oracle discretizes the full thickness with discontinuous linear
//! profiles per slice and carries `B` explicitly.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::cell_inner::palette_of;
use crate::linsolve::{build_element_problem, CellProblem, ElementBlock, ElementLayout};
use crate::mesh::{bilinear_points, PeriodicGrid};
use crate::quadrature::gauss_on;
use crate::tensor::{in_plane_embedding, rank_one_sym_coords, QuadForm33};

/// Slice problem: unknowns are `φ` (three per node, node-major) followed by `d`.
/// Loads are the 2×2 coordinates of `G` in `C = ι(G)`.
pub fn slice_problem(qfield: &[QuadForm33], n: usize) -> CellProblem {
    assert_eq!(qfield.len(), n * n);
    let grid = PeriodicGrid::new(n);
    let (palette, kind) = palette_of(qfield);
    let ypts = bilinear_points(grid.spacing());
    let e = in_plane_embedding();
    let em = DMatrix::from_column_slice(6, 3, e.as_slice());
    let dpe = 15;
    let strains: Vec<(f64, DMatrix<f64>)> = ypts
        .iter()
        .map(|p| {
            let mut d = DMatrix::zeros(6, dpe);
            for a in 0..4 {
                for k in 0..3 {
                    d.set_column(3 * a + k, &rank_one_sym_coords(k, &[p.grad[a][0], p.grad[a][1], 0.0]));
                }
            }
            for k in 0..3 {
                d.set_column(12 + k, &rank_one_sym_coords(k, &[0.0, 0.0, 1.0]));
            }
            (p.weight, d)
        })
        .collect();
    let blocks: Vec<ElementBlock> = palette
        .par_iter()
        .map(|q| {
            let qm = DMatrix::from_column_slice(6, 6, q.0.as_slice());
            let mut k = DMatrix::zeros(dpe, dpe);
            let mut g = DMatrix::zeros(dpe, 3);
            for (w, d) in &strains {
                let dq = d.transpose() * &qm * *w;
                k += &dq * d;
                g += &dq * &em;
            }
            ElementBlock { stiffness: k, coupling: vec![g] }
        })
        .collect();
    let d_off = 3 * grid.nodes();
    let mut dofs = Vec::with_capacity(dpe * n * n);
    for el in 0..n * n {
        for node in grid.element_nodes(el) {
            for k in 0..3 {
                dofs.push((3 * node + k) as u32);
            }
        }
        for k in 0..3 {
            dofs.push((d_off + k) as u32);
        }
    }
    let kernel = (0..3).map(|k| (0..grid.nodes()).map(|i| (3 * i + k) as u32).collect()).collect();
    let layout = ElementLayout { dim: d_off + 3, dpe, dofs, kind, weights: vec![1.0; n * n], kernel };
    build_element_problem(layout, blocks, super::in_plane_load_mass(qfield))
}

/// Index of the oracle unknowns: per slice `l` and profile `j ∈ {1, τ}`,
/// three `φ` components per node; then `d` per `(l, j)`; then `B`.
#[derive(Debug, Clone, Copy)]
pub struct OracleLayout {
    pub n: usize,
    pub nx3: usize,
}

impl OracleLayout {
    pub fn phi(&self, l: usize, j: usize, node: usize, k: usize) -> usize {
        3 * ((2 * l + j) * self.n * self.n + node) + k
    }

    pub fn d(&self, l: usize, j: usize, k: usize) -> usize {
        6 * self.nx3 * self.n * self.n + 3 * (2 * l + j) + k
    }

    pub fn b_offset(&self) -> usize {
        6 * self.nx3 * (self.n * self.n + 1)
    }

    pub fn dim(&self) -> usize {
        self.b_offset() + 3
    }
}

/// Monolithic discretization over the thickness with `nx3` slices.
pub fn oracle_problem(qfield: &[QuadForm33], n: usize, nx3: usize) -> CellProblem {
    assert_eq!(qfield.len(), n * n);
    let grid = PeriodicGrid::new(n);
    let layout = OracleLayout { n, nx3 };
    let h3 = 1.0 / nx3 as f64;
    let (palette, ykind) = palette_of(qfield);
    let ypts = bilinear_points(grid.spacing());
    let e = in_plane_embedding();
    let em = DMatrix::from_column_slice(6, 3, e.as_slice());
    let dpe = 24 + 6 + 3;
    let mut points = Vec::new();
    for &(tau, wt) in &gauss_on(2, -0.5, 0.5) {
        let prof = [1.0, tau];
        for yp in &ypts {
            let mut d = DMatrix::zeros(6, dpe);
            for j in 0..2 {
                for a in 0..4 {
                    for k in 0..3 {
                        let g = [prof[j] * yp.grad[a][0], prof[j] * yp.grad[a][1], 0.0];
                        d.set_column(12 * j + 3 * a + k, &rank_one_sym_coords(k, &g));
                    }
                }
                for k in 0..3 {
                    d.set_column(24 + 3 * j + k, &rank_one_sym_coords(k, &[0.0, 0.0, prof[j]]));
                }
            }
            for c in 0..3 {
                d.set_column(30 + c, &e.column(c));
            }
            points.push((wt * h3 * yp.weight, tau, d));
        }
    }
    let blocks: Vec<ElementBlock> = palette
        .par_iter()
        .map(|q| {
            let qm = DMatrix::from_column_slice(6, 6, q.0.as_slice());
            let mut k = DMatrix::zeros(dpe, dpe);
            let mut g0 = DMatrix::zeros(dpe, 3);
            let mut g1 = DMatrix::zeros(dpe, 3);
            for (w, tau, d) in &points {
                let dq = d.transpose() * &qm * *w;
                k += &dq * d;
                let c = &dq * &em;
                g1 += &c * *tau;
                g0 += c;
            }
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
            for j in 0..2 {
                for &node in &nodes {
                    for k in 0..3 {
                        dofs.push(layout.phi(l, j, node, k) as u32);
                    }
                }
            }
            for j in 0..2 {
                for k in 0..3 {
                    dofs.push(layout.d(l, j, k) as u32);
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
    let mut kernel = Vec::new();
    for l in 0..nx3 {
        for j in 0..2 {
            for k in 0..3 {
                kernel.push((0..grid.nodes()).map(|node| layout.phi(l, j, node, k) as u32).collect());
            }
        }
    }
    let layout_e = ElementLayout { dim: layout.dim(), dpe, dofs, kind, weights, kernel };
    build_element_problem(layout_e, blocks, super::thickness_load_mass(qfield))
}
