//! Uniform periodic grids on the unit cell and bilinear shape functions.

use crate::quadrature::gauss_unit;

/// An `n × n` periodic grid on `(-1/2, 1/2)²`. Nodes sit at cell corners,
/// element `(i, j)` covers `[i/n, (i+1)/n] × [j/n, (j+1)/n]` shifted by `-1/2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PeriodicGrid {
    pub n: usize,
}

impl PeriodicGrid {
    pub fn new(n: usize) -> Self {
        assert!(n >= 2, "periodic grid needs at least 2 cells per axis");
        Self { n }
    }

    pub fn nodes(&self) -> usize {
        self.n * self.n
    }

    pub fn spacing(&self) -> f64 {
        1.0 / self.n as f64
    }

    #[inline]
    pub fn node(&self, i: usize, j: usize) -> usize {
        (i % self.n) * self.n + (j % self.n)
    }

    /// Corner nodes of element `e`, ordered `(0,0), (1,0), (0,1), (1,1)`.
    pub fn element_nodes(&self, e: usize) -> [usize; 4] {
        let (i, j) = (e / self.n, e % self.n);
        [self.node(i, j), self.node(i + 1, j), self.node(i, j + 1), self.node(i + 1, j + 1)]
    }
}

/// Values and physical gradients of the four bilinear shape functions at one
/// quadrature point of an element with side `h`.
#[derive(Debug, Clone)]
pub struct BilinearPoint {
    pub weight: f64,
    pub value: [f64; 4],
    pub grad: [[f64; 2]; 4],
}

/// 2×2 Gauss rule on an element of side `h`; exact for the bilinear stiffness.
pub fn bilinear_points(h: f64) -> Vec<BilinearPoint> {
    let rule = gauss_unit(2);
    let mut pts = Vec::with_capacity(4);
    for &(s, ws) in &rule {
        for &(t, wt) in &rule {
            pts.push(BilinearPoint {
                weight: ws * wt * h * h,
                value: [(1.0 - s) * (1.0 - t), s * (1.0 - t), (1.0 - s) * t, s * t],
                grad: [
                    [-(1.0 - t) / h, -(1.0 - s) / h],
                    [(1.0 - t) / h, -s / h],
                    [-t / h, (1.0 - s) / h],
                    [t / h, s / h],
                ],
            });
        }
    }
    pts
}

/// Quadratic Lagrange basis on `[0, 1]` with nodes `0, 1/2, 1`: values and `d/dt`.
pub fn quadratic_lagrange(t: f64) -> ([f64; 3], [f64; 3]) {
    (
        [2.0 * (t - 0.5) * (t - 1.0), -4.0 * t * (t - 1.0), 2.0 * t * (t - 0.5)],
        [4.0 * t - 3.0, 4.0 - 8.0 * t, 4.0 * t - 1.0],
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partition_of_unity() {
        for p in bilinear_points(0.25) {
            assert!((p.value.iter().sum::<f64>() - 1.0).abs() < 1e-15);
            let g: [f64; 2] = [p.grad.iter().map(|g| g[0]).sum(), p.grad.iter().map(|g| g[1]).sum()];
            assert!(g[0].abs() < 1e-14 && g[1].abs() < 1e-14);
        }
        let w: f64 = bilinear_points(0.25).iter().map(|p| p.weight).sum();
        assert!((w - 0.0625).abs() < 1e-15);
        for t in [0.0, 0.3, 0.5, 1.0] {
            let (v, d) = quadratic_lagrange(t);
            assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-15);
            assert!(d.iter().sum::<f64>().abs() < 1e-14);
        }
    }

    #[test]
    fn element_nodes_wrap() {
        let g = PeriodicGrid::new(4);
        assert_eq!(g.element_nodes(15), [15, 3, 12, 0]);
    }
}
