use crate::mesh::{Mesh, Point};

use super::SpaceError;

/// Affine map `x = origin + J * xi` from the reference triangle onto an element.
#[derive(Debug, Clone, Copy)]
pub struct AffineMap {
    pub origin: Point,
    /// `jacobian[r][c] = d x_r / d xi_c`
    pub jacobian: [[f64; 2]; 2],
    pub inverse: [[f64; 2]; 2],
    pub det: f64,
}

impl AffineMap {
    pub fn from_triangle(v: [Point; 3]) -> Option<Self> {
        let jacobian = [
            [v[1][0] - v[0][0], v[2][0] - v[0][0]],
            [v[1][1] - v[0][1], v[2][1] - v[0][1]],
        ];
        let det = jacobian[0][0] * jacobian[1][1] - jacobian[0][1] * jacobian[1][0];
        if !(det > 0.0) {
            return None;
        }
        let inverse = [
            [jacobian[1][1] / det, -jacobian[0][1] / det],
            [-jacobian[1][0] / det, jacobian[0][0] / det],
        ];
        Some(Self {
            origin: v[0],
            jacobian,
            inverse,
            det,
        })
    }

    pub fn map(&self, xi: [f64; 2]) -> Point {
        let j = &self.jacobian;
        [
            self.origin[0] + j[0][0] * xi[0] + j[0][1] * xi[1],
            self.origin[1] + j[1][0] * xi[0] + j[1][1] * xi[1],
        ]
    }

    pub fn pullback(&self, x: Point) -> [f64; 2] {
        let d = [x[0] - self.origin[0], x[1] - self.origin[1]];
        let k = &self.inverse;
        [k[0][0] * d[0] + k[0][1] * d[1], k[1][0] * d[0] + k[1][1] * d[1]]
    }

    /// Physical gradient `J^{-T} g` of a reference gradient `g`.
    pub fn push_gradient(&self, g: [f64; 2]) -> [f64; 2] {
        let k = &self.inverse;
        [k[0][0] * g[0] + k[1][0] * g[1], k[0][1] * g[0] + k[1][1] * g[1]]
    }

    /// Physical Laplacian `tr(J^{-T} H J^{-1})` of a reference Hessian
    /// given as `(xx, xy, yy)`.
    pub fn push_laplacian(&self, h: [f64; 3]) -> f64 {
        let k = &self.inverse;
        let hm = [[h[0], h[1]], [h[1], h[2]]];
        let mut lap = 0.0;
        for d in 0..2 {
            // (J^{-T} H J^{-1})_{dd} = sum_{a,b} K[a][d] H[a][b] K[b][d]
            for a in 0..2 {
                for b in 0..2 {
                    lap += k[a][d] * hm[a][b] * k[b][d];
                }
            }
        }
        lap
    }
}

pub fn geometric_map(mesh: &Mesh, element: usize) -> Result<AffineMap, SpaceError> {
    if element >= mesh.num_elements() {
        return Err(SpaceError::ElementOutOfRange(element));
    }
    AffineMap::from_triangle(mesh.element_vertices(element))
        .ok_or(SpaceError::DegenerateElement(element))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::femspace::triangle_quadrature;
    use proptest::prelude::*;

    #[test]
    fn reference_triangle_is_identity() {
        let m = AffineMap::from_triangle([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert_eq!(m.jacobian, [[1.0, 0.0], [0.0, 1.0]]);
        assert_eq!(m.det, 1.0);
    }

    #[test]
    fn scaling_scales_determinant() {
        let s = 0.37;
        let m = AffineMap::from_triangle([[0.0, 0.0], [s, 0.0], [0.0, s]]).unwrap();
        assert!((m.det - s * s).abs() < 1e-15);
    }

    #[test]
    fn degenerate_is_rejected() {
        assert!(AffineMap::from_triangle([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]]).is_none());
        assert!(AffineMap::from_triangle([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0]]).is_none());
    }

    proptest! {
        #[test]
        fn mapped_quadrature_integrates_area(
            ax in -2.0..2.0f64, ay in -2.0..2.0f64,
            bx in -2.0..2.0f64, by in -2.0..2.0f64,
            cx in -2.0..2.0f64, cy in -2.0..2.0f64,
        ) {
            let shoelace = 0.5 * ((bx - ax) * (cy - ay) - (cx - ax) * (by - ay));
            prop_assume!(shoelace.abs() > 1e-3);
            let tri = if shoelace > 0.0 {
                [[ax, ay], [bx, by], [cx, cy]]
            } else {
                [[ax, ay], [cx, cy], [bx, by]]
            };
            let m = AffineMap::from_triangle(tri).unwrap();
            prop_assert!((m.det - 2.0 * shoelace.abs()).abs() <= 1e-12 * m.det);
            let q = triangle_quadrature(2).unwrap();
            let area: f64 = q.weights.iter().map(|w| w * m.det).sum();
            prop_assert!((area - shoelace.abs()).abs() <= 1e-13 * shoelace.abs());
            let p = m.map([0.2, 0.3]);
            let back = m.pullback(p);
            prop_assert!((back[0] - 0.2).abs() < 1e-9 && (back[1] - 0.3).abs() < 1e-9);
        }
    }
}
