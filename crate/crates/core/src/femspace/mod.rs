//! Reference elements, quadrature, affine geometry, and discontinuous dof maps.

mod field;
mod geometry;
mod quadrature;
mod reference;

use thiserror::Error;

pub use field::{eval_pressure, eval_velocity, interpolate_pressure, interpolate_velocity};
pub use geometry::{geometric_map, AffineMap};
pub use quadrature::{
    edge_quadrature, triangle_quadrature, QuadratureRule, MAX_QUADRATURE_DEGREE,
};
pub use reference::{dim_pk, eval_basis, eval_basis_grad, ReferenceElement, MAX_DEGREE};

use crate::mesh::Mesh;

#[derive(Debug, Error, PartialEq)]
pub enum SpaceError {
    #[error("polynomial degree {0} is not supported (velocity degree must be 1..=4)")]
    UnsupportedDegree(usize),
    #[error("no quadrature rule of exactness {0}")]
    UnsupportedQuadrature(usize),
    #[error("element {0} is degenerate")]
    DegenerateElement(usize),
    #[error("element {0} does not exist")]
    ElementOutOfRange(usize),
}

/// Global numbering of the fully discontinuous velocity (vector `P_k`) and
/// pressure (scalar `P_{k-1}`) spaces.
///
/// Element `e` owns velocity dofs `[e * 2 n_k, (e + 1) * 2 n_k)`, component
/// `c` first-index `e * 2 n_k + c * n_k`, and pressure dofs
/// `[e * n_{k-1}, (e + 1) * n_{k-1})`. No dof is shared between elements.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DofMap {
    pub n_elements: usize,
    pub velocity_local: usize,
    pub pressure_local: usize,
}

impl DofMap {
    pub fn new(n_elements: usize, degree: usize) -> Result<Self, SpaceError> {
        if !(1..=MAX_DEGREE).contains(&degree) {
            return Err(SpaceError::UnsupportedDegree(degree));
        }
        Ok(Self {
            n_elements,
            velocity_local: dim_pk(degree),
            pressure_local: dim_pk(degree - 1),
        })
    }

    pub fn n_velocity(&self) -> usize {
        2 * self.velocity_local * self.n_elements
    }

    pub fn n_pressure(&self) -> usize {
        self.pressure_local * self.n_elements
    }

    pub fn velocity_dof(&self, element: usize, component: usize, i: usize) -> usize {
        (2 * element + component) * self.velocity_local + i
    }

    pub fn pressure_dof(&self, element: usize, j: usize) -> usize {
        element * self.pressure_local + j
    }

    pub fn velocity_range(&self, element: usize) -> std::ops::Range<usize> {
        let s = 2 * element * self.velocity_local;
        s..s + 2 * self.velocity_local
    }

    pub fn pressure_range(&self, element: usize) -> std::ops::Range<usize> {
        let s = element * self.pressure_local;
        s..s + self.pressure_local
    }
}

/// Velocity/pressure reference elements together with the dof map for a mesh.
#[derive(Debug, Clone)]
pub struct FeSpaces {
    pub degree: usize,
    pub velocity: ReferenceElement,
    pub pressure: ReferenceElement,
    pub dofs: DofMap,
}

impl FeSpaces {
    pub fn new(mesh: &Mesh, degree: usize) -> Result<Self, SpaceError> {
        let dofs = DofMap::new(mesh.num_elements(), degree)?;
        Ok(Self {
            degree,
            velocity: ReferenceElement::new(degree)?,
            pressure: ReferenceElement::new(degree - 1)?,
            dofs,
        })
    }

    /// Velocity plus pressure unknowns (without any mean-value multiplier).
    pub fn n_dofs(&self) -> usize {
        self.dofs.n_velocity() + self.dofs.n_pressure()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{generate_unit_square, DiagonalPattern};

    #[test]
    fn dof_counts_follow_formula() {
        let mesh = generate_unit_square(16, DiagonalPattern::Right).unwrap();
        let s = FeSpaces::new(&mesh, 1).unwrap();
        assert_eq!(s.n_dofs(), 512 * (2 * 3 + 1));
        assert_eq!(s.n_dofs(), 3584);
        for k in 1..=MAX_DEGREE {
            let s = FeSpaces::new(&mesh, k).unwrap();
            let n = 16 * 16 * 2;
            assert_eq!(s.dofs.n_velocity(), 2 * n * dim_pk(k));
            assert_eq!(s.dofs.n_pressure(), n * dim_pk(k - 1));
        }
        assert_eq!(DofMap::new(4, 0), Err(SpaceError::UnsupportedDegree(0)));
    }

    #[test]
    fn every_dof_has_exactly_one_owner() {
        let d = DofMap::new(7, 2).unwrap();
        let mut owner = vec![usize::MAX; d.n_velocity()];
        for e in 0..7 {
            for c in 0..2 {
                for i in 0..d.velocity_local {
                    let g = d.velocity_dof(e, c, i);
                    assert!(d.velocity_range(e).contains(&g));
                    assert_eq!(owner[g], usize::MAX);
                    owner[g] = e;
                }
            }
        }
        assert!(owner.iter().all(|&o| o != usize::MAX));
        let mut seen = vec![false; d.n_pressure()];
        for e in 0..7 {
            for g in d.pressure_range(e) {
                assert!(!seen[g]);
                seen[g] = true;
            }
        }
        assert!(seen.into_iter().all(|s| s));
    }
}
