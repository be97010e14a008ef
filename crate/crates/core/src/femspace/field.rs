use crate::mesh::{Mesh, Point};

use super::{geometric_map, FeSpaces, SpaceError};

/// Nodal interpolant of a vector field in the discontinuous velocity space.
pub fn interpolate_velocity(
    mesh: &Mesh,
    spaces: &FeSpaces,
    f: impl Fn(Point) -> [f64; 2],
) -> Result<Vec<f64>, SpaceError> {
    let d = &spaces.dofs;
    let mut out = vec![0.0; d.n_velocity()];
    for e in 0..mesh.num_elements() {
        let map = geometric_map(mesh, e)?;
        for (i, &xi) in spaces.velocity.nodes().iter().enumerate() {
            let v = f(map.map(xi));
            out[d.velocity_dof(e, 0, i)] = v[0];
            out[d.velocity_dof(e, 1, i)] = v[1];
        }
    }
    Ok(out)
}

/// Nodal interpolant of a scalar field in the discontinuous pressure space.
pub fn interpolate_pressure(
    mesh: &Mesh,
    spaces: &FeSpaces,
    f: impl Fn(Point) -> f64,
) -> Result<Vec<f64>, SpaceError> {
    let d = &spaces.dofs;
    let mut out = vec![0.0; d.n_pressure()];
    for e in 0..mesh.num_elements() {
        let map = geometric_map(mesh, e)?;
        for (j, &xi) in spaces.pressure.nodes().iter().enumerate() {
            out[d.pressure_dof(e, j)] = f(map.map(xi));
        }
    }
    Ok(out)
}

/// Velocity value and physical gradient (`grad[c] = grad u_c`) of a discrete
/// field at reference point `xi` of `element`.
pub fn eval_velocity(
    mesh: &Mesh,
    spaces: &FeSpaces,
    u: &[f64],
    element: usize,
    xi: [f64; 2],
) -> Result<([f64; 2], [[f64; 2]; 2]), SpaceError> {
    let map = geometric_map(mesh, element)?;
    let vals = spaces.velocity.values(xi);
    let grads = spaces.velocity.gradients(xi);
    let mut value = [0.0; 2];
    let mut grad = [[0.0; 2]; 2];
    for c in 0..2 {
        for (i, (&phi, &g)) in vals.iter().zip(&grads).enumerate() {
            let coef = u[spaces.dofs.velocity_dof(element, c, i)];
            let pg = map.push_gradient(g);
            value[c] += coef * phi;
            grad[c][0] += coef * pg[0];
            grad[c][1] += coef * pg[1];
        }
    }
    Ok((value, grad))
}

/// Pressure value of a discrete field at reference point `xi` of `element`.
pub fn eval_pressure(spaces: &FeSpaces, p: &[f64], element: usize, xi: [f64; 2]) -> f64 {
    spaces
        .pressure
        .values(xi)
        .iter()
        .enumerate()
        .map(|(j, psi)| psi * p[spaces.dofs.pressure_dof(element, j)])
        .sum()
}
