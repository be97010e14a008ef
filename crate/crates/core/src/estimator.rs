//! Residual a posteriori indicators for a discrete eigenpair.
//!
//! For each element `T` the squared indicator is the sum of
//!
//! - `h_T^2 ||lambda u + nu lap u - kappa u - grad p||_T^2` (volume),
//! - `||div u||_T^2` (divergence),
//! - `h_F / 2 ||[(nu grad u - p I) n]||_F^2` for interior facets of `T`,
//! - `h_F / 2 ||(nu grad u - p I) n||_F^2` for traction-free facets of `T`,
//! - `1 / (2 h_F) ||nu [u]||_F^2` for interior facets of `T`,
//! - `1 / (2 h_F) ||nu u (x) n||_F^2` for no-slip facets of `T`.
//!
//! Interior facet terms are added to both neighbours. Complex eigenpairs are
//! handled by summing the squared norms of real and imaginary parts.

use std::io::Write;

use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

use crate::assembly::PhysicalParams;
use crate::eigen::EigenPair;
use crate::femspace::{edge_quadrature, geometric_map, triangle_quadrature, AffineMap, FeSpaces, SpaceError};
use crate::mesh::{BoundaryTag, FacetKind, Mesh};

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("dimension mismatch: {what} has {got}, expected {expected}")]
    DimensionMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error(transparent)]
    Space(#[from] SpaceError),
}

/// Named parts of one element's squared indicator.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Contribution {
    pub volume: f64,
    pub div: f64,
    pub stress_jump: f64,
    pub gamma2: f64,
    pub vel_jump: f64,
    pub gamma1: f64,
}

impl Contribution {
    pub fn total(&self) -> f64 {
        self.volume + self.div + self.stress_jump + self.gamma2 + self.vel_jump + self.gamma1
    }
}

/// Per-element squared indicators and the global estimator.
#[derive(Debug, Clone)]
pub struct IndicatorField {
    pub contributions: Vec<Contribution>,
    /// `sqrt(sum_T eta_T^2)`, summed in element order.
    pub eta: f64,
}

impl IndicatorField {
    pub fn eta_sq(&self) -> Vec<f64> {
        self.contributions.iter().map(Contribution::total).collect()
    }

    pub fn eta_sq_total(&self) -> f64 {
        self.eta * self.eta
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "element_id,eta_sq_volume,eta_sq_div,eta_sq_stress_jump,eta_sq_gamma2,eta_sq_vel_jump,eta_sq_gamma1,eta_sq_total"
        )?;
        for (i, c) in self.contributions.iter().enumerate() {
            writeln!(
                w,
                "{i},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}",
                c.volume,
                c.div,
                c.stress_jump,
                c.gamma2,
                c.vel_jump,
                c.gamma1,
                c.total()
            )?;
        }
        Ok(())
    }
}

/// Velocity and pressure of one real coefficient vector at a point.
#[derive(Debug, Clone, Copy, Default)]
struct LocalState {
    u: [f64; 2],
    grad_u: [[f64; 2]; 2],
    lap_u: [f64; 2],
    p: f64,
    grad_p: [f64; 2],
}

impl LocalState {
    /// `(nu grad u - p I) n`
    fn traction(&self, nu: f64, n: [f64; 2]) -> [f64; 2] {
        let mut t = [0.0; 2];
        for (c, tc) in t.iter_mut().enumerate() {
            *tc = nu * (self.grad_u[c][0] * n[0] + self.grad_u[c][1] * n[1]) - self.p * n[c];
        }
        t
    }
}

struct Coefficients {
    re_u: Vec<f64>,
    im_u: Vec<f64>,
    re_p: Vec<f64>,
    im_p: Vec<f64>,
}

impl Coefficients {
    fn new(spaces: &FeSpaces, pair: &EigenPair) -> Result<Self, EstimatorError> {
        let (nu, np) = (spaces.dofs.n_velocity(), spaces.dofs.n_pressure());
        if pair.u.len() != nu {
            return Err(EstimatorError::DimensionMismatch {
                what: "velocity",
                got: pair.u.len(),
                expected: nu,
            });
        }
        if pair.p.len() != np {
            return Err(EstimatorError::DimensionMismatch {
                what: "pressure",
                got: pair.p.len(),
                expected: np,
            });
        }
        Ok(Self {
            re_u: pair.u.iter().map(|z| z.re).collect(),
            im_u: pair.u.iter().map(|z| z.im).collect(),
            re_p: pair.p.iter().map(|z| z.re).collect(),
            im_p: pair.p.iter().map(|z| z.im).collect(),
        })
    }

    fn parts(&self) -> [(&[f64], &[f64]); 2] {
        [(&self.re_u, &self.re_p), (&self.im_u, &self.im_p)]
    }
}

fn local_state(
    spaces: &FeSpaces,
    map: &AffineMap,
    e: usize,
    xi: [f64; 2],
    u: &[f64],
    p: &[f64],
) -> LocalState {
    let d = &spaces.dofs;
    let mut s = LocalState::default();
    let vals = spaces.velocity.values(xi);
    let grads = spaces.velocity.gradients(xi);
    let hess = spaces.velocity.hessians(xi);
    for i in 0..vals.len() {
        let g = map.push_gradient(grads[i]);
        let lap = map.push_laplacian(hess[i]);
        for c in 0..2 {
            let coef = u[d.velocity_dof(e, c, i)];
            s.u[c] += coef * vals[i];
            s.grad_u[c][0] += coef * g[0];
            s.grad_u[c][1] += coef * g[1];
            s.lap_u[c] += coef * lap;
        }
    }
    let pv = spaces.pressure.values(xi);
    let pg = spaces.pressure.gradients(xi);
    for j in 0..pv.len() {
        let coef = p[d.pressure_dof(e, j)];
        let g = map.push_gradient(pg[j]);
        s.p += coef * pv[j];
        s.grad_p[0] += coef * g[0];
        s.grad_p[1] += coef * g[1];
    }
    s
}

/// Volume and divergence parts `(h_T^2 ||R_T||^2, ||div u||^2)` on element `e`.
pub fn element_residual(
    mesh: &Mesh,
    spaces: &FeSpaces,
    params: &PhysicalParams,
    pair: &EigenPair,
    e: usize,
) -> Result<(f64, f64), EstimatorError> {
    let coefs = Coefficients::new(spaces, pair)?;
    element_terms(mesh, spaces, params, pair.lambda, &coefs, e)
}

fn element_terms(
    mesh: &Mesh,
    spaces: &FeSpaces,
    params: &PhysicalParams,
    lambda: Complex64,
    coefs: &Coefficients,
    e: usize,
) -> Result<(f64, f64), EstimatorError> {
    let map = geometric_map(mesh, e)?;
    let quad = triangle_quadrature(2 * spaces.degree)?;
    let (nu, kappa) = (params.nu(), params.kappa()[e]);
    let h = mesh.diameter(e);
    let (mut vol, mut div) = (0.0, 0.0);
    for (xi, w) in quad.points.iter().zip(&quad.weights) {
        let w = w * map.det;
        let [re, im] = coefs.parts().map(|(u, p)| local_state(spaces, &map, e, *xi, u, p));
        for c in 0..2 {
            let lu = Complex64::new(re.u[c], im.u[c]) * lambda;
            let rest = |s: &LocalState| nu * s.lap_u[c] - kappa * s.u[c] - s.grad_p[c];
            let r = lu + Complex64::new(rest(&re), rest(&im));
            vol += w * r.norm_sqr();
        }
        for s in [&re, &im] {
            div += w * (s.grad_u[0][0] + s.grad_u[1][1]).powi(2);
        }
    }
    Ok((h * h * vol, div))
}

/// Facet parts of every element's indicator; volume and divergence are zero.
pub fn facet_residuals(
    mesh: &Mesh,
    spaces: &FeSpaces,
    params: &PhysicalParams,
    pair: &EigenPair,
) -> Result<Vec<Contribution>, EstimatorError> {
    let coefs = Coefficients::new(spaces, pair)?;
    facet_terms(mesh, spaces, params, &coefs)
}

fn facet_terms(
    mesh: &Mesh,
    spaces: &FeSpaces,
    params: &PhysicalParams,
    coefs: &Coefficients,
) -> Result<Vec<Contribution>, EstimatorError> {
    let quad = edge_quadrature(2 * spaces.degree)?;
    let nu = params.nu();
    let maps = (0..mesh.num_elements())
        .map(|e| geometric_map(mesh, e))
        .collect::<Result<Vec<_>, _>>()?;
    let mut out = vec![Contribution::default(); mesh.num_elements()];
    for f in mesh.facets() {
        let [a, b] = f.vertices.map(|v| mesh.vertices()[v]);
        let hf = f.length;
        let n = f.normal;
        let (mut traction, mut jump) = (0.0, 0.0);
        for (t, w) in quad.points.iter().zip(&quad.weights) {
            let w = w * hf;
            let x = [a[0] + t[0] * (b[0] - a[0]), a[1] + t[0] * (b[1] - a[1])];
            let eval = |e: usize| {
                let xi = maps[e].pullback(x);
                coefs.parts().map(|(u, p)| local_state(spaces, &maps[e], e, xi, u, p))
            };
            let plus = eval(f.plus.element);
            let minus = f.minus.map(|m| eval(m.element));
            for part in 0..2 {
                let sp = &plus[part];
                let (tp, up) = (sp.traction(nu, n), sp.u);
                let (tm, um) = match &minus {
                    Some(m) => (m[part].traction(nu, n), m[part].u),
                    None => ([0.0; 2], [0.0; 2]),
                };
                for c in 0..2 {
                    traction += w * (tp[c] - tm[c]).powi(2);
                    jump += w * (nu * (up[c] - um[c])).powi(2);
                }
            }
        }
        let (stress, vel) = (0.5 * hf * traction, 0.5 / hf * jump);
        match f.kind {
            FacetKind::Interior => {
                for side in std::iter::once(f.plus).chain(f.minus) {
                    out[side.element].stress_jump += stress;
                    out[side.element].vel_jump += vel;
                }
            }
            FacetKind::Boundary(BoundaryTag::Gamma2) => out[f.plus.element].gamma2 += stress,
            FacetKind::Boundary(BoundaryTag::Gamma1) => out[f.plus.element].gamma1 += vel,
        }
    }
    Ok(out)
}

/// All indicators of `pair`.
pub fn compute_eta(
    mesh: &Mesh,
    spaces: &FeSpaces,
    params: &PhysicalParams,
    pair: &EigenPair,
) -> Result<IndicatorField, EstimatorError> {
    let coefs = Coefficients::new(spaces, pair)?;
    let mut contributions = facet_terms(mesh, spaces, params, &coefs)?;
    let volume = (0..mesh.num_elements())
        .into_par_iter()
        .map(|e| element_terms(mesh, spaces, params, pair.lambda, &coefs, e))
        .collect::<Result<Vec<_>, _>>()?;
    for (c, (vol, div)) in contributions.iter_mut().zip(volume) {
        c.volume = vol;
        c.div = div;
    }
    let eta = contributions.iter().map(Contribution::total).sum::<f64>().sqrt();
    Ok(IndicatorField { contributions, eta })
}

/// `|lambda_h - lambda_ref| / eta^2`; infinite when `eta = 0` but the error is not.
pub fn effectivity(lambda_ref: f64, lambda_h: f64, eta: f64) -> f64 {
    let err = (lambda_h - lambda_ref).abs();
    if err == 0.0 {
        0.0
    } else {
        err / (eta * eta)
    }
}
