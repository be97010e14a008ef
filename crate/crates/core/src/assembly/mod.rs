//! Interior penalty DG forms and the saddle-point pencil.
//!
//! For a velocity space `V_h` (discontinuous vector `P_k`) and pressure space
//! `Q_h` (discontinuous `P_{k-1}`) the assembled blocks are
//!
//! - `A`: `kappa (u, v) + nu (grad u, grad v)` plus, on interior and no-slip
//!   facets, the penalty, consistency and `epsilon`-weighted adjoint terms;
//! - `B`: `-(div v, q)` plus the facet term `{q} [v]`;
//! - `M`: the velocity mass matrix.
//!
//! Facets tagged as natural (traction-free) boundary carry no DG terms.

mod forms;
mod sparse;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::femspace::SpaceError;
use crate::mesh::{Mesh, RegionSpec};

pub use forms::{
    assemble_adjoint_block, assemble_facet, assemble_system, assemble_volume, dg_norm,
    dg_norm_matrix,
};
pub use sparse::{CooMatrix, CsrMatrix};

#[derive(Debug, Error)]
pub enum AssemblyError {
    #[error("dimension mismatch: {what} has {got}, expected {expected}")]
    DimensionMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
    #[error("facet {0} has inconsistent adjacency")]
    InconsistentFacet(usize),
    #[error(transparent)]
    Space(#[from] SpaceError),
}

/// Interior penalty variant, identified by the adjoint-consistency weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "i32", into = "i32")]
pub enum Variant {
    /// `epsilon = 1`
    Symmetric,
    /// `epsilon = 0`
    Incomplete,
    /// `epsilon = -1`
    NonSymmetric,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Symmetric, Variant::Incomplete, Variant::NonSymmetric];

    pub fn epsilon(self) -> f64 {
        match self {
            Variant::Symmetric => 1.0,
            Variant::Incomplete => 0.0,
            Variant::NonSymmetric => -1.0,
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            Variant::Symmetric => "SIPG",
            Variant::Incomplete => "IIPG",
            Variant::NonSymmetric => "NIPG",
        }
    }
}

impl TryFrom<i32> for Variant {
    type Error = String;

    fn try_from(eps: i32) -> Result<Self, Self::Error> {
        match eps {
            1 => Ok(Variant::Symmetric),
            0 => Ok(Variant::Incomplete),
            -1 => Ok(Variant::NonSymmetric),
            other => Err(format!("epsilon must be -1, 0 or 1, got {other}")),
        }
    }
}

impl From<Variant> for i32 {
    fn from(v: Variant) -> i32 {
        v.epsilon() as i32
    }
}

/// Coefficients of the discrete forms.
#[derive(Debug, Clone, PartialEq)]
pub struct PhysicalParams {
    nu: f64,
    kappa: Vec<f64>,
    a: f64,
    degree: usize,
    variant: Variant,
}

impl PhysicalParams {
    pub fn new(
        nu: f64,
        kappa: Vec<f64>,
        a: f64,
        degree: usize,
        variant: Variant,
    ) -> Result<Self, AssemblyError> {
        if !(nu > 0.0 && nu.is_finite()) {
            return Err(AssemblyError::InvalidParams(format!("nu must be positive, got {nu}")));
        }
        if let Some(k) = kappa.iter().find(|k| !(**k >= 0.0 && k.is_finite())) {
            return Err(AssemblyError::InvalidParams(format!("kappa must be >= 0, got {k}")));
        }
        if !(a >= 0.0 && a.is_finite()) {
            return Err(AssemblyError::InvalidParams(format!("penalty must be >= 0, got {a}")));
        }
        if degree == 0 {
            return Err(SpaceError::UnsupportedDegree(0).into());
        }
        Ok(Self {
            nu,
            kappa,
            a,
            degree,
            variant,
        })
    }

    /// Parameters with `kappa` taken elementwise from `regions`.
    pub fn from_regions(
        mesh: &Mesh,
        regions: &RegionSpec,
        nu: f64,
        a: f64,
        degree: usize,
        variant: Variant,
    ) -> Result<Self, AssemblyError> {
        Self::new(nu, regions.kappa_per_element(mesh), a, degree, variant)
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn kappa(&self) -> &[f64] {
        &self.kappa
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn epsilon(&self) -> f64 {
        self.variant.epsilon()
    }

    /// Effective penalty `a_S = a k^2`.
    pub fn a_s(&self) -> f64 {
        self.a * (self.degree * self.degree) as f64
    }

    pub fn with_nu(&self, nu: f64) -> Result<Self, AssemblyError> {
        Self::new(nu, self.kappa.clone(), self.a, self.degree, self.variant)
    }

    pub fn with_kappa(&self, kappa: Vec<f64>) -> Result<Self, AssemblyError> {
        Self::new(self.nu, kappa, self.a, self.degree, self.variant)
    }

    pub fn with_a(&self, a: f64) -> Result<Self, AssemblyError> {
        Self::new(self.nu, self.kappa.clone(), a, self.degree, self.variant)
    }

    pub fn with_variant(&self, variant: Variant) -> Self {
        Self {
            variant,
            ..self.clone()
        }
    }
}

/// Assembled blocks of the discrete problem.
#[derive(Debug, Clone)]
pub struct SystemMatrices {
    pub a: CsrMatrix,
    pub b: CsrMatrix,
    pub m: CsrMatrix,
    /// `c_j = int psi_j`; present when the pressure is only determined up to a
    /// constant (no natural boundary).
    pub mean: Option<Vec<f64>>,
}

impl SystemMatrices {
    pub fn n_velocity(&self) -> usize {
        self.a.nrows
    }

    pub fn n_pressure(&self) -> usize {
        self.b.nrows
    }

    /// Size of the pencil, including the multiplier row when bordered.
    pub fn dim(&self) -> usize {
        self.n_velocity() + self.n_pressure() + usize::from(self.mean.is_some())
    }

    fn lhs_coo(&self, border: bool) -> CooMatrix {
        let nu = self.n_velocity();
        let np = self.n_pressure();
        let n = if border { self.dim() } else { nu + np };
        let mut coo = CooMatrix::new(n, n);
        for (r, c, v) in self.a.triplets() {
            coo.push(r, c, v);
        }
        for (r, c, v) in self.b.triplets() {
            coo.push(nu + r, c, v);
            coo.push(c, nu + r, v);
        }
        if let (true, Some(mean)) = (border, &self.mean) {
            let last = nu + np;
            for (j, &cj) in mean.iter().enumerate() {
                coo.push(last, nu + j, cj);
                coo.push(nu + j, last, cj);
            }
        }
        coo
    }

    /// `L = [[A, B^T], [B, 0]]`, bordered by the mean constraint if present.
    pub fn lhs(&self) -> CsrMatrix {
        self.lhs_coo(true).to_csr()
    }

    /// `R = diag(M, 0)`.
    pub fn rhs(&self) -> CsrMatrix {
        let n = self.dim();
        let mut coo = CooMatrix::new(n, n);
        for (r, c, v) in self.m.triplets() {
            coo.push(r, c, v);
        }
        coo.to_csr()
    }

    /// `L - sigma R`.
    pub fn shifted(&self, sigma: f64) -> CsrMatrix {
        self.shifted_coo(sigma, true).to_csr()
    }

    /// `L - sigma R` without the mean-constraint border (size `n_u + n_p`).
    pub fn shifted_unbordered(&self, sigma: f64) -> CsrMatrix {
        self.shifted_coo(sigma, false).to_csr()
    }

    fn shifted_coo(&self, sigma: f64, border: bool) -> CooMatrix {
        let mut coo = self.lhs_coo(border);
        for (r, c, v) in self.m.triplets() {
            coo.push(r, c, -sigma * v);
        }
        coo
    }

    /// `R x`, touching only the velocity block.
    pub fn apply_rhs(&self, x: &[f64]) -> Vec<f64> {
        let nu = self.n_velocity();
        let mut y = vec![0.0; self.dim()];
        self.m.matvec_into(&x[..nu], &mut y[..nu]);
        y
    }

    /// Splits a pencil vector into velocity and pressure coefficients.
    pub fn split<'a, T>(&self, x: &'a [T]) -> (&'a [T], &'a [T]) {
        let nu = self.n_velocity();
        (&x[..nu], &x[nu..nu + self.n_pressure()])
    }
}
