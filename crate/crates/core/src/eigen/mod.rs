//! Eigensolvers for the singular pencil `L x = lambda R x`.
//!
//! [`shift_invert_solve`] runs a restarted Arnoldi iteration on
//! `(L - sigma R)^{-1} R` with a sparse LU factorization; [`dense_fallback_solve`]
//! reduces the full pencil with the QZ algorithm and is meant as an oracle on
//! small systems. Both return a [`Spectrum`] with identical sorting and
//! classification rules.

mod dense;
mod krylov;

use std::fmt;
use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembly::{CsrMatrix, SystemMatrices};

pub use dense::dense_fallback_solve;
pub use krylov::shift_invert_solve;

#[derive(Debug, Error)]
pub enum EigenError {
    #[error("factorization of L - sigma R failed at sigma = {shift}")]
    Factorization { shift: f64 },
    #[error("pencil dimension {dim} exceeds the dense solver cap {cap}")]
    OverCap { dim: usize, cap: usize },
    #[error("invalid solver request: {0}")]
    InvalidRequest(String),
    #[error("eigenvector has a zero velocity part")]
    ZeroVelocity,
    #[error("dense eigen decomposition failed: {0}")]
    Decomposition(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Classification {
    Physical,
    SpuriousComplex,
    SpuriousNonpositive,
}

impl fmt::Display for Classification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Classification::Physical => "physical",
            Classification::SpuriousComplex => "spurious-complex",
            Classification::SpuriousNonpositive => "spurious-nonpositive",
        })
    }
}

/// Flags an eigenvalue as complex-spurious if its relative imaginary part
/// exceeds `tol_imag`, as nonpositive-spurious if `Re lambda <= tol_pos`.
pub fn classify(lambda: Complex64, tol_imag: f64, tol_pos: f64) -> Classification {
    if lambda.im.abs() > tol_imag * lambda.re.abs().max(1.0) {
        Classification::SpuriousComplex
    } else if lambda.re <= tol_pos {
        Classification::SpuriousNonpositive
    } else {
        Classification::Physical
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub nev: usize,
    pub sigma: f64,
    /// Krylov subspace size; `None` selects `max(2 nev + 10, 40)`.
    pub subspace: Option<usize>,
    pub tol_res: f64,
    pub tol_imag: f64,
    pub tol_pos: f64,
    pub max_restarts: usize,
    pub seed: u64,
    pub dense_cap: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            nev: 4,
            sigma: 1.0,
            subspace: None,
            tol_res: 1e-8,
            tol_imag: 1e-6,
            tol_pos: 0.0,
            max_restarts: 60,
            seed: 0x5eed,
            dense_cap: 3000,
        }
    }
}

impl SolverOptions {
    pub fn with_nev(nev: usize) -> Self {
        Self {
            nev,
            ..Self::default()
        }
    }

    pub fn subspace_size(&self) -> usize {
        self.subspace.unwrap_or((2 * self.nev + 10).max(40))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverMethod {
    ShiftInvert,
    Dense,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverInfo {
    pub method: SolverMethod,
    /// Shift actually used (after any retries).
    pub shift: f64,
    pub restarts: usize,
    pub subspace: usize,
    pub operator_applications: usize,
    /// False when fewer than `nev` physical pairs met the tolerance.
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct EigenPair {
    pub lambda: Complex64,
    pub u: Vec<Complex64>,
    pub p: Vec<Complex64>,
    /// `||L x - lambda R x|| / ||L x||`
    pub residual: f64,
    pub class: Classification,
}

impl EigenPair {
    pub fn is_physical(&self) -> bool {
        self.class == Classification::Physical
    }

    /// Real parts of the velocity coefficients.
    pub fn u_real(&self) -> Vec<f64> {
        self.u.iter().map(|z| z.re).collect()
    }

    pub fn p_real(&self) -> Vec<f64> {
        self.p.iter().map(|z| z.re).collect()
    }
}

#[derive(Debug, Clone)]
pub struct Spectrum {
    pub pairs: Vec<EigenPair>,
    pub info: SolverInfo,
}

impl Spectrum {
    pub fn physical(&self) -> impl Iterator<Item = &EigenPair> {
        self.pairs.iter().filter(|p| p.is_physical())
    }

    /// Real parts of the lowest `n` physical eigenvalues (fewer if not found).
    pub fn lowest_physical(&self, n: usize) -> Vec<f64> {
        self.physical().take(n).map(|p| p.lambda.re).collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "index,re_lambda,im_lambda,residual,classification")?;
        for (i, p) in self.pairs.iter().enumerate() {
            writeln!(
                w,
                "{i},{:.12e},{:.12e},{:.3e},{}",
                p.lambda.re, p.lambda.im, p.residual, p.class
            )?;
        }
        Ok(())
    }
}

/// Re-flags every pair with [`classify`].
pub fn classify_spurious(mut pairs: Vec<EigenPair>, tol_imag: f64, tol_pos: f64) -> Vec<EigenPair> {
    for p in &mut pairs {
        p.class = classify(p.lambda, tol_imag, tol_pos);
    }
    pairs
}

fn mass_norm_sq(m: &CsrMatrix, u: &[Complex64]) -> f64 {
    let re: Vec<f64> = u.iter().map(|z| z.re).collect();
    let im: Vec<f64> = u.iter().map(|z| z.im).collect();
    m.bilinear(&re, &re) + m.bilinear(&im, &im)
}

/// Scales the pair so that `u^H M u = 1` and rotates its phase so the
/// largest-magnitude velocity coefficient is real and positive.
pub fn normalize_eigenpair(mut pair: EigenPair, m: &CsrMatrix) -> Result<EigenPair, EigenError> {
    let nrm = mass_norm_sq(m, &pair.u);
    if !(nrm > 0.0) || !nrm.is_finite() {
        return Err(EigenError::ZeroVelocity);
    }
    let (_, pivot) = pair
        .u
        .iter()
        .enumerate()
        .fold((f64::NEG_INFINITY, Complex64::new(0.0, 0.0)), |(best, z), (_, &c)| {
            // first occurrence wins, keeping the choice independent of scaling
            if c.norm() > best * (1.0 + 1e-12) {
                (c.norm(), c)
            } else {
                (best, z)
            }
        });
    let phase = pivot.conj() / pivot.norm();
    let scale = phase / nrm.sqrt();
    pair.u.iter_mut().for_each(|z| *z *= scale);
    pair.p.iter_mut().for_each(|z| *z *= scale);
    Ok(pair)
}

/// Sorts ascending by real part, ties by imaginary part.
pub(crate) fn sort_pairs(pairs: &mut [EigenPair]) {
    pairs.sort_by(|a, b| {
        a.lambda
            .re
            .total_cmp(&b.lambda.re)
            .then(a.lambda.im.total_cmp(&b.lambda.im))
    });
}

/// Relative pencil residual `||L x - lambda R x|| / ||L x||` for a complex `x`.
pub(crate) fn pencil_residual(
    lhs: &CsrMatrix,
    system: &SystemMatrices,
    x: &[Complex64],
    lambda: Complex64,
) -> f64 {
    let re: Vec<f64> = x.iter().map(|z| z.re).collect();
    let im: Vec<f64> = x.iter().map(|z| z.im).collect();
    let (lr, li) = (lhs.matvec(&re), lhs.matvec(&im));
    let (rr, ri) = (system.apply_rhs(&re), system.apply_rhs(&im));
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..x.len() {
        let lx = Complex64::new(lr[i], li[i]);
        let rx = Complex64::new(rr[i], ri[i]);
        num += (lx - lambda * rx).norm_sqr();
        den += lx.norm_sqr();
    }
    if den == 0.0 {
        f64::INFINITY
    } else {
        (num / den).sqrt()
    }
}

/// Builds a normalized, classified pair from a full pencil vector.
pub(crate) fn finish_pair(
    system: &SystemMatrices,
    lhs: &CsrMatrix,
    x: &[Complex64],
    lambda: Complex64,
    opts: &SolverOptions,
) -> Result<EigenPair, EigenError> {
    let residual = pencil_residual(lhs, system, x, lambda);
    let (u, p) = system.split(x);
    normalize_eigenpair(
        EigenPair {
            lambda,
            u: u.to_vec(),
            p: p.to_vec(),
            residual,
            class: classify(lambda, opts.tol_imag, opts.tol_pos),
        },
        &system.m,
    )
}
