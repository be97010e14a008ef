use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::Lu;
use faer::Mat;
use log::{debug, warn};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::assembly::{CooMatrix, SystemMatrices};

use super::{
    classify, finish_pair, sort_pairs, Classification, EigenError, SolverInfo,
    SolverMethod, SolverOptions, Spectrum,
};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
/// Ritz values below this magnitude belong to the infinite eigenvalues.
const THETA_FLOOR: f64 = 1e-10;

/// Solver for `(L - sigma R) x = b`.
///
/// The mean-value border is a dense row and column, which ruins the fill of
/// a direct factorization. Instead the unbordered matrix `K0` (singular,
/// with the constant pressure as left and right null vector) is made
/// invertible by adding `alpha e_q e_q^T` on one pressure unknown `q`, and the
/// bordered solution is recovered from two extra solves and a 2x2 system.
struct PencilSolver {
    lu: Lu<usize, f64>,
    n_core: usize,
    border: Option<Border>,
}

struct Border {
    c: Vec<f64>,
    q: usize,
    alpha: f64,
    xe: Vec<f64>,
    xc: Vec<f64>,
}

impl PencilSolver {
    fn new(system: &SystemMatrices, sigma: f64) -> Result<Self, EigenError> {
        let fail = || EigenError::Factorization { shift: sigma };
        let core = system.shifted_unbordered(sigma);
        let n_core = core.nrows;
        let nu = system.n_velocity();
        let (matrix, border) = match &system.mean {
            None => (core, None),
            Some(mean) => {
                let q = nu;
                let alpha = system.b.max_abs().max(f64::MIN_POSITIVE);
                let mut pin = CooMatrix::new(n_core, n_core);
                pin.push(q, q, alpha);
                let mut c = vec![0.0; n_core];
                c[nu..].copy_from_slice(mean);
                (core.add_scaled(&pin.to_csr(), 1.0), Some((c, q, alpha)))
            }
        };
        let lu = matrix.to_faer().sp_lu().map_err(|_| fail())?;
        let mut solver = Self {
            lu,
            n_core,
            border: None,
        };
        if let Some((c, q, alpha)) = border {
            let mut e = vec![0.0; n_core];
            e[q] = 1.0;
            let x = solver.core_solve(&[e, c.clone()]);
            solver.border = Some(Border {
                c,
                q,
                alpha,
                xe: x[0].clone(),
                xc: x[1].clone(),
            });
        }
        Ok(solver)
    }

    fn core_solve(&self, cols: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let mut rhs = Mat::<f64>::from_fn(self.n_core, cols.len(), |i, j| cols[j][i]);
        self.lu.solve_in_place(rhs.as_mut());
        (0..cols.len())
            .map(|j| (0..self.n_core).map(|i| rhs[(i, j)]).collect())
            .collect()
    }

    /// Solves for several right-hand sides of the full (bordered) size.
    fn solve(&self, cols: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let core: Vec<Vec<f64>> = cols.iter().map(|c| c[..self.n_core].to_vec()).collect();
        let mut xs = self.core_solve(&core);
        let Some(b) = &self.border else {
            return xs;
        };
        let dot = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(a, c)| a * c).sum::<f64>();
        // K0 = K1 - alpha e e^T; x = x_b + alpha s x_e - mu x_c with s = e^T x
        let m = [
            [b.alpha * b.xe[b.q] - 1.0, -b.xc[b.q]],
            [b.alpha * dot(&b.c, &b.xe), -dot(&b.c, &b.xc)],
        ];
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        for (x, col) in xs.iter_mut().zip(cols) {
            let beta = col[self.n_core];
            let r = [-x[b.q], beta - dot(&b.c, x)];
            let s = (r[0] * m[1][1] - m[0][1] * r[1]) / det;
            let mu = (m[0][0] * r[1] - m[1][0] * r[0]) / det;
            for i in 0..self.n_core {
                x[i] += b.alpha * s * b.xe[i] - mu * b.xc[i];
            }
            x.push(mu);
        }
        xs
    }
}

/// `x -> (L - sigma R)^{-1} R x`.
struct ShiftInvert<'a> {
    system: &'a SystemMatrices,
    solver: PencilSolver,
    n: usize,
    applications: usize,
}

impl<'a> ShiftInvert<'a> {
    fn new(system: &'a SystemMatrices, sigma: f64, seed: u64) -> Result<Self, EigenError> {
        let solver = PencilSolver::new(system, sigma)?;
        let op = Self {
            system,
            solver,
            n: system.dim(),
            applications: 0,
        };
        // a numerically singular factorization shows up as a poor solve
        let k = system.shifted(sigma);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
        let b: Vec<f64> = (0..op.n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = op.solver.solve(std::slice::from_ref(&b)).remove(0);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(EigenError::Factorization { shift: sigma });
        }
        let kx = k.matvec(&x);
        let err = kx.iter().zip(&b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        if err > 1e-6 * nb {
            return Err(EigenError::Factorization { shift: sigma });
        }
        Ok(op)
    }

    fn apply(&mut self, x: &[Complex64]) -> Vec<Complex64> {
        self.applications += 1;
        let re: Vec<f64> = x.iter().map(|z| z.re).collect();
        let im: Vec<f64> = x.iter().map(|z| z.im).collect();
        let rhs = [self.system.apply_rhs(&re), self.system.apply_rhs(&im)];
        let sol = self.solver.solve(&rhs);
        (0..self.n)
            .map(|i| Complex64::new(sol[0][i], sol[1][i]))
            .collect()
    }
}

fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.par_iter()
        .zip(b.par_iter())
        .map(|(x, y)| x.conj() * y)
        .reduce(|| ZERO, |p, q| p + q)
}

fn norm(a: &[Complex64]) -> f64 {
    a.par_iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// `sum_j basis[j] * coef[j]`
fn combine(basis: &[Vec<Complex64>], coef: &[Complex64]) -> Vec<Complex64> {
    let n = basis[0].len();
    let mut out = vec![ZERO; n];
    out.par_chunks_mut(4096).enumerate().for_each(|(chunk, o)| {
        let start = chunk * 4096;
        for (j, &c) in coef.iter().enumerate() {
            if c == ZERO {
                continue;
            }
            for (i, oi) in o.iter_mut().enumerate() {
                *oi += basis[j][start + i] * c;
            }
        }
    });
    out
}

/// Orthogonalizes `w` against `basis` with two passes of classical
/// Gram-Schmidt; returns the accumulated coefficients.
fn orthogonalize(basis: &[Vec<Complex64>], w: &mut [Complex64]) -> Vec<Complex64> {
    let mut h = vec![ZERO; basis.len()];
    for _ in 0..2 {
        let c: Vec<Complex64> = basis.par_iter().map(|v| dot(v, w)).collect();
        let proj = combine(basis, &c);
        w.par_iter_mut().zip(proj.par_iter()).for_each(|(a, b)| *a -= b);
        for (hi, ci) in h.iter_mut().zip(c) {
            *hi += ci;
        }
    }
    h
}

/// Krylov decomposition `T V_k = V_k H_k + v_{k} h^T`, where `v[k]` is the
/// residual direction and `h` the last row of `h`.
struct Decomposition {
    v: Vec<Vec<Complex64>>,
    /// `(m + 1) x m`, row-major
    h: Vec<Vec<Complex64>>,
    k: usize,
}

struct Ritz {
    theta: Complex64,
    y: Vec<Complex64>,
    estimate: f64,
}

fn ritz_pairs(h: &[Vec<Complex64>], k: usize) -> Result<Vec<Ritz>, EigenError> {
    let hm = Mat::<Complex64>::from_fn(k, k, |i, j| h[i][j]);
    let evd = hm
        .eigen()
        .map_err(|e| EigenError::Decomposition(format!("{e:?}")))?;
    let s = evd.S();
    let u = evd.U();
    Ok((0..k)
        .map(|i| {
            let mut y: Vec<Complex64> = (0..k).map(|r| u[(r, i)]).collect();
            let ny = y.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            y.iter_mut().for_each(|z| *z /= ny);
            let estimate = h[k].iter().zip(&y).map(|(a, b)| a * b).sum::<Complex64>().norm();
            Ritz {
                theta: s[i],
                y,
                estimate,
            }
        })
        .collect())
}

/// Orthonormal basis of the columns of `y` (modified Gram-Schmidt), dropping
/// columns that are numerically dependent on earlier ones.
fn small_orthonormal(cols: Vec<Vec<Complex64>>) -> Vec<Vec<Complex64>> {
    let mut q: Vec<Vec<Complex64>> = Vec::with_capacity(cols.len());
    for mut c in cols {
        for _ in 0..2 {
            for qi in &q {
                let d: Complex64 = qi.iter().zip(&c).map(|(a, b)| a.conj() * b).sum();
                c.iter_mut().zip(qi).for_each(|(a, b)| *a -= d * b);
            }
        }
        let n = c.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if n > 1e-8 {
            c.iter_mut().for_each(|z| *z /= n);
            q.push(c);
        }
    }
    q
}

impl Decomposition {
    fn new(start: Vec<Complex64>, m: usize) -> Self {
        Self {
            v: vec![start],
            h: vec![vec![ZERO; m]; m + 1],
            k: 0,
        }
    }

    /// Extends the decomposition to size `m`. Returns false on breakdown,
    /// in which case `k` is the dimension of the invariant subspace found.
    fn expand(&mut self, op: &mut ShiftInvert<'_>, m: usize) -> bool {
        while self.k < m {
            let j = self.k;
            let mut w = op.apply(&self.v[j]);
            let scale = norm(&w);
            let coef = orthogonalize(&self.v, &mut w);
            for (i, c) in coef.into_iter().enumerate() {
                self.h[i][j] += c;
            }
            let beta = norm(&w);
            self.k += 1;
            if beta <= 1e-12 * scale.max(f64::MIN_POSITIVE) {
                // invariant subspace: drop the residual direction
                self.v.truncate(self.k);
                self.h[self.k].iter_mut().for_each(|z| *z = ZERO);
                return false;
            }
            self.h[j + 1][j] = Complex64::new(beta, 0.0);
            w.iter_mut().for_each(|z| *z /= beta);
            if self.v.len() == self.k {
                self.v.push(w);
            } else {
                self.v[self.k] = w;
            }
        }
        true
    }

    /// Contracts onto the span of the given Ritz vectors.
    fn restart(&mut self, keep: Vec<Vec<Complex64>>) {
        let k = self.k;
        let q = small_orthonormal(keep);
        let p = q.len();
        let mut v_new: Vec<Vec<Complex64>> = q.iter().map(|qi| combine(&self.v[..k], qi)).collect();
        v_new.push(std::mem::take(&mut self.v[k]));
        let m = self.h[0].len();
        let mut h_new = vec![vec![ZERO; m]; m + 1];
        // H_new = Q^H H Q, last row = h_k Q
        let hq: Vec<Vec<Complex64>> = q
            .iter()
            .map(|qj| {
                (0..k)
                    .map(|r| (0..k).map(|c| self.h[r][c] * qj[c]).sum())
                    .collect()
            })
            .collect();
        for i in 0..p {
            for j in 0..p {
                h_new[i][j] = q[i].iter().zip(&hq[j]).map(|(a, b)| a.conj() * b).sum();
            }
        }
        for j in 0..p {
            h_new[p][j] = (0..k).map(|c| self.h[k][c] * q[j][c]).sum();
        }
        self.v = v_new;
        self.h = h_new;
        self.k = p;
    }
}

fn lambda_of(sigma: f64, theta: Complex64) -> Complex64 {
    Complex64::new(sigma, 0.0) + theta.inv()
}

fn solve_at_shift(
    system: &SystemMatrices,
    opts: &SolverOptions,
    sigma: f64,
) -> Result<Spectrum, EigenError> {
    let n = system.dim();
    let mut op = ShiftInvert::new(system, sigma, opts.seed)?;
    let m = opts.subspace_size().min(n);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let raw: Vec<Complex64> = (0..n)
        .map(|_| Complex64::new(rng.random_range(-1.0..1.0), 0.0))
        .collect();
    // one application removes components along the infinite eigenvectors
    let mut start = op.apply(&raw);
    let s = norm(&start);
    if s == 0.0 {
        return Ok(Spectrum {
            pairs: Vec::new(),
            info: SolverInfo {
                method: SolverMethod::ShiftInvert,
                shift: sigma,
                restarts: 0,
                subspace: m,
                operator_applications: op.applications,
                converged: opts.nev == 0,
            },
        });
    }
    start.iter_mut().for_each(|z| *z /= s);

    let mut dec = Decomposition::new(start, m);
    let tol_ritz = 1e-2 * opts.tol_res;
    let mut restarts = 0;
    let (wanted, converged) = loop {
        let full = dec.expand(&mut op, m);
        let k = dec.k;
        let mut ritz: Vec<Ritz> = ritz_pairs(&dec.h, k)?
            .into_iter()
            .filter(|r| r.theta.norm() >= THETA_FLOOR)
            .collect();
        ritz.sort_by(|a, b| b.theta.norm().total_cmp(&a.theta.norm()));
        // smallest prefix containing nev physical candidates
        let mut nwant = 0;
        let mut physical = 0;
        while nwant < ritz.len() && physical < opts.nev && nwant < m.saturating_sub(2).max(1) {
            let l = lambda_of(sigma, ritz[nwant].theta);
            if classify(l, opts.tol_imag, opts.tol_pos) == Classification::Physical {
                physical += 1;
            }
            nwant += 1;
        }
        let done = ritz[..nwant]
            .iter()
            .all(|r| r.estimate <= tol_ritz * r.theta.norm());
        debug!(
            "restart {restarts}: k={k}, wanted {nwant}, converged {}",
            ritz[..nwant]
                .iter()
                .filter(|r| r.estimate <= tol_ritz * r.theta.norm())
                .count()
        );
        if done || !full || restarts >= opts.max_restarts {
            if !done && full {
                warn!("shift-invert Arnoldi stopped after {restarts} restarts without convergence");
            }
            // invariant subspace: every Ritz pair is exact
            let take = if full { nwant } else { ritz.len() };
            ritz.truncate(take);
            break (ritz, done || !full);
        }
        let keep_n = (nwant + (m - nwant) / 2).clamp(1, m - 1);
        let keep: Vec<Vec<Complex64>> = ritz.iter().take(keep_n).map(|r| r.y.clone()).collect();
        dec.restart(keep);
        restarts += 1;
    };

    let lhs = system.lhs();
    let k = dec.k;
    let mut pairs = Vec::with_capacity(wanted.len());
    let mut failed = 0;
    for r in &wanted {
        let x = combine(&dec.v[..k], &r.y);
        let mut x = op.apply(&x);
        let nx = norm(&x);
        x.iter_mut().for_each(|z| *z /= nx);
        let lambda = lambda_of(sigma, r.theta);
        match finish_pair(system, &lhs, &x, lambda, opts) {
            Ok(p) if p.residual <= opts.tol_res => pairs.push(p),
            Ok(p) => {
                debug!("dropping pair {} with residual {:.2e}", p.lambda, p.residual);
                failed += 1;
            }
            Err(EigenError::ZeroVelocity) => failed += 1,
            Err(e) => return Err(e),
        }
    }
    sort_pairs(&mut pairs);
    let physical = pairs.iter().filter(|p| p.is_physical()).count();
    if failed > 0 || physical < opts.nev {
        warn!("shift-invert solve returned {physical} of {} physical pairs", opts.nev);
    }
    Ok(Spectrum {
        pairs,
        info: SolverInfo {
            method: SolverMethod::ShiftInvert,
            shift: sigma,
            restarts,
            subspace: m,
            operator_applications: op.applications,
            converged: converged && physical >= opts.nev,
        },
    })
}

/// Eigenpairs of `L x = lambda R x` nearest the shift, via restarted
/// Arnoldi on `(L - sigma R)^{-1} R`.
///
/// If the factorization at `sigma` fails the shift is perturbed and the
/// solve retried twice; the error reports the last shift tried.
pub fn shift_invert_solve(
    system: &SystemMatrices,
    opts: &SolverOptions,
) -> Result<Spectrum, EigenError> {
    if opts.nev == 0 {
        return Err(EigenError::InvalidRequest("nev must be at least 1".into()));
    }
    if system.n_velocity() == 0 {
        return Err(EigenError::InvalidRequest("system has no velocity unknowns".into()));
    }
    let mut sigma = opts.sigma;
    let mut last = None;
    for attempt in 0..3 {
        match solve_at_shift(system, opts, sigma) {
            Err(EigenError::Factorization { shift }) => {
                warn!("factorization failed at sigma = {shift}; perturbing the shift");
                last = Some(shift);
                sigma = opts.sigma + 1e-3 * opts.sigma.abs().max(1.0) * (attempt as f64 + 1.0) * 1.618;
            }
            other => return other,
        }
    }
    Err(EigenError::Factorization {
        shift: last.unwrap_or(sigma),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{CooMatrix, CsrMatrix};

    fn system(a: &[(usize, usize, f64)], m: &[(usize, usize, f64)], nu: usize, np: usize) -> SystemMatrices {
        let mut ca = CooMatrix::new(nu, nu);
        for &(r, c, v) in a {
            ca.push(r, c, v);
        }
        let mut cm = CooMatrix::new(nu, nu);
        for &(r, c, v) in m {
            cm.push(r, c, v);
        }
        SystemMatrices {
            a: ca.to_csr(),
            b: CsrMatrix::zeros(np, nu),
            m: cm.to_csr(),
            mean: None,
        }
    }

    #[test]
    fn diagonal_pencil_with_infinite_mode() {
        // L = diag(2, 3), R = diag(1, 0)
        let mut a = CooMatrix::new(2, 2);
        a.push(0, 0, 2.0);
        a.push(1, 1, 3.0);
        let mut m = CooMatrix::new(2, 2);
        m.push(0, 0, 1.0);
        let sys = SystemMatrices {
            a: a.to_csr(),
            b: CsrMatrix::zeros(0, 2),
            m: m.to_csr(),
            mean: None,
        };
        let opts = SolverOptions {
            sigma: 0.0,
            nev: 1,
            ..SolverOptions::default()
        };
        let s = shift_invert_solve(&sys, &opts).unwrap();
        assert_eq!(s.pairs.len(), 1);
        assert!((s.pairs[0].lambda - Complex64::new(2.0, 0.0)).norm() < 1e-12);
        assert!(s.pairs[0].u[1].norm() < 1e-12);
        assert!((s.pairs[0].u[0].re - 1.0).abs() < 1e-12);
    }

    #[test]
    fn symmetric_two_by_two() {
        let sys = system(
            &[(0, 0, 2.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 2.0)],
            &[(0, 0, 1.0), (1, 1, 1.0)],
            2,
            0,
        );
        let opts = SolverOptions {
            sigma: 0.0,
            nev: 2,
            ..SolverOptions::default()
        };
        let s = shift_invert_solve(&sys, &opts).unwrap();
        let l = s.lowest_physical(2);
        assert!((l[0] - 1.0).abs() < 1e-12 && (l[1] - 3.0).abs() < 1e-12, "{l:?}");
        assert!(s.info.converged);
    }

    #[test]
    fn singular_shift_is_perturbed() {
        let sys = system(&[(0, 0, 2.0), (1, 1, 5.0)], &[(0, 0, 1.0), (1, 1, 1.0)], 2, 0);
        let opts = SolverOptions {
            sigma: 2.0,
            nev: 2,
            ..SolverOptions::default()
        };
        let s = shift_invert_solve(&sys, &opts).unwrap();
        assert!(s.info.shift != 2.0);
        let l = s.lowest_physical(2);
        assert!((l[0] - 2.0).abs() < 1e-10 && (l[1] - 5.0).abs() < 1e-10, "{l:?}");
    }

    #[test]
    fn bad_requests() {
        let sys = system(&[(0, 0, 1.0)], &[(0, 0, 1.0)], 1, 0);
        let opts = SolverOptions {
            nev: 0,
            ..SolverOptions::default()
        };
        assert!(matches!(
            shift_invert_solve(&sys, &opts),
            Err(EigenError::InvalidRequest(_))
        ));
    }
}
