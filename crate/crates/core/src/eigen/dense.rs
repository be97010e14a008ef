use faer::diag::Diag;
use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::evd::ComputeEigenvectors;
use faer::linalg::gevd::{gevd_real, gevd_scratch, GevdParams};
use faer::{Auto, Mat, Par, Spec};
use num_complex::Complex64;

use crate::assembly::SystemMatrices;

use super::{finish_pair, sort_pairs, EigenError, SolverInfo, SolverMethod, SolverOptions, Spectrum};

/// Full QZ reduction of the pencil. Infinite eigenvalues (`beta ~ 0`, i.e.
/// `|1 / (lambda - sigma)| < 1e-10`) are discarded.
pub fn dense_fallback_solve(
    system: &SystemMatrices,
    opts: &SolverOptions,
) -> Result<Spectrum, EigenError> {
    let n = system.dim();
    if n > opts.dense_cap {
        return Err(EigenError::OverCap {
            dim: n,
            cap: opts.dense_cap,
        });
    }
    let info = SolverInfo {
        method: SolverMethod::Dense,
        shift: opts.sigma,
        restarts: 0,
        subspace: n,
        operator_applications: 0,
        converged: true,
    };
    if n == 0 || system.m.nnz() == 0 {
        return Ok(Spectrum {
            pairs: Vec::new(),
            info,
        });
    }
    let lhs = system.lhs();
    let l = lhs.to_dense();
    let r = system.rhs().to_dense();
    let lm = Mat::<f64>::from_fn(n, n, |i, j| l[i][j]);
    let rm = Mat::<f64>::from_fn(n, n, |i, j| r[i][j]);
    let (s_re, s_im, s_b, u) = real_gevd(lm, rm)?;
    let vectors = complex_eigenvectors(&u, &s_im);

    let mut pairs = Vec::new();
    for i in 0..n {
        let alpha = Complex64::new(s_re[i], s_im[i]);
        let beta = Complex64::new(s_b[i], 0.0);
        if alpha.norm() == 0.0 && beta.norm() == 0.0 {
            return Err(EigenError::Decomposition("singular pencil".into()));
        }
        // theta = beta / (alpha - sigma beta)
        let denom = alpha - beta * opts.sigma;
        if beta.norm() < 1e-10 * denom.norm() {
            continue;
        }
        let lambda: Complex64 = alpha / beta;
        let x = vectors[i].clone();
        let nx = x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let x: Vec<Complex64> = x.into_iter().map(|z| z / nx).collect();
        match finish_pair(system, &lhs, &x, lambda, opts) {
            Ok(p) => pairs.push(p),
            Err(EigenError::ZeroVelocity) => continue,
            Err(e) => return Err(e),
        }
    }
    sort_pairs(&mut pairs);
    Ok(Spectrum { pairs, info })
}

type RealGevd = (Vec<f64>, Vec<f64>, Vec<f64>, Mat<f64>);

/// Real QZ with right eigenvectors. The blocked sweep with aggressive early
/// deflation is disabled: it underflows an index on some of these pencils.
fn real_gevd(mut a: Mat<f64>, mut b: Mat<f64>) -> Result<RealGevd, EigenError> {
    let n = a.nrows();
    let mut params: GevdParams = Auto::<f64>::auto();
    params.schur.blocking_threshold = usize::MAX;
    let params: Spec<GevdParams, f64> = params.into();
    let par = Par::Seq;
    let mut u = Mat::<f64>::zeros(n, n);
    let (mut s_re, mut s_im, mut s_b) = (Diag::<f64>::zeros(n), Diag::<f64>::zeros(n), Diag::<f64>::zeros(n));
    let mut mem = MemBuffer::new(gevd_scratch::<f64>(n, ComputeEigenvectors::No, ComputeEigenvectors::Yes, par, params));
    gevd_real(
        a.as_mut(),
        b.as_mut(),
        s_re.as_mut(),
        s_im.as_mut(),
        s_b.as_mut(),
        None,
        Some(u.as_mut()),
        par,
        MemStack::new(&mut mem),
        params,
    )
    .map_err(|e| EigenError::Decomposition(format!("{e:?}")))?;
    let col = |d: &Diag<f64>| (0..n).map(|i| d[i]).collect::<Vec<f64>>();
    Ok((col(&s_re), col(&s_im), col(&s_b), u))
}

/// Complex eigenvectors from the real storage, where a complex pair
/// occupies two columns `(re, im)`; the second member is the conjugate.
fn complex_eigenvectors(u: &Mat<f64>, s_im: &[f64]) -> Vec<Vec<Complex64>> {
    let n = u.nrows();
    let mut out = Vec::with_capacity(n);
    let mut j = 0;
    while j < n {
        if s_im[j] == 0.0 || j + 1 == n {
            out.push((0..n).map(|r| Complex64::new(u[(r, j)], 0.0)).collect());
            j += 1;
        } else {
            let v: Vec<Complex64> = (0..n).map(|r| Complex64::new(u[(r, j)], u[(r, j + 1)])).collect();
            out.push(v.iter().map(|z| z.conj()).collect());
            out.insert(out.len() - 1, v);
            j += 2;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{assemble_system, CooMatrix, CsrMatrix, PhysicalParams, Variant};
    use crate::eigen::shift_invert_solve;
    use crate::femspace::FeSpaces;
    use crate::mesh::{generate_lshape, generate_unit_square, BoundarySpec, DiagonalPattern, RegionSpec};

    #[test]
    fn diagonal_pencil() {
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
        let s = dense_fallback_solve(&sys, &SolverOptions::default()).unwrap();
        assert_eq!(s.pairs.len(), 1);
        assert!((s.pairs[0].lambda.re - 2.0).abs() < 1e-12);
    }

    #[test]
    fn no_velocity_mass_gives_empty_spectrum() {
        let mut a = CooMatrix::new(2, 2);
        a.push(0, 0, 1.0);
        a.push(1, 1, 1.0);
        let sys = SystemMatrices {
            a: a.to_csr(),
            b: CsrMatrix::zeros(0, 2),
            m: CsrMatrix::zeros(2, 2),
            mean: None,
        };
        let s = dense_fallback_solve(&sys, &SolverOptions::default()).unwrap();
        assert!(s.physical().next().is_none());
    }

    #[test]
    fn cap_is_enforced() {
        let mesh = generate_unit_square(4, DiagonalPattern::Right).unwrap();
        let s = FeSpaces::new(&mesh, 2).unwrap();
        let p = PhysicalParams::new(1.0, vec![0.0; 32], 10.0, 2, Variant::Symmetric).unwrap();
        let sys = assemble_system(&mesh, &s, &p).unwrap();
        let opts = SolverOptions {
            dense_cap: 100,
            ..SolverOptions::default()
        };
        assert!(matches!(
            dense_fallback_solve(&sys, &opts),
            Err(EigenError::OverCap { .. })
        ));
    }

    fn small_system(variant: Variant, lshape: bool) -> SystemMatrices {
        let mesh = if lshape {
            generate_lshape(
                4,
                &RegionSpec::chessboard(2, 1e2),
                &BoundarySpec::lshape_default(),
            )
            .unwrap()
        } else {
            generate_unit_square(4, DiagonalPattern::Right).unwrap()
        };
        let s = FeSpaces::new(&mesh, 2).unwrap();
        let kappa = if lshape {
            RegionSpec::chessboard(2, 1e2).kappa_per_element(&mesh)
        } else {
            vec![0.0; mesh.num_elements()]
        };
        let p = PhysicalParams::new(1.0, kappa, 10.0, 2, variant).unwrap();
        assemble_system(&mesh, &s, &p).unwrap()
    }

    #[test]
    fn krylov_agrees_with_qz() {
        for lshape in [false, true] {
            for variant in Variant::ALL {
                let sys = small_system(variant, lshape);
                let opts = SolverOptions::with_nev(6);
                let dense = dense_fallback_solve(&sys, &opts).unwrap();
                let krylov = shift_invert_solve(&sys, &opts).unwrap();
                assert!(krylov.info.converged);
                let d = dense.lowest_physical(6);
                let k = krylov.lowest_physical(6);
                assert_eq!(d.len(), 6);
                for (a, b) in d.iter().zip(&k) {
                    assert!((a - b).abs() <= 1e-8 * a.abs(), "{variant:?} {lshape}: {d:?} vs {k:?}");
                }
                for p in krylov.physical() {
                    assert!(p.residual <= 1e-8);
                    let m = sys.m.bilinear(&p.u_real(), &p.u_real())
                        + sys.m.bilinear(
                            &p.u.iter().map(|z| z.im).collect::<Vec<_>>(),
                            &p.u.iter().map(|z| z.im).collect::<Vec<_>>(),
                        );
                    assert!((m - 1.0).abs() < 1e-12);
                }
                if variant == Variant::Symmetric {
                    for p in dense.physical() {
                        assert!(p.lambda.im.abs() <= 1e-10 * p.lambda.re.abs());
                    }
                }
            }
        }
    }

    #[test]
    fn shift_invariance() {
        let sys = small_system(Variant::Symmetric, false);
        let a = shift_invert_solve(&sys, &SolverOptions::with_nev(5)).unwrap();
        let b = shift_invert_solve(
            &sys,
            &SolverOptions {
                sigma: 7.5,
                ..SolverOptions::with_nev(5)
            },
        )
        .unwrap();
        let (la, lb) = (a.lowest_physical(5), b.lowest_physical(5));
        assert!(la[0] > 7.5);
        for (x, y) in la.iter().zip(&lb) {
            assert!((x - y).abs() <= 1e-8 * x);
        }
    }
}
