//! Bulk (Dörfler) marking, the solve-estimate-mark-refine loop and the
//! least-squares fits used to report convergence rates.

use std::io::Write;
use std::path::PathBuf;

use log::{info, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembly::{assemble_system, AssemblyError, PhysicalParams, Variant};
use crate::eigen::{shift_invert_solve, EigenError, EigenPair, SolverOptions};
use crate::estimator::{compute_eta, effectivity, EstimatorError};
use crate::femspace::{FeSpaces, SpaceError};
use crate::mesh::{refine, write_mesh, Mesh, MeshError, Point, RegionSpec};

#[derive(Debug, Error)]
pub enum AdaptError {
    #[error("marking fraction must lie in (0, 1), got {0}")]
    InvalidFraction(f64),
    #[error("indicator {0} is negative or not finite")]
    InvalidIndicator(usize),
    #[error("all indicators vanish; nothing to mark")]
    NothingToMark,
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("samples must be positive and finite")]
    InvalidSample,
    #[error("no physical eigenvalue with index {0}")]
    MissingEigenvalue(usize),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Eigen(#[from] EigenError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Smallest set whose squared indicators carry at least `zeta` of the total,
/// taken greedily by descending indicator (ties by ascending element id).
/// The result is sorted by element id.
pub fn dorfler_mark(eta_sq: &[f64], zeta: f64) -> Result<Vec<usize>, AdaptError> {
    if !(zeta > 0.0 && zeta < 1.0) {
        return Err(AdaptError::InvalidFraction(zeta));
    }
    if let Some(i) = eta_sq.iter().position(|v| !(*v >= 0.0 && v.is_finite())) {
        return Err(AdaptError::InvalidIndicator(i));
    }
    let total: f64 = eta_sq.iter().sum();
    if total == 0.0 {
        return Err(AdaptError::NothingToMark);
    }
    let mut order: Vec<usize> = (0..eta_sq.len()).collect();
    order.sort_by(|&a, &b| eta_sq[b].total_cmp(&eta_sq[a]).then(a.cmp(&b)));
    let target = zeta * total;
    let mut acc = 0.0;
    let mut marked = Vec::new();
    for e in order {
        marked.push(e);
        acc += eta_sq[e];
        if acc >= target {
            break;
        }
    }
    marked.sort_unstable();
    Ok(marked)
}

/// Least-squares slope of `log(err)` against `log(dof)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub dof_slope: f64,
    /// `-2 * dof_slope`, the rate in terms of `h ~ dof^{-1/2}`.
    pub h_rate: f64,
}

pub fn fit_rate(errors: &[f64], dofs: &[f64]) -> Result<RateFit, AdaptError> {
    check_samples(errors, dofs, 3)?;
    if errors.iter().chain(dofs).any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(AdaptError::InvalidSample);
    }
    let x: Vec<f64> = dofs.iter().map(|d| d.ln()).collect();
    let y: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let (slope, _) = linear_fit(&x, &y);
    Ok(RateFit {
        dof_slope: slope,
        h_rate: -2.0 * slope,
    })
}

fn check_samples(a: &[f64], b: &[f64], needed: usize) -> Result<(), AdaptError> {
    let got = a.len().min(b.len());
    if a.len() != b.len() || got < needed {
        return Err(AdaptError::TooFewSamples { needed, got });
    }
    Ok(())
}

/// Ordinary least squares `y = slope x + intercept`.
fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let slope = if sxx == 0.0 { 0.0 } else { sxy / sxx };
    (slope, my - slope * mx)
}

/// Result of fitting `lambda_h = lambda + C dof^{-t}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extrapolation {
    pub lambda: f64,
    pub c: f64,
    pub t: f64,
    /// Root-mean-square misfit of the samples.
    pub rms: f64,
    /// False when the fit failed and `lambda` is the finest sample instead.
    pub converged: bool,
}

const T_MIN: f64 = 1e-2;
const T_MAX: f64 = 12.0;

/// Fits `lambda_h = lambda + C dof^{-t}` (with `t > 0`) by least squares. For
/// fixed `t` the model is linear in `(lambda, C)`; `t` is found by a scan in
/// `log t` followed by golden-section search on the residual norm.
pub fn extrapolate_reference(lambdas: &[f64], dofs: &[f64]) -> Result<Extrapolation, AdaptError> {
    check_samples(lambdas, dofs, 3)?;
    if dofs.iter().any(|d| !(*d > 0.0 && d.is_finite())) || lambdas.iter().any(|l| !l.is_finite()) {
        return Err(AdaptError::InvalidSample);
    }
    let finest = dofs
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let dmax = dofs[finest];
    // returns (lambda, C scaled to dof/dmax, residual norm)
    let fit = |t: f64| {
        let x: Vec<f64> = dofs.iter().map(|d| (d / dmax).powf(-t)).collect();
        let (c, lambda) = linear_fit(&x, lambdas);
        let res = x
            .iter()
            .zip(lambdas)
            .map(|(xi, l)| (lambda + c * xi - l).powi(2))
            .sum::<f64>()
            .sqrt();
        (lambda, c, res)
    };
    let scan = 240;
    let ts: Vec<f64> = (0..=scan)
        .map(|i| (T_MIN.ln() + (T_MAX / T_MIN).ln() * i as f64 / scan as f64).exp())
        .collect();
    let best = (0..ts.len())
        .min_by(|&a, &b| fit(ts[a]).2.total_cmp(&fit(ts[b]).2))
        .unwrap_or(0);
    let fallback = Extrapolation {
        lambda: lambdas[finest],
        c: 0.0,
        t: 0.0,
        rms: f64::NAN,
        converged: false,
    };
    if best == 0 || best == ts.len() - 1 {
        warn!("extrapolation did not find an interior decay rate; using the finest value");
        return Ok(fallback);
    }
    let (mut lo, mut hi) = (ts[best - 1].ln(), ts[best + 1].ln());
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let f = |s: f64| fit(s.exp()).2;
    let (mut a, mut b) = (hi - g * (hi - lo), lo + g * (hi - lo));
    let (mut fa, mut fb) = (f(a), f(b));
    for _ in 0..200 {
        if hi - lo < 1e-15 {
            break;
        }
        if fa < fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - g * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + g * (hi - lo);
            fb = f(b);
        }
    }
    let t = (0.5 * (lo + hi)).exp();
    let (lambda, c, res) = fit(t);
    if !(lambda.is_finite() && c.is_finite()) {
        warn!("extrapolation produced a non-finite fit; using the finest value");
        return Ok(fallback);
    }
    Ok(Extrapolation {
        lambda,
        c: c * dmax.powf(t),
        t,
        rms: res / (lambdas.len() as f64).sqrt(),
        converged: true,
    })
}

/// Settings of an adaptive run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdaptConfig {
    pub nu: f64,
    pub a: f64,
    pub degree: usize,
    pub variant: Variant,
    /// Zero-based index of the tracked physical eigenvalue.
    pub target: usize,
    pub zeta: f64,
    pub max_iterations: usize,
    pub dof_budget: usize,
    pub solver: SolverOptions,
    /// Reference eigenvalue for error and effectivity columns.
    pub lambda_ref: Option<f64>,
    /// Directory receiving `mesh_<iter>.txt` for every iteration.
    pub mesh_export: Option<PathBuf>,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            nu: 1.0,
            a: 10.0,
            degree: 1,
            variant: Variant::Symmetric,
            target: 0,
            zeta: 0.6,
            max_iterations: 15,
            dof_budget: 300_000,
            solver: SolverOptions::default(),
            lambda_ref: None,
            mesh_export: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveRecord {
    pub iter: usize,
    pub dof: usize,
    pub elements: usize,
    pub min_angle: f64,
    pub lambda_h: f64,
    pub eta: f64,
    pub err: Option<f64>,
    pub eff: Option<f64>,
    /// Barycenters of the elements marked in this iteration.
    pub marked: Vec<Point>,
}

#[derive(Debug, Clone)]
pub struct AdaptiveRun {
    pub records: Vec<AdaptiveRecord>,
    pub final_mesh: Mesh,
    /// Set when the loop stopped early on a failure.
    pub failure: Option<String>,
}

impl AdaptiveRun {
    /// Recomputes the error and effectivity columns against `lambda_ref`.
    pub fn apply_reference(&mut self, lambda_ref: f64) {
        for r in &mut self.records {
            r.err = Some((r.lambda_h - lambda_ref).abs());
            r.eff = Some(effectivity(lambda_ref, r.lambda_h, r.eta));
        }
    }

    pub fn dofs(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.dof as f64).collect()
    }

    pub fn lambdas(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.lambda_h).collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.12e}"));
        writeln!(w, "iter,dof,elements,lambda_h,eta,err,eff")?;
        for r in &self.records {
            writeln!(
                w,
                "{},{},{},{:.12e},{:.12e},{},{}",
                r.iter,
                r.dof,
                r.elements,
                r.lambda_h,
                r.eta,
                opt(r.err),
                opt(r.eff)
            )?;
        }
        Ok(())
    }
}

/// Picks the tracked pair: the `target`-th physical pair on the first mesh,
/// afterwards the physical pair closest to the previous eigenvalue among the
/// first `target + 3`.
fn select_pair(pairs: &[&EigenPair], target: usize, previous: Option<f64>) -> Option<usize> {
    match previous {
        None => (target < pairs.len()).then_some(target),
        Some(prev) => pairs
            .iter()
            .take(target + 3)
            .enumerate()
            .min_by(|a, b| {
                (a.1.lambda.re - prev)
                    .abs()
                    .total_cmp(&(b.1.lambda.re - prev).abs())
            })
            .map(|(i, _)| i),
    }
}

/// Runs solve, estimate, mark and refine from `mesh` until the iteration or
/// dof limit is reached. A failing solve ends the loop and is reported in
/// [`AdaptiveRun::failure`] together with the records gathered so far.
pub fn adaptive_loop(
    mesh: Mesh,
    regions: &RegionSpec,
    config: &AdaptConfig,
) -> Result<AdaptiveRun, AdaptError> {
    if !(config.zeta > 0.0 && config.zeta < 1.0) {
        return Err(AdaptError::InvalidFraction(config.zeta));
    }
    if let Some(dir) = &config.mesh_export {
        std::fs::create_dir_all(dir)?;
    }
    let mut run = AdaptiveRun {
        records: Vec::new(),
        final_mesh: mesh,
        failure: None,
    };
    let mut previous = None;
    for iter in 0..config.max_iterations {
        let mesh = &run.final_mesh;
        let spaces = FeSpaces::new(mesh, config.degree)?;
        let dof = spaces.n_dofs();
        if iter > 0 && dof > config.dof_budget {
            break;
        }
        let params =
            PhysicalParams::from_regions(mesh, regions, config.nu, config.a, config.degree, config.variant)?;
        let system = assemble_system(mesh, &spaces, &params)?;
        let opts = SolverOptions {
            nev: config.solver.nev.max(config.target + 3),
            ..config.solver.clone()
        };
        let spectrum = match shift_invert_solve(&system, &opts) {
            Ok(s) => s,
            Err(e) => {
                warn!("adaptive loop stopped at iteration {iter}: {e}");
                run.failure = Some(e.to_string());
                break;
            }
        };
        let physical: Vec<&EigenPair> = spectrum.physical().collect();
        let Some(idx) = select_pair(&physical, config.target, previous) else {
            let e = AdaptError::MissingEigenvalue(config.target);
            warn!("adaptive loop stopped at iteration {iter}: {e}");
            run.failure = Some(e.to_string());
            break;
        };
        let pair = physical[idx];
        let lambda_h = pair.lambda.re;
        previous = Some(lambda_h);
        let field = compute_eta(mesh, &spaces, &params, pair)?;
        if let Some(dir) = &config.mesh_export {
            let file = std::fs::File::create(dir.join(format!("mesh_{iter}.txt")))?;
            write_mesh(mesh, std::io::BufWriter::new(file))?;
        }
        info!(
            "iter {iter}: dof {dof}, lambda_h {lambda_h:.10}, eta {:.4e}",
            field.eta
        );
        let last = iter + 1 == config.max_iterations;
        let marked = if last {
            Vec::new()
        } else {
            dorfler_mark(&field.eta_sq(), config.zeta)?
        };
        run.records.push(AdaptiveRecord {
            iter,
            dof,
            elements: mesh.num_elements(),
            min_angle: mesh.mesh_min_angle(),
            lambda_h,
            eta: field.eta,
            err: config.lambda_ref.map(|r| (lambda_h - r).abs()),
            eff: config.lambda_ref.map(|r| effectivity(r, lambda_h, field.eta)),
            marked: marked.iter().map(|&e| mesh.barycenter(e)).collect(),
        });
        if last {
            break;
        }
        run.final_mesh = refine(mesh, &marked)?;
    }
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{generate_lshape, generate_unit_square, BoundarySpec, DiagonalPattern};
    use proptest::prelude::*;

    #[test]
    fn marking_examples() {
        assert_eq!(dorfler_mark(&[4.0, 1.0, 1.0, 1.0, 1.0], 0.6).unwrap(), vec![0, 1]);
        assert_eq!(dorfler_mark(&[1.0, 100.0, 1.0], 0.01).unwrap(), vec![1]);
        assert_eq!(dorfler_mark(&[1.0; 4], 0.6).unwrap(), vec![0, 1, 2]);
        assert!(matches!(dorfler_mark(&[0.0; 3], 0.5), Err(AdaptError::NothingToMark)));
        assert!(matches!(dorfler_mark(&[1.0], 1.0), Err(AdaptError::InvalidFraction(_))));
        assert!(matches!(dorfler_mark(&[1.0, -1.0], 0.5), Err(AdaptError::InvalidIndicator(1))));
    }

    #[test]
    fn rate_examples() {
        let h = [1.0, 0.5, 0.25];
        let dofs: Vec<f64> = h.iter().map(|h: &f64| h.powi(-2)).collect();
        let r = fit_rate(&[1e-2, 2.5e-3, 6.25e-4], &dofs).unwrap();
        assert!((r.h_rate - 2.0).abs() < 1e-12);
        assert!(fit_rate(&[3.0; 3], &dofs).unwrap().h_rate.abs() < 1e-12);
        assert!(fit_rate(&[1.0, 2.0], &[1.0, 2.0]).is_err());
        assert!(fit_rate(&[1.0, 0.0, 2.0], &dofs).is_err());
    }

    #[test]
    fn noisy_quadratic_rate() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let dofs: Vec<f64> = (0..6).map(|i| 100.0 * 4f64.powi(i)).collect();
        let errs: Vec<f64> = dofs
            .iter()
            .map(|d| (1.0 / d) * (1.0 + rng.random_range(-0.05..0.05)))
            .collect();
        let r = fit_rate(&errs, &dofs).unwrap();
        assert!((r.h_rate - 2.0).abs() < 0.15);
    }

    #[test]
    fn extrapolation_recovers_model() {
        let dofs = [500.0, 2000.0, 8000.0, 32000.0];
        let l: Vec<f64> = dofs.iter().map(|d| 52.3447 + 80.0 / d).collect();
        let e = extrapolate_reference(&l, &dofs).unwrap();
        assert!(e.converged);
        assert!((e.lambda - 52.3447).abs() < 1e-10, "{e:?}");
        assert!((e.t - 1.0).abs() < 1e-6);
        let l2: Vec<f64> = dofs.iter().map(|d| 10.0 - 3.0 * d.powf(-1.7)).collect();
        let e2 = extrapolate_reference(&l2[..3], &dofs[..3]).unwrap();
        assert!((e2.lambda - 10.0).abs() < 1e-10, "{e2:?}");
        assert!(extrapolate_reference(&l[..2], &dofs[..2]).is_err());
    }

    #[test]
    fn extrapolation_falls_back_on_flat_data() {
        let e = extrapolate_reference(&[2.0, 1.0, 2.0], &[10.0, 20.0, 40.0]).unwrap();
        assert!(!e.converged);
        assert_eq!(e.lambda, 2.0);
    }

    #[test]
    fn tracking_prefers_continuity() {
        use crate::eigen::Classification;
        use num_complex::Complex64;
        let mk = |l: f64| EigenPair {
            lambda: Complex64::new(l, 0.0),
            u: vec![],
            p: vec![],
            residual: 0.0,
            class: Classification::Physical,
        };
        let pairs = [mk(1.0), mk(2.0), mk(2.1), mk(5.0)];
        let refs: Vec<&EigenPair> = pairs.iter().collect();
        assert_eq!(select_pair(&refs, 1, None), Some(1));
        assert_eq!(select_pair(&refs, 1, Some(2.08)), Some(2));
        assert_eq!(select_pair(&refs, 7, None), None);
    }

    fn small_config() -> AdaptConfig {
        AdaptConfig {
            max_iterations: 4,
            solver: SolverOptions::with_nev(2),
            ..AdaptConfig::default()
        }
    }

    #[test]
    fn loop_is_deterministic_and_monotone() {
        let regions = RegionSpec::chessboard(2, 1e2);
        let mesh = generate_lshape(2, &regions, &BoundarySpec::lshape_default()).unwrap();
        let a = adaptive_loop(mesh.clone(), &regions, &small_config()).unwrap();
        let b = adaptive_loop(mesh, &regions, &small_config()).unwrap();
        assert_eq!(a.records, b.records);
        assert!(a.failure.is_none());
        assert_eq!(a.records.len(), 4);
        for w in a.records.windows(2) {
            assert!(w[1].dof > w[0].dof);
        }
        assert!(a.records.last().unwrap().marked.is_empty());
        let mut buf = Vec::new();
        a.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert!(text.lines().nth(1).unwrap().ends_with(",,"));
    }

    #[test]
    fn dof_budget_stops_loop() {
        let mesh = generate_unit_square(2, DiagonalPattern::Right).unwrap();
        let cfg = AdaptConfig {
            dof_budget: 200,
            ..small_config()
        };
        let run = adaptive_loop(mesh, &RegionSpec::default(), &cfg).unwrap();
        assert!(!run.records.is_empty());
        assert!(run.records.iter().skip(1).all(|r| r.dof <= 200));
    }

    #[test]
    fn mesh_export_writes_files() {
        let dir = tempfile::tempdir().unwrap();
        let mesh = generate_unit_square(2, DiagonalPattern::Right).unwrap();
        let cfg = AdaptConfig {
            max_iterations: 2,
            mesh_export: Some(dir.path().to_path_buf()),
            lambda_ref: Some(52.3447),
            ..small_config()
        };
        let run = adaptive_loop(mesh, &RegionSpec::default(), &cfg).unwrap();
        assert!(run.records.iter().all(|r| r.eff.is_some()));
        assert!(dir.path().join("mesh_0.txt").exists());
        assert!(dir.path().join("mesh_1.txt").exists());
    }

    proptest! {
        #[test]
        fn marking_is_minimal_and_bulk(eta in prop::collection::vec(0.0f64..10.0, 1..60), zeta in 0.05f64..0.95) {
            prop_assume!(eta.iter().sum::<f64>() > 0.0);
            let marked = dorfler_mark(&eta, zeta).unwrap();
            let total: f64 = eta.iter().sum();
            let sum: f64 = marked.iter().map(|&i| eta[i]).sum();
            prop_assert!(sum >= zeta * total * (1.0 - 1e-12));
            let smallest = marked.iter().map(|&i| eta[i]).fold(f64::INFINITY, f64::min);
            prop_assert!(sum - smallest < zeta * total * (1.0 + 1e-12));
            for (i, v) in eta.iter().enumerate() {
                if !marked.contains(&i) {
                    prop_assert!(*v <= smallest);
                }
            }
        }
    }
}
