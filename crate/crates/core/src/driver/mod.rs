//! Experiment harness: JSON run configurations, the single solve, the
//! stabilization sweep, uniform convergence studies and adaptive runs, with
//! CSV output. [`check`] runs the acceptance suite.

pub mod check;
mod config;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::adapt::{adaptive_loop, extrapolate_reference, fit_rate, AdaptConfig, AdaptError, AdaptiveRun, RateFit};
use crate::assembly::{assemble_system, AssemblyError, PhysicalParams, SystemMatrices, Variant};
use crate::eigen::{dense_fallback_solve, shift_invert_solve, Classification, EigenError, EigenPair, SolverOptions, Spectrum};
use crate::estimator::{compute_eta, EstimatorError, IndicatorField};
use crate::femspace::{eval_pressure, eval_velocity, FeSpaces, SpaceError};
use crate::mesh::{write_mesh, Mesh, MeshError, RegionSpec};

pub use config::{
    AdaptReference, AdaptSettings, ConvergeSettings, Experiment, Geometry, OutputSettings, ReferenceSpec, RunConfig,
    SweepSettings, DEFAULT_A_GRID,
};

#[derive(Debug, Error)]
pub enum DriverError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("cannot parse configuration: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
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
    Adapt(#[from] AdaptError),
}

impl DriverError {
    /// Whether the error stems from the configuration rather than a computation.
    pub fn is_usage(&self) -> bool {
        matches!(self, DriverError::Config(_) | DriverError::Json(_))
    }
}

/// Mesh, spaces, coefficients and assembled pencil of one configuration.
pub struct Problem {
    pub mesh: Mesh,
    pub regions: RegionSpec,
    pub spaces: FeSpaces,
    pub params: PhysicalParams,
    pub system: SystemMatrices,
}

impl Problem {
    pub fn build(cfg: &RunConfig) -> Result<Self, DriverError> {
        let (mesh, regions) = cfg.build_mesh()?;
        Self::on_mesh(cfg, mesh, regions)
    }

    pub fn on_mesh(cfg: &RunConfig, mesh: Mesh, regions: RegionSpec) -> Result<Self, DriverError> {
        let spaces = FeSpaces::new(&mesh, cfg.degree)?;
        let params = PhysicalParams::from_regions(&mesh, &regions, cfg.nu, cfg.a, cfg.degree, cfg.epsilon)?;
        let system = assemble_system(&mesh, &spaces, &params)?;
        Ok(Self {
            mesh,
            regions,
            spaces,
            params,
            system,
        })
    }

    pub fn solve(&self, opts: &SolverOptions, dense: bool) -> Result<Spectrum, DriverError> {
        Ok(if dense {
            dense_fallback_solve(&self.system, opts)?
        } else {
            shift_invert_solve(&self.system, opts)?
        })
    }
}

/// The `count` computed pairs closest to the shift, sorted by real part.
pub fn leading_pairs(spectrum: &Spectrum, count: usize, sigma: f64) -> Vec<&EigenPair> {
    let mut pairs: Vec<&EigenPair> = spectrum.pairs.iter().collect();
    pairs.sort_by(|a, b| {
        let da = (a.lambda - sigma).norm();
        let db = (b.lambda - sigma).norm();
        da.total_cmp(&db)
    });
    pairs.truncate(count);
    pairs.sort_by(|a, b| a.lambda.re.total_cmp(&b.lambda.re).then(a.lambda.im.total_cmp(&b.lambda.im)));
    pairs
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, DriverError> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

/// Creates the output directory and stores the configuration in it.
fn prepare_output(cfg: &RunConfig) -> Result<Option<PathBuf>, DriverError> {
    let Some(dir) = &cfg.output.dir else {
        return Ok(None);
    };
    std::fs::create_dir_all(dir)?;
    let mut w = create(dir, "config.json")?;
    serde_json::to_writer_pretty(&mut w, cfg)?;
    writeln!(w)?;
    w.flush()?;
    Ok(Some(dir.clone()))
}

pub struct SolveReport {
    pub spectrum: Spectrum,
    pub dofs: usize,
    pub elements: usize,
    /// Indicators of the lowest physical pair.
    pub indicators: Option<IndicatorField>,
}

/// One assembly and eigensolve with full export.
pub fn run_solve(cfg: &RunConfig) -> Result<SolveReport, DriverError> {
    cfg.validate()?;
    let dir = prepare_output(cfg)?;
    let problem = Problem::build(cfg)?;
    let spectrum = problem.solve(&cfg.solver, cfg.output.dense)?;
    let indicators = match spectrum.physical().next() {
        Some(p) => Some(compute_eta(&problem.mesh, &problem.spaces, &problem.params, p)?),
        None => None,
    };
    info!(
        "solve: {} dofs, lowest physical {:?}",
        problem.system.dim(),
        spectrum.lowest_physical(cfg.solver.nev)
    );
    if let Some(dir) = dir {
        let mut w = create(&dir, "spectrum.csv")?;
        spectrum.write_csv(&mut w)?;
        w.flush()?;
        if let Some(ind) = &indicators {
            let mut w = create(&dir, "indicators.csv")?;
            ind.write_csv(&mut w)?;
            w.flush()?;
        }
        let mut w = create(&dir, "mesh.txt")?;
        write_mesh(&problem.mesh, &mut w)?;
        w.flush()?;
        if cfg.output.export_matrices {
            let s = &problem.system;
            for (name, m) in [("A.mtx", &s.a), ("B.mtx", &s.b), ("M.mtx", &s.m)] {
                let mut w = create(&dir, name)?;
                m.write_coordinate(&mut w)?;
                w.flush()?;
            }
        }
        if let Some(g) = cfg.output.sample_grid {
            for (i, p) in spectrum.physical().take(cfg.solver.nev).enumerate() {
                let mut w = create(&dir, &format!("eigenfunction_{i}.csv"))?;
                write_samples(&problem, p, g, &mut w)?;
                w.flush()?;
            }
        }
    }
    Ok(SolveReport {
        dofs: problem.spaces.n_dofs(),
        elements: problem.mesh.num_elements(),
        spectrum,
        indicators,
    })
}

/// Real parts of velocity and pressure at the centers of a `g x g` grid
/// over the unit square (points outside the domain are skipped).
pub fn write_samples<W: Write>(problem: &Problem, pair: &EigenPair, g: usize, mut w: W) -> Result<(), DriverError> {
    let (u, p) = (pair.u_real(), pair.p_real());
    writeln!(w, "x,y,u1,u2,p")?;
    for j in 0..g {
        for i in 0..g {
            let x = [(i as f64 + 0.5) / g as f64, (j as f64 + 0.5) / g as f64];
            let Some((e, xi)) = problem.mesh.locate(x) else {
                continue;
            };
            let (val, _) = eval_velocity(&problem.mesh, &problem.spaces, &u, e, xi)?;
            let pv = eval_pressure(&problem.spaces, &p, e, xi);
            writeln!(w, "{:.6},{:.6},{:.12e},{:.12e},{:.12e}", x[0], x[1], val[0], val[1], pv)?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub a: f64,
    pub epsilon: i32,
    pub kappa: f64,
    pub index: usize,
    pub re_lambda: f64,
    pub im_lambda: f64,
    pub classification: Classification,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSummary {
    pub epsilon: i32,
    pub kappa: f64,
    /// Spurious count among the leading eigenvalues for each grid value of `a`.
    pub spurious: Vec<(f64, usize)>,
    /// Smallest grid value of `a` without spurious modes.
    pub smallest_clean_a: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub summary: Vec<SweepSummary>,
    /// `(a, epsilon, kappa, message)` of grid points whose solve failed.
    pub failures: Vec<(f64, i32, f64, String)>,
}

impl SweepTable {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "a,epsilon,kappa,index,re_lambda,im_lambda,classification")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{:e},{},{:.12e},{:.12e},{}",
                r.a, r.epsilon, r.kappa, r.index, r.re_lambda, r.im_lambda, r.classification
            )?;
        }
        Ok(())
    }

    pub fn write_summary_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "epsilon,kappa,a,spurious_count,smallest_clean_a")?;
        for s in &self.summary {
            let clean = s.smallest_clean_a.map_or(String::new(), |a| a.to_string());
            for (a, n) in &s.spurious {
                writeln!(w, "{},{:e},{},{},{}", s.epsilon, s.kappa, a, n, clean)?;
            }
        }
        Ok(())
    }
}

/// Leading eigenvalues and their classification for each `(epsilon, kappa, a)`.
pub fn run_sweep(cfg: &RunConfig, a_grid: &[f64]) -> Result<SweepTable, DriverError> {
    cfg.validate()?;
    if a_grid.is_empty() {
        return Err(DriverError::Config("empty a grid".into()));
    }
    let dir = prepare_output(cfg)?;
    let kappas = if cfg.sweep.kappas.is_empty() {
        vec![cfg.kappa]
    } else {
        cfg.sweep.kappas.clone()
    };
    let count = cfg.sweep.count;
    let mut points = Vec::new();
    for &eps in &cfg.sweep.epsilons {
        for &kappa in &kappas {
            for &a in a_grid {
                points.push((eps, kappa, a));
            }
        }
    }
    let opts = SolverOptions {
        nev: count,
        ..cfg.solver.clone()
    };
    let results: Vec<_> = points
        .par_iter()
        .map(|&(eps, kappa, a)| {
            let c = RunConfig {
                epsilon: eps,
                kappa,
                a,
                ..cfg.clone()
            };
            let out = Problem::build(&c).and_then(|p| p.solve(&opts, cfg.output.dense));
            (eps, kappa, a, out)
        })
        .collect();
    let mut table = SweepTable::default();
    for (eps, kappa, a, out) in results {
        let e = i32::from(eps);
        match out {
            Ok(spectrum) => {
                for (index, p) in leading_pairs(&spectrum, count, opts.sigma).into_iter().enumerate() {
                    table.rows.push(SweepRow {
                        a,
                        epsilon: e,
                        kappa,
                        index,
                        re_lambda: p.lambda.re,
                        im_lambda: p.lambda.im,
                        classification: p.class,
                    });
                }
            }
            Err(err) => {
                warn!("sweep point a = {a}, epsilon = {e}, kappa = {kappa} failed: {err}");
                table.failures.push((a, e, kappa, err.to_string()));
            }
        }
    }
    for &eps in &cfg.sweep.epsilons {
        for &kappa in &kappas {
            let e = i32::from(eps);
            let spurious: Vec<(f64, usize)> = a_grid
                .iter()
                .filter(|a| !table.failures.iter().any(|f| f.0 == **a && f.1 == e && f.2 == kappa))
                .map(|&a| {
                    let n = table
                        .rows
                        .iter()
                        .filter(|r| r.a == a && r.epsilon == e && r.kappa == kappa)
                        .filter(|r| r.classification != Classification::Physical)
                        .count();
                    (a, n)
                })
                .collect();
            let smallest_clean_a = spurious
                .iter()
                .filter(|(_, n)| *n == 0)
                .map(|(a, _)| *a)
                .min_by(f64::total_cmp);
            table.summary.push(SweepSummary {
                epsilon: e,
                kappa,
                spurious,
                smallest_clean_a,
            });
        }
    }
    if let Some(dir) = dir {
        let mut w = create(&dir, "sweep.csv")?;
        table.write_csv(&mut w)?;
        w.flush()?;
        let mut w = create(&dir, "sweep_summary.csv")?;
        table.write_summary_csv(&mut w)?;
        w.flush()?;
    }
    Ok(table)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceSample {
    pub n: usize,
    pub dof: usize,
    /// Lowest physical eigenvalues (real parts).
    pub lambdas: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceTable {
    pub samples: Vec<ConvergenceSample>,
    pub reference: Vec<f64>,
    pub reference_source: String,
    /// Fitted rate per eigenvalue index (`None` if the fit was impossible).
    pub rates: Vec<Option<RateFit>>,
}

impl ConvergenceTable {
    pub fn errors(&self, index: usize) -> Vec<f64> {
        self.samples
            .iter()
            .map(|s| (s.lambdas[index] - self.reference[index]).abs())
            .collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "n,dof,index,lambda_h,reference,err")?;
        for s in &self.samples {
            for (i, l) in s.lambdas.iter().enumerate() {
                let r = self.reference[i];
                writeln!(w, "{},{},{},{:.12e},{:.12e},{:.6e}", s.n, s.dof, i + 1, l, r, (l - r).abs())?;
            }
        }
        Ok(())
    }

    pub fn write_rates_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "index,reference,dof_slope,h_rate")?;
        for (i, r) in self.rates.iter().enumerate() {
            match r {
                Some(r) => writeln!(w, "{},{:.12e},{:.6},{:.6}", i + 1, self.reference[i], r.dof_slope, r.h_rate)?,
                None => writeln!(w, "{},{:.12e},,", i + 1, self.reference[i])?,
            }
        }
        Ok(())
    }
}

/// Reference eigenvalues for a convergence study.
pub fn reference_values(
    cfg: &RunConfig,
    spec: &ReferenceSpec,
    samples: &[ConvergenceSample],
    count: usize,
) -> Result<(Vec<f64>, String), DriverError> {
    match spec {
        ReferenceSpec::Values { values } => {
            if values.len() < count {
                return Err(DriverError::Config(format!(
                    "{} reference values given, {count} needed",
                    values.len()
                )));
            }
            Ok((values[..count].to_vec(), "given".into()))
        }
        ReferenceSpec::HighOrder { degree, n } => {
            let c = RunConfig {
                degree: *degree,
                epsilon: Variant::Symmetric,
                geometry: cfg.geometry.with_n(*n),
                ..cfg.clone()
            };
            let opts = SolverOptions {
                nev: count,
                ..cfg.solver.clone()
            };
            let s = Problem::build(&c)?.solve(&opts, false)?;
            let l = s.lowest_physical(count);
            if l.len() < count {
                return Err(DriverError::Eigen(EigenError::InvalidRequest(
                    "reference solve found too few eigenvalues".into(),
                )));
            }
            Ok((l, format!("symmetric solve with k = {degree}, N = {n}")))
        }
        ReferenceSpec::Extrapolate => {
            let dofs: Vec<f64> = samples.iter().map(|s| s.dof as f64).collect();
            let mut out = Vec::with_capacity(count);
            for i in 0..count {
                let l: Vec<f64> = samples.iter().map(|s| s.lambdas[i]).collect();
                out.push(extrapolate_reference(&l, &dofs)?.lambda);
            }
            Ok((out, "extrapolation of the sequence".into()))
        }
    }
}

/// Uniform refinement study over `n_list`.
pub fn run_convergence(cfg: &RunConfig, n_list: &[usize]) -> Result<ConvergenceTable, DriverError> {
    cfg.validate()?;
    if n_list.len() < 3 || n_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(DriverError::Config(
            "the mesh sequence must be strictly increasing with at least 3 entries".into(),
        ));
    }
    let dir = prepare_output(cfg)?;
    let count = cfg.converge.indices.max(1);
    let opts = SolverOptions {
        nev: cfg.solver.nev.max(count),
        ..cfg.solver.clone()
    };
    let mut samples = Vec::new();
    for &n in n_list {
        let c = RunConfig {
            geometry: cfg.geometry.with_n(n),
            ..cfg.clone()
        };
        let problem = Problem::build(&c)?;
        let spectrum = problem.solve(&opts, false)?;
        let lambdas = spectrum.lowest_physical(count);
        if lambdas.len() < count {
            return Err(DriverError::Eigen(EigenError::InvalidRequest(format!(
                "only {} physical eigenvalues at N = {n}",
                lambdas.len()
            ))));
        }
        info!("converge: N = {n}, dofs {}, lambdas {lambdas:?}", problem.system.dim());
        samples.push(ConvergenceSample {
            n,
            dof: problem.spaces.n_dofs(),
            lambdas,
        });
    }
    let (reference, reference_source) = reference_values(cfg, &cfg.converge.reference, &samples, count)?;
    let dofs: Vec<f64> = samples.iter().map(|s| s.dof as f64).collect();
    let mut table = ConvergenceTable {
        samples,
        reference,
        reference_source,
        rates: Vec::new(),
    };
    table.rates = (0..count).map(|i| fit_rate(&table.errors(i), &dofs).ok()).collect();
    if let Some(dir) = dir {
        let mut w = create(&dir, "convergence.csv")?;
        table.write_csv(&mut w)?;
        w.flush()?;
        let mut w = create(&dir, "rates.csv")?;
        table.write_rates_csv(&mut w)?;
        w.flush()?;
    }
    Ok(table)
}

pub struct AdaptReport {
    pub run: AdaptiveRun,
    pub reference: Option<f64>,
    /// Error slope against dof over the recorded tail (needs a reference).
    pub tail_fit: Option<RateFit>,
}

fn adapt_config(cfg: &RunConfig, degree: usize, lambda_ref: Option<f64>, export: Option<PathBuf>) -> AdaptConfig {
    AdaptConfig {
        nu: cfg.nu,
        a: cfg.a,
        degree,
        variant: cfg.epsilon,
        target: cfg.adapt.target,
        zeta: cfg.adapt.zeta,
        max_iterations: cfg.adapt.max_iterations,
        dof_budget: cfg.adapt.dof_budget,
        solver: cfg.solver.clone(),
        lambda_ref,
        mesh_export: export,
    }
}

/// Reference eigenvalue for an adaptive run, if requested.
pub fn adapt_reference(cfg: &RunConfig) -> Result<Option<f64>, DriverError> {
    match &cfg.adapt.reference {
        AdaptReference::None => Ok(None),
        AdaptReference::Value { value } => Ok(Some(*value)),
        AdaptReference::Adaptive { degree, iterations, tail } => {
            let (mesh, regions) = cfg.build_mesh()?;
            let mut ac = adapt_config(cfg, *degree, None, None);
            ac.max_iterations = *iterations;
            let run = adaptive_loop(mesh, &regions, &ac)?;
            if let Some(f) = &run.failure {
                return Err(DriverError::Config(format!("reference run failed: {f}")));
            }
            let n = run.records.len();
            let t = (*tail).clamp(3, n.max(3));
            if n < 3 {
                return Err(AdaptError::TooFewSamples { needed: 3, got: n }.into());
            }
            let e = extrapolate_reference(&run.lambdas()[n - t..], &run.dofs()[n - t..])?;
            if !e.converged {
                warn!("reference extrapolation did not converge; using the finest value");
            }
            info!("adaptive reference: {:.12} (t = {:.3})", e.lambda, e.t);
            Ok(Some(e.lambda))
        }
    }
}

/// Adaptive run with records, effectivity data and mesh export.
pub fn run_adapt(cfg: &RunConfig) -> Result<AdaptReport, DriverError> {
    cfg.validate()?;
    let dir = prepare_output(cfg)?;
    let reference = adapt_reference(cfg)?;
    let (mesh, regions) = cfg.build_mesh()?;
    let export = match (&dir, cfg.output.export_meshes) {
        (Some(d), true) => Some(d.join("meshes")),
        _ => None,
    };
    let run = adaptive_loop(mesh, &regions, &adapt_config(cfg, cfg.degree, reference, export))?;
    let tail_fit = reference.and_then(|_| {
        let n = run.records.len();
        let t = n.min(6);
        let errs: Vec<f64> = run.records[n - t..].iter().filter_map(|r| r.err).collect();
        fit_rate(&errs, &run.dofs()[n - t..]).ok()
    });
    if let Some(dir) = dir {
        let mut w = create(&dir, "records.csv")?;
        run.write_csv(&mut w)?;
        w.flush()?;
        let mut w = create(&dir, "effectivity.csv")?;
        writeln!(w, "iter,dof,eff")?;
        for r in &run.records {
            if let Some(eff) = r.eff {
                writeln!(w, "{},{},{:.12e}", r.iter, r.dof, eff)?;
            }
        }
        w.flush()?;
        let mut w = create(&dir, "final_mesh.txt")?;
        write_mesh(&run.final_mesh, &mut w)?;
        w.flush()?;
    }
    if let Some(f) = &run.failure {
        warn!("adaptive run stopped early: {f}");
    }
    Ok(AdaptReport {
        run,
        reference,
        tail_fit,
    })
}
