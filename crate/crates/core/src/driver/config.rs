use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::assembly::Variant;
use crate::eigen::SolverOptions;
use crate::femspace::MAX_DEGREE;
use crate::mesh::{
    generate_lshape, generate_square_with_inner_box, generate_unit_square, read_mesh, BoundarySpec, DiagonalPattern,
    Mesh, RegionSpec, Subdomain,
};

use super::DriverError;

/// Stabilization values of the default sweep.
pub const DEFAULT_A_GRID: [f64; 10] = [0.25, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 5.0, 10.0, 20.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Solve,
    Sweep,
    Converge,
    Adapt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Geometry {
    /// Unit square, single free-flow region.
    Square { n: usize },
    /// Unit square with the porous box `(lo, hi)^2`.
    SquareWithBox {
        n: usize,
        #[serde(default = "box_lo")]
        lo: f64,
        #[serde(default = "box_hi")]
        hi: f64,
    },
    /// L-shape `(0,1)^2 \ [0.5,1) x (0,0.5]` with a `blocks x blocks` porous chessboard.
    LshapeChessboard {
        n: usize,
        #[serde(default = "two")]
        blocks: usize,
    },
    /// Mesh read from a file; region 0 is free flow, every other region porous.
    MeshFile { path: PathBuf },
}

fn box_lo() -> f64 {
    0.375
}
fn box_hi() -> f64 {
    0.625
}
fn two() -> usize {
    2
}

impl Geometry {
    pub fn n(&self) -> Option<usize> {
        match self {
            Geometry::Square { n } | Geometry::SquareWithBox { n, .. } | Geometry::LshapeChessboard { n, .. } => Some(*n),
            Geometry::MeshFile { .. } => None,
        }
    }

    /// Same geometry at resolution `n` (mesh files are returned unchanged).
    pub fn with_n(&self, n: usize) -> Self {
        let mut g = self.clone();
        match &mut g {
            Geometry::Square { n: m } | Geometry::SquareWithBox { n: m, .. } | Geometry::LshapeChessboard { n: m, .. } => {
                *m = n
            }
            Geometry::MeshFile { .. } => {}
        }
        g
    }
}

/// How reference eigenvalues of a convergence study are obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ReferenceSpec {
    Values { values: Vec<f64> },
    /// Symmetric solve with a higher polynomial degree.
    HighOrder { degree: usize, n: usize },
    /// Three-parameter fit of the computed sequence itself.
    Extrapolate,
}

/// How the reference eigenvalue of an adaptive run is obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AdaptReference {
    #[default]
    None,
    Value { value: f64 },
    /// Independent adaptive run of another degree, extrapolated over its last `tail` iterations.
    Adaptive { degree: usize, iterations: usize, tail: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSettings {
    pub a_grid: Vec<f64>,
    pub epsilons: Vec<Variant>,
    /// Porous-region coefficients to sweep; empty means the run's `kappa`.
    pub kappas: Vec<f64>,
    /// Number of leading eigenvalues inspected per grid point.
    pub count: usize,
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self {
            a_grid: DEFAULT_A_GRID.to_vec(),
            epsilons: vec![Variant::Symmetric],
            kappas: Vec::new(),
            count: 40,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergeSettings {
    pub n_list: Vec<usize>,
    /// Number of lowest eigenvalues tracked.
    pub indices: usize,
    pub reference: ReferenceSpec,
}

impl Default for ConvergeSettings {
    fn default() -> Self {
        Self {
            n_list: vec![8, 16, 32, 64],
            indices: 4,
            reference: ReferenceSpec::HighOrder { degree: 4, n: 24 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptSettings {
    pub zeta: f64,
    pub max_iterations: usize,
    pub dof_budget: usize,
    /// Zero-based index of the tracked eigenvalue.
    pub target: usize,
    pub reference: AdaptReference,
}

impl Default for AdaptSettings {
    fn default() -> Self {
        Self {
            zeta: 0.6,
            max_iterations: 15,
            dof_budget: 300_000,
            target: 0,
            reference: AdaptReference::None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSettings {
    pub dir: Option<PathBuf>,
    pub export_matrices: bool,
    pub export_meshes: bool,
    /// Side of the uniform sampling grid for eigenfunction export.
    pub sample_grid: Option<usize>,
    /// Use the dense QZ solver instead of shift-invert Arnoldi.
    pub dense: bool,
}

fn d_degree() -> usize {
    1
}
fn d_variant() -> Variant {
    Variant::Symmetric
}
fn d_a() -> f64 {
    10.0
}
fn d_nu() -> f64 {
    1.0
}

/// Complete description of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub geometry: Geometry,
    /// Boundary split for the L-shape; square geometries are fully no-slip.
    #[serde(default)]
    pub boundary: Option<BoundarySpec>,
    #[serde(default = "d_degree")]
    pub degree: usize,
    #[serde(default = "d_variant")]
    pub epsilon: Variant,
    #[serde(default = "d_a")]
    pub a: f64,
    #[serde(default = "d_nu")]
    pub nu: f64,
    /// Inverse permeability of the porous regions.
    #[serde(default)]
    pub kappa: f64,
    /// Inverse permeability of the free-flow region.
    #[serde(default)]
    pub kappa_background: f64,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub sweep: SweepSettings,
    #[serde(default)]
    pub converge: ConvergeSettings,
    #[serde(default)]
    pub adapt: AdaptSettings,
    #[serde(default)]
    pub output: OutputSettings,
}

impl RunConfig {
    pub fn new(experiment: Experiment, geometry: Geometry) -> Self {
        Self {
            experiment,
            geometry,
            boundary: None,
            degree: d_degree(),
            epsilon: d_variant(),
            a: d_a(),
            nu: d_nu(),
            kappa: 0.0,
            kappa_background: 0.0,
            solver: SolverOptions::default(),
            sweep: SweepSettings::default(),
            converge: ConvergeSettings::default(),
            adapt: AdaptSettings::default(),
            output: OutputSettings::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, DriverError> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, DriverError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Checks parameters and that the base mesh can be generated.
    pub fn validate(&self) -> Result<(), DriverError> {
        let bad = |m: String| Err(DriverError::Config(m));
        if !(self.nu > 0.0 && self.nu.is_finite()) {
            return bad(format!("nu must be positive, got {}", self.nu));
        }
        if !(self.a >= 0.0 && self.a.is_finite()) {
            return bad(format!("a must be non-negative, got {}", self.a));
        }
        if !(1..=MAX_DEGREE).contains(&self.degree) {
            return bad(format!("degree must lie in 1..={MAX_DEGREE}, got {}", self.degree));
        }
        for k in [self.kappa, self.kappa_background].iter().chain(&self.sweep.kappas) {
            if !(*k >= 0.0 && k.is_finite()) {
                return bad(format!("kappa must be non-negative, got {k}"));
            }
        }
        if self.solver.nev == 0 {
            return bad("nev must be positive".into());
        }
        if self.boundary.is_some() && !matches!(self.geometry, Geometry::LshapeChessboard { .. }) {
            return bad("a boundary split is only supported for the L-shape".into());
        }
        match self.experiment {
            Experiment::Sweep => {
                if self.sweep.a_grid.iter().any(|a| !(*a >= 0.0)) || self.sweep.epsilons.is_empty() {
                    return bad("sweep needs non-negative a values and at least one epsilon".into());
                }
                if self.sweep.count == 0 {
                    return bad("sweep count must be positive".into());
                }
            }
            Experiment::Converge => {
                let l = &self.converge.n_list;
                if l.len() < 3 || l.windows(2).any(|w| w[1] <= w[0]) {
                    return bad("n_list must be strictly increasing with at least 3 entries".into());
                }
                if matches!(self.geometry, Geometry::MeshFile { .. }) {
                    return bad("a convergence study needs a generated geometry".into());
                }
            }
            Experiment::Adapt => {
                let z = self.adapt.zeta;
                if !(z > 0.0 && z < 1.0) {
                    return bad(format!("zeta must lie in (0, 1), got {z}"));
                }
                if self.adapt.max_iterations == 0 {
                    return bad("max_iterations must be positive".into());
                }
            }
            Experiment::Solve => {}
        }
        if let Some(n) = self.geometry.n() {
            let ns: Vec<usize> = match self.experiment {
                Experiment::Converge => self.converge.n_list.clone(),
                _ => vec![n],
            };
            for n in ns {
                self.regions().check_alignment(n).map_err(|e| DriverError::Config(e.to_string()))?;
                match self.geometry {
                    Geometry::LshapeChessboard { .. } if n % 2 != 0 || n == 0 => {
                        return bad(format!("L-shape resolution must be even, got {n}"))
                    }
                    _ if n == 0 => return bad("resolution must be positive".into()),
                    _ => {}
                }
            }
        }
        Ok(())
    }

    /// Region coefficients of the generated geometries.
    pub fn regions(&self) -> RegionSpec {
        let mut r = match &self.geometry {
            Geometry::Square { .. } | Geometry::MeshFile { .. } => RegionSpec::default(),
            Geometry::SquareWithBox { lo, hi, .. } => RegionSpec::inner_box(*lo, *hi, self.kappa),
            Geometry::LshapeChessboard { blocks, .. } => RegionSpec::chessboard(*blocks, self.kappa),
        };
        r.background_kappa = self.kappa_background;
        r
    }

    pub fn build_mesh(&self) -> Result<(Mesh, RegionSpec), DriverError> {
        let regions = self.regions();
        let mesh = match &self.geometry {
            Geometry::Square { n } => generate_unit_square(*n, DiagonalPattern::Right)?,
            Geometry::SquareWithBox { n, .. } => generate_square_with_inner_box(*n, &regions)?,
            Geometry::LshapeChessboard { n, .. } => {
                let b = self.boundary.clone().unwrap_or_else(BoundarySpec::lshape_default);
                generate_lshape(*n, &regions, &b)?
            }
            Geometry::MeshFile { path } => {
                let mesh = read_mesh(std::io::BufReader::new(std::fs::File::open(path)?))?;
                let max_region = mesh.regions().iter().copied().max().unwrap_or(0);
                let regions = RegionSpec {
                    background_kappa: self.kappa_background,
                    subdomains: (1..=max_region)
                        .map(|i| Subdomain {
                            name: format!("region{i}"),
                            kappa: self.kappa,
                            boxes: Vec::new(),
                        })
                        .collect(),
                };
                return Ok((mesh, regions));
            }
        };
        Ok((mesh, regions))
    }
}
