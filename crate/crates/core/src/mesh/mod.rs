//! Conforming triangulations with permeability-region and boundary tags.
//!
//! A [`Mesh`] is immutable once built. Generators produce structured
//! triangulations of the unit square, the square with an inner box, and the
//! L-shaped domain; [`refine`] performs newest-vertex bisection with a
//! conformity closure and returns a new, nested mesh.

mod generate;
mod io;
mod refine;
mod regions;

use std::collections::HashMap;

use thiserror::Error;

pub use generate::{
    generate_lshape, generate_lshape_chessboard, generate_square_with_inner_box,
    generate_unit_square, DiagonalPattern,
};
pub use io::{read_mesh, write_mesh};
pub use refine::refine;
pub use regions::{BoundarySegment, BoundarySpec, RegionSpec, Subdomain};

pub type Point = [f64; 2];

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("invalid mesh resolution {0}: {1}")]
    InvalidResolution(usize, &'static str),
    #[error("region box edge {0} does not align with the grid spacing 1/{1}")]
    MisalignedRegion(f64, usize),
    #[error("boundary facet ({0}, {1}) is not covered by any boundary segment")]
    UncoveredBoundary(usize, usize),
    #[error("element {0} has non-positive signed area {1:e}")]
    DegenerateElement(usize, f64),
    #[error("edge ({0}, {1}) is shared by more than two elements")]
    NonManifoldEdge(usize, usize),
    #[error("element id {0} out of range (mesh has {1} elements)")]
    ElementOutOfRange(usize, usize),
    #[error("negative inverse permeability {0} in region {1}")]
    NegativeKappa(f64, String),
    #[error("mesh file parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum BoundaryTag {
    /// No-slip (Dirichlet) boundary.
    #[serde(rename = "gamma1")]
    Gamma1,
    /// Do-nothing (natural) boundary.
    #[serde(rename = "gamma2")]
    Gamma2,
}

impl BoundaryTag {
    pub fn code(self) -> u8 {
        match self {
            BoundaryTag::Gamma1 => 1,
            BoundaryTag::Gamma2 => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(BoundaryTag::Gamma1),
            2 => Some(BoundaryTag::Gamma2),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FacetKind {
    Interior,
    Boundary(BoundaryTag),
}

/// One side of a facet: the adjacent element and the local edge index
/// (edge `e` is opposite local vertex `e`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FacetSide {
    pub element: usize,
    pub local_edge: usize,
}

/// A mesh edge with its adjacency.
///
/// `vertices` is ordered lower index first. The unit normal points out of the
/// `plus` element; for interior facets `plus` is the element that traverses
/// the edge from the lower to the higher vertex index in its CCW ordering.
#[derive(Debug, Clone)]
pub struct Facet {
    pub vertices: [usize; 2],
    pub plus: FacetSide,
    pub minus: Option<FacetSide>,
    pub kind: FacetKind,
    pub normal: Point,
    pub length: f64,
}

impl Facet {
    pub fn is_interior(&self) -> bool {
        matches!(self.kind, FacetKind::Interior)
    }

    /// Whether the DG forms integrate over this facet (interior or no-slip).
    pub fn carries_dg_terms(&self) -> bool {
        !matches!(self.kind, FacetKind::Boundary(BoundaryTag::Gamma2))
    }
}

#[derive(Debug, Clone)]
pub struct Mesh {
    vertices: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    regions: Vec<usize>,
    refinement_edge: Vec<u8>,
    generation: usize,
    facets: Vec<Facet>,
    element_facets: Vec<[usize; 3]>,
}

pub(crate) fn edge_key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

fn signed_area(p: Point, q: Point, r: Point) -> f64 {
    0.5 * ((q[0] - p[0]) * (r[1] - p[1]) - (r[0] - p[0]) * (q[1] - p[1]))
}

fn dist(p: Point, q: Point) -> f64 {
    ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()
}

impl Mesh {
    /// Builds a mesh and its facet table.
    ///
    /// Every boundary edge must appear in `boundary_tags`; tags given for
    /// interior edges are ignored.
    pub fn from_parts(
        vertices: Vec<Point>,
        triangles: Vec<[usize; 3]>,
        regions: Vec<usize>,
        refinement_edge: Vec<u8>,
        generation: usize,
        boundary_tags: &HashMap<(usize, usize), BoundaryTag>,
    ) -> Result<Self, MeshError> {
        assert_eq!(triangles.len(), regions.len());
        assert_eq!(triangles.len(), refinement_edge.len());
        for (e, t) in triangles.iter().enumerate() {
            let area = signed_area(vertices[t[0]], vertices[t[1]], vertices[t[2]]);
            if area <= 0.0 {
                return Err(MeshError::DegenerateElement(e, area));
            }
        }

        let mut sides: HashMap<(usize, usize), Vec<FacetSide>> = HashMap::new();
        let mut order: Vec<(usize, usize)> = Vec::new();
        for (e, t) in triangles.iter().enumerate() {
            for le in 0..3 {
                let a = t[(le + 1) % 3];
                let b = t[(le + 2) % 3];
                let key = edge_key(a, b);
                let entry = sides.entry(key).or_insert_with(|| {
                    order.push(key);
                    Vec::new()
                });
                entry.push(FacetSide {
                    element: e,
                    local_edge: le,
                });
            }
        }

        let mut facets = Vec::with_capacity(order.len());
        let mut element_facets = vec![[usize::MAX; 3]; triangles.len()];
        for key in order {
            let adj = &sides[&key];
            if adj.len() > 2 {
                return Err(MeshError::NonManifoldEdge(key.0, key.1));
            }
            let (lo, hi) = key;
            // does the side traverse lo -> hi in CCW order?
            let forward = |s: &FacetSide| triangles[s.element][(s.local_edge + 1) % 3] == lo;
            let (plus, minus, kind) = if adj.len() == 2 {
                if forward(&adj[0]) {
                    (adj[0], Some(adj[1]), FacetKind::Interior)
                } else {
                    (adj[1], Some(adj[0]), FacetKind::Interior)
                }
            } else {
                let tag = boundary_tags
                    .get(&key)
                    .copied()
                    .ok_or(MeshError::UncoveredBoundary(lo, hi))?;
                (adj[0], None, FacetKind::Boundary(tag))
            };
            // outward normal of `plus`: right-hand normal of its CCW traversal
            let t = &triangles[plus.element];
            let a = vertices[t[(plus.local_edge + 1) % 3]];
            let b = vertices[t[(plus.local_edge + 2) % 3]];
            let length = dist(a, b);
            let normal = [(b[1] - a[1]) / length, -(b[0] - a[0]) / length];
            let idx = facets.len();
            element_facets[plus.element][plus.local_edge] = idx;
            if let Some(m) = minus {
                element_facets[m.element][m.local_edge] = idx;
            }
            facets.push(Facet {
                vertices: [lo, hi],
                plus,
                minus,
                kind,
                normal,
                length,
            });
        }

        Ok(Mesh {
            vertices,
            triangles,
            regions,
            refinement_edge,
            generation,
            facets,
            element_facets,
        })
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn regions(&self) -> &[usize] {
        &self.regions
    }

    pub fn refinement_edges(&self) -> &[u8] {
        &self.refinement_edge
    }

    pub fn generation(&self) -> usize {
        self.generation
    }

    pub fn facets(&self) -> &[Facet] {
        &self.facets
    }

    /// Facet ids of element `e`, indexed by local edge.
    pub fn element_facets(&self, e: usize) -> [usize; 3] {
        self.element_facets[e]
    }

    pub fn num_elements(&self) -> usize {
        self.triangles.len()
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_facets(&self) -> usize {
        self.facets.len()
    }

    pub fn element_vertices(&self, e: usize) -> [Point; 3] {
        let t = self.triangles[e];
        [self.vertices[t[0]], self.vertices[t[1]], self.vertices[t[2]]]
    }

    pub fn area(&self, e: usize) -> f64 {
        let [p, q, r] = self.element_vertices(e);
        signed_area(p, q, r)
    }

    pub fn total_area(&self) -> f64 {
        (0..self.num_elements()).map(|e| self.area(e)).sum()
    }

    pub fn barycenter(&self, e: usize) -> Point {
        let [p, q, r] = self.element_vertices(e);
        [(p[0] + q[0] + r[0]) / 3.0, (p[1] + q[1] + r[1]) / 3.0]
    }

    /// Element diameter (longest edge).
    pub fn diameter(&self, e: usize) -> f64 {
        let [p, q, r] = self.element_vertices(e);
        dist(p, q).max(dist(q, r)).max(dist(r, p))
    }

    /// Maximum element diameter.
    pub fn mesh_size(&self) -> f64 {
        (0..self.num_elements())
            .map(|e| self.diameter(e))
            .fold(0.0, f64::max)
    }

    /// Smallest interior angle of element `e`, in radians.
    pub fn min_angle(&self, e: usize) -> f64 {
        let v = self.element_vertices(e);
        (0..3)
            .map(|i| {
                let o = v[i];
                let a = v[(i + 1) % 3];
                let b = v[(i + 2) % 3];
                let u = [a[0] - o[0], a[1] - o[1]];
                let w = [b[0] - o[0], b[1] - o[1]];
                let c = (u[0] * w[0] + u[1] * w[1]) / (dist(a, o) * dist(b, o));
                c.clamp(-1.0, 1.0).acos()
            })
            .fold(f64::INFINITY, f64::min)
    }

    pub fn mesh_min_angle(&self) -> f64 {
        (0..self.num_elements())
            .map(|e| self.min_angle(e))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn has_gamma2(&self) -> bool {
        self.facets
            .iter()
            .any(|f| f.kind == FacetKind::Boundary(BoundaryTag::Gamma2))
    }

    pub fn boundary_tags(&self) -> HashMap<(usize, usize), BoundaryTag> {
        self.facets
            .iter()
            .filter_map(|f| match f.kind {
                FacetKind::Boundary(tag) => Some(((f.vertices[0], f.vertices[1]), tag)),
                FacetKind::Interior => None,
            })
            .collect()
    }

    /// Index of the element containing `p`, if any (linear scan).
    pub fn locate(&self, p: Point) -> Option<(usize, Point)> {
        (0..self.num_elements()).find_map(|e| {
            let [a, b, c] = self.element_vertices(e);
            let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
            let dx = p[0] - a[0];
            let dy = p[1] - a[1];
            let xi = ((c[1] - a[1]) * dx - (c[0] - a[0]) * dy) / det;
            let eta = (-(b[1] - a[1]) * dx + (b[0] - a[0]) * dy) / det;
            let tol = -1e-12;
            (xi >= tol && eta >= tol && 1.0 - xi - eta >= tol).then_some((e, [xi, eta]))
        })
    }
}
