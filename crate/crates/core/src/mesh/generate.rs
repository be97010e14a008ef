use serde::{Deserialize, Serialize};

use super::{BoundarySpec, Mesh, MeshError, Point, RegionSpec};

/// How each grid cell is split into two triangles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiagonalPattern {
    /// Diagonal from the lower-left to the upper-right corner (`/`).
    #[default]
    Right,
    /// Diagonal from the lower-right to the upper-left corner (`\`).
    Left,
}

/// Structured grid over the unit square restricted to the cells accepted by
/// `keep(i, j)`. Vertices are numbered row by row, skipping unused ones.
fn structured(
    n: usize,
    pattern: DiagonalPattern,
    keep: impl Fn(usize, usize) -> bool,
) -> (Vec<Point>, Vec<[usize; 3]>, Vec<u8>) {
    let mut used = vec![false; (n + 1) * (n + 1)];
    let grid = |i: usize, j: usize| j * (n + 1) + i;
    for j in 0..n {
        for i in 0..n {
            if keep(i, j) {
                for (di, dj) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                    used[grid(i + di, j + dj)] = true;
                }
            }
        }
    }
    let mut index = vec![usize::MAX; used.len()];
    let mut vertices = Vec::new();
    for j in 0..=n {
        for i in 0..=n {
            if used[grid(i, j)] {
                index[grid(i, j)] = vertices.len();
                vertices.push([i as f64 / n as f64, j as f64 / n as f64]);
            }
        }
    }
    let mut triangles = Vec::new();
    let mut refinement_edge = Vec::new();
    for j in 0..n {
        for i in 0..n {
            if !keep(i, j) {
                continue;
            }
            let v00 = index[grid(i, j)];
            let v10 = index[grid(i + 1, j)];
            let v01 = index[grid(i, j + 1)];
            let v11 = index[grid(i + 1, j + 1)];
            // the refinement edge is the cell diagonal
            match pattern {
                DiagonalPattern::Right => {
                    triangles.push([v00, v10, v11]);
                    refinement_edge.push(1);
                    triangles.push([v00, v11, v01]);
                    refinement_edge.push(2);
                }
                DiagonalPattern::Left => {
                    triangles.push([v00, v10, v01]);
                    refinement_edge.push(0);
                    triangles.push([v10, v11, v01]);
                    refinement_edge.push(1);
                }
            }
        }
    }
    (vertices, triangles, refinement_edge)
}

fn assemble(
    vertices: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    refinement_edge: Vec<u8>,
    regions: &RegionSpec,
    boundary: &BoundarySpec,
) -> Result<Mesh, MeshError> {
    let tags = boundary.tag_edges(&vertices, &triangles)?;
    let region_ids = triangles
        .iter()
        .map(|t| {
            let c = [
                (vertices[t[0]][0] + vertices[t[1]][0] + vertices[t[2]][0]) / 3.0,
                (vertices[t[0]][1] + vertices[t[1]][1] + vertices[t[2]][1]) / 3.0,
            ];
            regions.region_of(c)
        })
        .collect();
    Mesh::from_parts(vertices, triangles, region_ids, refinement_edge, 0, &tags)
}

/// `n x n` grid on the unit square, each cell split in two, whole boundary
/// no-slip, single region.
pub fn generate_unit_square(n: usize, pattern: DiagonalPattern) -> Result<Mesh, MeshError> {
    if n == 0 {
        return Err(MeshError::InvalidResolution(n, "resolution must be at least 1"));
    }
    let (v, t, r) = structured(n, pattern, |_, _| true);
    assemble(v, t, r, &RegionSpec::default(), &BoundarySpec::all_gamma1())
}

/// Unit square tagged with the subdomains of `regions`; every box edge must
/// fall on a grid line so that region interfaces are unions of facets.
pub fn generate_square_with_inner_box(
    n: usize,
    regions: &RegionSpec,
) -> Result<Mesh, MeshError> {
    if n == 0 {
        return Err(MeshError::InvalidResolution(n, "resolution must be at least 1"));
    }
    regions.validate()?;
    regions.check_alignment(n)?;
    let (v, t, r) = structured(n, DiagonalPattern::Right, |_, _| true);
    assemble(v, t, r, regions, &BoundarySpec::all_gamma1())
}

/// L-shaped domain `(0,1)^2` minus the lower-right quadrant `[0.5,1] x [0,0.5]`.
pub fn generate_lshape(
    n: usize,
    regions: &RegionSpec,
    boundary: &BoundarySpec,
) -> Result<Mesh, MeshError> {
    if n == 0 || n % 2 != 0 {
        return Err(MeshError::InvalidResolution(
            n,
            "L-shape resolution must be even and positive",
        ));
    }
    regions.validate()?;
    regions.check_alignment(n)?;
    let half = n / 2;
    let (v, t, r) = structured(n, DiagonalPattern::Right, |i, j| !(i >= half && j < half));
    assemble(v, t, r, regions, boundary)
}

/// L-shape with a `blocks x blocks` chessboard of porous squares carrying
/// inverse permeability `kappa`.
pub fn generate_lshape_chessboard(
    n: usize,
    blocks: usize,
    kappa: f64,
    boundary: &BoundarySpec,
) -> Result<(Mesh, RegionSpec), MeshError> {
    let regions = RegionSpec::chessboard(blocks, kappa);
    let mesh = generate_lshape(n, &regions, boundary)?;
    Ok((mesh, regions))
}
