use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{BoundaryTag, Mesh, MeshError, Point};

/// A named subdomain given as a union of axis-aligned boxes
/// `[x_lo, y_lo, x_hi, y_hi]`, carrying an inverse permeability `kappa`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subdomain {
    pub name: String,
    pub kappa: f64,
    pub boxes: Vec<[f64; 4]>,
}

impl Subdomain {
    pub fn contains(&self, p: Point) -> bool {
        self.boxes
            .iter()
            .any(|b| p[0] > b[0] && p[0] < b[2] && p[1] > b[1] && p[1] < b[3])
    }
}

/// Piecewise-constant inverse permeability `K^{-1} = kappa * I`.
///
/// Region id 0 is the background (free flow) region; id `i + 1` is
/// `subdomains[i]`. Elements are tagged by barycenter; the first subdomain
/// containing the barycenter wins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSpec {
    #[serde(default)]
    pub background_kappa: f64,
    #[serde(default)]
    pub subdomains: Vec<Subdomain>,
}

impl Default for RegionSpec {
    fn default() -> Self {
        Self {
            background_kappa: 0.0,
            subdomains: Vec::new(),
        }
    }
}

impl RegionSpec {
    /// The unit square with a porous box `(lo, hi)^2`.
    pub fn inner_box(lo: f64, hi: f64, kappa: f64) -> Self {
        Self {
            background_kappa: 0.0,
            subdomains: vec![Subdomain {
                name: "porous".into(),
                kappa,
                boxes: vec![[lo, lo, hi, hi]],
            }],
        }
    }

    /// Chessboard of `blocks` x `blocks` squares over the unit square, with
    /// porous blocks where `(i + j)` is odd. Blocks in the removed quadrant of
    /// the L-shape simply never contain a barycenter.
    pub fn chessboard(blocks: usize, kappa: f64) -> Self {
        let s = 1.0 / blocks as f64;
        let boxes = (0..blocks)
            .flat_map(|j| (0..blocks).map(move |i| (i, j)))
            .filter(|(i, j)| (i + j) % 2 == 1)
            .map(|(i, j)| {
                [
                    i as f64 * s,
                    j as f64 * s,
                    (i + 1) as f64 * s,
                    (j + 1) as f64 * s,
                ]
            })
            .collect();
        Self {
            background_kappa: 0.0,
            subdomains: vec![Subdomain {
                name: "porous".into(),
                kappa,
                boxes,
            }],
        }
    }

    pub fn num_regions(&self) -> usize {
        self.subdomains.len() + 1
    }

    pub fn validate(&self) -> Result<(), MeshError> {
        if !(self.background_kappa >= 0.0) {
            return Err(MeshError::NegativeKappa(self.background_kappa, "background".into()));
        }
        for s in &self.subdomains {
            if !(s.kappa >= 0.0) {
                return Err(MeshError::NegativeKappa(s.kappa, s.name.clone()));
            }
        }
        Ok(())
    }

    pub fn region_of(&self, p: Point) -> usize {
        self.subdomains
            .iter()
            .position(|s| s.contains(p))
            .map_or(0, |i| i + 1)
    }

    pub fn kappa_of_region(&self, region: usize) -> f64 {
        if region == 0 {
            self.background_kappa
        } else {
            self.subdomains[region - 1].kappa
        }
    }

    pub fn kappa_per_element(&self, mesh: &Mesh) -> Vec<f64> {
        mesh.regions()
            .iter()
            .map(|&r| self.kappa_of_region(r))
            .collect()
    }

    /// Checks that every box edge lies on a grid line of spacing `1/n`.
    pub fn check_alignment(&self, n: usize) -> Result<(), MeshError> {
        for s in &self.subdomains {
            for b in &s.boxes {
                for &c in b {
                    let scaled = c * n as f64;
                    if (scaled - scaled.round()).abs() > 1e-9 {
                        return Err(MeshError::MisalignedRegion(c, n));
                    }
                }
            }
        }
        Ok(())
    }
}

/// A straight boundary segment and the tag of every boundary facet on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundarySegment {
    pub from: Point,
    pub to: Point,
    pub tag: BoundaryTag,
}

impl BoundarySegment {
    fn contains(&self, p: Point) -> bool {
        let d = [self.to[0] - self.from[0], self.to[1] - self.from[1]];
        let len2 = d[0] * d[0] + d[1] * d[1];
        let w = [p[0] - self.from[0], p[1] - self.from[1]];
        let t = (w[0] * d[0] + w[1] * d[1]) / len2;
        let cross = (w[0] * d[1] - w[1] * d[0]).abs() / len2.sqrt();
        cross < 1e-12 && t > -1e-12 && t < 1.0 + 1e-12
    }
}

/// Assignment of boundary segments to no-slip / do-nothing conditions.
/// An empty segment list tags the whole boundary as no-slip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct BoundarySpec {
    pub segments: Vec<BoundarySegment>,
}

impl BoundarySpec {
    pub fn all_gamma1() -> Self {
        Self::default()
    }

    /// Default L-shape split: do-nothing on the right edge of the upper arm
    /// (`x = 1`, `0.5 <= y <= 1`), no-slip elsewhere.
    pub fn lshape_default() -> Self {
        let g1 = BoundaryTag::Gamma1;
        let seg = |from: Point, to: Point, tag| BoundarySegment { from, to, tag };
        Self {
            segments: vec![
                seg([0.0, 0.0], [0.5, 0.0], g1),
                seg([0.5, 0.0], [0.5, 0.5], g1),
                seg([0.5, 0.5], [1.0, 0.5], g1),
                seg([1.0, 0.5], [1.0, 1.0], BoundaryTag::Gamma2),
                seg([1.0, 1.0], [0.0, 1.0], g1),
                seg([0.0, 1.0], [0.0, 0.0], g1),
            ],
        }
    }

    /// L-shaped channel: do-nothing on both arm ends (`y = 0`, `0 <= x <= 0.5`
    /// and `x = 1`, `0.5 <= y <= 1`), no-slip elsewhere.
    pub fn lshape_channel() -> Self {
        let mut s = Self::lshape_default();
        s.segments[0].tag = BoundaryTag::Gamma2;
        s
    }

    /// Same segments as [`BoundarySpec::lshape_default`] with everything no-slip.
    pub fn lshape_all_gamma1() -> Self {
        let mut s = Self::lshape_default();
        for seg in &mut s.segments {
            seg.tag = BoundaryTag::Gamma1;
        }
        s
    }

    pub fn classify(&self, a: Point, b: Point) -> Option<BoundaryTag> {
        if self.segments.is_empty() {
            return Some(BoundaryTag::Gamma1);
        }
        self.segments
            .iter()
            .find(|s| s.contains(a) && s.contains(b))
            .map(|s| s.tag)
    }

    /// Tags all boundary edges of a triangle list (edges used by one triangle).
    pub(crate) fn tag_edges(
        &self,
        vertices: &[Point],
        triangles: &[[usize; 3]],
    ) -> Result<HashMap<(usize, usize), BoundaryTag>, MeshError> {
        let mut count: HashMap<(usize, usize), usize> = HashMap::new();
        for t in triangles {
            for i in 0..3 {
                *count
                    .entry(super::edge_key(t[i], t[(i + 1) % 3]))
                    .or_default() += 1;
            }
        }
        let mut tags = HashMap::new();
        for (&(a, b), &c) in &count {
            if c == 1 {
                let tag = self
                    .classify(vertices[a], vertices[b])
                    .ok_or(MeshError::UncoveredBoundary(a, b))?;
                tags.insert((a, b), tag);
            }
        }
        Ok(tags)
    }
}
