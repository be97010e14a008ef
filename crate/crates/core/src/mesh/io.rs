//! Plain-text mesh exchange format.
//!
//! ```text
//! brinkman-dg-mesh v1
//! vertices <n>
//! x y
//! triangles <m>
//! v0 v1 v2 region
//! boundary <b>
//! v0 v1 tag
//! ```
//!
//! The file does not record refinement edges; on import every element uses
//! its longest edge.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use super::{edge_key, BoundaryTag, FacetKind, Mesh, MeshError};

const HEADER: &str = "brinkman-dg-mesh v1";

pub fn write_mesh<W: Write>(mesh: &Mesh, mut w: W) -> std::io::Result<()> {
    writeln!(w, "{HEADER}")?;
    writeln!(w, "vertices {}", mesh.num_vertices())?;
    for p in mesh.vertices() {
        writeln!(w, "{:.17e} {:.17e}", p[0], p[1])?;
    }
    writeln!(w, "triangles {}", mesh.num_elements())?;
    for (t, r) in mesh.triangles().iter().zip(mesh.regions()) {
        writeln!(w, "{} {} {} {}", t[0], t[1], t[2], r)?;
    }
    let boundary: Vec<_> = mesh
        .facets()
        .iter()
        .filter_map(|f| match f.kind {
            FacetKind::Boundary(tag) => Some((f.vertices, tag)),
            FacetKind::Interior => None,
        })
        .collect();
    writeln!(w, "boundary {}", boundary.len())?;
    for (v, tag) in boundary {
        writeln!(w, "{} {} {}", v[0], v[1], tag.code())?;
    }
    Ok(())
}

struct Lines<R> {
    inner: std::io::Lines<R>,
    line: usize,
}

impl<R: BufRead> Lines<R> {
    fn next_line(&mut self) -> Result<String, MeshError> {
        loop {
            self.line += 1;
            match self.inner.next() {
                None => return Err(self.err("unexpected end of file")),
                Some(l) => {
                    let l = l?;
                    if !l.trim().is_empty() {
                        return Ok(l);
                    }
                }
            }
        }
    }

    fn err(&self, msg: impl Into<String>) -> MeshError {
        MeshError::Parse {
            line: self.line,
            msg: msg.into(),
        }
    }

    fn section(&mut self, name: &str) -> Result<usize, MeshError> {
        let l = self.next_line()?;
        let mut it = l.split_whitespace();
        if it.next() != Some(name) {
            return Err(self.err(format!("expected section `{name}`")));
        }
        it.next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| self.err("missing section count"))
    }

    fn fields<T: std::str::FromStr>(&mut self, n: usize) -> Result<Vec<T>, MeshError> {
        let l = self.next_line()?;
        let v: Vec<T> = l
            .split_whitespace()
            .map(|s| s.parse())
            .collect::<Result<_, _>>()
            .map_err(|_| self.err("malformed number"))?;
        if v.len() != n {
            return Err(self.err(format!("expected {n} fields")));
        }
        Ok(v)
    }
}

pub fn read_mesh<R: BufRead>(r: R) -> Result<Mesh, MeshError> {
    let mut lines = Lines {
        inner: r.lines(),
        line: 0,
    };
    if lines.next_line()?.trim() != HEADER {
        return Err(lines.err("bad header"));
    }
    let nv = lines.section("vertices")?;
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let f: Vec<f64> = lines.fields(2)?;
        vertices.push([f[0], f[1]]);
    }
    let nt = lines.section("triangles")?;
    let mut triangles = Vec::with_capacity(nt);
    let mut regions = Vec::with_capacity(nt);
    for _ in 0..nt {
        let f: Vec<usize> = lines.fields(4)?;
        if f[..3].iter().any(|&v| v >= nv) {
            return Err(lines.err("vertex index out of range"));
        }
        triangles.push([f[0], f[1], f[2]]);
        regions.push(f[3]);
    }
    let nb = lines.section("boundary")?;
    let mut tags = HashMap::new();
    for _ in 0..nb {
        let f: Vec<usize> = lines.fields(3)?;
        let tag = u8::try_from(f[2])
            .ok()
            .and_then(BoundaryTag::from_code)
            .ok_or_else(|| lines.err("unknown boundary tag"))?;
        tags.insert(edge_key(f[0], f[1]), tag);
    }
    let refinement_edge = triangles
        .iter()
        .map(|t| {
            let len = |le: usize| {
                let a = vertices[t[(le + 1) % 3]];
                let b: [f64; 2] = vertices[t[(le + 2) % 3]];
                (a[0] - b[0]).hypot(a[1] - b[1])
            };
            (0..3).fold(0u8, |best, le| {
                if len(le) > len(best as usize) {
                    le as u8
                } else {
                    best
                }
            })
        })
        .collect();
    Mesh::from_parts(vertices, triangles, regions, refinement_edge, 0, &tags)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{generate_lshape_chessboard, BoundarySpec};

    #[test]
    fn export_import_preserves_mesh() {
        let (mesh, _) =
            generate_lshape_chessboard(4, 2, 1.0, &BoundarySpec::lshape_default()).unwrap();
        let mut buf = Vec::new();
        write_mesh(&mesh, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("brinkman-dg-mesh v1\nvertices "));
        let back = read_mesh(&buf[..]).unwrap();
        assert_eq!(back.vertices(), mesh.vertices());
        assert_eq!(back.triangles(), mesh.triangles());
        assert_eq!(back.regions(), mesh.regions());
        assert_eq!(back.boundary_tags(), mesh.boundary_tags());
        // structured meshes use the diagonal, which is also the longest edge
        assert_eq!(back.refinement_edges(), mesh.refinement_edges());
        let mut again = Vec::new();
        write_mesh(&back, &mut again).unwrap();
        assert_eq!(again, buf);
    }

    #[test]
    fn rejects_bad_header() {
        let err = read_mesh("mesh v0\n".as_bytes()).unwrap_err();
        assert!(matches!(err, MeshError::Parse { line: 1, .. }));
    }
}
