use std::collections::{BTreeSet, HashMap};

use super::{edge_key, Mesh, MeshError};

fn local_edge(t: &[usize; 3], le: usize) -> (usize, usize) {
    edge_key(t[(le + 1) % 3], t[(le + 2) % 3])
}

/// Newest-vertex bisection of the marked elements plus the closure needed to
/// keep the mesh conforming.
///
/// Each marked element is bisected at least once across its refinement edge.
/// Any element owning a split edge that is not its refinement edge has its
/// refinement edge split too, until no hanging node remains. Children inherit
/// the parent's region, boundary halves inherit the parent facet's tag, and
/// the result is nested in the input. An empty `marked` set returns a copy of
/// the input.
pub fn refine(mesh: &Mesh, marked: &[usize]) -> Result<Mesh, MeshError> {
    let ne = mesh.num_elements();
    if let Some(&bad) = marked.iter().find(|&&e| e >= ne) {
        return Err(MeshError::ElementOutOfRange(bad, ne));
    }
    if marked.is_empty() {
        return Ok(mesh.clone());
    }
    let tris = mesh.triangles();
    let ref_edge = mesh.refinement_edges();

    let mut split: BTreeSet<(usize, usize)> = marked
        .iter()
        .map(|&e| local_edge(&tris[e], ref_edge[e] as usize))
        .collect();
    // conformity closure
    loop {
        let mut changed = false;
        for (e, t) in tris.iter().enumerate() {
            let re = local_edge(t, ref_edge[e] as usize);
            if split.contains(&re) {
                continue;
            }
            if (0..3).any(|le| split.contains(&local_edge(t, le))) {
                split.insert(re);
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let mut vertices = mesh.vertices().to_vec();
    let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
    for &(a, b) in &split {
        let pa = vertices[a];
        let pb = vertices[b];
        midpoint.insert((a, b), vertices.len());
        vertices.push([0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])]);
    }

    let mut triangles = Vec::with_capacity(ne + 2 * split.len());
    let mut regions = Vec::with_capacity(triangles.capacity());
    let mut new_ref = Vec::with_capacity(triangles.capacity());
    let mut stack = Vec::new();
    for e in 0..ne {
        stack.push((tris[e], ref_edge[e] as usize));
        while let Some((t, re)) = stack.pop() {
            match midpoint.get(&local_edge(&t, re)) {
                None => {
                    triangles.push(t);
                    regions.push(mesh.regions()[e]);
                    new_ref.push(re as u8);
                }
                Some(&m) => {
                    // rotate so the refinement edge is opposite local vertex 0
                    let v0 = t[re];
                    let v1 = t[(re + 1) % 3];
                    let v2 = t[(re + 2) % 3];
                    // children (v0, v1, m) and (v0, m, v2); m is the newest vertex
                    // and the edge opposite it is each child's refinement edge.
                    // Push in reverse so the first child is emitted first.
                    stack.push(([v0, m, v2], 1));
                    stack.push(([v0, v1, m], 2));
                }
            }
        }
    }

    let mut tags = HashMap::new();
    for (key, tag) in mesh.boundary_tags() {
        match midpoint.get(&key) {
            Some(&m) => {
                tags.insert(edge_key(key.0, m), tag);
                tags.insert(edge_key(m, key.1), tag);
            }
            None => {
                tags.insert(key, tag);
            }
        }
    }

    Mesh::from_parts(
        vertices,
        triangles,
        regions,
        new_ref,
        mesh.generation() + 1,
        &tags,
    )
}
