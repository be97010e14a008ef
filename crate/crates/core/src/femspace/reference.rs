use super::SpaceError;

pub const MAX_DEGREE: usize = 4;

/// Dimension of `P_k` in two variables.
pub fn dim_pk(k: usize) -> usize {
    (k + 1) * (k + 2) / 2
}

/// Nodal Lagrange basis of `P_k` on the reference triangle.
///
/// Nodes are the equispaced lattice points, ordered vertices
/// `(0,0), (1,0), (0,1)` first, then the interior points of edges 0, 1, 2
/// (edge `e` is opposite vertex `e`, traversed counter-clockwise), then the
/// interior points. Degree 0 uses the single barycenter node; it serves as
/// the piecewise-constant pressure space.
///
/// Basis functions are evaluated with the barycentric product formula
/// `phi = prod_c S_{i_c}(k * lambda_c)`, `S_n(t) = prod_{m<n} (t - m) / (m + 1)`,
/// which avoids an ill-conditioned monomial Vandermonde solve.
#[derive(Debug, Clone)]
pub struct ReferenceElement {
    degree: usize,
    nodes: Vec<[f64; 2]>,
    // barycentric lattice index of each node (for lambda_0, lambda_1, lambda_2)
    multi: Vec<[usize; 3]>,
}

const BARY_GRAD: [[f64; 2]; 3] = [[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]];

fn lattice_nodes(k: usize) -> Vec<[usize; 2]> {
    let mut nodes = vec![[0, 0], [k, 0], [0, k]];
    let corners = [[0, 0], [k, 0], [0, k]];
    for e in 0..3 {
        let a: [usize; 2] = corners[(e + 1) % 3];
        let b: [usize; 2] = corners[(e + 2) % 3];
        for s in 1..k {
            // a + s/k (b - a) in lattice units
            let p = [
                (a[0] * (k - s) + b[0] * s) / k,
                (a[1] * (k - s) + b[1] * s) / k,
            ];
            nodes.push(p);
        }
    }
    for j in 1..k {
        for i in 1..k - j {
            nodes.push([i, j]);
        }
    }
    nodes
}

/// `(S_n(t), S_n'(t), S_n''(t))`
fn silvester(n: usize, t: f64) -> [f64; 3] {
    let mut s = [1.0, 0.0, 0.0];
    for m in 0..n {
        let inv = 1.0 / (m as f64 + 1.0);
        let f = (t - m as f64) * inv;
        s = [s[0] * f, s[1] * f + s[0] * inv, s[2] * f + 2.0 * s[1] * inv];
    }
    s
}

impl ReferenceElement {
    pub fn new(degree: usize) -> Result<Self, SpaceError> {
        if degree > MAX_DEGREE {
            return Err(SpaceError::UnsupportedDegree(degree));
        }
        let (nodes, multi) = if degree == 0 {
            (vec![[1.0 / 3.0, 1.0 / 3.0]], vec![[0, 0, 0]])
        } else {
            let lattice = lattice_nodes(degree);
            let k = degree as f64;
            (
                lattice.iter().map(|p| [p[0] as f64 / k, p[1] as f64 / k]).collect(),
                lattice
                    .iter()
                    .map(|p| [degree - p[0] - p[1], p[0], p[1]])
                    .collect(),
            )
        };
        debug_assert_eq!(nodes.len(), dim_pk(degree));
        Ok(Self {
            degree,
            nodes,
            multi,
        })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn dim(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    fn factors(&self, p: [f64; 2], i: usize) -> [[f64; 3]; 3] {
        let k = self.degree as f64;
        let lambda = [1.0 - p[0] - p[1], p[0], p[1]];
        let m = self.multi[i];
        [0, 1, 2].map(|c| silvester(m[c], k * lambda[c]))
    }

    pub fn values_into(&self, p: [f64; 2], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let f = self.factors(p, i);
            *o = f[0][0] * f[1][0] * f[2][0];
        }
    }

    pub fn values(&self, p: [f64; 2]) -> Vec<f64> {
        let mut v = vec![0.0; self.dim()];
        self.values_into(p, &mut v);
        v
    }

    /// Reference gradients `(d/dx, d/dy)` of every basis function at `p`.
    pub fn gradients(&self, p: [f64; 2]) -> Vec<[f64; 2]> {
        let k = self.degree as f64;
        (0..self.dim())
            .map(|i| {
                let f = self.factors(p, i);
                let mut g = [0.0; 2];
                for c in 0..3 {
                    let rest = f[(c + 1) % 3][0] * f[(c + 2) % 3][0];
                    for d in 0..2 {
                        g[d] += k * f[c][1] * BARY_GRAD[c][d] * rest;
                    }
                }
                g
            })
            .collect()
    }

    /// Reference second derivatives `(xx, xy, yy)` at `p`.
    pub fn hessians(&self, p: [f64; 2]) -> Vec<[f64; 3]> {
        let k2 = (self.degree * self.degree) as f64;
        let pairs = [(0, 0), (0, 1), (1, 1)];
        (0..self.dim())
            .map(|i| {
                let f = self.factors(p, i);
                let mut h = [0.0; 3];
                for c in 0..3 {
                    for c2 in 0..3 {
                        let (coef, rest) = if c == c2 {
                            (f[c][2], f[(c + 1) % 3][0] * f[(c + 2) % 3][0])
                        } else {
                            (f[c][1] * f[c2][1], f[3 - c - c2][0])
                        };
                        for (slot, &(a, b)) in pairs.iter().enumerate() {
                            h[slot] += k2 * coef * BARY_GRAD[c][a] * BARY_GRAD[c2][b] * rest;
                        }
                    }
                }
                h
            })
            .collect()
    }
}

fn velocity_degree(k: usize) -> Result<(), SpaceError> {
    if (1..=MAX_DEGREE).contains(&k) {
        Ok(())
    } else {
        Err(SpaceError::UnsupportedDegree(k))
    }
}

/// `table[i][q]` = basis function `i` of `P_k` at `pts[q]`, for `1 <= k <= 4`.
pub fn eval_basis(k: usize, pts: &[[f64; 2]]) -> Result<Vec<Vec<f64>>, SpaceError> {
    velocity_degree(k)?;
    let el = ReferenceElement::new(k)?;
    let by_point: Vec<Vec<f64>> = pts.iter().map(|&p| el.values(p)).collect();
    Ok((0..el.dim())
        .map(|i| by_point.iter().map(|v| v[i]).collect())
        .collect())
}

/// `table[i][q]` = reference gradient of basis function `i` at `pts[q]`.
pub fn eval_basis_grad(k: usize, pts: &[[f64; 2]]) -> Result<Vec<Vec<[f64; 2]>>, SpaceError> {
    velocity_degree(k)?;
    let el = ReferenceElement::new(k)?;
    let by_point: Vec<Vec<[f64; 2]>> = pts.iter().map(|&p| el.gradients(p)).collect();
    Ok((0..el.dim())
        .map(|i| by_point.iter().map(|v| v[i]).collect())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    const PTS: [[f64; 2]; 5] = [
        [0.1, 0.2],
        [1.0 / 3.0, 1.0 / 3.0],
        [0.7, 0.05],
        [0.0, 0.9],
        [0.25, 0.6],
    ];

    #[test]
    fn p1_values() {
        let t = eval_basis(1, &[[1.0 / 3.0, 1.0 / 3.0], [0.0, 0.0]]).unwrap();
        for row in &t {
            assert!((row[0] - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!([t[0][1], t[1][1], t[2][1]], [1.0, 0.0, 0.0]);
    }

    #[test]
    fn p1_gradients_are_constant() {
        let g = eval_basis_grad(1, &PTS).unwrap();
        let expect = [[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]];
        for (i, row) in g.iter().enumerate() {
            for v in row {
                assert!((v[0] - expect[i][0]).abs() < 1e-14);
                assert!((v[1] - expect[i][1]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn nodal_property_and_dimension() {
        for k in 0..=MAX_DEGREE {
            let el = ReferenceElement::new(k).unwrap();
            assert_eq!(el.dim(), dim_pk(k));
            for (j, &p) in el.nodes().iter().enumerate() {
                let v = el.values(p);
                for (i, vi) in v.iter().enumerate() {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((vi - expect).abs() < 1e-12, "k={k} i={i} j={j}");
                }
            }
        }
    }

    #[test]
    fn partition_of_unity() {
        for k in 0..=MAX_DEGREE {
            let el = ReferenceElement::new(k).unwrap();
            for &p in &PTS {
                let s: f64 = el.values(p).iter().sum();
                assert!((s - 1.0).abs() < 1e-14, "k={k}: {s}");
                let g = el.gradients(p);
                let gx: f64 = g.iter().map(|v| v[0]).sum();
                let gy: f64 = g.iter().map(|v| v[1]).sum();
                assert!(gx.abs() < 1e-13 && gy.abs() < 1e-13, "k={k}: {gx} {gy}");
                let h = el.hessians(p);
                for c in 0..3 {
                    assert!(h.iter().map(|v| v[c]).sum::<f64>().abs() < 1e-11);
                }
            }
        }
    }

    #[test]
    fn gradients_match_central_differences() {
        let step = 1e-6;
        for k in 1..=MAX_DEGREE {
            let el = ReferenceElement::new(k).unwrap();
            for &p in &PTS {
                let g = el.gradients(p);
                let fd = |d: [f64; 2]| {
                    let plus = el.values([p[0] + d[0], p[1] + d[1]]);
                    let minus = el.values([p[0] - d[0], p[1] - d[1]]);
                    plus.iter()
                        .zip(minus)
                        .map(|(a, b)| (a - b) / (2.0 * step))
                        .collect::<Vec<_>>()
                };
                let dx = fd([step, 0.0]);
                let dy = fd([0.0, step]);
                for i in 0..el.dim() {
                    assert!((g[i][0] - dx[i]).abs() <= 1e-6, "k={k} i={i}");
                    assert!((g[i][1] - dy[i]).abs() <= 1e-6, "k={k} i={i}");
                }
                let h = el.hessians(p);
                let gp = el.gradients([p[0] + step, p[1]]);
                let gm = el.gradients([p[0] - step, p[1]]);
                for i in 0..el.dim() {
                    let hxx = (gp[i][0] - gm[i][0]) / (2.0 * step);
                    let hxy = (gp[i][1] - gm[i][1]) / (2.0 * step);
                    assert!((h[i][0] - hxx).abs() < 1e-5 && (h[i][1] - hxy).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn degree_range() {
        assert!(eval_basis(0, &PTS).is_err());
        assert!(eval_basis(5, &PTS).is_err());
        assert!(ReferenceElement::new(5).is_err());
    }
}
