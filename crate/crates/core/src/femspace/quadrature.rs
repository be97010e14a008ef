use super::SpaceError;

/// Highest polynomial exactness offered by the rule generators.
pub const MAX_QUADRATURE_DEGREE: usize = 20;

/// Points and weights on a reference domain (the unit segment `[0,1]` or the
/// triangle `{x, y >= 0, x + y <= 1}`).
#[derive(Debug, Clone)]
pub struct QuadratureRule<const D: usize> {
    pub points: Vec<[f64; D]>,
    pub weights: Vec<f64>,
    pub degree: usize,
}

impl<const D: usize> QuadratureRule<D> {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn integrate(&self, f: impl Fn([f64; D]) -> f64) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(&p, &w)| w * f(p))
            .sum()
    }
}

/// Gauss-Legendre nodes and weights on `[-1, 1]` by Newton iteration on the
/// Legendre recurrence.
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, 0.0);
            for j in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * j + 1) as f64 * z * p1 - j as f64 * p2) / (j + 1) as f64;
            }
            dp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        // refresh the derivative at the converged root
        let (mut p0, mut p1) = (1.0, 0.0);
        for j in 0..n {
            let p2 = p1;
            p1 = p0;
            p0 = ((2 * j + 1) as f64 * z * p1 - j as f64 * p2) / (j + 1) as f64;
        }
        if n > 0 {
            dp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

fn check_degree(degree: usize) -> Result<(), SpaceError> {
    if degree > MAX_QUADRATURE_DEGREE {
        Err(SpaceError::UnsupportedQuadrature(degree))
    } else {
        Ok(())
    }
}

/// Gauss-Legendre rule on `[0, 1]` exact for polynomials of degree `degree`.
pub fn edge_quadrature(degree: usize) -> Result<QuadratureRule<1>, SpaceError> {
    check_degree(degree)?;
    let n = (degree + 2) / 2;
    let (x, w) = gauss_legendre(n);
    Ok(QuadratureRule {
        points: x.iter().map(|&t| [0.5 * (t + 1.0)]).collect(),
        weights: w.iter().map(|&t| 0.5 * t).collect(),
        degree,
    })
}

/// Collapsed tensor-product (Duffy) rule on the reference triangle, exact for
/// total degree `degree`. All weights are positive.
pub fn triangle_quadrature(degree: usize) -> Result<QuadratureRule<2>, SpaceError> {
    check_degree(degree)?;
    // the collapse Jacobian (1 - s) raises the degree in s by one
    let n = (degree + 3) / 2;
    let (x, w) = gauss_legendre(n);
    let mut points = Vec::with_capacity(n * n);
    let mut weights = Vec::with_capacity(n * n);
    for (&s, &ws) in x.iter().zip(&w) {
        let s = 0.5 * (s + 1.0);
        for (&t, &wt) in x.iter().zip(&w) {
            let t = 0.5 * (t + 1.0);
            points.push([s, t * (1.0 - s)]);
            weights.push(0.25 * ws * wt * (1.0 - s));
        }
    }
    Ok(QuadratureRule {
        points,
        weights,
        degree,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn factorial(n: u32) -> f64 {
        (1..=n).map(f64::from).product()
    }

    #[test]
    fn reference_measures() {
        for d in 0..=MAX_QUADRATURE_DEGREE {
            let t = triangle_quadrature(d).unwrap();
            assert!(t.weights.iter().all(|&w| w > 0.0));
            assert!((t.weights.iter().sum::<f64>() - 0.5).abs() < 1e-15);
            let e = edge_quadrature(d).unwrap();
            assert!(e.weights.iter().all(|&w| w > 0.0));
            assert!((e.weights.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn simple_integrals() {
        let t = triangle_quadrature(1).unwrap();
        assert!((t.integrate(|p| p[0] + p[1]) - 1.0 / 3.0).abs() < 1e-15);
        let e = edge_quadrature(2).unwrap();
        assert!((e.integrate(|p| p[0] * p[0]) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn monomial_exactness_sweep() {
        for d in 0..=MAX_QUADRATURE_DEGREE {
            let t = triangle_quadrature(d).unwrap();
            let e = edge_quadrature(d).unwrap();
            for a in 0..=d as u32 {
                // int_0^1 x^a = 1/(a+1)
                let exact = 1.0 / (a as f64 + 1.0);
                let got = e.integrate(|p| p[0].powi(a as i32));
                assert!((got - exact).abs() <= 1e-13 * exact, "edge d={d} a={a}");
                for b in 0..=(d as u32 - a) {
                    // int_T x^a y^b = a! b! / (a + b + 2)!
                    let exact = factorial(a) * factorial(b) / factorial(a + b + 2);
                    let got = t.integrate(|p| p[0].powi(a as i32) * p[1].powi(b as i32));
                    assert!(
                        (got - exact).abs() <= 1e-13 * exact,
                        "tri d={d} a={a} b={b}: {got} vs {exact}"
                    );
                }
            }
        }
    }

    #[test]
    fn unsupported_degree() {
        assert!(triangle_quadrature(MAX_QUADRATURE_DEGREE + 1).is_err());
        assert!(edge_quadrature(MAX_QUADRATURE_DEGREE + 1).is_err());
    }
}
