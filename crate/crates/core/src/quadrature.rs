//! Gauss–Legendre rules and their composite form over spline breakpoints.
//!
//! Every integral of a piecewise polynomial in this crate goes through
//! [`CompositeRule`]: one Gauss–Legendre rule per knot span, with enough
//! nodes to integrate the span polynomial exactly.

use std::f64::consts::PI;

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`.
///
/// Nodes are returned in increasing order.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "a quadrature rule needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        // Tricomi's approximation as the starting guess, then Newton on P_n.
        let mut x = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        dp = if d != 0.0 { d } else { dp };
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Number of Gauss–Legendre nodes that integrates a polynomial of the given
/// degree exactly, plus one spare node.
pub fn nodes_for_degree(poly_degree: usize) -> usize {
    (poly_degree + 1).div_ceil(2) + 1
}

/// Composite Gauss–Legendre rule: one rule per interval between consecutive
/// distinct breakpoints.
#[derive(Debug, Clone)]
pub struct CompositeRule {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl CompositeRule {
    /// Builds the rule over the intervals `[b[i], b[i+1]]` of the given
    /// breakpoints. Zero-length intervals are skipped.
    pub fn new(breakpoints: &[f64], nodes_per_span: usize) -> Self {
        let (ref_nodes, ref_weights) = gauss_legendre(nodes_per_span);
        let mut points = Vec::with_capacity(breakpoints.len() * nodes_per_span);
        let mut weights = Vec::with_capacity(points.capacity());
        for w in breakpoints.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            if hi <= lo {
                continue;
            }
            let half = 0.5 * (hi - lo);
            let mid = 0.5 * (hi + lo);
            for (t, wt) in ref_nodes.iter().zip(&ref_weights) {
                points.push(mid + half * t);
                weights.push(half * wt);
            }
        }
        Self { points, weights }
    }

    /// Exact for piecewise polynomials of degree `poly_degree` between the
    /// breakpoints.
    pub fn exact_for(breakpoints: &[f64], poly_degree: usize) -> Self {
        Self::new(breakpoints, nodes_for_degree(poly_degree))
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_sum_to_two() {
        for n in 1..=20 {
            let (_, w) = gauss_legendre(n);
            let s: f64 = w.iter().sum();
            assert!((s - 2.0).abs() < 1e-14, "n={n}: {s}");
        }
    }

    #[test]
    fn exact_for_polynomials_up_to_2n_minus_1() {
        for n in 1..=12 {
            let (x, w) = gauss_legendre(n);
            for deg in 0..2 * n {
                let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
                let exact = if deg % 2 == 1 {
                    0.0
                } else {
                    2.0 / (deg as f64 + 1.0)
                };
                assert!((q - exact).abs() < 1e-13, "n={n} deg={deg}: {q} vs {exact}");
            }
        }
    }

    #[test]
    fn three_point_rule_matches_closed_form() {
        let (x, w) = gauss_legendre(3);
        let r = (0.6f64).sqrt();
        assert!((x[0] + r).abs() < 1e-15 && x[1].abs() < 1e-15 && (x[2] - r).abs() < 1e-15);
        assert!((w[0] - 5.0 / 9.0).abs() < 1e-15 && (w[1] - 8.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn composite_rule_skips_repeated_breakpoints() {
        let rule = CompositeRule::new(&[0.0, 0.0, 0.5, 0.5, 1.0], 2);
        assert_eq!(rule.len(), 4);
        let v = rule.integrate(|x| x * x);
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
}
