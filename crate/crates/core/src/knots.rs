//! Extended knot sequences, B-spline collocation, derivative transforms and
//! Gram matrices.
//!
//! Storage convention: the extended sequence `λ_{-k}, …, λ_{g+k+1}` is kept
//! 0-based, so `values[i + k]` holds `λ_i`. Basis function `B_i` (mathematical index
//! `i = -k, …, g`) lives in column `i + k` of a collocation matrix and is
//! supported on `[values[i+k], values[i+2k+1]]`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::CompositeRule;

/// Relative slack for points that fall outside the domain by rounding only.
const DOMAIN_SLACK: f64 = 1e-12;

/// Domain, interior knots and degree for one axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnotConfig {
    pub lo: f64,
    pub hi: f64,
    pub interior: Vec<f64>,
    pub degree: usize,
}

impl KnotConfig {
    pub fn new(lo: f64, hi: f64, interior: Vec<f64>, degree: usize) -> Result<Self> {
        let cfg = Self {
            lo,
            hi,
            interior,
            degree,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// `g` equispaced interior knots on `[lo, hi]`.
    pub fn uniform(lo: f64, hi: f64, g: usize, degree: usize) -> Result<Self> {
        let step = (hi - lo) / (g + 1) as f64;
        let interior = (1..=g).map(|i| lo + step * i as f64).collect();
        Self::new(lo, hi, interior, degree)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite()) || self.lo >= self.hi {
            return Err(Error::InvalidKnots(format!(
                "domain [{}, {}] is empty or not finite",
                self.lo, self.hi
            )));
        }
        let mut prev = self.lo;
        for (i, &t) in self.interior.iter().enumerate() {
            if !(t > self.lo && t < self.hi) {
                return Err(Error::InvalidKnots(format!(
                    "interior knot {i} = {t} is not inside ({}, {})",
                    self.lo, self.hi
                )));
            }
            if t <= prev {
                return Err(Error::InvalidKnots(format!(
                    "interior knots must be strictly increasing (knot {i} = {t} after {prev})"
                )));
            }
            prev = t;
        }
        Ok(())
    }

    /// Number of interior knots.
    pub fn g(&self) -> usize {
        self.interior.len()
    }

    /// Dimension of the B-spline space, `g + k + 1`.
    pub fn n_basis(&self) -> usize {
        self.g() + self.degree + 1
    }

    /// `λ_0 = a, λ_1, …, λ_g, λ_{g+1} = b`.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut b = Vec::with_capacity(self.g() + 2);
        b.push(self.lo);
        b.extend_from_slice(&self.interior);
        b.push(self.hi);
        b
    }
}

/// Knot sequence with `degree + 1` coincident copies of each endpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedKnots {
    values: Vec<f64>,
    degree: usize,
}

impl ExtendedKnots {
    /// Wraps a raw knot vector, checking the clamped structure.
    pub fn from_values(values: Vec<f64>, degree: usize) -> Result<Self> {
        let len = values.len();
        if len < 2 * degree + 2 {
            return Err(Error::InvalidKnots(format!(
                "{len} knots are too few for degree {degree}"
            )));
        }
        if values.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidKnots("knots must be non-decreasing".into()));
        }
        let lo = values[0];
        let hi = values[len - 1];
        if values[..=degree].iter().any(|&v| v != lo)
            || values[len - degree - 1..].iter().any(|&v| v != hi)
        {
            return Err(Error::InvalidKnots(format!(
                "boundary knots must have multiplicity {}",
                degree + 1
            )));
        }
        let inner = &values[degree + 1..len - degree - 1];
        if inner.windows(2).any(|w| w[1] <= w[0]) || inner.iter().any(|&v| v <= lo || v >= hi) {
            return Err(Error::InvalidKnots(
                "interior knots must be simple and strictly inside the domain".into(),
            ));
        }
        Ok(Self { values, degree })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn lo(&self) -> f64 {
        self.values[0]
    }

    pub fn hi(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    /// Number of interior knots `g`.
    pub fn g(&self) -> usize {
        self.values.len() - 2 * self.degree - 2
    }

    /// Number of B-splines, `g + k + 1`.
    pub fn n_basis(&self) -> usize {
        self.values.len() - self.degree - 1
    }

    /// Distinct knot values `a, λ_1, …, λ_g, b`.
    pub fn breakpoints(&self) -> Vec<f64> {
        let k = self.degree;
        self.values[k..self.values.len() - k].to_vec()
    }

    /// Degree `k - p` sequence on the same breakpoints, i.e. the knots of the
    /// basis `B_{k+1-p}` that carries `p`-th derivatives.
    pub fn reduced(&self, p: usize) -> Result<Self> {
        if p > self.degree {
            return Err(Error::DerivativeOrder {
                order: p,
                degree: self.degree,
            });
        }
        Ok(Self {
            values: self.values[p..self.values.len() - p].to_vec(),
            degree: self.degree - p,
        })
    }

    /// Support `[lo, hi]` of basis function in storage column `j`.
    pub fn support(&self, j: usize) -> (f64, f64) {
        (self.values[j], self.values[j + self.degree + 1])
    }

    fn check_point(&self, x: f64) -> Result<f64> {
        let (lo, hi) = (self.lo(), self.hi());
        let slack = DOMAIN_SLACK * (hi - lo);
        if !x.is_finite() || x < lo - slack || x > hi + slack {
            return Err(Error::OutOfDomain { value: x, lo, hi });
        }
        Ok(x.clamp(lo, hi))
    }

    /// Index `μ` with `t[μ] <= x < t[μ+1]`; the last non-empty span is closed
    /// on the right so that `x = b` is covered.
    fn find_span(&self, x: f64) -> usize {
        let t = &self.values;
        let d = self.degree;
        let n = self.n_basis();
        if x >= t[n] {
            return n - 1;
        }
        // first index in [d, n) whose left end exceeds x, minus one
        let (mut lo, mut hi) = (d, n);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if x < t[mid] {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        lo
    }

    /// Values of the `degree + 1` B-splines that may be non-zero at `x`, and
    /// the storage index of the first of them. `x` must already be in range.
    fn nonzero_basis(&self, x: f64, out: &mut [f64]) -> usize {
        let t = &self.values;
        let d = self.degree;
        let span = self.find_span(x);
        let mut left = vec![0.0; d + 1];
        let mut right = vec![0.0; d + 1];
        out[0] = 1.0;
        for j in 1..=d {
            left[j] = x - t[span + 1 - j];
            right[j] = t[span + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let tmp = out[r] / (right[r + 1] + left[j - r]);
                out[r] = saved + right[r + 1] * tmp;
                saved = left[j - r] * tmp;
            }
            out[j] = saved;
        }
        span - d
    }

    /// Row of all `n_basis` B-spline values at `x`.
    pub fn basis_row(&self, x: f64) -> Result<Vec<f64>> {
        let x = self.check_point(x)?;
        let mut local = vec![0.0; self.degree + 1];
        let first = self.nonzero_basis(x, &mut local);
        let mut row = vec![0.0; self.n_basis()];
        row[first..first + local.len()].copy_from_slice(&local);
        Ok(row)
    }
}

/// Builds `λ_{-k} = … = λ_0 = a < λ_1 < … < λ_g < b = λ_{g+1} = … = λ_{g+k+1}`.
pub fn extend_knots(cfg: &KnotConfig) -> Result<ExtendedKnots> {
    cfg.validate()?;
    let k = cfg.degree;
    let mut values = Vec::with_capacity(cfg.g() + 2 * k + 2);
    values.extend(std::iter::repeat_n(cfg.lo, k + 1));
    values.extend_from_slice(&cfg.interior);
    values.extend(std::iter::repeat_n(cfg.hi, k + 1));
    Ok(ExtendedKnots { values, degree: k })
}

/// B-spline values at a set of abscissae, one row per point.
#[derive(Debug, Clone)]
pub struct CollocationMatrix {
    pub entries: DMatrix<f64>,
    pub points: Vec<f64>,
}

/// Cox–de Boor evaluation of the full basis at every point.
pub fn eval_bspline_basis(knots: &ExtendedKnots, points: &[f64]) -> Result<CollocationMatrix> {
    let n = knots.n_basis();
    let mut entries = DMatrix::zeros(points.len(), n);
    let mut local = vec![0.0; knots.degree + 1];
    for (r, &x) in points.iter().enumerate() {
        let x = knots.check_point(x)?;
        let first = knots.nonzero_basis(x, &mut local);
        for (c, &v) in local.iter().enumerate() {
            entries[(r, first + c)] = v;
        }
    }
    Ok(CollocationMatrix {
        entries,
        points: points.to_vec(),
    })
}

/// `S^p = D^p L^p ⋯ D^1 L^1`, mapping coefficients of `B_{k+1}` to the
/// coefficients of the `p`-th derivative in the reduced basis `B_{k+1-p}`.
pub fn derivative_transform(knots: &ExtendedKnots, p: usize) -> Result<DMatrix<f64>> {
    let k = knots.degree;
    if p > 0 && p >= k {
        return Err(Error::DerivativeOrder {
            order: p,
            degree: k,
        });
    }
    let t = &knots.values;
    let n = knots.n_basis();
    let mut s = DMatrix::identity(n, n);
    for j in 1..=p {
        let rows = n - j;
        let mut step = DMatrix::zeros(rows, rows + 1);
        let scale = (k + 1 - j) as f64;
        for a in 0..rows {
            let d = t[a + k + 1] - t[a + j];
            step[(a, a)] = -scale / d;
            step[(a, a + 1)] = scale / d;
        }
        s = step * s;
    }
    Ok(s)
}

/// `m_ij = ∫ B_i^{k+1-p} B_j^{k+1-p}` over the domain, exact by per-span
/// Gauss–Legendre quadrature.
pub fn gram_matrix(knots: &ExtendedKnots, derivative_order: usize) -> Result<DMatrix<f64>> {
    let reduced = knots.reduced(derivative_order)?;
    let rule = CompositeRule::exact_for(&reduced.breakpoints(), 2 * reduced.degree);
    let coll = eval_bspline_basis(&reduced, &rule.points)?.entries;
    let mut weighted = coll.clone();
    for (r, &w) in rule.weights.iter().enumerate() {
        weighted.row_mut(r).scale_mut(w);
    }
    let m = coll.transpose() * weighted;
    // symmetrize away rounding
    Ok((&m + m.transpose()) * 0.5)
}

/// Values of the `p`-th derivative of `B_{k+1}ᵀ c` at the given points.
pub fn eval_spline_derivative(
    knots: &ExtendedKnots,
    coeffs: &[f64],
    p: usize,
    points: &[f64],
) -> Result<Vec<f64>> {
    if coeffs.len() != knots.n_basis() {
        return Err(Error::DimensionMismatch(format!(
            "{} coefficients for {} basis functions",
            coeffs.len(),
            knots.n_basis()
        )));
    }
    let s = derivative_transform(knots, p)?;
    let c = nalgebra::DVector::from_column_slice(coeffs);
    let dc = s * c;
    let coll = eval_bspline_basis(&knots.reduced(p)?, points)?;
    Ok((coll.entries * dc).iter().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn reference_cfg() -> KnotConfig {
        KnotConfig::new(0.0, 1.0, vec![0.25, 0.5, 0.75], 2).unwrap()
    }

    #[test]
    fn extend_knots_examples() {
        let ek = extend_knots(&reference_cfg()).unwrap();
        assert_eq!(
            ek.values(),
            &[0.0, 0.0, 0.0, 0.25, 0.5, 0.75, 1.0, 1.0, 1.0]
        );

        let ek = extend_knots(&KnotConfig::new(0.0, 1.0, vec![], 0).unwrap()).unwrap();
        assert_eq!(ek.values(), &[0.0, 1.0]);

        let ek = extend_knots(&KnotConfig::new(-1.0, 1.0, vec![0.0], 3).unwrap()).unwrap();
        assert_eq!(
            ek.values(),
            &[-1.0, -1.0, -1.0, -1.0, 0.0, 1.0, 1.0, 1.0, 1.0]
        );
    }

    #[test]
    fn knot_config_errors() {
        assert!(KnotConfig::new(0.0, 1.0, vec![0.5, 0.25], 2).is_err());
        assert!(KnotConfig::new(0.0, 1.0, vec![0.5, 0.5], 2).is_err());
        assert!(KnotConfig::new(0.0, 1.0, vec![0.0], 2).is_err());
        assert!(KnotConfig::new(0.0, 1.0, vec![1.5], 2).is_err());
        assert!(KnotConfig::new(1.0, 1.0, vec![], 2).is_err());
    }

    #[test]
    fn from_values_checks_structure() {
        assert!(ExtendedKnots::from_values(vec![0.0, 0.0, 0.5, 1.0, 1.0], 1).is_ok());
        assert!(ExtendedKnots::from_values(vec![0.0, 0.5, 1.0, 1.0], 1).is_err());
        assert!(ExtendedKnots::from_values(vec![0.0, 0.0, 0.5, 0.5, 1.0, 1.0], 1).is_err());
    }

    #[test]
    fn degree_zero_single_constant() {
        let ek = ExtendedKnots::from_values(vec![0.0, 1.0], 0).unwrap();
        let c = eval_bspline_basis(&ek, &[0.5, 0.0, 1.0]).unwrap();
        assert_eq!(c.entries.ncols(), 1);
        assert!(c.entries.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn left_boundary_row_is_first_unit_vector() {
        let ek = extend_knots(&reference_cfg()).unwrap();
        let row = ek.basis_row(0.0).unwrap();
        assert_eq!(row, vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let row = ek.basis_row(1.0).unwrap();
        assert_eq!(row, vec![0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn points_on_interior_knots_use_right_span() {
        // Degree 0: the indicator of [0.25, 0.5) must be 1 at 0.25.
        let ek = extend_knots(&KnotConfig::new(0.0, 1.0, vec![0.25, 0.5], 0).unwrap()).unwrap();
        assert_eq!(ek.basis_row(0.25).unwrap(), vec![0.0, 1.0, 0.0]);
        assert_eq!(ek.basis_row(0.5).unwrap(), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn out_of_domain_is_rejected() {
        let ek = extend_knots(&reference_cfg()).unwrap();
        assert!(matches!(
            eval_bspline_basis(&ek, &[1.1]),
            Err(Error::OutOfDomain { .. })
        ));
        assert!(eval_bspline_basis(&ek, &[f64::NAN]).is_err());
        // rounding-level overshoot is clamped
        assert!(eval_bspline_basis(&ek, &[1.0 + 1e-15]).is_ok());
    }

    #[test]
    fn partition_of_unity_random_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for k in 0..=4 {
            let cfg = KnotConfig::new(-2.0, 3.0, vec![-1.5, -0.2, 0.1, 2.0], k).unwrap();
            let ek = extend_knots(&cfg).unwrap();
            let pts: Vec<f64> = (0..1000).map(|_| rng.random_range(-2.0..=3.0)).collect();
            let c = eval_bspline_basis(&ek, &pts).unwrap();
            for r in 0..pts.len() {
                let s: f64 = c.entries.row(r).sum();
                assert!((s - 1.0).abs() < 1e-12);
                assert!(c.entries.row(r).iter().all(|&v| v >= 0.0));
            }
        }
    }

    #[test]
    fn local_support() {
        let ek = extend_knots(&reference_cfg()).unwrap();
        let eps = 1e-9;
        for j in 0..ek.n_basis() {
            let (lo, hi) = ek.support(j);
            for x in [lo - eps, hi + eps] {
                if !(0.0..=1.0).contains(&x) {
                    continue;
                }
                assert_eq!(ek.basis_row(x).unwrap()[j], 0.0, "B_{j} at {x}");
            }
        }
    }

    #[test]
    fn derivative_transform_examples() {
        let ek = extend_knots(&reference_cfg()).unwrap();
        let s0 = derivative_transform(&ek, 0).unwrap();
        assert_eq!(s0, DMatrix::identity(6, 6));

        let quad = ExtendedKnots::from_values(vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0], 2).unwrap();
        let s = derivative_transform(&quad, 1).unwrap();
        assert_eq!(
            s,
            DMatrix::from_row_slice(2, 3, &[-2.0, 2.0, 0.0, 0.0, -2.0, 2.0])
        );
        let lin = ExtendedKnots::from_values(vec![0.0, 0.0, 1.0, 1.0], 1).unwrap();
        assert!(derivative_transform(&lin, 1).is_err());

        let s1 = derivative_transform(&ek, 1).unwrap();
        let ones = nalgebra::DVector::from_element(6, 1.0);
        assert!((s1 * ones).amax() < 1e-12);

        assert!(derivative_transform(&ek, 2).is_err());
    }

    #[test]
    fn derivative_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for k in 2..=4 {
            let cfg = KnotConfig::new(0.0, 2.0, vec![0.3, 0.7, 1.1, 1.6], k).unwrap();
            let ek = extend_knots(&cfg).unwrap();
            let c: Vec<f64> = (0..ek.n_basis())
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();
            let spline = |x: f64| -> f64 {
                ek.basis_row(x)
                    .unwrap()
                    .iter()
                    .zip(&c)
                    .map(|(b, c)| b * c)
                    .sum()
            };
            let pts: Vec<f64> = (0..50).map(|_| rng.random_range(0.05..1.95)).collect();
            let d = eval_spline_derivative(&ek, &c, 1, &pts).unwrap();
            let h = 1e-6;
            for (x, dv) in pts.iter().zip(&d) {
                // keep the stencil within one polynomial piece
                if cfg.breakpoints().iter().any(|b| (b - x).abs() < 2.0 * h) {
                    continue;
                }
                let fd = (spline(x + h) - spline(x - h)) / (2.0 * h);
                assert!(
                    (fd - dv).abs() <= 1e-6 * dv.abs().max(1.0),
                    "k={k} x={x}: {fd} vs {dv}"
                );
            }
        }
    }

    #[test]
    fn gram_examples() {
        let ek = ExtendedKnots::from_values(vec![0.0, 1.0], 0).unwrap();
        let m = gram_matrix(&ek, 0).unwrap();
        assert!((m[(0, 0)] - 1.0).abs() < 1e-15);

        let lin = ExtendedKnots::from_values(vec![0.0, 0.0, 1.0, 1.0], 1).unwrap();
        let m = gram_matrix(&lin, 0).unwrap();
        let expect = [[1.0 / 3.0, 1.0 / 6.0], [1.0 / 6.0, 1.0 / 3.0]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((m[(i, j)] - expect[i][j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn gram_matches_adaptive_quadrature() {
        let cfg = KnotConfig::new(0.0, 1.0, vec![0.1, 0.45, 0.6], 3).unwrap();
        let ek = extend_knots(&cfg).unwrap();
        for p in 0..=2 {
            let m = gram_matrix(&ek, p).unwrap();
            let red = ek.reduced(p).unwrap();
            for i in 0..red.n_basis() {
                for j in 0..red.n_basis() {
                    let f = |x: f64| {
                        let r = red.basis_row(x).unwrap();
                        r[i] * r[j]
                    };
                    let mut oracle = 0.0;
                    for w in cfg.breakpoints().windows(2) {
                        oracle += adaptive_simpson(&f, w[0], w[1], 1e-14, 30);
                    }
                    assert!((m[(i, j)] - oracle).abs() < 1e-10, "p={p} ({i},{j})");
                }
            }
            let eig = m.clone().symmetric_eigenvalues();
            assert!(eig.min() > -1e-12);
        }
    }

    fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
        fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
            (b - a) / 6.0 * (f(a) + 4.0 * f(0.5 * (a + b)) + f(b))
        }
        fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, whole: f64, tol: f64, depth: u32) -> f64 {
            let m = 0.5 * (a + b);
            let l = simpson(f, a, m);
            let r = simpson(f, m, b);
            if depth == 0 || (l + r - whole).abs() <= 15.0 * tol {
                return l + r + (l + r - whole) / 15.0;
            }
            rec(f, a, m, l, tol / 2.0, depth - 1) + rec(f, m, b, r, tol / 2.0, depth - 1)
        }
        rec(f, a, b, simpson(f, a, b), tol, depth)
    }

    proptest! {
        #[test]
        fn rows_sum_to_one(x in 0.0f64..=1.0, k in 0usize..5) {
            let cfg = KnotConfig::new(0.0, 1.0, vec![0.2, 0.25, 0.9], k).unwrap();
            let ek = extend_knots(&cfg).unwrap();
            let row = ek.basis_row(x).unwrap();
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
