//! Clr transformation between densities and zero-integral functions, and the
//! Bayes-space operations routed through it.
//!
//! Grids carry a [`Mesh`] with quadrature weights. Histogram and cell grids
//! use midpoint weights (one cell per value), grids that include the domain
//! boundary use the trapezoid rule. All integrals and means below use these
//! weights, so on a midpoint mesh the clr mean is the arithmetic mean.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Midpoints must be equispaced to this relative tolerance.
const EQUISPACED_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeshRule {
    /// Nodes are cell centres; each value stands for its cell.
    Midpoint,
    /// Nodes include both domain ends; composite trapezoid weights.
    Trapezoid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub rule: MeshRule,
    wx: Vec<f64>,
    wy: Vec<f64>,
}

fn check_increasing(v: &[f64], what: &str) -> Result<()> {
    if v.is_empty() {
        return Err(Error::Empty(format!("{what} grid has no nodes")));
    }
    if v.iter().any(|t| !t.is_finite()) || v.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter(format!(
            "{what} grid must be finite and strictly increasing"
        )));
    }
    Ok(())
}

fn trapezoid_weights(t: &[f64]) -> Vec<f64> {
    let n = t.len();
    let mut w = vec![0.0; n];
    for i in 0..n.saturating_sub(1) {
        let h = 0.5 * (t[i + 1] - t[i]);
        w[i] += h;
        w[i + 1] += h;
    }
    w
}

/// `count` cell centres of an equal partition of `[lo, hi]`.
pub fn cell_midpoints(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let h = (hi - lo) / count as f64;
    (0..count).map(|i| lo + h * (i as f64 + 0.5)).collect()
}

/// `count` equispaced nodes from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    (0..count)
        .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
        .collect()
}

impl Mesh {
    /// Cell-centred mesh with the given cell widths.
    pub fn midpoint(x: Vec<f64>, y: Vec<f64>, x_width: f64, y_width: f64) -> Result<Self> {
        check_increasing(&x, "x")?;
        check_increasing(&y, "y")?;
        if !(x_width > 0.0 && y_width > 0.0) {
            return Err(Error::InvalidParameter(
                "cell widths must be positive".into(),
            ));
        }
        let wx = vec![x_width; x.len()];
        let wy = vec![y_width; y.len()];
        Ok(Self {
            x,
            y,
            rule: MeshRule::Midpoint,
            wx,
            wy,
        })
    }

    /// `m × n` equal cells covering `[a, b] × [c, d]`.
    pub fn cells(a: f64, b: f64, m: usize, c: f64, d: f64, n: usize) -> Result<Self> {
        if m == 0 || n == 0 || !(b > a && d > c) {
            return Err(Error::InvalidParameter("empty cell mesh".into()));
        }
        Self::midpoint(
            cell_midpoints(a, b, m),
            cell_midpoints(c, d, n),
            (b - a) / m as f64,
            (d - c) / n as f64,
        )
    }

    /// Trapezoid mesh on arbitrary increasing nodes (at least two per axis).
    pub fn trapezoid(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        check_increasing(&x, "x")?;
        check_increasing(&y, "y")?;
        if x.len() < 2 || y.len() < 2 {
            return Err(Error::InvalidParameter(
                "trapezoid mesh needs at least two nodes per axis".into(),
            ));
        }
        let wx = trapezoid_weights(&x);
        let wy = trapezoid_weights(&y);
        Ok(Self {
            x,
            y,
            rule: MeshRule::Trapezoid,
            wx,
            wy,
        })
    }

    pub fn weights_x(&self) -> &[f64] {
        &self.wx
    }

    pub fn weights_y(&self) -> &[f64] {
        &self.wy
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.x.len(), self.y.len())
    }

    pub fn width_x(&self) -> f64 {
        self.wx.iter().sum()
    }

    pub fn width_y(&self) -> f64 {
        self.wy.iter().sum()
    }

    pub fn area(&self) -> f64 {
        self.width_x() * self.width_y()
    }

    fn check_values(&self, v: &DMatrix<f64>) -> Result<()> {
        if v.shape() != self.shape() {
            return Err(Error::DimensionMismatch(format!(
                "values are {}x{} on a {}x{} mesh",
                v.nrows(),
                v.ncols(),
                self.x.len(),
                self.y.len()
            )));
        }
        Ok(())
    }

    pub fn integrate(&self, v: &DMatrix<f64>) -> f64 {
        crate::smoother::weighted_sum(v, &self.wx, &self.wy)
    }

    pub fn mean(&self, v: &DMatrix<f64>) -> f64 {
        self.integrate(v) / self.area()
    }
}

/// Histogram counts on equispaced classes; `freq[(i, j)]` is the class with
/// centre `(x_mid[i], y_mid[j])`.
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramGrid {
    pub x_mid: Vec<f64>,
    pub y_mid: Vec<f64>,
    pub freq: DMatrix<f64>,
    pub x_width: f64,
    pub y_width: f64,
}

fn check_equispaced(mid: &[f64], width: f64, what: &str) -> Result<()> {
    check_increasing(mid, what)?;
    for w in mid.windows(2) {
        if ((w[1] - w[0]) - width).abs() > EQUISPACED_TOL * width.abs().max(1.0) {
            return Err(Error::InvalidParameter(format!(
                "{what} midpoints are not equispaced with width {width}"
            )));
        }
    }
    Ok(())
}

impl HistogramGrid {
    pub fn new(
        x_mid: Vec<f64>,
        y_mid: Vec<f64>,
        freq: DMatrix<f64>,
        x_width: f64,
        y_width: f64,
    ) -> Result<Self> {
        if !(x_width > 0.0 && y_width > 0.0) {
            return Err(Error::InvalidParameter(
                "class widths must be positive".into(),
            ));
        }
        check_equispaced(&x_mid, x_width, "x")?;
        check_equispaced(&y_mid, y_width, "y")?;
        if freq.shape() != (x_mid.len(), y_mid.len()) {
            return Err(Error::DimensionMismatch(format!(
                "frequencies are {}x{} for {} x-classes and {} y-classes",
                freq.nrows(),
                freq.ncols(),
                x_mid.len(),
                y_mid.len()
            )));
        }
        if let Some((idx, &v)) = freq
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v >= 0.0) || !v.is_finite())
        {
            return Err(Error::NonPositive {
                value: v,
                row: idx % x_mid.len(),
                col: idx / x_mid.len(),
            });
        }
        Ok(Self {
            x_mid,
            y_mid,
            freq,
            x_width,
            y_width,
        })
    }

    /// Class widths inferred from the midpoint spacing.
    pub fn from_midpoints(x_mid: Vec<f64>, y_mid: Vec<f64>, freq: DMatrix<f64>) -> Result<Self> {
        let width = |m: &[f64], what: &str| -> Result<f64> {
            if m.len() < 2 {
                return Err(Error::InvalidParameter(format!(
                    "class width along {what} cannot be inferred from one midpoint"
                )));
            }
            Ok((m[m.len() - 1] - m[0]) / (m.len() - 1) as f64)
        };
        let wx = width(&x_mid, "x")?;
        let wy = width(&y_mid, "y")?;
        Self::new(x_mid, y_mid, freq, wx, wy)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.freq.shape()
    }

    /// `(a, b, c, d)` spanned by the classes.
    pub fn domain(&self) -> (f64, f64, f64, f64) {
        let m = self.x_mid.len();
        let n = self.y_mid.len();
        (
            self.x_mid[0] - 0.5 * self.x_width,
            self.x_mid[m - 1] + 0.5 * self.x_width,
            self.y_mid[0] - 0.5 * self.y_width,
            self.y_mid[n - 1] + 0.5 * self.y_width,
        )
    }

    pub fn mesh(&self) -> Result<Mesh> {
        Mesh::midpoint(
            self.x_mid.clone(),
            self.y_mid.clone(),
            self.x_width,
            self.y_width,
        )
    }

    pub fn total(&self) -> f64 {
        self.freq.sum()
    }

    pub fn zero_count(&self) -> usize {
        self.freq.iter().filter(|&&v| v == 0.0).count()
    }
}

/// Zero-mean function values on a mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct ClrField {
    pub mesh: Mesh,
    pub values: DMatrix<f64>,
}

impl ClrField {
    /// Wraps values and subtracts their mesh mean.
    pub fn centered(mesh: Mesh, mut values: DMatrix<f64>) -> Result<Self> {
        mesh.check_values(&values)?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("clr values must be finite".into()));
        }
        let mean = mesh.mean(&values);
        values.add_scalar_mut(-mean);
        Ok(Self { mesh, values })
    }

    pub fn mean(&self) -> f64 {
        self.mesh.mean(&self.values)
    }
}

/// Positive density values on a mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    pub mesh: Mesh,
    pub values: DMatrix<f64>,
}

impl DensityGrid {
    pub fn new(mesh: Mesh, values: DMatrix<f64>) -> Result<Self> {
        mesh.check_values(&values)?;
        check_positive(&values)?;
        Ok(Self { mesh, values })
    }

    /// Evaluates `f` at every mesh node.
    pub fn from_fn<F: Fn(f64, f64) -> f64>(mesh: Mesh, f: F) -> Result<Self> {
        let values = DMatrix::from_fn(mesh.x.len(), mesh.y.len(), |i, j| f(mesh.x[i], mesh.y[j]));
        Self::new(mesh, values)
    }

    pub fn integral(&self) -> f64 {
        self.mesh.integrate(&self.values)
    }

    /// Rescaled to unit integral.
    pub fn normalized(mut self) -> Self {
        let total = self.integral();
        self.values /= total;
        self
    }
}

fn check_positive(values: &DMatrix<f64>) -> Result<()> {
    let rows = values.nrows();
    if let Some((idx, &v)) = values
        .iter()
        .enumerate()
        .find(|(_, v)| !(**v > 0.0) || !v.is_finite())
    {
        return Err(Error::NonPositive {
            value: v,
            row: idx % rows,
            col: idx / rows,
        });
    }
    Ok(())
}

/// `ln f_ij − mean(ln f)` with the arithmetic mean over all classes.
pub fn discrete_clr(h: &HistogramGrid) -> Result<ClrField> {
    check_positive(&h.freq)?;
    let logs = h.freq.map(f64::ln);
    let mean = logs.mean();
    Ok(ClrField {
        mesh: h.mesh()?,
        values: logs.add_scalar(-mean),
    })
}

/// `ln f − (1/|Ω|) ∫ ln f` on the density mesh.
pub fn clr_of_density(d: &DensityGrid) -> Result<ClrField> {
    check_positive(&d.values)?;
    ClrField::centered(d.mesh.clone(), d.values.map(f64::ln))
}

/// `exp(c)` rescaled to unit integral; values are shifted by their maximum
/// before exponentiation.
pub fn inv_clr(c: &ClrField) -> Result<DensityGrid> {
    inv_clr_values(&c.mesh, &c.values)
}

pub fn inv_clr_values(mesh: &Mesh, values: &DMatrix<f64>) -> Result<DensityGrid> {
    mesh.check_values(values)?;
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("clr values must be finite".into()));
    }
    let max = values.max();
    let e = values.map(|v| (v - max).exp());
    let total = mesh.integrate(&e);
    Ok(DensityGrid {
        mesh: mesh.clone(),
        values: e / total,
    })
}

fn same_mesh(a: &Mesh, b: &Mesh) -> Result<()> {
    if a != b {
        return Err(Error::MeshMismatch);
    }
    Ok(())
}

/// `f ⊕ g`: pointwise product, renormalized.
pub fn perturb(f: &DensityGrid, g: &DensityGrid) -> Result<DensityGrid> {
    same_mesh(&f.mesh, &g.mesh)?;
    DensityGrid::new(f.mesh.clone(), f.values.component_mul(&g.values)).map(DensityGrid::normalized)
}

/// `α ⊙ f`: pointwise power, renormalized.
pub fn power(alpha: f64, f: &DensityGrid) -> Result<DensityGrid> {
    if !alpha.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "power {alpha} is not finite"
        )));
    }
    // through logs so that large exponents do not overflow
    let logs = f.values.map(|v| alpha * v.ln());
    inv_clr_values(&f.mesh, &logs)
}

/// Values of a one-dimensional density with quadrature weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Density1D {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
    pub values: Vec<f64>,
}

impl Density1D {
    pub fn integral(&self) -> f64 {
        self.values
            .iter()
            .zip(&self.weights)
            .map(|(v, w)| v * w)
            .sum()
    }
}

fn normalized_1d(points: &[f64], weights: &[f64], logs: &[f64]) -> Density1D {
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logs.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = e.iter().zip(weights).map(|(v, w)| v * w).sum();
    Density1D {
        points: points.to_vec(),
        weights: weights.to_vec(),
        values: e.iter().map(|v| v / total).collect(),
    }
}

/// Geometric marginals `exp((1/(d−c)) ∫ ln f dy)` and likewise in `x`,
/// each normalized to unit integral.
pub fn geometric_marginals(d: &DensityGrid) -> Result<(Density1D, Density1D)> {
    check_positive(&d.values)?;
    let logs = d.values.map(f64::ln);
    let (wx, wy) = (d.mesh.weights_x(), d.mesh.weights_y());
    let (lx, ly) = (d.mesh.width_x(), d.mesh.width_y());
    let mx: Vec<f64> = (0..logs.nrows())
        .map(|i| logs.row(i).iter().zip(wy).map(|(v, w)| v * w).sum::<f64>() / ly)
        .collect();
    let my: Vec<f64> = (0..logs.ncols())
        .map(|j| {
            logs.column(j)
                .iter()
                .zip(wx)
                .map(|(v, w)| v * w)
                .sum::<f64>()
                / lx
        })
        .collect();
    Ok((
        normalized_1d(&d.mesh.x, wx, &mx),
        normalized_1d(&d.mesh.y, wy, &my),
    ))
}

/// Second route: clr of the density, averaged over the other variable, then
/// the one-dimensional inverse clr.
pub fn geometric_marginals_via_clr(d: &DensityGrid) -> Result<(Density1D, Density1D)> {
    let c = clr_of_density(d)?;
    let (wx, wy) = (d.mesh.weights_x(), d.mesh.weights_y());
    let (lx, ly) = (d.mesh.width_x(), d.mesh.width_y());
    let cx: Vec<f64> = (0..c.values.nrows())
        .map(|i| {
            c.values
                .row(i)
                .iter()
                .zip(wy)
                .map(|(v, w)| v * w)
                .sum::<f64>()
                / ly
        })
        .collect();
    let cy: Vec<f64> = (0..c.values.ncols())
        .map(|j| {
            c.values
                .column(j)
                .iter()
                .zip(wx)
                .map(|(v, w)| v * w)
                .sum::<f64>()
                / lx
        })
        .collect();
    Ok((
        normalized_1d(&d.mesh.x, wx, &cx),
        normalized_1d(&d.mesh.y, wy, &cy),
    ))
}

/// `‖f ⊖ g‖²` computed as `∬ (clr f − clr g)²`.
pub fn ise(f: &DensityGrid, g: &DensityGrid) -> Result<f64> {
    same_mesh(&f.mesh, &g.mesh)?;
    ise_clr(&clr_of_density(f)?, &clr_of_density(g)?)
}

/// `∬ (a − b)²` after centering both fields on their common mesh.
pub fn ise_clr(a: &ClrField, b: &ClrField) -> Result<f64> {
    same_mesh(&a.mesh, &b.mesh)?;
    let mut diff = &a.values - &b.values;
    let mean = a.mesh.mean(&diff);
    diff.add_scalar_mut(-mean);
    Ok(a.mesh.integrate(&diff.component_mul(&diff)).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_cells(m: usize, n: usize) -> Mesh {
        Mesh::cells(0.0, 1.0, m, 0.0, 1.0, n).unwrap()
    }

    fn random_density(mesh: &Mesh, rng: &mut ChaCha8Rng) -> DensityGrid {
        let (m, n) = mesh.shape();
        let v = DMatrix::from_fn(m, n, |_, _| rng.random_range(0.05..5.0));
        DensityGrid::new(mesh.clone(), v).unwrap().normalized()
    }

    #[test]
    fn discrete_clr_examples() {
        let e = std::f64::consts::E;
        let h = HistogramGrid::new(
            vec![0.25, 0.75],
            vec![0.25, 0.75],
            DMatrix::from_row_slice(2, 2, &[1.0, e, e, e * e]),
            0.5,
            0.5,
        )
        .unwrap();
        let c = discrete_clr(&h).unwrap();
        let expect = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 1.0]);
        assert!((c.values - expect).amax() < 1e-15);

        let flat = HistogramGrid::new(
            cell_midpoints(0.0, 1.0, 3),
            cell_midpoints(0.0, 1.0, 4),
            DMatrix::from_element(3, 4, 7.0),
            1.0 / 3.0,
            0.25,
        )
        .unwrap();
        assert!(discrete_clr(&flat).unwrap().values.amax() < 1e-15);
    }

    #[test]
    fn discrete_clr_is_scale_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = DMatrix::from_fn(5, 4, |_, _| rng.random_range(1.0..20.0));
        let h = HistogramGrid::new(
            cell_midpoints(0.0, 1.0, 5),
            cell_midpoints(0.0, 1.0, 4),
            f.clone(),
            0.2,
            0.25,
        )
        .unwrap();
        let mut h2 = h.clone();
        h2.freq *= 13.7;
        let (a, b) = (discrete_clr(&h).unwrap(), discrete_clr(&h2).unwrap());
        assert!((a.values - b.values).amax() < 1e-12);
    }

    #[test]
    fn discrete_clr_rejects_zero() {
        let h = HistogramGrid::new(
            vec![0.25, 0.75],
            vec![0.5],
            DMatrix::from_row_slice(2, 1, &[1.0, 0.0]),
            0.5,
            1.0,
        )
        .unwrap();
        assert!(matches!(
            discrete_clr(&h),
            Err(Error::NonPositive { row: 1, col: 0, .. })
        ));
    }

    #[test]
    fn histogram_checks_spacing() {
        let f = DMatrix::from_element(3, 1, 1.0);
        assert!(HistogramGrid::new(vec![0.1, 0.2, 0.4], vec![0.5], f, 0.1, 1.0).is_err());
    }

    #[test]
    fn zero_field_inverts_to_uniform() {
        let mesh = Mesh::trapezoid(linspace(0.0, 1.0, 11), linspace(0.0, 1.0, 7)).unwrap();
        let d = inv_clr_values(&mesh, &DMatrix::zeros(11, 7)).unwrap();
        assert!(d.values.iter().all(|&v| (v - 1.0).abs() < 1e-14));
    }

    #[test]
    fn inv_clr_survives_large_values() {
        let mesh = unit_cells(4, 4);
        let v = DMatrix::from_fn(4, 4, |i, j| 800.0 + (i + j) as f64);
        let d = inv_clr_values(&mesh, &v).unwrap();
        assert!((d.integral() - 1.0).abs() < 1e-12);
        assert!(d.values.iter().all(|v| v.is_finite() && *v > 0.0));
    }

    #[test]
    fn round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for mesh in [
            unit_cells(6, 9),
            Mesh::trapezoid(linspace(-1.0, 2.0, 8), linspace(0.0, 1.0, 5)).unwrap(),
        ] {
            let f = random_density(&mesh, &mut rng);
            let back = inv_clr(&clr_of_density(&f).unwrap()).unwrap();
            for (a, b) in back.values.iter().zip(f.values.iter()) {
                assert!((a - b).abs() <= 1e-10 * b);
            }
            let c = clr_of_density(&f).unwrap();
            assert!(c.mean().abs() < 1e-12);
            let c2 = clr_of_density(&inv_clr(&c).unwrap()).unwrap();
            assert!((c2.values - c.values).amax() < 1e-10);
        }
    }

    #[test]
    fn perturbation_and_powering() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mesh = unit_cells(7, 5);
        let f = random_density(&mesh, &mut rng);
        let g = random_density(&mesh, &mut rng);
        let uniform = DensityGrid::new(mesh.clone(), DMatrix::from_element(7, 5, 1.0)).unwrap();
        let fu = perturb(&f, &uniform).unwrap();
        assert!((fu.values - &f.values).amax() < 1e-12);
        let p0 = power(0.0, &f).unwrap();
        assert!(p0.values.iter().all(|&v| (v - 1.0).abs() < 1e-12));

        let lhs = clr_of_density(&perturb(&f, &g).unwrap()).unwrap().values;
        let rhs = clr_of_density(&f).unwrap().values + clr_of_density(&g).unwrap().values;
        assert!((lhs - rhs).amax() < 1e-10);
        let lhs = clr_of_density(&power(2.5, &f).unwrap()).unwrap().values;
        let rhs = clr_of_density(&f).unwrap().values * 2.5;
        assert!((lhs - rhs).amax() < 1e-10);

        let other = unit_cells(5, 7);
        let h = random_density(&other, &mut rng);
        assert!(matches!(perturb(&f, &h), Err(Error::MeshMismatch)));
        assert!(matches!(ise(&f, &h), Err(Error::MeshMismatch)));
    }

    #[test]
    fn geometric_marginals_of_product_density() {
        let mesh = Mesh::trapezoid(linspace(0.0, 1.0, 21), linspace(0.0, 2.0, 17)).unwrap();
        let gx = |x: f64| 1.0 + x * x;
        let hy = |y: f64| (0.3 * y).exp();
        let d = DensityGrid::from_fn(mesh.clone(), |x, y| gx(x) * hy(y)).unwrap();
        let (m1, m2) = geometric_marginals(&d).unwrap();
        let r1: Vec<f64> = m1
            .points
            .iter()
            .zip(&m1.values)
            .map(|(x, v)| v / gx(*x))
            .collect();
        let r2: Vec<f64> = m2
            .points
            .iter()
            .zip(&m2.values)
            .map(|(y, v)| v / hy(*y))
            .collect();
        assert!(r1.iter().all(|r| (r - r1[0]).abs() < 1e-12 * r1[0]));
        assert!(r2.iter().all(|r| (r - r2[0]).abs() < 1e-12 * r2[0]));
        assert!((m1.integral() - 1.0).abs() < 1e-12 && (m2.integral() - 1.0).abs() < 1e-12);

        let u = DensityGrid::new(mesh, DMatrix::from_element(21, 17, 0.5)).unwrap();
        let (u1, u2) = geometric_marginals(&u).unwrap();
        assert!(u1.values.iter().all(|v| (v - 1.0).abs() < 1e-12));
        assert!(u2.values.iter().all(|v| (v - 0.5).abs() < 1e-12));
    }

    #[test]
    fn geometric_marginal_routes_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for mesh in [
            unit_cells(8, 6),
            Mesh::trapezoid(linspace(0.0, 3.0, 9), linspace(1.0, 2.0, 6)).unwrap(),
        ] {
            let d = random_density(&mesh, &mut rng);
            let (a1, a2) = geometric_marginals(&d).unwrap();
            let (b1, b2) = geometric_marginals_via_clr(&d).unwrap();
            for (a, b) in a1
                .values
                .iter()
                .chain(&a2.values)
                .zip(b1.values.iter().chain(&b2.values))
            {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn ise_examples_and_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mesh = Mesh::trapezoid(linspace(0.0, 1.0, 12), linspace(-1.0, 1.0, 9)).unwrap();
        let f = random_density(&mesh, &mut rng);
        let g = random_density(&mesh, &mut rng);
        assert_eq!(ise(&f, &f).unwrap(), 0.0);
        let mut cf = f.clone();
        cf.values *= 3.3;
        assert!(ise(&f, &cf).unwrap() < 1e-24);

        // brute-force trapezoid double loop
        let lf = f.values.map(f64::ln);
        let lg = g.values.map(f64::ln);
        let trap = |v: &dyn Fn(usize, usize) -> f64| -> f64 {
            let mut s = 0.0;
            for i in 0..11 {
                for j in 0..8 {
                    let hx = mesh.x[i + 1] - mesh.x[i];
                    let hy = mesh.y[j + 1] - mesh.y[j];
                    s += 0.25 * hx * hy * (v(i, j) + v(i + 1, j) + v(i, j + 1) + v(i + 1, j + 1));
                }
            }
            s
        };
        let area = 2.0;
        let mean = trap(&|i, j| lf[(i, j)] - lg[(i, j)]) / area;
        let oracle = trap(&|i, j| (lf[(i, j)] - lg[(i, j)] - mean).powi(2));
        assert!((ise(&f, &g).unwrap() - oracle).abs() < 1e-8);
    }

    proptest! {
        #[test]
        fn ise_is_symmetric_and_metric(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mesh = unit_cells(5, 6);
            let f = random_density(&mesh, &mut rng);
            let g = random_density(&mesh, &mut rng);
            let h = random_density(&mesh, &mut rng);
            let fg = ise(&f, &g).unwrap();
            prop_assert!(fg >= 0.0);
            prop_assert!((fg - ise(&g, &f).unwrap()).abs() <= 1e-12 * fg.max(1.0));
            let (a, b, c) = (fg.sqrt(), ise(&g, &h).unwrap().sqrt(), ise(&f, &h).unwrap().sqrt());
            prop_assert!(c <= a + b + 1e-12);
        }

        #[test]
        fn clr_mean_is_zero(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mesh = unit_cells(4, 7);
            let f = random_density(&mesh, &mut rng);
            prop_assert!(clr_of_density(&f).unwrap().mean().abs() < 1e-12);
        }
    }
}
