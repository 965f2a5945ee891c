//! Penalized least-squares smoothing in the tensor-product ZB basis.
//!
//! A spline in the zero-integral space is
//! `s(x, y) = Z_x(x)ᵀ Z Z_y(y) + Z_x(x)ᵀ v + Z_y(y)ᵀ u`, packed as
//! `R = [[Z, v], [uᵀ, 0]]`. Grid values are vectorized column-major (`x`
//! fastest), so the design blocks are `Z_y ⊗ Z_x`, `1 ⊗ Z_x` and `Z_y ⊗ 1`.
//! The roughness penalty only acts on the interaction block.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Axis, Error, Result};
use crate::knots::{derivative_transform, eval_bspline_basis, gram_matrix, KnotConfig};
use crate::quadrature::CompositeRule;
use crate::zb::AxisBasis;

/// Condition number above which the system matrix receives a diagonal jitter.
pub const CONDITION_LIMIT: f64 = 1e12;
/// Jitter added to the diagonal, relative to `trace(G) / dim`.
pub const JITTER_SCALE: f64 = 1e-10;

/// Knot configurations for both axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorBasisSpec {
    pub x: KnotConfig,
    pub y: KnotConfig,
}

/// Coefficients `(Z, v, u)` of a spline in the ZB representation.
#[derive(Debug, Clone, PartialEq)]
pub struct ZBCoeffs {
    pub z: DMatrix<f64>,
    pub v: DVector<f64>,
    pub u: DVector<f64>,
}

impl ZBCoeffs {
    pub fn zeros(nx: usize, ny: usize) -> Self {
        Self {
            z: DMatrix::zeros(nx, ny),
            v: DVector::zeros(nx),
            u: DVector::zeros(ny),
        }
    }

    pub fn new(z: DMatrix<f64>, v: DVector<f64>, u: DVector<f64>) -> Result<Self> {
        if z.nrows() != v.len() || z.ncols() != u.len() {
            return Err(Error::DimensionMismatch(format!(
                "Z is {}x{} but v has {} and u has {} entries",
                z.nrows(),
                z.ncols(),
                v.len(),
                u.len()
            )));
        }
        Ok(Self { z, v, u })
    }

    /// `R = [[Z, v], [uᵀ, 0]]`.
    pub fn packed(&self) -> DMatrix<f64> {
        let (nx, ny) = self.z.shape();
        let mut r = DMatrix::zeros(nx + 1, ny + 1);
        r.view_mut((0, 0), (nx, ny)).copy_from(&self.z);
        r.view_mut((0, ny), (nx, 1)).copy_from(&self.v);
        r.view_mut((nx, 0), (1, ny)).copy_from(&self.u.transpose());
        r
    }

    pub fn from_packed(r: &DMatrix<f64>) -> Result<Self> {
        let (rows, cols) = r.shape();
        if rows < 2 || cols < 2 {
            return Err(Error::DimensionMismatch(format!(
                "packed coefficient matrix is {rows}x{cols}"
            )));
        }
        if r[(rows - 1, cols - 1)] != 0.0 {
            return Err(Error::InvalidParameter(format!(
                "packed coefficient matrix must have 0 in its corner, found {}",
                r[(rows - 1, cols - 1)]
            )));
        }
        Ok(Self {
            z: r.view((0, 0), (rows - 1, cols - 1)).into_owned(),
            v: r.view((0, cols - 1), (rows - 1, 1)).column(0).into_owned(),
            u: r.view((rows - 1, 0), (1, cols - 1))
                .transpose()
                .column(0)
                .into_owned(),
        })
    }

    /// Stacked `(cs(Z), v, u)`.
    pub fn to_vector(&self) -> DVector<f64> {
        let mut w = Vec::with_capacity(self.z.len() + self.v.len() + self.u.len());
        w.extend(self.z.iter());
        w.extend(self.v.iter());
        w.extend(self.u.iter());
        DVector::from_vec(w)
    }

    pub fn from_vector(w: &DVector<f64>, nx: usize, ny: usize) -> Result<Self> {
        if w.len() != nx * ny + nx + ny {
            return Err(Error::DimensionMismatch(format!(
                "vector of length {} for a {nx}x{ny} interaction block",
                w.len()
            )));
        }
        let s = w.as_slice();
        Ok(Self {
            z: DMatrix::from_column_slice(nx, ny, &s[..nx * ny]),
            v: DVector::from_column_slice(&s[nx * ny..nx * ny + nx]),
            u: DVector::from_column_slice(&s[nx * ny + nx..]),
        })
    }
}

/// B-spline coefficient matrix of a spline, `(g+k+1) × (h+l+1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BCoeffs {
    pub b: DMatrix<f64>,
}

/// Derivative orders and smoothing parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyConfig {
    pub p: usize,
    pub q: usize,
    pub rho: f64,
    /// Also penalize the `p`-th (resp. `q`-th) derivative of the clr marginals.
    #[serde(default)]
    pub marginal_penalty: bool,
}

impl PenaltyConfig {
    pub fn new(p: usize, q: usize, rho: f64) -> Self {
        Self {
            p,
            q,
            rho,
            marginal_penalty: false,
        }
    }
}

/// Kronecker-structured design blocks for a data grid.
#[derive(Debug, Clone)]
pub struct Design {
    /// `Z_y(y) ⊗ Z_x(x)`, `mn × (g+k)(h+l)`.
    pub z: DMatrix<f64>,
    /// `1_n ⊗ Z_x(x)`, `mn × (g+k)`.
    pub zx: DMatrix<f64>,
    /// `Z_y(y) ⊗ 1_m`, `mn × (h+l)`.
    pub zy: DMatrix<f64>,
}

impl Design {
    /// `[ℤ ℤx ℤy]`.
    pub fn full(&self) -> DMatrix<f64> {
        let rows = self.z.nrows();
        let (a, b, c) = (self.z.ncols(), self.zx.ncols(), self.zy.ncols());
        let mut x = DMatrix::zeros(rows, a + b + c);
        x.view_mut((0, 0), (rows, a)).copy_from(&self.z);
        x.view_mut((0, a), (rows, b)).copy_from(&self.zx);
        x.view_mut((0, a + b), (rows, c)).copy_from(&self.zy);
        x
    }
}

/// Schoenberg–Whitney style coverage of one axis.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AxisCoverage {
    pub axis: Axis,
    /// ZB functions (0-based) whose support contains no data abscissa.
    pub empty_supports: Vec<usize>,
}

impl AxisCoverage {
    pub fn passed(&self) -> bool {
        self.empty_supports.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SwReport {
    pub x: AxisCoverage,
    pub y: AxisCoverage,
}

impl SwReport {
    pub fn passed(&self) -> bool {
        self.x.passed() && self.y.passed()
    }
}

/// Solved smoothing spline with its diagnostics.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub coeffs: ZBCoeffs,
    pub rho: f64,
    pub gcv: f64,
    pub hat_trace: f64,
    pub rss: f64,
    pub n_obs: usize,
    /// `cs(Z)ᵀ ℕ cs(Z)`.
    pub penalty: f64,
    /// `‖G w − g‖ / ‖g‖`.
    pub normal_residual: f64,
    /// Whether the diagonal jitter fallback was used.
    pub jittered: bool,
    /// Fitted values on the data grid, `m × n`.
    pub fitted: DMatrix<f64>,
}

/// Serializable summary of a fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitSummary {
    pub rho: f64,
    pub gcv: f64,
    pub hat_trace: f64,
    pub rss: f64,
    pub n_obs: usize,
    pub penalty: f64,
    pub normal_residual: f64,
    pub jittered: bool,
}

impl FitResult {
    pub fn summary(&self) -> FitSummary {
        FitSummary {
            rho: self.rho,
            gcv: self.gcv,
            hat_trace: self.hat_trace,
            rss: self.rss,
            n_obs: self.n_obs,
            penalty: self.penalty,
            normal_residual: self.normal_residual,
            jittered: self.jittered,
        }
    }
}

/// `(RSS / N) / (1 − trace / N)²`.
pub fn gcv_value(rss: f64, hat_trace: f64, n_obs: usize) -> f64 {
    let n = n_obs as f64;
    let denom = 1.0 - hat_trace / n;
    (rss / n) / (denom * denom)
}

/// Tensor-product ZB basis on `Ω = [a, b] × [c, d]`.
#[derive(Debug, Clone)]
pub struct TensorBasis {
    pub spec: TensorBasisSpec,
    pub x: AxisBasis,
    pub y: AxisBasis,
}

impl TensorBasis {
    pub fn new(spec: TensorBasisSpec) -> Result<Self> {
        let x = AxisBasis::new(spec.x.clone())?;
        let y = AxisBasis::new(spec.y.clone())?;
        Ok(Self { spec, x, y })
    }

    /// `(g+k)(h+l) + (g+k) + (h+l) = (g+k+1)(h+l+1) − 1`.
    pub fn dimension(&self) -> usize {
        let (nx, ny) = (self.x.n_zb(), self.y.n_zb());
        nx * ny + nx + ny
    }

    /// Sizes of the interaction block and both marginal blocks.
    pub fn block_sizes(&self) -> (usize, usize, usize) {
        let (nx, ny) = (self.x.n_zb(), self.y.n_zb());
        (nx * ny, nx, ny)
    }

    pub fn area(&self) -> f64 {
        self.x.width() * self.y.width()
    }

    fn check_coeffs(&self, c: &ZBCoeffs) -> Result<()> {
        let (nx, ny) = (self.x.n_zb(), self.y.n_zb());
        if c.z.shape() != (nx, ny) || c.v.len() != nx || c.u.len() != ny {
            return Err(Error::DimensionMismatch(format!(
                "coefficients are {}x{} (+{}, +{}), basis needs {nx}x{ny}",
                c.z.nrows(),
                c.z.ncols(),
                c.v.len(),
                c.u.len()
            )));
        }
        Ok(())
    }

    pub fn assemble_design(&self, x: &[f64], y: &[f64]) -> Result<Design> {
        let zx = self.x.zb(x)?;
        let zy = self.y.zb(y)?;
        let ones_m = DMatrix::from_element(x.len(), 1, 1.0);
        let ones_n = DMatrix::from_element(y.len(), 1, 1.0);
        Ok(Design {
            z: zy.kronecker(&zx),
            zx: ones_n.kronecker(&zx),
            zy: zy.kronecker(&ones_m),
        })
    }

    /// Per-axis factor `K D Sᵖᵀ Mₚ Sᵖ D Kᵀ` of the roughness penalty.
    fn axis_penalty(axis: &AxisBasis, order: usize) -> Result<DMatrix<f64>> {
        let s = derivative_transform(&axis.knots, order)?;
        let m = gram_matrix(&axis.knots, order)?;
        let a = s * axis.zb_map.transpose();
        Ok(a.transpose() * m * a)
    }

    /// Penalty matrix `ℕ = 𝕂 𝔻 𝕊ᵀ 𝕄 𝕊 𝔻 𝕂ᵀ`, assembled through the
    /// mixed-product rule as `ℕ_y ⊗ ℕ_x`.
    pub fn assemble_penalty(&self, p: usize, q: usize) -> Result<DMatrix<f64>> {
        let nx = Self::axis_penalty(&self.x, p)?;
        let ny = Self::axis_penalty(&self.y, q)?;
        let n = ny.kronecker(&nx);
        Ok((&n + n.transpose()) * 0.5)
    }

    /// Marginal-block penalties used when `marginal_penalty` is on:
    /// `∬ (∂ᵖ s₁)² = (d − c) vᵀ ℕ_x v` and likewise for `u`.
    fn marginal_penalties(&self, p: usize, q: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let nx = Self::axis_penalty(&self.x, p)? * self.y.width();
        let ny = Self::axis_penalty(&self.y, q)? * self.x.width();
        Ok((nx, ny))
    }

    pub fn validate_sw(&self, x: &[f64], y: &[f64]) -> SwReport {
        SwReport {
            x: coverage(&self.x, Axis::X, x),
            y: coverage(&self.y, Axis::Y, y),
        }
    }

    /// `B = D_λ K_xᵀ Z K_y D_μ + (V K_x D_λ)ᵀ + U K_y D_μ`.
    pub fn zb_to_b(&self, c: &ZBCoeffs) -> Result<BCoeffs> {
        self.check_coeffs(c)?;
        let ax = &self.x.zb_map;
        let ay = &self.y.zb_map;
        let mut b = ax.transpose() * &c.z * ay;
        let col = ax.transpose() * &c.v;
        let row = ay.transpose() * &c.u;
        for j in 0..b.ncols() {
            for i in 0..b.nrows() {
                b[(i, j)] += col[i] + row[j];
            }
        }
        Ok(BCoeffs { b })
    }

    /// Grid values `[Z_x(x) 1] R [Z_y(y) 1]ᵀ`, shape `m × n`.
    pub fn eval_zb(&self, c: &ZBCoeffs, x: &[f64], y: &[f64]) -> Result<DMatrix<f64>> {
        self.check_coeffs(c)?;
        let zx = self.x.zb(x)?;
        let zy = self.y.zb(y)?;
        let mut out = &zx * &c.z * zy.transpose();
        let sx = &zx * &c.v;
        let sy = &zy * &c.u;
        for j in 0..y.len() {
            for i in 0..x.len() {
                out[(i, j)] += sx[i] + sy[j];
            }
        }
        Ok(out)
    }

    /// Grid values `B_x(x) B B_y(y)ᵀ`.
    pub fn eval_b(&self, c: &BCoeffs, x: &[f64], y: &[f64]) -> Result<DMatrix<f64>> {
        if c.b.shape() != (self.x.n_bspline(), self.y.n_bspline()) {
            return Err(Error::DimensionMismatch(format!(
                "B-spline coefficients are {}x{}, basis needs {}x{}",
                c.b.nrows(),
                c.b.ncols(),
                self.x.n_bspline(),
                self.y.n_bspline()
            )));
        }
        Ok(self.x.bspline(x)? * &c.b * self.y.bspline(y)?.transpose())
    }

    /// Values at scattered points `(x_i, y_i)`.
    pub fn eval_zb_at(&self, c: &ZBCoeffs, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        self.check_coeffs(c)?;
        if x.len() != y.len() {
            return Err(Error::DimensionMismatch("x and y differ in length".into()));
        }
        let zx = self.x.zb(x)?;
        let zy = self.y.zb(y)?;
        Ok((0..x.len())
            .map(|i| {
                let rx = zx.row(i);
                let ry = zy.row(i);
                (rx * &c.z * ry.transpose())[(0, 0)]
                    + rx.dot(&c.v.transpose())
                    + ry.dot(&c.u.transpose())
            })
            .collect())
    }

    pub fn eval_b_at(&self, c: &BCoeffs, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        if x.len() != y.len() {
            return Err(Error::DimensionMismatch("x and y differ in length".into()));
        }
        let bx = self.x.bspline(x)?;
        let by = self.y.bspline(y)?;
        Ok((0..x.len())
            .map(|i| (bx.row(i) * &c.b * by.row(i).transpose())[(0, 0)])
            .collect())
    }

    /// Mixed partial `∂ᵖ∂^q` of the interaction part on a grid:
    /// `B_{k+1-p}(x)ᵀ Sᵖ D Kᵀ Z K D S^qᵀ B_{l+1-q}(y)`.
    pub fn eval_derivative(
        &self,
        c: &ZBCoeffs,
        p: usize,
        q: usize,
        x: &[f64],
        y: &[f64],
    ) -> Result<DMatrix<f64>> {
        self.check_coeffs(c)?;
        let sx = derivative_transform(&self.x.knots, p)?;
        let sy = derivative_transform(&self.y.knots, q)?;
        let bx = eval_bspline_basis(&self.x.knots.reduced(p)?, x)?.entries;
        let by = eval_bspline_basis(&self.y.knots.reduced(q)?, y)?.entries;
        let left = bx * sx * self.x.zb_map.transpose();
        let right = by * sy * self.y.zb_map.transpose();
        Ok(left * &c.z * right.transpose())
    }

    /// Composite Gauss–Legendre rules on both axes, exact for piecewise
    /// polynomials of the given degrees.
    pub fn quadrature(&self, x_degree: usize, y_degree: usize) -> (CompositeRule, CompositeRule) {
        (
            CompositeRule::exact_for(&self.spec.x.breakpoints(), x_degree),
            CompositeRule::exact_for(&self.spec.y.breakpoints(), y_degree),
        )
    }

    /// `∬ s` over `Ω` by tensor Gauss–Legendre quadrature.
    pub fn integrate_zb(&self, c: &ZBCoeffs) -> Result<f64> {
        let (rx, ry) = self.quadrature(self.x.degree(), self.y.degree());
        let vals = self.eval_zb(c, &rx.points, &ry.points)?;
        Ok(weighted_sum(&vals, &rx.weights, &ry.weights))
    }

    /// Precomputes everything that does not depend on `ρ`.
    pub fn problem(
        &self,
        f: &DMatrix<f64>,
        x: &[f64],
        y: &[f64],
        p: usize,
        q: usize,
        marginal_penalty: bool,
    ) -> Result<SmoothingProblem> {
        SmoothingProblem::new(self, f, x, y, p, q, marginal_penalty)
    }

    /// Solves the smoothing problem for one `ρ`.
    pub fn fit(
        &self,
        f: &DMatrix<f64>,
        x: &[f64],
        y: &[f64],
        pen: &PenaltyConfig,
    ) -> Result<FitResult> {
        self.problem(f, x, y, pen.p, pen.q, pen.marginal_penalty)?
            .solve(pen.rho)
    }
}

/// `Σ_ij wx_i wy_j v_ij`.
pub fn weighted_sum(values: &DMatrix<f64>, wx: &[f64], wy: &[f64]) -> f64 {
    let mut total = 0.0;
    for (j, wyj) in wy.iter().enumerate() {
        let col: f64 = values.column(j).iter().zip(wx).map(|(v, w)| v * w).sum();
        total += wyj * col;
    }
    total
}

fn coverage(axis: &AxisBasis, which: Axis, pts: &[f64]) -> AxisCoverage {
    let (dom_lo, dom_hi) = (axis.lo(), axis.hi());
    let empty_supports = (0..axis.n_zb())
        .filter(|&a| {
            let (lo, hi) = axis.zb_support(a);
            !pts.iter().any(|&t| {
                (t > lo && t < hi) || (t == lo && lo == dom_lo) || (t == hi && hi == dom_hi)
            })
        })
        .collect();
    AxisCoverage {
        axis: which,
        empty_supports,
    }
}

/// One data grid and basis, with every `ρ`-independent product cached.
#[derive(Debug, Clone)]
pub struct SmoothingProblem {
    nx: usize,
    ny: usize,
    m: usize,
    n: usize,
    design: DMatrix<f64>,
    gram: DMatrix<f64>,
    rhs: DVector<f64>,
    data: DVector<f64>,
    /// Interaction penalty `ℕ`.
    penalty: DMatrix<f64>,
    /// Full-size penalty block matrix (ℕ plus optional marginal blocks).
    penalty_full: DMatrix<f64>,
}

impl SmoothingProblem {
    pub fn new(
        basis: &TensorBasis,
        f: &DMatrix<f64>,
        x: &[f64],
        y: &[f64],
        p: usize,
        q: usize,
        marginal_penalty: bool,
    ) -> Result<Self> {
        let (m, n) = (x.len(), y.len());
        if f.shape() != (m, n) {
            return Err(Error::DimensionMismatch(format!(
                "data grid is {}x{} but there are {m} x-abscissae and {n} y-abscissae",
                f.nrows(),
                f.ncols()
            )));
        }
        for (order, degree) in [(p, basis.x.degree()), (q, basis.y.degree())] {
            if order > 0 && order >= degree {
                return Err(Error::DerivativeOrder { order, degree });
            }
        }
        let dim = basis.dimension();
        if m * n <= dim {
            return Err(Error::SmoothingCondition {
                observations: m * n,
                dimension: dim,
            });
        }
        let sw = basis.validate_sw(x, y);
        for cov in [&sw.x, &sw.y] {
            if !cov.passed() {
                return Err(Error::RankDeficient {
                    axis: cov.axis,
                    detail: format!(
                        "no data abscissa in the support of ZB functions {:?}",
                        cov.empty_supports
                    ),
                });
            }
        }
        let design_blocks = basis.assemble_design(x, y)?;
        for (axis, coll, pts) in [(Axis::X, basis.x.zb(x)?, x), (Axis::Y, basis.y.zb(y)?, y)] {
            let rank = coll.rank(1e-10 * coll.amax().max(1.0));
            if rank < coll.ncols() {
                return Err(Error::RankDeficient {
                    axis,
                    detail: format!(
                        "collocation matrix at {} abscissae has rank {rank} < {}",
                        pts.len(),
                        coll.ncols()
                    ),
                });
            }
        }

        let design = design_blocks.full();
        let data = DVector::from_column_slice(f.as_slice());
        let gram = design.transpose() * &design;
        let rhs = design.transpose() * &data;
        let penalty = basis.assemble_penalty(p, q)?;
        let (nx, ny) = (basis.x.n_zb(), basis.y.n_zb());
        let mut penalty_full = DMatrix::zeros(dim, dim);
        penalty_full
            .view_mut((0, 0), (nx * ny, nx * ny))
            .copy_from(&penalty);
        if marginal_penalty {
            let (px, py) = basis.marginal_penalties(p, q)?;
            penalty_full
                .view_mut((nx * ny, nx * ny), (nx, nx))
                .copy_from(&px);
            penalty_full
                .view_mut((nx * ny + nx, nx * ny + nx), (ny, ny))
                .copy_from(&py);
        }
        Ok(Self {
            nx,
            ny,
            m,
            n,
            design,
            gram,
            rhs,
            data,
            penalty,
            penalty_full,
        })
    }

    pub fn n_obs(&self) -> usize {
        self.m * self.n
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    pub fn penalty(&self) -> &DMatrix<f64> {
        &self.penalty
    }

    /// `G(ρ) = XᵀX + ρ blockdiag(ℕ, 0, 0)`.
    pub fn system_matrix(&self, rho: f64) -> DMatrix<f64> {
        &self.gram + &self.penalty_full * rho
    }

    /// `g = Xᵀ cs(F)`.
    pub fn rhs(&self) -> &DVector<f64> {
        &self.rhs
    }

    fn factorize(&self, rho: f64) -> Result<(Cholesky<f64, Dyn>, DMatrix<f64>, bool)> {
        if !(rho > 0.0) || !rho.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "smoothing parameter must be positive, got {rho}"
            )));
        }
        let g = self.system_matrix(rho);
        let eig = g.clone().symmetric_eigenvalues();
        let (lo, hi) = (eig.min(), eig.max());
        let cond = if lo > 0.0 { hi / lo } else { f64::INFINITY };
        if cond <= CONDITION_LIMIT {
            if let Some(ch) = Cholesky::new(g.clone()) {
                return Ok((ch, g, false));
            }
        }
        let dim = g.nrows();
        let jitter = JITTER_SCALE * g.trace() / dim as f64;
        log::warn!(
            "system matrix is ill-conditioned (condition {cond:.3e}); adding diagonal jitter {jitter:.3e}"
        );
        let mut gj = g;
        for i in 0..dim {
            gj[(i, i)] += jitter;
        }
        match Cholesky::new(gj.clone()) {
            Some(ch) => Ok((ch, gj, true)),
            None => Err(Error::Singular(format!(
                "system matrix is not positive definite (smallest eigenvalue {lo:.3e})"
            ))),
        }
    }

    pub fn solve(&self, rho: f64) -> Result<FitResult> {
        let (chol, g, jittered) = self.factorize(rho)?;
        let w = chol.solve(&self.rhs);
        let resid_norm = (&g * &w - &self.rhs).norm();
        let rhs_norm = self.rhs.norm();
        let normal_residual = if rhs_norm > 0.0 {
            resid_norm / rhs_norm
        } else {
            resid_norm
        };
        let fitted_vec = &self.design * &w;
        let rss = (&self.data - &fitted_vec).norm_squared();
        let hat_trace = chol.solve(&self.gram).trace();
        let coeffs = ZBCoeffs::from_vector(&w, self.nx, self.ny)?;
        let zvec = DVector::from_column_slice(coeffs.z.as_slice());
        let penalty = (zvec.transpose() * &self.penalty * &zvec)[(0, 0)];
        let n_obs = self.n_obs();
        Ok(FitResult {
            gcv: gcv_value(rss, hat_trace, n_obs),
            coeffs,
            rho,
            hat_trace,
            rss,
            n_obs,
            penalty,
            normal_residual,
            jittered,
            fitted: DMatrix::from_column_slice(self.m, self.n, fitted_vec.as_slice()),
        })
    }

    /// `GCV(ρ)` and `trace H(ρ)` without building the hat matrix.
    pub fn gcv_and_trace(&self, rho: f64) -> Result<(f64, f64)> {
        let fit = self.solve(rho)?;
        Ok((fit.gcv, fit.hat_trace))
    }

    /// `H(ρ) = X G(ρ)⁻¹ Xᵀ`, materialized. Only sensible for small grids.
    pub fn hat_matrix(&self, rho: f64) -> Result<DMatrix<f64>> {
        let (chol, _, _) = self.factorize(rho)?;
        Ok(&self.design * chol.solve(&self.design.transpose()))
    }

    /// Value of the smoothing functional `J(w) = ‖f − Xw‖² + ρ wᵀPw`.
    pub fn objective(&self, w: &DVector<f64>, rho: f64) -> f64 {
        let r = &self.data - &self.design * w;
        r.norm_squared() + rho * (w.transpose() * &self.penalty_full * w)[(0, 0)]
    }

    /// GCV over a grid of smoothing parameters, evaluated in parallel.
    pub fn gcv_scan(&self, rho_grid: &[f64]) -> Result<GcvCurve> {
        if rho_grid.is_empty() {
            return Err(Error::Empty("smoothing parameter grid".into()));
        }
        let points: Vec<GcvPoint> = rho_grid
            .par_iter()
            .map(|&rho| GcvPoint {
                rho,
                gcv: match self.solve(rho) {
                    Ok(fit) => fit.gcv,
                    Err(e) => {
                        log::warn!("fit failed at rho = {rho:e}: {e}");
                        f64::NAN
                    }
                },
            })
            .collect();
        GcvCurve::from_points(points)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GcvPoint {
    pub rho: f64,
    /// `NaN` where the fit failed.
    pub gcv: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcvCurve {
    pub points: Vec<GcvPoint>,
    pub best_rho: f64,
}

impl GcvCurve {
    /// Picks the argmin over finite values; ties go to the smaller `ρ`.
    pub fn from_points(points: Vec<GcvPoint>) -> Result<Self> {
        let best = points
            .iter()
            .filter(|p| p.gcv.is_finite())
            .min_by(|a, b| a.gcv.total_cmp(&b.gcv).then(a.rho.total_cmp(&b.rho)))
            .ok_or(Error::AllFitsFailed)?;
        Ok(Self {
            best_rho: best.rho,
            points,
        })
    }

    pub fn best_gcv(&self) -> f64 {
        self.points
            .iter()
            .find(|p| p.rho == self.best_rho)
            .map(|p| p.gcv)
            .unwrap_or(f64::NAN)
    }
}

/// Pointwise mean of the GCV curves of several datasets on a common grid,
/// then its argmin.
pub fn mean_gcv_curve(problems: &[SmoothingProblem], rho_grid: &[f64]) -> Result<GcvCurve> {
    if problems.is_empty() {
        return Err(Error::Empty("no datasets for the mean GCV curve".into()));
    }
    let curves = problems
        .par_iter()
        .map(|p| p.gcv_scan(rho_grid))
        .collect::<Result<Vec<_>>>()?;
    mean_of_curves(&curves)
}

pub fn mean_of_curves(curves: &[GcvCurve]) -> Result<GcvCurve> {
    let first = curves
        .first()
        .ok_or_else(|| Error::Empty("no GCV curves to average".into()))?;
    let len = first.points.len();
    if curves.iter().any(|c| c.points.len() != len) {
        return Err(Error::DimensionMismatch(
            "GCV curves have different grids".into(),
        ));
    }
    let points = (0..len)
        .map(|i| GcvPoint {
            rho: first.points[i].rho,
            gcv: curves.iter().map(|c| c.points[i].gcv).sum::<f64>() / curves.len() as f64,
        })
        .collect();
    GcvCurve::from_points(points)
}

/// `count` log-spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi >= lo) || count == 0 {
        return Err(Error::InvalidParameter(format!(
            "log grid needs 0 < lo <= hi and count > 0 (got {lo}, {hi}, {count})"
        )));
    }
    if count == 1 {
        return Ok(vec![lo]);
    }
    let (a, b) = (lo.log10(), hi.log10());
    Ok((0..count)
        .map(|i| 10f64.powf(a + (b - a) * i as f64 / (count - 1) as f64))
        .collect())
}

/// Default scan grid: 25 log-spaced points in `[1e-6, 1e1]`.
pub fn default_rho_grid() -> Vec<f64> {
    log_grid(1e-6, 1e1, 25).expect("static grid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn reference_basis() -> TensorBasis {
        let cfg = KnotConfig::new(0.0, 1.0, vec![0.25, 0.5, 0.75], 2).unwrap();
        TensorBasis::new(TensorBasisSpec {
            x: cfg.clone(),
            y: cfg,
        })
        .unwrap()
    }

    fn midpoints(m: usize) -> Vec<f64> {
        (0..m).map(|i| (i as f64 + 0.5) / m as f64).collect()
    }

    fn random_coeffs(basis: &TensorBasis, rng: &mut ChaCha8Rng) -> ZBCoeffs {
        let (nx, ny) = (basis.x.n_zb(), basis.y.n_zb());
        ZBCoeffs {
            z: DMatrix::from_fn(nx, ny, |_, _| rng.random_range(-1.0..1.0)),
            v: DVector::from_fn(nx, |_, _| rng.random_range(-1.0..1.0)),
            u: DVector::from_fn(ny, |_, _| rng.random_range(-1.0..1.0)),
        }
    }

    #[test]
    fn design_shapes_for_reference_config() {
        let b = reference_basis();
        let x = midpoints(10);
        let d = b.assemble_design(&x, &x).unwrap();
        assert_eq!(d.z.shape(), (100, 25));
        assert_eq!(d.zx.shape(), (100, 5));
        assert_eq!(d.zy.shape(), (100, 5));
        assert_eq!(d.full().rank(1e-10), 35);
        assert_eq!(b.dimension(), 35);
    }

    #[test]
    fn design_row_matches_direct_evaluation() {
        let b = reference_basis();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = random_coeffs(&b, &mut rng);
        let x = midpoints(7);
        let y = midpoints(9);
        let d = b.assemble_design(&x, &y).unwrap();
        let vals = d.full() * c.to_vector();
        let grid = b.eval_zb(&c, &x, &y).unwrap();
        for j in 0..y.len() {
            for i in 0..x.len() {
                assert!((vals[i + x.len() * j] - grid[(i, j)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn packing_roundtrip() {
        let b = reference_basis();
        let c = random_coeffs(&b, &mut ChaCha8Rng::seed_from_u64(2));
        let r = c.packed();
        assert_eq!(r.shape(), (6, 6));
        assert_eq!(r[(5, 5)], 0.0);
        assert_eq!(ZBCoeffs::from_packed(&r).unwrap(), c);
        assert_eq!(ZBCoeffs::from_vector(&c.to_vector(), 5, 5).unwrap(), c);
        let mut bad = r.clone();
        bad[(5, 5)] = 1.0;
        assert!(ZBCoeffs::from_packed(&bad).is_err());
    }

    #[test]
    fn penalty_matches_explicit_kronecker_chain() {
        let b = reference_basis();
        let (p, q) = (1, 1);
        let n = b.assemble_penalty(p, q).unwrap();
        let kx = crate::zb::build_difference_matrix(3, 2).unwrap();
        let dx = crate::zb::build_scale_matrix(&b.x.knots).unwrap();
        let sx = derivative_transform(&b.x.knots, p).unwrap();
        let mx = gram_matrix(&b.x.knots, p).unwrap();
        let kk = kx.kronecker(&kx);
        let dd = dx.kronecker(&dx);
        let ss = sx.kronecker(&sx);
        let mm = mx.kronecker(&mx);
        let explicit = &kk * &dd * ss.transpose() * mm * &ss * &dd * kk.transpose();
        assert!((n - explicit).amax() < 1e-9);
    }

    #[test]
    fn penalty_is_psd() {
        let cfg = KnotConfig::new(0.0, 2.0, vec![0.3, 1.0, 1.2], 3).unwrap();
        let b = TensorBasis::new(TensorBasisSpec {
            x: cfg.clone(),
            y: KnotConfig::uniform(-1.0, 1.0, 2, 2).unwrap(),
        })
        .unwrap();
        for (p, q) in [(0, 0), (1, 1), (2, 1)] {
            let n = b.assemble_penalty(p, q).unwrap();
            let scale = n.amax();
            assert!(n.symmetric_eigenvalues().min() >= -1e-10 * scale);
        }
    }

    #[test]
    fn zero_data_gives_zero_fit() {
        let b = reference_basis();
        let x = midpoints(10);
        let f = DMatrix::zeros(10, 10);
        let fit = b.fit(&f, &x, &x, &PenaltyConfig::new(1, 1, 1e-3)).unwrap();
        assert_eq!(fit.rss, 0.0);
        assert!(fit.coeffs.to_vector().amax() == 0.0);
    }

    #[test]
    fn smoothing_condition_is_strict() {
        // 6x6 grid = 36 > 35 is fine; 5x7 = 35 is not.
        let b = reference_basis();
        let f = DMatrix::zeros(6, 6);
        assert!(b
            .fit(
                &f,
                &midpoints(6),
                &midpoints(6),
                &PenaltyConfig::new(1, 1, 1e-3)
            )
            .is_ok());
        let f = DMatrix::zeros(5, 7);
        let err = b
            .fit(
                &f,
                &midpoints(5),
                &midpoints(7),
                &PenaltyConfig::new(1, 1, 1e-3),
            )
            .unwrap_err();
        assert!(matches!(
            err,
            Error::SmoothingCondition {
                observations: 35,
                dimension: 35
            }
        ));
    }

    #[test]
    fn clustered_data_fails_coverage_and_names_axis() {
        let b = reference_basis();
        let x: Vec<f64> = (0..12).map(|i| 0.01 + 0.01 * i as f64).collect();
        let y = midpoints(12);
        let rep = b.validate_sw(&x, &y);
        assert!(!rep.passed());
        assert!(rep.y.passed());
        assert_eq!(rep.x.empty_supports, vec![3, 4]);
        let f = DMatrix::zeros(12, 12);
        let err = b
            .fit(&f, &x, &y, &PenaltyConfig::new(1, 1, 1e-3))
            .unwrap_err();
        assert!(matches!(err, Error::RankDeficient { axis: Axis::X, .. }));
    }

    #[test]
    fn coverage_examples() {
        let b = reference_basis();
        assert!(b.validate_sw(&midpoints(10), &midpoints(10)).passed());
        let single = TensorBasis::new(TensorBasisSpec {
            x: KnotConfig::new(0.0, 1.0, vec![], 1).unwrap(),
            y: KnotConfig::new(0.0, 1.0, vec![], 1).unwrap(),
        })
        .unwrap();
        assert_eq!(single.x.n_zb(), 1);
        assert!(single.validate_sw(&[0.3], &[0.7]).passed());
    }

    #[test]
    fn gcv_formula_holds() {
        let b = reference_basis();
        let x = midpoints(10);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = DMatrix::from_fn(10, 10, |_, _| rng.random_range(-1.0..1.0));
        let fit = b.fit(&f, &x, &x, &PenaltyConfig::new(1, 1, 1e-2)).unwrap();
        let n = 100.0;
        let expect = (fit.rss / n) / (1.0 - fit.hat_trace / n).powi(2);
        assert!((fit.gcv - expect).abs() <= 1e-12 * expect);
        assert!(fit.normal_residual < 1e-10);
    }

    #[test]
    fn hat_matrix_reproduces_fit() {
        let b = reference_basis();
        let x = midpoints(8);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let f = DMatrix::from_fn(8, 8, |_, _| rng.random_range(-1.0..1.0));
        let prob = b.problem(&f, &x, &x, 1, 1, false).unwrap();
        let fit = prob.solve(1e-3).unwrap();
        let h = prob.hat_matrix(1e-3).unwrap();
        let hv = h * DVector::from_column_slice(f.as_slice());
        for (a, b) in hv.iter().zip(fit.fitted.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!((prob.hat_matrix(1e-3).unwrap().trace() - fit.hat_trace).abs() < 1e-9);
    }

    #[test]
    fn trace_decreases_with_rho() {
        let b = reference_basis();
        let x = midpoints(10);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let f = DMatrix::from_fn(10, 10, |_, _| rng.random_range(-1.0..1.0));
        let prob = b.problem(&f, &x, &x, 1, 1, false).unwrap();
        let grid = log_grid(1e-6, 1e6, 13).unwrap();
        let traces: Vec<f64> = grid
            .iter()
            .map(|&r| prob.solve(r).unwrap().hat_trace)
            .collect();
        for w in traces.windows(2) {
            assert!(w[1] <= w[0] + 1e-9);
        }
        // heavy penalty: interaction block vanishes, trace tends to the
        // number of unpenalized marginal coefficients plus the null space of ℕ
        let heavy = prob.solve(1e8).unwrap();
        let light = prob.solve(1e-8).unwrap();
        assert!(heavy.coeffs.z.amax() < 1e-3 * light.coeffs.z.amax().max(1e-300) + 1e-6);
        assert!(heavy.hat_trace < light.hat_trace);
    }

    #[test]
    fn gcv_scan_tie_breaks_to_smaller_rho() {
        let pts = vec![
            GcvPoint {
                rho: 1e-2,
                gcv: 1.0,
            },
            GcvPoint {
                rho: 1e-3,
                gcv: 1.0,
            },
            GcvPoint {
                rho: 1e-1,
                gcv: 2.0,
            },
        ];
        assert_eq!(GcvCurve::from_points(pts).unwrap().best_rho, 1e-3);
        let one = vec![GcvPoint { rho: 0.5, gcv: 3.0 }];
        assert_eq!(GcvCurve::from_points(one).unwrap().best_rho, 0.5);
        let failed = vec![GcvPoint {
            rho: 0.5,
            gcv: f64::NAN,
        }];
        assert!(matches!(
            GcvCurve::from_points(failed),
            Err(Error::AllFitsFailed)
        ));
    }

    #[test]
    fn single_point_scan_returns_it() {
        let b = reference_basis();
        let x = midpoints(10);
        let f = DMatrix::from_fn(10, 10, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0);
        let prob = b.problem(&f, &x, &x, 1, 1, false).unwrap();
        let curve = prob.gcv_scan(&[0.02]).unwrap();
        assert_eq!(curve.best_rho, 0.02);
        assert!(prob.gcv_scan(&[]).is_err());
    }

    #[test]
    fn zb_to_b_structure() {
        let b = reference_basis();
        let zero = ZBCoeffs::zeros(5, 5);
        assert!(b.zb_to_b(&zero).unwrap().b.amax() == 0.0);

        let mut only_v = ZBCoeffs::zeros(5, 5);
        only_v.v.fill(1.0);
        let bc = b.zb_to_b(&only_v).unwrap().b;
        for i in 0..bc.nrows() {
            for j in 1..bc.ncols() {
                assert_eq!(bc[(i, j)], bc[(i, 0)]);
            }
        }
        let x = midpoints(4);
        let s = b.eval_zb(&only_v, &x, &[0.1, 0.6, 0.95]).unwrap();
        for i in 0..4 {
            assert!((s[(i, 0)] - s[(i, 2)]).abs() < 1e-12);
        }
    }

    #[test]
    fn derivative_orders_are_checked() {
        let b = reference_basis();
        let c = ZBCoeffs::zeros(5, 5);
        let x = midpoints(3);
        assert!(b.eval_derivative(&c, 2, 1, &x, &x).is_err());
        assert!(b.eval_derivative(&c, 1, 1, &x, &x).is_ok());
    }

    #[test]
    fn derivative_zero_order_is_interaction_part() {
        let b = reference_basis();
        let c = random_coeffs(&b, &mut ChaCha8Rng::seed_from_u64(9));
        let x = midpoints(6);
        let d = b.eval_derivative(&c, 0, 0, &x, &x).unwrap();
        let inter = ZBCoeffs {
            z: c.z.clone(),
            v: DVector::zeros(5),
            u: DVector::zeros(5),
        };
        let s = b.eval_zb(&inter, &x, &x).unwrap();
        assert!((d - s).amax() < 1e-12);

        let mut only_u = ZBCoeffs::zeros(5, 5);
        only_u.u = c.u.clone();
        assert!(b.eval_derivative(&only_u, 1, 0, &x, &x).unwrap().amax() == 0.0);
    }

    #[test]
    fn log_grid_endpoints() {
        let g = log_grid(1e-6, 1e1, 25).unwrap();
        assert_eq!(g.len(), 25);
        assert!((g[0] - 1e-6).abs() < 1e-20 && (g[24] - 10.0).abs() < 1e-12);
        assert!(log_grid(0.0, 1.0, 3).is_err());
    }
}
