//! Zero-integral (ZB) spline basis built from B-splines.
//!
//! `Z_i(x) = (k+1) (B_i(x) / (λ_{i+k+1} - λ_i) - B_{i+1}(x) / (λ_{i+k+2} - λ_{i+1}))`,
//! i.e. `Z(x) = K D B(x)` with `K` the first-difference matrix and `D` the
//! inverse knot-span scaling. Each `Z_i` is the derivative of a degree `k+1`
//! B-spline that vanishes at both ends, hence integrates to zero.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::knots::{eval_bspline_basis, CollocationMatrix, ExtendedKnots, KnotConfig};

/// `rows × (rows + 1)` matrix with `1` on the diagonal and `-1` on the
/// superdiagonal; `rows = t + s`.
pub fn build_difference_matrix(t: usize, s: usize) -> Result<DMatrix<f64>> {
    let rows = t + s;
    if rows == 0 {
        return Err(Error::InvalidParameter(
            "difference matrix needs at least one row".into(),
        ));
    }
    let mut k = DMatrix::zeros(rows, rows + 1);
    for i in 0..rows {
        k[(i, i)] = 1.0;
        k[(i, i + 1)] = -1.0;
    }
    Ok(k)
}

/// Diagonal of `D = (k+1) diag(d)^{-1}` with `d_i = λ_{i+k+1} - λ_i`.
pub fn build_scale_matrix(knots: &ExtendedKnots) -> Result<DMatrix<f64>> {
    let k = knots.degree();
    let t = knots.values();
    let n = knots.n_basis();
    let mut diag = Vec::with_capacity(n);
    for i in 0..n {
        let d = t[i + k + 1] - t[i];
        if d <= 0.0 {
            return Err(Error::InvalidKnots(format!(
                "zero knot span at position {i}"
            )));
        }
        diag.push((k + 1) as f64 / d);
    }
    Ok(DMatrix::from_diagonal(&nalgebra::DVector::from_vec(diag)))
}

/// `K D`: maps B-spline values to ZB values, shape `(g+k) × (g+k+1)`.
pub fn zb_map(knots: &ExtendedKnots) -> Result<DMatrix<f64>> {
    let n = knots.n_basis();
    if n < 2 {
        return Err(Error::InvalidKnots(
            "the ZB basis is empty when g + k = 0".into(),
        ));
    }
    let k = build_difference_matrix(knots.g(), knots.degree())?;
    let d = build_scale_matrix(knots)?;
    Ok(k * d)
}

/// ZB collocation matrix, one row per point and `g + k` columns.
pub fn eval_zb_basis(knots: &ExtendedKnots, points: &[f64]) -> Result<CollocationMatrix> {
    let map = zb_map(knots)?;
    let b = eval_bspline_basis(knots, points)?;
    Ok(CollocationMatrix {
        entries: b.entries * map.transpose(),
        points: b.points,
    })
}

/// `T = [K D; 1ᵀ]`, the full-rank change of basis from B-splines to
/// `(Z_{-k}, …, Z_{g-1}, 1)`.
pub fn build_zb_transform(knots: &ExtendedKnots) -> Result<DMatrix<f64>> {
    let map = zb_map(knots)?;
    let n = knots.n_basis();
    let mut t = DMatrix::zeros(n, n);
    t.view_mut((0, 0), (n - 1, n)).copy_from(&map);
    t.row_mut(n - 1).fill(1.0);
    Ok(t)
}

/// Per-axis data shared by every tensor-product computation.
#[derive(Debug, Clone)]
pub struct AxisBasis {
    pub config: KnotConfig,
    pub knots: ExtendedKnots,
    /// `K D`, shape `(g+k) × (g+k+1)`.
    pub zb_map: DMatrix<f64>,
}

impl AxisBasis {
    pub fn new(config: KnotConfig) -> Result<Self> {
        let knots = crate::knots::extend_knots(&config)?;
        let zb_map = zb_map(&knots)?;
        Ok(Self {
            config,
            knots,
            zb_map,
        })
    }

    pub fn degree(&self) -> usize {
        self.knots.degree()
    }

    /// Number of ZB functions, `g + k`.
    pub fn n_zb(&self) -> usize {
        self.zb_map.nrows()
    }

    pub fn n_bspline(&self) -> usize {
        self.zb_map.ncols()
    }

    pub fn lo(&self) -> f64 {
        self.config.lo
    }

    pub fn hi(&self) -> f64 {
        self.config.hi
    }

    pub fn width(&self) -> f64 {
        self.config.hi - self.config.lo
    }

    pub fn bspline(&self, points: &[f64]) -> Result<DMatrix<f64>> {
        Ok(eval_bspline_basis(&self.knots, points)?.entries)
    }

    pub fn zb(&self, points: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.bspline(points)? * self.zb_map.transpose())
    }

    /// Support of ZB function `a` (0-based): the union of the supports of
    /// `B_a` and `B_{a+1}`.
    pub fn zb_support(&self, a: usize) -> (f64, f64) {
        let t = self.knots.values();
        (t[a], t[a + self.degree() + 2])
    }
}
