//! Split of a ZB spline into its interactive and independent parts.
//!
//! With `s = Z_xᵀ Z Z_y + Z_xᵀ v + Z_yᵀ u` the interactive part is the `Z`
//! term and the clr marginals are `s¹ = Z_xᵀ v`, `s² = Z_yᵀ u`. The split is a
//! partition of the coefficients; no values are recomputed.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::knots::gram_matrix;
use crate::smoother::{weighted_sum, TensorBasis, ZBCoeffs};
use crate::zb::AxisBasis;

#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionResult {
    pub interactive: DMatrix<f64>,
    pub marginal_x: DVector<f64>,
    pub marginal_y: DVector<f64>,
    pub norm_int: f64,
    pub norm_ind: f64,
    pub norm_total: f64,
    /// `‖s_int‖² / ‖s‖²`, zero for the zero spline.
    pub dependence_ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartNorms {
    pub norm_int: f64,
    pub norm_ind: f64,
    pub norm_total: f64,
}

impl PartNorms {
    pub fn dependence_ratio(&self) -> f64 {
        let total = self.norm_total * self.norm_total;
        if total > 0.0 {
            (self.norm_int * self.norm_int / total).clamp(0.0, 1.0)
        } else {
            0.0
        }
    }

    /// `|‖s‖² − ‖s_int‖² − ‖s_ind‖²| / ‖s‖²`.
    pub fn pythagoras_gap(&self) -> f64 {
        let total = self.norm_total * self.norm_total;
        let gap = (total - self.norm_int * self.norm_int - self.norm_ind * self.norm_ind).abs();
        if total > 0.0 {
            gap / total
        } else {
            gap
        }
    }
}

/// Norms and ratio, as written to JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecompositionSummary {
    pub norm_int: f64,
    pub norm_ind: f64,
    pub norm_total: f64,
    pub dependence_ratio: f64,
}

impl DecompositionResult {
    pub fn summary(&self) -> DecompositionSummary {
        DecompositionSummary {
            norm_int: self.norm_int,
            norm_ind: self.norm_ind,
            norm_total: self.norm_total,
            dependence_ratio: self.dependence_ratio,
        }
    }

    pub fn reassemble(&self) -> ZBCoeffs {
        ZBCoeffs {
            z: self.interactive.clone(),
            v: self.marginal_x.clone(),
            u: self.marginal_y.clone(),
        }
    }

    /// Coefficients of `s_int` alone.
    pub fn interactive_coeffs(&self) -> ZBCoeffs {
        ZBCoeffs {
            z: self.interactive.clone(),
            v: DVector::zeros(self.marginal_x.len()),
            u: DVector::zeros(self.marginal_y.len()),
        }
    }

    /// Coefficients of `s_ind = s¹ + s²`.
    pub fn independent_coeffs(&self) -> ZBCoeffs {
        ZBCoeffs {
            z: DMatrix::zeros(self.interactive.nrows(), self.interactive.ncols()),
            v: self.marginal_x.clone(),
            u: self.marginal_y.clone(),
        }
    }
}

pub fn decompose(basis: &TensorBasis, coeffs: &ZBCoeffs) -> Result<DecompositionResult> {
    let norms = part_norms(basis, coeffs)?;
    Ok(DecompositionResult {
        interactive: coeffs.z.clone(),
        marginal_x: coeffs.v.clone(),
        marginal_y: coeffs.u.clone(),
        norm_int: norms.norm_int,
        norm_ind: norms.norm_ind,
        norm_total: norms.norm_total,
        dependence_ratio: norms.dependence_ratio(),
    })
}

/// `K D M Dᵀ Kᵀ`: Gram matrix of the ZB functions of one axis.
fn zb_gram(axis: &AxisBasis) -> Result<DMatrix<f64>> {
    let m = gram_matrix(&axis.knots, 0)?;
    Ok(&axis.zb_map * m * axis.zb_map.transpose())
}

/// `tr(Aᵀ Gx A Gy)`, the squared L² norm of `B_xᵀ A B_y` for Gram matrices
/// `Gx`, `Gy`.
fn tensor_norm_sq(a: &DMatrix<f64>, gx: &DMatrix<f64>, gy: &DMatrix<f64>) -> f64 {
    (a.transpose() * gx * a * gy).trace().max(0.0)
}

/// Closed-form L² norms of the interactive part, the independent part and
/// the whole spline. The total is computed from the B-spline form so that
/// the Pythagorean identity is a genuine check.
pub fn part_norms(basis: &TensorBasis, coeffs: &ZBCoeffs) -> Result<PartNorms> {
    let gx = zb_gram(&basis.x)?;
    let gy = zb_gram(&basis.y)?;
    let norm_int = tensor_norm_sq(&coeffs.z, &gx, &gy).sqrt();

    let mx = gram_matrix(&basis.x.knots, 0)?;
    let my = gram_matrix(&basis.y.knots, 0)?;
    // Q = a_x 1ᵀ + 1 a_yᵀ
    let ax = basis.x.zb_map.transpose() * &coeffs.v;
    let ay = basis.y.zb_map.transpose() * &coeffs.u;
    let q = DMatrix::from_fn(ax.len(), ay.len(), |i, j| ax[i] + ay[j]);
    let norm_ind = tensor_norm_sq(&q, &mx, &my).sqrt();

    let b = basis.zb_to_b(coeffs)?.b;
    let norm_total = tensor_norm_sq(&b, &mx, &my).sqrt();
    Ok(PartNorms {
        norm_int,
        norm_ind,
        norm_total,
    })
}

/// `∬ s_ind · s_int` by tensor Gauss–Legendre quadrature.
pub fn orthogonality_check(basis: &TensorBasis, coeffs: &ZBCoeffs) -> Result<f64> {
    let d = decompose(basis, coeffs)?;
    let (rx, ry) = basis.quadrature(2 * basis.x.degree(), 2 * basis.y.degree());
    let si = basis.eval_zb(&d.interactive_coeffs(), &rx.points, &ry.points)?;
    let sd = basis.eval_zb(&d.independent_coeffs(), &rx.points, &ry.points)?;
    Ok(weighted_sum(
        &si.component_mul(&sd),
        &rx.weights,
        &ry.weights,
    ))
}

/// L² norms of the parts by quadrature of the squared surfaces.
pub fn quadrature_norms(basis: &TensorBasis, coeffs: &ZBCoeffs) -> Result<PartNorms> {
    let d = decompose(basis, coeffs)?;
    let (rx, ry) = basis.quadrature(2 * basis.x.degree(), 2 * basis.y.degree());
    let norm = |c: &ZBCoeffs| -> Result<f64> {
        let s = basis.eval_zb(c, &rx.points, &ry.points)?;
        Ok(weighted_sum(&s.component_mul(&s), &rx.weights, &ry.weights)
            .max(0.0)
            .sqrt())
    };
    Ok(PartNorms {
        norm_int: norm(&d.interactive_coeffs())?,
        norm_ind: norm(&d.independent_coeffs())?,
        norm_total: norm(coeffs)?,
    })
}

/// Clr marginal `s¹(x) = Σ v_i Z_i(x)`.
pub fn eval_marginal_x(basis: &TensorBasis, coeffs: &ZBCoeffs, x: &[f64]) -> Result<Vec<f64>> {
    Ok((basis.x.zb(x)? * &coeffs.v).iter().copied().collect())
}

/// Clr marginal `s²(y) = Σ u_j Z_j(y)`.
pub fn eval_marginal_y(basis: &TensorBasis, coeffs: &ZBCoeffs, y: &[f64]) -> Result<Vec<f64>> {
    Ok((basis.y.zb(y)? * &coeffs.u).iter().copied().collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MarginalReport {
    /// Max gap between `(1/(d−c)) ∫ s dy` and `s¹` over the test abscissae.
    pub max_gap_x: f64,
    pub max_gap_y: f64,
    pub n_points: usize,
}

impl MarginalReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_gap_x < tol && self.max_gap_y < tol
    }
}

/// Integrates the full surface over the other variable at `n_points`
/// equispaced abscissae per axis and compares with the coefficient-level
/// clr marginals.
pub fn marginal_check(
    basis: &TensorBasis,
    coeffs: &ZBCoeffs,
    n_points: usize,
) -> Result<MarginalReport> {
    let abscissae = |axis: &AxisBasis| -> Vec<f64> {
        (0..n_points)
            .map(|i| axis.lo() + axis.width() * (i as f64 + 0.5) / n_points as f64)
            .collect()
    };
    let xs = abscissae(&basis.x);
    let ys = abscissae(&basis.y);
    let (rx, ry) = basis.quadrature(basis.x.degree(), basis.y.degree());

    let sx = basis.eval_zb(coeffs, &xs, &ry.points)?;
    let direct_x = eval_marginal_x(basis, coeffs, &xs)?;
    let max_gap_x = (0..xs.len())
        .map(|i| {
            let int: f64 = sx.row(i).iter().zip(&ry.weights).map(|(s, w)| s * w).sum();
            (int / basis.y.width() - direct_x[i]).abs()
        })
        .fold(0.0, f64::max);

    let sy = basis.eval_zb(coeffs, &rx.points, &ys)?;
    let direct_y = eval_marginal_y(basis, coeffs, &ys)?;
    let max_gap_y = (0..ys.len())
        .map(|j| {
            let int: f64 = sy
                .column(j)
                .iter()
                .zip(&rx.weights)
                .map(|(s, w)| s * w)
                .sum();
            (int / basis.x.width() - direct_y[j]).abs()
        })
        .fold(0.0, f64::max);

    Ok(MarginalReport {
        max_gap_x,
        max_gap_y,
        n_points,
    })
}
