//! Descriptive statistics over groups of fitted coefficient triples.

use nalgebra::DVector;
use zbspline::{Error, Result, ZBCoeffs};

/// Coefficient-wise mean and sample standard deviation (divisor `n − 1`).
pub fn coefficient_stats(items: &[ZBCoeffs]) -> Result<(ZBCoeffs, ZBCoeffs)> {
    if items.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least two coefficient sets, got {}",
            items.len()
        )));
    }
    let w: Vec<DVector<f64>> = items.iter().map(ZBCoeffs::to_vector).collect();
    let len = w[0].len();
    if w.iter().any(|v| v.len() != len) {
        return Err(Error::DimensionMismatch(
            "coefficient sets differ in size".into(),
        ));
    }
    let n = w.len() as f64;
    let mean = w.iter().fold(DVector::zeros(len), |acc, v| acc + v) / n;
    let var = w.iter().fold(DVector::zeros(len), |acc: DVector<f64>, v| {
        let d = v - &mean;
        acc + d.component_mul(&d)
    }) / (n - 1.0);
    let sd = var.map(f64::sqrt);
    let (nx, ny) = (items[0].v.len(), items[0].u.len());
    Ok((
        ZBCoeffs::from_vector(&mean, nx, ny)?,
        ZBCoeffs::from_vector(&sd, nx, ny)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use zbspline::{KnotConfig, TensorBasis, TensorBasisSpec};

    fn grid_of(basis: &TensorBasis, c: &ZBCoeffs, x: &[f64], y: &[f64]) -> DMatrix<f64> {
        basis.eval_zb(c, x, y).unwrap()
    }

    fn triple(s: f64) -> ZBCoeffs {
        ZBCoeffs {
            z: DMatrix::from_fn(3, 4, |i, j| s * (i as f64 + 2.0 * j as f64) - 1.0),
            v: DVector::from_fn(3, |i, _| s * i as f64),
            u: DVector::from_fn(4, |j, _| 1.0 - s * j as f64),
        }
    }

    #[test]
    fn identical_inputs_have_zero_sd() {
        let (mean, sd) = coefficient_stats(&[triple(0.3), triple(0.3), triple(0.3)]).unwrap();
        assert!((mean.to_vector() - triple(0.3).to_vector()).amax() < 1e-15);
        assert!(sd.to_vector().amax() < 1e-15);
    }

    #[test]
    fn two_inputs_average_to_midpoint() {
        let (mean, sd) = coefficient_stats(&[triple(1.0), triple(3.0)]).unwrap();
        let mid = triple(2.0);
        assert!((mean.to_vector() - mid.to_vector()).amax() < 1e-15);
        // sample SD of {a, b} is |a − b| / √2
        let expect = (triple(1.0).to_vector() - triple(3.0).to_vector()).abs() / 2f64.sqrt();
        assert!((sd.to_vector() - expect).amax() < 1e-14);
    }

    #[test]
    fn mean_of_grids_is_grid_of_mean() {
        let basis = TensorBasis::new(TensorBasisSpec {
            x: KnotConfig::uniform(0.0, 2.0, 2, 1).unwrap(),
            y: KnotConfig::uniform(-1.0, 1.0, 2, 2).unwrap(),
        })
        .unwrap();
        let items = [triple(0.5), triple(-1.5), triple(2.25)];
        let (mean, _) = coefficient_stats(&items).unwrap();
        let x = [0.0, 0.3, 1.1, 2.0];
        let y = [-1.0, 0.0, 0.7];
        let avg = items
            .iter()
            .map(|c| grid_of(&basis, c, &x, &y))
            .fold(DMatrix::zeros(4, 3), |a, g| a + g)
            / 3.0;
        assert!((avg - grid_of(&basis, &mean, &x, &y)).amax() < 1e-12);
    }

    #[test]
    fn single_input_is_rejected() {
        assert!(coefficient_stats(&[triple(1.0)]).is_err());
    }
}
