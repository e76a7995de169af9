use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{invalid_arg, Error, Result};

/// Ridge added to every fitted covariance.
pub const COVARIANCE_RIDGE: f64 = 1e-6;
const SYMMETRY_TOL: f64 = 1e-8;
const PSD_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    /// Fewer samples than `dim + 1`: the covariance is rank deficient and
    /// only the ridge keeps it positive definite.
    pub rank_deficient: bool,
}

impl GaussianStats {
    /// Validates symmetry and positive semi-definiteness.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if cov.nrows() != d || cov.ncols() != d {
            invalid_arg!("covariance is {}x{}, mean has {d} entries", cov.nrows(), cov.ncols());
        }
        let asym = (&cov - cov.transpose()).abs().max();
        if asym > SYMMETRY_TOL {
            return Err(Error::NumericalFailure(format!("covariance asymmetric by {asym:e}")));
        }
        let min_eig = SymmetricEigen::new(cov.clone()).eigenvalues.min();
        if min_eig < -PSD_TOL {
            return Err(Error::NumericalFailure(format!("covariance has eigenvalue {min_eig:e}")));
        }
        Ok(Self {
            mean,
            cov,
            rank_deficient: false,
        })
    }

    /// 1-D convenience constructor.
    pub fn scalar(mean: f64, var: f64) -> Result<Self> {
        Self::new(DVector::from_element(1, mean), DMatrix::from_element(1, 1, var))
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Sample mean and unbiased covariance (plus ridge), accumulated in
    /// input order.
    pub fn fit(samples: &[Vec<f64>]) -> Result<Self> {
        let Some(first) = samples.first() else {
            invalid_arg!("cannot fit statistics to an empty sample set");
        };
        let d = first.len();
        if d == 0 || samples.iter().any(|s| s.len() != d) {
            invalid_arg!("feature vectors must share a positive dimension");
        }
        let n = samples.len();
        let mut mean = DVector::zeros(d);
        for s in samples {
            mean += DVector::from_column_slice(s);
        }
        mean /= n as f64;
        let mut cov = DMatrix::zeros(d, d);
        for s in samples {
            let c = DVector::from_column_slice(s) - &mean;
            cov += &c * c.transpose();
        }
        if n > 1 {
            cov /= (n - 1) as f64;
        }
        // exact symmetry before validation
        cov = (&cov + cov.transpose()) * 0.5;
        let mut stats = Self::new(mean, cov)?;
        stats.cov += DMatrix::identity(d, d) * COVARIANCE_RIDGE;
        stats.rank_deficient = n < d + 1;
        Ok(stats)
    }
}

fn sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

/// `|mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a S_b)^(1/2))`.
///
/// The trace of the square root is taken from the eigenvalues of the
/// symmetric matrix `S_a^(1/2) S_b S_a^(1/2)`, which shares its spectrum
/// with `S_a S_b`; negative eigenvalues are clamped to zero.
pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    if a.dim() != b.dim() {
        invalid_arg!("feature dimensions differ: {} vs {}", a.dim(), b.dim());
    }
    let dm = &a.mean - &b.mean;
    let sa = sqrt_psd(&a.cov);
    let inner = &sa * &b.cov * &sa;
    let inner = (&inner + inner.transpose()) * 0.5;
    let tr_sqrt: f64 = SymmetricEigen::new(inner)
        .eigenvalues
        .iter()
        .map(|v| v.max(0.0).sqrt())
        .sum();
    let d = dm.dot(&dm) + a.cov.trace() + b.cov.trace() - 2.0 * tr_sqrt;
    if !d.is_finite() {
        return Err(Error::NumericalFailure(format!("Frechet distance is {d}")));
    }
    Ok(d.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_psd() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            GaussianStats::new(DVector::zeros(2), cov),
            Err(Error::NumericalFailure(_))
        ));
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(GaussianStats::new(DVector::zeros(2), asym).is_err());
    }

    #[test]
    fn fit_flags_small_samples() {
        let s = GaussianStats::fit(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert!(s.rank_deficient);
        assert!((s.mean[0] - 0.5).abs() < 1e-15);
        assert!((s.cov[(0, 0)] - (0.5 + COVARIANCE_RIDGE)).abs() < 1e-15);
        assert!(GaussianStats::fit(&[]).is_err());
    }
}
