use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{EpvtError, Result};

/// Diagonal loading added to both covariances before taking square roots.
pub const SHRINKAGE: f64 = 1e-6;

/// Mean and covariance of a feature cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSummary {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub count: usize,
}

impl GaussianSummary {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>, count: usize) -> Result<Self> {
        let d = mean.len();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(EpvtError::Dimension(format!(
                "mean has {d} entries, covariance is {}×{}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(EpvtError::NonFinite("summary has NaN or infinite entries".into()));
        }
        // Symmetrize away rounding from accumulation.
        let cov = (&cov + cov.transpose()) * 0.5;
        Ok(Self { mean, cov, count })
    }

    /// Sample mean and unbiased covariance of `rows`, each of equal width.
    pub fn from_samples(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(EpvtError::EmptyDataset("no feature rows to summarize".into()));
        }
        let d = rows[0].len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(EpvtError::Dimension("feature rows have unequal widths".into()));
        }
        let x = DMatrix::from_fn(n, d, |i, j| rows[i][j]);
        let mean = DVector::from_fn(d, |j, _| x.column(j).mean());
        let mut centered = x;
        for j in 0..d {
            let m = mean[j];
            centered.column_mut(j).add_scalar_mut(-m);
        }
        let denom = if n > 1 { (n - 1) as f64 } else { 1.0 };
        let cov = centered.transpose() * &centered / denom;
        if n < d + 1 {
            log::warn!("covariance from {n} samples in {d} dimensions is rank-deficient");
        }
        Self::new(mean, cov, n)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// Squared Fréchet distance between Gaussians,
/// `‖μ_a − μ_b‖² + Tr(Σ_a + Σ_b − 2(Σ_a Σ_b)^{1/2})`.
///
/// `Tr (Σ_a Σ_b)^{1/2}` is evaluated as `Tr (A^{1/2} B A^{1/2})^{1/2}`, which
/// has the same eigenvalues and keeps every decomposition symmetric.
pub fn frechet_distance(a: &GaussianSummary, b: &GaussianSummary) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(EpvtError::Dimension(format!("summaries of width {} and {}", a.dim(), b.dim())));
    }
    let d = a.dim();
    let eye = DMatrix::<f64>::identity(d, d) * SHRINKAGE;
    let sa = &a.cov + &eye;
    let sb = &b.cov + &eye;
    let ra = psd_sqrt(&sa);
    let inner = &ra * &sb * &ra;
    let inner = (&inner + inner.transpose()) * 0.5;
    let tr_cross: f64 = SymmetricEigen::new(inner).eigenvalues.iter().map(|l| l.max(0.0).sqrt()).sum();
    let mean_term = (&a.mean - &b.mean).norm_squared();
    let value = mean_term + sa.trace() + sb.trace() - 2.0 * tr_cross;
    if !value.is_finite() {
        return Err(EpvtError::NonFinite("Fréchet distance overflowed".into()));
    }
    Ok(value.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag(mean: &[f64], var: &[f64]) -> GaussianSummary {
        GaussianSummary::new(
            DVector::from_column_slice(mean),
            DMatrix::from_diagonal(&DVector::from_column_slice(var)),
            100,
        )
        .unwrap()
    }

    #[test]
    fn closed_forms() {
        let one_d = frechet_distance(&diag(&[0.0], &[1.0]), &diag(&[1.0], &[1.0])).unwrap();
        assert!((one_d - 1.0).abs() < 1e-6);
        let two_d = frechet_distance(&diag(&[0.0, 0.0], &[1.0, 1.0]), &diag(&[1.0, 1.0], &[4.0, 4.0])).unwrap();
        assert!((two_d - 4.0).abs() < 1e-6, "{two_d}");
        let a = diag(&[0.3, -1.0, 2.0], &[0.5, 2.0, 1.0]);
        assert!(frechet_distance(&a, &a).unwrap().abs() < 1e-8);
    }

    #[test]
    fn sample_summary() {
        let rows = vec![vec![1.0, 2.0], vec![3.0, 2.0], vec![2.0, 5.0]];
        let s = GaussianSummary::from_samples(&rows).unwrap();
        assert_eq!(s.mean.as_slice(), &[2.0, 3.0]);
        assert!((s.cov[(0, 0)] - 1.0).abs() < 1e-12);
        assert!((s.cov[(1, 1)] - 3.0).abs() < 1e-12);
        assert!((s.cov[(0, 1)] - 0.0).abs() < 1e-12);
        assert!(frechet_distance(&s, &diag(&[0.0], &[1.0])).is_err());
    }
}
