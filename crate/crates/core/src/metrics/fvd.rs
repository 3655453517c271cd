//! Fréchet (Wasserstein-2) distance between Gaussians fitted to feature sets.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::metrics::features::FeatureSet;

const SYMMETRY_TOL: f64 = 1e-10;
const PSD_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl GaussianStats {
    /// Checks shape, symmetry (within 1e-10) and numerical positive semidefiniteness
    /// (eigenvalues ≥ −1e-8).
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 || cov.shape() != (d, d) {
            return Err(Error::invalid(format!(
                "mean has {d} entries but covariance is {}x{}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("statistics contain non-finite values"));
        }
        let asym = (&cov - cov.transpose()).abs().max();
        if asym > SYMMETRY_TOL {
            return Err(Error::invalid(format!(
                "covariance is not symmetric (max |Σ−Σᵀ| = {asym:e})"
            )));
        }
        let min_eig = SymmetricEigen::new(cov.clone()).eigenvalues.min();
        if min_eig < -PSD_TOL {
            return Err(Error::invalid(format!(
                "covariance is not positive semidefinite (smallest eigenvalue {min_eig:e})"
            )));
        }
        Ok(Self { mean, cov })
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Sample mean and unbiased (`N−1`) covariance, symmetrized.
pub fn fit_gaussian(features: &FeatureSet) -> GaussianStats {
    let x = features.vectors();
    let n = x.nrows();
    let mean: DVector<f64> = x.row_mean().transpose();
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let cov = centered.tr_mul(&centered) / (n as f64 - 1.0);
    let cov = (&cov + cov.transpose()) * 0.5;
    GaussianStats { mean, cov }
}

fn sym_eigen(m: &DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("matrix has non-finite entries".into()));
    }
    let sym = (m + m.transpose()) * 0.5;
    Ok(SymmetricEigen::new(sym))
}

/// Principal square root of a symmetric PSD matrix; negative eigenvalues are clamped to 0.
pub fn sqrt_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.nrows() != m.ncols() {
        return Err(Error::invalid(format!(
            "{}x{} matrix is not square",
            m.nrows(),
            m.ncols()
        )));
    }
    let eig = sym_eigen(m)?;
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let v = &eig.eigenvectors;
    Ok(v * DMatrix::from_diagonal(&roots) * v.transpose())
}

/// `‖μ_r−μ_g‖² + Tr(Σ_r + Σ_g − 2(Σ_r^{1/2} Σ_g Σ_r^{1/2})^{1/2})`, clamped at zero.
pub fn frechet_distance(real: &GaussianStats, gen: &GaussianStats) -> Result<f64> {
    let d = real.dim();
    if gen.dim() != d {
        return Err(Error::invalid(format!(
            "feature dimensions differ: {d} vs {}",
            gen.dim()
        )));
    }
    if real == gen {
        return Ok(0.0);
    }
    let mean_term = (&real.mean - &gen.mean).norm_squared();

    let root_r = sqrt_psd(&real.cov)?;
    let product = &root_r * &gen.cov * &root_r;
    let mut eig = sym_eigen(&product)?;
    if eig.eigenvalues.min() < -PSD_TOL {
        let cross = (&real.cov * &gen.cov).trace().max(0.0);
        let eps = 1e-10 * cross.sqrt() / d as f64;
        let shifted = product + DMatrix::identity(d, d) * eps;
        eig = sym_eigen(&shifted)?;
    }
    let trace_root: f64 = eig.eigenvalues.iter().map(|l| l.max(0.0).sqrt()).sum();

    let value = mean_term + real.cov.trace() + gen.cov.trace() - 2.0 * trace_root;
    if !value.is_finite() {
        return Err(Error::Numerical(format!("Fréchet distance evaluated to {value}")));
    }
    Ok(value.max(0.0))
}
