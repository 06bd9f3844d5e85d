//! Predictive distribution at new inputs.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Result, SblError};
use crate::kernels::{kernel_row, KernelSpec};
use crate::sbl::FitResult;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub mean: f64,
    pub variance: f64,
    pub interval: (f64, f64),
}

/// Two-sided standard normal quantile for the given coverage.
pub fn z_for_coverage(coverage: f64) -> Result<f64> {
    if !(coverage > 0.0 && coverage < 1.0) {
        return Err(SblError::InvalidInput(format!(
            "coverage must lie in (0, 1), got {coverage}"
        )));
    }
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(normal.inverse_cdf(0.5 + coverage / 2.0))
}

/// Basis responses of the relevance columns at `x_star`.
///
/// Kernel regime needs the training inputs (one row per sample); identity
/// regime reads the relevant regressors straight out of `x_star`.
pub fn relevance_basis(
    fit: &FitResult,
    training_inputs: Option<&DMatrix<f64>>,
    spec: &KernelSpec,
    x_star: &[f64],
) -> Result<Vec<f64>> {
    if x_star.iter().any(|v| !v.is_finite()) {
        return Err(SblError::NonFinite("prediction input"));
    }
    if spec.is_identity() {
        let m = fit.tau_hat.len();
        if x_star.len() != m {
            return Err(SblError::DimensionMismatch {
                expected: m,
                got: x_star.len(),
            });
        }
        return Ok(fit.relevance_indices.iter().map(|&j| x_star[j]).collect());
    }
    let inputs = training_inputs.ok_or_else(|| {
        SblError::InvalidInput("kernel prediction needs the training inputs".into())
    })?;
    if x_star.len() != inputs.ncols() {
        return Err(SblError::DimensionMismatch {
            expected: inputs.ncols(),
            got: x_star.len(),
        });
    }
    let centres: Vec<Vec<f64>> = fit
        .relevance_indices
        .iter()
        .map(|&j| inputs.row(j).iter().copied().collect())
        .collect();
    kernel_row(spec, x_star, &centres)
}

/// Predictive mean `φ(x*)ᵀμ` and variance `σ̂² + φ(x*)ᵀ Σ φ(x*)` from basis responses.
pub fn predict_from_basis(fit: &FitResult, basis: &[f64], z: f64) -> Result<Prediction> {
    if basis.len() != fit.weights.len() {
        return Err(SblError::DimensionMismatch {
            expected: fit.weights.len(),
            got: basis.len(),
        });
    }
    let phi = DVector::from_column_slice(basis);
    let mean = phi.dot(&DVector::from_column_slice(&fit.weights));
    let quad = if basis.is_empty() {
        0.0
    } else {
        phi.dot(&(fit.covariance() * &phi))
    };
    // Σ is PSD; clamp roundoff so the variance never drops below σ̂²
    let variance = fit.sigma2_hat + quad.max(0.0);
    let half = z * variance.sqrt();
    Ok(Prediction {
        mean,
        variance,
        interval: (mean - half, mean + half),
    })
}

/// Predictive distribution at one input, with a `coverage` credible interval.
pub fn predict_one(
    fit: &FitResult,
    training_inputs: Option<&DMatrix<f64>>,
    spec: &KernelSpec,
    x_star: &[f64],
    coverage: f64,
) -> Result<Prediction> {
    let z = z_for_coverage(coverage)?;
    let basis = relevance_basis(fit, training_inputs, spec, x_star)?;
    predict_from_basis(fit, &basis, z)
}

/// Row-wise [`predict_one`].
pub fn predict_batch(
    fit: &FitResult,
    training_inputs: Option<&DMatrix<f64>>,
    spec: &KernelSpec,
    x_star: &DMatrix<f64>,
    coverage: f64,
) -> Result<Vec<Prediction>> {
    let z = z_for_coverage(coverage)?;
    (0..x_star.nrows())
        .map(|i| {
            let row: Vec<f64> = x_star.row(i).iter().copied().collect();
            let basis = relevance_basis(fit, training_inputs, spec, &row)?;
            predict_from_basis(fit, &basis, z)
        })
        .collect()
}

/// Weight credible intervals `μᵢ ± z·√Σᵢᵢ`, one per relevance column.
pub fn weight_intervals(fit: &FitResult, coverage: f64) -> Result<Vec<(f64, f64)>> {
    let z = z_for_coverage(coverage)?;
    let l = fit.weights.len();
    Ok(fit
        .weights
        .iter()
        .enumerate()
        .map(|(k, &w)| {
            let half = z * fit.weight_covariance[k * l + k].max(0.0).sqrt();
            (w - half, w + half)
        })
        .collect())
}
