//! Kernel functions and design-matrix construction.
//!
//! Two regimes are supported. In the kernel regime every training input
//! contributes one basis column, `Φ[i][j] = K(x_i, x_j)`, so the design is
//! square. In the identity regime the (standardised) regressor matrix is
//! used directly as the design, which turns the engine into a
//! variable-selection method.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SblError};

/// Which basis family the design matrix is built from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelSpec {
    /// Hyperparameter-free linear spline kernel; product over dimensions when D > 1.
    LinearSpline,
    /// `exp(-|a-b|^2 / (2 width^2))`.
    Gaussian { width: f64 },
    /// Φ = X, no kernel expansion.
    IdentityDesign,
}

impl KernelSpec {
    pub fn gaussian(width: f64) -> Result<Self> {
        if !(width.is_finite() && width > 0.0) {
            return Err(SblError::InvalidInput(format!(
                "gaussian width must be positive, got {width}"
            )));
        }
        Ok(KernelSpec::Gaussian { width })
    }

    /// Gaussian kernel whose width is the median pairwise distance between rows of `x`.
    pub fn gaussian_median_heuristic(x: &DMatrix<f64>) -> Result<Self> {
        let n = x.nrows();
        let mut dists = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for i in 0..n {
            for j in (i + 1)..n {
                let d2: f64 = (0..x.ncols()).map(|k| (x[(i, k)] - x[(j, k)]).powi(2)).sum();
                dists.push(d2.sqrt());
            }
        }
        dists.retain(|d| *d > 0.0);
        if dists.is_empty() {
            return Err(SblError::InvalidInput(
                "median heuristic needs at least two distinct inputs".into(),
            ));
        }
        dists.sort_by(|a, b| a.total_cmp(b));
        let mid = dists.len() / 2;
        let median = if dists.len() % 2 == 0 {
            0.5 * (dists[mid - 1] + dists[mid])
        } else {
            dists[mid]
        };
        Self::gaussian(median)
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, KernelSpec::IdentityDesign)
    }
}

impl std::str::FromStr for KernelSpec {
    type Err = SblError;

    /// Parses `spline`, `identity` or `gaussian:<width>`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spline" => Ok(KernelSpec::LinearSpline),
            "identity" => Ok(KernelSpec::IdentityDesign),
            other => match other.strip_prefix("gaussian:") {
                Some(w) => {
                    let width: f64 = w.parse().map_err(|_| {
                        SblError::InvalidInput(format!("bad gaussian width '{w}'"))
                    })?;
                    KernelSpec::gaussian(width)
                }
                None => Err(SblError::InvalidInput(format!("unknown kernel '{other}'"))),
            },
        }
    }
}

/// Univariate linear spline kernel.
pub fn linear_spline_1d(a: f64, b: f64) -> f64 {
    let m = a.min(b);
    let ab = a * b;
    let sum = a + b;
    1.0 + ab + ab * m - 0.5 * sum * m * m + sum / 3.0 * m * m * m
}

/// Evaluates the kernel between two input points.
pub fn kernel_eval(spec: &KernelSpec, a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(SblError::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(SblError::NonFinite("kernel input"));
    }
    let value = match spec {
        KernelSpec::LinearSpline => a
            .iter()
            .zip(b)
            .map(|(&u, &v)| linear_spline_1d(u, v))
            .product(),
        KernelSpec::Gaussian { width } => {
            let d2: f64 = a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum();
            (-d2 / (2.0 * width * width)).exp()
        }
        KernelSpec::IdentityDesign => {
            return Err(SblError::InvalidInput(
                "identity design has no pointwise kernel".into(),
            ))
        }
    };
    if !value.is_finite() {
        return Err(SblError::NonFinite("kernel value"));
    }
    Ok(value)
}

/// Where a design column came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    /// Column `j` is the kernel centred at training sample `j`.
    Kernel,
    /// Column `j` is regressor `j`.
    Identity,
}

/// The N×M basis-response matrix plus per-column provenance.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    values: DMatrix<f64>,
    column_origin: Vec<usize>,
    regime: Regime,
}

impl DesignMatrix {
    /// Wraps an arbitrary matrix as an identity-regime design.
    pub fn from_matrix(values: DMatrix<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(SblError::NonFinite("design matrix"));
        }
        let column_origin = (0..values.ncols()).collect();
        Ok(Self {
            values,
            column_origin,
            regime: Regime::Identity,
        })
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn column_origin(&self) -> &[usize] {
        &self.column_origin
    }

    pub fn regime(&self) -> Regime {
        self.regime
    }
}

/// Builds the design matrix for `x` (N×D, one row per sample).
pub fn build_design(spec: &KernelSpec, x: &DMatrix<f64>) -> Result<DesignMatrix> {
    let n = x.nrows();
    if n == 0 {
        return Err(SblError::InvalidInput("design needs at least one row".into()));
    }
    if spec.is_identity() {
        return DesignMatrix::from_matrix(x.clone());
    }
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| x.row(i).iter().copied().collect())
        .collect();
    let mut values = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let k = kernel_eval(spec, &rows[i], &rows[j])?;
            values[(i, j)] = k;
            values[(j, i)] = k;
        }
    }
    Ok(DesignMatrix {
        values,
        column_origin: (0..n).collect(),
        regime: Regime::Kernel,
    })
}

/// Basis responses `φ(x*)` for the given kernel centres.
pub fn kernel_row(spec: &KernelSpec, x_star: &[f64], centres: &[Vec<f64>]) -> Result<Vec<f64>> {
    centres
        .iter()
        .map(|c| kernel_eval(spec, x_star, c))
        .collect()
}
