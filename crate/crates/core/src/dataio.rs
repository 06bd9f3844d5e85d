//! Tabular data for variable selection: CSV loading, standardization and
//! seeded train/test splits.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SblError};

/// Column scaling applied after centering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scaling {
    /// Sample variance (N−1 denominator) equal to one.
    #[default]
    UnitVariance,
    /// Sum of squares equal to one, the usual layout for LARS-style coefficient tables.
    UnitNorm,
}

/// Affine map from raw to standardized values: `x_std = (x − mean) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transform {
    pub x_mean: Vec<f64>,
    pub x_scale: Vec<f64>,
    pub y_mean: f64,
    pub scaling: Scaling,
}

impl Transform {
    fn identity(d: usize, scaling: Scaling) -> Self {
        Self {
            x_mean: vec![0.0; d],
            x_scale: vec![1.0; d],
            y_mean: 0.0,
            scaling,
        }
    }

    /// Standardizes a raw regressor matrix.
    pub fn apply_x(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_width(x.ncols())?;
        Ok(DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| {
            (x[(i, j)] - self.x_mean[j]) / self.x_scale[j]
        }))
    }

    pub fn apply_y(&self, y: &DVector<f64>) -> DVector<f64> {
        y.map(|v| v - self.y_mean)
    }

    pub fn invert_x(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_width(x.ncols())?;
        Ok(DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| {
            x[(i, j)] * self.x_scale[j] + self.x_mean[j]
        }))
    }

    pub fn invert_y(&self, y: &DVector<f64>) -> DVector<f64> {
        y.map(|v| v + self.y_mean)
    }

    /// Maps standardized-scale coefficients to raw-scale slopes and an intercept.
    pub fn coefficients_to_raw(&self, beta: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.check_width(beta.len())?;
        let slopes: Vec<f64> = beta.iter().zip(&self.x_scale).map(|(b, s)| b / s).collect();
        let intercept = self.y_mean - slopes.iter().zip(&self.x_mean).map(|(b, m)| b * m).sum::<f64>();
        Ok((slopes, intercept))
    }

    fn check_width(&self, d: usize) -> Result<()> {
        if d == self.x_mean.len() {
            Ok(())
        } else {
            Err(SblError::DimensionMismatch {
                expected: self.x_mean.len(),
                got: d,
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub names: Vec<String>,
    /// Present once the data has been standardized; maps raw to current values.
    pub transform: Option<Transform>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>, names: Vec<String>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(SblError::DimensionMismatch {
                expected: x.nrows(),
                got: y.len(),
            });
        }
        if names.len() != x.ncols() {
            return Err(SblError::DimensionMismatch {
                expected: x.ncols(),
                got: names.len(),
            });
        }
        Ok(Self {
            x,
            y,
            names,
            transform: None,
        })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn is_standardized(&self) -> bool {
        self.transform.is_some()
    }

    /// The data on its original scale.
    pub fn raw(&self) -> Result<Dataset> {
        match &self.transform {
            None => Ok(self.clone()),
            Some(t) => Ok(Dataset {
                x: t.invert_x(&self.x)?,
                y: t.invert_y(&self.y),
                names: self.names.clone(),
                transform: None,
            }),
        }
    }

    fn select_rows(&self, rows: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(rows),
            y: self.y.select_rows(rows),
            names: self.names.clone(),
            transform: self.transform.clone(),
        }
    }
}

/// Reads a headed numeric CSV; every column except `response_column` becomes a regressor.
pub fn load_csv(path: impl AsRef<Path>, response_column: &str) -> Result<Dataset> {
    let path = path.as_ref();
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let response = headers
        .iter()
        .position(|h| h == response_column)
        .ok_or_else(|| SblError::Data(format!("no column named '{response_column}' in {}", path.display())))?;
    let names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != response)
        .map(|(_, h)| h.clone())
        .collect();

    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut missing_rows = Vec::new();
    for (k, record) in rdr.records().enumerate() {
        let record = record?;
        // header is line 1
        let line = k + 2;
        if record.len() != headers.len() {
            return Err(SblError::Data(format!(
                "line {line}: expected {} fields, found {}",
                headers.len(),
                record.len()
            )));
        }
        let mut row = Vec::with_capacity(headers.len());
        let mut missing = false;
        for (j, cell) in record.iter().enumerate() {
            let cell = cell.trim();
            if cell.is_empty() || cell.eq_ignore_ascii_case("na") {
                missing = true;
                row.push(f64::NAN);
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| {
                SblError::Data(format!("line {line}, column '{}': not a number: '{cell}'", headers[j]))
            })?;
            if v.is_nan() {
                missing = true;
            } else if !v.is_finite() {
                return Err(SblError::Data(format!(
                    "line {line}, column '{}': non-finite value",
                    headers[j]
                )));
            }
            row.push(v);
        }
        if missing {
            missing_rows.push(line);
            continue;
        }
        ys.push(row[response]);
        xs.extend(row.iter().enumerate().filter(|&(j, _)| j != response).map(|(_, v)| *v));
    }
    if !missing_rows.is_empty() {
        return Err(SblError::Data(format!("missing values on lines {missing_rows:?}")));
    }
    if ys.is_empty() {
        return Err(SblError::Data(format!("{}: empty data", path.display())));
    }
    let n = ys.len();
    let x = DMatrix::from_row_slice(n, names.len(), &xs);
    Dataset::new(x, DVector::from_vec(ys), names)
}

fn column_stats(x: &DMatrix<f64>, names: &[String], scaling: Scaling) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = x.nrows();
    if n < 2 {
        return Err(SblError::Data("standardization needs at least two rows".into()));
    }
    let mut means = Vec::with_capacity(x.ncols());
    let mut scales = Vec::with_capacity(x.ncols());
    for (j, col) in x.column_iter().enumerate() {
        let mean = col.mean();
        let ss: f64 = col.iter().map(|v| (v - mean).powi(2)).sum();
        let scale = match scaling {
            Scaling::UnitVariance => (ss / (n - 1) as f64).sqrt(),
            Scaling::UnitNorm => ss.sqrt(),
        };
        if !(scale > 1e-12 * mean.abs().max(1.0)) {
            return Err(SblError::Data(format!("column '{}' is constant", names[j])));
        }
        means.push(mean);
        scales.push(scale);
    }
    Ok((means, scales))
}

/// Centres and scales every regressor and centres the response.
pub fn standardize(ds: &Dataset) -> Result<Dataset> {
    standardize_with(ds, Scaling::UnitVariance)
}

pub fn standardize_with(ds: &Dataset, scaling: Scaling) -> Result<Dataset> {
    let (means, scales) = column_stats(&ds.x, &ds.names, scaling)?;
    let y_mean = ds.y.mean();
    let step = Transform {
        x_mean: means,
        x_scale: scales,
        y_mean,
        scaling,
    };
    let x = step.apply_x(&ds.x)?;
    let y = step.apply_y(&ds.y);
    // compose with any earlier transform so `raw()` still recovers the source values
    let prior = ds.transform.clone().unwrap_or_else(|| Transform::identity(ds.d(), scaling));
    let transform = Transform {
        x_mean: prior
            .x_mean
            .iter()
            .zip(&prior.x_scale)
            .zip(&step.x_mean)
            .map(|((m0, s0), m1)| m0 + s0 * m1)
            .collect(),
        x_scale: prior.x_scale.iter().zip(&step.x_scale).map(|(s0, s1)| s0 * s1).collect(),
        y_mean: prior.y_mean + y_mean,
        scaling,
    };
    Ok(Dataset {
        x,
        y,
        names: ds.names.clone(),
        transform: Some(transform),
    })
}

/// Applies a fitted transform to raw data.
pub fn apply_transform(ds: &Dataset, transform: &Transform) -> Result<Dataset> {
    let raw = ds.raw()?;
    Ok(Dataset {
        x: transform.apply_x(&raw.x)?,
        y: transform.apply_y(&raw.y),
        names: raw.names,
        transform: Some(transform.clone()),
    })
}

/// Seeded random row partition; both halves are standardized with statistics
/// from the training rows only.
pub fn train_test_split(ds: &Dataset, train_frac: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    split_with(ds, train_frac, seed, Scaling::UnitVariance)
}

pub fn split_with(ds: &Dataset, train_frac: f64, seed: u64, scaling: Scaling) -> Result<(Dataset, Dataset)> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(SblError::InvalidInput(format!(
            "train fraction must lie in (0, 1), got {train_frac}"
        )));
    }
    let n = ds.n();
    let n_train = (train_frac * n as f64).round() as usize;
    if n_train < 2 {
        return Err(SblError::Data(format!(
            "split leaves {n_train} training rows, need at least 2"
        )));
    }
    if n_train >= n {
        return Err(SblError::Data(format!("split of {n} rows leaves no test rows")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (train_rows, test_rows) = order.split_at(n_train);
    let mut train_rows = train_rows.to_vec();
    let mut test_rows = test_rows.to_vec();
    train_rows.sort_unstable();
    test_rows.sort_unstable();

    let raw = ds.raw()?;
    let train = standardize_with(&raw.select_rows(&train_rows), scaling)?;
    let transform = train.transform.clone().expect("standardized");
    let test = apply_transform(&raw.select_rows(&test_rows), &transform)?;
    Ok((train, test))
}
