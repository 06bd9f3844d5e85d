//! Self-contained fitted-model document.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sparse_bayes::dataio::Transform;
use sparse_bayes::predict::{predict_batch, Prediction};
use sparse_bayes::{FitConfig, FitResult, KernelSpec, PriorRule};

use crate::error::CliError;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub crate_version: String,
    pub rule: PriorRule,
    pub kernel: KernelSpec,
    pub config: FitConfig,
    pub response: String,
    pub feature_names: Vec<String>,
    /// Raw-to-model scale map applied to inputs before the basis is evaluated.
    pub transform: Option<Transform>,
    /// Model-scale training inputs, one row per sample. Kernel models only.
    pub training_inputs: Option<Vec<Vec<f64>>>,
    pub fit: FitResult,
}

impl ModelFile {
    pub fn new(
        fit: FitResult,
        kernel: KernelSpec,
        config: FitConfig,
        response: String,
        feature_names: Vec<String>,
        transform: Option<Transform>,
        model_x: &DMatrix<f64>,
    ) -> Self {
        let training_inputs = (!kernel.is_identity()).then(|| {
            model_x
                .row_iter()
                .map(|r| r.iter().copied().collect())
                .collect()
        });
        Self {
            format_version: FORMAT_VERSION,
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            rule: fit.rule,
            kernel,
            config,
            response,
            feature_names,
            transform,
            training_inputs,
            fit,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CliError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let model: ModelFile = serde_json::from_str(&text)?;
        if model.format_version != FORMAT_VERSION {
            return Err(CliError::Data(format!(
                "model format version {} is not supported (expected {FORMAT_VERSION})",
                model.format_version
            )));
        }
        Ok(model)
    }

    fn training_matrix(&self) -> Option<DMatrix<f64>> {
        let rows = self.training_inputs.as_ref()?;
        let d = self.feature_names.len();
        Some(DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]))
    }

    /// Predictions at raw inputs (columns in `feature_names` order), on the raw response scale.
    pub fn predict(&self, raw_x: &DMatrix<f64>, coverage: f64) -> Result<Vec<Prediction>, CliError> {
        let (x, y_shift) = match &self.transform {
            Some(t) => (t.apply_x(raw_x)?, t.y_mean),
            None => (raw_x.clone(), 0.0),
        };
        let train = self.training_matrix();
        let preds = predict_batch(&self.fit, train.as_ref(), &self.kernel, &x, coverage)?;
        Ok(preds
            .into_iter()
            .map(|p| Prediction {
                mean: p.mean + y_shift,
                variance: p.variance,
                interval: (p.interval.0 + y_shift, p.interval.1 + y_shift),
            })
            .collect())
    }
}
