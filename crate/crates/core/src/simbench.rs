//! Sinc simulation studies: data generation, repetition loop and summary tables.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SblError};
use crate::kernels::{build_design, KernelSpec};
use crate::sbl::{fit, sample_variance, FitConfig, PriorRule};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SincLayout {
    /// `n_points` evenly spaced inputs on the range, endpoints included.
    Line { n_points: usize },
    /// Square grid with the given step on both axes.
    Grid { step: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SincSpec {
    pub layout: SincLayout,
    /// Standard deviation of the additive Gaussian noise.
    pub sigma: f64,
    pub x_range: (f64, f64),
    pub seed: u64,
}

impl SincSpec {
    /// 200 points on [−10, 10].
    pub fn one_d(sigma: f64, seed: u64) -> Self {
        Self {
            layout: SincLayout::Line { n_points: 200 },
            sigma,
            x_range: (-10.0, 10.0),
            seed,
        }
    }

    /// Grid on [−5, 5]² with step 0.3.
    pub fn two_d(sigma: f64, seed: u64) -> Self {
        Self {
            layout: SincLayout::Grid { step: 0.3 },
            sigma,
            x_range: (-5.0, 5.0),
            seed,
        }
    }

    pub fn dim(&self) -> usize {
        match self.layout {
            SincLayout::Line { .. } => 1,
            SincLayout::Grid { .. } => 2,
        }
    }

    fn validate(&self) -> Result<()> {
        let (lo, hi) = self.x_range;
        let layout_ok = match self.layout {
            SincLayout::Line { n_points } => n_points >= 2,
            SincLayout::Grid { step } => step > 0.0 && step.is_finite(),
        };
        if !(self.sigma >= 0.0) || !(hi > lo) || !layout_ok {
            return Err(SblError::InvalidInput(format!("invalid Sinc settings {self:?}")));
        }
        Ok(())
    }
}

/// `sin(x)/x` with the removable singularity filled in.
pub fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        x.sin() / x
    }
}

#[derive(Debug, Clone)]
pub struct SincData {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub f_true: DVector<f64>,
}

fn axis_points(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let count = ((hi - lo) / step + 1e-9).floor() as usize + 1;
    (0..count).map(|k| lo + k as f64 * step).collect()
}

/// Draws one Sinc training set.
pub fn gen_sinc(spec: &SincSpec) -> Result<SincData> {
    spec.validate()?;
    let (lo, hi) = spec.x_range;
    let (x, f_true) = match spec.layout {
        SincLayout::Line { n_points } => {
            let step = (hi - lo) / (n_points - 1) as f64;
            let xs: Vec<f64> = (0..n_points).map(|k| lo + k as f64 * step).collect();
            let f: Vec<f64> = xs.iter().map(|&v| sinc(v)).collect();
            (DMatrix::from_column_slice(n_points, 1, &xs), DVector::from_vec(f))
        }
        SincLayout::Grid { step } => {
            let axis = axis_points(lo, hi, step);
            let n = axis.len() * axis.len();
            let mut x = DMatrix::zeros(n, 2);
            let mut f = DVector::zeros(n);
            for (i, &a) in axis.iter().enumerate() {
                for (j, &b) in axis.iter().enumerate() {
                    let r = i * axis.len() + j;
                    x[(r, 0)] = a;
                    x[(r, 1)] = b;
                    f[r] = sinc(a) + sinc(b);
                }
            }
            (x, f)
        }
    };
    let mut y = f_true.clone();
    if spec.sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let noise = Normal::new(0.0, spec.sigma).expect("sigma validated");
        for v in y.iter_mut() {
            *v += noise.sample(&mut rng);
        }
    }
    Ok(SincData { x, y, f_true })
}

/// `‖y* − f‖² / N`.
pub fn mse_vs_truth(y_star: &[f64], f_true: &[f64]) -> Result<f64> {
    if y_star.len() != f_true.len() {
        return Err(SblError::DimensionMismatch {
            expected: f_true.len(),
            got: y_star.len(),
        });
    }
    if y_star.is_empty() {
        return Err(SblError::InvalidInput("empty vectors".into()));
    }
    let ss: f64 = y_star.iter().zip(f_true).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(ss / y_star.len() as f64)
}

/// Mean and sample standard deviation (N−1 denominator; 0 for a single value).
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    (mean, sd)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub fit: FitConfig,
    /// Fix σ² at `0.1·var(y)` of each generated dataset instead of estimating it.
    pub fixed_sigma2: bool,
    pub kernel: KernelSpec,
    pub base_seed: u64,
    /// Worker threads for repetitions; `None` uses the global rayon pool.
    pub threads: Option<usize>,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            fit: FitConfig::default(),
            fixed_sigma2: false,
            kernel: KernelSpec::LinearSpline,
            base_seed: 0,
            threads: None,
        }
    }
}

/// One (method, σ) cell of a study.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyRow {
    pub method: PriorRule,
    pub sigma: f64,
    pub nov_mean: f64,
    pub nov_sd: f64,
    pub mse_mean: f64,
    pub mse_sd: f64,
    pub sigma_hat_mean: f64,
    pub sigma_hat_sd: f64,
    pub n_reps: usize,
    pub n_failed: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyReport {
    pub rows: Vec<StudyRow>,
    pub fixed_sigma2: bool,
}

#[derive(Debug, Clone, Copy)]
struct RepOutcome {
    nov: f64,
    mse: f64,
    sigma_hat: f64,
}

fn run_one(data: &SincData, rule: PriorRule, cfg: &StudyConfig) -> Result<RepOutcome> {
    let phi = build_design(&cfg.kernel, &data.x)?;
    let mut fit_cfg = cfg.fit.clone();
    if cfg.fixed_sigma2 {
        fit_cfg.fix_sigma2 = Some(0.1 * sample_variance(data.y.as_slice()));
    }
    let result = fit(&phi, &data.y, rule, &fit_cfg)?;
    let fitted = result.fitted(&phi);
    Ok(RepOutcome {
        nov: result.nov() as f64,
        mse: mse_vs_truth(fitted.as_slice(), data.f_true.as_slice())?,
        sigma_hat: result.sigma2_hat.sqrt(),
    })
}

/// Repeats data generation and fitting for every (method, σ) pair.
///
/// Within one repetition and σ all methods see the same dataset, generated
/// with seed `base_seed + rep`.
pub fn run_study(
    methods: &[PriorRule],
    sigmas: &[f64],
    reps: usize,
    template: &SincSpec,
    cfg: &StudyConfig,
) -> Result<StudyReport> {
    if reps == 0 || methods.is_empty() || sigmas.is_empty() {
        return Err(SblError::InvalidInput(
            "need at least one repetition, method and sigma".into(),
        ));
    }
    let work = || -> Result<StudyReport> {
        let mut rows = Vec::new();
        for &sigma in sigmas {
            let outcomes: Vec<Vec<Result<RepOutcome>>> = (0..reps)
                .into_par_iter()
                .map(|rep| {
                    let spec = SincSpec {
                        sigma,
                        seed: cfg.base_seed + rep as u64,
                        ..*template
                    };
                    match gen_sinc(&spec) {
                        Ok(data) => methods.iter().map(|&m| run_one(&data, m, cfg)).collect(),
                        Err(e) => {
                            let msg = e.to_string();
                            methods
                                .iter()
                                .map(|_| Err(SblError::InvalidInput(msg.clone())))
                                .collect()
                        }
                    }
                })
                .collect();
            for (k, &method) in methods.iter().enumerate() {
                let ok: Vec<RepOutcome> = outcomes
                    .iter()
                    .filter_map(|per_rep| per_rep[k].as_ref().ok().copied())
                    .collect();
                let stat = |f: fn(&RepOutcome) -> f64| mean_sd(&ok.iter().map(f).collect::<Vec<_>>());
                let (nov_mean, nov_sd) = stat(|o| o.nov);
                let (mse_mean, mse_sd) = stat(|o| o.mse);
                let (sigma_hat_mean, sigma_hat_sd) = stat(|o| o.sigma_hat);
                rows.push(StudyRow {
                    method,
                    sigma,
                    nov_mean,
                    nov_sd,
                    mse_mean,
                    mse_sd,
                    sigma_hat_mean,
                    sigma_hat_sd,
                    n_reps: ok.len(),
                    n_failed: reps - ok.len(),
                });
            }
        }
        Ok(StudyReport {
            rows,
            fixed_sigma2: cfg.fixed_sigma2,
        })
    };
    match cfg.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t.max(1))
            .build()
            .map_err(|e| SblError::InvalidInput(e.to_string()))?
            .install(work),
        None => work(),
    }
}

impl StudyReport {
    pub fn row(&self, method: PriorRule, sigma: f64) -> Option<&StudyRow> {
        self.rows.iter().find(|r| r.method == method && r.sigma == sigma)
    }

    fn methods(&self) -> Vec<PriorRule> {
        let mut out = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.method) {
                out.push(r.method);
            }
        }
        out
    }

    fn sigmas(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.sigma) {
                out.push(r.sigma);
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "method,sigma,nov_mean,nov_sd,mse_mean,mse_sd,sigma_hat_mean,sigma_hat_sd,n_reps,n_failed\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                r.method.name(),
                r.sigma,
                r.nov_mean,
                r.nov_sd,
                r.mse_mean,
                r.mse_sd,
                r.sigma_hat_mean,
                r.sigma_hat_sd,
                r.n_reps,
                r.n_failed
            ));
        }
        out
    }

    /// Markdown table with NOV, MSE and σ̂ column groups, one row per σ.
    /// The σ̂ group is left out for fixed-σ² studies.
    pub fn to_markdown(&self) -> String {
        let methods = self.methods();
        let names: Vec<&str> = methods.iter().map(|m| m.name()).collect();
        let mut groups = vec!["NOV", "MSE"];
        if !self.fixed_sigma2 {
            groups.push("σ̂");
        }
        let mut header = String::from("| σ |");
        for g in &groups {
            for n in &names {
                header.push_str(&format!(" {g} {n} |"));
            }
        }
        let cols = 1 + groups.len() * names.len();
        let mut out = format!("{header}\n|{}\n", "---|".repeat(cols));
        for sigma in self.sigmas() {
            let mut line = format!("| {sigma} |");
            for g in &groups {
                for &m in &methods {
                    let cell = match self.row(m, sigma) {
                        Some(r) => match *g {
                            "NOV" => format!("{:.2} ({:.2})", r.nov_mean, r.nov_sd),
                            "MSE" => format!("{:.2e} ({:.2e})", r.mse_mean, r.mse_sd),
                            _ => format!("{:.3} ({:.4})", r.sigma_hat_mean, r.sigma_hat_sd),
                        },
                        None => "-".into(),
                    };
                    line.push_str(&format!(" {cell} |"));
                }
            }
            out.push_str(&line);
            out.push('\n');
        }
        out
    }
}
