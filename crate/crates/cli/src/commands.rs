use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use sparse_bayes::dataio::{load_csv, split_with, standardize_with, Dataset, Scaling};
use sparse_bayes::predict::Prediction;
use sparse_bayes::sbl::{log_marginal, HyperState};
use sparse_bayes::simbench::{mean_sd, run_study, SincSpec, StudyConfig};
use sparse_bayes::{build_design, fit, FitConfig, KernelSpec, PriorRule};

use crate::args::{BenchArgs, FitArgs, PredictArgs, SelectArgs, Standardize};
use crate::error::CliError;
use crate::model::ModelFile;

/// Repetition worker cap from `SBL_THREADS`; unset means the global pool.
pub fn threads_from_env() -> Result<Option<usize>, CliError> {
    match std::env::var("SBL_THREADS") {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::Usage(format!("SBL_THREADS must be a positive integer, got '{v}'"))),
        },
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn load(path: &Path, response: &str) -> Result<Dataset, CliError> {
    load_csv(path, response).map_err(|e| match e {
        sparse_bayes::SblError::Io(io) => CliError::Data(format!("{}: {io}", path.display())),
        other => other.into(),
    })
}

pub fn scaling_for(standardize: Standardize, kernel: &KernelSpec) -> Option<Scaling> {
    match standardize {
        Standardize::Auto => kernel.is_identity().then_some(Scaling::UnitVariance),
        Standardize::None => None,
        Standardize::UnitVariance => Some(Scaling::UnitVariance),
        Standardize::UnitNorm => Some(Scaling::UnitNorm),
    }
}

/// Fits `ds` (already on the model scale) and packages the result.
/// Also returns the log marginal likelihood at the fitted hyperparameters.
pub fn fit_dataset(
    ds: &Dataset,
    response: &str,
    kernel: KernelSpec,
    rule: PriorRule,
    config: FitConfig,
) -> Result<(ModelFile, f64), CliError> {
    let phi = build_design(&kernel, &ds.x)?;
    let result = fit(&phi, &ds.y, rule, &config)?;
    let mut hyper = HyperState::new(phi.ncols(), result.sigma2_hat, config.hyperpriors);
    hyper.tau = result.tau_hat.clone();
    hyper.lambda = result.lambda_hat;
    let logml = log_marginal(&phi, &ds.y, &hyper, rule)?;
    let model = ModelFile::new(
        result,
        kernel,
        config,
        response.to_string(),
        ds.names.clone(),
        ds.transform.clone(),
        &ds.x,
    );
    Ok((model, logml))
}

pub fn cmd_fit(a: &FitArgs, out: &mut impl Write) -> Result<(), CliError> {
    let raw = load(&a.data, &a.response)?;
    let ds = match scaling_for(a.standardize, &a.kernel) {
        Some(s) => standardize_with(&raw, s)?,
        None => raw,
    };
    let config = FitConfig {
        fix_sigma2: a.fix_sigma2,
        seed: a.seed,
        max_iters: a.max_iters,
        ..FitConfig::default()
    };
    let (model, logml) = fit_dataset(&ds, &a.response, a.kernel, a.method, config)?;
    model.save(&a.out)?;

    let r = &model.fit;
    writeln!(out, "method         {}", r.rule)?;
    writeln!(out, "relevant       {} of {}", r.nov(), r.tau_hat.len())?;
    writeln!(out, "sigma2         {}", r.sigma2_hat)?;
    writeln!(out, "lambda         {}", r.lambda_hat)?;
    writeln!(out, "log marginal   {logml}")?;
    writeln!(out, "iterations     {} (converged: {})", r.iterations, r.converged)?;
    if model.kernel.is_identity() {
        writeln!(out, "coefficients")?;
        for (name, w) in model.feature_names.iter().zip(r.dense_weights(r.tau_hat.len())) {
            writeln!(out, "  {name:<12} {w:.4}")?;
        }
    }
    writeln!(out, "wrote {}", a.out.display())?;
    Ok(())
}

/// Reads the named columns of a CSV file, in `names` order. Other columns are ignored.
pub fn read_inputs(path: &Path, names: &[String]) -> Result<DMatrix<f64>, CliError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let headers = rdr.headers()?.clone();
    let cols = names
        .iter()
        .map(|n| {
            headers
                .iter()
                .position(|h| h == n)
                .ok_or_else(|| CliError::Data(format!("{}: no column named '{n}'", path.display())))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut values = Vec::new();
    let mut rows = 0;
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        for (&c, name) in cols.iter().zip(names) {
            let cell = rec.get(c).unwrap_or("");
            let v = cell
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| CliError::Data(format!("line {}, column '{name}': not a number: '{cell}'", k + 2)))?;
            values.push(v);
        }
        rows += 1;
    }
    Ok(DMatrix::from_row_slice(rows, names.len(), &values))
}

pub fn predictions_csv(preds: &[Prediction]) -> String {
    let mut s = String::from("mean,variance,lo,hi\n");
    for p in preds {
        s.push_str(&format!("{},{},{},{}\n", p.mean, p.variance, p.interval.0, p.interval.1));
    }
    s
}

pub fn cmd_predict(a: &PredictArgs, out: &mut impl Write) -> Result<(), CliError> {
    let model = ModelFile::load(&a.model)?;
    let x = read_inputs(&a.inputs, &model.feature_names)?;
    let preds = model.predict(&x, a.coverage)?;
    let text = predictions_csv(&preds);
    match &a.out {
        Some(path) => write_file(path, &text),
        None => Ok(out.write_all(text.as_bytes())?),
    }
}

pub fn cmd_bench(a: &BenchArgs, two_d: bool, out: &mut impl Write) -> Result<(), CliError> {
    if a.reps == 0 {
        return Err(CliError::Usage("--reps must be at least 1".into()));
    }
    let cfg = StudyConfig {
        fixed_sigma2: a.fixed_sigma2,
        kernel: a.kernel,
        base_seed: a.seed,
        threads: threads_from_env()?,
        ..StudyConfig::default()
    };
    let template = if two_d {
        SincSpec::two_d(0.0, a.seed)
    } else {
        SincSpec::one_d(0.0, a.seed)
    };
    let report = run_study(&a.methods, &a.sigmas, a.reps, &template, &cfg)?;
    let md = report.to_markdown();
    out.write_all(md.as_bytes())?;
    if let Some(prefix) = &a.out {
        write_file(&prefix.with_extension("csv"), &report.to_csv())?;
        write_file(&prefix.with_extension("md"), &md)?;
    }
    Ok(())
}

/// Per-method summary of a repeated-split selection study.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectRow {
    pub method: PriorRule,
    pub test_mse_mean: f64,
    pub test_mse_sd: f64,
    pub selected_mean: f64,
    pub selected_sd: f64,
    pub n_reps: usize,
    pub n_failed: usize,
    /// Fraction of successful fits that kept each variable.
    pub inclusion: Vec<f64>,
}

/// Repeated random splits; every method sees the same split in a repetition,
/// drawn with seed `seed + rep`.
pub fn select_study(
    ds: &Dataset,
    methods: &[PriorRule],
    reps: usize,
    frac: f64,
    scaling: Scaling,
    seed: u64,
) -> Result<Vec<SelectRow>, CliError> {
    if reps == 0 || methods.is_empty() {
        return Err(CliError::Usage("need at least one repetition and one method".into()));
    }
    let d = ds.d();
    let mut mse = vec![Vec::new(); methods.len()];
    let mut selected = vec![Vec::new(); methods.len()];
    let mut counts = vec![vec![0usize; d]; methods.len()];
    let mut failed = vec![0usize; methods.len()];
    for rep in 0..reps as u64 {
        let (train, test) = split_with(ds, frac, seed.wrapping_add(rep), scaling)?;
        let phi = build_design(&KernelSpec::IdentityDesign, &train.x)?;
        for (k, &rule) in methods.iter().enumerate() {
            let Ok(r) = fit(&phi, &train.y, rule, &FitConfig::default()) else {
                failed[k] += 1;
                continue;
            };
            let beta = DVector::from_vec(r.dense_weights(d));
            let resid = &test.x * &beta - &test.y;
            mse[k].push(resid.norm_squared() / test.n() as f64);
            selected[k].push(r.nov() as f64);
            for &j in &r.relevance_indices {
                counts[k][j] += 1;
            }
        }
    }
    Ok(methods
        .iter()
        .enumerate()
        .map(|(k, &method)| {
            let (test_mse_mean, test_mse_sd) = mean_sd(&mse[k]);
            let (selected_mean, selected_sd) = mean_sd(&selected[k]);
            let ok = (reps - failed[k]).max(1) as f64;
            SelectRow {
                method,
                test_mse_mean,
                test_mse_sd,
                selected_mean,
                selected_sd,
                n_reps: reps,
                n_failed: failed[k],
                inclusion: counts[k].iter().map(|&c| c as f64 / ok).collect(),
            }
        })
        .collect())
}

pub fn select_csv(rows: &[SelectRow], names: &[String]) -> String {
    let mut s = String::from("method,test_mse_mean,test_mse_sd,selected_mean,selected_sd,n_reps,n_failed");
    for n in names {
        s.push_str(&format!(",incl_{n}"));
    }
    s.push('\n');
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}",
            r.method, r.test_mse_mean, r.test_mse_sd, r.selected_mean, r.selected_sd, r.n_reps, r.n_failed
        ));
        for v in &r.inclusion {
            s.push_str(&format!(",{v}"));
        }
        s.push('\n');
    }
    s
}

pub fn select_markdown(rows: &[SelectRow], names: &[String]) -> String {
    let mut s = String::from("| method | test MSE | selected | failed |\n|---|---|---|---|\n");
    for r in rows {
        s.push_str(&format!(
            "| {} | {:.2} ({:.2}) | {:.2} ({:.2}) | {} |\n",
            r.method, r.test_mse_mean, r.test_mse_sd, r.selected_mean, r.selected_sd, r.n_failed
        ));
    }
    s.push_str("\n| variable |");
    for r in rows {
        s.push_str(&format!(" {} |", r.method));
    }
    s.push_str(&format!("\n|---|{}\n", "---|".repeat(rows.len())));
    for (j, n) in names.iter().enumerate() {
        s.push_str(&format!("| {n} |"));
        for r in rows {
            s.push_str(&format!(" {:.2} |", r.inclusion[j]));
        }
        s.push('\n');
    }
    s
}

pub fn cmd_select(a: &SelectArgs, out: &mut impl Write) -> Result<(), CliError> {
    let ds = load(&a.data, &a.response)?;
    let rows = select_study(&ds, &a.methods, a.reps, a.frac, a.scaling.into(), a.seed)?;
    out.write_all(select_markdown(&rows, &ds.names).as_bytes())?;
    if let Some(path) = &a.out {
        write_file(path, &select_csv(&rows, &ds.names))?;
    }
    Ok(())
}
