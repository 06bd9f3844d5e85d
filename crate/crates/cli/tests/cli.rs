use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sbl_cli::commands::{fit_dataset, predictions_csv, read_inputs};
use sbl_cli::ModelFile;
use sparse_bayes::dataio::load_csv;
use sparse_bayes::simbench::{gen_sinc, SincSpec};
use sparse_bayes::{FitConfig, KernelSpec, PriorRule};
use tempfile::TempDir;

const DIABETES: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/fixtures/diabetes.csv");

fn sbl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sbl"))
        .args(args)
        .output()
        .expect("spawn sbl")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn sinc_csv(dir: &Path, sigma: f64, seed: u64) -> PathBuf {
    let data = gen_sinc(&SincSpec::one_d(sigma, seed)).unwrap();
    let mut text = String::from("x,y\n");
    for i in 0..data.y.len() {
        writeln!(text, "{},{}", data.x[(i, 0)], data.y[i]).unwrap();
    }
    let path = dir.join("sinc.csv");
    std::fs::write(&path, text).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn saved_model_predicts_exactly_like_the_in_memory_fit() {
    let dir = TempDir::new().unwrap();
    let data = sinc_csv(dir.path(), 0.1, 4);
    let model_path = dir.path().join("model.json");
    let o = sbl(&["fit", s(&data), "--method", "bls", "--out", s(&model_path)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let queries = dir.path().join("q.csv");
    let mut text = String::from("x\n");
    for k in 0..37 {
        writeln!(text, "{}", -11.3 + 0.61 * k as f64).unwrap();
    }
    std::fs::write(&queries, text).unwrap();
    let o = sbl(&["predict", s(&queries), "--model", s(&model_path)]);
    assert_eq!(code(&o), 0);

    let ds = load_csv(&data, "y").unwrap();
    let (model, _) = fit_dataset(&ds, "y", KernelSpec::LinearSpline, PriorRule::Bls, FitConfig::default()).unwrap();
    assert_eq!(ModelFile::load(&model_path).unwrap(), model);
    let x = read_inputs(&queries, &model.feature_names).unwrap();
    let expected = predictions_csv(&model.predict(&x, 0.95).unwrap());
    assert_eq!(stdout(&o), expected);
}

#[test]
fn identity_fit_on_diabetes() {
    let dir = TempDir::new().unwrap();
    let model_path = dir.path().join("m.json");
    let o = sbl(&["fit", DIABETES, "--method", "bls", "--kernel", "identity", "--out", s(&model_path)]);
    assert_eq!(code(&o), 0);
    let model = ModelFile::load(&model_path).unwrap();
    let w = model.fit.dense_weights(model.feature_names.len());
    assert_eq!(w.len(), 10);
    assert!(w.iter().any(|v| *v == 0.0));
    assert!(model.training_inputs.is_none());
    assert!(model.transform.is_some());
    assert!(stdout(&o).contains("bmi"));
}

#[test]
fn predicting_the_training_inputs() {
    let dir = TempDir::new().unwrap();
    let model_path = dir.path().join("m.json");
    assert_eq!(code(&sbl(&["fit", DIABETES, "--kernel", "identity", "--out", s(&model_path)])), 0);
    let o = sbl(&["predict", DIABETES, "--model", s(&model_path)]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("mean,variance,lo,hi"));
    let mut rows = 0;
    for line in lines {
        let v: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
        assert!(v.iter().all(|x| x.is_finite()));
        assert!(v[2] <= v[0] && v[0] <= v[3]);
        rows += 1;
    }
    assert_eq!(rows, 442);
}

#[test]
fn empty_input_gives_empty_output() {
    let dir = TempDir::new().unwrap();
    let data = sinc_csv(dir.path(), 0.1, 1);
    let model_path = dir.path().join("m.json");
    assert_eq!(code(&sbl(&["fit", s(&data), "--out", s(&model_path)])), 0);
    let empty = dir.path().join("empty.csv");
    std::fs::write(&empty, "x\n").unwrap();
    let out = dir.path().join("p.csv");
    let o = sbl(&["predict", s(&empty), "--model", s(&model_path), "--out", s(&out)]);
    assert_eq!(code(&o), 0);
    assert_eq!(std::fs::read_to_string(out).unwrap(), "mean,variance,lo,hi\n");
}

#[test]
fn fixed_noise_is_passed_through() {
    let dir = TempDir::new().unwrap();
    let data = sinc_csv(dir.path(), 0.1, 2);
    let model_path = dir.path().join("m.json");
    let o = sbl(&["fit", s(&data), "--method", "bls", "--fix-sigma2", "0.01", "--out", s(&model_path)]);
    assert_eq!(code(&o), 0);
    let model = ModelFile::load(&model_path).unwrap();
    assert_eq!(model.config.fix_sigma2, Some(0.01));
    assert_eq!(model.fit.sigma2_hat, 0.01);
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&sbl(&["fit", "/nonexistent/data.csv"])), 2);
    assert_eq!(code(&sbl(&["fit", DIABETES, "--method", "lasso"])), 1);
    assert_eq!(code(&sbl(&["fit", DIABETES, "--kernel", "gaussian:-1"])), 1);
    assert_eq!(code(&sbl(&["fit", DIABETES, "--response", "nope"])), 2);
    assert_eq!(code(&sbl(&["bench-sinc1d", "--methods", "foo"])), 1);
    assert_eq!(code(&sbl(&["bench-sinc1d", "--reps", "0"])), 1);
    assert_eq!(code(&sbl(&["select", DIABETES, "--frac", "1.5"])), 1);
    assert_eq!(code(&sbl(&["select", DIABETES, "--frac", "0"])), 1);
    assert_eq!(code(&sbl(&["frobnicate"])), 1);

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{not json").unwrap();
    assert_eq!(code(&sbl(&["predict", DIABETES, "--model", s(&bad)])), 2);

    let model_path = dir.path().join("m.json");
    assert_eq!(code(&sbl(&["fit", DIABETES, "--kernel", "identity", "--out", s(&model_path)])), 0);
    let narrow = dir.path().join("narrow.csv");
    std::fs::write(&narrow, "age,sex\n1,2\n").unwrap();
    assert_eq!(code(&sbl(&["predict", s(&narrow), "--model", s(&model_path)])), 2);

    let constant = dir.path().join("const.csv");
    std::fs::write(&constant, "x,y\n1,3\n2,3\n3,3\n").unwrap();
    assert_eq!(code(&sbl(&["fit", s(&constant)])), 2);
}

#[test]
fn noiseless_bench_has_zero_spread() {
    let dir = TempDir::new().unwrap();
    let prefix = dir.path().join("t1");
    let o = sbl(&["bench-sinc1d", "--reps", "1", "--sigmas", "0", "--methods", "bls", "--out", s(&prefix)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(prefix.with_extension("csv")).unwrap();
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[0], "BLS");
    // nov_sd, mse_sd, sigma_hat_sd
    for k in [3, 5, 7] {
        assert_eq!(row[k].parse::<f64>().unwrap(), 0.0);
    }
    let md = std::fs::read_to_string(prefix.with_extension("md")).unwrap();
    assert_eq!(md, stdout(&o));
}

#[test]
fn bench_is_reproducible() {
    let args = ["bench-sinc1d", "--reps", "2", "--sigmas", "0.1", "--methods", "frvm,bls", "--seed", "9"];
    let a = sbl(&args);
    let b = sbl(&args);
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn single_split_selection_has_zero_spread() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("sel.csv");
    let o = sbl(&["select", DIABETES, "--reps", "1", "--methods", "bls,frvm", "--out", s(&out)]);
    assert_eq!(code(&o), 0);
    let csv = std::fs::read_to_string(out).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(header.len(), 7 + 10);
    assert_eq!(header[7], "incl_age");
    for line in lines {
        let row: Vec<&str> = line.split(',').collect();
        assert_eq!(row[2].parse::<f64>().unwrap(), 0.0);
        assert_eq!(row[4].parse::<f64>().unwrap(), 0.0);
        assert!(row[7..].iter().all(|v| *v == "0" || *v == "1"));
    }
}
