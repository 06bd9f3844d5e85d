//! Prints a desk-scale version of the 1D Sinc study.
//!
//! `cargo run --release --example sinc_table -- [reps] [fixed|est] [1d|2d] [lp=N] [only=bls] [sigmas=0.1,0.5]`

use sparse_bayes::sbl::PriorRule;
use sparse_bayes::simbench::{run_study, SincSpec, StudyConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let reps = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(10);
    let fixed = args.get(2).map_or(false, |s| s == "fixed");
    let two_d = args.get(3).map_or(false, |s| s == "2d");
    let mut cfg = StudyConfig {
        fixed_sigma2: fixed,
        ..StudyConfig::default()
    };
    if let Some(p) = args.iter().find_map(|a| a.strip_prefix("lp=")) {
        cfg.fit.lambda_update_period = p.parse().expect("lambda period");
    }
    let template = if two_d { SincSpec::two_d(0.1, 0) } else { SincSpec::one_d(0.1, 0) };
    let t = std::time::Instant::now();
    let methods: Vec<PriorRule> = match args.iter().find_map(|a| a.strip_prefix("only=")) {
        Some(m) => vec![m.parse().expect("method")],
        None => PriorRule::ALL.to_vec(),
    };
    let sigmas: Vec<f64> = match args.iter().find_map(|a| a.strip_prefix("sigmas=")) {
        Some(list) => list.split(',').map(|v| v.parse().expect("sigma")).collect(),
        None => vec![0.01, 0.05, 0.1, 0.3, 0.5],
    };
    let report = run_study(&methods, &sigmas, reps, &template, &cfg).expect("study failed");
    print!("{}", report.to_markdown());
    eprintln!("{:?} failures={}", t.elapsed(), report.rows.iter().map(|r| r.n_failed).sum::<usize>());
}
