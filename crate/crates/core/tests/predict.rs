use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sparse_bayes::kernels::{build_design, KernelSpec};
use sparse_bayes::predict::{predict_batch, predict_one, weight_intervals};
use sparse_bayes::sbl::{fit, FitConfig, PriorRule};
use sparse_bayes::simbench::{gen_sinc, sinc, SincSpec};

#[test]
fn near_noiseless_fit_reproduces_training_targets() {
    let x = DMatrix::from_fn(15, 1, |i, _| -3.0 + 0.4 * i as f64);
    let phi = build_design(&KernelSpec::LinearSpline, &x).unwrap();
    let k = 6;
    let y: DVector<f64> = 3.0 * phi.values().column(k);
    let cfg = FitConfig {
        fix_sigma2: Some(1e-8),
        ..FitConfig::default()
    };
    let r = fit(&phi, &y, PriorRule::Bls, &cfg).unwrap();
    for i in 0..x.nrows() {
        let p = predict_one(&r, Some(&x), &KernelSpec::LinearSpline, &[x[(i, 0)]], 0.95).unwrap();
        assert!((p.mean - y[i]).abs() < 1e-2, "row {i}: {} vs {}", p.mean, y[i]);
    }
}

#[test]
fn variance_never_drops_below_noise() {
    let data = gen_sinc(&SincSpec::one_d(0.2, 5)).unwrap();
    let phi = build_design(&KernelSpec::LinearSpline, &data.x).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let xs = DMatrix::from_fn(500, 1, |_, _| rng.gen_range(-15.0..15.0));
    for rule in PriorRule::ALL {
        let r = fit(&phi, &data.y, rule, &FitConfig::default()).unwrap();
        let preds = predict_batch(&r, Some(&data.x), &KernelSpec::LinearSpline, &xs, 0.9).unwrap();
        assert!(preds.iter().all(|p| p.variance >= r.sigma2_hat), "{rule}");
        let single = predict_one(&r, Some(&data.x), &KernelSpec::LinearSpline, &[xs[(7, 0)]], 0.9).unwrap();
        assert_eq!(single, preds[7]);
    }
}

#[test]
fn interval_coverage_on_fresh_points() {
    let sigma = 0.1;
    let data = gen_sinc(&SincSpec::one_d(sigma, 8)).unwrap();
    let phi = build_design(&KernelSpec::LinearSpline, &data.x).unwrap();
    let r = fit(&phi, &data.y, PriorRule::Bls, &FitConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let noise = Normal::new(0.0, sigma).unwrap();
    let xs = DMatrix::from_fn(2000, 1, |_, _| rng.gen_range(-10.0..10.0));
    let preds = predict_batch(&r, Some(&data.x), &KernelSpec::LinearSpline, &xs, 0.95).unwrap();
    let hits = preds
        .iter()
        .enumerate()
        .filter(|(i, p)| {
            let y = sinc(xs[(*i, 0)]) + noise.sample(&mut rng);
            p.interval.0 <= y && y <= p.interval.1
        })
        .count();
    let coverage = hits as f64 / 2000.0;
    assert!((0.90..=0.99).contains(&coverage), "coverage {coverage}");
}

#[test]
fn weight_intervals_bracket_the_weights() {
    let data = gen_sinc(&SincSpec::one_d(0.1, 2)).unwrap();
    let phi = build_design(&KernelSpec::LinearSpline, &data.x).unwrap();
    let r = fit(&phi, &data.y, PriorRule::Flap, &FitConfig::default()).unwrap();
    let iv = weight_intervals(&r, 0.95).unwrap();
    assert_eq!(iv.len(), r.nov());
    for ((lo, hi), w) in iv.iter().zip(&r.weights) {
        assert!(lo < w && w < hi);
    }
}
