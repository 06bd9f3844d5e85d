//! Dense N×N reference computations shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use sparse_bayes::sbl::{HyperState, Hyperpriors, PriorRule};
use sparse_bayes::DesignMatrix;

/// `C = σ²I + Σ_A vᵢ φᵢφᵢᵀ` built explicitly.
pub fn dense_c(phi: &DMatrix<f64>, hyper: &HyperState, rule: PriorRule) -> DMatrix<f64> {
    let n = phi.nrows();
    let mut c = DMatrix::identity(n, n) * hyper.sigma2;
    for j in hyper.active_set() {
        let v = rule.prior_variance(hyper.tau[j], hyper.sigma2);
        let col = phi.column(j);
        c += v * &col * col.transpose();
    }
    c
}

pub fn dense_sq(phi: &DMatrix<f64>, y: &DVector<f64>, c: &DMatrix<f64>) -> (Vec<f64>, Vec<f64>) {
    let cinv = c.clone().try_inverse().expect("C invertible");
    let cy = &cinv * y;
    let s = phi.column_iter().map(|col| col.dot(&(&cinv * col))).collect();
    let q = phi.column_iter().map(|col| col.dot(&cy)).collect();
    (s, q)
}

/// Σ = V − VΦᵀC⁻¹ΦV and μ = VΦᵀC⁻¹y on the active columns.
pub fn dense_posterior(
    phi: &DMatrix<f64>,
    y: &DVector<f64>,
    hyper: &HyperState,
    rule: PriorRule,
) -> (DVector<f64>, DMatrix<f64>) {
    let active = hyper.active_set();
    let cinv = dense_c(phi, hyper, rule).try_inverse().unwrap();
    let cols: Vec<_> = active.iter().map(|&j| phi.column(j)).collect();
    let phi_a = DMatrix::from_columns(&cols);
    let v = DMatrix::from_diagonal(&DVector::from_iterator(
        active.len(),
        active.iter().map(|&j| rule.prior_variance(hyper.tau[j], hyper.sigma2)),
    ));
    let vpt = &v * phi_a.transpose();
    let sigma = &v - &vpt * &cinv * vpt.transpose();
    let mu = &vpt * &cinv * y;
    (mu, sigma)
}

/// Log joint density evaluated term by term with the explicit C.
pub fn dense_log_joint(phi: &DMatrix<f64>, y: &DVector<f64>, hyper: &HyperState, rule: PriorRule) -> f64 {
    let c = dense_c(phi, hyper, rule);
    let n = y.len() as f64;
    let log_det = c.clone().cholesky().unwrap().l().diagonal().iter().map(|d| 2.0 * d.ln()).sum::<f64>();
    let quad = y.dot(&(c.try_inverse().unwrap() * y));
    let mut value = -0.5 * (n * (2.0 * std::f64::consts::PI).ln() + log_det + quad);
    let hp = hyper.hyperpriors;
    if rule != PriorRule::Frvm && hyper.lambda > 0.0 {
        let m = hyper.tau.len() as f64;
        let l = hyper.lambda;
        value += m * (l / 2.0).ln() - 0.5 * l * hyper.tau.iter().sum::<f64>() + (hp.a - 1.0) * l.ln() - hp.b * l;
    }
    if rule == PriorRule::Bls {
        value += -(hp.c + 1.0) * hyper.sigma2.ln() - hp.d / hyper.sigma2;
    }
    value
}

/// Random small regression problem with a random active set.
pub fn random_instance(rng: &mut ChaCha8Rng) -> (DesignMatrix, DVector<f64>, HyperState) {
    let n = rng.gen_range(2..=8);
    let m = rng.gen_range(1..=6);
    let phi = DMatrix::from_fn(n, m, |_, _| rng.gen_range(-2.0..2.0));
    let y = DVector::from_fn(n, |_, _| rng.gen_range(-3.0..3.0));
    let mut hyper = HyperState::new(m, rng.gen_range(0.1..2.0), Hyperpriors::default());
    for t in hyper.tau.iter_mut() {
        if rng.gen_bool(0.6) {
            *t = rng.gen_range(0.05..5.0);
        }
    }
    hyper.lambda = rng.gen_range(0.0..3.0);
    (DesignMatrix::from_matrix(phi).unwrap(), y, hyper)
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}
