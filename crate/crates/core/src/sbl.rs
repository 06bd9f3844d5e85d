//! Active-set fast marginal likelihood maximisation.
//!
//! The engine keeps a per-column variance hyperparameter τᵢ and grows, prunes
//! and re-estimates one coordinate at a time, always taking the action that
//! increases the log joint density the most. Three prior structures share the
//! machinery and differ only in how τᵢ maps to a weight variance, how the
//! shrinkage rate λ penalises it, and how the noise variance is re-estimated:
//!
//! | rule | weight variance | per-unit-variance penalty | noise update |
//! |------|-----------------|---------------------------|--------------|
//! | BLS  | τᵢσ²            | λ/σ²                      | closed form with the weight prior scaled by σ² |
//! | FLAP | τᵢ              | λ                         | EM update |
//! | FRVM | τᵢ = 1/αᵢ       | 0                         | effective degrees of freedom |
//!
//! The N×N marginal covariance `C = σ²I + Φ_A V_A Φ_Aᵀ` is never formed.
//! Everything goes through the small active-set system
//! `H = Φ_AᵀΦ_A + σ² V_A⁻¹`, for which `Σ = σ² H⁻¹` and `μ = H⁻¹ Φ_Aᵀy`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SblError};
use crate::kernels::DesignMatrix;

/// λ values below this use the closed-form λ → 0 limit of the stationary point.
pub const LAMBDA_LIMIT: f64 = 1e-12;

/// Relative floor applied to every σ² estimate, `σ² ≥ SIGMA2_FLOOR · var(y)`.
pub const SIGMA2_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorRule {
    /// Laplace prior conditioned on the noise variance.
    Bls,
    /// Gaussian prior with one precision per weight.
    Frvm,
    /// Laplace prior that ignores the noise variance.
    Flap,
}

impl PriorRule {
    pub const ALL: [PriorRule; 3] = [PriorRule::Frvm, PriorRule::Flap, PriorRule::Bls];

    pub fn name(&self) -> &'static str {
        match self {
            PriorRule::Bls => "BLS",
            PriorRule::Frvm => "FRVM",
            PriorRule::Flap => "FLAP",
        }
    }

    /// Prior variance of weight i given its τ slot.
    pub fn prior_variance(&self, tau: f64, sigma2: f64) -> f64 {
        match self {
            PriorRule::Bls => tau * sigma2,
            PriorRule::Frvm | PriorRule::Flap => tau,
        }
    }

    /// Inverse of [`prior_variance`](Self::prior_variance).
    pub fn tau_from_variance(&self, variance: f64, sigma2: f64) -> f64 {
        match self {
            PriorRule::Bls => variance / sigma2,
            PriorRule::Frvm | PriorRule::Flap => variance,
        }
    }

    /// Penalty per unit of weight variance in the per-coordinate objective.
    pub fn penalty_rate(&self, lambda: f64, sigma2: f64) -> f64 {
        match self {
            PriorRule::Bls => lambda / sigma2,
            PriorRule::Flap => lambda,
            PriorRule::Frvm => 0.0,
        }
    }

    pub fn uses_lambda(&self) -> bool {
        !matches!(self, PriorRule::Frvm)
    }
}

impl std::str::FromStr for PriorRule {
    type Err = SblError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bls" => Ok(PriorRule::Bls),
            "frvm" => Ok(PriorRule::Frvm),
            "flap" => Ok(PriorRule::Flap),
            other => Err(SblError::InvalidInput(format!("unknown method '{other}'"))),
        }
    }
}

impl std::fmt::Display for PriorRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Gamma(a, b) hyperprior on λ and inverse-Gamma(c, d) hyperprior on σ².
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperpriors {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl Default for Hyperpriors {
    fn default() -> Self {
        Self {
            a: 1e-6,
            b: 1e-6,
            c: 1e-6,
            d: 1e-6,
        }
    }
}

/// Hyperparameters of the current model.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperState {
    /// One slot per design column, zero when the column is pruned.
    pub tau: Vec<f64>,
    pub lambda: f64,
    pub sigma2: f64,
    pub hyperpriors: Hyperpriors,
}

impl HyperState {
    pub fn new(m: usize, sigma2: f64, hyperpriors: Hyperpriors) -> Self {
        Self {
            tau: vec![0.0; m],
            lambda: 0.0,
            sigma2,
            hyperpriors,
        }
    }

    /// Indices with τ > 0, ascending.
    pub fn active_set(&self) -> Vec<usize> {
        self.tau
            .iter()
            .enumerate()
            .filter(|(_, &t)| t > 0.0)
            .map(|(i, _)| i)
            .collect()
    }

    fn check(&self) -> Result<()> {
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(SblError::InvalidInput(format!(
                "sigma2 must be positive, got {}",
                self.sigma2
            )));
        }
        if !(self.lambda >= 0.0) || self.tau.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) {
            return Err(SblError::InvalidInput(
                "tau and lambda must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// Gaussian posterior over the active weights.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorState {
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
    pub active_index: Vec<usize>,
    pub log_marginal: f64,
}

impl PosteriorState {
    pub fn empty() -> Self {
        Self {
            mu: DVector::zeros(0),
            sigma: DMatrix::zeros(0, 0),
            active_index: Vec::new(),
            log_marginal: f64::NAN,
        }
    }
}

/// Sparsity and quality factors, with (`s`, `q`) and without (`big_s`, `big_q`)
/// the column's own contribution removed from C.
#[derive(Debug, Clone, PartialEq)]
pub struct SqCache {
    pub big_s: Vec<f64>,
    pub big_q: Vec<f64>,
    pub s: Vec<f64>,
    pub q: Vec<f64>,
}

/// Which τ's count towards the shape term of the λ re-estimate.
///
/// `All` counts every column, pruned or not. With many pruned columns this
/// drives λ to its hyperprior bound and empties the model, so the default
/// counts only the active ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LambdaCount {
    All,
    Active,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub max_iters: usize,
    /// Convergence threshold on the best achievable log-likelihood gain.
    pub tol_logml: f64,
    /// Convergence threshold on the largest relative τ change of a re-estimate.
    pub tol_tau: f64,
    pub sigma2_update_period: usize,
    pub lambda_update_period: usize,
    pub fix_sigma2: Option<f64>,
    pub seed: u64,
    pub hyperpriors: Hyperpriors,
    /// Fit on unit-norm columns and map the weights back afterwards.
    pub normalize_columns: bool,
    pub lambda_count: LambdaCount,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_iters: 10_000,
            tol_logml: 1e-6,
            tol_tau: 1e-3,
            sigma2_update_period: 5,
            lambda_update_period: 1,
            fix_sigma2: None,
            seed: 0,
            hyperpriors: Hyperpriors::default(),
            normalize_columns: true,
            lambda_count: LambdaCount::Active,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.max_iters > 0
            && self.tol_logml > 0.0
            && self.tol_tau > 0.0
            && self.sigma2_update_period > 0
            && self.lambda_update_period > 0
            && self.fix_sigma2.map_or(true, |v| v > 0.0 && v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(SblError::InvalidInput(format!("invalid fit config {self:?}")))
        }
    }
}

/// A converged (or iteration-capped) sparse model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub rule: PriorRule,
    pub relevance_indices: Vec<usize>,
    pub weights: Vec<f64>,
    /// Posterior covariance of `weights`, row-major L×L.
    pub weight_covariance: Vec<f64>,
    pub tau_hat: Vec<f64>,
    pub lambda_hat: f64,
    pub sigma2_hat: f64,
    pub logml_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl FitResult {
    /// Number of relevance vectors (selected columns).
    pub fn nov(&self) -> usize {
        self.relevance_indices.len()
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        let l = self.weights.len();
        DMatrix::from_row_slice(l, l, &self.weight_covariance)
    }

    /// In-sample fitted values `Φ_A μ`.
    pub fn fitted(&self, phi: &DesignMatrix) -> DVector<f64> {
        let mut out = DVector::zeros(phi.nrows());
        for (&j, &w) in self.relevance_indices.iter().zip(&self.weights) {
            out.axpy(w, &phi.values().column(j), 1.0);
        }
        out
    }

    /// Coefficient vector over all M columns, zero where pruned.
    pub fn dense_weights(&self, m: usize) -> Vec<f64> {
        let mut w = vec![0.0; m];
        for (&j, &v) in self.relevance_indices.iter().zip(&self.weights) {
            w[j] = v;
        }
        w
    }
}

/// What to do with the selected coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Add,
    Reestimate,
    Delete,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub index: usize,
    pub action: Action,
    /// Exact change in the log joint density if the action is applied.
    pub delta_l: f64,
    /// τ slot after the action (0 for `Delete`).
    pub new_tau: f64,
}

// ---------------------------------------------------------------------------
// scalar updates

/// Converts the included-column factors (S, Q) into the excluded ones (s, q)
/// for the BLS scaling, where the weight variance is `τσ²`.
pub fn little_sq(big_s: f64, big_q: f64, tau: f64, sigma2: f64) -> Result<(f64, f64)> {
    little_sq_for_variance(big_s, big_q, tau * sigma2)
}

/// Same as [`little_sq`] for an arbitrary weight prior variance.
pub fn little_sq_for_variance(big_s: f64, big_q: f64, variance: f64) -> Result<(f64, f64)> {
    if variance == 0.0 {
        return Ok((big_s, big_q));
    }
    let denom = 1.0 - variance * big_s;
    if !(denom > 0.0) {
        return Err(SblError::Degenerate(format!(
            "1 - v*S = {denom:e} is not positive (stale posterior)"
        )));
    }
    Ok((big_s / denom, big_q / denom))
}

/// Maximiser over v ≥ 0 of `½[−ln(1+vs) + q²v/(1+vs) − ρv]`.
///
/// The positive root of `ρs²v² + (s² + 2ρs)v + (ρ + s − q²) = 0` when
/// `q² − s > ρ`, zero otherwise. The root is evaluated in the
/// cancellation-free form `2|c| / (b + √(b² − 4ac))`.
pub fn stationary_variance(s: f64, q: f64, rho: f64) -> Result<f64> {
    if !(s > 0.0) || !s.is_finite() {
        return Err(SblError::InvalidInput(format!("s must be positive, got {s}")));
    }
    let theta = q * q - s;
    if theta <= rho {
        return Ok(0.0);
    }
    let c = rho + s - q * q;
    let b = s * s + 2.0 * rho * s;
    if rho <= 0.0 {
        return Ok(-c / b);
    }
    let a = rho * s * s;
    let disc = (b * b - 4.0 * a * c).sqrt();
    Ok(-2.0 * c / (b + disc))
}

/// Stationary τ for the BLS rule.
pub fn bls_tau_stationary(s: f64, q: f64, lambda: f64, sigma2: f64) -> Result<f64> {
    if !(sigma2 > 0.0) || !(lambda >= 0.0) {
        return Err(SblError::InvalidInput(format!(
            "need sigma2 > 0 and lambda >= 0, got {sigma2}, {lambda}"
        )));
    }
    let rho = if lambda < LAMBDA_LIMIT { 0.0 } else { lambda / sigma2 };
    // the threshold itself keeps λ, only the root switches to the limit form
    if q * q - s <= lambda / sigma2 {
        if !(s > 0.0) {
            return Err(SblError::InvalidInput(format!("s must be positive, got {s}")));
        }
        return Ok(0.0);
    }
    Ok(stationary_variance(s, q, rho)? / sigma2)
}

/// Stationary τ slot (= 1/α) for the FRVM rule.
pub fn frvm_tau_stationary(s: f64, q: f64) -> Result<f64> {
    stationary_variance(s, q, 0.0)
}

/// Stationary τ for the FLAP rule.
pub fn flap_tau_stationary(s: f64, q: f64, lambda: f64) -> Result<f64> {
    if !(lambda >= 0.0) {
        return Err(SblError::InvalidInput(format!("lambda must be >= 0, got {lambda}")));
    }
    let rho = if lambda < LAMBDA_LIMIT { 0.0 } else { lambda };
    if q * q - s <= lambda {
        if !(s > 0.0) {
            return Err(SblError::InvalidInput(format!("s must be positive, got {s}")));
        }
        return Ok(0.0);
    }
    stationary_variance(s, q, rho)
}

/// Stationary τ slot under `rule`.
pub fn rule_tau_stationary(rule: PriorRule, s: f64, q: f64, lambda: f64, sigma2: f64) -> Result<f64> {
    match rule {
        PriorRule::Bls => bls_tau_stationary(s, q, lambda, sigma2),
        PriorRule::Frvm => frvm_tau_stationary(s, q),
        PriorRule::Flap => flap_tau_stationary(s, q, lambda),
    }
}

/// The τᵢ-dependent part of the log joint density, in weight-variance units.
pub fn coordinate_objective(s: f64, q: f64, variance: f64, rho: f64) -> f64 {
    if variance == 0.0 {
        return 0.0;
    }
    let vs = variance * s;
    0.5 * (-vs.ln_1p() + q * q * variance / (1.0 + vs) - rho * variance)
}

/// Maximiser of the log joint in λ: `2(n_dim + a − 1)/(Στ + 2b)`.
///
/// Returns `previous` when the denominator vanishes (empty model, b = 0).
pub fn update_lambda(tau: &[f64], n_dim: usize, a: f64, b: f64, previous: f64) -> f64 {
    let denom: f64 = tau.iter().sum::<f64>() + 2.0 * b;
    if denom <= 0.0 {
        return previous;
    }
    (2.0 * (n_dim as f64 + a - 1.0) / denom).max(0.0)
}

// ---------------------------------------------------------------------------
// active-set linear algebra

/// Factorisation of `H = G_AA + σ² V_A⁻¹` with everything needed downstream.
struct ActiveSystem {
    chol: Option<Cholesky<f64, Dyn>>,
    g_aa: DMatrix<f64>,
    b_a: DVector<f64>,
    /// H⁻¹ b_A, which is the posterior mean.
    mu: DVector<f64>,
    variances: Vec<f64>,
    sigma2: f64,
}

impl ActiveSystem {
    fn new(
        g_aa: DMatrix<f64>,
        b_a: DVector<f64>,
        variances: Vec<f64>,
        sigma2: f64,
        active: &[usize],
    ) -> Result<Self> {
        let l = variances.len();
        if l == 0 {
            return Ok(Self {
                chol: None,
                g_aa,
                b_a,
                mu: DVector::zeros(0),
                variances,
                sigma2,
            });
        }
        let mut h = g_aa.clone();
        for (k, v) in variances.iter().enumerate() {
            h[(k, k)] += sigma2 / v;
        }
        let chol = Cholesky::new(h).ok_or_else(|| SblError::CholeskyFailed(active.to_vec()))?;
        let mu = chol.solve(&b_a);
        if mu.iter().any(|v| !v.is_finite()) {
            return Err(SblError::CholeskyFailed(active.to_vec()));
        }
        Ok(Self {
            chol: Some(chol),
            g_aa,
            b_a,
            mu,
            variances,
            sigma2,
        })
    }

    fn len(&self) -> usize {
        self.variances.len()
    }

    /// Σ = σ² H⁻¹.
    fn covariance(&self) -> DMatrix<f64> {
        match &self.chol {
            Some(c) => {
                let mut s = c.inverse() * self.sigma2;
                // exact symmetry for downstream Cholesky users
                let l = s.nrows();
                for i in 0..l {
                    for j in (i + 1)..l {
                        let v = 0.5 * (s[(i, j)] + s[(j, i)]);
                        s[(i, j)] = v;
                        s[(j, i)] = v;
                    }
                }
                s
            }
            None => DMatrix::zeros(0, 0),
        }
    }

    fn log_det_h(&self) -> f64 {
        match &self.chol {
            Some(c) => 2.0 * c.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>(),
            None => 0.0,
        }
    }

    /// log|C| via the determinant identity.
    fn log_det_c(&self, n: usize) -> f64 {
        let l = self.len() as f64;
        (n as f64 - l) * self.sigma2.ln()
            + self.variances.iter().map(|v| v.ln()).sum::<f64>()
            + self.log_det_h()
    }

    /// yᵀ C⁻¹ y.
    fn quad_form(&self, yy: f64) -> f64 {
        (yy - self.b_a.dot(&self.mu)) / self.sigma2
    }

    /// ‖y − Φ_A μ‖².
    fn residual_ss(&self, yy: f64) -> f64 {
        let fit = &self.g_aa * &self.mu;
        (yy - 2.0 * self.b_a.dot(&self.mu) + self.mu.dot(&fit)).max(0.0)
    }
}

fn gather_active(phi: &DMatrix<f64>, y: &DVector<f64>, active: &[usize]) -> (DMatrix<f64>, DVector<f64>) {
    let cols: Vec<_> = active.iter().map(|&j| phi.column(j)).collect();
    if cols.is_empty() {
        return (DMatrix::zeros(0, 0), DVector::zeros(0));
    }
    let phi_a = DMatrix::from_columns(&cols);
    (phi_a.tr_mul(&phi_a), phi_a.tr_mul(y))
}

fn active_variances(rule: PriorRule, hyper: &HyperState, active: &[usize]) -> Vec<f64> {
    active
        .iter()
        .map(|&j| rule.prior_variance(hyper.tau[j], hyper.sigma2))
        .collect()
}

/// Log joint density of (y, τ, λ, σ²) from an active-set factorisation.
///
/// The additive constants `a·ln b − ln Γ(a)` and `c·ln d − ln Γ(c)` are dropped.
/// When λ = 0 the τ prior is flat and its terms, along with the λ hyperprior,
/// are omitted.
fn log_joint(sys: &ActiveSystem, rule: PriorRule, hyper: &HyperState, n: usize, yy: f64) -> f64 {
    log_joint_counted(sys, rule, hyper, n, yy, hyper.tau.len())
}

/// [`log_joint`] with `count` exponential τ terms in the prior.
fn log_joint_counted(sys: &ActiveSystem, rule: PriorRule, hyper: &HyperState, n: usize, yy: f64, count: usize) -> f64 {
    let hp = &hyper.hyperpriors;
    let mut value = -0.5 * (n as f64 * (2.0 * std::f64::consts::PI).ln()
        + sys.log_det_c(n)
        + sys.quad_form(yy));
    if rule.uses_lambda() && hyper.lambda > 0.0 {
        let m = count as f64;
        let lambda = hyper.lambda;
        value += m * (lambda / 2.0).ln() - 0.5 * lambda * hyper.tau.iter().sum::<f64>()
            + (hp.a - 1.0) * lambda.ln()
            - hp.b * lambda;
    }
    if rule == PriorRule::Bls {
        value += -(hp.c + 1.0) * hyper.sigma2.ln() - hp.d / hyper.sigma2;
    }
    value
}

fn sigma2_from_system(sys: &ActiveSystem, rule: PriorRule, hyper: &HyperState, n: usize, yy: f64) -> Result<f64> {
    let hp = &hyper.hyperpriors;
    let n = n as f64;
    let value = match rule {
        PriorRule::Bls => {
            // yᵀ C̃⁻¹ y with C = σ² C̃; for BLS H does not depend on σ².
            let quad = (yy - sys.b_a.dot(&sys.mu)).max(0.0);
            (quad + 2.0 * hp.d) / (n + 2.0 * hp.c + 2.0)
        }
        PriorRule::Frvm => {
            let cov = sys.covariance();
            let gamma: f64 = sys
                .variances
                .iter()
                .enumerate()
                .map(|(k, v)| 1.0 - cov[(k, k)] / v)
                .sum();
            let dof = n - gamma;
            if !(dof > 0.0) {
                return Err(SblError::Degenerate(format!(
                    "noise degrees of freedom {dof} not positive"
                )));
            }
            sys.residual_ss(yy) / dof
        }
        PriorRule::Flap => {
            let cov = sys.covariance();
            let trace: f64 = sys.g_aa.component_mul(&cov).sum();
            (sys.residual_ss(yy) + trace) / n
        }
    };
    if !(value > 0.0) || !value.is_finite() {
        return Err(SblError::Degenerate(format!("sigma2 estimate {value} not positive")));
    }
    Ok(value)
}

fn check_data(phi: &DesignMatrix, y: &DVector<f64>) -> Result<()> {
    if phi.nrows() != y.len() {
        return Err(SblError::DimensionMismatch {
            expected: phi.nrows(),
            got: y.len(),
        });
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(SblError::NonFinite("response"));
    }
    Ok(())
}

/// Sample variance with the N−1 denominator.
pub fn sample_variance(y: &[f64]) -> f64 {
    let n = y.len() as f64;
    if y.len() < 2 {
        return 0.0;
    }
    let mean = y.iter().sum::<f64>() / n;
    y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
}

// ---------------------------------------------------------------------------
// public operations

/// Posterior over the active weights for the given hyperparameters.
pub fn posterior_refresh(phi: &DesignMatrix, y: &DVector<f64>, hyper: &HyperState, rule: PriorRule) -> Result<PosteriorState> {
    check_data(phi, y)?;
    hyper.check()?;
    let active = hyper.active_set();
    let (g_aa, b_a) = gather_active(phi.values(), y, &active);
    let sys = ActiveSystem::new(g_aa, b_a, active_variances(rule, hyper, &active), hyper.sigma2, &active)?;
    let yy = y.dot(y);
    Ok(PosteriorState {
        mu: sys.mu.clone(),
        sigma: sys.covariance(),
        log_marginal: log_joint(&sys, rule, hyper, phi.nrows(), yy),
        active_index: active,
    })
}

/// Log joint density of (y, τ, λ, σ²) up to the hyperprior normalising constants.
pub fn log_marginal(phi: &DesignMatrix, y: &DVector<f64>, hyper: &HyperState, rule: PriorRule) -> Result<f64> {
    let value = posterior_refresh(phi, y, hyper, rule)?.log_marginal;
    if !value.is_finite() {
        return Err(SblError::NonFinite("log marginal"));
    }
    Ok(value)
}

/// S and Q for every column given the posterior of the active set.
pub fn compute_sq(phi: &DesignMatrix, y: &DVector<f64>, post: &PosteriorState, sigma2: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    check_data(phi, y)?;
    let values = phi.values();
    let (phi_a_t_phi, phi_a_t_y) = if post.active_index.is_empty() {
        (DMatrix::zeros(0, values.ncols()), DVector::zeros(0))
    } else {
        let cols: Vec<_> = post.active_index.iter().map(|&j| values.column(j)).collect();
        let phi_a = DMatrix::from_columns(&cols);
        (phi_a.tr_mul(values), phi_a.tr_mul(y))
    };
    let sigma_y = &post.sigma * &phi_a_t_y;
    let inv = 1.0 / sigma2;
    let mut big_s = Vec::with_capacity(values.ncols());
    let mut big_q = Vec::with_capacity(values.ncols());
    for i in 0..values.ncols() {
        let col = values.column(i);
        let proj = phi_a_t_phi.column(i);
        let s = inv * col.dot(&col) - inv * inv * proj.dot(&(&post.sigma * proj));
        let q = inv * col.dot(y) - inv * inv * proj.dot(&sigma_y);
        if !(s.is_finite() && q.is_finite()) {
            return Err(SblError::NonFinite("S/Q"));
        }
        big_s.push(s);
        big_q.push(q);
    }
    Ok((big_s, big_q))
}

/// Fills in (s, q) from (S, Q) for the given hyperparameters.
pub fn sq_cache(big_s: Vec<f64>, big_q: Vec<f64>, hyper: &HyperState, rule: PriorRule) -> Result<SqCache> {
    let mut s = Vec::with_capacity(big_s.len());
    let mut q = Vec::with_capacity(big_s.len());
    for i in 0..big_s.len() {
        let v = rule.prior_variance(hyper.tau[i], hyper.sigma2);
        let (si, qi) = little_sq_for_variance(big_s[i], big_q[i], v)?;
        s.push(si);
        q.push(qi);
    }
    Ok(SqCache { big_s, big_q, s, q })
}

/// Noise variance re-estimate under `rule` for the current τ.
pub fn update_sigma2(y: &DVector<f64>, phi: &DesignMatrix, hyper: &HyperState, rule: PriorRule) -> Result<f64> {
    check_data(phi, y)?;
    hyper.check()?;
    let active = hyper.active_set();
    let (g_aa, b_a) = gather_active(phi.values(), y, &active);
    let sys = ActiveSystem::new(g_aa, b_a, active_variances(rule, hyper, &active), hyper.sigma2, &active)?;
    sigma2_from_system(&sys, rule, hyper, phi.nrows(), y.dot(y))
}

/// Initial state: empty model, λ = 0, σ² = 0.1·var(y) unless fixed.
pub fn init_state(phi: &DesignMatrix, y: &DVector<f64>, cfg: &FitConfig) -> Result<(HyperState, PosteriorState, SqCache)> {
    check_data(phi, y)?;
    cfg.validate()?;
    if y.len() < 2 {
        return Err(SblError::InvalidInput("need at least two observations".into()));
    }
    let sigma2 = match cfg.fix_sigma2 {
        Some(v) => v,
        None => {
            let var = sample_variance(y.as_slice());
            if !(var > 0.0) {
                return Err(SblError::ConstantResponse);
            }
            0.1 * var
        }
    };
    let hyper = HyperState::new(phi.ncols(), sigma2, cfg.hyperpriors);
    let mut post = PosteriorState::empty();
    // with no active column and λ = 0 only the Gaussian term is rule independent
    post.log_marginal = log_marginal(phi, y, &hyper, PriorRule::Frvm)?;
    let (big_s, big_q) = compute_sq(phi, y, &post, sigma2)?;
    let sq = SqCache {
        s: big_s.clone(),
        q: big_q.clone(),
        big_s,
        big_q,
    };
    Ok((hyper, post, sq))
}

/// Largest relative change of a τ re-estimate together with the best action.
#[derive(Debug, Clone, Copy)]
struct Scan {
    best: Option<Candidate>,
    max_rel_change: f64,
}

fn scan_candidates(sq: &SqCache, hyper: &HyperState, rule: PriorRule, blocked: &[bool]) -> Result<Scan> {
    let rho = rule.penalty_rate(hyper.lambda, hyper.sigma2);
    let mut best: Option<Candidate> = None;
    let mut max_rel_change = 0.0f64;
    for i in 0..hyper.tau.len() {
        let (s, q) = (sq.s[i], sq.q[i]);
        if !(s > 0.0) {
            // a zero column carries no information
            continue;
        }
        let old_tau = hyper.tau[i];
        let new_tau = rule_tau_stationary(rule, s, q, hyper.lambda, hyper.sigma2)?;
        let old_v = rule.prior_variance(old_tau, hyper.sigma2);
        let new_v = rule.prior_variance(new_tau, hyper.sigma2);
        let action = match (old_tau > 0.0, new_tau > 0.0) {
            (false, true) if !blocked[i] => Action::Add,
            (true, true) => {
                max_rel_change = max_rel_change.max((new_tau - old_tau).abs() / old_tau);
                Action::Reestimate
            }
            (true, false) => Action::Delete,
            _ => continue,
        };
        let delta_l = coordinate_objective(s, q, new_v, rho) - coordinate_objective(s, q, old_v, rho);
        if best.map_or(true, |b| delta_l > b.delta_l) {
            best = Some(Candidate {
                index: i,
                action,
                delta_l,
                new_tau,
            });
        }
    }
    Ok(Scan {
        best,
        max_rel_change,
    })
}

/// The single-coordinate action with the largest exact log-likelihood gain,
/// or `None` when no column can be added, re-estimated or pruned.
pub fn select_action(sq: &SqCache, hyper: &HyperState, rule: PriorRule) -> Result<Option<Candidate>> {
    let blocked = vec![false; hyper.tau.len()];
    Ok(scan_candidates(sq, hyper, rule, &blocked)?.best)
}

// ---------------------------------------------------------------------------
// the fitting loop

/// Precomputed ΦᵀΦ and Φᵀy so each iteration costs O(M·L²).
struct Gram {
    g: DMatrix<f64>,
    phi_y: DVector<f64>,
    yy: f64,
    n: usize,
}

impl Gram {
    fn new(phi: &DesignMatrix, y: &DVector<f64>) -> Self {
        let v = phi.values();
        Self {
            g: v.tr_mul(v),
            phi_y: v.tr_mul(y),
            yy: y.dot(y),
            n: v.nrows(),
        }
    }

    fn system(&self, rule: PriorRule, hyper: &HyperState, active: &[usize]) -> Result<ActiveSystem> {
        let l = active.len();
        let g_aa = DMatrix::from_fn(l, l, |r, c| self.g[(active[r], active[c])]);
        let b_a = DVector::from_fn(l, |r, _| self.phi_y[active[r]]);
        ActiveSystem::new(g_aa, b_a, active_variances(rule, hyper, active), hyper.sigma2, active)
    }

    fn sq(&self, sys: &ActiveSystem, active: &[usize], hyper: &HyperState, rule: PriorRule) -> Result<SqCache> {
        let m = self.g.ncols();
        let inv = 1.0 / hyper.sigma2;
        let mut big_s: Vec<f64> = (0..m).map(|i| inv * self.g[(i, i)]).collect();
        let mut big_q: Vec<f64> = (0..m).map(|i| inv * self.phi_y[i]).collect();
        if let Some(chol) = &sys.chol {
            let l = active.len();
            // rows of G restricted to the active set, then W = L⁻¹ G_A·
            let mut w = DMatrix::from_fn(l, m, |r, c| self.g[(active[r], c)]);
            chol.l_dirty()
                .solve_lower_triangular_mut(&mut w);
            let g_mu = DVector::from_fn(m, |c, _| {
                (0..l).map(|r| self.g[(active[r], c)] * sys.mu[r]).sum::<f64>()
            });
            for i in 0..m {
                let col = w.column(i);
                big_s[i] -= inv * col.dot(&col);
                big_q[i] -= inv * g_mu[i];
            }
        }
        let mut s = big_s.clone();
        let mut q = big_q.clone();
        if !active.is_empty() {
            // s = 1/Σᵢᵢ − 1/v and q = μᵢ/Σᵢᵢ avoid the cancellation in 1 − vS
            let cov = sys.covariance();
            for (k, &i) in active.iter().enumerate() {
                let v = rule.prior_variance(hyper.tau[i], hyper.sigma2);
                let d = cov[(k, k)];
                s[i] = (1.0 / d - 1.0 / v).max(f64::MIN_POSITIVE);
                q[i] = sys.mu[k] / d;
            }
        }
        Ok(SqCache { big_s, big_q, s, q })
    }
}

struct Engine<'a> {
    gram: &'a Gram,
    rule: PriorRule,
    lambda_count: LambdaCount,
    hyper: HyperState,
    active: Vec<usize>,
    sys: ActiveSystem,
    sq: SqCache,
}

impl<'a> Engine<'a> {
    fn refresh(&mut self) -> Result<()> {
        let active = self.hyper.active_set();
        let sys = self.gram.system(self.rule, &self.hyper, &active)?;
        let sq = self.gram.sq(&sys, &active, &self.hyper, self.rule)?;
        self.active = active;
        self.sys = sys;
        self.sq = sq;
        Ok(())
    }

    fn refresh_system(&mut self) -> Result<()> {
        let active = self.hyper.active_set();
        self.sys = self.gram.system(self.rule, &self.hyper, &active)?;
        self.active = active;
        Ok(())
    }

    fn log_joint(&self) -> f64 {
        let count = match self.lambda_count {
            LambdaCount::All => self.hyper.tau.len(),
            LambdaCount::Active => self.active.len(),
        };
        log_joint_counted(&self.sys, self.rule, &self.hyper, self.gram.n, self.gram.yy, count)
    }

    fn update_lambda(&mut self) {
        if self.rule.uses_lambda() {
            let hp = self.hyper.hyperpriors;
            let n_dim = match self.lambda_count {
                LambdaCount::All => self.hyper.tau.len(),
                LambdaCount::Active => self.hyper.tau.iter().filter(|&&t| t > 0.0).count(),
            };
            self.hyper.lambda = update_lambda(&self.hyper.tau, n_dim, hp.a, hp.b, self.hyper.lambda);
        }
    }

    /// Re-estimates σ² and returns the relative change.
    fn update_sigma2(&mut self, floor: f64) -> Result<f64> {
        let new = sigma2_from_system(&self.sys, self.rule, &self.hyper, self.gram.n, self.gram.yy)
            .or_else(|e| match e {
                SblError::Degenerate(_) => Ok(floor),
                other => Err(other),
            })?
            .max(floor);
        let old = self.hyper.sigma2;
        self.hyper.sigma2 = new;
        Ok((new - old).abs() / old)
    }
}

/// Runs the greedy fast marginal likelihood loop to convergence.
pub fn fit(phi: &DesignMatrix, y: &DVector<f64>, rule: PriorRule, cfg: &FitConfig) -> Result<FitResult> {
    let (hyper, _, _) = init_state(phi, y, cfg)?;
    let m = phi.ncols();
    let scales: Vec<f64> = if cfg.normalize_columns {
        phi.values()
            .column_iter()
            .map(|c| {
                let n = c.norm();
                if n > 0.0 { n } else { 1.0 }
            })
            .collect()
    } else {
        vec![1.0; m]
    };
    let mut gram = Gram::new(phi, y);
    for r in 0..m {
        gram.phi_y[r] /= scales[r];
        for c in 0..m {
            gram.g[(r, c)] /= scales[r] * scales[c];
        }
    }
    let floor = SIGMA2_FLOOR * sample_variance(y.as_slice());
    let empty = gram.system(rule, &hyper, &[])?;
    let sq = gram.sq(&empty, &[], &hyper, rule)?;
    let mut eng = Engine {
        gram: &gram,
        rule,
        lambda_count: cfg.lambda_count,
        hyper,
        active: Vec::new(),
        sys: empty,
        sq,
    };
    let mut blocked = vec![false; m];
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    for iter in 1..=cfg.max_iters {
        iterations = iter;
        let scan = scan_candidates(&eng.sq, &eng.hyper, rule, &blocked)?;
        let settled = scan.best.map_or(true, |c| c.delta_l < cfg.tol_logml)
            && scan.max_rel_change < cfg.tol_tau;
        if settled {
            if cfg.fix_sigma2.is_some() {
                converged = true;
                break;
            }
            let change = eng.update_sigma2(floor)?;
            eng.update_lambda();
            eng.refresh()?;
            trace.push(eng.log_joint());
            if change < cfg.tol_tau {
                converged = true;
                break;
            }
            continue;
        }
        let cand = scan.best.expect("unsettled scan has a candidate");
        let previous = eng.hyper.tau[cand.index];
        eng.hyper.tau[cand.index] = cand.new_tau;
        let sigma2_due = cfg.fix_sigma2.is_none() && iter % cfg.sigma2_update_period == 0;
        // the noise update reads the new factorisation; otherwise one refresh after λ suffices
        let mut outcome = if sigma2_due { eng.refresh_system() } else { Ok(()) };
        if outcome.is_ok() {
            if sigma2_due {
                eng.update_sigma2(floor)?;
            }
            if iter % cfg.lambda_update_period == 0 {
                eng.update_lambda();
            }
            outcome = eng.refresh();
        }
        match outcome {
            Ok(()) => {}
            Err(SblError::CholeskyFailed(_) | SblError::Degenerate(_)) => {
                eng.hyper.tau[cand.index] = previous;
                blocked[cand.index] = true;
                eng.refresh()?;
                continue;
            }
            Err(other) => return Err(other),
        }
        trace.push(eng.log_joint());
    }

    let covariance = eng.sys.covariance();
    let l = eng.active.len();
    let scale_of = |k: usize| scales[eng.active[k]];
    let mut weight_covariance = Vec::with_capacity(l * l);
    for r in 0..l {
        for c in 0..l {
            weight_covariance.push(covariance[(r, c)] / (scale_of(r) * scale_of(c)));
        }
    }
    Ok(FitResult {
        rule,
        relevance_indices: eng.active.clone(),
        weights: eng.sys.mu.iter().enumerate().map(|(k, w)| w / scale_of(k)).collect(),
        weight_covariance,
        tau_hat: eng.hyper.tau.iter().zip(&scales).map(|(t, s)| t / (s * s)).collect(),
        lambda_hat: eng.hyper.lambda,
        sigma2_hat: eng.hyper.sigma2,
        logml_trace: trace,
        iterations,
        converged,
    })
}
