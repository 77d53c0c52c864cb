//! Monte Carlo estimation of the risk-sensitive path integral.
//!
//! The partition function
//!
//! ```text
//! Z_theta(t, x) = E[ exp(-(phi(X_T) + int V dt) / lambda_theta) ]
//! ```
//!
//! is sampled over uncontrolled paths, accumulated through a max-shifted
//! log-sum-exp, and reported with a delta-method standard error and the
//! effective sample size `(sum w)^2 / sum w^2` of the weight population.
//! The optimal value is `-lambda_theta log Z`; in the special regime
//! `theta = 1/lambda0` it is the plain Monte Carlo mean of the zero-control
//! cost instead. The optimal control is
//!
//! ```text
//! u* = lambda_theta (R^T R)^-1 B^T d/dx log Z
//! ```
//!
//! estimated by central finite differences with common random numbers: the
//! same noise streams drive both stencil points, which couples the weights
//! and cancels most of the Monte Carlo variance of the difference.

use nalgebra::{Cholesky, DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

use crate::model::{ControlProblem, Gain, RiskParams};
use crate::sim::{uncontrolled_terminal, Policy, PolicyError, RngStream, SimError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum McError {
    #[error("degenerate estimate: {0}")]
    Degenerate(String),
    #[error("special-regime parameters: the path-integral estimator needs a finite lambda_theta")]
    SpecialRisk,
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("finite-difference step must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error("control penalty is not invertible")]
    SingularPenalty,
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Log-domain estimate of the path integral.
#[derive(Clone, Copy, Debug)]
pub struct ZEstimate {
    pub log_z: f64,
    pub std_err_log_z: f64,
    pub n_samples: usize,
    pub effective_sample_size: f64,
}

/// Finite-difference control estimate with per-coordinate standard errors.
#[derive(Clone, Debug)]
pub struct ControlEstimate {
    pub control: DVector<f64>,
    pub std_err: DVector<f64>,
    pub n_samples: usize,
}

/// Zero-control total costs `phi(X_T) + int V dt` over streams `(seed, 0..n)`.
pub fn zero_control_costs(
    problem: &ControlProblem,
    t: f64,
    x: &DVector<f64>,
    n: usize,
    dt: f64,
    seed: u64,
) -> Result<Vec<f64>, McError> {
    let samples: Result<Vec<f64>, SimError> = (0..n)
        .into_par_iter()
        .map(|i| {
            let sample =
                uncontrolled_terminal(problem, x, t, dt, RngStream::new(seed, i as u64))?;
            Ok(problem.end_cost().eval_state(&sample.state) + sample.path_cost)
        })
        .collect();
    Ok(samples?)
}

fn exponents_from_costs(costs: &[f64], lambda_theta: f64) -> Vec<f64> {
    costs.iter().map(|c| -c / lambda_theta).collect()
}

struct LogMeanExp {
    log_mean: f64,
    std_err: f64,
    ess: f64,
}

/// Max-shifted statistics of `log(1/n sum exp(e_i))`.
fn log_mean_exp_stats(exponents: &[f64]) -> Result<LogMeanExp, McError> {
    let n = exponents.len();
    if n < 2 {
        return Err(McError::TooFewSamples { need: 2, got: n });
    }
    if exponents.iter().any(|e| e.is_nan() || *e == f64::INFINITY) {
        return Err(McError::Degenerate(
            "exponent overflow: a path weight is infinite (divergent integrand)".to_string(),
        ));
    }
    let m = exponents
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return Err(McError::Degenerate(
            "all paths carry infinite cost: every weight underflowed to zero".to_string(),
        ));
    }
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    for &e in exponents {
        let w = (e - m).exp();
        s1 += w;
        s2 += w * w;
    }
    let nf = n as f64;
    let log_mean = m + s1.ln() - nf.ln();
    // delta method: Var(log Zhat) ~ Var(w) / (n wbar^2)
    let var_w = ((s2 - s1 * s1 / nf) / (nf - 1.0)).max(0.0);
    let std_err = (nf * var_w).sqrt() / s1;
    let ess = s1 * s1 / s2;
    Ok(LogMeanExp {
        log_mean,
        std_err,
        ess,
    })
}

/// Monte Carlo estimate of `log Z_theta(t, x)` from `n` uncontrolled paths.
pub fn estimate_log_z(
    problem: &ControlProblem,
    params: &RiskParams,
    t: f64,
    x: &DVector<f64>,
    n: usize,
    dt: f64,
    seed: u64,
) -> Result<ZEstimate, McError> {
    let lambda_theta = params.finite_lambda_theta().ok_or(McError::SpecialRisk)?;
    if !lambda_theta.is_finite() || lambda_theta == 0.0 {
        return Err(McError::Degenerate(format!(
            "lambda_theta must be finite and nonzero, got {lambda_theta}"
        )));
    }
    if n < 2 {
        return Err(McError::TooFewSamples { need: 2, got: n });
    }
    let costs = zero_control_costs(problem, t, x, n, dt, seed)?;
    let exponents = exponents_from_costs(&costs, lambda_theta);
    let stats = log_mean_exp_stats(&exponents)?;
    Ok(ZEstimate {
        log_z: stats.log_mean,
        std_err_log_z: stats.std_err,
        n_samples: n,
        effective_sample_size: stats.ess,
    })
}

/// Monte Carlo estimate of the optimal value `J_theta(t, x)`.
///
/// Finite `lambda_theta`: `-lambda_theta log Z`. Special regime: the plain
/// mean of the zero-control costs.
pub fn estimate_value(
    problem: &ControlProblem,
    params: &RiskParams,
    t: f64,
    x: &DVector<f64>,
    n: usize,
    dt: f64,
    seed: u64,
) -> Result<f64, McError> {
    if n < 2 {
        return Err(McError::TooFewSamples { need: 2, got: n });
    }
    if params.is_special() {
        let costs = zero_control_costs(problem, t, x, n, dt, seed)?;
        return Ok(costs.iter().sum::<f64>() / n as f64);
    }
    let z = estimate_log_z(problem, params, t, x, n, dt, seed)?;
    let lambda_theta = params.finite_lambda_theta().expect("finite by branch");
    Ok(-lambda_theta * z.log_z)
}

/// Default finite-difference step `1e-2 sigma_scale sqrt(T - t)`.
pub fn default_fd_step(sigma_scale: f64, t: f64, horizon: f64) -> f64 {
    1e-2 * sigma_scale * (horizon - t).sqrt()
}

struct FdSide {
    log_mean: f64,
    /// normalized weights w_i / sum(w), in sample order
    normalized: Vec<f64>,
    mean_cost: f64,
    costs: Vec<f64>,
}

fn fd_side(
    problem: &ControlProblem,
    lambda_theta: Option<f64>,
    t: f64,
    x: &DVector<f64>,
    n: usize,
    dt: f64,
    seed: u64,
) -> Result<FdSide, McError> {
    let costs = zero_control_costs(problem, t, x, n, dt, seed)?;
    match lambda_theta {
        Some(lt) => {
            let exponents = exponents_from_costs(&costs, lt);
            let stats = log_mean_exp_stats(&exponents)?;
            let m = exponents
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max);
            let s1: f64 = exponents.iter().map(|e| (e - m).exp()).sum();
            let normalized = exponents.iter().map(|e| (e - m).exp() / s1).collect();
            Ok(FdSide {
                log_mean: stats.log_mean,
                normalized,
                mean_cost: 0.0,
                costs,
            })
        }
        None => {
            if costs.iter().any(|c| !c.is_finite()) {
                return Err(McError::Degenerate(
                    "special-regime gradient needs finite costs".to_string(),
                ));
            }
            let mean = costs.iter().sum::<f64>() / n as f64;
            Ok(FdSide {
                log_mean: 0.0,
                normalized: vec![],
                mean_cost: mean,
                costs,
            })
        }
    }
}

/// Monte Carlo estimate of the optimal control at `(t, x)`.
///
/// Central finite differences of `log Z` (or of the special-regime mean
/// cost) in each state coordinate, with common random numbers across the
/// stencil, transformed by `lambda_theta (R^T R)^-1 B^T` (or
/// `-(R^T R)^-1 B^T`).
#[allow(clippy::too_many_arguments)]
pub fn estimate_control(
    problem: &ControlProblem,
    params: &RiskParams,
    t: f64,
    x: &DVector<f64>,
    h: f64,
    n: usize,
    dt: f64,
    seed: u64,
) -> Result<ControlEstimate, McError> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(McError::InvalidStep(h));
    }
    if n < 2 {
        return Err(McError::TooFewSamples { need: 2, got: n });
    }
    let lambda_theta = if params.is_special() {
        None
    } else {
        Some(params.finite_lambda_theta().expect("finite by branch"))
    };
    let d = problem.state_dim();
    let nf = n as f64;

    let mut grad = DVector::zeros(d);
    let mut grad_se = DVector::zeros(d);
    for j in 0..d {
        let mut x_plus = x.clone();
        x_plus[j] += h;
        let mut x_minus = x.clone();
        x_minus[j] -= h;
        // common random numbers: both sides reuse streams (seed, 0..n)
        let plus = fd_side(problem, lambda_theta, t, &x_plus, n, dt, seed)?;
        let minus = fd_side(problem, lambda_theta, t, &x_minus, n, dt, seed)?;
        match lambda_theta {
            Some(_) => {
                grad[j] = (plus.log_mean - minus.log_mean) / (2.0 * h);
                // influence-function variance of the paired log difference
                let var: f64 = plus
                    .normalized
                    .iter()
                    .zip(&minus.normalized)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                grad_se[j] = var.sqrt() / (2.0 * h);
            }
            None => {
                grad[j] = (plus.mean_cost - minus.mean_cost) / (2.0 * h);
                let mean_diff = plus.mean_cost - minus.mean_cost;
                let var: f64 = plus
                    .costs
                    .iter()
                    .zip(&minus.costs)
                    .map(|(a, b)| {
                        let diff = (a - b) - mean_diff;
                        diff * diff
                    })
                    .sum::<f64>()
                    / (nf - 1.0);
                grad_se[j] = (var / nf).sqrt() / (2.0 * h);
            }
        }
    }

    // transform: lambda_theta (R^T R)^-1 B^T grad (or -(R^T R)^-1 B^T grad)
    let r = problem.control_penalty();
    let rtr = r.transpose() * r;
    let chol = Cholesky::new(rtr).ok_or(McError::SingularPenalty)?;
    let bt: DMatrix<f64> = match problem.gain() {
        Gain::Identity => DMatrix::identity(problem.control_dim(), d),
        Gain::Constant(b) => b.transpose(),
        Gain::Fn(f) => f(t, x).transpose(),
    };
    let scale = lambda_theta.unwrap_or(-1.0);
    let transform = chol.inverse() * bt * scale;
    let control = &transform * &grad;
    let mut std_err = DVector::zeros(problem.control_dim());
    for i in 0..problem.control_dim() {
        std_err[i] = (0..d).map(|j| transform[(i, j)].abs() * grad_se[j]).sum();
    }
    Ok(ControlEstimate {
        control,
        std_err,
        n_samples: n,
    })
}

/// Exact divergence check for quadratic end costs (the LEQG threshold).
#[derive(Clone, Copy, Debug)]
pub struct QuadraticDivergenceCheck {
    pub alpha: f64,
    pub sigma: f64,
    pub control_penalty: f64,
    pub theta: f64,
    pub time_to_go: f64,
}

impl QuadraticDivergenceCheck {
    pub fn threshold(&self) -> f64 {
        let s2 = self.sigma * self.sigma;
        1.0 / (self.alpha * self.alpha * s2 * self.time_to_go)
            + 1.0 / (s2 * self.control_penalty * self.control_penalty)
    }

    /// Divergent iff `theta` fails the strict inequality.
    pub fn divergent(&self) -> bool {
        !(self.theta < self.threshold())
    }
}

/// Heavy-tail diagnostic for a per-path exponent population.
#[derive(Clone, Debug)]
pub struct BlowupDiagnostic {
    pub n_samples: usize,
    /// Weight share of the top 1% of paths.
    pub top_percentile_share: f64,
    /// Max-weight share over the first half of the sample.
    pub max_share_half: f64,
    /// Max-weight share over the full sample.
    pub max_share_full: f64,
    pub suspected_divergent: bool,
    pub analytic_divergent: Option<bool>,
    pub analytic_threshold: Option<f64>,
}

impl BlowupDiagnostic {
    /// One-line report; contains "suspected divergent path integral" when
    /// the empirical flag is raised.
    pub fn verdict_line(&self) -> String {
        let empirical = if self.suspected_divergent {
            "suspected divergent path integral".to_string()
        } else {
            format!(
                "no weight-collapse detected (top-1% share {:.3})",
                self.top_percentile_share
            )
        };
        match (self.analytic_divergent, self.analytic_threshold) {
            (Some(d), Some(th)) => format!(
                "{empirical}; analytic verdict: {} (threshold {th})",
                if d { "divergent" } else { "convergent" }
            ),
            _ => empirical,
        }
    }
}

fn weight_shares(exponents: &[f64]) -> (f64, f64) {
    // (top-1% share, max share); +inf exponents dominate everything
    if exponents.contains(&f64::INFINITY) {
        return (1.0, 1.0);
    }
    let m = exponents
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return (0.0, 0.0);
    }
    let mut weights: Vec<f64> = exponents.iter().map(|e| (e - m).exp()).collect();
    weights.sort_by(|a, b| b.total_cmp(a));
    let total: f64 = weights.iter().sum();
    let k = (exponents.len() / 100).max(1);
    let top: f64 = weights.iter().take(k).sum();
    (top / total, weights[0] / total)
}

/// Flags heavy-tail weight collapse: the top 1% of paths carrying more than
/// 99% of the weight while the max-weight share grows as the sample doubles.
/// A convergent integrand halves its max-weight share when `n` doubles, so
/// growth is measured against that baseline. For quadratic end costs the
/// exact threshold verdict is reported alongside.
pub fn detect_blowup(
    exponents: &[f64],
    quadratic: Option<&QuadraticDivergenceCheck>,
) -> Result<BlowupDiagnostic, McError> {
    if exponents.len() < 100 {
        return Err(McError::TooFewSamples {
            need: 100,
            got: exponents.len(),
        });
    }
    let (top_share_full, max_share_full) = weight_shares(exponents);
    let (_, max_share_half) = weight_shares(&exponents[..exponents.len() / 2]);
    let has_infinite = exponents.contains(&f64::INFINITY);
    let suspected =
        has_infinite || (top_share_full > 0.99 && max_share_full > 0.55 * max_share_half);
    Ok(BlowupDiagnostic {
        n_samples: exponents.len(),
        top_percentile_share: top_share_full,
        max_share_half,
        max_share_full,
        suspected_divergent: suspected,
        analytic_divergent: quadratic.map(|q| q.divergent()),
        analytic_threshold: quadratic.map(|q| q.threshold()),
    })
}

/// Control law backed by the finite-difference estimator; expensive, meant
/// for spot evaluation rather than dense rollouts.
pub struct McPolicy {
    problem: std::sync::Arc<ControlProblem>,
    params: RiskParams,
    h: f64,
    n: usize,
    dt: f64,
    seed: u64,
}

impl McPolicy {
    pub fn new(
        problem: std::sync::Arc<ControlProblem>,
        params: RiskParams,
        h: f64,
        n: usize,
        dt: f64,
        seed: u64,
    ) -> Self {
        McPolicy {
            problem,
            params,
            h,
            n,
            dt,
            seed,
        }
    }
}

impl Policy for McPolicy {
    fn control_into(&self, t: f64, x: &DVector<f64>, u: &mut DVector<f64>)
        -> Result<(), PolicyError> {
        let est = estimate_control(
            &self.problem,
            &self.params,
            t,
            x,
            self.h,
            self.n,
            self.dt,
            self.seed,
        )
        .map_err(|e| PolicyError::new(e.to_string()))?;
        u.copy_from(&est.control);
        Ok(())
    }
}
