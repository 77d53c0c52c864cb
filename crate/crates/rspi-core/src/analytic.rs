//! Closed-form controllers and partition functions.
//!
//! Everything here lives in the one-dimensional setting with zero drift and
//! zero path cost, where the uncontrolled transition density is Gaussian and
//! the path integral reduces to quadrature:
//!
//! * LEQG: quadratic end cost `phi(x) = (alpha^2/2)(x - mu)^2` with the
//!   divergence threshold `theta < 1/(alpha^2 sigma^2 (T-t)) + 1/(sigma^2 R^2)`
//!   and feedback `u = alpha^2 (mu - x) / (R^2 + (T-t) alpha^2 (1 - sigma^2 R^2 theta))`.
//! * Piecewise-constant end costs: the partition function is a weighted sum
//!   of Gaussian hit probabilities `l(t, x | S)` and the optimal control a
//!   weighted sum of the single-region baseline controls
//!   `u_0 = lambda0 (R^T R)^-1 (d/dx l) / l`.
//! * The two-delta-target limit with its symmetry-breaking horizon
//!   `T - t = 1/sigma^2`.
//!
//! All mixture arithmetic runs in signed log space so enormous weight factors
//! `exp(-c/lambda_theta)` never overflow.

use nalgebra::DVector;
use thiserror::Error;

use crate::math::{
    log_sum_exp, norm_logpdf, norm_pdf, norm_prob_between, signed_log_diff, signed_log_sum,
    signed_log_exp_m1, SignedLog,
};
use crate::model::{EndCost, Region, RiskParams};
use crate::sim::{Policy, PolicyError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalyticError {
    #[error("LEQG problem ill-posed at t = {t}: theta = {theta} reaches the divergence threshold {threshold}")]
    IllPosed { t: f64, theta: f64, threshold: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("risk parameters sit in the special regime; this operation requires a finite lambda_theta")]
    SpecialRisk,
    #[error("partition function non-positive (cancellation in targets/threats weights)")]
    NonPositivePartitionFunction,
    #[error("end-cost variant not supported here: {0}")]
    UnsupportedEndCost(&'static str),
}

/// One-dimensional linear-exponential-quadratic-Gaussian problem:
/// `b = 0`, `B = 1`, scalar noise and control penalty, end cost
/// `(alpha^2/2)(x - mu)^2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LeqgSpec {
    pub alpha: f64,
    pub mu: f64,
    pub control_penalty: f64,
    pub sigma: f64,
    pub theta: f64,
    pub horizon: f64,
}

impl LeqgSpec {
    pub fn new(
        alpha: f64,
        mu: f64,
        control_penalty: f64,
        sigma: f64,
        theta: f64,
        horizon: f64,
    ) -> Result<Self, AnalyticError> {
        if !(alpha >= 0.0) || !alpha.is_finite() {
            return Err(AnalyticError::InvalidParameter(format!(
                "alpha must be >= 0, got {alpha}"
            )));
        }
        if !(control_penalty > 0.0) || !(sigma > 0.0) {
            return Err(AnalyticError::InvalidParameter(format!(
                "control penalty and sigma must be positive, got R = {control_penalty}, sigma = {sigma}"
            )));
        }
        if !mu.is_finite() || !theta.is_finite() || !(horizon > 0.0) || !horizon.is_finite() {
            return Err(AnalyticError::InvalidParameter(
                "mu, theta finite and horizon positive required".to_string(),
            ));
        }
        Ok(LeqgSpec {
            alpha,
            mu,
            control_penalty,
            sigma,
            theta,
            horizon,
        })
    }

    /// The noise-cost ratio implied by the compatibility condition,
    /// `lambda0 = sigma^2 R^2`.
    pub fn lambda0(&self) -> f64 {
        self.sigma * self.sigma * self.control_penalty * self.control_penalty
    }

    /// Divergence threshold of the path integral at time `t`:
    /// `1/(alpha^2 sigma^2 (T-t)) + 1/(sigma^2 R^2)`.
    pub fn divergence_threshold(&self, t: f64) -> f64 {
        let s2 = self.sigma * self.sigma;
        let ttg = self.horizon - t;
        1.0 / (self.alpha * self.alpha * s2 * ttg) + 1.0 / (s2 * self.control_penalty * self.control_penalty)
    }
}

/// True iff `theta` lies strictly below the divergence threshold at `t`.
pub fn leqg_wellposed(spec: &LeqgSpec, t: f64) -> bool {
    assert!(t < spec.horizon, "requires t < horizon");
    spec.theta < spec.divergence_threshold(t)
}

/// The LEQG feedback control; rejects ill-posed configurations.
///
/// Within the well-posed range `|u|` is nondecreasing in `theta` for fixed
/// `(t, x)` with `x != mu`, and at `theta = 1/(sigma^2 R^2)` the amplitude is
/// independent of the horizon.
pub fn leqg_control(spec: &LeqgSpec, t: f64, x: f64) -> Result<f64, AnalyticError> {
    if !leqg_wellposed(spec, t) {
        return Err(AnalyticError::IllPosed {
            t,
            theta: spec.theta,
            threshold: spec.divergence_threshold(t),
        });
    }
    let a2 = spec.alpha * spec.alpha;
    let r2 = spec.control_penalty * spec.control_penalty;
    let s2 = spec.sigma * spec.sigma;
    let ttg = spec.horizon - t;
    let denom = r2 + ttg * a2 * (1.0 - s2 * r2 * spec.theta);
    if denom == 0.0 {
        return Err(AnalyticError::IllPosed {
            t,
            theta: spec.theta,
            threshold: spec.divergence_threshold(t),
        });
    }
    Ok(a2 * (spec.mu - x) / denom)
}

/// Probability that the uncontrolled diffusion started at `(t, x)` ends
/// inside `region` at the horizon (zero drift, Gaussian transition).
pub fn hit_probability(t: f64, x: f64, region: &Region, sigma: f64, horizon: f64) -> f64 {
    assert!(t < horizon, "requires t < horizon");
    assert!(sigma > 0.0, "requires sigma > 0");
    let s = sigma * (horizon - t).sqrt();
    let zl = (region.lower() - x) / s;
    let zu = (region.upper() - x) / s;
    norm_prob_between(zl, zu)
}

/// Baseline (`theta = 0`) single-region control with a saturation diagnostic.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegionControl {
    pub value: f64,
    /// Set when the hit probability underflowed and the control was replaced
    /// by its far-field asymptote `(nearest edge - x) / (T - t)`.
    pub saturated: bool,
}

/// `u_0(t, x | S) = lambda0 (R^T R)^-1 (d/dx l) / l` for the scalar problem.
///
/// Independent of the region's cost level by construction. Far from the
/// region, where `l` underflows, the Mills-ratio asymptote is substituted and
/// flagged.
pub fn single_region_control(
    t: f64,
    x: f64,
    region: &Region,
    sigma: f64,
    horizon: f64,
    lambda0: f64,
    control_penalty: f64,
) -> RegionControl {
    assert!(t < horizon, "requires t < horizon");
    assert!(sigma > 0.0, "requires sigma > 0");
    let s = sigma * (horizon - t).sqrt();
    let zl = (region.lower() - x) / s;
    let zu = (region.upper() - x) / s;
    let base = lambda0 / (control_penalty * control_penalty);
    let l = norm_prob_between(zl, zu);
    let dl = (norm_pdf(zl) - norm_pdf(zu)) / s;
    let ratio = dl / l;
    if l > 0.0 && ratio.is_finite() {
        return RegionControl {
            value: base * ratio,
            saturated: false,
        };
    }
    // l underflowed: steer at the nearest edge
    let edge = if x < region.lower() {
        region.lower()
    } else if x >= region.upper() {
        region.upper()
    } else {
        return RegionControl {
            value: 0.0,
            saturated: false,
        };
    };
    RegionControl {
        value: base * ((edge - x) / s) / s,
        saturated: true,
    }
}

/// Per-region mixture weights and the `lambda_theta / lambda0` prefactor.
///
/// Partition weights lie in `[0, 1]` and sum to one; targets/threats weights
/// may be negative and do not. In the special regime the limit form is
/// reported: prefactor one and weights `-c_i l_i / lambda0`.
#[derive(Clone, Debug, PartialEq)]
pub struct MixtureWeights {
    pub weights: Vec<f64>,
    pub prefactor: f64,
}

struct RegionGeometry {
    log_l: f64,
    /// signed log of d/dx l
    dl: SignedLog,
    l: f64,
}

fn region_geometry(t: f64, x: f64, region: &Region, sigma: f64, horizon: f64) -> RegionGeometry {
    let s = sigma * (horizon - t).sqrt();
    let zl = (region.lower() - x) / s;
    let zu = (region.upper() - x) / s;
    let l = norm_prob_between(zl, zu);
    let dl = signed_log_diff(norm_logpdf(zl), norm_logpdf(zu));
    RegionGeometry {
        log_l: l.ln(),
        dl: SignedLog::new(dl.sign, dl.ln_abs - s.ln()),
        l,
    }
}

fn check_scalar_setup(t: f64, sigma: f64, horizon: f64) -> Result<(), AnalyticError> {
    if !(t < horizon) || !(sigma > 0.0) {
        return Err(AnalyticError::InvalidParameter(format!(
            "requires t < horizon and sigma > 0, got t = {t}, horizon = {horizon}, sigma = {sigma}"
        )));
    }
    Ok(())
}

/// Log of the partition function `Z_theta(t, x)` for piecewise-constant end
/// costs, evaluated fully in log space.
///
/// * Single finite region: `log Z = -c/lambda_theta + log l`.
/// * Partition: `log sum_i exp(-c_i/lambda_theta) l_i`.
/// * Targets/threats: `log (1 + sum_i (exp(-c_i/lambda_theta) - 1) l_i)`;
///   cancellation to a non-positive value is reported as an error.
pub fn partition_log_z(
    t: f64,
    x: f64,
    end_cost: &EndCost,
    params: &RiskParams,
    sigma: f64,
    horizon: f64,
) -> Result<f64, AnalyticError> {
    check_scalar_setup(t, sigma, horizon)?;
    let lambda_theta = params
        .finite_lambda_theta()
        .ok_or(AnalyticError::SpecialRisk)?;
    match end_cost {
        EndCost::SingleRegionFinite { region } => {
            let g = region_geometry(t, x, region, sigma, horizon);
            Ok(-region.cost() / lambda_theta + g.log_l)
        }
        EndCost::Partition { regions } => {
            let terms: Vec<f64> = regions
                .iter()
                .map(|r| {
                    -r.cost() / lambda_theta
                        + region_geometry(t, x, r, sigma, horizon).log_l
                })
                .collect();
            Ok(log_sum_exp(&terms))
        }
        EndCost::TargetsThreats { regions } => {
            let mut terms = Vec::with_capacity(regions.len() + 1);
            terms.push(SignedLog::new(1.0, 0.0)); // the background 1
            for r in regions {
                let factor = signed_log_exp_m1(-r.cost() / lambda_theta);
                let g = region_geometry(t, x, r, sigma, horizon);
                terms.push(SignedLog::new(factor.sign, factor.ln_abs + g.log_l));
            }
            let z = signed_log_sum(&terms);
            if z.sign <= 0.0 {
                return Err(AnalyticError::NonPositivePartitionFunction);
            }
            Ok(z.ln_abs)
        }
        EndCost::Quadratic { .. } => Err(AnalyticError::UnsupportedEndCost(
            "quadratic end costs are handled by the LEQG closed form",
        )),
    }
}

/// Optimal control for piecewise-constant end costs as a weighted sum of
/// baseline single-region controls, together with the weights.
///
/// With finite `lambda_theta` the weights follow the matching variant
/// (partition or targets/threats form). In the special regime the control is
/// the gradient of the plain expected end cost,
/// `u = -(sigma^2/lambda0) d/dx sum_i c_i l_i`.
pub fn mixture_control(
    t: f64,
    x: f64,
    end_cost: &EndCost,
    params: &RiskParams,
    sigma: f64,
    horizon: f64,
    control_penalty: f64,
) -> Result<(f64, MixtureWeights), AnalyticError> {
    check_scalar_setup(t, sigma, horizon)?;
    let lambda0 = params.lambda0();
    let base = lambda0 / (control_penalty * control_penalty);

    if params.is_special() {
        let regions = match end_cost {
            EndCost::Partition { regions } | EndCost::TargetsThreats { regions } => regions,
            EndCost::SingleRegionFinite { .. } => {
                return Err(AnalyticError::UnsupportedEndCost(
                    "infinite-outside end cost has no finite expected value in the special regime",
                ))
            }
            EndCost::Quadratic { .. } => {
                return Err(AnalyticError::UnsupportedEndCost(
                    "quadratic end costs are handled by the LEQG closed form",
                ))
            }
        };
        // u = -(sigma^2 / lambda0) d/dx sum_i c_i l_i, assembled as
        // sum_i w_i u_0(.|S_i) with w_i = -c_i l_i / lambda0.
        let mut grad_terms = Vec::with_capacity(regions.len());
        let mut weights = Vec::with_capacity(regions.len());
        for r in regions {
            let g = region_geometry(t, x, r, sigma, horizon);
            grad_terms.push(g.dl.scaled(SignedLog::from_value(r.cost())));
            weights.push(-r.cost() * g.l / lambda0);
        }
        let grad = signed_log_sum(&grad_terms);
        let s2 = sigma * sigma;
        let control = -(s2 / lambda0) * grad.value();
        return Ok((
            control,
            MixtureWeights {
                weights,
                prefactor: 1.0,
            },
        ));
    }

    let lambda_theta = params.finite_lambda_theta().expect("finite by branch");
    let prefactor = lambda_theta / lambda0;
    let log_z = partition_log_z(t, x, end_cost, params, sigma, horizon)?;

    // numerator: sum_i f_i (d/dx l_i) in signed log space, with
    // f_i = exp(-c_i/lambda_theta) for partitions and
    // f_i = exp(-c_i/lambda_theta) - 1 for targets/threats.
    let (numerator, weights) = match end_cost {
        EndCost::SingleRegionFinite { region } => {
            let g = region_geometry(t, x, region, sigma, horizon);
            if g.l == 0.0 {
                // delegate to the saturated baseline far from the region
                let u0 =
                    single_region_control(t, x, region, sigma, horizon, lambda0, control_penalty);
                return Ok((
                    prefactor * u0.value,
                    MixtureWeights {
                        weights: vec![1.0],
                        prefactor,
                    },
                ));
            }
            let num = SignedLog::new(
                g.dl.sign,
                -region.cost() / lambda_theta + g.dl.ln_abs,
            );
            (num, vec![1.0])
        }
        EndCost::Partition { regions } => {
            let mut terms = Vec::with_capacity(regions.len());
            let mut weights = Vec::with_capacity(regions.len());
            for r in regions {
                let g = region_geometry(t, x, r, sigma, horizon);
                let log_f = -r.cost() / lambda_theta;
                terms.push(SignedLog::new(g.dl.sign, log_f + g.dl.ln_abs));
                weights.push((log_f + g.log_l - log_z).exp());
            }
            (signed_log_sum(&terms), weights)
        }
        EndCost::TargetsThreats { regions } => {
            let mut terms = Vec::with_capacity(regions.len());
            let mut weights = Vec::with_capacity(regions.len());
            for r in regions {
                let factor = signed_log_exp_m1(-r.cost() / lambda_theta);
                let g = region_geometry(t, x, r, sigma, horizon);
                terms.push(g.dl.scaled(factor));
                weights.push(factor.sign * (factor.ln_abs + g.log_l - log_z).exp());
            }
            (signed_log_sum(&terms), weights)
        }
        EndCost::Quadratic { .. } => unreachable!("rejected by partition_log_z"),
    };

    let control = prefactor
        * base
        * numerator.sign
        * (numerator.ln_abs - log_z).exp();
    Ok((
        control,
        MixtureWeights {
            weights,
            prefactor,
        },
    ))
}

/// Two-delta-target limit (targets at -1 and +1):
/// `u = lambda_theta / (lambda0 (T-t)) (tanh(x / (sigma^2 (T-t))) - x)`.
pub fn delta_two_target_control(
    t: f64,
    x: f64,
    params: &RiskParams,
    sigma: f64,
    horizon: f64,
) -> Result<f64, AnalyticError> {
    check_scalar_setup(t, sigma, horizon)?;
    let lambda_theta = params
        .finite_lambda_theta()
        .ok_or(AnalyticError::SpecialRisk)?;
    let ttg = horizon - t;
    let s2 = sigma * sigma;
    Ok(lambda_theta / (params.lambda0() * ttg) * ((x / (s2 * ttg)).tanh() - x))
}

/// Horizon at which the symmetric two-target control bifurcates:
/// `T - t = 1 / sigma^2`.
pub fn symmetry_breaking_time(sigma: f64) -> f64 {
    assert!(sigma > 0.0, "requires sigma > 0");
    1.0 / (sigma * sigma)
}

/// Zero crossings of `f` on `[lo, hi]`: sign changes on a uniform grid,
/// refined by bisection.
pub fn zero_crossings<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, step: f64) -> Vec<f64> {
    assert!(lo < hi && step > 0.0);
    let n = ((hi - lo) / step).round() as usize;
    let mut zeros = Vec::new();
    let mut prev_x = lo;
    let mut prev_f = f(lo);
    for i in 1..=n {
        let x = if i == n { hi } else { lo + i as f64 * step };
        let fx = f(x);
        if prev_f == 0.0 {
            zeros.push(prev_x);
        } else if fx != 0.0 && prev_f.signum() != fx.signum() {
            let (mut a, mut b) = (prev_x, x);
            let (mut fa, _fb) = (prev_f, fx);
            for _ in 0..200 {
                let m = 0.5 * (a + b);
                if b - a < 1e-13 {
                    break;
                }
                let fm = f(m);
                if fm == 0.0 {
                    a = m;
                    b = m;
                    break;
                }
                if fa.signum() == fm.signum() {
                    a = m;
                    fa = fm;
                } else {
                    b = m;
                }
            }
            zeros.push(0.5 * (a + b));
        }
        prev_x = x;
        prev_f = fx;
    }
    if prev_f == 0.0 {
        zeros.push(prev_x);
    }
    zeros
}

/// LEQG feedback as a rollout policy.
pub struct LeqgPolicy {
    spec: LeqgSpec,
}

impl LeqgPolicy {
    pub fn new(spec: LeqgSpec) -> Self {
        LeqgPolicy { spec }
    }
}

impl Policy for LeqgPolicy {
    fn control_into(&self, t: f64, x: &DVector<f64>, u: &mut DVector<f64>)
        -> Result<(), PolicyError> {
        let value = leqg_control(&self.spec, t, x[0])
            .map_err(|e| PolicyError::new(e.to_string()))?;
        u[0] = value;
        Ok(())
    }
}

/// Region-mixture feedback as a rollout policy, re-evaluated at every step.
pub struct MixturePolicy {
    end_cost: EndCost,
    params: RiskParams,
    sigma: f64,
    horizon: f64,
    control_penalty: f64,
}

impl MixturePolicy {
    pub fn new(
        end_cost: EndCost,
        params: RiskParams,
        sigma: f64,
        horizon: f64,
        control_penalty: f64,
    ) -> Result<Self, AnalyticError> {
        if matches!(end_cost, EndCost::Quadratic { .. }) {
            return Err(AnalyticError::UnsupportedEndCost(
                "use LeqgPolicy for quadratic end costs",
            ));
        }
        if params.is_special() && matches!(end_cost, EndCost::SingleRegionFinite { .. }) {
            return Err(AnalyticError::UnsupportedEndCost(
                "infinite-outside end cost has no finite expected value in the special regime",
            ));
        }
        Ok(MixturePolicy {
            end_cost,
            params,
            sigma,
            horizon,
            control_penalty,
        })
    }
}

impl Policy for MixturePolicy {
    fn control_into(&self, t: f64, x: &DVector<f64>, u: &mut DVector<f64>)
        -> Result<(), PolicyError> {
        let (value, _) = mixture_control(
            t,
            x[0],
            &self.end_cost,
            &self.params,
            self.sigma,
            self.horizon,
            self.control_penalty,
        )
        .map_err(|e| PolicyError::new(e.to_string()))?;
        u[0] = value;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::make_risk_params;
    use approx::assert_relative_eq;

    fn spec(theta: f64, horizon: f64) -> LeqgSpec {
        LeqgSpec::new(1.0, 0.0, 1.0, 1.0, theta, horizon).unwrap()
    }

    #[test]
    fn wellposed_truth_table() {
        assert!(leqg_wellposed(&spec(0.0, 1.0), 0.0));
        // threshold 2 at unit horizon: strict inequality
        assert!(!leqg_wellposed(&spec(2.0, 1.0), 0.0));
        // threshold 3 at half horizon
        assert!(leqg_wellposed(&spec(2.0, 0.5), 0.0));
        assert_eq!(spec(0.0, 1.0).divergence_threshold(0.0), 2.0);
    }

    #[test]
    fn leqg_control_hand_values() {
        assert_eq!(leqg_control(&spec(0.0, 1.0), 0.0, 0.0).unwrap(), 0.0);
        assert_relative_eq!(
            leqg_control(&spec(0.0, 1.0), 0.0, 1.0).unwrap(),
            -0.5,
            max_relative = 1e-15
        );
    }

    #[test]
    fn leqg_constant_amplitude_at_special_theta() {
        // theta = 1/(sigma^2 R^2) = 1: amplitude independent of horizon
        let u1 = leqg_control(&spec(1.0, 1.0), 0.0, 1.0).unwrap();
        let u2 = leqg_control(&spec(1.0, 4.0), 0.0, 1.0).unwrap();
        assert_eq!(u1, -1.0);
        assert_eq!(u2, -1.0);
    }

    #[test]
    fn leqg_amplitude_vs_horizon_regimes() {
        // below 1/(sigma^2 R^2): amplitude shrinks with the horizon
        let below_short = leqg_control(&spec(0.0, 1.0), 0.0, 1.0).unwrap().abs();
        let below_long = leqg_control(&spec(0.0, 4.0), 0.0, 1.0).unwrap().abs();
        assert!(below_long < below_short);
        // above it: defined only below the divergence horizon, growing as
        // the horizon approaches it
        let above_ok = leqg_control(&spec(1.5, 0.5), 0.0, 1.0);
        assert!(above_ok.is_ok());
        assert!(leqg_control(&spec(1.5, 4.0), 0.0, 1.0).is_err());
        let nearer = leqg_control(&spec(1.5, 1.8), 0.0, 1.0).unwrap().abs();
        assert!(nearer > above_ok.unwrap().abs());
    }

    #[test]
    fn leqg_ill_posed_rejected() {
        assert!(matches!(
            leqg_control(&spec(3.0, 1.0), 0.0, 1.0),
            Err(AnalyticError::IllPosed { .. })
        ));
    }

    #[test]
    fn leqg_amplitude_ordered_in_theta() {
        for x in [-2.0, -0.5, 0.3, 1.7] {
            let mut last = -1.0;
            for theta in [-2.0, -1.0, 0.0, 0.5, 1.0, 1.5] {
                let u = leqg_control(&spec(theta, 1.0), 0.0, x).unwrap().abs();
                assert!(u >= last, "theta ordering violated at x={x}");
                last = u;
            }
        }
    }

    #[test]
    fn hit_probability_reference_values() {
        let full = Region::new(f64::NEG_INFINITY, f64::INFINITY, 0.0).unwrap();
        assert_eq!(hit_probability(0.0, 3.7, &full, 1.0, 1.0), 1.0);
        let half = Region::new(0.0, f64::INFINITY, 0.0).unwrap();
        assert_relative_eq!(
            hit_probability(0.0, 0.0, &half, 1.0, 1.0),
            0.5,
            max_relative = 1e-15
        );
        let narrow = Region::new(-0.1, 0.0, 0.0).unwrap();
        // Phi(0.1) - Phi(0) under the mirrored z-convention
        assert_relative_eq!(
            hit_probability(0.0, 0.0, &narrow, 1.0, 1.0),
            0.039827837277029,
            max_relative = 1e-12
        );
    }

    #[test]
    fn hit_probability_matches_quadrature() {
        // Simpson's rule over the transition density as an independent check
        let region = Region::new(-0.3, 1.2, 0.0).unwrap();
        let (x, sigma, t, horizon) = (0.4, 0.8, 0.25, 1.0);
        let s2 = sigma * sigma * (horizon - t);
        let density = |y: f64| {
            (-(y - x) * (y - x) / (2.0 * s2)).exp() / (2.0 * std::f64::consts::PI * s2).sqrt()
        };
        let n = 20_000;
        let h = (region.upper() - region.lower()) / n as f64;
        let mut acc = density(region.lower()) + density(region.upper());
        for i in 1..n {
            let y = region.lower() + i as f64 * h;
            acc += density(y) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        let quad = acc * h / 3.0;
        assert_relative_eq!(
            hit_probability(t, x, &region, sigma, horizon),
            quad,
            max_relative = 1e-10
        );
    }

    #[test]
    fn single_region_control_symmetry_and_sign() {
        let region = Region::new(-0.05, 0.05, -10.0).unwrap();
        let center = single_region_control(0.0, 0.0, &region, 1.0, 1.0, 1.0, 1.0);
        assert_eq!(center.value, 0.0);
        assert!(!center.saturated);
        let below = single_region_control(0.0, -1.0, &region, 1.0, 1.0, 1.0, 1.0);
        assert!(below.value > 0.0);
        let above = single_region_control(0.0, 1.0, &region, 1.0, 1.0, 1.0, 1.0);
        assert!(above.value < 0.0);
    }

    #[test]
    fn single_region_control_matches_log_hit_gradient() {
        let region = Region::new(-0.05, 0.05, -3.0).unwrap();
        let h = 1e-6;
        for x in [-1.5, -0.4, 0.02, 0.9, 2.5] {
            let u = single_region_control(0.0, x, &region, 1.0, 1.0, 1.0, 1.0);
            let fd = (hit_probability(0.0, x + h, &region, 1.0, 1.0).ln()
                - hit_probability(0.0, x - h, &region, 1.0, 1.0).ln())
                / (2.0 * h);
            assert_relative_eq!(u.value, fd, max_relative = 1e-6);
            assert!(!u.saturated);
        }
    }

    #[test]
    fn single_region_control_is_cost_independent_bitwise() {
        let cheap = Region::new(0.2, 0.7, -1.0).unwrap();
        let dear = Region::new(0.2, 0.7, -100.0).unwrap();
        for x in [-2.0, 0.0, 0.45, 3.0] {
            let a = single_region_control(0.0, x, &cheap, 1.0, 1.0, 1.0, 1.0);
            let b = single_region_control(0.0, x, &dear, 1.0, 1.0, 1.0, 1.0);
            assert_eq!(a.value.to_bits(), b.value.to_bits());
        }
    }

    #[test]
    fn single_region_control_saturates_far_away() {
        let region = Region::new(-0.05, 0.05, -10.0).unwrap();
        let far = single_region_control(0.0, -60.0, &region, 1.0, 1.0, 1.0, 1.0);
        assert!(far.saturated);
        // asymptote: (lower - x) / (T - t)
        assert_relative_eq!(far.value, (-0.05 + 60.0) / 1.0, max_relative = 1e-12);
        assert!(far.value > 0.0);
    }

    #[test]
    fn partition_log_z_zero_costs() {
        let params = make_risk_params(1.0, 0.5).unwrap();
        let part = EndCost::partition(vec![
            Region::new(f64::NEG_INFINITY, -0.3, 0.0).unwrap(),
            Region::new(-0.3, 0.6, 0.0).unwrap(),
            Region::new(0.6, f64::INFINITY, 0.0).unwrap(),
        ])
        .unwrap();
        for x in [-1.0, 0.0, 2.0] {
            let lz = partition_log_z(0.0, x, &part, &params, 1.0, 1.0).unwrap();
            assert!(lz.abs() < 1e-12, "log Z = {lz}");
        }
    }

    #[test]
    fn partition_log_z_single_region_identity() {
        let params = make_risk_params(1.0, 0.5).unwrap(); // lambda_theta = 2
        let region = Region::new(-0.2, 0.4, 3.0).unwrap();
        let sr = EndCost::single_region(region);
        let lz = partition_log_z(0.0, 0.1, &sr, &params, 1.0, 1.0).unwrap();
        let l = hit_probability(0.0, 0.1, &region, 1.0, 1.0);
        assert_relative_eq!(lz, -3.0 / 2.0 + l.ln(), max_relative = 1e-14);
    }

    #[test]
    fn partition_and_targets_threats_forms_agree() {
        let params = make_risk_params(1.0, 0.5).unwrap();
        let tt = EndCost::targets_threats(vec![
            Region::new(-0.1, 0.0, -10.0).unwrap(),
            Region::new(0.0, 0.1, 10.0).unwrap(),
        ])
        .unwrap();
        let part = tt.to_partition().unwrap();
        for x in [-0.7, -0.2, 0.05, 0.3, 1.4] {
            let a = partition_log_z(0.0, x, &tt, &params, 1.0, 1.0).unwrap();
            let b = partition_log_z(0.0, x, &part, &params, 1.0, 1.0).unwrap();
            assert_relative_eq!(a, b, max_relative = 1e-12);
        }
    }

    #[test]
    fn special_params_rejected_by_partition_log_z() {
        let params = make_risk_params(1.0, 1.0).unwrap();
        let tt = EndCost::zero();
        assert!(matches!(
            partition_log_z(0.0, 0.0, &tt, &params, 1.0, 1.0),
            Err(AnalyticError::SpecialRisk)
        ));
    }

    #[test]
    fn mixture_control_constant_costs_vanish() {
        let params = make_risk_params(1.0, 0.5).unwrap();
        let part = EndCost::partition(vec![
            Region::new(f64::NEG_INFINITY, 0.0, 4.0).unwrap(),
            Region::new(0.0, f64::INFINITY, 4.0).unwrap(),
        ])
        .unwrap();
        for x in [-1.0, 0.3, 2.0] {
            let (u, w) = mixture_control(0.0, x, &part, &params, 1.0, 1.0, 1.0).unwrap();
            assert!(u.abs() < 1e-12, "u = {u}");
            assert_relative_eq!(w.weights.iter().sum::<f64>(), 1.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn single_target_attracts_for_positive_lambda_theta() {
        let params = make_risk_params(1.0, 0.5).unwrap(); // lambda_theta = 2 > 0
        let tt =
            EndCost::targets_threats(vec![Region::new(-0.05, 0.05, -10.0).unwrap()]).unwrap();
        for x in [-2.0, -0.5, 0.5, 2.0] {
            let (u, _) = mixture_control(0.0, x, &tt, &params, 1.0, 1.0, 1.0).unwrap();
            assert!(u * (0.0 - x) > 0.0, "control at {x} should aim at the target");
        }
    }

    #[test]
    fn single_threat_repels_for_negative_lambda_theta() {
        let params = make_risk_params(1.0, 3.0).unwrap(); // lambda_theta = -0.5
        let tt = EndCost::targets_threats(vec![Region::new(-0.05, 0.05, 10.0).unwrap()]).unwrap();
        for x in [-0.5, -0.2, 0.2, 0.5] {
            let (u, w) = mixture_control(0.0, x, &tt, &params, 1.0, 1.0, 1.0).unwrap();
            assert!(u * x > 0.0, "control at {x} should flee the threat");
            assert!(w.prefactor < 0.0);
        }
    }

    #[test]
    fn two_threats_late_time_retreat_to_middle() {
        // threats at +-1 with negative lambda_theta: past the breaking time
        // the control pushes back toward the midpoint
        let params = RiskParams::from_lambda_theta(1.0, -0.5).unwrap();
        let eps = 0.02;
        let tt = EndCost::targets_threats(vec![
            Region::centered(-1.0, eps, 10.0).unwrap(),
            Region::centered(1.0, eps, 10.0).unwrap(),
        ])
        .unwrap();
        for x in [0.2, 0.5, 0.8] {
            let (u, _) = mixture_control(0.5, x, &tt, &params, 1.0, 1.0, 1.0).unwrap();
            assert!(u < 0.0, "control at {x} should retreat toward the middle");
            let (um, _) = mixture_control(0.5, -x, &tt, &params, 1.0, 1.0, 1.0).unwrap();
            assert!(um > 0.0);
        }
        // at the earlier time the agent still tries the outward escape
        let (u_early, _) = mixture_control(0.0, 0.5, &tt, &params, 1.0, 1.0, 1.0).unwrap();
        assert!(u_early > 0.0, "early control should escape outward, got {u_early}");
    }

    #[test]
    fn mixture_antisymmetry_is_exact() {
        let params = make_risk_params(1.0, 0.5).unwrap();
        let eps = 0.02;
        let tt = EndCost::targets_threats(vec![
            Region::new(-1.0 - 0.5 * eps, -1.0 + 0.5 * eps, -10.0).unwrap(),
            Region::new(1.0 - 0.5 * eps, 1.0 + 0.5 * eps, -10.0).unwrap(),
        ])
        .unwrap();
        for x in [0.17, 0.5, 0.96, 1.5, 2.75] {
            let (up, _) = mixture_control(0.5, x, &tt, &params, 1.0, 1.0, 1.0).unwrap();
            let (um, _) = mixture_control(0.5, -x, &tt, &params, 1.0, 1.0, 1.0).unwrap();
            assert_eq!(up.to_bits(), (-um).to_bits());
        }
    }

    #[test]
    fn special_mixture_matches_expected_cost_gradient() {
        // lambda0 = 1, theta = 1: special regime; compare against a finite
        // difference of sum c_i l_i
        let params = make_risk_params(1.0, 1.0).unwrap();
        assert!(params.is_special());
        let tt = EndCost::targets_threats(vec![
            Region::new(-0.1, 0.0, -10.0).unwrap(),
            Region::new(0.0, 0.1, 10.0).unwrap(),
        ])
        .unwrap();
        let expected_cost = |x: f64| {
            tt.regions()
                .iter()
                .map(|r| r.cost() * hit_probability(0.0, x, r, 1.0, 1.0))
                .sum::<f64>()
        };
        let h = 1e-6;
        for x in [-0.8, -0.2, 0.1, 0.6] {
            let (u, w) = mixture_control(0.0, x, &tt, &params, 1.0, 1.0, 1.0).unwrap();
            let fd = -(expected_cost(x + h) - expected_cost(x - h)) / (2.0 * h);
            assert_relative_eq!(u, fd, max_relative = 1e-6, epsilon = 1e-9);
            assert_eq!(w.prefactor, 1.0);
        }
    }

    #[test]
    fn delta_two_target_hand_values() {
        let params = make_risk_params(1.0, 0.0).unwrap();
        assert_eq!(
            delta_two_target_control(0.5, 0.0, &params, 1.0, 1.0).unwrap(),
            0.0
        );
        let u = delta_two_target_control(0.5, 0.5, &params, 1.0, 1.0).unwrap();
        assert_relative_eq!(u, (1f64.tanh() - 0.5) / 0.5, max_relative = 1e-14);
        assert_relative_eq!(u, 0.5232, max_relative = 1e-3);
    }

    #[test]
    fn delta_two_target_zero_crossings() {
        let params = make_risk_params(1.0, 0.0).unwrap();
        let f = |x: f64| delta_two_target_control(0.5, x, &params, 1.0, 1.0).unwrap();
        let zeros = zero_crossings(f, -3.0, 3.0, 1e-3);
        assert_eq!(zeros.len(), 3);
        assert_relative_eq!(zeros[0], -0.9575, max_relative = 1e-3);
        assert!(zeros[1].abs() < 1e-6);
        assert_relative_eq!(zeros[2], 0.9575, max_relative = 1e-3);
    }

    #[test]
    fn delta_form_is_odd() {
        let params = make_risk_params(2.0, -0.25).unwrap();
        for x in [0.1, 0.9, 2.4] {
            let up = delta_two_target_control(0.3, x, &params, 1.3, 1.0).unwrap();
            let um = delta_two_target_control(0.3, -x, &params, 1.3, 1.0).unwrap();
            assert_eq!(up.to_bits(), (-um).to_bits());
        }
    }

    #[test]
    fn symmetry_breaking_time_values() {
        assert_eq!(symmetry_breaking_time(1.0), 1.0);
        assert_eq!(symmetry_breaking_time(2.0), 0.25);
        assert_eq!(symmetry_breaking_time(f64::INFINITY), 0.0);
    }

    #[test]
    fn finite_width_mixture_converges_to_delta_form() {
        // lambda_theta = 0.5 keeps -c/lambda_theta = 20 deep in the
        // delta-dominated regime for c = -10
        let params = RiskParams::from_lambda_theta(1.0, 0.5).unwrap();
        let sup_gap = |eps: f64| {
            let tt = EndCost::targets_threats(vec![
                Region::centered(-1.0, eps, -10.0).unwrap(),
                Region::centered(1.0, eps, -10.0).unwrap(),
            ])
            .unwrap();
            let mut gap = 0.0f64;
            let mut x = -2.0;
            while x <= 2.0 {
                let (u, _) = mixture_control(0.5, x, &tt, &params, 1.0, 1.0, 1.0).unwrap();
                let d = delta_two_target_control(0.5, x, &params, 1.0, 1.0).unwrap();
                gap = gap.max((u - d).abs());
                x += 0.05;
            }
            gap
        };
        let g1 = sup_gap(0.1);
        let g2 = sup_gap(0.02);
        let g3 = sup_gap(0.004);
        assert!(g1 > g2 && g2 > g3, "gaps {g1} {g2} {g3} must shrink");
    }

    #[test]
    fn zero_crossing_locations_are_theta_invariant() {
        let eps = 0.02;
        let tt = EndCost::targets_threats(vec![
            Region::centered(-1.0, eps, -10.0).unwrap(),
            Region::centered(1.0, eps, -10.0).unwrap(),
        ])
        .unwrap();
        let zeros_for = |lambda_theta: f64| {
            let params = RiskParams::from_lambda_theta(1.0, lambda_theta).unwrap();
            zero_crossings(
                |x| mixture_control(0.5, x, &tt, &params, 1.0, 1.0, 1.0).unwrap().0,
                -3.0,
                3.0,
                1e-3,
            )
        };
        let a = zeros_for(1.0);
        let b = zeros_for(0.5);
        let c = zeros_for(-0.5);
        assert_eq!(a.len(), 3);
        assert_eq!(b.len(), 3);
        assert_eq!(c.len(), 3);
        for i in 0..3 {
            assert!((a[i] - b[i]).abs() < 1e-6);
            assert!((a[i] - c[i]).abs() < 1e-6);
        }
    }
}
