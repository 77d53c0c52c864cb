//! Risk-sensitive path integral stochastic optimal control.
//!
//! The exponential-utility objective `(1/theta) log E[exp(theta C)]` admits,
//! under the noise-cost compatibility condition, the same log-transform that
//! linearizes the risk-neutral HJB equation. The optimal value becomes
//! `-lambda_theta log Z_theta` for a path integral `Z_theta` over
//! uncontrolled dynamics, with effective temperature
//! `lambda_theta = lambda0 / (1 - lambda0 theta)`.
//!
//! * [`model`] - problem and risk-parameter types and their algebra.
//! * [`sim`] - Euler-Maruyama rollouts with deterministic noise streams.
//! * [`analytic`] - LEQG feedback, Gaussian hit probabilities and the
//!   region-mixture controllers in closed form.
//! * [`mc`] - Monte Carlo estimators for `log Z`, the value and the control,
//!   plus divergence diagnostics.
//! * [`risk`] - empirical risk evaluation of cost samples.

// negated comparisons (`!(x > 0.0)`) are deliberate NaN-rejecting guards
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod math;

pub mod analytic;
pub mod mc;
pub mod model;
pub mod risk;
pub mod sim;

pub use analytic::{
    delta_two_target_control, hit_probability, leqg_control, leqg_wellposed, mixture_control,
    partition_log_z, single_region_control, symmetry_breaking_time, zero_crossings, AnalyticError,
    LeqgPolicy, LeqgSpec, MixturePolicy, MixtureWeights, RegionControl,
};
pub use mc::{
    detect_blowup, estimate_control, estimate_log_z, estimate_value, zero_control_costs,
    BlowupDiagnostic, ControlEstimate, McError, McPolicy, QuadraticDivergenceCheck, ZEstimate,
};
pub use model::{
    check_noise_cost_compatibility, make_risk_params, small_theta_reference, ControlProblem,
    Drift, EffectiveTemperature, EndCost, Gain, ModelError, PathCost, Region, RiskParams,
};
pub use risk::{
    cost_statistics, empirical_value, expansion_check, extremal_limits, monotonicity_scan,
    CostSample, CostSummary, ExpansionCheck, HistogramBin, MonotonicityScan, MonotonicityVerdict,
    RiskError,
};
pub use sim::{
    batch_rollout, rollout, step_state, trajectory_cost, uncontrolled_terminal, ConstantPolicy,
    CostParts, FnPolicy, Policy, PolicyError, RngStream, SimError, Trajectory, ZeroPolicy,
};
