//! Problem definitions and risk-parameter algebra.
//!
//! The controlled diffusion is
//!
//! ```text
//! dX_t = b(t, X_t) dt + B(t, X_t) (u(t, X_t) dt + sigma dW_t)
//! ```
//!
//! with quadratic control cost `0.5 ||R u||^2`, a scalar path-cost rate
//! `V(t, x)`, an end cost `phi(X_T)`, and the noise/cost compatibility
//! condition `sigma sigma^T = lambda0 (R^T R)^-1` that makes the
//! log-transformed value function linear.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("lambda0 must be nonzero and finite, got {0}")]
    BadLambda0(f64),
    #[error("risk sensitivity must be finite, got {0}")]
    BadTheta(f64),
    #[error("region requires lower < upper, got [{lower}, {upper})")]
    EmptyRegion { lower: f64, upper: f64 },
    #[error("region cost must not be NaN")]
    BadRegionCost,
    #[error("partition regions must be ordered, contiguous and cover the whole line")]
    BadPartition,
    #[error("targets/threats regions must be bounded and pairwise disjoint")]
    BadTargetsThreats,
    #[error("quadratic end cost requires alpha >= 0 and finite mu")]
    BadQuadratic,
    #[error("{name} must be a full-rank {rows}x{cols} matrix")]
    BadMatrix {
        name: &'static str,
        rows: usize,
        cols: usize,
    },
    #[error("state dimension must be >= control dimension >= 1, got d={d}, k={k}")]
    BadDimensions { d: usize, k: usize },
    #[error("horizon must be positive and finite, got {0}")]
    BadHorizon(f64),
}

/// Effective temperature of the risk-sensitive path integral.
///
/// `Finite(lambda_theta)` carries `lambda0 / (1 - lambda0 * theta)`;
/// `Special` tags the regime `theta = 1/lambda0` where the transformed value
/// function is already linear and downstream code must branch to the plain
/// expected-cost path instead of dividing by `lambda_theta`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EffectiveTemperature {
    Finite(f64),
    Special,
}

/// Risk sensitivity `theta` together with the noise-cost ratio `lambda0`
/// and the derived effective temperature.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RiskParams {
    theta: f64,
    lambda0: f64,
    lambda_theta: EffectiveTemperature,
}

impl RiskParams {
    /// Builds parameters from `(lambda0, theta)`.
    ///
    /// Maintains `1/lambda_theta = 1/lambda0 - theta` exactly and tags
    /// `theta = 1/lambda0` as [`EffectiveTemperature::Special`] rather than
    /// producing an infinity.
    pub fn new(lambda0: f64, theta: f64) -> Result<Self, ModelError> {
        if lambda0 == 0.0 || !lambda0.is_finite() {
            return Err(ModelError::BadLambda0(lambda0));
        }
        if !theta.is_finite() {
            return Err(ModelError::BadTheta(theta));
        }
        let denom = 1.0 - lambda0 * theta;
        let lambda_theta = if denom == 0.0 {
            EffectiveTemperature::Special
        } else {
            EffectiveTemperature::Finite(lambda0 / denom)
        };
        Ok(RiskParams {
            theta,
            lambda0,
            lambda_theta,
        })
    }

    /// Risk-neutral parameters (`theta = 0`, so `lambda_theta = lambda0`).
    pub fn risk_neutral(lambda0: f64) -> Result<Self, ModelError> {
        Self::new(lambda0, 0.0)
    }

    /// Builds parameters from a prescribed finite `lambda_theta`,
    /// recovering `theta = 1/lambda0 - 1/lambda_theta`.
    pub fn from_lambda_theta(lambda0: f64, lambda_theta: f64) -> Result<Self, ModelError> {
        if lambda0 == 0.0 || !lambda0.is_finite() {
            return Err(ModelError::BadLambda0(lambda0));
        }
        if lambda_theta == 0.0 || !lambda_theta.is_finite() {
            return Err(ModelError::BadLambda0(lambda_theta));
        }
        let theta = 1.0 / lambda0 - 1.0 / lambda_theta;
        Ok(RiskParams {
            theta,
            lambda0,
            lambda_theta: EffectiveTemperature::Finite(lambda_theta),
        })
    }

    /// The tagged regime `theta = 1/lambda0`.
    pub fn special(lambda0: f64) -> Result<Self, ModelError> {
        if lambda0 == 0.0 || !lambda0.is_finite() {
            return Err(ModelError::BadLambda0(lambda0));
        }
        Ok(RiskParams {
            theta: 1.0 / lambda0,
            lambda0,
            lambda_theta: EffectiveTemperature::Special,
        })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn lambda0(&self) -> f64 {
        self.lambda0
    }

    pub fn lambda_theta(&self) -> EffectiveTemperature {
        self.lambda_theta
    }

    pub fn is_special(&self) -> bool {
        matches!(self.lambda_theta, EffectiveTemperature::Special)
    }

    pub fn finite_lambda_theta(&self) -> Option<f64> {
        match self.lambda_theta {
            EffectiveTemperature::Finite(l) => Some(l),
            EffectiveTemperature::Special => None,
        }
    }
}

/// Builds [`RiskParams`]; rejects `lambda0 = 0`.
pub fn make_risk_params(lambda0: f64, theta: f64) -> Result<RiskParams, ModelError> {
    RiskParams::new(lambda0, theta)
}

/// True iff `sigma sigma^T = lambda0 (R^T R)^-1` elementwise to relative
/// tolerance 1e-10 (scalar case: `sigma^2 = lambda0 / R^2`).
pub fn check_noise_cost_compatibility(
    sigma: &DMatrix<f64>,
    control_penalty: &DMatrix<f64>,
    lambda0: f64,
) -> bool {
    if sigma.nrows() != sigma.ncols() || sigma.shape() != control_penalty.shape() {
        return false;
    }
    let lhs = sigma * sigma.transpose();
    let rtr = control_penalty.transpose() * control_penalty;
    let rhs = match rtr.try_inverse() {
        Some(inv) => inv * lambda0,
        None => return false,
    };
    let scale = lhs
        .iter()
        .chain(rhs.iter())
        .fold(0.0f64, |m, v| m.max(v.abs()));
    lhs.iter()
        .zip(rhs.iter())
        .all(|(a, b)| (a - b).abs() <= 1e-10 * scale)
}

/// Second-order reference value `mean + (theta/2) * variance`, the truncated
/// small-theta expansion of the risk-sensitive value. Test oracle only.
pub fn small_theta_reference(mean: f64, variance: f64, theta: f64) -> f64 {
    debug_assert!(variance >= 0.0);
    mean + 0.5 * theta * variance
}

/// Half-open interval `[lower, upper)` carrying an end-cost level.
/// Negative cost marks a target, positive a threat.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Region {
    lower: f64,
    upper: f64,
    cost: f64,
}

impl Region {
    pub fn new(lower: f64, upper: f64, cost: f64) -> Result<Self, ModelError> {
        if !(lower < upper) {
            return Err(ModelError::EmptyRegion { lower, upper });
        }
        if cost.is_nan() {
            return Err(ModelError::BadRegionCost);
        }
        Ok(Region { lower, upper, cost })
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn cost(&self) -> f64 {
        self.cost
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x < self.upper
    }

    pub fn is_bounded(&self) -> bool {
        self.lower.is_finite() && self.upper.is_finite()
    }

    /// Interval centered at `center` with the given width.
    pub fn centered(center: f64, width: f64, cost: f64) -> Result<Self, ModelError> {
        Region::new(center - 0.5 * width, center + 0.5 * width, cost)
    }
}

/// End-cost `phi` evaluated at the terminal state.
#[derive(Clone, Debug, PartialEq)]
pub enum EndCost {
    /// `(alpha^2 / 2) |x - mu|^2`.
    Quadratic { alpha: f64, mu: f64 },
    /// Finite level inside the region, `+inf` outside.
    SingleRegionFinite { region: Region },
    /// Ordered, contiguous regions covering the whole line.
    Partition { regions: Vec<Region> },
    /// Bounded disjoint regions over a zero-cost background.
    TargetsThreats { regions: Vec<Region> },
}

impl EndCost {
    pub fn quadratic(alpha: f64, mu: f64) -> Result<Self, ModelError> {
        if !(alpha >= 0.0) || !alpha.is_finite() || !mu.is_finite() {
            return Err(ModelError::BadQuadratic);
        }
        Ok(EndCost::Quadratic { alpha, mu })
    }

    pub fn single_region(region: Region) -> Self {
        EndCost::SingleRegionFinite { region }
    }

    /// Validates that the regions are sorted, contiguous and reach from
    /// `-inf` to `+inf`.
    pub fn partition(regions: Vec<Region>) -> Result<Self, ModelError> {
        if regions.is_empty()
            || regions[0].lower != f64::NEG_INFINITY
            || regions[regions.len() - 1].upper != f64::INFINITY
        {
            return Err(ModelError::BadPartition);
        }
        for pair in regions.windows(2) {
            if pair[0].upper != pair[1].lower {
                return Err(ModelError::BadPartition);
            }
        }
        Ok(EndCost::Partition { regions })
    }

    /// Validates bounded, pairwise disjoint regions; sorts them by lower edge.
    pub fn targets_threats(mut regions: Vec<Region>) -> Result<Self, ModelError> {
        if regions.iter().any(|r| !r.is_bounded()) {
            return Err(ModelError::BadTargetsThreats);
        }
        regions.sort_by(|a, b| a.lower.total_cmp(&b.lower));
        for pair in regions.windows(2) {
            if pair[0].upper > pair[1].lower {
                return Err(ModelError::BadTargetsThreats);
            }
        }
        Ok(EndCost::TargetsThreats { regions })
    }

    /// `phi == 0` everywhere.
    pub fn zero() -> Self {
        EndCost::TargetsThreats { regions: vec![] }
    }

    /// Re-expresses a targets/threats layout as an explicit partition with
    /// zero-cost background pieces. Returns `None` for other variants.
    pub fn to_partition(&self) -> Option<EndCost> {
        let EndCost::TargetsThreats { regions } = self else {
            return None;
        };
        let mut full = Vec::with_capacity(2 * regions.len() + 1);
        let mut edge = f64::NEG_INFINITY;
        for r in regions {
            if edge < r.lower {
                full.push(Region {
                    lower: edge,
                    upper: r.lower,
                    cost: 0.0,
                });
            }
            full.push(*r);
            edge = r.upper;
        }
        full.push(Region {
            lower: edge,
            upper: f64::INFINITY,
            cost: 0.0,
        });
        Some(EndCost::Partition { regions: full })
    }

    /// End cost at a scalar terminal state.
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            EndCost::Quadratic { alpha, mu } => {
                let d = x - mu;
                0.5 * alpha * alpha * d * d
            }
            EndCost::SingleRegionFinite { region } => {
                if region.contains(x) {
                    region.cost
                } else {
                    f64::INFINITY
                }
            }
            EndCost::Partition { regions } => regions
                .iter()
                .find(|r| r.contains(x))
                .map(|r| r.cost)
                .unwrap_or(f64::INFINITY),
            EndCost::TargetsThreats { regions } => regions
                .iter()
                .find(|r| r.contains(x))
                .map(|r| r.cost)
                .unwrap_or(0.0),
        }
    }

    /// End cost at a terminal state vector. The quadratic variant sums the
    /// squared distance over coordinates; the region variants read the first
    /// coordinate (the closed-form theory is one-dimensional).
    pub fn eval_state(&self, x: &DVector<f64>) -> f64 {
        match self {
            EndCost::Quadratic { alpha, mu } => {
                let d2: f64 = x.iter().map(|xi| (xi - mu) * (xi - mu)).sum();
                0.5 * alpha * alpha * d2
            }
            _ => self.eval(x[0]),
        }
    }

    pub fn regions(&self) -> &[Region] {
        match self {
            EndCost::SingleRegionFinite { region } => std::slice::from_ref(region),
            EndCost::Partition { regions } | EndCost::TargetsThreats { regions } => regions,
            EndCost::Quadratic { .. } => &[],
        }
    }
}

pub type StateFn = Arc<dyn Fn(f64, &DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type ScalarFn = Arc<dyn Fn(f64, &DVector<f64>) -> f64 + Send + Sync>;
pub type GainFn = Arc<dyn Fn(f64, &DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// Autonomous drift `b(t, x)`.
#[derive(Clone)]
pub enum Drift {
    Zero,
    Fn(StateFn),
}

/// Control/noise gain `B(t, x)`, a full-rank `d x k` matrix.
#[derive(Clone)]
pub enum Gain {
    Identity,
    Constant(DMatrix<f64>),
    Fn(GainFn),
}

/// Path-cost rate `V(t, x)`.
#[derive(Clone)]
pub enum PathCost {
    Zero,
    Fn(ScalarFn),
}

impl PathCost {
    pub fn eval(&self, t: f64, x: &DVector<f64>) -> f64 {
        match self {
            PathCost::Zero => 0.0,
            PathCost::Fn(f) => f(t, x),
        }
    }
}

/// Immutable description of one stochastic control problem.
#[derive(Clone)]
pub struct ControlProblem {
    drift: Drift,
    gain: Gain,
    sigma: DMatrix<f64>,
    control_penalty: DMatrix<f64>,
    path_cost: PathCost,
    end_cost: EndCost,
    horizon: f64,
    state_dim: usize,
    control_dim: usize,
}

fn full_rank(m: &DMatrix<f64>) -> bool {
    let scale = m.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    scale > 0.0 && m.rank(1e-12 * scale) == m.nrows().min(m.ncols())
}

impl ControlProblem {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        state_dim: usize,
        control_dim: usize,
        drift: Drift,
        gain: Gain,
        sigma: DMatrix<f64>,
        control_penalty: DMatrix<f64>,
        path_cost: PathCost,
        end_cost: EndCost,
        horizon: f64,
    ) -> Result<Self, ModelError> {
        if control_dim == 0 || state_dim < control_dim {
            return Err(ModelError::BadDimensions {
                d: state_dim,
                k: control_dim,
            });
        }
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(ModelError::BadHorizon(horizon));
        }
        // sigma = 0 is permitted as a degenerate deterministic test mode;
        // the path-integral theory itself assumes full rank.
        if sigma.shape() != (control_dim, control_dim) || sigma.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::BadMatrix {
                name: "sigma",
                rows: control_dim,
                cols: control_dim,
            });
        }
        if control_penalty.shape() != (control_dim, control_dim) || !full_rank(&control_penalty) {
            return Err(ModelError::BadMatrix {
                name: "control penalty",
                rows: control_dim,
                cols: control_dim,
            });
        }
        match &gain {
            Gain::Identity => {
                if state_dim != control_dim {
                    return Err(ModelError::BadDimensions {
                        d: state_dim,
                        k: control_dim,
                    });
                }
            }
            Gain::Constant(b) => {
                if b.shape() != (state_dim, control_dim) || !full_rank(b) {
                    return Err(ModelError::BadMatrix {
                        name: "gain",
                        rows: state_dim,
                        cols: control_dim,
                    });
                }
            }
            Gain::Fn(_) => {}
        }
        Ok(ControlProblem {
            drift,
            gain,
            sigma,
            control_penalty,
            path_cost,
            end_cost,
            horizon,
            state_dim,
            control_dim,
        })
    }

    /// One-dimensional problem with zero drift, identity gain and zero path
    /// cost: the setting of every closed-form controller in this crate.
    pub fn scalar(
        sigma: f64,
        control_penalty: f64,
        end_cost: EndCost,
        horizon: f64,
    ) -> Result<Self, ModelError> {
        Self::new(
            1,
            1,
            Drift::Zero,
            Gain::Identity,
            DMatrix::from_element(1, 1, sigma),
            DMatrix::from_element(1, 1, control_penalty),
            PathCost::Zero,
            end_cost,
            horizon,
        )
    }

    pub fn drift(&self) -> &Drift {
        &self.drift
    }

    pub fn gain(&self) -> &Gain {
        &self.gain
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn control_penalty(&self) -> &DMatrix<f64> {
        &self.control_penalty
    }

    pub fn path_cost(&self) -> &PathCost {
        &self.path_cost
    }

    pub fn end_cost(&self) -> &EndCost {
        &self.end_cost
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn control_dim(&self) -> usize {
        self.control_dim
    }

    /// True iff the problem's noise and control penalty satisfy the
    /// compatibility condition for the given `lambda0`.
    pub fn compatible_with(&self, lambda0: f64) -> bool {
        check_noise_cost_compatibility(&self.sigma, &self.control_penalty, lambda0)
    }
}
