//! Euler-Maruyama simulation of the controlled SDE with cost accumulation
//! and seed-deterministic batched rollouts.
//!
//! The explicit scheme evaluates drift, control and path cost at the left
//! endpoint of each step:
//!
//! ```text
//! X_{n+1} = X_n + b(t_n, X_n) dt + B(t_n, X_n) (u_n dt + sigma dW_n),
//! dW_n ~ Normal(0, dt I_k)
//! ```
//!
//! The time grid is uniform except for a truncated last step so that it ends
//! exactly on the horizon, where the end cost is evaluated.
//!
//! Every sample draws its noise from a counter-based stream `(seed, index)`,
//! so batches are reproducible for any worker count.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::model::{ControlProblem, Drift, Gain};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("state became non-finite at step {step} (t = {time})")]
    NonFiniteState { step: usize, time: f64 },
    #[error("step size must satisfy 0 < dt <= horizon - t0, got dt = {dt}, span = {span}")]
    InvalidStep { dt: f64, span: f64 },
    #[error("initial state has dimension {got}, problem expects {expected}")]
    DimensionMismatch { got: usize, expected: usize },
    #[error("policy failed at step {step}: {message}")]
    PolicyFailure { step: usize, message: String },
    #[error("sample {sample}: {source}")]
    InSample {
        sample: usize,
        #[source]
        source: Box<SimError>,
    },
}

impl SimError {
    fn in_sample(self, sample: usize) -> SimError {
        SimError::InSample {
            sample,
            source: Box::new(self),
        }
    }
}

#[derive(Debug, Error, Clone)]
#[error("{message}")]
pub struct PolicyError {
    pub message: String,
}

impl PolicyError {
    pub fn new(message: impl Into<String>) -> Self {
        PolicyError {
            message: message.into(),
        }
    }
}

/// State-feedback control law `u(t, x)`.
pub trait Policy: Send + Sync {
    fn control_into(&self, t: f64, x: &DVector<f64>, u: &mut DVector<f64>)
        -> Result<(), PolicyError>;

    fn control(&self, t: f64, x: &DVector<f64>, dim: usize) -> Result<DVector<f64>, PolicyError> {
        let mut u = DVector::zeros(dim);
        self.control_into(t, x, &mut u)?;
        Ok(u)
    }
}

/// `u == 0`.
pub struct ZeroPolicy;

impl Policy for ZeroPolicy {
    fn control_into(&self, _t: f64, _x: &DVector<f64>, u: &mut DVector<f64>)
        -> Result<(), PolicyError> {
        u.fill(0.0);
        Ok(())
    }
}

/// A fixed control vector, mostly for tests.
pub struct ConstantPolicy(pub DVector<f64>);

impl Policy for ConstantPolicy {
    fn control_into(&self, _t: f64, _x: &DVector<f64>, u: &mut DVector<f64>)
        -> Result<(), PolicyError> {
        u.copy_from(&self.0);
        Ok(())
    }
}

/// Wraps a closure as a policy.
pub struct FnPolicy<F>(pub F);

impl<F> Policy for FnPolicy<F>
where
    F: Fn(f64, &DVector<f64>) -> DVector<f64> + Send + Sync,
{
    fn control_into(&self, t: f64, x: &DVector<f64>, u: &mut DVector<f64>)
        -> Result<(), PolicyError> {
        u.copy_from(&(self.0)(t, x));
        Ok(())
    }
}

/// Counter-based noise stream: identical `(seed, stream)` always reproduces
/// the identical increment sequence, independent of batch size or schedule.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngStream {
    seed: u64,
    stream: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        RngStream { seed, stream }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub(crate) fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

/// Cost decomposition of one trajectory. `total` is the exact sum of the
/// stored parts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CostParts {
    pub control_cost: f64,
    pub path_cost: f64,
    pub end_cost: f64,
}

impl CostParts {
    pub fn total(&self) -> f64 {
        self.control_cost + self.path_cost + self.end_cost
    }
}

/// One simulated path: uniform time grid (truncated last step), states,
/// applied controls, the recorded `sigma dW` increments and the cost parts.
#[derive(Clone, Debug)]
pub struct Trajectory {
    times: Vec<f64>,
    states: Vec<DVector<f64>>,
    controls: Vec<DVector<f64>>,
    noise_increments: Vec<DVector<f64>>,
    cost_parts: CostParts,
}

impl Trajectory {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[DVector<f64>] {
        &self.states
    }

    pub fn controls(&self) -> &[DVector<f64>] {
        &self.controls
    }

    /// Per-step `sigma dW` (a `k`-vector per step).
    pub fn noise_increments(&self) -> &[DVector<f64>] {
        &self.noise_increments
    }

    pub fn cost_parts(&self) -> CostParts {
        self.cost_parts
    }

    pub fn total_cost(&self) -> f64 {
        self.cost_parts.total()
    }

    pub fn terminal_state(&self) -> &DVector<f64> {
        self.states.last().expect("trajectory has states")
    }

    pub fn n_steps(&self) -> usize {
        self.times.len() - 1
    }

    /// Dumps `t, x_1..x_d, u_1..u_k` rows; the terminal row has empty
    /// control cells.
    pub fn write_csv<W: std::io::Write>(&self, w: &mut W) -> std::io::Result<()> {
        let d = self.states[0].len();
        let k = if self.controls.is_empty() {
            0
        } else {
            self.controls[0].len()
        };
        write!(w, "t")?;
        for j in 1..=d {
            write!(w, ",x_{j}")?;
        }
        for j in 1..=k {
            write!(w, ",u_{j}")?;
        }
        writeln!(w)?;
        for (i, t) in self.times.iter().enumerate() {
            write!(w, "{}", fmt_float(*t))?;
            for v in self.states[i].iter() {
                write!(w, ",{}", fmt_float(*v))?;
            }
            if i < self.controls.len() {
                for v in self.controls[i].iter() {
                    write!(w, ",{}", fmt_float(*v))?;
                }
            } else {
                for _ in 0..k {
                    write!(w, ",")?;
                }
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// 17-significant-digit float formatting shared with the CLI emitters.
pub fn fmt_float(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else if v == f64::INFINITY {
        "inf".to_string()
    } else if v == f64::NEG_INFINITY {
        "-inf".to_string()
    } else {
        format!("{v:.16e}")
    }
}

/// Grid `t0, t0 + dt, ..., horizon`; the last step is truncated so the grid
/// ends exactly on the horizon.
fn time_grid(t0: f64, horizon: f64, dt: f64) -> Result<Vec<f64>, SimError> {
    let span = horizon - t0;
    if !(dt > 0.0) || dt > span || !span.is_finite() {
        return Err(SimError::InvalidStep { dt, span });
    }
    let n_steps = ((span / dt) - 1e-9).ceil().max(1.0) as usize;
    let mut times = Vec::with_capacity(n_steps + 1);
    for i in 0..n_steps {
        times.push(t0 + i as f64 * dt);
    }
    times.push(horizon);
    Ok(times)
}

struct StepWorkspace {
    control: DVector<f64>,
    noise: DVector<f64>,
    sig_noise: DVector<f64>,
    incr: DVector<f64>,
    gained: DVector<f64>,
    penalized: DVector<f64>,
}

impl StepWorkspace {
    fn new(d: usize, k: usize) -> Self {
        StepWorkspace {
            control: DVector::zeros(k),
            noise: DVector::zeros(k),
            sig_noise: DVector::zeros(k),
            incr: DVector::zeros(k),
            gained: DVector::zeros(d),
            penalized: DVector::zeros(k),
        }
    }
}

/// Applies one explicit step in place. `sig_noise` must already hold
/// `sigma dW`; `ws.incr` and `ws.gained` are scratch. Drift is evaluated at
/// the pre-update state.
#[allow(clippy::too_many_arguments)]
fn apply_step(
    problem: &ControlProblem,
    t: f64,
    dt: f64,
    x: &mut DVector<f64>,
    u: Option<&DVector<f64>>,
    sig_noise: &DVector<f64>,
    incr: &mut DVector<f64>,
    gained: &mut DVector<f64>,
) {
    let drift_term = match problem.drift() {
        Drift::Zero => None,
        Drift::Fn(f) => Some(f(t, x) * dt),
    };
    match u {
        Some(u) => {
            incr.copy_from(u);
            *incr *= dt;
            *incr += sig_noise;
        }
        None => incr.copy_from(sig_noise),
    }
    match problem.gain() {
        Gain::Identity => *x += &*incr,
        Gain::Constant(b) => {
            b.mul_to(incr, gained);
            *x += &*gained;
        }
        Gain::Fn(f) => {
            let b = f(t, x);
            b.mul_to(incr, gained);
            *x += &*gained;
        }
    }
    if let Some(d) = drift_term {
        *x += d;
    }
}

/// Recomputes `X_{n+1}` from `(t_n, dt_n, X_n, u_n, sigma dW_n)` with exactly
/// the arithmetic the simulator uses; replaying a trajectory's stored noise
/// reproduces its states bit for bit.
pub fn step_state(
    problem: &ControlProblem,
    t: f64,
    dt: f64,
    x: &DVector<f64>,
    u: &DVector<f64>,
    sig_noise: &DVector<f64>,
) -> DVector<f64> {
    let mut next = x.clone();
    let mut incr = DVector::zeros(problem.control_dim());
    let mut gained = DVector::zeros(problem.state_dim());
    apply_step(problem, t, dt, &mut next, Some(u), sig_noise, &mut incr, &mut gained);
    next
}

fn draw_sig_noise(
    problem: &ControlProblem,
    rng: &mut ChaCha8Rng,
    dt: f64,
    ws: &mut StepWorkspace,
) {
    let sqrt_dt = dt.sqrt();
    for z in ws.noise.iter_mut() {
        let n: f64 = rng.sample(StandardNormal);
        *z = sqrt_dt * n;
    }
    problem.sigma().mul_to(&ws.noise, &mut ws.sig_noise);
}

/// Simulates one controlled trajectory from `(t0, x0)` to the horizon.
pub fn rollout(
    problem: &ControlProblem,
    policy: &dyn Policy,
    x0: &DVector<f64>,
    t0: f64,
    dt: f64,
    stream: RngStream,
) -> Result<Trajectory, SimError> {
    let d = problem.state_dim();
    let k = problem.control_dim();
    if x0.len() != d {
        return Err(SimError::DimensionMismatch {
            got: x0.len(),
            expected: d,
        });
    }
    let times = time_grid(t0, problem.horizon(), dt)?;
    let n = times.len() - 1;
    let mut rng = stream.rng();
    let mut ws = StepWorkspace::new(d, k);

    let mut states = Vec::with_capacity(n + 1);
    let mut controls = Vec::with_capacity(n);
    let mut noise_increments = Vec::with_capacity(n);
    let mut x = x0.clone();
    states.push(x.clone());

    let mut control_cost = 0.0;
    let mut path_cost = 0.0;
    let r = problem.control_penalty();

    for i in 0..n {
        let t = times[i];
        let step = times[i + 1] - times[i];
        policy
            .control_into(t, &x, &mut ws.control)
            .map_err(|e| SimError::PolicyFailure {
                step: i,
                message: e.message,
            })?;
        draw_sig_noise(problem, &mut rng, step, &mut ws);

        r.mul_to(&ws.control, &mut ws.penalized);
        control_cost += 0.5 * ws.penalized.norm_squared() * step;
        path_cost += problem.path_cost().eval(t, &x) * step;

        controls.push(ws.control.clone());
        noise_increments.push(ws.sig_noise.clone());

        let (control, sig_noise) = (&ws.control, &ws.sig_noise);
        apply_step(
            problem,
            t,
            step,
            &mut x,
            Some(control),
            sig_noise,
            &mut ws.incr,
            &mut ws.gained,
        );
        if !x.iter().all(|v| v.is_finite()) {
            return Err(SimError::NonFiniteState {
                step: i,
                time: times[i + 1],
            });
        }
        states.push(x.clone());
    }

    let end_cost = problem.end_cost().eval_state(&x);
    Ok(Trajectory {
        times,
        states,
        controls,
        noise_increments,
        cost_parts: CostParts {
            control_cost,
            path_cost,
            end_cost,
        },
    })
}

/// Terminal state and accumulated path cost of one uncontrolled path.
pub struct TerminalSample {
    pub state: DVector<f64>,
    pub path_cost: f64,
}

/// Simulates the zero-control dynamics without recording the path; the
/// sampling backbone of the path-integral estimators.
pub fn uncontrolled_terminal(
    problem: &ControlProblem,
    x0: &DVector<f64>,
    t0: f64,
    dt: f64,
    stream: RngStream,
) -> Result<TerminalSample, SimError> {
    let d = problem.state_dim();
    if x0.len() != d {
        return Err(SimError::DimensionMismatch {
            got: x0.len(),
            expected: d,
        });
    }
    let times = time_grid(t0, problem.horizon(), dt)?;
    let n = times.len() - 1;
    let mut rng = stream.rng();
    let mut ws = StepWorkspace::new(d, problem.control_dim());
    let mut x = x0.clone();
    let mut path_cost = 0.0;
    let accumulate_v = !matches!(problem.path_cost(), crate::model::PathCost::Zero);

    for i in 0..n {
        let t = times[i];
        let step = times[i + 1] - times[i];
        draw_sig_noise(problem, &mut rng, step, &mut ws);
        if accumulate_v {
            path_cost += problem.path_cost().eval(t, &x) * step;
        }
        apply_step(
            problem,
            t,
            step,
            &mut x,
            None,
            &ws.sig_noise,
            &mut ws.incr,
            &mut ws.gained,
        );
        if !x.iter().all(|v| v.is_finite()) {
            return Err(SimError::NonFiniteState {
                step: i,
                time: times[i + 1],
            });
        }
    }
    Ok(TerminalSample {
        state: x,
        path_cost,
    })
}

/// Total cost of a recorded trajectory under the problem's cost structure:
/// `phi(X_T) + sum(0.5 ||R u||^2 + V) dt`. Summation order matches the
/// recorder, so the result equals the stored parts exactly.
pub fn trajectory_cost(trajectory: &Trajectory, problem: &ControlProblem) -> f64 {
    let r = problem.control_penalty();
    let mut control_cost = 0.0;
    let mut path_cost = 0.0;
    for i in 0..trajectory.n_steps() {
        let step = trajectory.times[i + 1] - trajectory.times[i];
        control_cost += 0.5 * (r * &trajectory.controls[i]).norm_squared() * step;
        path_cost += problem
            .path_cost()
            .eval(trajectory.times[i], &trajectory.states[i])
            * step;
    }
    let end_cost = problem.end_cost().eval_state(trajectory.terminal_state());
    control_cost + path_cost + end_cost
}

/// Rolls out `n` trajectories on streams `(seed, 0..n)`. Sample `i` is
/// identical for any worker count and the output preserves index order.
pub fn batch_rollout(
    problem: &ControlProblem,
    policy: &dyn Policy,
    x0: &DVector<f64>,
    t0: f64,
    dt: f64,
    n: usize,
    seed: u64,
) -> Result<Vec<Trajectory>, SimError> {
    (0..n)
        .into_par_iter()
        .map(|i| {
            rollout(problem, policy, x0, t0, dt, RngStream::new(seed, i as u64))
                .map_err(|e| e.in_sample(i))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{EndCost, PathCost, Region};
    use approx::assert_relative_eq;
    use nalgebra::{DMatrix, DVector};

    fn dvec(v: f64) -> DVector<f64> {
        DVector::from_element(1, v)
    }

    fn scalar_problem(sigma: f64, end_cost: EndCost) -> ControlProblem {
        ControlProblem::scalar(sigma, 1.0, end_cost, 1.0).unwrap()
    }

    #[test]
    fn zero_dynamics_keeps_state_constant() {
        // degenerate test mode: b = 0, sigma = 0, u = 0
        let problem = ControlProblem::scalar(0.0, 1.0, EndCost::zero(), 1.0).unwrap();
        let traj = rollout(
            &problem,
            &ZeroPolicy,
            &dvec(3.0),
            0.0,
            0.1,
            RngStream::new(0, 0),
        )
        .unwrap();
        for s in traj.states() {
            assert_eq!(s[0], 3.0);
        }
        // u = 0, V = 0, phi = 0
        assert_eq!(traj.total_cost(), 0.0);
        assert_eq!(trajectory_cost(&traj, &problem), 0.0);
    }

    #[test]
    fn trajectory_csv_dump_layout() {
        let problem = scalar_problem(1.0, EndCost::zero());
        let traj = rollout(
            &problem,
            &ConstantPolicy(dvec(0.25)),
            &dvec(0.0),
            0.0,
            0.25,
            RngStream::new(8, 0),
        )
        .unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,x_1,u_1");
        assert_eq!(lines.len(), 1 + traj.times().len());
        // interior rows carry the control, the terminal row does not
        assert_eq!(lines[1].split(',').count(), 3);
        assert!(lines.last().unwrap().ends_with(','));
    }

    #[test]
    fn rollout_records_consistent_arrays() {
        let problem = scalar_problem(1.0, EndCost::zero());
        let traj = rollout(
            &problem,
            &ZeroPolicy,
            &dvec(0.0),
            0.0,
            0.3,
            RngStream::new(7, 0),
        )
        .unwrap();
        // span 1.0, dt 0.3: steps at 0, 0.3, 0.6, 0.9, then truncated to 1.0
        assert_eq!(traj.times().len(), 5);
        assert_eq!(traj.times()[0], 0.0);
        assert_eq!(*traj.times().last().unwrap(), 1.0);
        assert_eq!(traj.states().len(), 5);
        assert_eq!(traj.controls().len(), 4);
        assert_eq!(traj.noise_increments().len(), 4);
        for w in traj.times().windows(2) {
            assert!(w[1] > w[0]);
        }
    }

    #[test]
    fn identical_streams_are_bitwise_identical() {
        let problem = scalar_problem(1.0, EndCost::zero());
        let a = rollout(
            &problem,
            &ZeroPolicy,
            &dvec(0.5),
            0.0,
            1e-2,
            RngStream::new(42, 3),
        )
        .unwrap();
        let b = rollout(
            &problem,
            &ZeroPolicy,
            &dvec(0.5),
            0.0,
            1e-2,
            RngStream::new(42, 3),
        )
        .unwrap();
        for (xa, xb) in a.states().iter().zip(b.states()) {
            assert_eq!(xa[0].to_bits(), xb[0].to_bits());
        }
    }

    #[test]
    fn uncontrolled_terminal_matches_rollout_distributionally() {
        // same stream => identical noise => identical terminal state
        let problem = scalar_problem(1.0, EndCost::zero());
        let stream = RngStream::new(9, 14);
        let traj = rollout(&problem, &ZeroPolicy, &dvec(1.0), 0.0, 1e-2, stream).unwrap();
        let term = uncontrolled_terminal(&problem, &dvec(1.0), 0.0, 1e-2, stream).unwrap();
        assert_eq!(
            traj.terminal_state()[0].to_bits(),
            term.state[0].to_bits()
        );
    }

    #[test]
    fn gaussian_transition_statistics() {
        let problem = scalar_problem(1.0, EndCost::zero());
        let n = 100_000;
        let x0 = 2.0;
        let trajs = batch_rollout(&problem, &ZeroPolicy, &dvec(x0), 0.0, 1e-2, n, 123).unwrap();
        let finals: Vec<f64> = trajs.iter().map(|t| t.terminal_state()[0]).collect();
        let mean = finals.iter().sum::<f64>() / n as f64;
        let var = finals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
        assert!(
            (mean - x0).abs() < 3.0 / (n as f64).sqrt(),
            "mean {mean} vs {x0}"
        );
        assert!((var - 1.0).abs() < 0.05, "variance {var} vs 1.0");
    }

    #[test]
    fn replay_reproduces_states_exactly() {
        let drift: crate::model::StateFn =
            std::sync::Arc::new(|_t: f64, x: &DVector<f64>| x * -0.5);
        let problem = ControlProblem::new(
            1,
            1,
            crate::model::Drift::Fn(drift),
            crate::model::Gain::Identity,
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            PathCost::Zero,
            EndCost::zero(),
            1.0,
        )
        .unwrap();
        let policy = FnPolicy(|_t: f64, x: &DVector<f64>| x * -1.0);
        let traj = rollout(
            &problem,
            &policy,
            &dvec(1.5),
            0.0,
            0.05,
            RngStream::new(5, 1),
        )
        .unwrap();
        let mut x = traj.states()[0].clone();
        for i in 0..traj.n_steps() {
            let step = traj.times()[i + 1] - traj.times()[i];
            x = step_state(
                &problem,
                traj.times()[i],
                step,
                &x,
                &traj.controls()[i],
                &traj.noise_increments()[i],
            );
            assert_eq!(x[0].to_bits(), traj.states()[i + 1][0].to_bits());
        }
    }

    #[test]
    fn cost_parts_sum_matches_trajectory_cost_exactly() {
        let region = Region::new(-1.0, 1.0, 2.0).unwrap();
        let v: crate::model::ScalarFn = std::sync::Arc::new(|t: f64, x: &DVector<f64>| t + x[0]);
        let problem = ControlProblem::new(
            1,
            1,
            crate::model::Drift::Zero,
            crate::model::Gain::Identity,
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 2.0),
            PathCost::Fn(v),
            EndCost::single_region(region),
            1.0,
        )
        .unwrap();
        let policy = ConstantPolicy(dvec(0.7));
        let traj = rollout(
            &problem,
            &policy,
            &dvec(0.0),
            0.0,
            0.01,
            RngStream::new(11, 0),
        )
        .unwrap();
        let recomputed = trajectory_cost(&traj, &problem);
        assert_eq!(recomputed.to_bits(), traj.total_cost().to_bits());
    }

    #[test]
    fn constant_control_cost_hand_value() {
        let problem = scalar_problem(1.0, EndCost::zero());
        let policy = ConstantPolicy(dvec(1.0));
        let traj = rollout(
            &problem,
            &policy,
            &dvec(0.0),
            0.0,
            1e-3,
            RngStream::new(1, 0),
        )
        .unwrap();
        // 0.5 * |R u|^2 * (T - t0) = 0.5
        assert_relative_eq!(traj.cost_parts().control_cost, 0.5, max_relative = 1e-12);
        assert_eq!(traj.cost_parts().path_cost, 0.0);
    }

    #[test]
    fn infinite_end_cost_outside_region() {
        let region = Region::new(-0.1, 0.1, 1.0).unwrap();
        let problem = scalar_problem(1.0, EndCost::single_region(region));
        // start far away with tiny noise so the terminal state stays far out
        let traj = rollout(
            &problem,
            &ZeroPolicy,
            &dvec(50.0),
            0.0,
            0.05,
            RngStream::new(3, 0),
        )
        .unwrap();
        assert_eq!(traj.cost_parts().end_cost, f64::INFINITY);
        assert_eq!(traj.total_cost(), f64::INFINITY);
    }

    #[test]
    fn batch_first_sample_equals_stream_zero() {
        let problem = scalar_problem(1.0, EndCost::zero());
        let batch =
            batch_rollout(&problem, &ZeroPolicy, &dvec(0.0), 0.0, 0.01, 1, 77).unwrap();
        let single = rollout(
            &problem,
            &ZeroPolicy,
            &dvec(0.0),
            0.0,
            0.01,
            RngStream::new(77, 0),
        )
        .unwrap();
        assert_eq!(
            batch[0].terminal_state()[0].to_bits(),
            single.terminal_state()[0].to_bits()
        );
    }

    #[test]
    fn batch_costs_identical_across_worker_counts() {
        let problem = scalar_problem(1.0, EndCost::zero());
        let run = |threads: usize| -> Vec<f64> {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| {
                batch_rollout(&problem, &ZeroPolicy, &dvec(0.0), 0.0, 0.01, 1000, 42)
                    .unwrap()
                    .iter()
                    .map(|t| t.terminal_state()[0])
                    .collect()
            })
        };
        let a = run(1);
        let b = run(4);
        let c = run(8);
        for ((x, y), z) in a.iter().zip(&b).zip(&c) {
            assert_eq!(x.to_bits(), y.to_bits());
            assert_eq!(x.to_bits(), z.to_bits());
        }
    }

    #[test]
    fn halving_dt_shifts_mean_less_than_monte_carlo_error() {
        let problem = scalar_problem(1.0, EndCost::zero());
        let n = 10_000;
        let mean_at = |dt: f64| {
            let trajs =
                batch_rollout(&problem, &ZeroPolicy, &dvec(0.0), 0.0, dt, n, 31).unwrap();
            trajs.iter().map(|t| t.terminal_state()[0]).sum::<f64>() / n as f64
        };
        let m1 = mean_at(0.02);
        let m2 = mean_at(0.01);
        let mc_std_err = 1.0 / (n as f64).sqrt();
        assert!((m1 - m2).abs() < mc_std_err, "{m1} vs {m2}");
    }

    #[test]
    fn multi_dimensional_rollout_shapes() {
        let gain = DMatrix::from_column_slice(3, 2, &[1.0, 0.0, 0.5, 0.0, 1.0, 0.5]);
        let problem = ControlProblem::new(
            3,
            2,
            crate::model::Drift::Zero,
            crate::model::Gain::Constant(gain),
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            PathCost::Zero,
            EndCost::zero(),
            0.5,
        )
        .unwrap();
        let traj = rollout(
            &problem,
            &ZeroPolicy,
            &DVector::zeros(3),
            0.0,
            0.05,
            RngStream::new(2, 0),
        )
        .unwrap();
        assert_eq!(traj.states()[0].len(), 3);
        assert_eq!(traj.controls()[0].len(), 2);
        assert_eq!(traj.noise_increments()[0].len(), 2);
    }

    #[test]
    fn invalid_step_rejected() {
        let problem = scalar_problem(1.0, EndCost::zero());
        assert!(matches!(
            rollout(&problem, &ZeroPolicy, &dvec(0.0), 0.0, 0.0, RngStream::new(0, 0)),
            Err(SimError::InvalidStep { .. })
        ));
        assert!(matches!(
            rollout(&problem, &ZeroPolicy, &dvec(0.0), 0.5, 0.6, RngStream::new(0, 0)),
            Err(SimError::InvalidStep { .. })
        ));
    }

    #[test]
    fn non_finite_state_carries_step_index() {
        let drift: crate::model::StateFn =
            std::sync::Arc::new(|_t: f64, x: &DVector<f64>| x * 1e200);
        let problem = ControlProblem::new(
            1,
            1,
            crate::model::Drift::Fn(drift),
            crate::model::Gain::Identity,
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            PathCost::Zero,
            EndCost::zero(),
            1.0,
        )
        .unwrap();
        let err = rollout(
            &problem,
            &ZeroPolicy,
            &dvec(1.0),
            0.0,
            0.1,
            RngStream::new(0, 0),
        )
        .unwrap_err();
        match err {
            SimError::NonFiniteState { step, .. } => assert!(step <= 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn batch_error_carries_sample_index() {
        let drift: crate::model::StateFn =
            std::sync::Arc::new(|_t: f64, x: &DVector<f64>| x * 1e200);
        let problem = ControlProblem::new(
            1,
            1,
            crate::model::Drift::Fn(drift),
            crate::model::Gain::Identity,
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            PathCost::Zero,
            EndCost::zero(),
            1.0,
        )
        .unwrap();
        let err = batch_rollout(&problem, &ZeroPolicy, &dvec(1.0), 0.0, 0.1, 4, 0).unwrap_err();
        assert!(matches!(err, SimError::InSample { .. }));
    }
}
