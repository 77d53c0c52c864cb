//! Empirical risk-sensitive evaluation of cost samples.
//!
//! The theta-indexed value of a sample is the mean at `theta = 0` and
//! `(1/theta) log (1/n sum exp(theta C_i))` otherwise. It is nondecreasing in
//! theta, strictly so for non-constant samples, and tends to the extremal
//! costs as `theta -> +-inf`. Infinite costs follow the exact limit
//! semantics: under `theta > 0` one infinite entry forces `+inf`, under
//! `theta < 0` infinite entries carry zero weight (but still count toward
//! `n`), and at `theta = 0` the mean is `+inf`.

use thiserror::Error;

use crate::math::quantile_type7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RiskError {
    #[error("cost sample must be nonempty")]
    EmptySample,
    #[error("cost entries must be finite or +inf, got {0}")]
    InvalidCost(f64),
    #[error("theta grid must be strictly increasing with at least 3 points")]
    InvalidGrid,
}

/// A population of total trajectory costs with seed provenance.
#[derive(Clone, Debug)]
pub struct CostSample {
    costs: Vec<f64>,
    seed: u64,
}

impl CostSample {
    /// Entries must be finite or `+inf`; NaN and `-inf` are rejected.
    pub fn new(costs: Vec<f64>, seed: u64) -> Result<Self, RiskError> {
        if costs.is_empty() {
            return Err(RiskError::EmptySample);
        }
        if let Some(bad) = costs
            .iter()
            .find(|c| c.is_nan() || **c == f64::NEG_INFINITY)
        {
            return Err(RiskError::InvalidCost(*bad));
        }
        Ok(CostSample { costs, seed })
    }

    pub fn costs(&self) -> &[f64] {
        &self.costs
    }

    pub fn n(&self) -> usize {
        self.costs.len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_infinite(&self) -> usize {
        self.costs.iter().filter(|c| c.is_infinite()).count()
    }
}

/// The empirical risk-sensitive value at `theta`.
///
/// Computed as `c_max + ln_1p(sum(exp_m1(theta (C_i - c_max))) / n) / theta`,
/// which keeps full precision down to `theta ~ 1e-300` and recovers the mean
/// continuously at `theta = 0`.
pub fn empirical_value(sample: &CostSample, theta: f64) -> f64 {
    let n = sample.n() as f64;
    let n_inf = sample.n_infinite();
    if theta == 0.0 {
        if n_inf > 0 {
            return f64::INFINITY;
        }
        return sample.costs.iter().sum::<f64>() / n;
    }
    if n_inf > 0 && theta > 0.0 {
        return f64::INFINITY;
    }
    if n_inf == sample.n() {
        return f64::INFINITY;
    }
    // anchor at the maximizer of theta * C so every shifted exponent is <= 0
    let finite = sample.costs.iter().copied().filter(|c| c.is_finite());
    let anchor = if theta > 0.0 {
        finite.fold(f64::NEG_INFINITY, f64::max)
    } else {
        finite.fold(f64::INFINITY, f64::min)
    };
    let shifted: f64 = sample
        .costs
        .iter()
        .filter(|c| c.is_finite())
        .map(|c| (theta * (c - anchor)).exp_m1())
        .sum();
    anchor + ((shifted - n_inf as f64) / n).ln_1p() / theta
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MonotonicityVerdict {
    /// Constant sample: the value is flat in theta.
    Constant,
    StrictlyIncreasing,
    /// A margin fell below `-1e-10`.
    Violated { pair_index: usize, margin: f64 },
}

/// Values and consecutive margins of [`empirical_value`] along a theta grid.
#[derive(Clone, Debug)]
pub struct MonotonicityScan {
    pub values: Vec<f64>,
    pub margins: Vec<f64>,
    pub verdict: MonotonicityVerdict,
}

/// Evaluates the value along a strictly increasing grid (at least 3 points)
/// and checks that it is nondecreasing: strictly increasing for non-constant
/// samples, exactly flat for constant ones.
pub fn monotonicity_scan(
    sample: &CostSample,
    theta_grid: &[f64],
) -> Result<MonotonicityScan, RiskError> {
    if theta_grid.len() < 3 || theta_grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(RiskError::InvalidGrid);
    }
    let values: Vec<f64> = theta_grid
        .iter()
        .map(|&th| empirical_value(sample, th))
        .collect();
    let margins: Vec<f64> = values.windows(2).map(|w| w[1] - w[0]).collect();
    let constant_sample = {
        let first = sample.costs[0];
        sample.costs.iter().all(|c| *c == first)
    };
    let verdict = if let Some((i, &m)) = margins
        .iter()
        .enumerate()
        .find(|(_, &m)| m < -1e-10 || m.is_nan())
    {
        MonotonicityVerdict::Violated {
            pair_index: i,
            margin: m,
        }
    } else if constant_sample {
        MonotonicityVerdict::Constant
    } else {
        MonotonicityVerdict::StrictlyIncreasing
    };
    Ok(MonotonicityScan {
        values,
        margins,
        verdict,
    })
}

/// `(min, max)` of the sample: the limits of the value as `theta -> -inf`
/// and `theta -> +inf`.
pub fn extremal_limits(sample: &CostSample) -> (f64, f64) {
    let min = sample.costs.iter().copied().fold(f64::INFINITY, f64::min);
    let max = sample
        .costs
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    (min, max)
}

/// Residual of the second-order expansion, with the scale constant that
/// bounds it.
#[derive(Clone, Copy, Debug)]
pub struct ExpansionCheck {
    /// `|J(theta) - (mean + theta/2 var)|`
    pub residual: f64,
    /// Third absolute central moment, the natural `O(theta^2)` coefficient
    /// scale.
    pub curvature_scale: f64,
}

/// Compares the value against `mean + (theta/2) variance`. Bounded samples
/// and `|theta| <= 0.1` assumed.
pub fn expansion_check(sample: &CostSample, theta: f64) -> ExpansionCheck {
    let n = sample.n() as f64;
    let mean = sample.costs.iter().sum::<f64>() / n;
    let var = sample
        .costs
        .iter()
        .map(|c| (c - mean) * (c - mean))
        .sum::<f64>()
        / n;
    let third_abs = sample
        .costs
        .iter()
        .map(|c| (c - mean).abs().powi(3))
        .sum::<f64>()
        / n;
    let value = empirical_value(sample, theta);
    ExpansionCheck {
        residual: (value - (mean + 0.5 * theta * var)).abs(),
        curvature_scale: third_abs,
    }
}

/// One histogram bin: `[left, right)` except the last, which is closed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HistogramBin {
    pub left: f64,
    pub right: f64,
    pub count: usize,
    /// `log10(count / n)` over the full sample size.
    pub log10_probability: f64,
}

/// Distribution summary of a cost sample.
#[derive(Clone, Debug)]
pub struct CostSummary {
    pub n: usize,
    pub n_infinite: usize,
    pub mean: f64,
    /// Unbiased sample variance.
    pub variance: f64,
    pub median: f64,
    /// `(p, value)` pairs in request order.
    pub quantiles: Vec<(f64, f64)>,
    /// Occupied equal-width bins over the finite entries; empty bins are
    /// absent.
    pub histogram: Vec<HistogramBin>,
}

/// Mean, variance, median, requested quantiles and the log-probability
/// histogram (`n_bins` equal-width bins over the finite range). Intended for
/// samples of at least 10 entries.
pub fn cost_statistics(sample: &CostSample, quantiles: &[f64], n_bins: usize) -> CostSummary {
    let n = sample.n();
    let mut sorted = sample.costs.clone();
    sorted.sort_by(f64::total_cmp);
    let mean = sample.costs.iter().sum::<f64>() / n as f64;
    let variance = if n > 1 {
        sample
            .costs
            .iter()
            .map(|c| (c - mean) * (c - mean))
            .sum::<f64>()
            / (n - 1) as f64
    } else {
        0.0
    };
    let median = quantile_type7(&sorted, 0.5);
    let quantiles: Vec<(f64, f64)> = quantiles
        .iter()
        .map(|&p| (p, quantile_type7(&sorted, p)))
        .collect();

    let finite: Vec<f64> = sorted.iter().copied().filter(|c| c.is_finite()).collect();
    let mut histogram = Vec::new();
    if !finite.is_empty() && n_bins > 0 {
        let lo = finite[0];
        let hi = finite[finite.len() - 1];
        if lo == hi {
            histogram.push(HistogramBin {
                left: lo,
                right: hi,
                count: finite.len(),
                log10_probability: (finite.len() as f64 / n as f64).log10(),
            });
        } else {
            let width = (hi - lo) / n_bins as f64;
            let mut counts = vec![0usize; n_bins];
            for &c in &finite {
                let idx = (((c - lo) / width) as usize).min(n_bins - 1);
                counts[idx] += 1;
            }
            for (i, &count) in counts.iter().enumerate() {
                if count == 0 {
                    continue;
                }
                histogram.push(HistogramBin {
                    left: lo + i as f64 * width,
                    right: if i + 1 == n_bins {
                        hi
                    } else {
                        lo + (i + 1) as f64 * width
                    },
                    count,
                    log10_probability: (count as f64 / n as f64).log10(),
                });
            }
        }
    }
    CostSummary {
        n,
        n_infinite: sample.n_infinite(),
        mean,
        variance,
        median,
        quantiles,
        histogram,
    }
}
