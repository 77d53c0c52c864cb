//! Shared numeric kernels: log-domain accumulation, Gaussian tail
//! probabilities and order-statistic quantiles.

use libm::erfc;

pub(crate) const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_7;
const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Max-shifted log of `sum(exp(v))`.
///
/// `-inf` entries contribute nothing; an all-`-inf` slice yields `-inf` and a
/// `+inf` entry yields `+inf`. Terms are summed in sorted order, which makes
/// the result a function of the value multiset alone (mirrored region
/// layouts produce bit-identical partition functions). Meant for short
/// slices.
pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let sum: f64 = sorted.iter().map(|&v| (v - m).exp()).sum();
    m + sum.ln()
}

/// A signed quantity stored as `sign * exp(ln_abs)`.
///
/// `sign` is -1, 0 or +1; zero is represented as `(0, -inf)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct SignedLog {
    pub sign: f64,
    pub ln_abs: f64,
}

impl SignedLog {
    pub const ZERO: SignedLog = SignedLog {
        sign: 0.0,
        ln_abs: f64::NEG_INFINITY,
    };

    pub fn new(sign: f64, ln_abs: f64) -> Self {
        if sign == 0.0 || ln_abs == f64::NEG_INFINITY {
            Self::ZERO
        } else {
            SignedLog { sign, ln_abs }
        }
    }

    pub fn from_value(v: f64) -> Self {
        if v == 0.0 {
            Self::ZERO
        } else {
            SignedLog {
                sign: v.signum(),
                ln_abs: v.abs().ln(),
            }
        }
    }

    pub fn scaled(self, factor: SignedLog) -> Self {
        Self::new(self.sign * factor.sign, self.ln_abs + factor.ln_abs)
    }

    pub fn value(self) -> f64 {
        self.sign * self.ln_abs.exp()
    }
}

/// `log|exp(a) - exp(b)|` with the sign of `exp(a) - exp(b)`.
pub(crate) fn signed_log_diff(a: f64, b: f64) -> SignedLog {
    if a == b {
        return SignedLog::ZERO;
    }
    let (hi, lo, sign) = if a > b { (a, b, 1.0) } else { (b, a, -1.0) };
    if hi == f64::NEG_INFINITY {
        return SignedLog::ZERO;
    }
    // hi + log(1 - exp(lo - hi))
    SignedLog::new(sign, hi + (-(lo - hi).exp()).ln_1p())
}

/// Sum of signed log-domain terms, returned in signed log form.
pub(crate) fn signed_log_sum(terms: &[SignedLog]) -> SignedLog {
    let pos: Vec<f64> = terms
        .iter()
        .filter(|t| t.sign > 0.0)
        .map(|t| t.ln_abs)
        .collect();
    let neg: Vec<f64> = terms
        .iter()
        .filter(|t| t.sign < 0.0)
        .map(|t| t.ln_abs)
        .collect();
    signed_log_diff(log_sum_exp(&pos), log_sum_exp(&neg))
}

/// `sign * log|exp(a) - 1|`: positive branch for a > 0, negative for a < 0.
pub(crate) fn signed_log_exp_m1(a: f64) -> SignedLog {
    if a == 0.0 {
        SignedLog::ZERO
    } else if a > 0.0 {
        // log(e^a - 1) = a + log(1 - e^-a)
        SignedLog::new(1.0, a + (-(-a).exp()).ln_1p())
    } else {
        // |e^a - 1| = 1 - e^a
        SignedLog::new(-1.0, (-a.exp()).ln_1p())
    }
}

/// Standard normal density.
pub(crate) fn norm_pdf(z: f64) -> f64 {
    (-0.5 * z * z - LN_SQRT_2PI).exp()
}

/// Log of the standard normal density; exact in the far tails.
pub(crate) fn norm_logpdf(z: f64) -> f64 {
    if z.is_infinite() {
        return f64::NEG_INFINITY;
    }
    -0.5 * z * z - LN_SQRT_2PI
}

/// Standard normal CDF via the complementary error function.
pub(crate) fn norm_cdf(z: f64) -> f64 {
    0.5 * erfc(-z * FRAC_1_SQRT_2)
}

/// `P(zl < Z <= zu)` for standard normal `Z`.
///
/// Reduced symmetrically through `erfc` so that mirrored intervals
/// `(-zu, -zl)` produce bit-identical results and far tails keep relative
/// accuracy.
pub(crate) fn norm_prob_between(zl: f64, zu: f64) -> f64 {
    debug_assert!(zl <= zu);
    if zl == f64::NEG_INFINITY && zu == f64::INFINITY {
        return 1.0;
    }
    if zl == f64::NEG_INFINITY {
        return norm_cdf(zu);
    }
    if zu == f64::INFINITY {
        return 0.5 * erfc(zl * FRAC_1_SQRT_2);
    }
    let p = if zl + zu >= 0.0 {
        // interval mass sits in the upper tail
        0.5 * (erfc(zl * FRAC_1_SQRT_2) - erfc(zu * FRAC_1_SQRT_2))
    } else {
        0.5 * (erfc(-zu * FRAC_1_SQRT_2) - erfc(-zl * FRAC_1_SQRT_2))
    };
    p.max(0.0)
}

/// Linear interpolation of order statistics (the type-7 convention).
/// `sorted` must be ascending and nonempty, `p` in [0, 1].
pub(crate) fn quantile_type7(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    debug_assert!(n > 0 && (0.0..=1.0).contains(&p));
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo + 1 >= n || frac == 0.0 {
        sorted[lo.min(n - 1)]
    } else {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    }
}
