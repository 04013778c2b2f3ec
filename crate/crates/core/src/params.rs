//! System parameters and the analytic bounds behind them.
//!
//! Everything downstream is phrased in terms of a handful of constants
//! derived from the process count `n` and two slack knobs:
//!
//! - `epsilon`: resilience slack; the adversary corrupts up to
//!   `f = floor((1/3 − ε)·n)` processes.
//! - `d`: sampling slack; committee sizes and committee fault counts are
//!   allowed to deviate from their expectations by a factor of `d`.
//! - `lambda = 8·ln n`: expected committee size. Each process independently
//!   wins a committee seat with probability `λ/n`.
//! - `W = ⌈(2/3 + 3d)·λ⌉`: how many distinct committee members one waits for.
//! - `B = ⌊(1/3 − d)·λ⌋`: the most Byzantine members a committee may hold
//!   (with high probability, and by construction in conditioned runs).
//!
//! The inequalities tying these together are load-bearing: `W > 2B` makes
//! W-quorums majority-honest, `2W − |C| ≥ B+1` makes two W-quorums overlap
//! in a correct process, and `W + (B+1) − |C| ≥ 1` makes any W-quorum hit
//! any (B+1)-sized correct set. `derive_params` rejects any configuration
//! where one of them fails.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Derived system constants for one run configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    /// Process count.
    pub n: u32,
    /// Maximum number of corruptions the adversary may perform.
    pub f: u32,
    /// Resilience slack, in (1/(2 ln n), 1/3).
    pub epsilon: f64,
    /// Sampling slack, in (max{1/λ, 0.0362}, ε/3 − 1/(3λ)).
    pub d: f64,
    /// Expected committee size, 8·ln n. Kept real; only W and B round.
    pub lambda: f64,
    /// Wait threshold: number of distinct senders a step waits for.
    pub w: u32,
    /// Per-committee Byzantine bound.
    pub b: u32,
    /// Lower bound on the shared coin's per-round success rate.
    pub rho: f64,
}

impl SystemParams {
    /// Per-process committee election probability, λ/n.
    pub fn election_probability(&self) -> f64 {
        self.lambda / self.n as f64
    }

    /// Builds params from explicit raw values, skipping every derivation
    /// rule. For hand-traceable tests and experiments only: nothing checks
    /// that the analytic bounds hold for these numbers.
    pub fn explicit(n: u32, f: u32, lambda: f64, w: u32, b: u32, epsilon: f64, d: f64) -> Self {
        SystemParams {
            n,
            f,
            epsilon,
            d,
            lambda,
            w,
            b,
            rho: coin_success_rate(d),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParamError {
    #[error("n = {n} is too small: need n ≥ 2 so that ln n > 0")]
    NTooSmall { n: u32 },
    #[error(
        "epsilon = {epsilon} violates 1/(2 ln n) < epsilon < 1/3: \
         required range is ({lo}, {hi}) at n = {n}"
    )]
    EpsilonOutOfRange { n: u32, epsilon: f64, lo: f64, hi: f64 },
    #[error(
        "d = {d} violates max{{1/lambda, 0.0362}} < d < epsilon/3 − 1/(3 lambda): \
         required range is ({lo}, {hi}) at n = {n}, epsilon = {epsilon}"
    )]
    DOutOfRange { n: u32, epsilon: f64, d: f64, lo: f64, hi: f64 },
}

/// Lower bound on d imposed by the coin analysis: the success-rate formula's
/// numerator is positive from just below this constant onward.
pub const D_LOWER_CONST: f64 = 0.0362;

/// Derives and validates all system constants for `(n, epsilon, d)`.
///
/// Checks run in a fixed order (n, then epsilon, then d) and the first
/// violated constraint is reported with its admissible interval. All
/// comparisons are exact; the quantities involved are well-conditioned, so
/// no tolerance is warranted.
pub fn derive_params(n: u32, epsilon: f64, d: f64) -> Result<SystemParams, ParamError> {
    if n < 2 {
        return Err(ParamError::NTooSmall { n });
    }
    let lambda = 8.0 * (n as f64).ln();

    let eps_lo = 1.0 / (2.0 * (n as f64).ln());
    let eps_hi = 1.0 / 3.0;
    if !(epsilon > eps_lo && epsilon < eps_hi) {
        return Err(ParamError::EpsilonOutOfRange { n, epsilon, lo: eps_lo, hi: eps_hi });
    }

    let d_lo = (1.0 / lambda).max(D_LOWER_CONST);
    let d_hi = epsilon / 3.0 - 1.0 / (3.0 * lambda);
    if !(d > d_lo && d < d_hi) {
        return Err(ParamError::DOutOfRange { n, epsilon, d, lo: d_lo, hi: d_hi });
    }

    let f = ((1.0 / 3.0 - epsilon) * n as f64).floor() as u32;
    let w = ((2.0 / 3.0 + 3.0 * d) * lambda).ceil() as u32;
    let b = ((1.0 / 3.0 - d) * lambda).floor() as u32;
    let rho = coin_success_rate(d);

    let p = SystemParams { n, f, epsilon, d, lambda, w, b, rho };

    // These follow arithmetically from the accepted (n, ε, d) region; they are
    // asserted rather than returned as errors because a failure here would be
    // a bug in the derivation, not a bad input.
    debug_assert!(p.w > 2 * p.b);
    debug_assert!(0.5 * p.w as f64 > (1.0 / 3.0 - d) * lambda);
    debug_assert!((1.0 / 3.0 - d) * lambda >= p.b as f64);
    debug_assert!(rho > 0.0);
    let (s5, s6) = intersection_margins(&p);
    debug_assert!(s5 >= 1.0 && s6 >= 1.0);

    Ok(p)
}

/// The shared coin's success-rate lower bound,
/// ρ(d) = (18d² + 27d − 1) / (3(5+6d)(1−d)(1+9d)).
///
/// Positive exactly when d exceeds the positive root of the numerator,
/// (−27 + √801)/36 ≈ 0.03617; the accepted d range stays above it.
pub fn coin_success_rate(d: f64) -> f64 {
    let numerator = 18.0 * d * d + 27.0 * d - 1.0;
    let denominator = 3.0 * (5.0 + 6.0 * d) * (1.0 - d) * (1.0 + 9.0 * d);
    numerator / denominator
}

/// Lower bound on the number of common coin-committee values,
/// c ≥ d(11−3d)/(1+9d) · λ. A value is "common" when at least B+1 correct
/// second-committee members receive it during the coin's first phase.
pub fn common_value_bound(d: f64, lambda: f64) -> f64 {
    d * (11.0 - 3.0 * d) / (1.0 + 9.0 * d) * lambda
}

/// Quorum-overlap margins, both of which must be ≥ 1 for valid params:
///
/// - `s5 = 2W − (1+d)λ − B`: two W-quorums of one committee share at least
///   B+1 members, hence at least one correct process.
/// - `s6 = W + (B+1) − (1+d)λ`: a W-quorum intersects any B+1 committee
///   members, hence hears any value held by B+1 correct ones.
pub fn intersection_margins(p: &SystemParams) -> (f64, f64) {
    let upper_size = (1.0 + p.d) * p.lambda;
    let s5 = 2.0 * p.w as f64 - upper_size - p.b as f64;
    let s6 = p.w as f64 + (p.b as f64 + 1.0) - upper_size;
    (s5, s6)
}

/// Which binomial tail to sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Tail {
    /// P[X ≤ k]
    Lower,
    /// P[X ≥ k]
    Upper,
}

/// Exact binomial tail probability for X ~ Bin(n, p), by stable summation.
///
/// Terms are evaluated in log space against a precomputed ln-factorial table
/// and summed smallest-first after shifting by the largest exponent, so tails
/// around 1e-12 are still accurate to well under Monte Carlo resolution. This
/// is the ground truth the simulator's committee statistics are checked
/// against.
pub fn binomial_tail_oracle(n: u64, p: f64, k: u64, side: Tail) -> f64 {
    assert!((0.0..=1.0).contains(&p), "p = {p} out of [0,1]");
    assert!(k <= n, "k = {k} exceeds n = {n}");
    if p == 0.0 {
        return match side {
            Tail::Lower => 1.0,
            Tail::Upper => {
                if k == 0 {
                    1.0
                } else {
                    0.0
                }
            }
        };
    }
    if p == 1.0 {
        return match side {
            Tail::Lower => {
                if k == n {
                    1.0
                } else {
                    0.0
                }
            }
            Tail::Upper => 1.0,
        };
    }

    // ln_fact[i] = ln(i!)
    let mut ln_fact = vec![0.0f64; n as usize + 1];
    for i in 1..=n as usize {
        ln_fact[i] = ln_fact[i - 1] + (i as f64).ln();
    }
    let ln_p = p.ln();
    let ln_q = (1.0 - p).ln();
    let ln_pmf = |i: u64| {
        ln_fact[n as usize] - ln_fact[i as usize] - ln_fact[(n - i) as usize]
            + i as f64 * ln_p
            + (n - i) as f64 * ln_q
    };

    let range: Vec<u64> = match side {
        Tail::Lower => (0..=k).collect(),
        Tail::Upper => (k..=n).collect(),
    };
    let mut terms: Vec<f64> = range.into_iter().map(ln_pmf).collect();
    terms.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let max = *terms.last().unwrap();
    let sum: f64 = terms.iter().map(|t| (t - max).exp()).sum();
    (max.exp() * sum).clamp(0.0, 1.0)
}
