//! Closed-form collision and hit probabilities, their lower-bound chains, and
//! Monte Carlo estimates of both.
//!
//! Distinctness of `N` fingerprints drawn uniformly from `2^{3n}` values has
//! probability `prod_{k<N} (1 - k / 2^{3n})`, bounded below by
//!
//! ```text
//! exp(-(S1 x + S2 x^2))                    with S1 = sum k, S2 = sum k^2, x = 2^{-3n}
//!   >= exp(-((N-1)N/2 x + N^3/3 x^2))
//!   >  1 - (N-1)N/2 x - N^3/3 x^2
//!   >  1 - 2^{-n}                          when N <= 2^n
//! ```
//!
//! The chance that at least one of `2^t` uniform targets falls among `2^m`
//! dictionary keys out of `2^n` is at least `1 - (1 - 2^{m-n})^{2^t}`, which
//! in turn is at least `1 - exp(-2^{t+m-n})`.

use std::collections::HashSet;

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::attack::{capture_targets, run_attack, AttackError};
use crate::cipher::{default_x0, mix64, CipherSpec, KeyValue};
use crate::dictionary::{enumerate_keys, DictError, Dictionary, KeyMode};

#[derive(Debug, Error)]
pub enum BoundsError {
    #[error("{field}={value} out of range: {reason}")]
    Range {
        field: &'static str,
        value: u64,
        reason: &'static str,
    },
    #[error("bound ordering violated: {0}")]
    Ordering(String),
    #[error(transparent)]
    Dict(#[from] DictError),
    #[error(transparent)]
    Attack(#[from] AttackError),
}

fn range(field: &'static str, value: u64, reason: &'static str) -> BoundsError {
    BoundsError::Range {
        field,
        value,
        reason,
    }
}

/// Largest space for which the rational path runs.
pub const EXACT_MAX_SPACE_BITS: u32 = 24;
/// Largest draw count for which the rational path runs.
pub const EXACT_MAX_COUNT: u64 = 1 << 12;

const DIRECT_SUM_MAX_COUNT: u64 = 1 << 20;
const SERIES_MAX_LOAD: f64 = 1.0 / (1u64 << 20) as f64;

/// Neumaier-compensated running sum.
#[derive(Debug, Default, Clone, Copy)]
struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(self) -> f64 {
        self.sum + self.carry
    }
}

/// `sum_{k<count} ln(1 - k 2^{-space_bits})`, term by term.
pub fn log_distinct_probability_direct(space_bits: u32, count: u64) -> f64 {
    let x = (-(space_bits as f64)).exp2();
    let mut acc = CompensatedSum::default();
    for k in 1..count {
        acc.add((-(k as f64) * x).ln_1p());
    }
    acc.value()
}

/// Power-sum expansion of the same sum, `-sum_j x^j S_j(N-1) / j`, for
/// `N x` small enough that four terms are exact to double precision.
fn log_distinct_probability_series(space_bits: u32, count: u64) -> f64 {
    let x = (-(space_bits as f64)).exp2();
    let m = (count - 1) as f64;
    let s1 = m * (m + 1.0) / 2.0;
    let s2 = m * (m + 1.0) * (2.0 * m + 1.0) / 6.0;
    let s3 = s1 * s1;
    let s4 = m * (m + 1.0) * (2.0 * m + 1.0) * (3.0 * m * m + 3.0 * m - 1.0) / 30.0;
    let mut acc = CompensatedSum::default();
    // smallest terms first
    acc.add(-x.powi(4) * s4 / 4.0);
    acc.add(-x.powi(3) * s3 / 3.0);
    acc.add(-x * x * s2 / 2.0);
    acc.add(-x * s1);
    acc.value()
}

/// Natural log of the probability that `count` uniform draws from
/// `2^space_bits` values are pairwise distinct.
pub fn log_distinct_probability(space_bits: u32, count: u64) -> f64 {
    if count <= 1 {
        return 0.0;
    }
    if space_bits < 64 && count > 1u64 << space_bits {
        return f64::NEG_INFINITY;
    }
    let load = count as f64 * (-(space_bits as f64)).exp2();
    if count > DIRECT_SUM_MAX_COUNT && load <= SERIES_MAX_LOAD {
        log_distinct_probability_series(space_bits, count)
    } else {
        log_distinct_probability_direct(space_bits, count)
    }
}

/// Distinctness probability from the integer ratio
/// `prod_{k<N} (2^b - k) / 2^{bN}`, rounded once to `f64`.
///
/// `None` outside `b <= 24, N <= 4096`.
pub fn exact_distinct_probability(space_bits: u32, count: u64) -> Option<f64> {
    if space_bits > EXACT_MAX_SPACE_BITS || count > EXACT_MAX_COUNT {
        return None;
    }
    let space = 1u64 << space_bits;
    if count > space {
        return Some(0.0);
    }
    let mut numerator = BigUint::one();
    for k in 0..count {
        numerator *= space - k;
    }
    // p = numerator * 2^{-bN}; scale the top 64 bits down separately so
    // neither factor underflows on its own.
    let len = numerator.bits();
    let shift = len.saturating_sub(64);
    let top = (&numerator >> shift).to_u64().expect("fits in 64 bits") as f64;
    let mantissa = top * (-(len.min(64) as f64)).exp2();
    let exponent = len as f64 - space_bits as f64 * count as f64;
    Some(mantissa * exponent.exp2())
}

/// Best available distinctness probability: the rational path when it
/// applies, the log-domain path otherwise.
pub fn distinct_probability(space_bits: u32, count: u64) -> f64 {
    exact_distinct_probability(space_bits, count)
        .unwrap_or_else(|| log_distinct_probability(space_bits, count).exp())
}

/// `a <= b` up to a few ulps at the scale of 1.
fn nearly_le(a: f64, b: f64) -> bool {
    a <= b + 4.0 * f64::EPSILON * b.abs().max(1.0)
}

/// Distinctness probability of `N` dictionary fingerprints and every step of
/// its lower-bound chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prop1Report {
    pub n: u32,
    pub count: u64,
    pub p_exact: f64,
    /// `1 - p_exact`, without cancellation.
    pub collision_exact: f64,
    /// Whether `p_exact` came from the integer-ratio path.
    pub rational_path: bool,
    /// `exp(-(S1 x + S2 x^2))` with exact power sums.
    pub p_prod_bound: f64,
    pub p_exp_bound: f64,
    pub p_poly_bound: f64,
    /// `1 - 2^{-n}`.
    pub p_final_bound: f64,
}

impl Prop1Report {
    pub fn chain_holds(&self) -> bool {
        0.0 <= self.p_final_bound
            && nearly_le(self.p_final_bound, self.p_poly_bound)
            && nearly_le(self.p_poly_bound, self.p_exp_bound)
            && nearly_le(self.p_exp_bound, self.p_prod_bound)
            && nearly_le(self.p_prod_bound, self.p_exact)
            && nearly_le(self.p_exact, 1.0)
    }

    pub fn record(&self) -> String {
        format!(
            "check=prop1 n={} N={} p_exact={} collision_exact={} rational_path={} p_prod_bound={} \
             p_exp_bound={} p_poly_bound={} p_final_bound={} chain_holds={}",
            self.n,
            self.count,
            self.p_exact,
            self.collision_exact,
            self.rational_path,
            self.p_prod_bound,
            self.p_exp_bound,
            self.p_poly_bound,
            self.p_final_bound,
            self.chain_holds()
        )
    }
}

/// Evaluates the distinctness probability of `count` fingerprints of width
/// `3n` and its bound chain. Requires `1 <= count <= 2^n`.
pub fn prop1_eval(n: u32, count: u64) -> Result<Prop1Report, BoundsError> {
    if !(1..=32).contains(&n) {
        return Err(range("n", n.into(), "must be in 1..=32"));
    }
    if count == 0 || count > 1u64 << n {
        return Err(range("N", count, "must satisfy 1 <= N <= 2^n"));
    }
    let bits = 3 * n;
    let x = (-(bits as f64)).exp2();
    let nf = count as f64;

    let log_p = log_distinct_probability(bits, count);
    let exact = exact_distinct_probability(bits, count);
    let p_exact = exact.unwrap_or_else(|| log_p.exp());
    let collision_exact = match exact {
        Some(p) if p < 0.5 => 1.0 - p,
        _ => 0.0 - log_p.exp_m1(),
    };

    let m = nf - 1.0;
    let s1 = m * (m + 1.0) / 2.0;
    let s2 = m * (m + 1.0) * (2.0 * m + 1.0) / 6.0;
    let p_prod_bound = (-(s1 * x + s2 * x * x)).exp();

    let linear = (nf - 1.0) * nf / 2.0 * x;
    let cubic = nf * nf * nf / 3.0 * x * x;
    let p_exp_bound = (-(linear + cubic)).exp();
    let p_poly_bound = 1.0 - linear - cubic;
    let p_final_bound = 1.0 - (-(n as f64)).exp2();

    let report = Prop1Report {
        n,
        count,
        p_exact,
        collision_exact,
        rational_path: exact.is_some(),
        p_prod_bound,
        p_exp_bound,
        p_poly_bound,
        p_final_bound,
    };
    if !report.chain_holds() {
        return Err(BoundsError::Ordering(report.record()));
    }
    Ok(report)
}

/// Lower bounds on the chance that some target lands in the dictionary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prop2Report {
    pub n: u32,
    pub m: u32,
    pub t: u32,
    /// `1 - (1 - 2^{m-n})^{2^t}`.
    pub p_hat_exact_bound: f64,
    /// `1 - exp(-2^{t+m-n})`.
    pub p_hat_exp_bound: f64,
}

/// Target count exponent at which the hit bound first reaches 0.98.
pub fn prop2_threshold_t(n: u32, m: u32) -> u32 {
    (n + 2).saturating_sub(m)
}

impl Prop2Report {
    /// `t >= n - m + 2`.
    pub fn in_threshold_regime(&self) -> bool {
        self.t >= prop2_threshold_t(self.n, self.m)
    }

    pub fn record(&self) -> String {
        format!(
            "check=prop2 n={} m={} t={} p_hat_exact_bound={} p_hat_exp_bound={} threshold_regime={} meets_0.98={}",
            self.n,
            self.m,
            self.t,
            self.p_hat_exact_bound,
            self.p_hat_exp_bound,
            self.in_threshold_regime(),
            self.p_hat_exp_bound >= 0.98
        )
    }
}

/// Evaluates both hit-probability bounds for a `2^m`-key dictionary over an
/// `n`-bit key space and `2^t` uniform targets.
pub fn prop2_eval(n: u32, m: u32, t: u32) -> Result<Prop2Report, BoundsError> {
    if !(1..=128).contains(&n) {
        return Err(range("n", n.into(), "must be in 1..=128"));
    }
    if m > n {
        return Err(range("m", m.into(), "must not exceed n"));
    }
    if i64::from(t) + i64::from(m) - i64::from(n) > 20 {
        return Err(range("t", t.into(), "t + m - n must be at most 20"));
    }
    let targets = f64::from(t).exp2();
    let fraction = (f64::from(m) - f64::from(n)).exp2();
    // ln(1 - 1) = -inf gives exactly 1 below.
    let p_hat_exact_bound = -(targets * (-fraction).ln_1p()).exp_m1();
    let p_hat_exp_bound = -(-(targets * fraction)).exp_m1();
    if !nearly_le(p_hat_exp_bound, p_hat_exact_bound) || !nearly_le(p_hat_exact_bound, 1.0) {
        return Err(BoundsError::Ordering(format!(
            "p_hat_exp_bound={p_hat_exp_bound} p_hat_exact_bound={p_hat_exact_bound}"
        )));
    }
    Ok(Prop2Report {
        n,
        m,
        t,
        p_hat_exact_bound,
        p_hat_exp_bound,
    })
}

/// A Monte Carlo proportion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub trials: u64,
    pub successes: u64,
    pub estimate: f64,
    /// `sqrt(p (1 - p) / trials)` at the estimate.
    pub stderr: f64,
}

impl McEstimate {
    pub fn new(trials: u64, successes: u64) -> Self {
        assert!(successes <= trials && trials > 0);
        let estimate = successes as f64 / trials as f64;
        McEstimate {
            trials,
            successes,
            estimate,
            stderr: (estimate * (1.0 - estimate) / trials as f64).sqrt(),
        }
    }

    /// Standard error of a proportion with true value `expected`.
    pub fn expected_stderr(&self, expected: f64) -> f64 {
        (expected * (1.0 - expected) / self.trials as f64).sqrt()
    }

    /// Deviation from `expected` in standard errors of the expected value.
    pub fn z_score(&self, expected: f64) -> f64 {
        let diff = (self.estimate - expected).abs();
        let se = self.expected_stderr(expected);
        if se > 0.0 {
            diff / se
        } else if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }

    pub fn within(&self, expected: f64, sigmas: f64) -> bool {
        self.z_score(expected) <= sigmas
    }

    pub fn record(&self, check: &str, expected: f64) -> String {
        format!(
            "check={check} trials={} successes={} estimate={} stderr={} expected={} z={:.3} within_4sigma={}",
            self.trials,
            self.successes,
            self.estimate,
            self.stderr,
            expected,
            self.z_score(expected),
            self.within(expected, 4.0)
        )
    }
}

const DISTINCT_DOMAIN: u64 = 0x6469_7374_696e_6374;
const HIT_DOMAIN: u64 = 0x6869_7472_6174_6500;

/// Independent per-trial stream: depends only on `(seed, domain, trial)`.
fn trial_rng(seed: u64, domain: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(mix64(seed ^ domain));
    rng.set_stream(trial);
    rng
}

/// Fraction of trials in which `count` uniform `3n`-bit values are all
/// distinct.
pub fn mc_distinctness(
    n: u32,
    count: u64,
    trials: u64,
    seed: u64,
) -> Result<McEstimate, BoundsError> {
    if n == 0 || 3 * n > 30 {
        return Err(range("n", n.into(), "3n must be at most 30"));
    }
    let bits = 3 * n;
    if count > 1u64 << bits {
        return Err(range("N", count, "must not exceed 2^{3n}"));
    }
    if trials == 0 {
        return Err(range("trials", 0, "must be positive"));
    }
    let shift = 64 - bits;
    let successes = (0..trials)
        .into_par_iter()
        .map_init(HashSet::<u64>::new, |seen, trial| {
            let mut rng = trial_rng(seed, DISTINCT_DOMAIN, trial);
            seen.clear();
            (0..count).all(|_| seen.insert(rng.gen::<u64>() >> shift))
        })
        .filter(|&distinct| distinct)
        .count() as u64;
    Ok(McEstimate::new(trials, successes))
}

/// Fraction of trials in which at least one of `2^t` uniform target keys is
/// recovered from one fixed ideal-cipher dictionary of `2^m` sampled keys.
pub fn mc_hit_rate(
    n: u32,
    m: u32,
    t: u32,
    trials: u64,
    seed: u64,
) -> Result<McEstimate, BoundsError> {
    if n > 24 {
        return Err(range("n", n.into(), "must be at most 24"));
    }
    if m > n {
        return Err(range("m", m.into(), "must not exceed n"));
    }
    if t > 16 {
        return Err(range("t", t.into(), "must be at most 16"));
    }
    if trials == 0 {
        return Err(range("trials", 0, "must be positive"));
    }
    let spec = CipherSpec::ideal(n).map_err(DictError::from)?;
    let x0 = default_x0(n);
    let keys = enumerate_keys(KeyMode::Sampled, n, m, seed)?;
    let dict = Dictionary::build(spec, &keys, x0.clone())?;
    let targets = 1usize << t;
    let space = spec.key_space();

    let hits: Vec<bool> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = trial_rng(seed, HIT_DOMAIN, trial);
            let sample: Vec<KeyValue> = (0..targets)
                .map(|_| KeyValue(rng.gen_range(0..space) as u32))
                .collect();
            let batch = capture_targets(&spec, &x0, &sample)?;
            Ok(run_attack(&dict, &batch)?.any_hit)
        })
        .collect::<Result<_, BoundsError>>()?;
    let successes = hits.into_iter().filter(|&h| h).count() as u64;
    Ok(McEstimate::new(trials, successes))
}
