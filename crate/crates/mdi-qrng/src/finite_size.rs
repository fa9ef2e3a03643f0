//! Finite-data deviation bounds for the tomography estimates.
//!
//! With `N_i` test turns for probe state `i` and `N_0` generation turns, the
//! deviation `theta_i` between the test-turn frequency `p_i` and the
//! generation-turn conditional probability is controlled by a Chernoff-type
//! tail bound. The failure probability of claiming `p'_i <= p_i + theta_i`
//! is
//!
//! ```text
//! eps = 4 sqrt(N_i + N_0) / sqrt(N_i N_0 (1 + p_i)(1 - p_i))
//!       * 2^(-(N_i + N_0) xi_i(theta_i))
//! ```
//!
//! and `solve_theta` inverts it for `theta_i` by bisection. The same
//! `theta_i` is applied symmetrically below `p_i`, which doubles the failure
//! probability per state; report composition accounts for that.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum FluctuationError {
    #[error("probability {0} outside [0, 1]")]
    ProbabilityOutOfRange(f64),
    #[error("failure probability {0} outside (0, 1)")]
    EpsilonOutOfRange(f64),
    #[error("turn counts must be at least 1 (got N_i = {n_i}, N_0 = {n_0})")]
    BadCounts { n_i: f64, n_0: f64 },
    #[error("entropy argument (1+p)/2 + theta = {arg} exceeds 1; theta is infeasible")]
    InfeasibleTheta { arg: f64 },
    #[error("no deviation below the feasibility ceiling {ceiling} reaches the target failure probability")]
    NoFeasibleTheta { ceiling: f64 },
}

/// Binary Shannon entropy in bits with the endpoint convention H(0) = H(1) = 0.
/// Unchecked fast path shared by the hot certifier loops.
#[inline]
pub(crate) fn entropy_bits(p: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        return 0.0;
    }
    -(p * p.log2()) - (1.0 - p) * (1.0 - p).log2()
}

/// Binary Shannon entropy, rejecting arguments outside `[0, 1]`.
pub fn binary_entropy(p: f64) -> Result<f64, FluctuationError> {
    if !(0.0..=1.0).contains(&p) || p.is_nan() {
        return Err(FluctuationError::ProbabilityOutOfRange(p));
    }
    Ok(entropy_bits(p))
}

/// Binary relative entropy d(p || q) in bits, stable for p near q.
fn kl_bits(p: f64, q: f64) -> f64 {
    debug_assert!(q > 0.0 && q < 1.0);
    let mut nats = 0.0;
    if p > 0.0 {
        nats += p * ((p - q) / q).ln_1p();
    }
    if p < 1.0 {
        nats += (1.0 - p) * ((q - p) / (1.0 - q)).ln_1p();
    }
    nats / std::f64::consts::LN_2
}

/// Exponent of the tail bound:
///
/// `xi(theta) = H(x + N_0 theta/(N_0+N_i)) - [N_i H(x) + N_0 H(x + theta)]/(N_0+N_i)`
///
/// with `x = (1+p)/2`. Zero at `theta = 0`, strictly increasing up to the
/// feasibility ceiling `theta = (1-p)/2`.
///
/// Evaluated through the identity `xi = f d(x || m) + (1-f) d(x+theta || m)`
/// with `f = N_i/(N_i+N_0)` and mixture `m = x + (1-f) theta`; the direct
/// entropy differences cancel catastrophically at experiment-scale counts,
/// the divergence form does not.
pub fn xi(theta: f64, p: f64, n_i: f64, n_0: f64) -> Result<f64, FluctuationError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(FluctuationError::ProbabilityOutOfRange(p));
    }
    if n_i < 1.0 || n_0 < 1.0 {
        return Err(FluctuationError::BadCounts { n_i, n_0 });
    }
    let x = (1.0 + p) / 2.0;
    if x + theta > 1.0 + 1e-12 {
        return Err(FluctuationError::InfeasibleTheta { arg: x + theta });
    }
    if theta == 0.0 {
        return Ok(0.0);
    }
    let total = n_i + n_0;
    let f = n_i / total;
    let c = n_0 / total;
    let shifted = (x + theta).min(1.0);
    // m < 1 holds mathematically; the clamp guards the rounding corner
    let m = (x + c * theta).min(1.0 - f64::EPSILON);
    Ok(f * kl_bits(x, m) + c * kl_bits(shifted, m))
}

/// The tail-bound failure probability at a given deviation.
pub fn fluctuation_epsilon(theta: f64, p: f64, n_i: f64, n_0: f64) -> Result<f64, FluctuationError> {
    let exponent = xi(theta, p, n_i, n_0)?;
    let prefactor = 4.0 * (n_i + n_0).sqrt() / (n_i * n_0 * (1.0 + p) * (1.0 - p)).sqrt();
    Ok(prefactor * ((n_i + n_0) * exponent).exp2().recip())
}

/// Relative bisection tolerance on theta.
const THETA_REL_TOL: f64 = 1e-10;

/// Solves `fluctuation_epsilon(theta) = eps` for the unique `theta >= 0`.
///
/// Returns 0 when the bound is already vacuous at `theta = 0`. A frequency of
/// exactly 1 (zero observed '1' counts) is floored at `1 - 1/(2 N_i)` so the
/// prefactor stays finite. When no deviation below the entropy-argument
/// ceiling reaches `eps`, the error reports that ceiling; the caller decides
/// whether to cap there.
pub fn solve_theta(eps: f64, p: f64, n_i: f64, n_0: f64) -> Result<f64, FluctuationError> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(FluctuationError::EpsilonOutOfRange(eps));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(FluctuationError::ProbabilityOutOfRange(p));
    }
    if n_i < 1.0 || n_0 < 1.0 {
        return Err(FluctuationError::BadCounts { n_i, n_0 });
    }
    let p = if p >= 1.0 { 1.0 - 1.0 / (2.0 * n_i) } else { p };
    let ceiling = (1.0 - p) / 2.0;
    if fluctuation_epsilon(0.0, p, n_i, n_0)? <= eps {
        return Ok(0.0);
    }
    let mut hi = ceiling * (1.0 - 1e-15);
    if fluctuation_epsilon(hi, p, n_i, n_0)? > eps {
        return Err(FluctuationError::NoFeasibleTheta { ceiling });
    }
    let mut lo = 0.0;
    while hi - lo > THETA_REL_TOL * hi {
        let mid = 0.5 * (lo + hi);
        if fluctuation_epsilon(mid, p, n_i, n_0)? > eps {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// How each per-state deviation was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThetaOutcome {
    /// Bisection solved the tail-bound equation.
    Solved,
    /// The bound was vacuous already at zero deviation.
    Vacuous,
    /// The equation was unsatisfiable below the entropy-argument ceiling;
    /// the deviation was capped at the ceiling `(1 - p)/2`.
    CappedAtCeiling,
}

impl ThetaOutcome {
    pub fn label(self) -> &'static str {
        match self {
            ThetaOutcome::Solved => "solved",
            ThetaOutcome::Vacuous => "vacuous",
            ThetaOutcome::CappedAtCeiling => "capped_at_ceiling",
        }
    }
}

/// Per-state finite-size deviations at a common failure probability.
#[derive(Debug, Clone, PartialEq)]
pub struct FluctuationSet {
    pub thetas: [f64; 4],
    pub epsilon_theta: f64,
    pub outcomes: [ThetaOutcome; 4],
}

impl FluctuationSet {
    /// Zero deviations (asymptotic limit), useful for envelopes and tests.
    pub fn zero() -> Self {
        Self {
            thetas: [0.0; 4],
            epsilon_theta: 1.0 - f64::EPSILON,
            outcomes: [ThetaOutcome::Vacuous; 4],
        }
    }

    /// Solves all four deviations, capping at the feasibility ceiling where
    /// the tail-bound equation is unsatisfiable.
    pub fn solve(
        eps: f64,
        p: &[f64; 4],
        n_test: &[f64; 4],
        n_gen: f64,
    ) -> Result<Self, FluctuationError> {
        let mut thetas = [0.0; 4];
        let mut outcomes = [ThetaOutcome::Solved; 4];
        for i in 0..4 {
            match solve_theta(eps, p[i], n_test[i], n_gen) {
                Ok(theta) => {
                    thetas[i] = theta;
                    outcomes[i] = if theta == 0.0 { ThetaOutcome::Vacuous } else { ThetaOutcome::Solved };
                }
                Err(FluctuationError::NoFeasibleTheta { ceiling }) => {
                    thetas[i] = ceiling;
                    outcomes[i] = ThetaOutcome::CappedAtCeiling;
                }
                Err(e) => return Err(e),
            }
        }
        Ok(Self { thetas, epsilon_theta: eps, outcomes })
    }

    /// Total failure probability: four states, each bounded on both sides.
    pub fn composed_failure_probability(&self) -> f64 {
        8.0 * self.epsilon_theta
    }
}
