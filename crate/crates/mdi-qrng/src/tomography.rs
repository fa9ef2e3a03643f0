//! Aggregation of test-trial outcomes and linear-inversion reconstruction of
//! the measurement POVM.
//!
//! The four probe states pin the four POVM parameters through
//!
//! ```text
//! p1 = a0 + a0 nz      p2 = a0 - a0 nz
//! p3 = a0 + a0 nx      p4 = a0 + a0 ny
//! ```
//!
//! where `p_i` is the probability of outcome '0'. Counts are recorded as '1'
//! counts; the conversion to '0' probabilities happens in exactly one place
//! (`TestTally::p_zero`) to keep the sign conventions honest.

use crate::protocol::TrialMode;
use crate::qstate::{validate_povm, BlochVector, Povm, PovmViolation, TestStateId};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TallyError {
    #[error("no test trials recorded for state {0}")]
    MissingState(&'static str),
    #[error("'1' count {ones} exceeds trial count {trials} for state {state}")]
    CountOverflow { state: &'static str, ones: u64, trials: u64 },
    #[error("rounds must be at least 1")]
    ZeroRounds,
    #[error("p1 + p2 = 0: the device never answers '0', reconstruction is degenerate")]
    DegenerateReconstruction,
    #[error("probability {0} outside [0, 1]")]
    ProbabilityOutOfRange(f64),
}

/// Trial and '1' counts for one probe state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StateCount {
    pub trials: u64,
    pub ones: u64,
}

/// Aggregate statistics of one experiment: per-state test counts plus the
/// generation-turn record. `rounds` carries how many identical protocol
/// rounds the counts accumulate; finite-size analysis is per round.
#[derive(Debug, Clone, PartialEq)]
pub struct TestTally {
    pub states: [StateCount; 4],
    pub generation_trials: u64,
    pub generation_ones: u64,
    pub rounds: u64,
}

impl TestTally {
    pub fn from_counts(
        states: [StateCount; 4],
        generation_trials: u64,
        generation_ones: u64,
        rounds: u64,
    ) -> Result<Self, TallyError> {
        if rounds == 0 {
            return Err(TallyError::ZeroRounds);
        }
        for (i, c) in states.iter().enumerate() {
            let label = TestStateId::ALL[i].label();
            if c.trials == 0 {
                return Err(TallyError::MissingState(label));
            }
            if c.ones > c.trials {
                return Err(TallyError::CountOverflow { state: label, ones: c.ones, trials: c.trials });
            }
        }
        Ok(Self { states, generation_trials, generation_ones, rounds })
    }

    /// Probability of outcome '0' for probe state `i`: `1 - ones/trials`.
    /// The single '1'-count to '0'-probability conversion site.
    pub fn p_zero(&self, i: usize) -> f64 {
        let c = &self.states[i];
        1.0 - c.ones as f64 / c.trials as f64
    }

    pub fn p_zero_all(&self) -> [f64; 4] {
        [self.p_zero(0), self.p_zero(1), self.p_zero(2), self.p_zero(3)]
    }

    /// Observed '1' frequency for probe state `i`.
    pub fn one_frequency(&self, i: usize) -> f64 {
        let c = &self.states[i];
        c.ones as f64 / c.trials as f64
    }

    /// Per-round test counts for the finite-size analysis.
    pub fn per_round_test_counts(&self) -> [f64; 4] {
        let r = self.rounds as f64;
        [
            self.states[0].trials as f64 / r,
            self.states[1].trials as f64 / r,
            self.states[2].trials as f64 / r,
            self.states[3].trials as f64 / r,
        ]
    }

    /// Per-round generation count for the finite-size analysis.
    pub fn per_round_generation_count(&self) -> f64 {
        self.generation_trials as f64 / self.rounds as f64
    }
}

/// Exact reduction of a record stream into a `TestTally` (single round).
/// Fails if any probe state never occurs.
pub fn tally<I>(records: I) -> Result<TestTally, TallyError>
where
    I: IntoIterator<Item = (TrialMode, bool)>,
{
    let mut acc = TallyAccumulator::new();
    for (mode, bit) in records {
        acc.add(mode, bit);
    }
    acc.finish()
}

/// Streaming tally reduction; merging two accumulators is plain count
/// addition, so partitioned runs can reduce associatively.
#[derive(Debug, Clone, Default)]
pub struct TallyAccumulator {
    states: [StateCount; 4],
    generation_trials: u64,
    generation_ones: u64,
}

impl TallyAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, mode: TrialMode, bit: bool) {
        match mode {
            TrialMode::Generation => {
                self.generation_trials += 1;
                self.generation_ones += bit as u64;
            }
            TrialMode::Test(state) => {
                let c = &mut self.states[state.index()];
                c.trials += 1;
                c.ones += bit as u64;
            }
        }
    }

    pub fn merge(&mut self, other: &TallyAccumulator) {
        for i in 0..4 {
            self.states[i].trials += other.states[i].trials;
            self.states[i].ones += other.states[i].ones;
        }
        self.generation_trials += other.generation_trials;
        self.generation_ones += other.generation_ones;
    }

    pub fn finish(self) -> Result<TestTally, TallyError> {
        TestTally::from_counts(self.states, self.generation_trials, self.generation_ones, 1)
    }
}

/// Linear-inversion estimate of the POVM parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PovmEstimate {
    pub a0: f64,
    pub nx: f64,
    pub ny: f64,
    pub nz: f64,
    /// Whether the estimate satisfies every POVM constraint. Unphysical
    /// estimates (noise pushing `|n|` past its bound) are returned as-is
    /// rather than clipped; clipping here would bias the certifier.
    pub physical: bool,
    pub violations: Vec<PovmViolation>,
}

impl PovmEstimate {
    pub fn direction(&self) -> BlochVector {
        BlochVector { rx: self.nx, ry: self.ny, rz: self.nz }
    }

    /// The estimate as a POVM, if physical.
    pub fn povm(&self) -> Option<Povm> {
        self.physical.then(|| Povm { a0: self.a0, n0: self.direction() })
    }
}

/// Closed-form inversion of the four probe probabilities:
/// `a0 = (p1+p2)/2`, `nz = (p1-p2)/(p1+p2)`, `nx = p3/a0 - 1`, `ny = p4/a0 - 1`.
pub fn reconstruct(p: [f64; 4]) -> Result<PovmEstimate, TallyError> {
    for v in p {
        if !(0.0..=1.0).contains(&v) || v.is_nan() {
            return Err(TallyError::ProbabilityOutOfRange(v));
        }
    }
    let sum = p[0] + p[1];
    if sum <= 0.0 {
        return Err(TallyError::DegenerateReconstruction);
    }
    let a0 = sum / 2.0;
    let nz = (p[0] - p[1]) / sum;
    let nx = p[2] / a0 - 1.0;
    let ny = p[3] / a0 - 1.0;
    let candidate = Povm { a0, n0: BlochVector { rx: nx, ry: ny, rz: nz } };
    let violations = validate_povm(&candidate);
    Ok(PovmEstimate { a0, nx, ny, nz, physical: violations.is_empty(), violations })
}
