//! Trial scheduling with exact seed accounting, and the honest/adversarial
//! detection device models that drive the simulator.

use crate::bits::BitSource;
use crate::qstate::{
    outcome_zero_prob, BlochVector, Povm, QstateError, TestStateId, GENERATION_STATE,
};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use std::collections::HashSet;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ProtocolError {
    #[error("seed exhausted: needed {needed} more bits after consuming {consumed}")]
    SeedExhausted { needed: u32, consumed: u64 },
    #[error("{n_trials} trials do not fit in {position_bits} position bits")]
    PositionBitsTooSmall { n_trials: u64, position_bits: u32 },
    #[error("test count {n_test} exceeds trial count {n_trials}")]
    TooManyTests { n_test: u64, n_trials: u64 },
    #[error("position bits must be in 1..=63, got {0}")]
    PositionBitsOutOfRange(u32),
    #[error("POVM schedule supplies {supplied} entries for trial {index}")]
    PovmScheduleTooShort { supplied: usize, index: u64 },
    #[error("invalid device parameter: {0}")]
    BadModel(String),
    #[error(transparent)]
    Qstate(#[from] QstateError),
}

/// Source and detector parameters of the honest device model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceModel {
    /// Mean photon number per pulse.
    pub mu: f64,
    /// Detection efficiency.
    pub eta: f64,
    /// Dark-count probability per gate.
    pub dark: f64,
    /// Lumped preparation/afterpulse error probability, applied as an
    /// outcome flip on clicks.
    pub error: f64,
}

impl SourceModel {
    pub fn validate(&self) -> Result<(), ProtocolError> {
        if !(self.mu >= 0.0) {
            return Err(ProtocolError::BadModel(format!("mu = {} must be >= 0", self.mu)));
        }
        for (name, v) in [("eta", self.eta), ("dark", self.dark), ("error", self.error)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(ProtocolError::BadModel(format!("{name} = {v} outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// Model of the instrument characterization runs: weak pulses at the
    /// published efficiency, dark rate, and lumped error level.
    pub fn calibrated() -> Self {
        Self { mu: 0.06, eta: 0.25, dark: 1.5e-4, error: 0.016 }
    }
}

/// Trial mode: the fixed `|+>` generation state or one of four probes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrialMode {
    Generation,
    Test(TestStateId),
}

impl TrialMode {
    pub fn bloch(self) -> BlochVector {
        match self {
            TrialMode::Generation => GENERATION_STATE,
            TrialMode::Test(s) => s.bloch(),
        }
    }
}

/// Detector response for one gate. Double clicks are folded into `Click0`
/// when recorded, matching the rule that anything other than a clean '1'
/// click yields the bit '0'.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RawOutcome {
    NoClick,
    Click0,
    Click1,
}

/// One simulated trial. The output bit is 1 exactly when the raw outcome is
/// a clean `Click1`; no-click and double-click map to '0'.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrialRecord {
    pub index: u64,
    pub mode: TrialMode,
    pub raw: RawOutcome,
}

impl TrialRecord {
    #[inline]
    pub fn bit(&self) -> bool {
        self.raw == RawOutcome::Click1
    }
}

/// Exact count of every seed bit the protocol consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SeedAccounting {
    /// Position draws, including bits burned on rejected draws.
    pub bits_for_positions: u64,
    /// Two bits per test trial for the probe choice.
    pub bits_for_states: u64,
    /// Extractor seed material, filled in by the extraction stage.
    pub bits_for_extractor_seed: u64,
}

impl SeedAccounting {
    pub fn total_consumed(&self) -> u64 {
        self.bits_for_positions + self.bits_for_states + self.bits_for_extractor_seed
    }

    /// Seed spent by the protocol itself (positions and states).
    pub fn protocol_bits(&self) -> u64 {
        self.bits_for_positions + self.bits_for_states
    }
}

/// Trial schedule: which indices run in test mode and with which probe.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    n_trials: u64,
    /// Sorted by trial index; one entry per test position.
    tests: Vec<(u64, TestStateId)>,
}

impl Schedule {
    pub fn n_trials(&self) -> u64 {
        self.n_trials
    }

    pub fn n_test(&self) -> u64 {
        self.tests.len() as u64
    }

    pub fn n_generation(&self) -> u64 {
        self.n_trials - self.n_test()
    }

    pub fn tests(&self) -> &[(u64, TestStateId)] {
        &self.tests
    }

    pub fn mode_at(&self, index: u64) -> TrialMode {
        match self.tests.binary_search_by_key(&index, |(i, _)| *i) {
            Ok(k) => TrialMode::Test(self.tests[k].1),
            Err(_) => TrialMode::Generation,
        }
    }

    /// Assembles a schedule from explicit test assignments (deserialization
    /// path); enforces ordering, distinctness, and range.
    pub fn from_tests(n_trials: u64, mut tests: Vec<(u64, TestStateId)>) -> Result<Self, ProtocolError> {
        tests.sort_by_key(|(i, _)| *i);
        for w in tests.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(ProtocolError::BadModel(format!("duplicate test position {}", w[0].0)));
            }
        }
        if let Some(&(last, _)) = tests.last() {
            if last >= n_trials {
                return Err(ProtocolError::BadModel(format!(
                    "test position {last} outside 0..{n_trials}"
                )));
            }
        }
        Ok(Self { n_trials, tests })
    }
}

/// Draws the trial schedule from the seed stream.
///
/// Each test trial consumes `position_bits` bits per position draw (repeating
/// the draw while it collides with an earlier position or falls outside the
/// trial range, with every burned bit counted) followed by 2 bits selecting
/// the probe state. The returned accounting is exact: replaying the consumed
/// prefix of the seed reproduces the identical schedule.
pub fn build_schedule(
    seed: &mut dyn BitSource,
    n_trials: u64,
    n_test: u64,
    position_bits: u32,
) -> Result<(Schedule, SeedAccounting), ProtocolError> {
    if position_bits == 0 || position_bits > 63 {
        return Err(ProtocolError::PositionBitsOutOfRange(position_bits));
    }
    if n_trials > 1u64 << position_bits {
        return Err(ProtocolError::PositionBitsTooSmall { n_trials, position_bits });
    }
    if n_test > n_trials {
        return Err(ProtocolError::TooManyTests { n_test, n_trials });
    }
    let mut acct = SeedAccounting::default();
    let mut chosen = HashSet::with_capacity(n_test as usize);
    let mut tests = Vec::with_capacity(n_test as usize);
    for _ in 0..n_test {
        let position = loop {
            let draw = seed.draw(position_bits).ok_or(ProtocolError::SeedExhausted {
                needed: position_bits,
                consumed: seed.bits_consumed(),
            })?;
            acct.bits_for_positions += position_bits as u64;
            if draw < n_trials && chosen.insert(draw) {
                break draw;
            }
        };
        let state_draw = seed.draw(2).ok_or(ProtocolError::SeedExhausted {
            needed: 2,
            consumed: seed.bits_consumed(),
        })?;
        acct.bits_for_states += 2;
        let state = TestStateId::from_index(state_draw as usize).expect("2-bit draw");
        tests.push((position, state));
    }
    tests.sort_by_key(|(i, _)| *i);
    Ok((Schedule { n_trials, tests }, acct))
}

/// Probability of each raw outcome for one gate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutcomeDistribution {
    pub no_click: f64,
    pub click0: f64,
    pub click1: f64,
}

impl OutcomeDistribution {
    pub fn bit_one_probability(&self) -> f64 {
        self.click1
    }
}

/// Honest detector response for a state with component `r` along the
/// measurement axis.
///
/// Each time slot fires independently: the '1' slot sees mean photon number
/// `mu eta (1-r)/2` and the '0' slot `mu eta (1+r)/2`, both on top of the
/// dark-count floor. Double clicks resolve to '0'. A click's label is then
/// flipped with probability `error`.
pub fn honest_outcome_along(model: &SourceModel, r: f64) -> OutcomeDistribution {
    let fire = |q: f64| 1.0 - (1.0 - model.dark) * (-model.mu * model.eta * q).exp();
    let f1 = fire((1.0 - r) / 2.0);
    let f0 = fire((1.0 + r) / 2.0);
    let no_click = (1.0 - f0) * (1.0 - f1);
    let c1_raw = f1 * (1.0 - f0);
    let c0_raw = f0 * (1.0 - f1) + f0 * f1;
    let e = model.error;
    OutcomeDistribution {
        no_click,
        click0: c0_raw * (1.0 - e) + c1_raw * e,
        click1: c1_raw * (1.0 - e) + c0_raw * e,
    }
}

/// Honest response in the protocol's fixed Z measurement.
pub fn honest_device(model: &SourceModel, mode: TrialMode) -> OutcomeDistribution {
    honest_outcome_along(model, mode.bloch().rz)
}

/// Measurement bases for state verification.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Basis {
    X,
    Y,
    Z,
}

impl Basis {
    pub const ALL: [Basis; 3] = [Basis::X, Basis::Y, Basis::Z];

    fn component(self, v: &BlochVector) -> f64 {
        match self {
            Basis::X => v.rx,
            Basis::Y => v.ry,
            Basis::Z => v.rz,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Basis::X => "x",
            Basis::Y => "y",
            Basis::Z => "z",
        }
    }
}

/// Probability of the wrong outcome conditioned on a click, per probe state
/// and measurement basis. A state with no preferred outcome in a basis has
/// error rate 1/2 by convention.
pub fn verify_states(model: &SourceModel) -> [[f64; 3]; 4] {
    let mut rates = [[0.0; 3]; 4];
    for (si, state) in TestStateId::ALL.into_iter().enumerate() {
        for (bi, basis) in Basis::ALL.into_iter().enumerate() {
            let r = basis.component(&state.bloch());
            let d = honest_outcome_along(model, r);
            let click = d.click0 + d.click1;
            rates[si][bi] = if click <= 0.0 {
                0.0
            } else if r > 0.0 {
                d.click1 / click
            } else if r < 0.0 {
                d.click0 / click
            } else {
                0.5
            };
        }
    }
    rates
}

/// POVM assignment per trial for the adversarial device.
#[derive(Debug, Clone, PartialEq)]
pub enum PovmSequence {
    /// The same POVM every trial (i.i.d. device).
    Constant(Povm),
    /// Even trials use the first POVM, odd trials the second.
    Alternating(Povm, Povm),
    /// Arbitrary per-trial assignment; must cover every trial index.
    PerTrial(Vec<Povm>),
}

impl PovmSequence {
    pub fn povm_at(&self, index: u64) -> Result<&Povm, ProtocolError> {
        match self {
            PovmSequence::Constant(p) => Ok(p),
            PovmSequence::Alternating(a, b) => Ok(if index % 2 == 0 { a } else { b }),
            PovmSequence::PerTrial(v) => {
                v.get(index as usize).ok_or(ProtocolError::PovmScheduleTooShort {
                    supplied: v.len(),
                    index,
                })
            }
        }
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        let check = |p: &Povm| -> Result<(), ProtocolError> {
            let v = crate::qstate::validate_povm(p);
            if v.is_empty() {
                Ok(())
            } else {
                Err(QstateError::InvalidPovm(v).into())
            }
        };
        match self {
            PovmSequence::Constant(p) => check(p),
            PovmSequence::Alternating(a, b) => check(a).and_then(|_| check(b)),
            PovmSequence::PerTrial(v) => v.iter().try_for_each(check),
        }
    }
}

/// Outcome distribution of the adversarial device on a given trial: outcomes
/// always click and follow the trial POVM applied to the scheduled state.
pub fn adversarial_device(
    seq: &PovmSequence,
    index: u64,
    mode: TrialMode,
) -> Result<OutcomeDistribution, ProtocolError> {
    let povm = seq.povm_at(index)?;
    let p0 = outcome_zero_prob(povm, &mode.bloch())?;
    Ok(OutcomeDistribution { no_click: 0.0, click0: p0, click1: 1.0 - p0 })
}

/// The device under test.
#[derive(Debug, Clone, PartialEq)]
pub enum DeviceModel {
    Honest(SourceModel),
    Adversarial(PovmSequence),
}

impl DeviceModel {
    pub fn validate(&self) -> Result<(), ProtocolError> {
        match self {
            DeviceModel::Honest(m) => m.validate(),
            DeviceModel::Adversarial(s) => s.validate(),
        }
    }
}

/// Records are generated in fixed-size index chunks; each chunk draws from an
/// independent substream of the seed, so partitioned and sequential execution
/// produce identical streams.
pub const SIM_CHUNK: u64 = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SimSummary {
    pub trials: u64,
    pub test_trials: u64,
    pub ones: u64,
    pub no_clicks: u64,
}

/// Cumulative 64-bit thresholds for sampling a 3-way outcome from one draw.
#[derive(Clone, Copy)]
struct OutcomeSampler {
    t_no: u64,
    t_c0: u64,
}

impl OutcomeSampler {
    fn new(d: &OutcomeDistribution) -> Self {
        let scale = |p: f64| -> u64 {
            if p >= 1.0 {
                u64::MAX
            } else {
                (p * (u64::MAX as f64)) as u64
            }
        };
        Self { t_no: scale(d.no_click), t_c0: scale(d.no_click + d.click0) }
    }

    #[inline]
    fn sample(&self, r: u64) -> RawOutcome {
        if r < self.t_no {
            RawOutcome::NoClick
        } else if r < self.t_c0 {
            RawOutcome::Click0
        } else {
            RawOutcome::Click1
        }
    }
}

/// Runs the protocol against the device, emitting one record per trial in
/// index order. Deterministic in `rng_seed`.
pub fn simulate(
    schedule: &Schedule,
    device: &DeviceModel,
    rng_seed: u64,
    mut sink: impl FnMut(TrialRecord),
) -> Result<SimSummary, ProtocolError> {
    device.validate()?;
    // Per-mode samplers for the honest device; the adversarial device needs
    // per-trial probabilities only for non-constant schedules.
    let honest_samplers: Option<[OutcomeSampler; 5]> = match device {
        DeviceModel::Honest(m) => {
            let gen = OutcomeSampler::new(&honest_device(m, TrialMode::Generation));
            let mut all = [gen; 5];
            for s in TestStateId::ALL {
                all[1 + s.index()] = OutcomeSampler::new(&honest_device(m, TrialMode::Test(s)));
            }
            Some(all)
        }
        DeviceModel::Adversarial(_) => None,
    };

    let mut summary = SimSummary::default();
    let mut tests = schedule.tests().iter().peekable();
    let n = schedule.n_trials();
    let mut chunk = 0u64;
    while chunk * SIM_CHUNK < n {
        let start = chunk * SIM_CHUNK;
        let end = ((chunk + 1) * SIM_CHUNK).min(n);
        let mut rng = ChaCha12Rng::seed_from_u64(rng_seed);
        rng.set_stream(chunk);
        for index in start..end {
            let mode = match tests.peek() {
                Some(&&(pos, state)) if pos == index => {
                    tests.next();
                    TrialMode::Test(state)
                }
                _ => TrialMode::Generation,
            };
            let r = rng.next_u64();
            let raw = match device {
                DeviceModel::Honest(_) => {
                    let samplers = honest_samplers.as_ref().expect("honest samplers");
                    let k = match mode {
                        TrialMode::Generation => 0,
                        TrialMode::Test(s) => 1 + s.index(),
                    };
                    samplers[k].sample(r)
                }
                DeviceModel::Adversarial(seq) => {
                    let d = adversarial_device(seq, index, mode)?;
                    OutcomeSampler::new(&d).sample(r)
                }
            };
            summary.trials += 1;
            summary.test_trials += matches!(mode, TrialMode::Test(_)) as u64;
            summary.ones += (raw == RawOutcome::Click1) as u64;
            summary.no_clicks += (raw == RawOutcome::NoClick) as u64;
            sink(TrialRecord { index, mode, raw });
        }
        chunk += 1;
    }
    Ok(summary)
}

/// Convenience wrapper collecting the full record stream; intended for
/// small runs and tests. Large runs should stream through `simulate`.
pub fn simulate_collect(
    schedule: &Schedule,
    device: &DeviceModel,
    rng_seed: u64,
) -> Result<Vec<TrialRecord>, ProtocolError> {
    let mut out = Vec::with_capacity(schedule.n_trials() as usize);
    simulate(schedule, device, rng_seed, |r| out.push(r))?;
    Ok(out)
}
