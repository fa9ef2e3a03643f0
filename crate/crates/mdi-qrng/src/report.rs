//! Structured reports with stable key names.
//!
//! Every stage emits one of these structs rendered as TOML. Field order is
//! fixed by the struct definitions, so a report is byte-for-byte reproducible
//! given identical inputs and seeds. `schema_version` gates forward
//! compatibility.

use crate::certifier::{Throughput, Witness};
use crate::finite_size::FluctuationSet;
use crate::protocol::SeedAccounting;
use crate::randtests::BatteryItem;
use crate::tomography::TestTally;
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SeedAccountingReport {
    pub bits_for_positions: u64,
    pub bits_for_states: u64,
    pub bits_for_extractor_seed: u64,
    pub total_consumed: u64,
}

impl From<&SeedAccounting> for SeedAccountingReport {
    fn from(a: &SeedAccounting) -> Self {
        Self {
            bits_for_positions: a.bits_for_positions,
            bits_for_states: a.bits_for_states,
            bits_for_extractor_seed: a.bits_for_extractor_seed,
            total_consumed: a.total_consumed(),
        }
    }
}

impl SeedAccountingReport {
    pub fn to_accounting(&self) -> SeedAccounting {
        SeedAccounting {
            bits_for_positions: self.bits_for_positions,
            bits_for_states: self.bits_for_states,
            bits_for_extractor_seed: self.bits_for_extractor_seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TallyReport {
    pub trials: [u64; 4],
    pub ones: [u64; 4],
    pub p_zero: [f64; 4],
    pub generation_trials: u64,
    pub generation_ones: u64,
    pub rounds: u64,
}

impl From<&TestTally> for TallyReport {
    fn from(t: &TestTally) -> Self {
        Self {
            trials: core::array::from_fn(|i| t.states[i].trials),
            ones: core::array::from_fn(|i| t.states[i].ones),
            p_zero: t.p_zero_all(),
            generation_trials: t.generation_trials,
            generation_ones: t.generation_ones,
            rounds: t.rounds,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ThetaReport {
    pub epsilon_theta: f64,
    pub thetas: [f64; 4],
    pub outcomes: [String; 4],
    /// Four states bounded on both sides.
    pub composed_failure_probability: f64,
}

impl From<&FluctuationSet> for ThetaReport {
    fn from(f: &FluctuationSet) -> Self {
        Self {
            epsilon_theta: f.epsilon_theta,
            thetas: f.thetas,
            outcomes: core::array::from_fn(|i| f.outcomes[i].label().to_string()),
            composed_failure_probability: f.composed_failure_probability(),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct WitnessReport {
    pub a0: f64,
    pub nx: f64,
    pub ny: f64,
    pub nz: f64,
}

impl From<Witness> for WitnessReport {
    fn from(w: Witness) -> Self {
        Self { a0: w.a0, nx: w.nx, ny: w.ny, nz: w.nz }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct OracleReport {
    pub grid_density: usize,
    pub value: f64,
    pub gap: f64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ThroughputReport {
    pub clock_hz: f64,
    pub rate_bps: f64,
    pub raw_bits: u64,
    pub extractable_bits: u64,
    pub extracted_bits_with_margin: u64,
    pub epsilon_extractor: f64,
    pub gain_protocol_only: f64,
    pub gain_with_extractor_seed: f64,
}

impl ThroughputReport {
    pub fn new(t: &Throughput, clock_hz: f64, raw_bits: u64, eps_ext: f64) -> Self {
        Self {
            clock_hz,
            rate_bps: t.rate_bps,
            raw_bits,
            extractable_bits: t.extractable_bits,
            extracted_bits_with_margin: t.extracted_bits_with_margin,
            epsilon_extractor: eps_ext,
            gain_protocol_only: t.gain_protocol_only,
            gain_with_extractor_seed: t.gain_with_extractor_seed,
        }
    }
}

/// The certificate: headline bound, witness, finite-size inputs, envelopes,
/// cross-checks, and accounting.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Certificate {
    pub schema_version: u32,
    /// Entropy functional of the headline bound.
    pub functional: String,
    pub mu: f64,
    /// Headline certified rate: the coherent-source minimization.
    pub r_bits_per_pulse: f64,
    pub witness: WitnessReport,
    pub feasible_points: u64,
    /// Objective at the exact tomography solution with zero deviations.
    pub theta_zero_envelope: f64,
    /// Worst-case closed-form route, same deviations, both functionals.
    pub qubit_route_shannon: Option<f64>,
    pub qubit_route_min_entropy: Option<f64>,
    /// Coherent route evaluated with the min-entropy functional.
    pub coherent_min_entropy: Option<f64>,
    pub tally: TallyReport,
    pub theta: ThetaReport,
    pub oracle: Option<OracleReport>,
    pub throughput: Option<ThroughputReport>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SimulationReport {
    pub schema_version: u32,
    pub n_trials: u64,
    pub n_test: u64,
    pub n_generation: u64,
    pub device: String,
    pub rng_seed_schedule: u64,
    pub rng_seed_device: u64,
    pub ones: u64,
    pub no_clicks: u64,
    pub seed_accounting: SeedAccountingReport,
    pub record_file: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ExtractionReport {
    pub schema_version: u32,
    pub input_bits: u64,
    pub output_bits: u64,
    pub entitled_bits: u64,
    pub blocks: u64,
    pub block_input_bits: u64,
    pub block_output_bits: u64,
    pub seed_reused: bool,
    pub seed_bits_consumed: u64,
    pub epsilon_extractor: f64,
    pub refused: bool,
    pub output_file: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BatteryItemReport {
    pub test: String,
    pub p_value: f64,
    pub pass: bool,
    pub proportion: f64,
    pub proportion_pass: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BatteryReport {
    pub schema_version: u32,
    pub bits_tested: u64,
    pub subsequence_bits: u64,
    pub subsequences: u64,
    pub items: Vec<BatteryItemReport>,
    pub all_pass: bool,
}

impl BatteryReport {
    pub fn from_items(items: &[BatteryItem], bits_tested: u64, subsequence_bits: u64) -> Self {
        let reports: Vec<BatteryItemReport> = items
            .iter()
            .map(|i| BatteryItemReport {
                test: i.verdict.test.to_string(),
                p_value: i.verdict.p_value,
                pass: i.verdict.pass,
                proportion: i.verdict.proportion,
                proportion_pass: i.verdict.proportion_pass,
            })
            .collect();
        let all_pass = reports.iter().all(|r| r.pass && r.proportion_pass);
        Self {
            schema_version: SCHEMA_VERSION,
            bits_tested,
            subsequence_bits,
            subsequences: if subsequence_bits == 0 { 0 } else { bits_tested / subsequence_bits },
            items: reports,
            all_pass,
        }
    }
}

/// Composite pipeline report with end-to-end seed/gain accounting.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PipelineReport {
    pub schema_version: u32,
    pub simulation: SimulationReport,
    pub certificate: Certificate,
    pub extraction: ExtractionReport,
    pub battery: BatteryReport,
    /// Final bits over every consumed seed bit, extraction included.
    pub end_to_end_gain: f64,
}

pub fn render<T: Serialize>(value: &T) -> Result<String, String> {
    toml::to_string_pretty(value).map_err(|e| e.to_string())
}

pub fn parse<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T, String> {
    toml::from_str(text).map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::finite_size::ThetaOutcome;

    fn sample_certificate() -> Certificate {
        let fluct = FluctuationSet {
            thetas: [1e-5, 2e-3, 1e-3, 1e-3],
            epsilon_theta: 1e-10,
            outcomes: [
                ThetaOutcome::CappedAtCeiling,
                ThetaOutcome::Solved,
                ThetaOutcome::Solved,
                ThetaOutcome::Solved,
            ],
        };
        Certificate {
            schema_version: SCHEMA_VERSION,
            functional: "shannon_binary".into(),
            mu: 0.06,
            r_bits_per_pulse: 2.0e-4,
            witness: WitnessReport { a0: 0.995, nx: 0.0, ny: 0.0, nz: 4.6e-3 },
            feasible_points: 12345,
            theta_zero_envelope: 5.48e-4,
            qubit_route_shannon: Some(4.9e-4),
            qubit_route_min_entropy: Some(4.0e-5),
            coherent_min_entropy: Some(1.5e-5),
            tally: TallyReport {
                trials: [10, 10, 10, 10],
                ones: [0, 1, 0, 0],
                p_zero: [1.0, 0.9, 1.0, 1.0],
                generation_trials: 100,
                generation_ones: 3,
                rounds: 1,
            },
            theta: (&fluct).into(),
            oracle: None,
            throughput: None,
            notes: vec!["example".into()],
        }
    }

    #[test]
    fn certificate_round_trips_and_is_stable() {
        let cert = sample_certificate();
        let text = render(&cert).unwrap();
        let again: Certificate = parse(&text).unwrap();
        assert_eq!(cert, again);
        // byte-for-byte reproducible rendering
        assert_eq!(text, render(&again).unwrap());
        assert!(text.contains("schema_version = 1"));
        assert!(text.contains("r_bits_per_pulse"));
    }

    #[test]
    fn parse_rejects_garbage() {
        assert!(parse::<Certificate>("not = toml [").is_err());
    }
}
