//! Pipeline orchestration: configuration, stage execution, and report
//! emission. The command-line front end is a thin wrapper over these
//! functions; tests drive them directly.

use crate::bits::{BitBuf, ChaChaBitSource};
use crate::certifier::{
    asymptotic_envelope, brute_force_bound, coherent_bound, qubit_bound, throughput_report,
    CertifyError, EntropyFunctional, GridProfile,
};
use crate::extractor::{extract_blocked, output_length, BlockSeedMode, ExtractError};
use crate::finite_size::{FluctuationError, FluctuationSet, ThetaOutcome};
use crate::protocol::{
    build_schedule, DeviceModel, PovmSequence, ProtocolError, Schedule, SeedAccounting,
    SourceModel, TrialMode,
};
use crate::qstate::{BlochVector, Povm};
use crate::randtests::{battery, RandTestError};
use crate::record::{RecordError, RecordReader, RecordWriter};
use crate::report::{
    render, BatteryReport, Certificate, ExtractionReport, OracleReport, PipelineReport,
    SeedAccountingReport, SimulationReport, ThroughputReport, SCHEMA_VERSION,
};
use crate::tomography::{tally, StateCount, TallyError, TestTally};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error(transparent)]
    Tally(#[from] TallyError),
    #[error(transparent)]
    Fluctuation(#[from] FluctuationError),
    #[error(transparent)]
    Certify(#[from] CertifyError),
    #[error(transparent)]
    Extract(#[from] ExtractError),
    #[error("certified rate is zero; nothing to extract")]
    NothingToExtract,
    #[error(transparent)]
    RandTest(#[from] RandTestError),
    #[error("statistical battery failed")]
    BatteryFailed,
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("report error: {0}")]
    Report(String),
}

impl PipelineError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            PipelineError::Config(_) => "E_CONFIG",
            PipelineError::Protocol(_) => "E_PROTOCOL",
            PipelineError::Record(_) => "E_RECORD",
            PipelineError::Tally(_) => "E_TALLY",
            PipelineError::Fluctuation(_) => "E_FLUCTUATION",
            PipelineError::Certify(_) => "E_CERTIFY",
            PipelineError::Extract(_) => "E_EXTRACT",
            PipelineError::NothingToExtract => "E_NOTHING_TO_EXTRACT",
            PipelineError::RandTest(_) => "E_RANDTEST",
            PipelineError::BatteryFailed => "E_BATTERY_FAILED",
            PipelineError::Io { .. } => "E_IO",
            PipelineError::Report(_) => "E_REPORT",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Protocol(_) => 3,
            PipelineError::Record(_) => 4,
            PipelineError::Tally(_) => 5,
            PipelineError::Fluctuation(_) => 6,
            PipelineError::Certify(_) => 7,
            PipelineError::Extract(_) => 8,
            PipelineError::NothingToExtract => 9,
            PipelineError::RandTest(_) => 10,
            PipelineError::BatteryFailed => 11,
            PipelineError::Io { .. } => 12,
            PipelineError::Report(_) => 13,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.to_path_buf(), source }
}

// ---------------------------------------------------------------------------
// configuration

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ProtocolConfig {
    pub n_trials: u64,
    pub n_test: u64,
    pub position_bits: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DeviceConfig {
    Honest { mu: f64, eta: f64, dark: f64, error: f64 },
    /// Constant or alternating POVM adversary; `a0`/`n` give one entry per
    /// POVM in play.
    Adversarial { strategy: String, a0: Vec<f64>, n: Vec<[f64; 3]> },
}

impl DeviceConfig {
    pub fn build(&self) -> Result<DeviceModel, PipelineError> {
        match self {
            DeviceConfig::Honest { mu, eta, dark, error } => {
                let m = SourceModel { mu: *mu, eta: *eta, dark: *dark, error: *error };
                m.validate()?;
                Ok(DeviceModel::Honest(m))
            }
            DeviceConfig::Adversarial { strategy, a0, n } => {
                if a0.len() != n.len() || a0.is_empty() {
                    return Err(PipelineError::Config(
                        "adversarial device needs matching non-empty a0/n lists".into(),
                    ));
                }
                let povms: Vec<Povm> = a0
                    .iter()
                    .zip(n)
                    .map(|(&a, v)| Povm { a0: a, n0: BlochVector { rx: v[0], ry: v[1], rz: v[2] } })
                    .collect();
                let seq = match (strategy.as_str(), povms.len()) {
                    ("constant", 1) => PovmSequence::Constant(povms[0]),
                    ("alternating", 2) => PovmSequence::Alternating(povms[0], povms[1]),
                    _ => {
                        return Err(PipelineError::Config(format!(
                            "strategy '{strategy}' incompatible with {} POVM(s)",
                            povms.len()
                        )))
                    }
                };
                seq.validate()?;
                Ok(DeviceModel::Adversarial(seq))
            }
        }
    }

    fn describe(&self) -> String {
        match self {
            DeviceConfig::Honest { mu, eta, dark, error } => {
                format!("honest(mu={mu},eta={eta},dark={dark},error={error})")
            }
            DeviceConfig::Adversarial { strategy, a0, .. } => {
                format!("adversarial({strategy},{} povm)", a0.len())
            }
        }
    }
}

/// Direct tally injection: published counts certified without simulating.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct InjectionConfig {
    pub trials: [u64; 4],
    pub ones: [u64; 4],
    pub generation_trials: u64,
    pub generation_ones: u64,
    pub rounds: u64,
}

impl InjectionConfig {
    pub fn tally(&self) -> Result<TestTally, PipelineError> {
        let states: [StateCount; 4] =
            core::array::from_fn(|i| StateCount { trials: self.trials[i], ones: self.ones[i] });
        Ok(TestTally::from_counts(
            states,
            self.generation_trials,
            self.generation_ones,
            self.rounds,
        )?)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CertifyConfig {
    pub epsilon_theta: f64,
    pub functional: String,
    pub mu: f64,
    pub clock_hz: f64,
    pub oracle_check: bool,
    pub oracle_grid_density: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ExtractConfig {
    pub epsilon: f64,
    pub block_bits: u64,
    /// 0 derives the per-block output from the certificate.
    pub output_bits_per_block: u64,
    pub reuse_seed: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RandTestConfig {
    pub subsequence_bits: u64,
    pub block_frequency_block: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SeedsConfig {
    pub schedule: u64,
    pub device: u64,
    pub toeplitz: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PipelineConfig {
    pub protocol: ProtocolConfig,
    pub device: DeviceConfig,
    pub injection: Option<InjectionConfig>,
    pub certify: CertifyConfig,
    pub extract: ExtractConfig,
    pub test: RandTestConfig,
    pub seeds: SeedsConfig,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let cfg: PipelineConfig =
            toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let p = &self.protocol;
        if p.position_bits == 0 || p.position_bits > 63 {
            return Err(PipelineError::Config("position_bits must be in 1..=63".into()));
        }
        if p.n_trials > 1u64 << p.position_bits {
            return Err(PipelineError::Config(format!(
                "{} trials do not fit in {} position bits",
                p.n_trials, p.position_bits
            )));
        }
        if p.n_test > p.n_trials {
            return Err(PipelineError::Config("n_test exceeds n_trials".into()));
        }
        self.device.build()?;
        if !(self.certify.epsilon_theta > 0.0 && self.certify.epsilon_theta < 1.0) {
            return Err(PipelineError::Config("epsilon_theta outside (0, 1)".into()));
        }
        EntropyFunctional::parse(&self.certify.functional)?;
        if !(self.certify.mu >= 0.0) {
            return Err(PipelineError::Config("mu must be >= 0".into()));
        }
        if self.certify.oracle_check && self.certify.oracle_grid_density < 10 {
            return Err(PipelineError::Config("oracle_grid_density below 10".into()));
        }
        if !(self.extract.epsilon > 0.0 && self.extract.epsilon < 1.0) {
            return Err(PipelineError::Config("extract.epsilon outside (0, 1)".into()));
        }
        if self.extract.block_bits == 0 {
            return Err(PipelineError::Config("extract.block_bits must be positive".into()));
        }
        if self.extract.output_bits_per_block > self.extract.block_bits {
            return Err(PipelineError::Config(
                "output_bits_per_block exceeds block_bits".into(),
            ));
        }
        if self.test.subsequence_bits == 0 || self.test.block_frequency_block == 0 {
            return Err(PipelineError::Config("test lengths must be positive".into()));
        }
        Ok(())
    }

    pub fn functional(&self) -> EntropyFunctional {
        EntropyFunctional::parse(&self.certify.functional).expect("validated")
    }
}

// ---------------------------------------------------------------------------
// stages

fn write_text(path: &Path, text: &str) -> Result<(), PipelineError> {
    fs::write(path, text).map_err(io_err(path))
}

pub fn write_report<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    write_text(path, &render(value).map_err(PipelineError::Report)?)
}

/// Stage 1: schedule + device simulation into a record file.
pub fn run_simulate(
    config: &PipelineConfig,
    record_path: &Path,
) -> Result<(SimulationReport, SeedAccounting), PipelineError> {
    let device = config.device.build()?;
    let mut seed_source = ChaChaBitSource::new(config.seeds.schedule);
    let (schedule, accounting) = build_schedule(
        &mut seed_source,
        config.protocol.n_trials,
        config.protocol.n_test,
        config.protocol.position_bits,
    )?;
    let mut writer = RecordWriter::create(record_path, schedule.n_trials())?;
    let mut write_error: Option<RecordError> = None;
    let summary = crate::protocol::simulate(&schedule, &device, config.seeds.device, |rec| {
        if write_error.is_none() {
            if let Err(e) = writer.push(&rec) {
                write_error = Some(e);
            }
        }
    })?;
    if let Some(e) = write_error {
        return Err(e.into());
    }
    writer.finish()?;
    let report = SimulationReport {
        schema_version: SCHEMA_VERSION,
        n_trials: schedule.n_trials(),
        n_test: schedule.n_test(),
        n_generation: schedule.n_generation(),
        device: config.device.describe(),
        rng_seed_schedule: config.seeds.schedule,
        rng_seed_device: config.seeds.device,
        ones: summary.ones,
        no_clicks: summary.no_clicks,
        seed_accounting: (&accounting).into(),
        record_file: record_path.display().to_string(),
    };
    Ok((report, accounting))
}

/// Reads a record file into a tally (rounds = 1).
pub fn tally_record_file(record_path: &Path) -> Result<TestTally, PipelineError> {
    let mut reader = RecordReader::open(record_path)?;
    let mut acc = crate::tomography::TallyAccumulator::new();
    reader.for_each(|mode, bit| acc.add(mode, bit))?;
    Ok(acc.finish()?)
}

/// Stage 2: certification. The tally comes from the record file unless the
/// config injects published counts directly.
pub fn run_certify(
    config: &PipelineConfig,
    tally_input: &TestTally,
    seed_accounting: Option<&SeedAccounting>,
) -> Result<Certificate, PipelineError> {
    let functional = config.functional();
    let mu = config.certify.mu;
    let p = tally_input.p_zero_all();
    let n_test = tally_input.per_round_test_counts();
    let n_gen = tally_input.per_round_generation_count();
    let fluct = FluctuationSet::solve(config.certify.epsilon_theta, &p, &n_test, n_gen)?;

    let mut notes = vec![
        "constraint upper bound uses the multi-photon mass 1 - (1+mu) e^(-mu)".to_string(),
        format!(
            "deviations solved per round: N_i = {:?}, N_gen = {:.3e}",
            n_test.map(|v| v.round()),
            n_gen
        ),
        "deviations applied symmetrically on both sides of each p_i".to_string(),
    ];
    for (i, outcome) in fluct.outcomes.iter().enumerate() {
        if *outcome == ThetaOutcome::CappedAtCeiling {
            notes.push(format!(
                "theta{} capped at feasibility ceiling (1 - p{})/2 = {:.6e}",
                i + 1,
                i + 1,
                fluct.thetas[i]
            ));
        }
    }

    let bound = coherent_bound(&p, &fluct, mu, functional, GridProfile::DEFAULT)?;
    let envelope = asymptotic_envelope(&p, mu, functional)?;
    let qubit_shannon = qubit_bound(&p, &fluct, EntropyFunctional::ShannonBinary).ok();
    let qubit_min_entropy = qubit_bound(&p, &fluct, EntropyFunctional::MinEntropy).ok();
    let coherent_min_entropy = if functional == EntropyFunctional::MinEntropy {
        Some(bound.value)
    } else {
        coherent_bound(&p, &fluct, mu, EntropyFunctional::MinEntropy, GridProfile::DEFAULT)
            .ok()
            .map(|b| b.value)
    };

    let oracle = if config.certify.oracle_check {
        let density = config.certify.oracle_grid_density;
        let oracle = brute_force_bound(&p, &fluct, mu, functional, density)?;
        let tolerance = oracle_tolerance(&p, &fluct, mu, functional, density, &oracle)?;
        let gap = (bound.value - oracle.value).abs();
        if gap > tolerance {
            return Err(CertifyError::BadParameter(format!(
                "optimizer/oracle disagreement {gap:.3e} exceeds grid tolerance {tolerance:.3e}"
            ))
            .into());
        }
        Some(OracleReport { grid_density: density, value: oracle.value, gap, tolerance })
    } else {
        None
    };

    let throughput = seed_accounting.map(|acct| {
        let t = throughput_report(
            bound.value,
            config.certify.clock_hz,
            acct,
            tally_input.generation_trials,
            config.extract.epsilon,
        );
        ThroughputReport::new(&t, config.certify.clock_hz, tally_input.generation_trials, config.extract.epsilon)
    });

    Ok(Certificate {
        schema_version: SCHEMA_VERSION,
        functional: functional.label().to_string(),
        mu,
        r_bits_per_pulse: bound.value,
        witness: bound.witness.into(),
        feasible_points: bound.feasible_points,
        theta_zero_envelope: envelope,
        qubit_route_shannon: qubit_shannon.map(|b| b.value),
        qubit_route_min_entropy: qubit_min_entropy.map(|b| b.value),
        coherent_min_entropy,
        tally: tally_input.into(),
        theta: (&fluct).into(),
        oracle,
        throughput,
        notes,
    })
}

/// Grid tolerance for the optimizer/oracle comparison: the objective's local
/// variation across one oracle cell around the oracle minimizer, summed over
/// the three grid axes, plus a small absolute floor.
pub fn oracle_tolerance(
    p: &[f64; 4],
    fluct: &FluctuationSet,
    mu: f64,
    functional: EntropyFunctional,
    density: usize,
    oracle: &crate::certifier::CertBound,
) -> Result<f64, PipelineError> {
    let region = crate::certifier::FeasibleRegion::new(p, &fluct.thetas, mu)?;
    let w = oracle.witness;
    let a_box = region.a0_box();
    let h_a = (a_box.hi - a_box.lo) / (density - 1).max(1) as f64;
    // |n| boxes are at most [-1, 1]
    let h_n = 2.0 / (density - 1).max(1) as f64;
    let f = |a0: f64, ny: f64, nz: f64| {
        let s = ny * ny + nz * nz;
        let root = (1.0 - s).max(0.0).sqrt();
        2.0 * a0 * region.kappa * functional.eval((1.0 + root) / 2.0)
    };
    let base = f(w.a0, w.ny, w.nz);
    let var = (f(w.a0 + h_a, w.ny, w.nz) - base).abs()
        + (f(w.a0 - h_a, w.ny, w.nz) - base).abs()
        + (f(w.a0, w.ny + h_n, w.nz) - base).abs()
        + (f(w.a0, w.ny - h_n, w.nz) - base).abs()
        + (f(w.a0, w.ny, w.nz + h_n) - base).abs()
        + (f(w.a0, w.ny, w.nz - h_n) - base).abs();
    Ok(var + 1e-9)
}

/// Raw-bit extraction input: the generation-mode outcome bits in index order.
pub fn generation_bits(record_path: &Path) -> Result<BitBuf, PipelineError> {
    let mut reader = RecordReader::open(record_path)?;
    let mut bits = BitBuf::new();
    reader.for_each(|mode, bit| {
        if mode == TrialMode::Generation {
            bits.push(bit);
        }
    })?;
    Ok(bits)
}

/// Stage 3: Toeplitz extraction of the generation bits under the certified
/// rate. Returns the report and the extracted bits.
pub fn run_extract(
    config: &PipelineConfig,
    certificate: &Certificate,
    raw: &BitBuf,
    output_path: &Path,
) -> Result<(ExtractionReport, BitBuf), PipelineError> {
    let r = certificate.r_bits_per_pulse;
    let eps = config.extract.epsilon;
    let entitled = output_length(raw.len() as u64, r, eps);
    let block_n = config.extract.block_bits as usize;
    let block_m = if config.extract.output_bits_per_block > 0 {
        config.extract.output_bits_per_block as usize
    } else {
        output_length(config.extract.block_bits, r, eps) as usize
    };
    if entitled == 0 || block_m == 0 {
        let report = ExtractionReport {
            schema_version: SCHEMA_VERSION,
            input_bits: raw.len() as u64,
            output_bits: 0,
            entitled_bits: entitled,
            blocks: 0,
            block_input_bits: block_n as u64,
            block_output_bits: 0,
            seed_reused: config.extract.reuse_seed,
            seed_bits_consumed: 0,
            epsilon_extractor: eps,
            refused: true,
            output_file: output_path.display().to_string(),
        };
        return Err(PipelineError::NothingToExtract).map_err(|e| {
            // leave the refusal report behind for diagnostics
            let _ = write_report(output_path.with_extension("report.toml").as_path(), &report);
            e
        });
    }
    // The blocked run must stay within the certified entitlement.
    let planned: u64 = {
        let full = raw.len() / block_n;
        let tail = raw.len() % block_n;
        full as u64 * block_m as u64 + (block_m * tail / block_n) as u64
    };
    if planned > entitled {
        return Err(PipelineError::Config(format!(
            "planned output {planned} bits exceeds certified entitlement {entitled}"
        )));
    }

    let mut fresh_source = ChaChaBitSource::new(config.seeds.toeplitz);
    let mode = if config.extract.reuse_seed {
        BlockSeedMode::Reuse(BitBuf::random(config.seeds.toeplitz, block_m + block_n - 1))
    } else {
        BlockSeedMode::Fresh(&mut fresh_source)
    };
    let blocked = extract_blocked(raw, block_n, block_m, mode)?;
    fs::write(output_path, blocked.bits.to_bytes()).map_err(io_err(output_path))?;
    let report = ExtractionReport {
        schema_version: SCHEMA_VERSION,
        input_bits: raw.len() as u64,
        output_bits: blocked.bits.len() as u64,
        entitled_bits: entitled,
        blocks: blocked.blocks as u64,
        block_input_bits: block_n as u64,
        block_output_bits: block_m as u64,
        seed_reused: config.extract.reuse_seed,
        seed_bits_consumed: blocked.seed_bits_consumed,
        epsilon_extractor: eps,
        refused: false,
        output_file: output_path.display().to_string(),
    };
    Ok((report, blocked.bits))
}

/// Stage 4: statistical battery over the final bits.
pub fn run_test(config: &PipelineConfig, bits: &BitBuf) -> Result<BatteryReport, PipelineError> {
    let items = battery(
        bits,
        config.test.subsequence_bits as usize,
        config.test.block_frequency_block as usize,
    )?;
    Ok(BatteryReport::from_items(
        &items,
        bits.len() as u64,
        config.test.subsequence_bits,
    ))
}

/// All stages chained in a working directory; reports are written next to
/// their artifacts. The battery failing is an error (exit code), matching
/// the rule that exit 0 means a fully healthy pipeline.
pub fn run_pipeline(config: &PipelineConfig, workdir: &Path) -> Result<PipelineReport, PipelineError> {
    fs::create_dir_all(workdir).map_err(io_err(workdir))?;
    let record_path = workdir.join("trials.rec");
    let bits_path = workdir.join("output.bits");

    let (sim_report, mut accounting) = run_simulate(config, &record_path)?;
    write_report(&workdir.join("simulate.toml"), &sim_report)?;

    let tally_input = tally_record_file(&record_path)?;
    let certificate = run_certify(config, &tally_input, Some(&accounting))?;
    write_report(&workdir.join("certificate.toml"), &certificate)?;

    let raw = generation_bits(&record_path)?;
    let (mut extraction, bits) = run_extract(config, &certificate, &raw, &bits_path)?;
    // extraction consumed seed too; fold it into the end-to-end accounting
    accounting.bits_for_extractor_seed = extraction.seed_bits_consumed;
    extraction.seed_bits_consumed = accounting.bits_for_extractor_seed;
    write_report(&workdir.join("extract.toml"), &extraction)?;

    let battery_report = run_test(config, &bits)?;
    write_report(&workdir.join("battery.toml"), &battery_report)?;

    let end_to_end_gain = if accounting.total_consumed() == 0 {
        0.0
    } else {
        extraction.output_bits as f64 / accounting.total_consumed() as f64
    };
    let mut sim_report = sim_report;
    sim_report.seed_accounting = SeedAccountingReport::from(&accounting);
    let report = PipelineReport {
        schema_version: SCHEMA_VERSION,
        simulation: sim_report,
        certificate,
        extraction,
        battery: battery_report.clone(),
        end_to_end_gain,
    };
    write_report(&workdir.join("pipeline.toml"), &report)?;
    if !battery_report.all_pass {
        return Err(PipelineError::BatteryFailed);
    }
    Ok(report)
}

/// Convenience: schedule reconstruction for tooling.
pub fn schedule_from_config(config: &PipelineConfig) -> Result<(Schedule, SeedAccounting), PipelineError> {
    let mut src = ChaChaBitSource::new(config.seeds.schedule);
    Ok(build_schedule(
        &mut src,
        config.protocol.n_trials,
        config.protocol.n_test,
        config.protocol.position_bits,
    )?)
}

/// Tally from either injection or a record stream of `(mode, bit)` pairs.
pub fn tally_from_records<I>(records: I) -> Result<TestTally, PipelineError>
where
    I: IntoIterator<Item = (TrialMode, bool)>,
{
    Ok(tally(records)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn test_config() -> PipelineConfig {
        PipelineConfig {
            protocol: ProtocolConfig { n_trials: 1 << 16, n_test: 1 << 10, position_bits: 16 },
            device: DeviceConfig::Honest { mu: 0.5, eta: 0.9, dark: 1e-5, error: 0.005 },
            injection: None,
            certify: CertifyConfig {
                epsilon_theta: 1e-10,
                functional: "shannon_binary".into(),
                mu: 0.5,
                clock_hz: 25e6,
                oracle_check: false,
                oracle_grid_density: 256,
            },
            extract: ExtractConfig {
                epsilon: 2f64.powi(-100),
                block_bits: 1 << 14,
                output_bits_per_block: 256,
                reuse_seed: true,
            },
            test: RandTestConfig { subsequence_bits: 1 << 10, block_frequency_block: 128 },
            seeds: SeedsConfig { schedule: 1, device: 2, toeplitz: 3 },
        }
    }

    #[test]
    fn config_round_trip_and_validation() {
        let cfg = test_config();
        let text = toml::to_string_pretty(&cfg).unwrap();
        let parsed = PipelineConfig::from_toml(&text).unwrap();
        assert_eq!(cfg, parsed);

        let mut bad = cfg.clone();
        bad.protocol.position_bits = 8; // 2^16 trials do not fit
        assert!(matches!(
            bad.validate().unwrap_err(),
            PipelineError::Config(_)
        ));

        let mut bad = cfg.clone();
        bad.certify.functional = "nonsense".into();
        assert!(bad.validate().is_err());
    }

    #[test]
    fn error_codes_are_stable() {
        assert_eq!(PipelineError::Config("x".into()).code(), "E_CONFIG");
        assert_eq!(PipelineError::NothingToExtract.code(), "E_NOTHING_TO_EXTRACT");
        assert_eq!(PipelineError::BatteryFailed.exit_code(), 11);
    }

    #[test]
    fn injection_tally_builds() {
        let inj = InjectionConfig {
            trials: [820318, 818254, 819125, 819103],
            ones: [121, 13067, 6431, 6403],
            generation_trials: 100 * ((1u64 << 34) - (1u64 << 15)),
            generation_ones: 0,
            rounds: 100,
        };
        let tally = inj.tally().unwrap();
        assert_eq!(tally.rounds, 100);
        assert!((tally.per_round_test_counts()[0] - 8203.18).abs() < 1e-9);
    }
}
