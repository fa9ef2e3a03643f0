//! Simulation and post-processing for measurement-device-independent
//! quantum random number generation.
//!
//! The pipeline: schedule generation/test trials with exact seed accounting
//! (`protocol`), simulate honest or adversarial detection devices against
//! the schedule, aggregate test statistics and reconstruct the measurement
//! POVM (`tomography`), solve finite-size deviations (`finite_size`), lower
//! bound the certifiable randomness for qubit and weak-coherent sources
//! (`certifier`), extract final bits with Toeplitz hashing (`extractor`),
//! and validate the output with a statistical battery (`randtests`).
//! `pipeline` wires the stages together behind the command-line front end.

pub mod bits;
pub mod certifier;
pub mod extractor;
pub mod finite_size;
pub mod pipeline;
pub mod protocol;
pub mod qstate;
pub mod randtests;
pub mod record;
pub mod report;
pub mod tomography;

pub use certifier::{
    brute_force_bound, coherent_bound, optimize_mu, qubit_bound, throughput_report, CertBound,
    EntropyFunctional, FeasibleRegion, GridProfile,
};
pub use finite_size::{binary_entropy, solve_theta, xi, FluctuationSet};
pub use protocol::{build_schedule, DeviceModel, Schedule, SeedAccounting, SourceModel};
pub use qstate::{outcome_zero_prob, validate_povm, BlochVector, Povm, TestStateId};
pub use tomography::{reconstruct, tally, PovmEstimate, TestTally};
