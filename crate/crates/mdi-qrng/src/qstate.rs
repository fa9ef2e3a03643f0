//! Qubit states on the Bloch sphere and the binary measurement model.
//!
//! The untrusted measurement is a two-outcome POVM `{F0, F1}` with
//! `F0 = a0 (I + n0 . sigma)` and `F1 = (1 - a0)(I + n1 . sigma)`, where
//! completeness forces `a0 n0 + a1 n1 = 0`. Outcome probabilities on a state
//! with Bloch vector `r` reduce to the affine form `P(0|r) = a0 (1 + n0 . r)`.

use thiserror::Error;

/// Tolerance for POVM parameter checks.
pub const POVM_TOL: f64 = 1e-9;
/// Slack allowed on Bloch-vector norms (double-precision round-off).
pub const NORM_SLACK: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum QstateError {
    #[error("Bloch vector norm {norm} exceeds 1")]
    StateOutsideSphere { norm: f64 },
    #[error("invalid POVM: {0:?}")]
    InvalidPovm(Vec<PovmViolation>),
    #[error("complement undefined: a0 = 1 leaves no weight for F1")]
    DegenerateComplement,
}

/// Real 3-vector representing a qubit state or a measurement direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlochVector {
    pub rx: f64,
    pub ry: f64,
    pub rz: f64,
}

impl BlochVector {
    pub const ZERO: BlochVector = BlochVector { rx: 0.0, ry: 0.0, rz: 0.0 };

    /// Checked constructor for state vectors (norm at most 1 within slack).
    pub fn new(rx: f64, ry: f64, rz: f64) -> Result<Self, QstateError> {
        let v = Self { rx, ry, rz };
        if v.norm_sq() > 1.0 + NORM_SLACK {
            return Err(QstateError::StateOutsideSphere { norm: v.norm() });
        }
        Ok(v)
    }

    pub fn norm_sq(&self) -> f64 {
        self.rx * self.rx + self.ry * self.ry + self.rz * self.rz
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn dot(&self, other: &BlochVector) -> f64 {
        self.rx * other.rx + self.ry * other.ry + self.rz * other.rz
    }

    pub fn scale(&self, s: f64) -> BlochVector {
        BlochVector { rx: self.rx * s, ry: self.ry * s, rz: self.rz * s }
    }
}

/// The four probe states sent in test mode.
///
/// `Z0`/`Z1` are the computational-basis states, `XPlus` and `YPlus` the
/// +1 eigenstates of X and Y.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TestStateId {
    Z0,
    Z1,
    XPlus,
    YPlus,
}

impl TestStateId {
    pub const ALL: [TestStateId; 4] =
        [TestStateId::Z0, TestStateId::Z1, TestStateId::XPlus, TestStateId::YPlus];

    /// Canonical position in tallies and tomography formulas.
    pub fn index(self) -> usize {
        match self {
            TestStateId::Z0 => 0,
            TestStateId::Z1 => 1,
            TestStateId::XPlus => 2,
            TestStateId::YPlus => 3,
        }
    }

    pub fn from_index(i: usize) -> Option<TestStateId> {
        TestStateId::ALL.get(i).copied()
    }

    pub fn label(self) -> &'static str {
        match self {
            TestStateId::Z0 => "z0",
            TestStateId::Z1 => "z1",
            TestStateId::XPlus => "x+",
            TestStateId::YPlus => "y+",
        }
    }

    /// Unit Bloch vector of the probe state.
    pub fn bloch(self) -> BlochVector {
        match self {
            TestStateId::Z0 => BlochVector { rx: 0.0, ry: 0.0, rz: 1.0 },
            TestStateId::Z1 => BlochVector { rx: 0.0, ry: 0.0, rz: -1.0 },
            TestStateId::XPlus => BlochVector { rx: 1.0, ry: 0.0, rz: 0.0 },
            TestStateId::YPlus => BlochVector { rx: 0.0, ry: 1.0, rz: 0.0 },
        }
    }
}

/// The state emitted in generation mode, `|+>`.
pub const GENERATION_STATE: BlochVector = BlochVector { rx: 1.0, ry: 0.0, rz: 0.0 };

/// Binary qubit POVM `{F0, F1}` parametrized by the `F0` element.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Povm {
    pub a0: f64,
    pub n0: BlochVector,
}

/// One violated POVM constraint; `validate_povm` collects these instead of
/// aborting so diagnostics can show everything that is wrong at once.
#[derive(Debug, Clone, PartialEq)]
pub enum PovmViolation {
    /// `a0` outside `[0, 1]`.
    WeightOutOfRange { a0: f64 },
    /// `|n0| > 1`.
    DirectionTooLong { norm: f64 },
    /// Implied `n1 = -a0 n0 / (1 - a0)` has `|n1| > 1`
    /// (equivalently `a0 |n0| > 1 - a0`).
    ComplementTooLong { norm: f64 },
}

impl std::fmt::Display for PovmViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PovmViolation::WeightOutOfRange { a0 } => write!(f, "a0 = {a0} outside [0, 1]"),
            PovmViolation::DirectionTooLong { norm } => write!(f, "|n0| = {norm} > 1"),
            PovmViolation::ComplementTooLong { norm } => write!(f, "|n1| = {norm} > 1"),
        }
    }
}

/// Checks every POVM constraint within `POVM_TOL`; returns the violations.
pub fn validate_povm(povm: &Povm) -> Vec<PovmViolation> {
    let mut v = Vec::new();
    let a0 = povm.a0;
    if !(-POVM_TOL..=1.0 + POVM_TOL).contains(&a0) {
        v.push(PovmViolation::WeightOutOfRange { a0 });
    }
    let n0 = povm.n0.norm();
    if n0 > 1.0 + POVM_TOL {
        v.push(PovmViolation::DirectionTooLong { norm: n0 });
    }
    // |n1| <= 1 reads a0 |n0| <= 1 - a0; at a0 = 1 it forces |n0| = 0.
    let a1 = 1.0 - a0;
    if a0 * n0 > a1 + POVM_TOL {
        let n1 = if a1 > 0.0 { a0 * n0 / a1 } else { f64::INFINITY };
        v.push(PovmViolation::ComplementTooLong { norm: n1 });
    }
    v
}

impl Povm {
    /// Checked constructor.
    pub fn new(a0: f64, n0: BlochVector) -> Result<Self, QstateError> {
        let povm = Self { a0, n0 };
        let violations = validate_povm(&povm);
        if violations.is_empty() {
            Ok(povm)
        } else {
            Err(QstateError::InvalidPovm(violations))
        }
    }

    /// The always-'0' device: `F0 = I`. This is the zero-randomness limit and
    /// must stay representable.
    pub fn always_zero() -> Self {
        Self { a0: 1.0, n0: BlochVector::ZERO }
    }

    /// Ideal projective measurement along `axis`.
    pub fn projective(axis: BlochVector) -> Result<Self, QstateError> {
        Povm::new(0.5, axis)
    }

    pub fn a1(&self) -> f64 {
        1.0 - self.a0
    }

    /// Direction of `F1`; `None` in the degenerate `a0 = 1` case.
    pub fn n1(&self) -> Option<BlochVector> {
        let a1 = self.a1();
        if a1 <= 0.0 {
            if self.n0.norm() <= POVM_TOL {
                Some(BlochVector::ZERO)
            } else {
                None
            }
        } else {
            Some(self.n0.scale(-self.a0 / a1))
        }
    }

    /// The POVM with outcomes swapped, `{F1, F0}`.
    pub fn complement(&self) -> Result<Povm, QstateError> {
        let n1 = self.n1().ok_or(QstateError::DegenerateComplement)?;
        Ok(Povm { a0: self.a1(), n0: n1 })
    }
}

/// `P(0 | state) = a0 (1 + n0 . r)`, validated and clamped to `[0, 1]`
/// against round-off.
pub fn outcome_zero_prob(povm: &Povm, state: &BlochVector) -> Result<f64, QstateError> {
    let violations = validate_povm(povm);
    if !violations.is_empty() {
        return Err(QstateError::InvalidPovm(violations));
    }
    if state.norm_sq() > 1.0 + NORM_SLACK {
        return Err(QstateError::StateOutsideSphere { norm: state.norm() });
    }
    Ok((povm.a0 * (1.0 + povm.n0.dot(state))).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bv(x: f64, y: f64, z: f64) -> BlochVector {
        BlochVector { rx: x, ry: y, rz: z }
    }

    #[test]
    fn probe_states_map_to_axes() {
        assert_eq!(TestStateId::Z0.bloch(), bv(0.0, 0.0, 1.0));
        assert_eq!(TestStateId::Z1.bloch(), bv(0.0, 0.0, -1.0));
        assert_eq!(TestStateId::XPlus.bloch(), bv(1.0, 0.0, 0.0));
        assert_eq!(TestStateId::YPlus.bloch(), bv(0.0, 1.0, 0.0));
        for (i, s) in TestStateId::ALL.into_iter().enumerate() {
            assert_eq!(s.index(), i);
            assert_eq!(TestStateId::from_index(i), Some(s));
            assert!((s.bloch().norm() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn projective_z_probabilities() {
        let povm = Povm::projective(bv(0.0, 0.0, 1.0)).unwrap();
        assert_eq!(outcome_zero_prob(&povm, &bv(0.0, 0.0, 1.0)).unwrap(), 1.0);
        assert_eq!(outcome_zero_prob(&povm, &bv(1.0, 0.0, 0.0)).unwrap(), 0.5);
    }

    #[test]
    fn identity_element_always_answers_zero() {
        let povm = Povm::always_zero();
        for s in TestStateId::ALL {
            assert_eq!(outcome_zero_prob(&povm, &s.bloch()).unwrap(), 1.0);
        }
    }

    #[test]
    fn validation_flags_unbalanced_direction() {
        // a0 |n0| = 0.9 > 1 - a0 = 0.1, so F1 would not be positive.
        let v = validate_povm(&Povm { a0: 0.9, n0: bv(0.0, 0.0, 1.0) });
        assert_eq!(v.len(), 1);
        match &v[0] {
            PovmViolation::ComplementTooLong { norm } => assert!((norm - 9.0).abs() < 1e-12),
            other => panic!("unexpected violation {other:?}"),
        }
    }

    #[test]
    fn validation_accepts_reconstruction_scale_parameters() {
        // Near-identity device with a small tilt; a0 |n0| stays below 1 - a0.
        let povm = Povm { a0: 0.99194, n0: bv(2.09e-4, 2.43e-4, 7.975e-3) };
        assert!(validate_povm(&povm).is_empty());
        assert!(povm.a0 * povm.n0.norm() <= 1.0 - povm.a0);
    }

    #[test]
    fn complement_probabilities_sum_to_one() {
        let povm = Povm::new(0.73, bv(0.1, -0.2, 0.25)).unwrap();
        let comp = povm.complement().unwrap();
        for s in TestStateId::ALL {
            let p0 = outcome_zero_prob(&povm, &s.bloch()).unwrap();
            let p1 = outcome_zero_prob(&comp, &s.bloch()).unwrap();
            assert!((p0 + p1 - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn outcome_prob_is_affine_in_the_state() {
        let povm = Povm::new(0.6, bv(0.2, 0.1, 0.4)).unwrap();
        let r1 = bv(0.3, -0.5, 0.1);
        let r2 = bv(-0.2, 0.4, 0.6);
        for k in 0..=10 {
            let lam = k as f64 / 10.0;
            let mix = bv(
                lam * r1.rx + (1.0 - lam) * r2.rx,
                lam * r1.ry + (1.0 - lam) * r2.ry,
                lam * r1.rz + (1.0 - lam) * r2.rz,
            );
            let lhs = outcome_zero_prob(&povm, &mix).unwrap();
            let rhs = lam * outcome_zero_prob(&povm, &r1).unwrap()
                + (1.0 - lam) * outcome_zero_prob(&povm, &r2).unwrap();
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_state_outside_sphere() {
        let povm = Povm::projective(bv(0.0, 0.0, 1.0)).unwrap();
        assert!(outcome_zero_prob(&povm, &bv(1.0, 1.0, 1.0)).is_err());
    }
}
