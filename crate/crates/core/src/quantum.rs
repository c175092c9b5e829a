//! Two-qubit state algebra for the polarization/time-bin pair, Born-rule
//! outcome probabilities and the information-theoretic security bounds.
//!
//! Amplitudes are ordered `(H0, H1, V0, V1)`: Alice's polarization qubit is
//! the major index (H = 0, V = 1), Bob's time-bin qubit the minor index
//! (|0⟩ = early, |1⟩ = late).

use std::f64::consts::{FRAC_1_SQRT_2, SQRT_2};
use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Normalization tolerance for state vectors and Bloch vectors.
pub const NORM_TOLERANCE: f64 = 1e-12;

/// Slack allowed above the Tsirelson bound before an S value is rejected.
pub const TSIRELSON_TOLERANCE: f64 = 1e-9;

/// Tsirelson bound 2√2.
pub const TSIRELSON: f64 = 2.0 * SQRT_2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuantumError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

fn invalid(msg: impl Into<String>) -> QuantumError {
    QuantumError::InvalidArgument(msg.into())
}

/// Joint pure state of Alice's polarization qubit and Bob's time-bin qubit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoQubitState {
    amps: [Complex64; 4],
}

impl TwoQubitState {
    /// Builds a state from amplitudes that must already be normalized.
    pub fn new(amps: [Complex64; 4]) -> Result<Self, QuantumError> {
        if amps.iter().any(|a| !a.re.is_finite() || !a.im.is_finite()) {
            return Err(invalid("non-finite amplitude"));
        }
        let norm: f64 = amps.iter().map(|a| a.norm_sqr()).sum();
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(invalid(format!("state norm {norm} differs from 1")));
        }
        Ok(Self { amps })
    }

    /// Rescales arbitrary nonzero amplitudes to unit norm.
    pub fn normalized(amps: [Complex64; 4]) -> Result<Self, QuantumError> {
        let norm: f64 = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if !norm.is_finite() || norm == 0.0 {
            return Err(invalid("cannot normalize a zero or non-finite vector"));
        }
        Self::new(amps.map(|a| a / norm))
    }

    /// The hybrid entangled state `(|H0⟩ + e^{iφ}|V1⟩)/√2`.
    pub fn hybrid(phase: f64) -> Result<Self, QuantumError> {
        if !phase.is_finite() {
            return Err(invalid(format!("phase must be finite, got {phase}")));
        }
        let zero = Complex64::new(0.0, 0.0);
        Ok(Self {
            amps: [
                Complex64::new(FRAC_1_SQRT_2, 0.0),
                zero,
                zero,
                Complex64::from_polar(FRAC_1_SQRT_2, phase),
            ],
        })
    }

    /// Separable state `|alice⟩ ⊗ |bob⟩` from two single-qubit vectors.
    pub fn product(alice: [Complex64; 2], bob: [Complex64; 2]) -> Result<Self, QuantumError> {
        Self::normalized([
            alice[0] * bob[0],
            alice[0] * bob[1],
            alice[1] * bob[0],
            alice[1] * bob[1],
        ])
    }

    /// `|H⟩|0⟩`
    pub fn h0() -> Self {
        Self::basis(0)
    }

    /// `|H⟩|1⟩`
    pub fn h1() -> Self {
        Self::basis(1)
    }

    /// `|V⟩|0⟩`
    pub fn v0() -> Self {
        Self::basis(2)
    }

    fn basis(idx: usize) -> Self {
        let mut amps = [Complex64::new(0.0, 0.0); 4];
        amps[idx] = Complex64::new(1.0, 0.0);
        Self { amps }
    }

    pub fn amplitudes(&self) -> &[Complex64; 4] {
        &self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Party {
    Alice,
    Bob,
}

impl Party {
    pub fn other(self) -> Self {
        match self {
            Party::Alice => Party::Bob,
            Party::Bob => Party::Alice,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Party::Alice => "alice",
            Party::Bob => "bob",
        }
    }
}

impl fmt::Display for Party {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Identifier of one detector on one side. Ids are local to a party.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DetectorId(pub u16);

impl fmt::Display for DetectorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Measurement outcome of a two-outcome projective measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Outcome {
    Plus,
    Minus,
}

impl Outcome {
    pub const BOTH: [Outcome; 2] = [Outcome::Plus, Outcome::Minus];

    pub fn value(self) -> f64 {
        match self {
            Outcome::Plus => 1.0,
            Outcome::Minus => -1.0,
        }
    }

    pub fn flip(self) -> Self {
        match self {
            Outcome::Plus => Outcome::Minus,
            Outcome::Minus => Outcome::Plus,
        }
    }

    /// Product of two ±1 outcomes.
    pub fn times(self, other: Outcome) -> Outcome {
        if self == other {
            Outcome::Plus
        } else {
            Outcome::Minus
        }
    }
}

/// Setting labels: Alice's three analyzers and Bob's two decoder bases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SettingLabel {
    A0,
    A1,
    A2,
    B0,
    B1,
}

impl SettingLabel {
    pub const ALICE: [SettingLabel; 3] = [SettingLabel::A0, SettingLabel::A1, SettingLabel::A2];
    pub const BOB: [SettingLabel; 2] = [SettingLabel::B0, SettingLabel::B1];

    pub fn party(self) -> Party {
        match self {
            SettingLabel::A0 | SettingLabel::A1 | SettingLabel::A2 => Party::Alice,
            SettingLabel::B0 | SettingLabel::B1 => Party::Bob,
        }
    }

    /// Wire/CSV code.
    pub fn code(self) -> u8 {
        match self {
            SettingLabel::A0 => 0,
            SettingLabel::A1 => 1,
            SettingLabel::A2 => 2,
            SettingLabel::B0 => 10,
            SettingLabel::B1 => 11,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => SettingLabel::A0,
            1 => SettingLabel::A1,
            2 => SettingLabel::A2,
            10 => SettingLabel::B0,
            11 => SettingLabel::B1,
            _ => return None,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SettingLabel::A0 => "a0",
            SettingLabel::A1 => "a1",
            SettingLabel::A2 => "a2",
            SettingLabel::B0 => "b0",
            SettingLabel::B1 => "b1",
        }
    }
}

impl fmt::Display for SettingLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Unit vector on the Bloch sphere, components `(x, y, z)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlochVector {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl BlochVector {
    pub fn new(x: f64, y: f64, z: f64) -> Result<Self, QuantumError> {
        let norm = (x * x + y * y + z * z).sqrt();
        if !norm.is_finite() || (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(invalid(format!("Bloch vector norm {norm} differs from 1")));
        }
        Ok(Self { x, y, z })
    }

    /// Observable `cos(angle) σz + sin(angle) σx`.
    pub fn in_zx_plane(angle: f64) -> Self {
        Self {
            x: angle.sin(),
            y: 0.0,
            z: angle.cos(),
        }
    }

    /// A linear polarizer at physical angle `alpha` (radians) measures along
    /// Bloch angle `2·alpha` in the z–x plane.
    pub fn polarizer(alpha: f64) -> Self {
        Self::in_zx_plane(2.0 * alpha)
    }

    pub fn z() -> Self {
        Self::in_zx_plane(0.0)
    }

    pub fn x_axis() -> Self {
        Self::in_zx_plane(std::f64::consts::FRAC_PI_2)
    }

    /// Eigenvector of `n·σ` with eigenvalue `outcome`.
    pub fn eigenvector(&self, outcome: Outcome) -> [Complex64; 2] {
        let n = match outcome {
            Outcome::Plus => *self,
            Outcome::Minus => Self {
                x: -self.x,
                y: -self.y,
                z: -self.z,
            },
        };
        let theta = n.z.clamp(-1.0, 1.0).acos();
        let azimuth = n.y.atan2(n.x);
        [
            Complex64::new((theta / 2.0).cos(), 0.0),
            Complex64::from_polar((theta / 2.0).sin(), azimuth),
        ]
    }
}

/// One party's measurement basis and the detector ports its outcomes land on.
///
/// `label_sign` fixes the outcome-sign convention used when the setting
/// enters a correlation: `Plus` keeps the physical ±1 of the projector,
/// `Minus` reports it flipped (the ports are labeled the other way round).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementSetting {
    pub label: SettingLabel,
    pub bloch: BlochVector,
    pub plus_port: DetectorId,
    pub minus_port: DetectorId,
    pub label_sign: Outcome,
}

impl MeasurementSetting {
    pub fn new(
        label: SettingLabel,
        bloch: BlochVector,
        plus_port: DetectorId,
        minus_port: DetectorId,
        label_sign: Outcome,
    ) -> Result<Self, QuantumError> {
        BlochVector::new(bloch.x, bloch.y, bloch.z)?;
        if plus_port == minus_port {
            return Err(invalid(format!(
                "setting {label}: plus and minus ports coincide ({plus_port})"
            )));
        }
        Ok(Self {
            label,
            bloch,
            plus_port,
            minus_port,
            label_sign,
        })
    }

    pub fn party(&self) -> Party {
        self.label.party()
    }

    pub fn port(&self, outcome: Outcome) -> DetectorId {
        match outcome {
            Outcome::Plus => self.plus_port,
            Outcome::Minus => self.minus_port,
        }
    }

    /// Physical outcome registered by `port`, if the port belongs here.
    pub fn outcome_of(&self, port: DetectorId) -> Option<Outcome> {
        if port == self.plus_port {
            Some(Outcome::Plus)
        } else if port == self.minus_port {
            Some(Outcome::Minus)
        } else {
            None
        }
    }

    /// Outcome after applying the sign convention.
    pub fn labeled(&self, physical: Outcome) -> Outcome {
        physical.times(self.label_sign)
    }
}

/// The full set of analyzer settings of both parties plus detector numbering.
#[derive(Debug, Clone, PartialEq)]
pub struct SettingSet {
    pub alice: [MeasurementSetting; 3],
    pub bob: [MeasurementSetting; 2],
}

impl SettingSet {
    /// Alice's analyzers at 0° (a2, key basis), −22.5° (a0) and −67.5° (a1);
    /// Bob's time basis b0 = σz and superposition basis b1 = σx.
    ///
    /// Detector ids follow the coincidence-count indexing: Alice 3/4 ↔ a0,
    /// 5/6 ↔ a1, 1/2 ↔ a2 (H/V); Bob 1/2 ↔ |0⟩/|1⟩, 3/4 ↔ |0⟩±|1⟩.
    /// The a1 analyzer reports flipped signs, which puts the CHSH maximum
    /// of the hybrid state at relative phase π.
    pub fn standard() -> Self {
        let deg = std::f64::consts::PI / 180.0;
        let a = |label, alpha: f64, p, m, sign| MeasurementSetting {
            label,
            bloch: BlochVector::polarizer(alpha * deg),
            plus_port: DetectorId(p),
            minus_port: DetectorId(m),
            label_sign: sign,
        };
        let b = |label, bloch, p, m| MeasurementSetting {
            label,
            bloch,
            plus_port: DetectorId(p),
            minus_port: DetectorId(m),
            label_sign: Outcome::Plus,
        };
        Self {
            alice: [
                a(SettingLabel::A0, -22.5, 3, 4, Outcome::Plus),
                a(SettingLabel::A1, -67.5, 5, 6, Outcome::Minus),
                a(SettingLabel::A2, 0.0, 1, 2, Outcome::Plus),
            ],
            bob: [
                b(SettingLabel::B0, BlochVector::z(), 1, 2),
                b(SettingLabel::B1, BlochVector::x_axis(), 3, 4),
            ],
        }
    }

    pub fn get(&self, label: SettingLabel) -> &MeasurementSetting {
        match label {
            SettingLabel::A0 => &self.alice[0],
            SettingLabel::A1 => &self.alice[1],
            SettingLabel::A2 => &self.alice[2],
            SettingLabel::B0 => &self.bob[0],
            SettingLabel::B1 => &self.bob[1],
        }
    }

    pub fn for_party(&self, party: Party) -> &[MeasurementSetting] {
        match party {
            Party::Alice => &self.alice,
            Party::Bob => &self.bob,
        }
    }

    /// Setting and physical outcome registered by a detector.
    pub fn lookup(&self, party: Party, port: DetectorId) -> Option<(SettingLabel, Outcome)> {
        self.for_party(party)
            .iter()
            .find_map(|s| s.outcome_of(port).map(|o| (s.label, o)))
    }

    pub fn detectors(&self, party: Party) -> Vec<DetectorId> {
        let mut ids: Vec<DetectorId> = self
            .for_party(party)
            .iter()
            .flat_map(|s| [s.plus_port, s.minus_port])
            .collect();
        ids.sort();
        ids
    }

    pub fn chsh(&self) -> ChshSettings {
        ChshSettings {
            a0: *self.get(SettingLabel::A0),
            a1: *self.get(SettingLabel::A1),
            b0: *self.get(SettingLabel::B0),
            b1: *self.get(SettingLabel::B1),
        }
    }

    /// Checks labels, party assignment and port uniqueness.
    pub fn validate(&self) -> Result<(), QuantumError> {
        for party in [Party::Alice, Party::Bob] {
            let settings = self.for_party(party);
            for s in settings {
                if s.party() != party {
                    return Err(invalid(format!("setting {} listed under {party}", s.label)));
                }
                MeasurementSetting::new(s.label, s.bloch, s.plus_port, s.minus_port, s.label_sign)?;
            }
            let ids = self.detectors(party);
            if ids.windows(2).any(|w| w[0] == w[1]) {
                return Err(invalid(format!("{party} detector ports are not unique")));
            }
        }
        Ok(())
    }
}

/// The four settings entering the CHSH combination.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChshSettings {
    pub a0: MeasurementSetting,
    pub a1: MeasurementSetting,
    pub b0: MeasurementSetting,
    pub b1: MeasurementSetting,
}

impl ChshSettings {
    /// Terms in order `(a0,b0), (a0,b1), (a1,b0), (a1,b1)` with their
    /// coefficient in S.
    pub fn terms(&self) -> [(MeasurementSetting, MeasurementSetting, f64); 4] {
        [
            (self.a0, self.b0, 1.0),
            (self.a0, self.b1, 1.0),
            (self.a1, self.b0, 1.0),
            (self.a1, self.b1, -1.0),
        ]
    }
}

fn check_pair(a: &MeasurementSetting, b: &MeasurementSetting) -> Result<(), QuantumError> {
    if a.party() != Party::Alice || b.party() != Party::Bob {
        return Err(invalid(format!(
            "expected an Alice and a Bob setting, got {} and {}",
            a.label, b.label
        )));
    }
    Ok(())
}

/// Probability of the physical outcome pair `(a_out, b_out)`.
pub fn joint_probability(
    state: &TwoQubitState,
    a: &MeasurementSetting,
    b: &MeasurementSetting,
    a_out: Outcome,
    b_out: Outcome,
) -> Result<f64, QuantumError> {
    check_pair(a, b)?;
    Ok(projection_probability(state, &a.bloch, &b.bloch, a_out, b_out))
}

/// All four outcome probabilities, indexed `[a_plus_b_plus, a_plus_b_minus,
/// a_minus_b_plus, a_minus_b_minus]`.
pub fn outcome_distribution(
    state: &TwoQubitState,
    a: &BlochVector,
    b: &BlochVector,
) -> [f64; 4] {
    let mut p = [0.0; 4];
    for (i, ao) in Outcome::BOTH.into_iter().enumerate() {
        for (j, bo) in Outcome::BOTH.into_iter().enumerate() {
            p[2 * i + j] = projection_probability(state, a, b, ao, bo);
        }
    }
    p
}

fn projection_probability(
    state: &TwoQubitState,
    a: &BlochVector,
    b: &BlochVector,
    a_out: Outcome,
    b_out: Outcome,
) -> f64 {
    let ea = a.eigenvector(a_out);
    let eb = b.eigenvector(b_out);
    let psi = state.amplitudes();
    let mut amp = Complex64::new(0.0, 0.0);
    for i in 0..2 {
        for j in 0..2 {
            amp += (ea[i] * eb[j]).conj() * psi[2 * i + j];
        }
    }
    amp.norm_sqr()
}

/// Physical correlation `Σ a·b·P(a,b)`; sign conventions are not applied.
pub fn correlation(
    state: &TwoQubitState,
    a: &MeasurementSetting,
    b: &MeasurementSetting,
) -> Result<f64, QuantumError> {
    check_pair(a, b)?;
    let p = outcome_distribution(state, &a.bloch, &b.bloch);
    Ok(p[0] - p[1] - p[2] + p[3])
}

/// CHSH combination with each setting's outcome-sign convention applied.
pub fn chsh_value(state: &TwoQubitState, settings: &ChshSettings) -> Result<f64, QuantumError> {
    let mut s = 0.0;
    for (a, b, coeff) in settings.terms() {
        let e = correlation(state, &a, &b)?;
        s += coeff * a.label_sign.value() * b.label_sign.value() * e;
    }
    Ok(s)
}

/// Shannon entropy of a Bernoulli(x) variable in bits.
pub fn binary_entropy(x: f64) -> Result<f64, QuantumError> {
    if !(0.0..=1.0).contains(&x) {
        return Err(invalid(format!("entropy argument {x} outside [0, 1]")));
    }
    let term = |p: f64| if p <= 0.0 { 0.0 } else { -p * p.log2() };
    Ok((term(x) + term(1.0 - x)).clamp(0.0, 1.0))
}

/// Upper bound on Eve's information per key bit as a function of the CHSH
/// value. For `|s| ≤ 2` no bound exists and the full bit is assumed leaked.
pub fn holevo_bound(s: f64) -> Result<f64, QuantumError> {
    if !s.is_finite() || s.abs() > TSIRELSON + TSIRELSON_TOLERANCE {
        return Err(invalid(format!("|S| = {} exceeds the Tsirelson bound", s.abs())));
    }
    if s.abs() <= 2.0 {
        return Ok(1.0);
    }
    let root = (s * s / 4.0 - 1.0).clamp(0.0, 1.0).sqrt();
    binary_entropy((1.0 + root) / 2.0)
}

/// `1 − h(qber)`.
pub fn mutual_information(qber: f64) -> Result<f64, QuantumError> {
    if !(0.0..=0.5).contains(&qber) {
        return Err(invalid(format!("qber {qber} outside [0, 0.5]")));
    }
    Ok(1.0 - binary_entropy(qber)?)
}

/// Extractable secret bits per raw bit, `max(0, I(A,B) − I_Eve)`.
pub fn secure_fraction(s: f64, qber: f64) -> Result<f64, QuantumError> {
    Ok((mutual_information(qber)? - holevo_bound(s)?).max(0.0))
}

/// Security figures derived from an S value and a QBER.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecurityQuantities {
    pub s_value: f64,
    pub s_error: f64,
    pub qber: f64,
    pub i_ab: f64,
    pub i_eve: f64,
    pub secure_fraction: f64,
}

impl SecurityQuantities {
    /// Measured S may exceed 2√2 by statistical fluctuation; it is clamped
    /// to the bound before evaluating the leakage. QBER above one half
    /// carries no mutual information.
    pub fn evaluate(s_value: f64, s_error: f64, qber: f64) -> Result<Self, QuantumError> {
        if !s_value.is_finite() || !s_error.is_finite() || s_error < 0.0 {
            return Err(invalid("S estimate must be finite with nonnegative error"));
        }
        if !(0.0..=1.0).contains(&qber) {
            return Err(invalid(format!("qber {qber} outside [0, 1]")));
        }
        let s_eff = s_value.clamp(-TSIRELSON, TSIRELSON);
        let i_ab = if qber >= 0.5 {
            0.0
        } else {
            mutual_information(qber)?
        };
        let i_eve = holevo_bound(s_eff)?;
        Ok(Self {
            s_value,
            s_error,
            qber,
            i_ab,
            i_eve,
            secure_fraction: (i_ab - i_eve).max(0.0),
        })
    }
}
