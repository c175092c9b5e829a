//! Monte-Carlo physical layer: Poisson pair emission, lossy delayed channels,
//! interferometer phase drift, passive basis choice and detector response.
//!
//! Relative to Alice's detection, Bob's photon lands in one of three time
//! bins spaced by the interferometer delay. Only the central bin carries the
//! entangled state; the early and late satellites carry the product states
//! `|V⟩|0⟩` and `|H⟩|1⟩`. Coincidence windows much narrower than the bin
//! spacing keep the satellites out.

mod detector;
mod drift;
mod sampling;
mod session;

pub use detector::{apply_dead_time, dark_tags, ChannelState, DetectionPath};
pub use drift::{DriftKind, DriftModel, DriftTrack};
pub use sampling::{sample_pair_outcome, PairSample, PairSampler, TimeBin};
pub use session::{generate_pair_times, simulate_session, EmissionRecord, GroundTruth, SessionOutput};

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quantum::{Party, QuantumError};

/// Ratio between a Gaussian's FWHM and its standard deviation, `√(8 ln 2)`.
pub const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_3;

pub const PS_PER_S: f64 = 1e12;

/// A validation failure tied to a configuration key path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigIssue {
    pub path: String,
    pub message: String,
}

impl ConfigIssue {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Error)]
pub enum OpticsError {
    #[error("invalid optics configuration: {}", join_issues(.0))]
    Config(Vec<ConfigIssue>),
    #[error(transparent)]
    Quantum(#[from] QuantumError),
    #[error("session too large: {0} candidate emissions")]
    TooManyEvents(u64),
}

pub(crate) fn join_issues(issues: &[ConfigIssue]) -> String {
    issues
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

/// Continuous-wave pair source abstracted to a Poisson process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SourceModel {
    /// Pairs per second.
    pub pair_rate: f64,
    /// Session length in seconds.
    pub duration_s: f64,
    /// Relative phase of the entangled state before drift, radians.
    pub reference_phase: f64,
}

impl Default for SourceModel {
    fn default() -> Self {
        Self {
            pair_rate: 1e5,
            duration_s: 10.0,
            reference_phase: std::f64::consts::PI,
        }
    }
}

impl SourceModel {
    pub fn duration_ps(&self) -> u64 {
        (self.duration_s * PS_PER_S).round() as u64
    }

    fn validate(&self, out: &mut Vec<ConfigIssue>) {
        if !(self.pair_rate.is_finite() && self.pair_rate >= 0.0) {
            out.push(ConfigIssue::new("source.pair_rate", "must be finite and ≥ 0"));
        }
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            out.push(ConfigIssue::new("source.duration_s", "must be finite and > 0"));
        }
        if !self.reference_phase.is_finite() {
            out.push(ConfigIssue::new("source.reference_phase", "must be finite"));
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelModel {
    pub transmittance: f64,
    pub delay_ps: u64,
}

impl Default for ChannelModel {
    fn default() -> Self {
        Self {
            transmittance: 1.0,
            delay_ps: 0,
        }
    }
}

impl ChannelModel {
    fn validate(&self, prefix: &str, out: &mut Vec<ConfigIssue>) {
        if !(self.transmittance > 0.0 && self.transmittance <= 1.0) {
            out.push(ConfigIssue::new(
                format!("{prefix}.transmittance"),
                "must lie in (0, 1]",
            ));
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorModel {
    pub efficiency: f64,
    /// Dark counts per second, per detector.
    pub dark_rate: f64,
    pub jitter_fwhm_ps: f64,
    pub dead_time_ps: u64,
}

impl Default for DetectorModel {
    fn default() -> Self {
        Self {
            efficiency: 1.0,
            dark_rate: 0.0,
            jitter_fwhm_ps: 0.0,
            dead_time_ps: 0,
        }
    }
}

impl DetectorModel {
    fn validate(&self, prefix: &str, out: &mut Vec<ConfigIssue>) {
        if !(0.0..=1.0).contains(&self.efficiency) {
            out.push(ConfigIssue::new(format!("{prefix}.efficiency"), "must lie in [0, 1]"));
        }
        if !(self.dark_rate.is_finite() && self.dark_rate >= 0.0) {
            out.push(ConfigIssue::new(format!("{prefix}.dark_rate"), "must be finite and ≥ 0"));
        }
        if !(self.jitter_fwhm_ps.is_finite() && self.jitter_fwhm_ps >= 0.0) {
            out.push(ConfigIssue::new(
                format!("{prefix}.jitter_fwhm_ps"),
                "must be finite and ≥ 0",
            ));
        }
    }
}

/// Interferometer delay and the extra timing jitter of each party's
/// decoding optics (added to the detector jitter in quadrature).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecoderModel {
    pub bin_separation_ps: u64,
    pub alice_jitter_fwhm_ps: f64,
    pub bob_jitter_fwhm_ps: f64,
}

impl Default for DecoderModel {
    fn default() -> Self {
        Self {
            bin_separation_ps: 800,
            alice_jitter_fwhm_ps: 0.0,
            bob_jitter_fwhm_ps: 0.0,
        }
    }
}

/// Passive beam-splitter ratios: Alice `(a0, a1, a2)`, Bob `(b0, b1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplittingRatios {
    pub alice: [f64; 3],
    pub bob: [f64; 2],
}

impl Default for SplittingRatios {
    fn default() -> Self {
        Self {
            alice: [0.25, 0.25, 0.5],
            bob: [0.5, 0.5],
        }
    }
}

impl SplittingRatios {
    pub fn validate(&self, out: &mut Vec<ConfigIssue>) {
        check_ratios("splitting.alice", &self.alice, out);
        check_ratios("splitting.bob", &self.bob, out);
    }
}

fn check_ratios(path: &str, ratios: &[f64], out: &mut Vec<ConfigIssue>) {
    if ratios.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
        out.push(ConfigIssue::new(path, "ratios must be finite and ≥ 0"));
        return;
    }
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        out.push(ConfigIssue::new(path, format!("ratios sum to {sum}, expected 1")));
    }
}

/// A value per party.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerParty<T> {
    pub alice: T,
    pub bob: T,
}

impl<T> PerParty<T> {
    pub fn get(&self, party: Party) -> &T {
        match party {
            Party::Alice => &self.alice,
            Party::Bob => &self.bob,
        }
    }

    pub fn get_mut(&mut self, party: Party) -> &mut T {
        match party {
            Party::Alice => &mut self.alice,
            Party::Bob => &mut self.bob,
        }
    }
}

/// Everything the physical layer needs for one session.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OpticsConfig {
    pub source: SourceModel,
    pub channel: PerParty<ChannelModel>,
    pub detector: PerParty<DetectorModel>,
    pub decoder: DecoderModel,
    pub drift: DriftModel,
    pub splitting: SplittingRatios,
}

impl OpticsConfig {
    /// Perfect devices: unit efficiency and transmittance, no dark counts,
    /// jitter, dead time or drift, phase at the CHSH optimum.
    pub fn ideal(pair_rate: f64, duration_s: f64) -> Self {
        Self {
            source: SourceModel {
                pair_rate,
                duration_s,
                ..SourceModel::default()
            },
            ..Self::default()
        }
    }

    pub fn issues(&self) -> Vec<ConfigIssue> {
        let mut out = Vec::new();
        self.source.validate(&mut out);
        self.channel.alice.validate("channel.alice", &mut out);
        self.channel.bob.validate("channel.bob", &mut out);
        self.detector.alice.validate("detector.alice", &mut out);
        self.detector.bob.validate("detector.bob", &mut out);
        for (path, v) in [
            ("decoder.alice_jitter_fwhm_ps", self.decoder.alice_jitter_fwhm_ps),
            ("decoder.bob_jitter_fwhm_ps", self.decoder.bob_jitter_fwhm_ps),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                out.push(ConfigIssue::new(path, "must be finite and ≥ 0"));
            }
        }
        self.drift.validate(&mut out);
        self.splitting.validate(&mut out);
        out
    }

    pub fn validate(&self) -> Result<(), OpticsError> {
        let issues = self.issues();
        if issues.is_empty() {
            Ok(())
        } else {
            Err(OpticsError::Config(issues))
        }
    }

    pub fn path(&self, party: Party) -> DetectionPath {
        DetectionPath {
            party,
            channel: *self.channel.get(party),
            detector: *self.detector.get(party),
            extra_jitter_fwhm_ps: match party {
                Party::Alice => self.decoder.alice_jitter_fwhm_ps,
                Party::Bob => self.decoder.bob_jitter_fwhm_ps,
            },
            bin_separation_ps: self.decoder.bin_separation_ps,
        }
    }
}
