use std::fmt;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::optics::{
    ChannelModel, ConfigIssue, DecoderModel, DetectorModel, DriftModel, OpticsConfig, PerParty, SourceModel,
    SplittingRatios,
};
use crate::protocol::{ProtocolParams, Transport};
use crate::quantum::Party;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    #[default]
    Ideal,
    Field,
    PhaseSweep,
    Stability,
    WindowSweep,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 5] = [
        ScenarioKind::Ideal,
        ScenarioKind::Field,
        ScenarioKind::PhaseSweep,
        ScenarioKind::Stability,
        ScenarioKind::WindowSweep,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioKind::Ideal => "ideal",
            ScenarioKind::Field => "field",
            ScenarioKind::PhaseSweep => "phase-sweep",
            ScenarioKind::Stability => "stability",
            ScenarioKind::WindowSweep => "window-sweep",
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Self::ALL.iter().map(|k| k.as_str()).collect();
                format!("unknown scenario `{s}`, expected one of {}", names.join(", "))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    /// Interferometer temperature in °C, mapped to phase through the drift
    /// model's temperature coefficient.
    Temperature,
    /// Total state phase in radians.
    #[default]
    Phase,
    /// Coincidence window in ps.
    Window,
}

/// Sweep points come from `values` if given, otherwise `points` evenly
/// spaced values from `start` to `stop` inclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
    pub start: f64,
    pub stop: f64,
    pub points: usize,
    /// Simulated time per sweep point; the source duration when unset.
    pub point_duration_s: Option<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            parameter: SweepParameter::Phase,
            values: Vec::new(),
            start: 0.0,
            stop: 0.0,
            points: 0,
            point_duration_s: None,
        }
    }
}

impl SweepConfig {
    pub fn values(&self) -> Vec<f64> {
        if !self.values.is_empty() {
            return self.values.clone();
        }
        match self.points {
            0 => Vec::new(),
            1 => vec![self.start],
            n => (0..n)
                .map(|i| self.start + (self.stop - self.start) * i as f64 / (n - 1) as f64)
                .collect(),
        }
    }

    fn validate(&self, kind: ScenarioKind, out: &mut Vec<ConfigIssue>) {
        let allowed: &[SweepParameter] = match kind {
            ScenarioKind::PhaseSweep => &[SweepParameter::Temperature, SweepParameter::Phase],
            ScenarioKind::WindowSweep => &[SweepParameter::Window],
            _ => return,
        };
        if !allowed.contains(&self.parameter) {
            out.push(ConfigIssue::new(
                "sweep.parameter",
                format!("{:?} cannot be swept in the {kind} scenario", self.parameter).to_lowercase(),
            ));
        }
        let values = self.values();
        if values.len() < 2 {
            out.push(ConfigIssue::new("sweep.values", "need at least two sweep points"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            out.push(ConfigIssue::new("sweep.values", "sweep values must be finite"));
        }
        if self.parameter == SweepParameter::Window
            && values.iter().any(|&v| v < 1.0 || v.fract() != 0.0)
        {
            out.push(ConfigIssue::new("sweep.values", "windows must be whole picoseconds ≥ 1"));
        }
        if let Some(d) = self.point_duration_s {
            if !(d.is_finite() && d > 0.0) {
                out.push(ConfigIssue::new("sweep.point_duration_s", "must be finite and > 0"));
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportKind {
    #[default]
    Memory,
    Tcp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransportConfig {
    pub kind: TransportKind,
    /// Listen address for the TCP mode; port 0 picks a free port.
    pub address: String,
}

impl Default for TransportConfig {
    fn default() -> Self {
        Self {
            kind: TransportKind::Memory,
            address: "127.0.0.1:0".into(),
        }
    }
}

impl TransportConfig {
    pub fn transport(&self) -> Result<Transport, ConfigIssue> {
        match self.kind {
            TransportKind::Memory => Ok(Transport::Memory),
            TransportKind::Tcp => self
                .address
                .parse::<SocketAddr>()
                .map(Transport::Tcp)
                .map_err(|e| ConfigIssue::new("transport.address", e.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationConfig {
    /// Whose channel transmittance is tuned.
    pub party: Party,
    pub target_raw_bps: Option<f64>,
    /// Accepted relative deviation from the target.
    pub tolerance: f64,
    pub probe_duration_s: f64,
    pub max_iterations: u32,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            party: Party::Bob,
            target_raw_bps: None,
            tolerance: 0.05,
            probe_duration_s: 2.0,
            max_iterations: 40,
        }
    }
}

impl CalibrationConfig {
    fn validate(&self, out: &mut Vec<ConfigIssue>) {
        if let Some(t) = self.target_raw_bps {
            if !(t.is_finite() && t > 0.0) {
                out.push(ConfigIssue::new("calibration.target_raw_bps", "must be finite and > 0"));
            }
        }
        if !(self.tolerance > 0.0 && self.tolerance < 1.0) {
            out.push(ConfigIssue::new("calibration.tolerance", "must lie in (0, 1)"));
        }
        if !(self.probe_duration_s.is_finite() && self.probe_duration_s > 0.0) {
            out.push(ConfigIssue::new("calibration.probe_duration_s", "must be finite and > 0"));
        }
        if self.max_iterations == 0 {
            out.push(ConfigIssue::new("calibration.max_iterations", "must be > 0"));
        }
    }
}

/// A complete scenario description. Every table and key is optional; the
/// defaults describe ideal devices at the CHSH-optimal phase.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub scenario: ScenarioKind,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Also write both raw tag streams.
    pub dump_tags: bool,
    pub source: SourceModel,
    pub channel: PerParty<ChannelModel>,
    pub detector: PerParty<DetectorModel>,
    pub decoder: DecoderModel,
    pub drift: DriftModel,
    pub splitting: SplittingRatios,
    pub protocol: ProtocolParams,
    pub sweep: SweepConfig,
    pub transport: TransportConfig,
    pub calibration: CalibrationConfig,
}

impl ScenarioConfig {
    pub fn optics(&self) -> OpticsConfig {
        OpticsConfig {
            source: self.source,
            channel: self.channel,
            detector: self.detector,
            decoder: self.decoder,
            drift: self.drift,
            splitting: self.splitting,
        }
    }

    pub fn issues(&self) -> Vec<ConfigIssue> {
        let mut out = self.optics().issues();
        out.extend(self.protocol.issues());
        self.sweep.validate(self.scenario, &mut out);
        if let Err(issue) = self.transport.transport() {
            out.push(issue);
        }
        self.calibration.validate(&mut out);
        out
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let issues = self.issues();
        if issues.is_empty() {
            Ok(())
        } else {
            Err(ConfigError { issues })
        }
    }

    /// SHA-256 over the canonical JSON form of every parameter except the
    /// seed and the output directory.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.seed = 0;
        c.output_dir = None;
        let json = serde_json::to_string(&c).expect("config serializes");
        Sha256::digest(json.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// Every problem found in a configuration, each tied to a key path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub issues: Vec<ConfigIssue>,
}

impl ConfigError {
    pub fn single(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            issues: vec![ConfigIssue::new(path, message)],
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid configuration")?;
        for issue in &self.issues {
            write!(f, "\n  {issue}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

/// Parses and validates a TOML scenario description.
pub fn parse_config(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let de = toml::Deserializer::parse(text).map_err(|e| ConfigError::single("<toml>", e.to_string().trim_end()))?;
    let config: ScenarioConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let path = if path == "." { "<root>".to_string() } else { path };
        ConfigError::single(path, e.inner().message().trim_end())
    })?;
    config.validate()?;
    Ok(config)
}

pub fn load_config(path: &Path) -> Result<ScenarioConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::single(path.display().to_string(), e.to_string()))?;
    parse_config(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_defaults() {
        let c = parse_config("scenario = \"ideal\"\n").unwrap();
        assert_eq!(c, ScenarioConfig::default());
        assert_eq!(c.protocol.window_ps, 64);
        assert_eq!(c.detector.bob.efficiency, 1.0);
    }

    #[test]
    fn unknown_keys_are_rejected_with_their_path() {
        let e = parse_config("[detector.alice]\nefficency = 0.5\n").unwrap_err();
        assert_eq!(e.issues.len(), 1);
        assert!(e.issues[0].path.starts_with("detector.alice"), "{e}");
        assert!(e.to_string().contains("efficency"), "{e}");
    }

    #[test]
    fn wrong_types_carry_paths() {
        let e = parse_config("[protocol]\nwindow_ps = \"wide\"\n").unwrap_err();
        assert_eq!(e.issues[0].path, "protocol.window_ps");
    }

    #[test]
    fn all_range_violations_are_reported() {
        let text = "[detector.alice]\nefficiency = 2.0\n[channel.bob]\ntransmittance = 0.0\n[protocol]\nwindow_ps = 0\n";
        let e = parse_config(text).unwrap_err();
        let paths: Vec<_> = e.issues.iter().map(|i| i.path.as_str()).collect();
        assert_eq!(
            paths,
            ["channel.bob.transmittance", "detector.alice.efficiency", "protocol.window_ps"]
        );
    }

    #[test]
    fn sweep_needs_points() {
        let e = parse_config("scenario = \"phase-sweep\"\n").unwrap_err();
        assert_eq!(e.issues[0].path, "sweep.values");
        let c = parse_config("scenario = \"phase-sweep\"\n[sweep]\nstart = 0.0\nstop = 1.0\npoints = 3\n").unwrap();
        assert_eq!(c.sweep.values(), vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn hash_ignores_seed_and_output_dir_only() {
        let a = ScenarioConfig::default();
        let mut b = a.clone();
        b.seed = 9;
        b.output_dir = Some("x".into());
        assert_eq!(a.hash(), b.hash());
        b.protocol.window_ps = 65;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
