use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ConfigIssue;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftKind {
    #[default]
    Constant,
    Linear,
    Sinusoidal,
    RandomWalk,
}

/// Interferometer phase offset as a function of time, added to the source's
/// reference phase. Parameters not used by `kind` are ignored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DriftModel {
    pub kind: DriftKind,
    /// radians
    pub offset: f64,
    /// radians per second
    pub slope: f64,
    /// radians
    pub amplitude: f64,
    pub period_s: f64,
    /// radians² per second
    pub step_variance: f64,
    pub step_s: f64,
    pub seed: u64,
    /// radians per °C
    pub temp_coefficient: f64,
    /// °C
    pub reference_temperature: f64,
}

impl Default for DriftModel {
    fn default() -> Self {
        Self {
            kind: DriftKind::Constant,
            offset: 0.0,
            slope: 0.0,
            amplitude: 0.0,
            period_s: 1.0,
            step_variance: 0.0,
            step_s: 1.0,
            seed: 0,
            temp_coefficient: 0.8,
            reference_temperature: 25.0,
        }
    }
}

impl DriftModel {
    pub fn constant(offset: f64) -> Self {
        Self {
            offset,
            ..Self::default()
        }
    }

    pub fn linear(offset: f64, slope: f64) -> Self {
        Self {
            kind: DriftKind::Linear,
            offset,
            slope,
            ..Self::default()
        }
    }

    pub fn validate(&self, out: &mut Vec<ConfigIssue>) {
        let finite = [
            ("drift.offset", self.offset),
            ("drift.slope", self.slope),
            ("drift.amplitude", self.amplitude),
            ("drift.step_variance", self.step_variance),
            ("drift.temp_coefficient", self.temp_coefficient),
            ("drift.reference_temperature", self.reference_temperature),
        ];
        for (path, v) in finite {
            if !v.is_finite() {
                out.push(ConfigIssue::new(path, "must be finite"));
            }
        }
        if self.kind == DriftKind::Sinusoidal && !(self.period_s.is_finite() && self.period_s > 0.0) {
            out.push(ConfigIssue::new("drift.period_s", "must be finite and > 0"));
        }
        if self.kind == DriftKind::RandomWalk {
            if !(self.step_s.is_finite() && self.step_s > 0.0) {
                out.push(ConfigIssue::new("drift.step_s", "must be finite and > 0"));
            }
            if self.step_variance < 0.0 {
                out.push(ConfigIssue::new("drift.step_variance", "must be ≥ 0"));
            }
        }
    }

    /// Phase offset at `t` seconds. Random walks are rebuilt from the seed on
    /// each call; use [`DriftModel::track`] for repeated queries.
    pub fn phase_at(&self, t: f64) -> f64 {
        match self.kind {
            DriftKind::RandomWalk => self.track(t).phase_at(t),
            _ => self.closed_form(t),
        }
    }

    fn closed_form(&self, t: f64) -> f64 {
        match self.kind {
            DriftKind::Constant => self.offset,
            DriftKind::Linear => self.offset + self.slope * t,
            DriftKind::Sinusoidal => {
                self.offset + self.amplitude * (2.0 * std::f64::consts::PI * t / self.period_s).sin()
            }
            DriftKind::RandomWalk => unreachable!("random walk has no closed form"),
        }
    }

    /// Phase offset for an interferometer held at `temperature` °C, linear in
    /// the temperature difference from the reference.
    pub fn phase_at_temperature(&self, temperature: f64) -> f64 {
        self.offset + self.temp_coefficient * (temperature - self.reference_temperature)
    }

    /// Precomputes the phase over `[0, duration_s]`.
    pub fn track(&self, duration_s: f64) -> DriftTrack {
        let steps = match self.kind {
            DriftKind::RandomWalk => {
                let n = (duration_s.max(0.0) / self.step_s).floor() as usize;
                let sd = (self.step_variance * self.step_s).max(0.0).sqrt();
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                let mut path = Vec::with_capacity(n + 1);
                let mut phase = self.offset;
                path.push(phase);
                if sd > 0.0 {
                    let normal = Normal::new(0.0, sd).expect("finite step deviation");
                    for _ in 0..n {
                        phase += normal.sample(&mut rng);
                        path.push(phase);
                    }
                } else {
                    path.resize(n + 1, phase);
                }
                path
            }
            _ => Vec::new(),
        };
        DriftTrack { model: *self, steps }
    }

    pub fn is_constant(&self) -> bool {
        match self.kind {
            DriftKind::Constant => true,
            DriftKind::Linear => self.slope == 0.0,
            DriftKind::Sinusoidal => self.amplitude == 0.0,
            DriftKind::RandomWalk => self.step_variance == 0.0,
        }
    }
}

/// Drift evaluated over a fixed horizon. Random walks are piecewise
/// constant between grid points and hold their last value past the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftTrack {
    model: DriftModel,
    steps: Vec<f64>,
}

impl DriftTrack {
    pub fn phase_at(&self, t: f64) -> f64 {
        match self.model.kind {
            DriftKind::RandomWalk => {
                let k = (t.max(0.0) / self.model.step_s).floor() as usize;
                self.steps[k.min(self.steps.len() - 1)]
            }
            _ => self.model.closed_form(t),
        }
    }
}
