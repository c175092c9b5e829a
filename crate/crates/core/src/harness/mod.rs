//! Scenario runner: TOML configuration, scenario execution with CSV and
//! manifest output, and loss calibration against a target key rate.

mod calibrate;
mod config;
mod scenario;

pub use calibrate::{calibrate_loss, Calibration, Probe};
pub use config::{
    load_config, parse_config, CalibrationConfig, ConfigError, ScenarioConfig, ScenarioKind, SweepConfig,
    SweepParameter, TransportConfig, TransportKind,
};
pub use scenario::{
    output_dir, predicted_crossing, read_tags, run_scenario, simulate, sweep_phase, RunOutcome, StabilitySummary,
    SweepPoint,
};

use std::path::PathBuf;

use thiserror::Error;

use crate::optics::OpticsError;
use crate::protocol::{ProtocolError, SessionFailure};
use crate::tags::TagsError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Optics(#[from] OpticsError),
    #[error(transparent)]
    Analysis(#[from] ProtocolError),
    #[error(transparent)]
    Session(#[from] SessionFailure),
    #[error(transparent)]
    Tags(#[from] TagsError),
    #[error("calibration failed: {0}")]
    Calibration(String),
}
