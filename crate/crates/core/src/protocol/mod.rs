//! Two-party post-processing: Bob announces tag times and bases, Alice finds
//! the coincidences and tells Bob which of his tags matched and how she
//! measured them. Both sides then sift, disclose a sample of key bits and all
//! test-pair outcomes, compute the same report and cross-check it.
//!
//! Per block the message order is: Bob `tag_announce`×n → Alice
//! `basis_reveal`, `sample_request` → Bob `sample_reveal` → Alice
//! `sample_reveal`, `report` → Bob `report`. A `hello` exchange opens the
//! session and a final pair of `report`s carries the aggregate.

mod endpoint;
mod report;
mod session;
mod sift;
mod transport;
pub mod wire;

pub use endpoint::{run_alice, run_bob, EndpointFailure, PartyOutcome};
pub use report::{
    block_report, build_report, Accumulator, BlockReport, SecurityReport, Verdict, REPORT_CSV_HEADER,
};
pub use session::{analyze_streams, run_session, Analysis, SessionFailure, SessionResult};
pub use sift::{
    bit_outcome, choose_sample_positions, classify, count_mismatches, estimate_qber, key_bit, outcome_bit,
    pair_id, sift, MatchedPair, PairRole, QberEstimate, QberMode, SiftResult, SiftedKey,
};
pub use transport::{memory_pair, MemoryPipe, Transport};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::optics::{ConfigIssue, PS_PER_S};
use crate::quantum::{Party, QuantumError, SettingSet};
use crate::tags::{DelaySearch, TagsError, DEFAULT_DELAY_BIN_PS};
use wire::{Hello, WireError};

pub const PROTOCOL_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("wire: {0}")]
    Wire(#[from] WireError),
    #[error("protocol violation: {0}")]
    Violation(String),
    #[error("peer aborted: {0}")]
    PeerAbort(String),
    #[error(transparent)]
    Tags(#[from] TagsError),
    #[error(transparent)]
    Quantum(#[from] QuantumError),
    #[error("insufficient key: {have} bits, need {need}")]
    InsufficientKey { have: usize, need: usize },
    #[error("invalid protocol parameters: {}", crate::optics::join_issues(.0))]
    InvalidParams(Vec<ConfigIssue>),
    #[error("transport: {0}")]
    Transport(String),
}

/// Session parameters shared by both endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolParams {
    pub window_ps: u64,
    pub block_s: f64,
    pub qber_mode: QberMode,
    pub sample_fraction: f64,
    /// `k` in the abort rule `S − k·σ_S ≤ 2`.
    pub abort_sigma: f64,
    /// Half-width of the delay search.
    pub delay_search_ps: u64,
    pub delay_bin_ps: u64,
    /// Skips the delay search when set.
    pub fixed_delay_ps: Option<i64>,
    /// Tags per `tag_announce` frame.
    pub announce_chunk: usize,
}

impl Default for ProtocolParams {
    fn default() -> Self {
        Self {
            window_ps: 64,
            block_s: 10.0,
            qber_mode: QberMode::Sample,
            sample_fraction: 0.1,
            abort_sigma: 0.0,
            delay_search_ps: 200_000_000,
            delay_bin_ps: DEFAULT_DELAY_BIN_PS,
            fixed_delay_ps: None,
            announce_chunk: 1 << 20,
        }
    }
}

impl ProtocolParams {
    pub fn block_ps(&self) -> u64 {
        (self.block_s * PS_PER_S).round() as u64
    }

    pub fn delay_search(&self) -> DelaySearch {
        DelaySearch::symmetric(self.delay_search_ps, self.delay_bin_ps)
    }

    pub fn issues(&self) -> Vec<ConfigIssue> {
        let mut out = Vec::new();
        if self.window_ps == 0 {
            out.push(ConfigIssue::new("protocol.window_ps", "must be > 0"));
        }
        if !(self.block_s.is_finite() && self.block_s > 0.0) || self.block_ps() == 0 {
            out.push(ConfigIssue::new("protocol.block_s", "must be finite and > 0"));
        }
        if !(self.sample_fraction > 0.0 && self.sample_fraction <= 0.5) {
            out.push(ConfigIssue::new("protocol.sample_fraction", "must lie in (0, 0.5]"));
        }
        if !(self.abort_sigma.is_finite() && self.abort_sigma >= 0.0) {
            out.push(ConfigIssue::new("protocol.abort_sigma", "must be finite and ≥ 0"));
        }
        if self.delay_bin_ps == 0 {
            out.push(ConfigIssue::new("protocol.delay_bin_ps", "must be > 0"));
        }
        if !(1..=(1 << 20)).contains(&self.announce_chunk) {
            out.push(ConfigIssue::new("protocol.announce_chunk", "must lie in [1, 2^20]"));
        }
        out
    }

    /// Number of blocks covering `duration_ps`; the last may be short.
    pub fn block_count(&self, duration_ps: u64) -> u32 {
        duration_ps.div_ceil(self.block_ps()).max(1) as u32
    }

    pub fn block_bounds(&self, block: u32, duration_ps: u64) -> (u64, u64) {
        let b = self.block_ps();
        let start = u64::from(block) * b;
        (start, (start + b).min(duration_ps.max(start + 1)))
    }
}

/// One party's view of the protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct Endpoint {
    pub role: Party,
    pub settings: SettingSet,
    pub params: ProtocolParams,
    /// Seeds Alice's choice of disclosed key positions.
    pub seed: u64,
}

impl Endpoint {
    pub fn new(role: Party, settings: SettingSet, params: ProtocolParams, seed: u64) -> Self {
        Self {
            role,
            settings,
            params,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        self.settings.validate()?;
        let issues = self.params.issues();
        if issues.is_empty() {
            Ok(())
        } else {
            Err(ProtocolError::InvalidParams(issues))
        }
    }

    fn hello(&self, duration_ps: u64) -> Hello {
        Hello {
            version: PROTOCOL_VERSION,
            role: match self.role {
                Party::Alice => 0,
                Party::Bob => 1,
            },
            duration_ps,
            block_ps: self.params.block_ps(),
            window_ps: self.params.window_ps,
            qber_mode: self.params.qber_mode.code(),
            sample_fraction: self.params.sample_fraction,
            abort_sigma: self.params.abort_sigma,
        }
    }
}
