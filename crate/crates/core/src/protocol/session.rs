use std::fmt;
use std::net::{TcpListener, TcpStream};
use std::thread;

use super::endpoint::{plan_alice_block, run_alice, run_bob, sample_positions, EndpointFailure, PartyOutcome, State};
use super::report::SecurityReport;
use super::sift::{classify, count_mismatches, key_bit, pair_id, PairRole, SiftedKey};
use super::transport::{memory_pair, Transport};
use super::wire::WireError;
use super::{Endpoint, ProtocolError, ProtocolParams};
use crate::optics::PS_PER_S;
use crate::par::Execution;
use crate::quantum::{Party, SettingSet};
use crate::tags::{estimate_delay_times, CoincidenceMatrix, TagStream, TagsError};

/// Frames in flight per direction on the in-process transport.
const PIPE_CAPACITY: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct SessionResult {
    pub alice: PartyOutcome,
    pub bob: PartyOutcome,
}

impl SessionResult {
    /// The agreed report (both endpoints hold identical copies).
    pub fn report(&self) -> &SecurityReport {
        &self.alice.report
    }
}

/// A session that did not complete, with whatever blocks were agreed.
#[derive(Debug)]
pub struct SessionFailure {
    pub error: ProtocolError,
    pub partial: SecurityReport,
}

impl fmt::Display for SessionFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "session aborted after {} block(s): {}",
            self.partial.blocks.len(),
            self.error
        )
    }
}

impl std::error::Error for SessionFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

fn transport_failure(e: std::io::Error) -> SessionFailure {
    SessionFailure {
        error: ProtocolError::Transport(e.to_string()),
        partial: SecurityReport {
            blocks: Vec::new(),
            aggregate: None,
        },
    }
}

/// Errors caused by the peer going away are consequences, not causes.
fn is_secondary(e: &ProtocolError) -> bool {
    matches!(
        e,
        ProtocolError::PeerAbort(_) | ProtocolError::Wire(WireError::Io(_) | WireError::Closed)
    )
}

fn combine(
    a: Result<PartyOutcome, EndpointFailure>,
    b: Result<PartyOutcome, EndpointFailure>,
) -> Result<SessionResult, SessionFailure> {
    match (a, b) {
        (Ok(alice), Ok(bob)) => Ok(SessionResult { alice, bob }),
        (Err(fa), Err(fb)) => {
            let partial = fa.partial;
            let error = if is_secondary(&fa.error) && !is_secondary(&fb.error) {
                fb.error
            } else {
                fa.error
            };
            Err(SessionFailure { error, partial })
        }
        (Err(f), Ok(_)) | (Ok(_), Err(f)) => Err(SessionFailure {
            error: f.error,
            partial: f.partial,
        }),
    }
}

/// Runs both endpoints concurrently over the chosen transport.
pub fn run_session(
    alice: &Endpoint,
    bob: &Endpoint,
    transport: Transport,
    alice_tags: &TagStream,
    bob_tags: &TagStream,
) -> Result<SessionResult, SessionFailure> {
    match transport {
        Transport::Memory => {
            let (a_end, b_end) = memory_pair(PIPE_CAPACITY);
            thread::scope(|s| {
                let hb = s.spawn(move || run_bob(bob, bob_tags, b_end));
                let ra = run_alice(alice, alice_tags, a_end);
                let rb = hb.join().expect("bob endpoint panicked");
                combine(ra, rb)
            })
        }
        Transport::Tcp(addr) => {
            let listener = TcpListener::bind(addr).map_err(transport_failure)?;
            let local = listener.local_addr().map_err(transport_failure)?;
            let b_stream = TcpStream::connect(local).map_err(transport_failure)?;
            let (a_stream, _) = listener.accept().map_err(transport_failure)?;
            for s in [&a_stream, &b_stream] {
                s.set_nodelay(true).map_err(transport_failure)?;
            }
            thread::scope(|s| {
                let hb = s.spawn(move || run_bob(bob, bob_tags, b_stream));
                let ra = run_alice(alice, alice_tags, a_stream);
                let rb = hb.join().expect("bob endpoint panicked");
                combine(ra, rb)
            })
        }
    }
}

/// Result of the offline pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    pub report: SecurityReport,
    pub alice_keys: Vec<SiftedKey>,
    pub bob_keys: Vec<SiftedKey>,
    pub disclosed: Vec<u64>,
    pub test_matrix: CoincidenceMatrix,
    pub delay_ps: i64,
}

/// The same computation as [`run_session`] with both streams in hand and no
/// messages exchanged. Reports are identical to a protocol run with the same
/// parameters and seed.
pub fn analyze_streams(
    alice: &TagStream,
    bob: &TagStream,
    settings: &SettingSet,
    params: &ProtocolParams,
    seed: u64,
) -> Result<Analysis, ProtocolError> {
    let ep = Endpoint::new(Party::Alice, settings.clone(), *params, seed);
    ep.validate()?;
    if alice.duration_ps() != bob.duration_ps() {
        return Err(ProtocolError::Violation("streams cover different durations".into()));
    }
    let duration = alice.duration_ps();
    let alice_times = alice.times();
    let mut state = State::new(settings);
    state.delay = params.fixed_delay_ps;
    let mut bob_keys = Vec::new();

    for k in 0..params.block_count(duration) {
        let bounds = params.block_bounds(k, duration);
        let duration_s = (bounds.1 - bounds.0) as f64 / PS_PER_S;
        let mine = bob.window(bounds.0, bounds.1);
        let bob_times: Vec<u64> = mine.iter().map(|t| t.time).collect();
        let labels = mine
            .iter()
            .map(|t| {
                settings.lookup(Party::Bob, t.channel).ok_or(TagsError::UnknownChannel {
                    party: Party::Bob,
                    channel: t.channel,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let basis: Vec<_> = labels.iter().map(|l| l.0).collect();

        let delay = match state.delay {
            Some(d) => d,
            None => {
                let est = estimate_delay_times(&alice_times, &bob_times, &params.delay_search(), Execution::default())?;
                state.delay = Some(est.delay_ps);
                est.delay_ps
            }
        };
        let plan = plan_alice_block(
            settings,
            alice.tags(),
            &alice_times,
            &bob_times,
            &basis,
            k,
            bounds,
            params.window_ps,
            delay,
        )?;

        let mut bob_key = SiftedKey::new(k);
        for &(j, code) in &plan.entries {
            let al = crate::quantum::SettingLabel::from_code(code).expect("own code");
            let (bl, bo) = labels[j as usize];
            if classify(al, bl) == PairRole::Key {
                bob_key.push(key_bit(bo), pair_id(k, j));
            }
        }
        let positions = sample_positions(&ep, k, plan.key.len());
        let errors = count_mismatches(&plan.key.bits_at(&positions), &bob_key.bits_at(&positions));
        let mut matrix = CoincidenceMatrix::empty(params.window_ps, delay, bounds.1 - bounds.0);
        for &(ach, _, j) in &plan.test {
            matrix.add(ach, mine[j as usize].channel, 1);
        }
        let report = state.finish_block(&ep, k, matrix, &plan.key, &positions, errors, duration_s);
        state.blocks.push(report);
        bob_keys.push(bob_key.without(&positions));
    }

    let aggregate = state.acc.report(&state.layout, params.abort_sigma);
    Ok(Analysis {
        report: SecurityReport {
            blocks: state.blocks,
            aggregate: Some(aggregate),
        },
        alice_keys: state.keys,
        bob_keys,
        disclosed: state.disclosed,
        test_matrix: state.acc.matrix,
        delay_ps: state.delay.unwrap_or(0),
    })
}
