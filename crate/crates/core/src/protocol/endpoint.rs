use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::report::{block_report, Accumulator, BlockReport, SecurityReport};
use super::sift::{
    bit_outcome, choose_sample_positions, classify, count_mismatches, key_bit, outcome_bit, pair_id,
    PairRole, SiftedKey,
};
use super::wire::{read_frame, write_frame, Hello, Message, WireError};
use super::{Endpoint, ProtocolError};
use crate::optics::PS_PER_S;
use crate::par::{derive_seed, Execution};
use crate::quantum::{DetectorId, Party, SettingLabel, SettingSet};
use crate::tags::{estimate_delay_times, match_times, ChshLayout, CoincidenceMatrix, TagStream, TagsError, TimeTag};

/// What one endpoint ends up with.
#[derive(Debug, Clone, PartialEq)]
pub struct PartyOutcome {
    pub role: Party,
    /// Final keys per block, disclosed positions removed.
    pub keys: Vec<SiftedKey>,
    /// Pair ids of disclosed key bits.
    pub disclosed: Vec<u64>,
    pub report: SecurityReport,
    /// Test-pool counts summed over all blocks.
    pub test_matrix: CoincidenceMatrix,
    pub delay_ps: Option<i64>,
}

/// An endpoint error together with the blocks completed before it.
#[derive(Debug)]
pub struct EndpointFailure {
    pub error: ProtocolError,
    pub partial: SecurityReport,
}

/// Framed, sequence-checked message link.
struct Link<S> {
    stream: S,
    next_seq: u64,
    last_recv: Option<u64>,
}

impl<S: Read + Write> Link<S> {
    fn new(stream: S) -> Self {
        Self {
            stream,
            next_seq: 0,
            last_recv: None,
        }
    }

    fn send(&mut self, msg: &Message) -> Result<(), ProtocolError> {
        write_frame(&mut self.stream, self.next_seq, msg)?;
        self.next_seq += 1;
        Ok(())
    }

    fn recv(&mut self) -> Result<Message, ProtocolError> {
        let (seq, msg) = read_frame(&mut self.stream)?;
        if self.last_recv.is_some_and(|last| seq <= last) {
            return Err(ProtocolError::Violation(format!("sequence number {seq} not increasing")));
        }
        self.last_recv = Some(seq);
        if let Message::Abort { reason } = msg {
            return Err(ProtocolError::PeerAbort(reason));
        }
        Ok(msg)
    }

    /// Tells the peer why we stop, unless the link itself is what failed.
    fn abort(&mut self, err: &ProtocolError) {
        let link_failed = matches!(
            err,
            ProtocolError::PeerAbort(_) | ProtocolError::Wire(WireError::Io(_) | WireError::Closed)
        );
        if !link_failed {
            let _ = self.send(&Message::Abort {
                reason: err.to_string(),
            });
        }
    }
}

fn unexpected(want: &str, got: &Message) -> ProtocolError {
    ProtocolError::Violation(format!("expected {want}, got {}", got.kind().name()))
}

fn check_block(want: u32, got: u32) -> Result<(), ProtocolError> {
    if want != got {
        return Err(ProtocolError::Violation(format!("message for block {got}, expected {want}")));
    }
    Ok(())
}

fn exchange_hello<S: Read + Write>(link: &mut Link<S>, mine: Hello) -> Result<(), ProtocolError> {
    link.send(&Message::Hello(mine))?;
    let theirs = match link.recv()? {
        Message::Hello(h) => h,
        other => return Err(unexpected("hello", &other)),
    };
    let same = theirs.version == mine.version
        && theirs.role != mine.role
        && theirs.duration_ps == mine.duration_ps
        && theirs.block_ps == mine.block_ps
        && theirs.window_ps == mine.window_ps
        && theirs.qber_mode == mine.qber_mode
        && theirs.sample_fraction.to_bits() == mine.sample_fraction.to_bits()
        && theirs.abort_sigma.to_bits() == mine.abort_sigma.to_bits();
    if !same {
        return Err(ProtocolError::Violation(format!(
            "session parameters disagree: {mine:?} vs {theirs:?}"
        )));
    }
    Ok(())
}

/// Alice's half of one block, computed from her tags and Bob's announcement.
pub(crate) struct AlicePlan {
    pub entries: Vec<(u32, u8)>,
    pub key: SiftedKey,
    /// Alice detector, Bob setting, Bob tag index.
    pub test: Vec<(DetectorId, SettingLabel, u32)>,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn plan_alice_block(
    settings: &SettingSet,
    alice: &[TimeTag],
    alice_times: &[u64],
    bob_times: &[u64],
    bob_basis: &[SettingLabel],
    block: u32,
    bounds: (u64, u64),
    window_ps: u64,
    delay_ps: i64,
) -> Result<AlicePlan, ProtocolError> {
    // Alice's tags belong to the block their delayed time falls in
    let shifted = |t: u64| t as i128 + delay_ps as i128;
    let lo = alice_times.partition_point(|&t| shifted(t) < bounds.0 as i128);
    let hi = alice_times.partition_point(|&t| shifted(t) < bounds.1 as i128);
    let pairs = match_times(&alice_times[lo..hi], bob_times, window_ps, delay_ps);
    let mut plan = AlicePlan {
        entries: Vec::with_capacity(pairs.len()),
        key: SiftedKey::new(block),
        test: Vec::new(),
    };
    for (i, j) in pairs {
        let tag = alice[lo + i];
        let (sa, oa) = settings.lookup(Party::Alice, tag.channel).ok_or(TagsError::UnknownChannel {
            party: Party::Alice,
            channel: tag.channel,
        })?;
        let j = j as u32;
        plan.entries.push((j, sa.code()));
        match classify(sa, bob_basis[j as usize]) {
            PairRole::Key => plan.key.push(key_bit(oa), pair_id(block, j)),
            PairRole::Test => plan.test.push((tag.channel, bob_basis[j as usize], j)),
            PairRole::Discard => {}
        }
    }
    Ok(plan)
}

pub(crate) fn block_rng(seed: u64, block: u32) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, u64::from(block)))
}

/// Positions to disclose, or none when the key is too short to sample.
pub(crate) fn sample_positions(ep: &Endpoint, block: u32, key_len: usize) -> Vec<u32> {
    let mut rng = block_rng(ep.seed, block);
    choose_sample_positions(key_len, ep.params.qber_mode, ep.params.sample_fraction, &mut rng)
        .unwrap_or_default()
}

fn bits_valid(bits: &[u8]) -> Result<(), ProtocolError> {
    if bits.iter().any(|&b| b > 1) {
        return Err(ProtocolError::Violation("bit value outside {0, 1}".into()));
    }
    Ok(())
}

fn bob_label(settings: &SettingSet, ch: DetectorId) -> Result<(SettingLabel, crate::quantum::Outcome), ProtocolError> {
    settings.lookup(Party::Bob, ch).ok_or(ProtocolError::Tags(TagsError::UnknownChannel {
        party: Party::Bob,
        channel: ch,
    }))
}

pub(crate) struct State {
    pub(crate) layout: ChshLayout,
    pub(crate) acc: Accumulator,
    pub(crate) blocks: Vec<BlockReport>,
    pub(crate) keys: Vec<SiftedKey>,
    pub(crate) disclosed: Vec<u64>,
    pub(crate) delay: Option<i64>,
}

impl State {
    pub(crate) fn new(settings: &SettingSet) -> Self {
        Self {
            layout: ChshLayout::from_settings(&settings.chsh()),
            acc: Accumulator::default(),
            blocks: Vec::new(),
            keys: Vec::new(),
            disclosed: Vec::new(),
            delay: None,
        }
    }

    fn partial(&self) -> SecurityReport {
        SecurityReport {
            blocks: self.blocks.clone(),
            aggregate: None,
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn finish_block(
        &mut self,
        ep: &Endpoint,
        block: u32,
        matrix: CoincidenceMatrix,
        key: &SiftedKey,
        positions: &[u32],
        errors: u64,
        duration_s: f64,
    ) -> BlockReport {
        let report = block_report(
            Some(block),
            &matrix,
            &self.layout,
            errors,
            positions.len() as u64,
            key.len() as u64,
            duration_s,
            ep.params.abort_sigma,
        );
        self.acc
            .add(&matrix, errors, positions.len() as u64, key.len() as u64, duration_s);
        self.disclosed
            .extend(positions.iter().map(|&p| key.pair_ids[p as usize]));
        self.keys.push(key.without(positions));
        report
    }

    pub(crate) fn into_outcome(self, role: Party, aggregate: BlockReport) -> PartyOutcome {
        PartyOutcome {
            role,
            keys: self.keys,
            disclosed: self.disclosed,
            report: SecurityReport {
                blocks: self.blocks,
                aggregate: Some(aggregate),
            },
            test_matrix: self.acc.matrix,
            delay_ps: self.delay,
        }
    }
}

/// Runs Alice over `stream`: receives Bob's announcements, matches, sifts
/// and produces the report.
pub fn run_alice<S: Read + Write>(
    ep: &Endpoint,
    tags: &TagStream,
    stream: S,
) -> Result<PartyOutcome, EndpointFailure> {
    let mut link = Link::new(stream);
    let mut state = State::new(&ep.settings);
    match alice_session(ep, tags, &mut link, &mut state) {
        Ok(aggregate) => Ok(state.into_outcome(Party::Alice, aggregate)),
        Err(error) => {
            link.abort(&error);
            Err(EndpointFailure {
                error,
                partial: state.partial(),
            })
        }
    }
}

fn alice_session<S: Read + Write>(
    ep: &Endpoint,
    tags: &TagStream,
    link: &mut Link<S>,
    state: &mut State,
) -> Result<BlockReport, ProtocolError> {
    ep.validate()?;
    if ep.role != Party::Alice {
        return Err(ProtocolError::Violation("endpoint is not Alice".into()));
    }
    let duration = tags.duration_ps();
    exchange_hello(link, ep.hello(duration))?;
    let settings = &ep.settings;
    let params = &ep.params;
    let alice_times = tags.times();
    state.delay = params.fixed_delay_ps;

    for k in 0..params.block_count(duration) {
        let bounds = params.block_bounds(k, duration);
        let duration_s = (bounds.1 - bounds.0) as f64 / PS_PER_S;

        let mut bob_times = Vec::new();
        let mut bob_basis = Vec::new();
        loop {
            match link.recv()? {
                Message::TagAnnounce { block, last, tags } => {
                    check_block(k, block)?;
                    for (t, code) in tags {
                        let label = SettingLabel::from_code(code)
                            .filter(|l| l.party() == Party::Bob)
                            .ok_or_else(|| ProtocolError::Violation(format!("bad basis code {code}")))?;
                        if bob_times.last().is_some_and(|&prev| t < prev) || t < bounds.0 || t >= bounds.1 {
                            return Err(ProtocolError::Violation(format!(
                                "announced time {t} out of order or outside block {k}"
                            )));
                        }
                        bob_times.push(t);
                        bob_basis.push(label);
                    }
                    if last {
                        break;
                    }
                }
                other => return Err(unexpected("tag_announce", &other)),
            }
        }

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
            tags.tags(),
            &alice_times,
            &bob_times,
            &bob_basis,
            k,
            bounds,
            params.window_ps,
            delay,
        )?;
        drop(bob_times);
        drop(bob_basis);

        link.send(&Message::BasisReveal {
            block: k,
            delay_ps: delay,
            entries: plan.entries,
        })?;
        let positions = sample_positions(ep, k, plan.key.len());
        link.send(&Message::SampleRequest {
            block: k,
            positions: positions.clone(),
        })?;

        let (bob_bits, bob_test) = match link.recv()? {
            Message::SampleReveal {
                block,
                key_bits,
                test_outcomes,
            } => {
                check_block(k, block)?;
                (key_bits, test_outcomes)
            }
            other => return Err(unexpected("sample_reveal", &other)),
        };
        if bob_bits.len() != positions.len() || bob_test.len() != plan.test.len() {
            return Err(ProtocolError::Violation("sample_reveal lengths do not match".into()));
        }
        bits_valid(&bob_bits)?;
        bits_valid(&bob_test)?;

        let my_bits = plan.key.bits_at(&positions);
        let my_test: Vec<u8> = plan
            .test
            .iter()
            .map(|&(ch, _, _)| outcome_bit(settings.lookup(Party::Alice, ch).expect("checked").1))
            .collect();
        link.send(&Message::SampleReveal {
            block: k,
            key_bits: my_bits.clone(),
            test_outcomes: my_test,
        })?;

        let errors = count_mismatches(&my_bits, &bob_bits);
        let mut matrix = CoincidenceMatrix::empty(params.window_ps, delay, bounds.1 - bounds.0);
        for (&(ach, bl, _), &bit) in plan.test.iter().zip(&bob_test) {
            let port = settings.get(bl).port(bit_outcome(bit).expect("checked"));
            matrix.add(ach, port, 1);
        }
        let report = state.finish_block(ep, k, matrix, &plan.key, &positions, errors, duration_s);

        link.send(&Message::Report(report.to_payload()))?;
        match link.recv()? {
            Message::Report(theirs) if report.same_as(&theirs) => {}
            Message::Report(_) => {
                return Err(ProtocolError::Violation(format!("block {k} reports disagree")));
            }
            other => return Err(unexpected("report", &other)),
        }
        state.blocks.push(report);
    }

    let aggregate = state.acc.report(&state.layout, params.abort_sigma);
    link.send(&Message::Report(aggregate.to_payload()))?;
    match link.recv()? {
        Message::Report(theirs) if aggregate.same_as(&theirs) => Ok(aggregate),
        Message::Report(_) => Err(ProtocolError::Violation("aggregate reports disagree".into())),
        other => Err(unexpected("report", &other)),
    }
}

/// Runs Bob over `stream`: announces his tags and verifies Alice's report.
pub fn run_bob<S: Read + Write>(
    ep: &Endpoint,
    tags: &TagStream,
    stream: S,
) -> Result<PartyOutcome, EndpointFailure> {
    let mut link = Link::new(stream);
    let mut state = State::new(&ep.settings);
    match bob_session(ep, tags, &mut link, &mut state) {
        Ok(aggregate) => Ok(state.into_outcome(Party::Bob, aggregate)),
        Err(error) => {
            link.abort(&error);
            Err(EndpointFailure {
                error,
                partial: state.partial(),
            })
        }
    }
}

fn bob_session<S: Read + Write>(
    ep: &Endpoint,
    tags: &TagStream,
    link: &mut Link<S>,
    state: &mut State,
) -> Result<BlockReport, ProtocolError> {
    ep.validate()?;
    if ep.role != Party::Bob {
        return Err(ProtocolError::Violation("endpoint is not Bob".into()));
    }
    let duration = tags.duration_ps();
    exchange_hello(link, ep.hello(duration))?;
    let settings = &ep.settings;
    let params = &ep.params;

    for k in 0..params.block_count(duration) {
        let bounds = params.block_bounds(k, duration);
        let duration_s = (bounds.1 - bounds.0) as f64 / PS_PER_S;
        let mine = tags.window(bounds.0, bounds.1);

        let mut labels = Vec::with_capacity(mine.len());
        for t in mine {
            labels.push(bob_label(settings, t.channel)?);
        }
        let chunks = mine.chunks(params.announce_chunk);
        let n_chunks = chunks.len();
        if n_chunks == 0 {
            link.send(&Message::TagAnnounce {
                block: k,
                last: true,
                tags: Vec::new(),
            })?;
        }
        for (c, chunk) in mine.chunks(params.announce_chunk).enumerate() {
            let base = c * params.announce_chunk;
            let tags = chunk
                .iter()
                .enumerate()
                .map(|(i, t)| (t.time, labels[base + i].0.code()))
                .collect();
            link.send(&Message::TagAnnounce {
                block: k,
                last: c + 1 == n_chunks,
                tags,
            })?;
        }

        let (delay, entries) = match link.recv()? {
            Message::BasisReveal {
                block,
                delay_ps,
                entries,
            } => {
                check_block(k, block)?;
                (delay_ps, entries)
            }
            other => return Err(unexpected("basis_reveal", &other)),
        };
        state.delay = Some(delay);

        let mut used = vec![false; mine.len()];
        let mut key = SiftedKey::new(k);
        // Alice setting, Bob tag index
        let mut test: Vec<(SettingLabel, u32)> = Vec::new();
        for &(j, code) in &entries {
            let alice_label = SettingLabel::from_code(code)
                .filter(|l| l.party() == Party::Alice)
                .ok_or_else(|| ProtocolError::Violation(format!("bad setting code {code}")))?;
            let slot = used
                .get_mut(j as usize)
                .ok_or_else(|| ProtocolError::Violation(format!("tag index {j} out of range")))?;
            if *slot {
                return Err(ProtocolError::Violation(format!("tag index {j} matched twice")));
            }
            *slot = true;
            let (bl, bo) = labels[j as usize];
            match classify(alice_label, bl) {
                PairRole::Key => key.push(key_bit(bo), pair_id(k, j)),
                PairRole::Test => test.push((alice_label, j)),
                PairRole::Discard => {}
            }
        }
        drop(entries);
        drop(used);

        let positions = match link.recv()? {
            Message::SampleRequest { block, positions } => {
                check_block(k, block)?;
                positions
            }
            other => return Err(unexpected("sample_request", &other)),
        };
        let increasing = positions.windows(2).all(|w| w[0] < w[1]);
        if !increasing || positions.last().is_some_and(|&p| p as usize >= key.len()) {
            return Err(ProtocolError::Violation("sample positions invalid".into()));
        }

        let my_bits = key.bits_at(&positions);
        let my_test: Vec<u8> = test
            .iter()
            .map(|&(_, j)| outcome_bit(labels[j as usize].1))
            .collect();
        link.send(&Message::SampleReveal {
            block: k,
            key_bits: my_bits.clone(),
            test_outcomes: my_test,
        })?;

        let (alice_bits, alice_test) = match link.recv()? {
            Message::SampleReveal {
                block,
                key_bits,
                test_outcomes,
            } => {
                check_block(k, block)?;
                (key_bits, test_outcomes)
            }
            other => return Err(unexpected("sample_reveal", &other)),
        };
        if alice_bits.len() != positions.len() || alice_test.len() != test.len() {
            return Err(ProtocolError::Violation("sample_reveal lengths do not match".into()));
        }
        bits_valid(&alice_bits)?;
        bits_valid(&alice_test)?;

        let errors = count_mismatches(&alice_bits, &my_bits);
        let mut matrix = CoincidenceMatrix::empty(params.window_ps, delay, bounds.1 - bounds.0);
        for (&(al, j), &bit) in test.iter().zip(&alice_test) {
            let aport = settings.get(al).port(bit_outcome(bit).expect("checked"));
            matrix.add(aport, mine[j as usize].channel, 1);
        }
        let report = state.finish_block(ep, k, matrix, &key, &positions, errors, duration_s);

        match link.recv()? {
            Message::Report(theirs) if report.same_as(&theirs) => {}
            Message::Report(_) => {
                return Err(ProtocolError::Violation(format!("block {k} reports disagree")));
            }
            other => return Err(unexpected("report", &other)),
        }
        link.send(&Message::Report(report.to_payload()))?;
        state.blocks.push(report);
    }

    let aggregate = state.acc.report(&state.layout, params.abort_sigma);
    match link.recv()? {
        Message::Report(theirs) if aggregate.same_as(&theirs) => {}
        Message::Report(_) => return Err(ProtocolError::Violation("aggregate reports disagree".into())),
        other => return Err(unexpected("report", &other)),
    }
    link.send(&Message::Report(aggregate.to_payload()))?;
    Ok(aggregate)
}
