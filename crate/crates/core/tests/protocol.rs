#![allow(clippy::result_large_err)]

use std::collections::BTreeSet;
use std::io::{self, Read, Write};
use std::sync::{Arc, Mutex};
use std::thread;

use e91_core::optics::{simulate_session, OpticsConfig};
use e91_core::protocol::wire::{decode_frame, encode_frame, read_frame, Hello, Message, ReportPayload, WireError};
use e91_core::protocol::{
    analyze_streams, classify, memory_pair, run_alice, run_bob, run_session, sift, Endpoint, MatchedPair, PairRole,
    ProtocolParams, QberMode, Transport, Verdict,
};
use e91_core::quantum::{DetectorId, Party, SettingLabel, SettingSet};
use e91_core::tags::TagStream;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![-1e6f64..1e6, Just(f64::NAN), Just(0.0)]
}

fn message() -> impl Strategy<Value = Message> {
    let code = 0u8..5;
    prop_oneof![
        (any::<u16>(), 0u8..2, any::<u64>(), any::<u64>(), any::<u64>(), 0u8..2, 0.0f64..0.5, 0.0f64..5.0).prop_map(
            |(version, role, duration_ps, block_ps, window_ps, qber_mode, sample_fraction, abort_sigma)| {
                Message::Hello(Hello {
                    version,
                    role,
                    duration_ps,
                    block_ps,
                    window_ps,
                    qber_mode,
                    sample_fraction,
                    abort_sigma,
                })
            }
        ),
        (any::<u32>(), any::<bool>(), prop::collection::vec((any::<u64>(), code.clone()), 0..50))
            .prop_map(|(block, last, tags)| Message::TagAnnounce { block, last, tags }),
        (any::<u32>(), any::<i64>(), prop::collection::vec((any::<u32>(), code), 0..50))
            .prop_map(|(block, delay_ps, entries)| Message::BasisReveal { block, delay_ps, entries }),
        (any::<u32>(), prop::collection::btree_set(any::<u32>(), 0..50)).prop_map(|(block, p)| {
            Message::SampleRequest {
                block,
                positions: p.into_iter().collect(),
            }
        }),
        (any::<u32>(), prop::collection::vec(0u8..2, 0..80), prop::collection::vec(0u8..2, 0..80)).prop_map(
            |(block, key_bits, test_outcomes)| Message::SampleReveal {
                block,
                key_bits,
                test_outcomes,
            }
        ),
        (any::<u32>(), finite(), finite(), finite(), any::<u64>(), finite(), finite(), finite(), finite(), finite(), 0u8..2)
            .prop_map(|(block, s, s_err, qber, raw_bits, raw_bps, i_ab, i_eve, secure_fraction, secure_bps, verdict)| {
                Message::Report(ReportPayload {
                    block,
                    s,
                    s_err,
                    qber,
                    raw_bits,
                    raw_bps,
                    i_ab,
                    i_eve,
                    secure_fraction,
                    secure_bps,
                    verdict,
                })
            }),
        "[a-z ]{0,40}".prop_map(|reason| Message::Abort { reason }),
    ]
}

proptest! {
    #[test]
    fn frames_round_trip(seq in any::<u64>(), msg in message()) {
        let bytes = encode_frame(seq, &msg).unwrap();
        let (s, back) = decode_frame(&bytes).unwrap();
        prop_assert_eq!(s, seq);
        // NaN fields compare through their bit patterns
        prop_assert_eq!(encode_frame(s, &back).unwrap(), bytes);
    }

    #[test]
    fn truncated_frames_are_rejected(seq in any::<u64>(), msg in message(), cut in 0.0f64..1.0) {
        let bytes = encode_frame(seq, &msg).unwrap();
        let n = ((bytes.len() as f64) * cut) as usize;
        prop_assert!(decode_frame(&bytes[..n]).is_err());
    }

    #[test]
    fn arbitrary_bytes_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..200)) {
        let _ = decode_frame(&bytes);
    }

    #[test]
    fn sifting_is_exhaustive_and_exclusive(raw in prop::collection::vec((1u16..=6, 1u16..=4), 0..300)) {
        let settings = SettingSet::standard();
        let pairs: Vec<MatchedPair> = raw
            .iter()
            .enumerate()
            .map(|(i, &(a, b))| MatchedPair { alice: DetectorId(a), bob: DetectorId(b), id: i as u64 })
            .collect();
        let r = sift(&pairs, &settings, 3).unwrap();
        prop_assert_eq!(r.alice.len() + r.test.len() + r.discarded, pairs.len());
        prop_assert_eq!(&r.alice.pair_ids, &r.bob.pair_ids);
        let key: BTreeSet<u64> = r.alice.pair_ids.iter().copied().collect();
        let test: BTreeSet<u64> = r.test.iter().map(|p| p.id).collect();
        prop_assert!(key.is_disjoint(&test));
        for p in &pairs {
            let (la, _) = settings.lookup(Party::Alice, p.alice).unwrap();
            let (lb, _) = settings.lookup(Party::Bob, p.bob).unwrap();
            let role = classify(la, lb);
            prop_assert_eq!(role == PairRole::Key, key.contains(&p.id));
            prop_assert_eq!(role == PairRole::Test, test.contains(&p.id));
        }
    }
}

#[test]
fn roles_cover_every_setting_pair() {
    use SettingLabel::*;
    let roles: Vec<PairRole> = [A0, A1, A2]
        .iter()
        .flat_map(|&a| [B0, B1].map(move |b| classify(a, b)))
        .collect();
    assert_eq!(roles.iter().filter(|r| **r == PairRole::Key).count(), 1);
    assert_eq!(roles.iter().filter(|r| **r == PairRole::Test).count(), 4);
    assert_eq!(classify(A2, B0), PairRole::Key);
}

#[test]
fn unknown_channels_are_rejected() {
    let pairs = [MatchedPair {
        alice: DetectorId(9),
        bob: DetectorId(1),
        id: 0,
    }];
    assert!(sift(&pairs, &SettingSet::standard(), 0).is_err());
}

fn noisy_streams(seed: u64) -> (TagStream, TagStream) {
    let mut cfg = OpticsConfig::ideal(2e5, 0.6);
    cfg.source.reference_phase = 2.8;
    cfg.channel.bob.delay_ps = 2_500_000;
    cfg.channel.alice.transmittance = 0.4;
    cfg.detector.alice.jitter_fwhm_ps = 100.0;
    cfg.detector.bob.dark_rate = 4e4;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let out = simulate_session(&cfg, &SettingSet::standard(), false, &mut rng).unwrap();
    (out.alice, out.bob)
}

fn params() -> ProtocolParams {
    ProtocolParams {
        block_s: 0.2,
        delay_search_ps: 10_000_000,
        announce_chunk: 5_000,
        ..ProtocolParams::default()
    }
}

/// Copies everything written through it into a shared log.
struct Tap<S> {
    inner: S,
    log: Arc<Mutex<Vec<u8>>>,
}

impl<S: Read> Read for Tap<S> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        self.inner.read(buf)
    }
}

impl<S: Write> Write for Tap<S> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.log.lock().unwrap().extend_from_slice(&buf[..n]);
        Ok(n)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

fn frames(log: &[u8]) -> Vec<Message> {
    let mut cursor = log;
    let mut out = Vec::new();
    loop {
        match read_frame(&mut cursor) {
            Ok((_, m)) => out.push(m),
            Err(WireError::Closed) => return out,
            Err(e) => panic!("{e}"),
        }
    }
}

#[test]
fn protocol_run_matches_the_offline_pipeline() {
    let (a, b) = noisy_streams(21);
    let settings = SettingSet::standard();
    let p = params();
    let offline = analyze_streams(&a, &b, &settings, &p, 5).unwrap();
    let alice = Endpoint::new(Party::Alice, settings.clone(), p, 5);
    let bob = Endpoint::new(Party::Bob, settings.clone(), p, 5);
    let online = run_session(&alice, &bob, Transport::Memory, &a, &b).unwrap();
    assert_eq!(online.alice.report, online.bob.report);
    assert_eq!(online.report(), &offline.report);
    assert_eq!(online.alice.keys, offline.alice_keys);
    assert_eq!(online.bob.keys, offline.bob_keys);
    assert_eq!(online.alice.disclosed, offline.disclosed);
    assert_eq!(online.report().blocks.len(), 3);
}

#[test]
fn nothing_beyond_the_sample_is_disclosed() {
    let (a, b) = noisy_streams(22);
    let settings = SettingSet::standard();
    let p = params();
    let alice = Endpoint::new(Party::Alice, settings.clone(), p, 9);
    let bob = Endpoint::new(Party::Bob, settings.clone(), p, 9);
    let (ea, eb) = memory_pair(4);
    let (log_a, log_b) = (Arc::default(), Arc::default());
    let (ta, tb) = (
        Tap {
            inner: ea,
            log: Arc::clone(&log_a),
        },
        Tap {
            inner: eb,
            log: Arc::clone(&log_b),
        },
    );
    let (ra, rb) = thread::scope(|s| {
        let hb = s.spawn(|| run_bob(&bob, &b, tb));
        (run_alice(&alice, &a, ta), hb.join().unwrap())
    });
    let (ra, rb) = (ra.map_err(|f| f.error).unwrap(), rb.map_err(|f| f.error).unwrap());

    let from_alice = frames(&log_a.lock().unwrap());
    let from_bob = frames(&log_b.lock().unwrap());
    let requested: usize = from_alice
        .iter()
        .map(|m| match m {
            Message::SampleRequest { positions, .. } => positions.len(),
            _ => 0,
        })
        .sum();
    let key_bits_sent = |msgs: &[Message]| -> usize {
        msgs.iter()
            .map(|m| match m {
                Message::SampleReveal { key_bits, .. } => key_bits.len(),
                _ => 0,
            })
            .sum()
    };
    assert_eq!(key_bits_sent(&from_alice), requested);
    assert_eq!(key_bits_sent(&from_bob), requested);
    assert_eq!(ra.disclosed.len(), requested);
    assert_eq!(ra.disclosed, rb.disclosed);

    // Bob's announcements name a basis per tag, never an outcome.
    let announced: usize = from_bob
        .iter()
        .map(|m| match m {
            Message::TagAnnounce { tags, .. } => {
                assert!(tags.iter().all(|&(_, code)| matches!(
                    SettingLabel::from_code(code),
                    Some(SettingLabel::B0 | SettingLabel::B1)
                )));
                tags.len()
            }
            _ => 0,
        })
        .sum();
    assert_eq!(announced, b.len());

    let disclosed: BTreeSet<u64> = ra.disclosed.iter().copied().collect();
    for (ka, kb) in ra.keys.iter().zip(&rb.keys) {
        assert_eq!(ka.pair_ids, kb.pair_ids);
        assert!(ka.pair_ids.iter().all(|id| !disclosed.contains(id)));
    }
    let kept: usize = ra.keys.iter().map(|k| k.len()).sum();
    let raw: u64 = ra.report.blocks.iter().map(|r| r.raw_bits).sum();
    assert_eq!(kept + requested, raw as usize);
}

#[test]
fn tcp_and_memory_agree() {
    let (a, b) = noisy_streams(23);
    let settings = SettingSet::standard();
    let p = params();
    let alice = Endpoint::new(Party::Alice, settings.clone(), p, 1);
    let bob = Endpoint::new(Party::Bob, settings, p, 1);
    let mem = run_session(&alice, &bob, Transport::Memory, &a, &b).unwrap();
    let tcp = run_session(&alice, &bob, Transport::Tcp("127.0.0.1:0".parse().unwrap()), &a, &b).unwrap();
    assert_eq!(mem, tcp);
}

#[test]
fn mismatched_parameters_abort_the_session() {
    let (a, b) = noisy_streams(24);
    let settings = SettingSet::standard();
    let alice = Endpoint::new(Party::Alice, settings.clone(), params(), 1);
    let bob = Endpoint::new(
        Party::Bob,
        settings,
        ProtocolParams {
            window_ps: 128,
            ..params()
        },
        1,
    );
    let err = run_session(&alice, &bob, Transport::Memory, &a, &b).unwrap_err();
    assert!(err.partial.blocks.is_empty());
}

#[test]
fn full_comparison_leaves_no_key_and_catches_errors() {
    let (a, mut b) = noisy_streams(25);
    let mut cfg = OpticsConfig::ideal(0.0, 0.6);
    cfg.detector.bob.dark_rate = 2e6;
    let mut rng = ChaCha8Rng::seed_from_u64(26);
    let dark = simulate_session(&cfg, &SettingSet::standard(), false, &mut rng).unwrap().bob;
    let mut tags = b.into_tags();
    tags.extend_from_slice(dark.tags());
    b = TagStream::from_unsorted(Party::Bob, tags, a.duration_ps());
    let p = ProtocolParams {
        qber_mode: QberMode::All,
        ..params()
    };
    let r = analyze_streams(&a, &b, &SettingSet::standard(), &p, 0).unwrap();
    assert!(r.alice_keys.iter().all(|k| k.is_empty()));
    let agg = r.report.aggregate.unwrap();
    // extra dark counts on Bob's side pair up by accident with Alice's clicks
    assert!(agg.qber > 0.0 && agg.qber < 0.05, "{}", agg.qber);
    assert_eq!(agg.verdict, Verdict::Accept, "{agg:?}");
}
