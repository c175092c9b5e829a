use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::Rng;

use super::detector::{apply_dead_time, poisson_times, PoissonClock};
use super::{OpticsConfig, OpticsError, PairSample, PairSampler, SourceModel, PS_PER_S};
use crate::quantum::{DetectorId, Party, SettingSet};
use crate::tags::{TagStream, TimeTag};

/// Emission times of every pair over the session, unthinned.
pub fn generate_pair_times<R: Rng + ?Sized>(source: &SourceModel, rng: &mut R) -> Vec<u64> {
    poisson_times(source.pair_rate, source.duration_ps(), rng)
}

/// A pair that reached at least one detector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmissionRecord {
    pub time_ps: u64,
    pub sample: PairSample,
}

/// Simulation-side provenance of each tag: index into `emissions`, or
/// `None` for dark counts. Never visible to the protocol.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruth {
    pub emissions: Vec<EmissionRecord>,
    pub alice_sources: Vec<Option<u32>>,
    pub bob_sources: Vec<Option<u32>>,
}

#[derive(Debug, Clone)]
pub struct SessionOutput {
    pub alice: TagStream,
    pub bob: TagStream,
    pub truth: Option<GroundTruth>,
}

const DARK: u32 = u32::MAX;

/// Per-detector event buffers for one party.
struct Buffers {
    ids: Vec<DetectorId>,
    index: Vec<Option<usize>>,
    events: Vec<Vec<(u64, u32)>>,
}

impl Buffers {
    fn new(ids: Vec<DetectorId>) -> Self {
        let max = ids.iter().map(|d| d.0 as usize).max().unwrap_or(0);
        let mut index = vec![None; max + 1];
        for (k, d) in ids.iter().enumerate() {
            index[d.0 as usize] = Some(k);
        }
        let events = vec![Vec::new(); ids.len()];
        Self { ids, index, events }
    }

    fn push(&mut self, port: DetectorId, t: u64, source: u32) {
        let k = self.index[port.0 as usize].expect("port belongs to the setting set");
        self.events[k].push((t, source));
    }

    /// Sorts each detector, applies dead time and merges into global
    /// `(time, channel)` order.
    fn finish(mut self, dead_time_ps: u64) -> (Vec<TimeTag>, Vec<Option<u32>>) {
        for ev in &mut self.events {
            ev.sort_unstable();
            apply_dead_time(ev, dead_time_ps, |e| e.0);
        }
        let total: usize = self.events.iter().map(Vec::len).sum();
        let mut tags = Vec::with_capacity(total);
        let mut sources = Vec::with_capacity(total);
        let mut heads = vec![0usize; self.events.len()];
        let mut heap: BinaryHeap<Reverse<(u64, DetectorId, usize)>> = BinaryHeap::new();
        for (k, ev) in self.events.iter().enumerate() {
            if let Some(&(t, _)) = ev.first() {
                heap.push(Reverse((t, self.ids[k], k)));
            }
        }
        while let Some(Reverse((t, ch, k))) = heap.pop() {
            let (_, src) = self.events[k][heads[k]];
            tags.push(TimeTag::new(ch, t));
            sources.push((src != DARK).then_some(src));
            heads[k] += 1;
            if let Some(&(t2, _)) = self.events[k].get(heads[k]) {
                heap.push(Reverse((t2, ch, k)));
            }
        }
        (tags, sources)
    }
}

/// Runs the physical layer for one session.
///
/// Pairs are thinned at generation: only emissions that produce at least one
/// surviving photon are drawn, at rate `R·(1 − (1−p_A)(1−p_B))`, and the
/// surviving subset is chosen from its conditional distribution. Statistics
/// are identical to simulating every pair. With `record_truth` the output
/// carries tag provenance, which costs memory proportional to the emissions.
pub fn simulate_session<R: Rng + ?Sized>(
    config: &OpticsConfig,
    settings: &SettingSet,
    record_truth: bool,
    rng: &mut R,
) -> Result<SessionOutput, OpticsError> {
    config.validate()?;
    let mut sampler = PairSampler::new(settings, &config.splitting)?;
    let duration_ps = config.source.duration_ps();
    let drift = config.drift.track(config.source.duration_s);
    if config.drift.is_constant() {
        sampler.fix_phase(config.source.reference_phase + drift.phase_at(0.0));
    }

    let alice_path = config.path(Party::Alice);
    let bob_path = config.path(Party::Bob);
    let (alice_jitter, bob_jitter) = (alice_path.jitter(), bob_path.jitter());
    let pa = alice_path.survival();
    let pb = bob_path.survival();
    let q = pa + pb - pa * pb;

    let mut alice = Buffers::new(settings.detectors(Party::Alice));
    let mut bob = Buffers::new(settings.detectors(Party::Bob));
    let mut emissions = Vec::new();

    if let Some(mut clock) = PoissonClock::new(config.source.pair_rate * q, duration_ps) {
        let mut n: u64 = 0;
        while let Some(t) = clock.next(rng) {
            if n >= DARK as u64 {
                return Err(OpticsError::TooManyEvents(n));
            }
            let id = n as u32;
            n += 1;
            let u = rng.random::<f64>() * q;
            let (alice_hit, bob_hit) = if u < pa * pb {
                (true, true)
            } else if u < pa {
                (true, false)
            } else {
                (false, true)
            };
            let phase = config.source.reference_phase + drift.phase_at(t as f64 / PS_PER_S);
            let s = sampler.sample(phase, rng);
            if alice_hit {
                if let Some(ta) = alice_path.arrival_time(t, s.bin, alice_jitter.as_ref(), rng) {
                    alice.push(settings.get(s.alice_setting).port(s.alice_outcome), ta, id);
                }
            }
            if bob_hit {
                if let Some(tb) = bob_path.arrival_time(t, s.bin, bob_jitter.as_ref(), rng) {
                    bob.push(settings.get(s.bob_setting).port(s.bob_outcome), tb, id);
                }
            }
            if record_truth {
                emissions.push(EmissionRecord { time_ps: t, sample: s });
            }
        }
    }

    for (buf, path) in [(&mut alice, &alice_path), (&mut bob, &bob_path)] {
        for k in 0..buf.ids.len() {
            for t in poisson_times(path.detector.dark_rate, duration_ps, rng) {
                buf.events[k].push((t, DARK));
            }
        }
    }

    let (alice_tags, alice_sources) = alice.finish(alice_path.detector.dead_time_ps);
    let (bob_tags, bob_sources) = bob.finish(bob_path.detector.dead_time_ps);
    let truth = record_truth.then_some(GroundTruth {
        emissions,
        alice_sources,
        bob_sources,
    });
    Ok(SessionOutput {
        alice: TagStream::from_unsorted(Party::Alice, alice_tags, duration_ps),
        bob: TagStream::from_unsorted(Party::Bob, bob_tags, duration_ps),
        truth,
    })
}
