use rand::Rng;
use rand_distr::{Distribution, Exp, Normal};

use super::{ChannelModel, DetectorModel, TimeBin, FWHM_PER_SIGMA, PS_PER_S};
use crate::quantum::{DetectorId, Party};
use crate::tags::TimeTag;

/// Non-paralyzable dead time bookkeeping for one detector.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ChannelState {
    last: Option<u64>,
}

impl ChannelState {
    /// Registers a click at `t` unless it falls inside the dead time of the
    /// previous registered click. Clicks must be offered in time order. Two
    /// clicks in the same picosecond are never both registered.
    pub fn admit(&mut self, t: u64, dead_time_ps: u64) -> bool {
        if let Some(last) = self.last {
            if t < last.saturating_add(dead_time_ps.max(1)) {
                return false;
            }
        }
        self.last = Some(t);
        true
    }
}

/// Drops events that hit a detector while it is dead. `events` must be
/// sorted by `time_of`.
pub fn apply_dead_time<T>(events: &mut Vec<T>, dead_time_ps: u64, time_of: impl Fn(&T) -> u64) {
    let mut state = ChannelState::default();
    events.retain(|e| state.admit(time_of(e), dead_time_ps));
}

/// Poisson arrival times over `[0, duration_ps)`.
pub(crate) fn poisson_times<R: Rng + ?Sized>(rate_per_s: f64, duration_ps: u64, rng: &mut R) -> Vec<u64> {
    let mut out = Vec::new();
    let Some(clock) = PoissonClock::new(rate_per_s, duration_ps) else {
        return out;
    };
    let mut clock = clock;
    while let Some(t) = clock.next(rng) {
        out.push(t);
    }
    out
}

/// Successive arrival times of a Poisson process; accumulates in `f64`
/// picoseconds so sub-picosecond gaps are not lost.
pub(crate) struct PoissonClock {
    t: f64,
    end: f64,
    exp: Exp<f64>,
}

impl PoissonClock {
    pub(crate) fn new(rate_per_s: f64, duration_ps: u64) -> Option<Self> {
        if !(rate_per_s > 0.0) || duration_ps == 0 {
            return None;
        }
        Some(Self {
            t: 0.0,
            end: duration_ps as f64,
            exp: Exp::new(rate_per_s / PS_PER_S).ok()?,
        })
    }

    pub(crate) fn next<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Option<u64> {
        self.t += self.exp.sample(rng);
        (self.t < self.end).then_some(self.t as u64)
    }
}

/// Dark counts for each listed detector, dead time applied, in global
/// `(time, channel)` order.
pub fn dark_tags<R: Rng + ?Sized>(
    detector: &DetectorModel,
    channels: &[DetectorId],
    duration_ps: u64,
    rng: &mut R,
) -> Vec<TimeTag> {
    let mut tags = Vec::new();
    for &ch in channels {
        let mut times = poisson_times(detector.dark_rate, duration_ps, rng);
        apply_dead_time(&mut times, detector.dead_time_ps, |&t| t);
        tags.extend(times.into_iter().map(|t| TimeTag::new(ch, t)));
    }
    tags.sort_unstable();
    tags
}

/// Channel, detector and decoder seen by one party's photons.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionPath {
    pub party: Party,
    pub channel: ChannelModel,
    pub detector: DetectorModel,
    pub extra_jitter_fwhm_ps: f64,
    pub bin_separation_ps: u64,
}

impl DetectionPath {
    /// Probability that an emitted photon produces a click.
    pub fn survival(&self) -> f64 {
        self.channel.transmittance * self.detector.efficiency
    }

    /// Combined timing jitter standard deviation.
    pub fn sigma_ps(&self) -> f64 {
        self.detector.jitter_fwhm_ps.hypot(self.extra_jitter_fwhm_ps) / FWHM_PER_SIGMA
    }

    /// Alice's photons always sit in the central slot of her own decoder;
    /// Bob's land in the slot drawn for the pair.
    pub fn bin_offset_ps(&self, bin: TimeBin) -> u64 {
        match self.party {
            Party::Alice => self.bin_separation_ps,
            Party::Bob => bin.offset_ps(self.bin_separation_ps),
        }
    }

    pub fn jitter(&self) -> Option<Normal<f64>> {
        let sigma = self.sigma_ps();
        (sigma > 0.0).then(|| Normal::new(0.0, sigma).expect("finite jitter"))
    }

    /// Jittered click time, or `None` if jitter pushes it before zero.
    pub fn arrival_time<R: Rng + ?Sized>(
        &self,
        emission_ps: u64,
        bin: TimeBin,
        jitter: Option<&Normal<f64>>,
        rng: &mut R,
    ) -> Option<u64> {
        let base = emission_ps + self.channel.delay_ps + self.bin_offset_ps(bin);
        match jitter {
            None => Some(base),
            Some(n) => {
                let t = (base as f64 + n.sample(rng)).round();
                (t >= 0.0).then_some(t as u64)
            }
        }
    }

    /// Full single-photon detection: loss, jitter, then dead time.
    pub fn detect<R: Rng + ?Sized>(
        &self,
        emission_ps: u64,
        bin: TimeBin,
        port: DetectorId,
        state: &mut ChannelState,
        rng: &mut R,
    ) -> Option<TimeTag> {
        if rng.random::<f64>() >= self.survival() {
            return None;
        }
        let t = self.arrival_time(emission_ps, bin, self.jitter().as_ref(), rng)?;
        state
            .admit(t, self.detector.dead_time_ps)
            .then(|| TimeTag::new(port, t))
    }
}
