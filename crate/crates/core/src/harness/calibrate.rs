use super::config::ScenarioConfig;
use super::scenario::simulate;
use super::HarnessError;
use crate::protocol::analyze_streams;
use crate::quantum::{Party, SettingSet};

/// One evaluated transmittance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Probe {
    pub transmittance: f64,
    pub raw_bps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub party: Party,
    pub target_raw_bps: f64,
    pub transmittance: f64,
    pub raw_bps: f64,
    /// Every probe in evaluation order.
    pub probes: Vec<Probe>,
}

struct Prober<'a> {
    config: &'a ScenarioConfig,
    settings: SettingSet,
    delay: Option<i64>,
    probes: Vec<Probe>,
}

impl Prober<'_> {
    /// Sifted key rate from a short session. Every probe reuses the run seed,
    /// so successive probes differ only through the transmittance.
    fn rate(&mut self, transmittance: f64) -> Result<f64, HarnessError> {
        let c = self.config;
        let mut optics = c.optics();
        optics.channel.get_mut(c.calibration.party).transmittance = transmittance;
        optics.source.duration_s = c.calibration.probe_duration_s;
        let sim = simulate(&optics, c.seed)?;
        let mut params = c.protocol;
        params.block_s = c.calibration.probe_duration_s;
        params.fixed_delay_ps = params.fixed_delay_ps.or(self.delay);
        let analysis = analyze_streams(&sim.alice, &sim.bob, &self.settings, &params, c.seed)?;
        self.delay = Some(analysis.delay_ps);
        let raw_bps = analysis.report.aggregate.map_or(0.0, |a| a.raw_bps);
        self.probes.push(Probe {
            transmittance,
            raw_bps,
        });
        Ok(raw_bps)
    }
}

/// Tunes one party's channel transmittance until the sifted key rate lies
/// within the configured relative tolerance of `target_raw_bps`.
///
/// Starts from the configured transmittance, takes one proportional step,
/// then brackets the target and bisects in log-transmittance. Fails when the
/// target is out of reach even at unit transmittance or the iteration budget
/// runs out.
pub fn calibrate_loss(config: &ScenarioConfig, target_raw_bps: f64) -> Result<Calibration, HarnessError> {
    config.validate()?;
    if !(target_raw_bps.is_finite() && target_raw_bps > 0.0) {
        return Err(HarnessError::Calibration(format!(
            "target rate must be finite and > 0, got {target_raw_bps}"
        )));
    }
    let cal = &config.calibration;
    let party = cal.party;
    let tol = cal.tolerance * target_raw_bps;
    let mut prober = Prober {
        config,
        settings: SettingSet::standard(),
        delay: None,
        probes: Vec::new(),
    };
    let done = |prober: Prober, t: f64, r: f64| Calibration {
        party,
        target_raw_bps,
        transmittance: t,
        raw_bps: r,
        probes: prober.probes,
    };

    let t0 = config.channel.get(party).transmittance;
    let r0 = prober.rate(t0)?;
    if (r0 - target_raw_bps).abs() <= tol {
        return Ok(done(prober, t0, r0));
    }
    let t1 = if r0 > 0.0 {
        (t0 * target_raw_bps / r0).min(1.0)
    } else {
        1.0
    };
    let r1 = prober.rate(t1)?;
    if (r1 - target_raw_bps).abs() <= tol {
        return Ok(done(prober, t1, r1));
    }

    // (transmittance, rate) below and above the target
    let (mut lo, mut hi) = if r0 < r1 { ((t0, r0), (t1, r1)) } else { ((t1, r1), (t0, r0)) };
    let mut iterations = 2;
    while hi.1 < target_raw_bps {
        if hi.0 >= 1.0 {
            return Err(HarnessError::Calibration(format!(
                "target {target_raw_bps} bps unreachable: {} bps at unit transmittance",
                hi.1
            )));
        }
        if iterations >= cal.max_iterations {
            break;
        }
        let t = (hi.0 * 2.0).min(1.0);
        lo = hi;
        hi = (t, prober.rate(t)?);
        iterations += 1;
    }
    while lo.1 > target_raw_bps && iterations < cal.max_iterations {
        let t = lo.0 / 2.0;
        hi = lo;
        lo = (t, prober.rate(t)?);
        iterations += 1;
    }
    for probe in [lo, hi] {
        if (probe.1 - target_raw_bps).abs() <= tol {
            return Ok(done(prober, probe.0, probe.1));
        }
    }

    while iterations < cal.max_iterations && lo.1 <= target_raw_bps && hi.1 >= target_raw_bps {
        let t = (lo.0 * hi.0).sqrt();
        let r = prober.rate(t)?;
        iterations += 1;
        if (r - target_raw_bps).abs() <= tol {
            return Ok(done(prober, t, r));
        }
        if r < target_raw_bps {
            lo = (t, r);
        } else {
            hi = (t, r);
        }
    }
    Err(HarnessError::Calibration(format!(
        "no transmittance within {} iterations: {} bps at {}, {} bps at {}",
        cal.max_iterations, lo.1, lo.0, hi.1, hi.0
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lossy() -> ScenarioConfig {
        let mut c = ScenarioConfig::default();
        c.source.pair_rate = 2e4;
        c.channel.bob.transmittance = 0.5;
        c.calibration.probe_duration_s = 0.5;
        c.protocol.delay_search_ps = 100_000;
        c
    }

    #[test]
    fn reaches_a_reachable_target() {
        let c = lossy();
        // A quarter of the pairs are key pairs and half of Bob's photons land
        // in the central bin: 2500 bps at unit transmittance.
        let cal = calibrate_loss(&c, 625.0).unwrap();
        assert!((cal.raw_bps - 625.0).abs() <= 31.25, "{cal:?}");
        assert!((cal.transmittance - 0.25).abs() < 0.03, "{cal:?}");
    }

    #[test]
    fn reports_unreachable_targets() {
        let c = lossy();
        let err = calibrate_loss(&c, 5_000.0).unwrap_err();
        assert!(err.to_string().contains("unreachable"), "{err}");
    }
}
