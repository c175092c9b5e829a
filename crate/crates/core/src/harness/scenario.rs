use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use super::config::{ConfigError, ScenarioConfig, ScenarioKind, SweepParameter};
use super::HarnessError;
use crate::optics::{simulate_session, DriftModel, OpticsConfig, SessionOutput};
use crate::par::{self, derive_seed, Execution};
use crate::protocol::{analyze_streams, run_session, BlockReport, Endpoint, SecurityReport, Verdict};
use crate::quantum::{chsh_value, Party, SettingSet, TwoQubitState};
use crate::tags::{
    chsh_from_counts, estimate_delay_times, window_sweep, write_estimates_csv, ChshLayout, TagStream, WindowPoint,
};

/// One point of a phase or temperature sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub index: usize,
    /// The swept value as configured.
    pub value: f64,
    /// State phase at this point, radians.
    pub phase: f64,
    pub report: BlockReport,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilitySummary {
    /// First time the drifting phase brings the ideal-state S down to 2.
    pub predicted_crossing_s: Option<f64>,
    pub predicted_block: Option<u32>,
    pub first_abort_block: Option<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub scenario: ScenarioKind,
    /// Written files, relative to the output directory.
    pub files: Vec<String>,
    pub report: Option<SecurityReport>,
    pub sweep: Vec<SweepPoint>,
    pub windows: Vec<WindowPoint>,
    pub stability: Option<StabilitySummary>,
}

impl RunOutcome {
    fn new(scenario: ScenarioKind) -> Self {
        Self {
            scenario,
            files: Vec::new(),
            report: None,
            sweep: Vec::new(),
            windows: Vec::new(),
            stability: None,
        }
    }

    /// Session verdict for the scenarios that run the protocol.
    pub fn verdict(&self) -> Option<Verdict> {
        self.report.as_ref().map(SecurityReport::verdict)
    }
}

struct Outputs<'a> {
    dir: &'a Path,
    files: Vec<String>,
}

impl Outputs<'_> {
    fn write(
        &mut self,
        name: &str,
        body: impl FnOnce(&mut BufWriter<File>) -> io::Result<()>,
    ) -> Result<(), HarnessError> {
        let path = self.dir.join(name);
        let io_err = |source| HarnessError::Io {
            path: path.clone(),
            source,
        };
        let mut w = BufWriter::new(File::create(&path).map_err(io_err)?);
        body(&mut w).and_then(|_| w.flush()).map_err(io_err)?;
        self.files.push(name.to_string());
        Ok(())
    }
}

/// Simulates one session with a generator seeded from `seed`.
pub fn simulate(optics: &OpticsConfig, seed: u64) -> Result<SessionOutput, HarnessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(simulate_session(optics, &SettingSet::standard(), false, &mut rng)?)
}

/// Runs the configured scenario and writes its outputs and `manifest.json`
/// into `out_dir`. Identical configurations and seeds give byte-identical
/// files.
pub fn run_scenario(config: &ScenarioConfig, out_dir: &Path) -> Result<RunOutcome, HarnessError> {
    config.validate()?;
    fs::create_dir_all(out_dir).map_err(|source| HarnessError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let mut out = Outputs {
        dir: out_dir,
        files: Vec::new(),
    };
    let mut outcome = RunOutcome::new(config.scenario);
    let mut summary = serde_json::Map::new();

    match config.scenario {
        ScenarioKind::Ideal | ScenarioKind::Field => {
            let report = run_protocol(config, &mut out)?;
            summarize(&report, &mut summary);
            outcome.report = Some(report);
        }
        ScenarioKind::Stability => {
            let report = run_protocol(config, &mut out)?;
            let stab = stability(config, &report, &mut out)?;
            summarize(&report, &mut summary);
            summary.insert("predicted_crossing_s".into(), json!(stab.predicted_crossing_s));
            summary.insert("predicted_block".into(), json!(stab.predicted_block));
            summary.insert("first_abort_block".into(), json!(stab.first_abort_block));
            outcome.report = Some(report);
            outcome.stability = Some(stab);
        }
        ScenarioKind::PhaseSweep => {
            let points = phase_sweep(config)?;
            out.write("phase_sweep.csv", |w| {
                writeln!(w, "index,parameter,value,phase,S,S_err,qber,raw_bps,secure_bps,verdict")?;
                let name = format!("{:?}", config.sweep.parameter).to_lowercase();
                for p in &points {
                    let r = &p.report;
                    writeln!(
                        w,
                        "{},{name},{},{},{},{},{},{},{},{}",
                        p.index, p.value, p.phase, r.s, r.s_err, r.qber, r.raw_bps, r.secure_bps, r.verdict
                    )?;
                }
                Ok(())
            })?;
            summary.insert("points".into(), json!(points.len()));
            outcome.sweep = points;
        }
        ScenarioKind::WindowSweep => {
            let points = window_scan(config, &mut out)?;
            out.write("window_sweep.csv", |w| {
                writeln!(w, "window_ps,coincidences,S,S_err")?;
                for p in &points {
                    writeln!(w, "{},{},{},{}", p.window_ps, p.coincidences, p.chsh.s, p.chsh.std_error)?;
                }
                Ok(())
            })?;
            summary.insert("points".into(), json!(points.len()));
            outcome.windows = points;
        }
    }

    let manifest = json!({
        "version": env!("CARGO_PKG_VERSION"),
        "scenario": config.scenario.as_str(),
        "seed": config.seed,
        "config_hash": config.hash(),
        "outputs": out.files,
        "summary": Value::Object(summary),
    });
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    out.write("manifest.json", |w| writeln!(w, "{text}"))?;
    outcome.files = out.files;
    Ok(outcome)
}

fn summarize(report: &SecurityReport, summary: &mut serde_json::Map<String, Value>) {
    summary.insert("verdict".into(), json!(report.verdict().as_str()));
    summary.insert("blocks".into(), json!(report.blocks.len()));
    if let Some(a) = report.aggregate {
        for (k, v) in [
            ("S", a.s),
            ("S_err", a.s_err),
            ("qber", a.qber),
            ("raw_bps", a.raw_bps),
            ("secure_bps", a.secure_bps),
        ] {
            summary.insert(k.into(), json!(v));
        }
    }
}

fn dump_tags(config: &ScenarioConfig, sim: &SessionOutput, out: &mut Outputs) -> Result<(), HarnessError> {
    if config.dump_tags {
        out.write("alice.tags", |w| sim.alice.write_dump(w))?;
        out.write("bob.tags", |w| sim.bob.write_dump(w))?;
    }
    Ok(())
}

/// Simulates the session and runs both endpoints over the configured
/// transport. On failure the blocks agreed so far are still written.
fn run_protocol(config: &ScenarioConfig, out: &mut Outputs) -> Result<SecurityReport, HarnessError> {
    let settings = SettingSet::standard();
    let sim = simulate(&config.optics(), config.seed)?;
    dump_tags(config, &sim, out)?;
    let transport = config
        .transport
        .transport()
        .map_err(|i| ConfigError { issues: vec![i] })?;
    let alice = Endpoint::new(Party::Alice, settings.clone(), config.protocol, config.seed);
    let bob = Endpoint::new(Party::Bob, settings.clone(), config.protocol, config.seed);
    match run_session(&alice, &bob, transport, &sim.alice, &sim.bob) {
        Ok(result) => {
            let report = result.alice.report;
            out.write("report.csv", |w| report.write_csv(w))?;
            out.write("coincidences.csv", |w| result.alice.test_matrix.write_csv(w))?;
            let layout = ChshLayout::from_settings(&settings.chsh());
            if let Ok(est) = chsh_from_counts(&result.alice.test_matrix, &layout) {
                out.write("estimates.csv", |w| write_estimates_csv(&est, w))?;
            }
            Ok(report)
        }
        Err(failure) => {
            out.write("report.csv", |w| failure.partial.write_csv(w))?;
            Err(failure.into())
        }
    }
}

fn ideal_s(phase: f64) -> f64 {
    let state = TwoQubitState::hybrid(phase).expect("finite phase");
    chsh_value(&state, &SettingSet::standard().chsh()).expect("standard settings")
}

/// First time in `[0, duration]` at which the ideal-state S, evaluated at the
/// drifting phase, reaches 2.
pub fn predicted_crossing(config: &ScenarioConfig) -> Option<f64> {
    let duration = config.source.duration_s;
    let track = config.drift.track(duration);
    let f = |t: f64| ideal_s(config.source.reference_phase + track.phase_at(t)) - 2.0;
    if f(0.0) <= 0.0 {
        return Some(0.0);
    }
    const STEPS: usize = 10_000;
    let mut prev = 0.0;
    for i in 1..=STEPS {
        let t = duration * i as f64 / STEPS as f64;
        if f(t) <= 0.0 {
            let (mut lo, mut hi) = (prev, t);
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                if f(mid) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            return Some(hi);
        }
        prev = t;
    }
    None
}

fn stability(
    config: &ScenarioConfig,
    report: &SecurityReport,
    out: &mut Outputs,
) -> Result<StabilitySummary, HarnessError> {
    let duration_ps = config.source.duration_ps();
    let track = config.drift.track(config.source.duration_s);
    out.write("stability.csv", |w| {
        writeln!(w, "block,t_start_s,t_end_s,phase,S_ideal,S,S_err,verdict")?;
        for b in &report.blocks {
            let k = b.block.expect("per-block report");
            let (start, end) = config.protocol.block_bounds(k, duration_ps);
            let (t0, t1) = (start as f64 / 1e12, end as f64 / 1e12);
            let phase = config.source.reference_phase + track.phase_at(0.5 * (t0 + t1));
            writeln!(
                w,
                "{k},{t0},{t1},{phase},{},{},{},{}",
                ideal_s(phase),
                b.s,
                b.s_err,
                b.verdict
            )?;
        }
        Ok(())
    })?;
    let predicted_crossing_s = predicted_crossing(config);
    Ok(StabilitySummary {
        predicted_crossing_s,
        predicted_block: predicted_crossing_s.map(|t| (t / config.protocol.block_s).floor() as u32),
        first_abort_block: report.first_abort(),
    })
}

/// State phase used at a sweep point.
pub fn sweep_phase(config: &ScenarioConfig, value: f64) -> f64 {
    match config.sweep.parameter {
        SweepParameter::Temperature => config.source.reference_phase + config.drift.phase_at_temperature(value),
        SweepParameter::Phase | SweepParameter::Window => value,
    }
}

/// Each point is an independent session with a held phase, analyzed as a
/// single block. Points run in parallel with per-index seeds.
fn phase_sweep(config: &ScenarioConfig) -> Result<Vec<SweepPoint>, HarnessError> {
    let values = config.sweep.values();
    let duration = config.sweep.point_duration_s.unwrap_or(config.source.duration_s);
    let settings = SettingSet::standard();
    par::map_range(Execution::default(), values.len(), |i| -> Result<SweepPoint, HarnessError> {
        let value = values[i];
        let phase = sweep_phase(config, value);
        let mut optics = config.optics();
        optics.source.duration_s = duration;
        optics.source.reference_phase = phase;
        optics.drift = DriftModel::default();
        let seed = derive_seed(config.seed, i as u64);
        let sim = simulate(&optics, seed)?;
        let mut params = config.protocol;
        params.block_s = duration;
        let analysis = analyze_streams(&sim.alice, &sim.bob, &settings, &params, seed)?;
        Ok(SweepPoint {
            index: i,
            value,
            phase,
            report: analysis.report.aggregate.expect("offline analysis has an aggregate"),
        })
    })
    .into_iter()
    .collect()
}

/// One simulated session re-matched at every configured window.
fn window_scan(config: &ScenarioConfig, out: &mut Outputs) -> Result<Vec<WindowPoint>, HarnessError> {
    let settings = SettingSet::standard();
    let sim = simulate(&config.optics(), config.seed)?;
    dump_tags(config, &sim, out)?;
    let delay = match config.protocol.fixed_delay_ps {
        Some(d) => d,
        None => {
            estimate_delay_times(
                &sim.alice.times(),
                &sim.bob.times(),
                &config.protocol.delay_search(),
                Execution::default(),
            )?
            .delay_ps
        }
    };
    let windows: Vec<u64> = config.sweep.values().iter().map(|&w| w as u64).collect();
    let layout = ChshLayout::from_settings(&settings.chsh());
    Ok(window_sweep(&sim.alice, &sim.bob, &windows, delay, &layout, Execution::default())?)
}

/// Loads a tag dump from disk.
pub fn read_tags(path: &Path) -> Result<TagStream, HarnessError> {
    let file = File::open(path).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(TagStream::read_dump(io::BufReader::new(file))?)
}

/// Directory a run writes into: the explicit choice, else the configured
/// one, else `out/<scenario>`.
pub fn output_dir(config: &ScenarioConfig, explicit: Option<&Path>) -> PathBuf {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out").join(config.scenario.as_str()))
}
