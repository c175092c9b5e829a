//! Command-line front end: run scenarios, calibrate channel loss and analyze
//! recorded tag dumps.
//!
//! Exit codes: 0 success, 1 configuration or usage error, 2 runtime error,
//! 3 protocol abort.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use e91_core::harness::{
    calibrate_loss, load_config, output_dir, read_tags, run_scenario, ConfigError, HarnessError, RunOutcome,
    ScenarioConfig, ScenarioKind,
};
use e91_core::protocol::{analyze_streams, BlockReport, ProtocolError, ProtocolParams, QberMode, Verdict};
use e91_core::quantum::SettingSet;

const EXIT_CONFIG: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_ABORT: u8 = 3;

#[derive(Parser)]
#[command(name = "e91", version, about = "Entanglement-based QKD simulator and post-processing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write its outputs.
    Run {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (default: the configured one, else out/<scenario>).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        scenario: Option<ScenarioKind>,
    },
    /// Find the channel transmittance giving a target sifted key rate.
    Calibrate {
        config: PathBuf,
        /// Target sifted key rate in bits per second.
        #[arg(long = "target-raw", value_name = "BPS")]
        target_raw: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the post-processing pipeline on two tag dumps.
    Analyze {
        alice: PathBuf,
        bob: PathBuf,
        /// Coincidence window in ps.
        #[arg(long, value_name = "PS")]
        window: u64,
        /// Known delay of Bob relative to Alice in ps; searched when absent.
        #[arg(long, value_name = "PS", allow_hyphen_values = true)]
        delay: Option<i64>,
        /// Half-width of the delay search in ps.
        #[arg(long, value_name = "PS", default_value_t = 200_000_000)]
        search: u64,
        /// Block length in seconds (default: the whole recording).
        #[arg(long)]
        block: Option<f64>,
        /// Compare every key bit instead of a random sample.
        #[arg(long)]
        full_qber: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for report.csv and coincidences.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl ToString) -> Self {
        Self {
            code,
            message: message.to_string(),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::new(EXIT_CONFIG, e)
    }
}

fn is_protocol_abort(e: &ProtocolError) -> bool {
    matches!(
        e,
        ProtocolError::Violation(_) | ProtocolError::PeerAbort(_) | ProtocolError::InsufficientKey { .. }
    )
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        let code = match &e {
            HarnessError::Config(_) => EXIT_CONFIG,
            HarnessError::Session(f) if is_protocol_abort(&f.error) => EXIT_ABORT,
            HarnessError::Analysis(p) if is_protocol_abort(p) => EXIT_ABORT,
            _ => EXIT_RUNTIME,
        };
        Failure::new(code, e)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Run {
            config,
            seed,
            out,
            scenario,
        } => run(&config, seed, out.as_deref(), scenario),
        Command::Calibrate {
            config,
            target_raw,
            seed,
        } => calibrate(&config, target_raw, seed),
        Command::Analyze {
            alice,
            bob,
            window,
            delay,
            search,
            block,
            full_qber,
            seed,
            out,
        } => {
            let params = ProtocolParams {
                window_ps: window,
                fixed_delay_ps: delay,
                delay_search_ps: search,
                qber_mode: if full_qber { QberMode::All } else { QberMode::Sample },
                ..ProtocolParams::default()
            };
            analyze(&alice, &bob, params, block, seed, out.as_deref())
        }
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn load(path: &Path, seed: Option<u64>) -> Result<ScenarioConfig, Failure> {
    let mut config = load_config(path)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    Ok(config)
}

fn verdict_code(verdict: Option<Verdict>) -> u8 {
    match verdict {
        Some(Verdict::Abort) => EXIT_ABORT,
        _ => 0,
    }
}

fn print_aggregate(r: &BlockReport) {
    println!(
        "S = {:.4} ± {:.4}, QBER = {:.4}, raw = {:.1} bps, secure = {:.1} bps, verdict = {}",
        r.s, r.s_err, r.qber, r.raw_bps, r.secure_bps, r.verdict
    );
}

fn run(path: &Path, seed: Option<u64>, out: Option<&Path>, scenario: Option<ScenarioKind>) -> Result<u8, Failure> {
    let mut config = load(path, seed)?;
    if let Some(kind) = scenario {
        config.scenario = kind;
        config.validate()?;
    }
    let dir = output_dir(&config, out);
    let outcome = run_scenario(&config, &dir)?;
    summarize(&outcome);
    println!("outputs written to {}", dir.display());
    Ok(verdict_code(outcome.verdict()))
}

fn summarize(outcome: &RunOutcome) {
    println!("scenario {}", outcome.scenario);
    if let Some(agg) = outcome.report.as_ref().and_then(|r| r.aggregate) {
        print_aggregate(&agg);
    }
    if let Some(s) = &outcome.stability {
        let show = |v: Option<u32>| v.map_or_else(|| "none".to_string(), |b| b.to_string());
        println!(
            "predicted crossing block: {}, first aborted block: {}",
            show(s.predicted_block),
            show(s.first_abort_block)
        );
    }
    for p in &outcome.sweep {
        println!("  value {:>10.4}  phase {:>8.4}  S {:.4}", p.value, p.phase, p.report.s);
    }
    for w in &outcome.windows {
        println!("  window {:>6} ps  coincidences {:>10}  S {:.4}", w.window_ps, w.coincidences, w.chsh.s);
    }
}

fn calibrate(path: &Path, target: Option<f64>, seed: Option<u64>) -> Result<u8, Failure> {
    let config = load(path, seed)?;
    let target = target.or(config.calibration.target_raw_bps).ok_or_else(|| {
        Failure::new(
            EXIT_CONFIG,
            "no target rate: pass --target-raw or set calibration.target_raw_bps",
        )
    })?;
    let cal = calibrate_loss(&config, target)?;
    for p in &cal.probes {
        println!("  transmittance {:.6}  raw {:.1} bps", p.transmittance, p.raw_bps);
    }
    println!(
        "{} transmittance {:.6} gives {:.1} bps (target {:.1} bps)",
        cal.party.as_str(),
        cal.transmittance,
        cal.raw_bps,
        cal.target_raw_bps
    );
    Ok(0)
}

fn analyze(
    alice: &Path,
    bob: &Path,
    mut params: ProtocolParams,
    block: Option<f64>,
    seed: u64,
    out: Option<&Path>,
) -> Result<u8, Failure> {
    let a = read_tags(alice)?;
    let b = read_tags(bob)?;
    params.block_s = block.unwrap_or(a.duration_ps() as f64 / 1e12);
    let issues = params.issues();
    if !issues.is_empty() {
        return Err(ConfigError { issues }.into());
    }
    let analysis = analyze_streams(&a, &b, &SettingSet::standard(), &params, seed)
        .map_err(|e| Failure::from(HarnessError::from(e)))?;
    println!("delay {} ps", analysis.delay_ps);
    match out {
        Some(dir) => {
            let write = |name: &str, body: &dyn Fn(&mut Vec<u8>) -> std::io::Result<()>| {
                let mut buf = Vec::new();
                body(&mut buf).and_then(|_| fs::write(dir.join(name), buf))
            };
            fs::create_dir_all(dir)
                .and_then(|_| write("report.csv", &|w| analysis.report.write_csv(w)))
                .and_then(|_| write("coincidences.csv", &|w| analysis.test_matrix.write_csv(w)))
                .map_err(|e| Failure::new(EXIT_RUNTIME, format!("{}: {e}", dir.display())))?;
        }
        None => print!("{}", analysis.report.to_csv_string()),
    }
    if let Some(agg) = &analysis.report.aggregate {
        print_aggregate(agg);
    }
    Ok(verdict_code(Some(analysis.report.verdict())))
}
