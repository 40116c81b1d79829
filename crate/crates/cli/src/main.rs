use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use adcosim_core::bridge::{Bridge, BridgeConfig, Direction};
use adcosim_core::bus::socket::SocketClient;
use adcosim_core::harness::log::SimLog;
use adcosim_core::harness::report::{read_run_metadata, write_run_metadata, RunMetadata};
use adcosim_core::harness::{
    analyze, emit_report, resolve_log_dir, resolve_map, run_scenario, AnalysisReport, Mode, RunOptions, LOG_DIR_ENV,
};
use adcosim_core::map::{convert_file, load_map, write_products, Emit, DEFAULT_SAMPLE_SPACING, DEFAULT_SIM_EPSILON};
use adcosim_core::scenario::{detect_maneuvers, export_scenario, load_highd_csv, make_case, CaseKind, DetectionConfig, ScenarioSpec};

const SCENARIO_FILE: &str = "scenario.json";

#[derive(Parser, Debug)]
#[command(name = "adcosim", version, about = "Co-simulation harness for scenario-based ADS testing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Convert an OpenDRIVE map into base, routing and sim maps.
    ConvertMap {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// base, routing, sim or all
        #[arg(long, default_value = "all")]
        emit: String,
        /// Base-map sample spacing, m.
        #[arg(long, default_value_t = DEFAULT_SAMPLE_SPACING)]
        spacing: f64,
        /// Sim-map simplification tolerance, m.
        #[arg(long, default_value_t = DEFAULT_SIM_EPSILON)]
        epsilon: f64,
    },
    /// Extract cut-in, cut-out and following scenarios from a highD-style track table.
    Extract {
        tracks: PathBuf,
        #[arg(long)]
        ego: i64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "highway_2520m.xodr")]
        map: PathBuf,
        #[arg(long, default_value_t = adcosim_core::scenario::DEFAULT_FRAME_RATE)]
        frame_rate: f64,
    },
    /// Scenario generators.
    Scenario {
        #[command(subcommand)]
        command: ScenarioCommand,
    },
    /// Run a scenario and write the logs.
    Run {
        scenario: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Analyze the logs of a run and write the report.
    Analyze {
        log_dir: PathBuf,
        /// Defaults to the scenario copy in the log directory.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long)]
        map_dir: Option<PathBuf>,
        /// Report directory, defaults to the log directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Make, run, analyze and report one of the shipped cases.
    Demo {
        /// case1, case2 or case3
        case: String,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the bridge standalone between two socket buses.
    Bridge {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        a: Option<String>,
        #[arg(long)]
        b: Option<String>,
    },
}

#[derive(Subcommand, Debug)]
enum ScenarioCommand {
    /// Write one of the shipped cases.
    Make {
        case: String,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

#[derive(Args, Debug)]
struct RunArgs {
    /// in_process or socket
    #[arg(long, default_value = "in_process")]
    mode: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    map_dir: Option<PathBuf>,
    /// Overrides the scenario duration, s.
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long, default_value_t = adcosim_core::dynamics::DEFAULT_DT)]
    dt: f64,
}

impl RunArgs {
    fn options(&self) -> Result<RunOptions> {
        let mode = Mode::parse(&self.mode).ok_or_else(|| anyhow!("unknown mode {:?}, expected in_process or socket", self.mode))?;
        Ok(RunOptions { dt: self.dt, duration_s: self.duration, mode, seed: self.seed, ..RunOptions::default() })
    }
}

fn parse_case(s: &str) -> Result<CaseKind> {
    CaseKind::parse(s).ok_or_else(|| anyhow!("unknown case {s:?}, expected case1, case2 or case3"))
}

fn log_dir(out: &Path) -> PathBuf {
    resolve_log_dir(Some(out), std::env::var_os(LOG_DIR_ENV).map(PathBuf::from)).expect("configured dir")
}

/// Runs the scenario and writes logs, the scenario copy and run.json.
fn run_and_log(spec: &ScenarioSpec, scenario_dir: Option<&Path>, args: &RunArgs, out: &Path) -> Result<(SimLog, PathBuf)> {
    let opts = args.options()?;
    let maps = resolve_map(&spec.map_ref, scenario_dir, args.map_dir.as_deref())?;
    spec.validate(&maps.base)?;
    let log = run_scenario(spec, &maps, &opts)?;
    let dir = log_dir(out);
    log.write(&dir)?;
    spec.save(&dir.join(SCENARIO_FILE))?;
    let meta = RunMetadata {
        schema_version: 1,
        scenario: spec.name.clone(),
        mode: opts.mode.as_str().into(),
        seed: opts.seed,
        dt: opts.dt,
        ticks: log.ticks(),
        digests: log.digests().iter().map(|(n, d)| (n.to_string(), d.clone())).collect(),
    };
    write_run_metadata(&dir, &meta)?;
    for (name, digest) in &meta.digests {
        println!("{name} sha256={digest}");
    }
    println!("{} ticks logged to {}", meta.ticks, dir.display());
    Ok((log, dir))
}

fn report(spec: &ScenarioSpec, log: &SimLog, scenario_dir: Option<&Path>, map_dir: Option<&Path>, out: &Path) -> Result<AnalysisReport> {
    let maps = resolve_map(&spec.map_ref, scenario_dir, map_dir)?;
    let r = analyze(log, spec, &maps.base)?;
    let files = emit_report(&r, log, spec, out)?;
    for c in &r.checks {
        println!("[{}] {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    println!("verdict: {}", if r.passed() { "pass" } else { "fail" });
    println!("report written to {}", files[0].display());
    Ok(r)
}

fn verdict_code(r: &AnalysisReport) -> ExitCode {
    if r.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    }
}

fn run_bridge(config: Option<&Path>, a: Option<String>, b: Option<String>) -> Result<ExitCode> {
    let cfg = match config {
        Some(p) => BridgeConfig::load(p)?,
        None => BridgeConfig::default_config(),
    };
    let a = a.or_else(|| cfg.endpoints.a.clone()).context("no A-side endpoint in --a or the config")?;
    let b = b.or_else(|| cfg.endpoints.b.clone()).context("no B-side endpoint in --b or the config")?;
    let topics = |d| cfg.source_topics(d);
    let (ta, tb) = (topics(Direction::AToB), topics(Direction::BToA));
    let ca = Arc::new(SocketClient::connect(&a, &ta.iter().map(String::as_str).collect::<Vec<_>>())?);
    let cb = Arc::new(SocketClient::connect(&b, &tb.iter().map(String::as_str).collect::<Vec<_>>())?);
    let mut bridge = Bridge::new(cfg, ca.clone(), cb.clone())?;
    bridge.start()?;
    println!("bridging {a} <-> {b}");
    while !ca.is_closed() && !cb.is_closed() {
        std::thread::sleep(std::time::Duration::from_millis(50));
    }
    bridge.shutdown();
    println!("{} messages relayed", bridge.relay_log().len());
    let errors = bridge.errors();
    for e in &errors {
        eprintln!("error: {e}");
    }
    Ok(if errors.is_empty() { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn execute(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::ConvertMap { input, out, emit, spacing, epsilon } => {
            let emit = Emit::parse(&emit).ok_or_else(|| anyhow!("unknown --emit {emit:?}, expected base, routing, sim or all"))?;
            let products = convert_file(&input, spacing, epsilon)?;
            for e in &products.prune_report.entries {
                println!("pruned {}: {}", e.element, e.action);
            }
            for p in write_products(&products, &out, emit)? {
                println!("wrote {}", p.display());
            }
        }
        Command::Extract { tracks, ego, out, map, frame_rate } => {
            let table = load_highd_csv(&tracks, frame_rate)?;
            let maps = load_map(&map)?;
            let map_ref = map.file_name().and_then(|n| n.to_str()).unwrap_or("map.xodr");
            let events = detect_maneuvers(&table, ego, &DetectionConfig::default())?;
            if events.is_empty() {
                bail!("no maneuvers found for ego {ego} in {}", tracks.display());
            }
            for e in &events {
                let spec = export_scenario(&table, e, map_ref, &maps.base)?;
                let dir = out.join(&spec.name);
                std::fs::create_dir_all(&dir).with_context(|| dir.display().to_string())?;
                let path = dir.join(SCENARIO_FILE);
                spec.save(&path)?;
                println!("{} actor {} cross frame {:?} -> {}", e.kind.as_str(), e.actor_id, e.frame_cross, path.display());
            }
        }
        Command::Scenario { command: ScenarioCommand::Make { case, out } } => {
            let spec = make_case(parse_case(&case)?);
            std::fs::create_dir_all(&out).with_context(|| out.display().to_string())?;
            let path = out.join(SCENARIO_FILE);
            spec.save(&path)?;
            println!("wrote {}", path.display());
        }
        Command::Run { scenario, run, out } => {
            let spec = ScenarioSpec::load(&scenario)?;
            run_and_log(&spec, scenario.parent(), &run, &out)?;
        }
        Command::Analyze { log_dir, scenario, map_dir, out } => {
            let scenario = scenario.unwrap_or_else(|| log_dir.join(SCENARIO_FILE));
            let spec = ScenarioSpec::load(&scenario)?;
            let dt = match read_run_metadata(&log_dir)? {
                Some(meta) => meta.dt,
                None => adcosim_core::dynamics::DEFAULT_DT,
            };
            let log = SimLog::read(&log_dir, dt)?;
            let r = report(&spec, &log, scenario.parent(), map_dir.as_deref(), out.as_deref().unwrap_or(&log_dir))?;
            return Ok(verdict_code(&r));
        }
        Command::Demo { case, run, out } => {
            let kind = parse_case(&case)?;
            let out = out.unwrap_or_else(|| PathBuf::from(format!("demo_{}", kind.case_name())));
            let spec = make_case(kind);
            std::fs::create_dir_all(&out).with_context(|| out.display().to_string())?;
            spec.save(&out.join(SCENARIO_FILE))?;
            let (log, _) = run_and_log(&spec, None, &run, &out)?;
            let r = report(&spec, &log, None, run.map_dir.as_deref(), &out)?;
            return Ok(verdict_code(&r));
        }
        Command::Bridge { config, a, b } => return run_bridge(config.as_deref(), a, b),
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
