//! `stringpose` command line: one subcommand per workflow.
//!
//! Exit status: 0 success, 1 computational failure (divergence, failed
//! homing or evaluation points), 2 usage or configuration error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::{SocketAddr, ToSocketAddrs, UdpSocket};
use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::calibration::{offset_grid, read_samples_csv, run_sweep_with, write_samples_csv, SweepOptions};
use crate::config::SystemConfig;
use crate::encoder::{channels_from_references, home_all, EncoderSpec};
use crate::geometry::{Pose, LEG_COUNT};
use crate::kinematics::{forward_kinematics, JacobianMode, KinematicsError, LegLengths, SolverConfig};
use crate::registration::FrameChain;
use crate::scenario::Scenario;
use crate::telemetry::{bind_and_serve, run_client, ClientConfig, ClientPipeline, ClientRunOptions, ServeOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_COMPUTE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "stringpose", version, about = "Six string-encoder head tracker: solve, calibrate, evaluate, stream")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Forward kinematics for one set of lengths or a CSV batch.
    Solve(SolveArgs),
    /// Generate simulated calibration samples (lengths plus ground-truth pose).
    Simulate(SimulateArgs),
    /// Sweep the string length offset over a sample CSV.
    Calibrate(CalibrateArgs),
    /// Run the per-axis accuracy protocol on a scenario.
    Evaluate(EvaluateArgs),
    /// Simulate the homing retraction and report per-channel results.
    Home(HomeArgs),
    /// Stream a scenario's encoder counts over UDP.
    Serve(ServeArgs),
    /// Receive counts over UDP, solve poses, log and republish them.
    Stream(StreamArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SolverArgs {
    /// FK stop tolerance on the leg-length residual, mm.
    #[arg(long, default_value_t = 0.01)]
    pub tolerance_mm: f64,
    /// Maximum inverse-kinematics evaluations per solve.
    #[arg(long, default_value_t = 50)]
    pub max_iterations: u32,
    /// Tikhonov damping for the pseudo-inverse (0 = plain pseudo-inverse).
    #[arg(long, default_value_t = 0.0)]
    pub damping: f64,
    /// Use a central finite-difference Jacobian instead of the analytic one.
    #[arg(long)]
    pub finite_difference: bool,
}

impl SolverArgs {
    fn config(&self) -> Result<SolverConfig, CliError> {
        let cfg = SolverConfig {
            length_tolerance: self.tolerance_mm,
            max_iterations: self.max_iterations,
            damping: self.damping,
            jacobian: if self.finite_difference {
                JacobianMode::FiniteDifference
            } else {
                JacobianMode::Analytic
            },
            ..SolverConfig::default()
        };
        cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// Geometry JSON (default: packaged geometry).
    #[arg(long)]
    pub geometry: Option<PathBuf>,
    /// Six leg lengths in mm, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, conflicts_with = "input", required_unless_present = "input")]
    pub lengths: Option<Vec<f64>>,
    /// CSV with L1..L6 columns (other columns are ignored).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Pose CSV output (default: stdout).
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Offset added to every length before solving, mm.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub offset_mm: f64,
    /// Initial guess x,y,z,roll,pitch,yaw (default: nominal pose).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub guess: Option<Vec<f64>>,
    /// Manifest path (default: next to --output).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
pub struct ScenarioArgs {
    /// Scenario JSON (default: built-in ideal scenario).
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Override the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Sample CSV to write.
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Sample CSV (L1..L6,x,y,z,roll,pitch,yaw).
    #[arg(long)]
    pub samples: PathBuf,
    #[arg(long)]
    pub geometry: Option<PathBuf>,
    /// Offset grid as start:stop:step, mm.
    #[arg(long, default_value = "-2:6:0.5", allow_hyphen_values = true)]
    pub grid: String,
    /// Largest tolerated fraction of diverging (sample, offset) pairs.
    #[arg(long, default_value_t = 0.1)]
    pub max_failure_fraction: f64,
    /// Sweep CSV output (default: stdout).
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Directory for accuracy_table.csv, accuracy_points.csv, accuracy_errors.svg and manifest.json.
    #[arg(long)]
    pub output_dir: PathBuf,
    /// Override the scenario's calibration offset, mm.
    #[arg(long, allow_hyphen_values = true)]
    pub offset_mm: Option<f64>,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
pub struct HomeArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Sample rate of the simulated stream, Hz.
    #[arg(long, default_value_t = 1000.0)]
    pub rate_hz: f64,
    /// Homing CSV output (default: stdout).
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Local address to send from.
    #[arg(long, default_value = "127.0.0.1:0")]
    pub bind: String,
    /// Client address to send to.
    #[arg(long)]
    pub connect: String,
    /// Packet rate, 1 to 2000 Hz.
    #[arg(long, default_value_t = 1000.0)]
    pub rate_hz: f64,
    /// Stop after this many seconds (rate x duration packets).
    #[arg(long, conflicts_with = "packets")]
    pub duration_s: Option<f64>,
    /// Stop after this many packets.
    #[arg(long)]
    pub packets: Option<u64>,
    /// Sequence numbers to generate but not send (fault injection).
    #[arg(long, value_delimiter = ',')]
    pub drop_seq: Vec<u32>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StreamArgs {
    /// Address to receive counts on.
    #[arg(long)]
    pub bind: String,
    /// Scenario supplying geometry, encoder references and offset.
    #[arg(long, conflicts_with = "geometry")]
    pub scenario: Option<PathBuf>,
    /// Override the scenario seed.
    #[arg(long, requires = "scenario")]
    pub seed: Option<u64>,
    /// Geometry JSON with an `encoders` section, instead of a scenario.
    #[arg(long)]
    pub geometry: Option<PathBuf>,
    /// Offset added to homed lengths, mm (default: scenario value, else 3.0).
    #[arg(long, allow_hyphen_values = true)]
    pub offset_mm: Option<f64>,
    /// Frame chain JSON; poses are then reported in the robot frame.
    #[arg(long)]
    pub chain: Option<PathBuf>,
    /// Pose CSV log (default: stdout).
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Address to publish PosePackets to.
    #[arg(long)]
    pub connect: Option<String>,
    /// Stop after this long without packets, ms.
    #[arg(long, default_value_t = 2000)]
    pub idle_timeout_ms: u64,
    /// Stop after this many packets.
    #[arg(long)]
    pub packets: Option<u64>,
    /// Capacity of the receive-to-solve queue.
    #[arg(long, default_value_t = 1024)]
    pub queue_capacity: usize,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Compute(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Compute(_) => EXIT_COMPUTE,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Compute(m) => f.write_str(m),
        }
    }
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

/// Record of one invocation, written next to its outputs.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub tool_version: String,
    pub arguments: Vec<String>,
    pub seed: Option<u64>,
    pub config_paths: BTreeMap<String, String>,
    pub output_paths: Vec<String>,
    pub summary: BTreeMap<String, serde_json::Value>,
}

impl RunManifest {
    fn new(subcommand: &str, arguments: &[String]) -> Self {
        Self {
            subcommand: subcommand.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            arguments: arguments.to_vec(),
            seed: None,
            config_paths: BTreeMap::new(),
            output_paths: Vec::new(),
            summary: BTreeMap::new(),
        }
    }

    fn config(&mut self, key: &str, path: Option<&Path>) {
        if let Some(p) = path {
            self.config_paths.insert(key.to_string(), p.display().to_string());
        }
    }

    fn output(&mut self, path: &Path) {
        self.output_paths.push(path.display().to_string());
    }

    fn note(&mut self, key: &str, value: impl Serialize) {
        self.summary
            .insert(key.to_string(), serde_json::to_value(value).expect("summary value serializes"));
    }

    fn write(&self, path: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes") + "\n";
        std::fs::write(path, text).map_err(|e| usage(format!("{}: {e}", path.display())))
    }

    /// Writes to `explicit`, else beside `primary`, else nowhere.
    fn write_beside(&self, explicit: Option<&Path>, primary: Option<&Path>) -> Result<(), CliError> {
        match (explicit, primary) {
            (Some(p), _) => self.write(p),
            (None, Some(out)) => {
                let mut name = out.file_name().unwrap_or_default().to_os_string();
                name.push(".manifest.json");
                self.write(&out.with_file_name(name))
            }
            (None, None) => Ok(()),
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let recorded: Vec<String> = args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match execute(cli.command, &recorded) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: Command, arguments: &[String]) -> Result<(), CliError> {
    match command {
        Command::Solve(a) => cmd_solve(a, arguments),
        Command::Simulate(a) => cmd_simulate(a, arguments),
        Command::Calibrate(a) => cmd_calibrate(a, arguments),
        Command::Evaluate(a) => cmd_evaluate(a, arguments),
        Command::Home(a) => cmd_home(a, arguments),
        Command::Serve(a) => cmd_serve(a, arguments),
        Command::Stream(a) => cmd_stream(a, arguments),
    }
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| usage(format!("{}: {e}", p.display())))?,
        )),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    })
}

fn load_scenario(args: &ScenarioArgs) -> Result<Scenario, CliError> {
    load_scenario_from(args.scenario.as_deref(), args.seed)
}

fn load_scenario_from(path: Option<&Path>, seed: Option<u64>) -> Result<Scenario, CliError> {
    let scenario = match path {
        Some(p) => Scenario::load(p).map_err(|e| usage(format!("{}: {e}", p.display())))?,
        None => Scenario::from_json("{}", None).map_err(usage)?,
    };
    match seed {
        None => Ok(scenario),
        Some(seed) => {
            let mut doc = scenario.document.clone();
            doc.seed = seed;
            Scenario::from_document(doc, path.and_then(Path::parent)).map_err(usage)
        }
    }
}

fn resolve_addr(s: &str) -> Result<SocketAddr, CliError> {
    s.to_socket_addrs()
        .map_err(|e| usage(format!("address {s:?}: {e}")))?
        .next()
        .ok_or_else(|| usage(format!("address {s:?} did not resolve")))
}

fn pose_row(p: &Pose) -> String {
    let a = p.to_array();
    format!("{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}", a[0], a[1], a[2], a[3], a[4], a[5])
}

fn read_length_rows(path: &Path) -> Result<Vec<[f64; LEG_COUNT]>, CliError> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let headers = rdr.headers().map_err(usage)?.clone();
    let cols: Vec<usize> = (1..=LEG_COUNT)
        .map(|i| {
            headers
                .iter()
                .position(|h| h.trim() == format!("L{i}"))
                .ok_or_else(|| usage(format!("{}: missing column L{i}", path.display())))
        })
        .collect::<Result<_, _>>()?;
    let mut rows = Vec::new();
    for (n, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(usage)?;
        let mut row = [0.0; LEG_COUNT];
        for (i, &c) in cols.iter().enumerate() {
            row[i] = rec
                .get(c)
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| usage(format!("{}: row {}: bad L{}", path.display(), n + 1, i + 1)))?;
        }
        rows.push(row);
    }
    Ok(rows)
}

fn cmd_solve(a: SolveArgs, arguments: &[String]) -> Result<(), CliError> {
    let geometry = SystemConfig::load_or_default(a.geometry.as_deref()).map_err(usage)?.geometry;
    let config = a.solver.config()?;
    let guess = match &a.guess {
        Some(g) => Pose::from_array(<[f64; 6]>::try_from(g.as_slice()).map_err(|_| usage("--guess needs 6 values"))?),
        None => Pose::IDENTITY,
    };
    let rows: Vec<[f64; LEG_COUNT]> = match (&a.lengths, &a.input) {
        (Some(l), _) => vec![<[f64; 6]>::try_from(l.as_slice()).map_err(|_| usage("--lengths needs 6 values"))?],
        (None, Some(p)) => read_length_rows(p)?,
        (None, None) => return Err(usage("give --lengths or --input")),
    };

    let mut out = open_output(a.output.as_deref())?;
    let io = |e: std::io::Error| usage(e);
    writeln!(out, "index,x,y,z,roll,pitch,yaw,iterations,residual_mm,status").map_err(io)?;
    let mut failures = Vec::new();
    for (i, row) in rows.iter().enumerate() {
        let lengths = LegLengths::new(row.map(|l| l + a.offset_mm)).map_err(|e| usage(format!("row {i}: {e}")))?;
        match forward_kinematics(&geometry, &lengths, &guess, &config) {
            Ok(r) => writeln!(out, "{i},{},{},{:.6},ok", pose_row(&r.pose), r.iterations, r.residual).map_err(io)?,
            Err(KinematicsError::NoConvergence(best)) => {
                writeln!(out, "{i},{},{},{:.6},no_convergence", pose_row(&best.pose), best.iterations, best.residual)
                    .map_err(io)?;
                failures.push(format!(
                    "row {i}: no convergence, residual {:.6} mm after {} iterations",
                    best.residual, best.iterations
                ));
            }
            Err(e) => {
                writeln!(out, "{i},NA,NA,NA,NA,NA,NA,0,NA,failed").map_err(io)?;
                failures.push(format!("row {i}: {e}"));
            }
        }
    }
    out.flush().map_err(io)?;
    drop(out);

    let mut m = RunManifest::new("solve", arguments);
    m.config("geometry", a.geometry.as_deref());
    m.config("input", a.input.as_deref());
    if let Some(o) = &a.output {
        m.output(o);
    }
    m.note("rows", rows.len());
    m.note("failures", failures.len());
    m.write_beside(a.manifest.as_deref(), a.output.as_deref())?;

    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Compute(failures.join("\n")))
    }
}

fn cmd_simulate(a: SimulateArgs, arguments: &[String]) -> Result<(), CliError> {
    let scenario = load_scenario(&a.scenario)?;
    let samples = scenario
        .calibration_samples()
        .map_err(|e| CliError::Compute(e.to_string()))?;
    let f = File::create(&a.output).map_err(|e| usage(format!("{}: {e}", a.output.display())))?;
    let mut w = BufWriter::new(f);
    write_samples_csv(&mut w, &samples).map_err(usage)?;
    w.flush().map_err(usage)?;

    let mut m = RunManifest::new("simulate", arguments);
    m.seed = Some(scenario.seed());
    m.config("scenario", a.scenario.scenario.as_deref());
    m.config("geometry", scenario.geometry_path.as_deref());
    m.output(&a.output);
    m.note("samples", samples.len());
    m.write_beside(a.manifest.as_deref(), Some(&a.output))
}

fn parse_grid(s: &str) -> Result<Vec<f64>, CliError> {
    let parts: Vec<f64> = s
        .split(':')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| usage(format!("--grid {s:?}: expected start:stop:step")))?;
    match parts.as_slice() {
        [start, stop, step] if *step > 0.0 && stop >= start && parts.iter().all(|v| v.is_finite()) => {
            Ok(offset_grid(*start, *stop, *step))
        }
        _ => Err(usage(format!("--grid {s:?}: expected start:stop:step with step > 0 and stop >= start"))),
    }
}

fn cmd_calibrate(a: CalibrateArgs, arguments: &[String]) -> Result<(), CliError> {
    let geometry = SystemConfig::load_or_default(a.geometry.as_deref()).map_err(usage)?.geometry;
    let config = a.solver.config()?;
    let grid = parse_grid(&a.grid)?;
    let file = File::open(&a.samples).map_err(|e| usage(format!("{}: {e}", a.samples.display())))?;
    let samples = read_samples_csv(file).map_err(|e| usage(format!("{}: {e}", a.samples.display())))?;
    let options = SweepOptions {
        max_failure_fraction: a.max_failure_fraction,
    };
    let sweep = run_sweep_with(&samples, &grid, &geometry, &config, &options).map_err(|e| match e {
        crate::calibration::CalibrationError::SweepFailed { .. } => CliError::Compute(e.to_string()),
        other => usage(other),
    })?;
    let mut out = open_output(a.output.as_deref())?;
    sweep.write_csv(&mut out).map_err(usage)?;
    out.flush().map_err(usage)?;
    drop(out);
    if a.output.is_some() {
        println!("best_offset_mm={:.6}", sweep.best_offset_mm);
    }

    let mut m = RunManifest::new("calibrate", arguments);
    m.config("samples", Some(&a.samples));
    m.config("geometry", a.geometry.as_deref());
    if let Some(o) = &a.output {
        m.output(o);
    }
    m.note("best_offset_mm", sweep.best_offset_mm);
    m.note("failed_pairs", sweep.failed_pairs);
    m.write_beside(a.manifest.as_deref(), a.output.as_deref())
}

fn cmd_evaluate(a: EvaluateArgs, arguments: &[String]) -> Result<(), CliError> {
    let mut scenario = load_scenario(&a.scenario)?;
    if let Some(o) = a.offset_mm {
        scenario.document.offset_mm = o;
    }
    let config = a.solver.config()?;
    let report = scenario
        .accuracy_report(&config)
        .map_err(|e| CliError::Compute(e.to_string()))?;
    std::fs::create_dir_all(&a.output_dir).map_err(|e| usage(format!("{}: {e}", a.output_dir.display())))?;
    let table = report.table();
    let files = [
        ("accuracy_table.csv", table.to_csv_string()),
        ("accuracy_points.csv", report.points_csv_string()),
        ("accuracy_errors.svg", table.error_curves_svg()),
    ];
    let mut m = RunManifest::new("evaluate", arguments);
    m.seed = Some(scenario.seed());
    m.config("scenario", a.scenario.scenario.as_deref());
    m.config("geometry", scenario.geometry_path.as_deref());
    for (name, text) in &files {
        let p = a.output_dir.join(name);
        std::fs::write(&p, text).map_err(|e| usage(format!("{}: {e}", p.display())))?;
        m.output(&p);
    }
    let failed = report.failed_points();
    m.note("points", report.points.len());
    m.note("failed_points", failed);
    m.note("offset_mm", scenario.document.offset_mm);
    m.write(&a.output_dir.join("manifest.json"))?;
    print!("{}", table.to_csv_string());
    if failed > 0 {
        return Err(CliError::Compute(format!(
            "{failed} of {} points failed; see accuracy_points.csv",
            report.points.len()
        )));
    }
    Ok(())
}

fn cmd_home(a: HomeArgs, arguments: &[String]) -> Result<(), CliError> {
    let scenario = load_scenario(&a.scenario)?;
    let stream = scenario
        .count_stream(a.rate_hz)
        .map_err(|e| CliError::Compute(e.to_string()))?;
    let start = stream
        .motion_start()
        .ok_or_else(|| CliError::Compute("stream has no motion segment".into()))?;
    let mut channels = channels_from_references(&scenario.document.encoder, &scenario.references());
    let traces: [Vec<_>; LEG_COUNT] = std::array::from_fn(|c| stream.channel_events(c)[..start].to_vec());
    let homing = home_all(&mut channels, &traces);

    let truth = &stream.samples[start];
    let mut out = open_output(a.output.as_deref())?;
    writeln!(out, "channel,first_index_length_mm,index_count,home_offset_mm,homed_length_mm,true_length_mm,error_mm")
        .map_err(usage)?;
    let mut worst: f64 = 0.0;
    for (i, ch) in channels.iter_mut().enumerate() {
        ch.feed_counts(truth.deltas[i], truth.index[i]);
        match (ch.home_offset(), ch.absolute_length()) {
            (Ok(off), Ok(len)) => {
                let err = len - truth.truth_lengths[i];
                worst = worst.max(err.abs());
                writeln!(
                    out,
                    "{},{:.6},{},{:.6},{:.6},{:.6},{:.6}",
                    i + 1,
                    ch.spec.first_index_length_mm,
                    ch.index_count,
                    off,
                    len,
                    truth.truth_lengths[i],
                    err
                )
                .map_err(usage)?;
            }
            _ => writeln!(
                out,
                "{},{:.6},NA,NA,NA,{:.6},NA",
                i + 1,
                ch.spec.first_index_length_mm,
                truth.truth_lengths[i]
            )
            .map_err(usage)?,
        }
    }
    out.flush().map_err(usage)?;
    drop(out);

    let mut m = RunManifest::new("home", arguments);
    m.seed = Some(scenario.seed());
    m.config("scenario", a.scenario.scenario.as_deref());
    if let Some(o) = &a.output {
        m.output(o);
    }
    m.note("homed", homing.is_ok());
    m.note("max_error_mm", worst);
    m.write_beside(a.manifest.as_deref(), a.output.as_deref())?;
    homing.map_err(|e| CliError::Compute(e.to_string()))
}

fn cmd_serve(a: ServeArgs, arguments: &[String]) -> Result<(), CliError> {
    let scenario = load_scenario(&a.scenario)?;
    crate::telemetry::daemon::validate_rate(a.rate_hz).map_err(usage)?;
    let target = resolve_addr(&a.connect)?;
    let stream = scenario.count_stream(a.rate_hz).map_err(usage)?;
    let packets = match (a.packets, a.duration_s) {
        (Some(n), _) => Some(n),
        (None, Some(d)) if d >= 0.0 && d.is_finite() => Some((d * a.rate_hz).round() as u64),
        (None, Some(d)) => return Err(usage(format!("--duration-s {d} must be >= 0"))),
        (None, None) => None,
    };
    let options = ServeOptions {
        rate_hz: a.rate_hz,
        packets,
        drop_sequences: a.drop_seq.iter().copied().collect(),
    };
    let stats = bind_and_serve(&a.bind, target, &stream, &options, &AtomicBool::new(false)).map_err(usage)?;
    println!(
        "generated={} sent={} dropped={} send_errors={}",
        stats.generated, stats.sent, stats.dropped, stats.send_errors
    );
    let mut m = RunManifest::new("serve", arguments);
    m.seed = Some(scenario.seed());
    m.config("scenario", a.scenario.scenario.as_deref());
    m.note("generated", stats.generated);
    m.note("sent", stats.sent);
    m.note("dropped", stats.dropped);
    m.write_beside(a.manifest.as_deref(), None)
}

fn cmd_stream(a: StreamArgs, arguments: &[String]) -> Result<(), CliError> {
    let solver = a.solver.config()?;
    let (geometry, encoders, default_offset, seed): (_, [EncoderSpec; LEG_COUNT], f64, Option<u64>) =
        match (&a.scenario, &a.geometry) {
            (Some(_), _) | (None, None) => {
                let s = load_scenario_from(a.scenario.as_deref(), a.seed)?;
                (s.geometry.clone(), s.encoders, s.document.offset_mm, Some(s.seed()))
            }
            (None, Some(g)) => {
                let cfg = SystemConfig::load(g).map_err(usage)?;
                let refs = cfg.encoders.ok_or_else(|| {
                    usage(format!("{}: no encoders section; first-index lengths are needed for homing", g.display()))
                })?;
                let specs = channels_from_references(&EncoderSpec::default(), &refs).map(|c| c.spec);
                (cfg.geometry, specs, 3.0, None)
            }
        };
    let chain = match &a.chain {
        Some(p) => Some(FrameChain::load(p).map_err(|e| usage(format!("{}: {e}", p.display())))?),
        None => None,
    };
    let publish = a.connect.as_deref().map(resolve_addr).transpose()?;
    let socket = UdpSocket::bind(&a.bind).map_err(|e| usage(format!("cannot bind {}: {e}", a.bind)))?;
    let pipeline = ClientPipeline::new(ClientConfig {
        geometry,
        encoders,
        offset_mm: a.offset_mm.unwrap_or(default_offset),
        solver,
        chain,
    });
    let options = ClientRunOptions {
        publish,
        idle_timeout: Duration::from_millis(a.idle_timeout_ms),
        max_packets: a.packets,
        queue_capacity: a.queue_capacity,
    };
    let log = open_output(a.log.as_deref())?;
    let stats = run_client(socket, pipeline, &options, log, &AtomicBool::new(false)).map_err(usage)?;
    eprintln!(
        "received={} processed={} gaps={} out_of_order={} solved={} not_homed={} no_convergence={} max_backlog={}",
        stats.received,
        stats.processed,
        stats.gaps,
        stats.out_of_order,
        stats.solved,
        stats.not_homed,
        stats.no_convergence,
        stats.max_backlog
    );
    let mut m = RunManifest::new("stream", arguments);
    m.seed = seed;
    m.config("scenario", a.scenario.as_deref());
    m.config("geometry", a.geometry.as_deref());
    m.config("chain", a.chain.as_deref());
    if let Some(l) = &a.log {
        m.output(l);
    }
    m.note("received", stats.received);
    m.note("gaps", stats.gaps);
    m.note("out_of_order", stats.out_of_order);
    m.note("solved", stats.solved);
    m.note("no_convergence", stats.no_convergence);
    m.write_beside(a.manifest.as_deref(), a.log.as_deref())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn clap_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn grid_parsing() {
        assert_eq!(parse_grid("-2:6:0.5").unwrap().len(), 17);
        assert!(parse_grid("1:0:0.5").is_err());
        assert!(parse_grid("0:1:0").is_err());
        assert!(parse_grid("0:1").is_err());
    }

    #[test]
    fn unknown_flags_are_usage_errors() {
        assert_eq!(run(["stringpose", "solve", "--bogus"]), EXIT_USAGE);
        assert_eq!(run(["stringpose", "frobnicate"]), EXIT_USAGE);
    }
}
