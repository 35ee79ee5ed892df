//! Command-line front end.
//!
//! Subcommands: `simulate`, `sweep`, `verify`, `compare`. Exit codes are 0 on
//! success, 1 on a decode failure or violated invariant, 2 on an invalid
//! run specification.
//!
//! Settings come from flags, then an optional TOML file (`--config`), then
//! defaults. Relative output paths are resolved against
//! `$COMBOCACHE_OUTPUT_DIR` when it is set.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::analysis::{self, SchemePoint};
use crate::gfmds::MdsCode;
use crate::schemes::{
    self, check_run, code_dims, minimal_file_size, place, simulate, CodeDims, DemandVector, Library, LinkTranscript,
    SchemeConfig, SchemeKind,
};
use crate::topology::{build_network, k_i, per_user_incidence, NetworkParams, NetworkTopology};

pub const OUTPUT_DIR_ENV: &str = "COMBOCACHE_OUTPUT_DIR";

pub const CSV_HEADER: &str =
    "H,r,N,scheme,g,M_exact,M_decimal,R1_exact,R1_decimal,R2_exact,R2_decimal,k1,k2,k3,n";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid run specification: {0}")]
    Invalid(String),
    #[error("{0}")]
    Failed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Invalid(_) => 2,
            CliError::Failed(_) | CliError::Io(_) => 1,
        }
    }
}

fn invalid(e: impl ToString) -> CliError {
    CliError::Invalid(e.to_string())
}

#[derive(Parser, Debug)]
#[command(name = "combocache", version, about = "Coded caching in combination networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Place, deliver and decode one configuration with real bytes.
    Simulate(SimulateArgs),
    /// Emit the memory/load CSV for a range of gains.
    Sweep(SweepArgs),
    /// Run the counting, coding and end-to-end checks over (H, r) ranges.
    Verify(VerifyArgs),
    /// Sweep both coded schemes and print the memory comparison table.
    Compare(SweepArgs),
}

#[derive(Args, Debug, Default, Clone)]
pub struct NetworkArgs {
    /// Number of relays H
    #[arg(long = "relays", short = 'H')]
    pub relays: Option<u32>,
    /// Relays per user r
    #[arg(long = "per-user", short = 'r')]
    pub per_user: Option<u32>,
    /// Number of files N
    #[arg(long = "files", short = 'N')]
    pub files: Option<u32>,
    /// TOML file with default values for any flag
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug, Default, Clone)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub net: NetworkArgs,
    /// routing | baseline | th1 (also baseline_zewail, th1_asymmetric)
    #[arg(long)]
    pub scheme: Option<String>,
    /// Coded caching gain g (coded schemes)
    #[arg(long, short = 'g')]
    pub gain: Option<u32>,
    /// M/N as a fraction, e.g. 1/3 (routing)
    #[arg(long = "memory-fraction")]
    pub memory_fraction: Option<String>,
    /// Requested file size in bytes; rounded up to the nearest valid size
    #[arg(long = "file-size")]
    pub file_size: Option<u64>,
    /// worst-case | random | comma-separated file ids
    #[arg(long)]
    pub demand: Option<String>,
    /// Seed for file contents (and random demands)
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write a line-delimited JSON transcript here
    #[arg(long)]
    pub dump: Option<PathBuf>,
}

#[derive(Args, Debug, Default, Clone)]
pub struct SweepArgs {
    #[command(flatten)]
    pub net: NetworkArgs,
    /// Gain range "a..b" (inclusive), a list "1,3,5", or "all" for 1..=K1
    #[arg(long)]
    pub gains: Option<String>,
    /// Comma-separated schemes to sweep
    #[arg(long)]
    pub schemes: Option<String>,
    /// Number of envelope samples over [0, N]
    #[arg(long)]
    pub grid: Option<usize>,
    /// CSV output path (stdout when absent)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also simulate every point with all-distinct demands and compare
    #[arg(long)]
    pub simulate: bool,
    /// Worker threads (default: available processors)
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug, Default, Clone)]
pub struct VerifyArgs {
    /// Relay counts, "a..b" or a single value
    #[arg(long = "relays", short = 'H')]
    pub relays: String,
    /// Relays-per-user values, "a..b" or a single value
    #[arg(long = "per-user", short = 'r')]
    pub per_user: String,
    /// Random demand vectors per simulated configuration
    #[arg(long = "random-demands", default_value_t = 5)]
    pub random_demands: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub jobs: Option<usize>,
}

/// Keys accepted in the `--config` TOML file.
#[derive(Debug, Default, Clone, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub relays: Option<u32>,
    pub per_user: Option<u32>,
    pub files: Option<u32>,
    pub file_size: Option<u64>,
    pub scheme: Option<String>,
    pub gain: Option<u32>,
    pub memory_fraction: Option<String>,
    pub demand: Option<String>,
    pub seed: Option<u64>,
    pub dump: Option<PathBuf>,
    pub gains: Option<String>,
    pub schemes: Option<String>,
    pub grid: Option<usize>,
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(ConfigFile::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))
    }
}

/// How demands are chosen for a simulation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DemandSpec {
    WorstCase,
    Random,
    Explicit(Vec<u32>),
}

impl FromStr for DemandSpec {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "worst-case" | "worst_case" => Ok(DemandSpec::WorstCase),
            "random" => Ok(DemandSpec::Random),
            list => list
                .split(',')
                .map(|x| x.trim().parse::<u32>().map_err(|_| invalid(format!("bad demand entry '{x}'"))))
                .collect::<Result<_, _>>()
                .map(DemandSpec::Explicit),
        }
    }
}

/// A fully resolved simulation request.
#[derive(Debug, Clone)]
pub struct RunSpec {
    pub relays: u32,
    pub per_user: u32,
    pub files: u32,
    pub file_size_request: u64,
    pub config: SchemeConfig,
    pub demand: DemandSpec,
    pub seed: u64,
    pub dump: Option<PathBuf>,
}

pub fn parse_fraction(s: &str) -> Result<BigRational, CliError> {
    BigRational::from_str(s.trim()).map_err(|_| invalid(format!("bad fraction '{s}'")))
}

/// Parses "a..b" (inclusive), "a..=b", "a,b,c" or a single integer.
pub fn parse_range(s: &str) -> Result<Vec<u32>, CliError> {
    let s = s.trim();
    if s.is_empty() {
        return Ok(Vec::new());
    }
    let num = |x: &str| x.trim().parse::<u32>().map_err(|_| invalid(format!("bad integer '{x}' in '{s}'")));
    if let Some((a, b)) = s.split_once("..") {
        let b = b.strip_prefix('=').unwrap_or(b);
        let (a, b) = (num(a)?, num(b)?);
        return Ok((a..=b).collect());
    }
    s.split(',').map(num).collect()
}

fn required<T>(v: Option<T>, name: &str) -> Result<T, CliError> {
    v.ok_or_else(|| invalid(format!("missing --{name}")))
}

impl RunSpec {
    pub fn resolve(args: &SimulateArgs) -> Result<Self, CliError> {
        let cfg = ConfigFile::load(args.net.config.as_deref())?;
        let relays = required(args.net.relays.or(cfg.relays), "relays")?;
        let per_user = required(args.net.per_user.or(cfg.per_user), "per-user")?;
        let files = required(args.net.files.or(cfg.files), "files")?;
        let scheme: SchemeKind = args
            .scheme
            .clone()
            .or(cfg.scheme)
            .unwrap_or_else(|| "th1".into())
            .parse()
            .map_err(invalid)?;
        let config = match scheme {
            SchemeKind::Routing => {
                let f = args.memory_fraction.clone().or(cfg.memory_fraction).unwrap_or_else(|| "0".into());
                SchemeConfig::Routing { memory_fraction: parse_fraction(&f)? }
            }
            SchemeKind::Baseline => SchemeConfig::Baseline { gain: required(args.gain.or(cfg.gain), "gain")? },
            SchemeKind::Asymmetric => SchemeConfig::Asymmetric { gain: required(args.gain.or(cfg.gain), "gain")? },
        };
        let demand = args.demand.clone().or(cfg.demand).unwrap_or_else(|| "worst-case".into()).parse()?;
        Ok(RunSpec {
            relays,
            per_user,
            files,
            file_size_request: args.file_size.or(cfg.file_size).unwrap_or(1),
            config,
            demand,
            seed: args.seed.or(cfg.seed).unwrap_or(0),
            dump: args.dump.clone().or(cfg.dump),
        })
    }
}

/// Renders a rational with 12 significant digits.
pub fn decimal(q: &BigRational) -> String {
    let v = q.to_f64().unwrap_or(f64::NAN);
    if v == 0.0 {
        return "0".into();
    }
    let magnitude = v.abs().log10().floor() as i32;
    let places = (11 - magnitude).max(0) as usize;
    format!("{v:.places$}")
}

/// Resolves `path` against the output-directory override.
pub fn output_path(path: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_DIR_ENV) {
        Some(dir) if path.is_relative() => Path::new(&dir).join(path),
        _ => path.to_path_buf(),
    }
}

fn network(relays: u32, per_user: u32, files: u32, size: u64) -> Result<NetworkTopology, CliError> {
    build_network(NetworkParams::new(relays, per_user, files, size)).map_err(invalid)
}

#[derive(Serialize)]
struct DumpRecord<'a> {
    direction: &'static str,
    relay: u32,
    user: Option<u32>,
    set: &'a crate::topology::UserSet,
    tag: &'a schemes::MessageTag,
    bytes: usize,
    sha256: String,
}

/// Writes one JSON object per message: server-to-relay messages by relay,
/// then relay-to-user messages by `(relay, user)`, each in send order.
pub fn write_transcript(transcript: &LinkTranscript, out: &mut dyn Write) -> std::io::Result<()> {
    let mut emit = |direction, relay, user, m: &schemes::Message| -> std::io::Result<()> {
        let rec = DumpRecord {
            direction,
            relay,
            user,
            set: &m.tag.set,
            tag: &m.tag,
            bytes: m.payload.len(),
            sha256: hex::encode(Sha256::digest(&m.payload)),
        };
        serde_json::to_writer(&mut *out, &rec)?;
        out.write_all(b"\n")
    };
    for (&h, msgs) in &transcript.server_to_relay {
        for m in msgs {
            emit("server_to_relay", h, None, m)?;
        }
    }
    for (&(h, k), msgs) in &transcript.relay_to_user {
        for m in msgs {
            emit("relay_to_user", h, Some(k), m)?;
        }
    }
    Ok(())
}

/// Result of one simulation, for callers that want more than stdout.
#[derive(Debug, Clone)]
pub struct SimulateSummary {
    pub file_size: u64,
    pub memory: BigRational,
    pub r1: BigRational,
    pub r2: BigRational,
    pub messages: usize,
    pub passed: Vec<bool>,
    pub issues: Vec<String>,
}

pub fn cmd_simulate(spec: &RunSpec, out: &mut dyn Write) -> Result<SimulateSummary, CliError> {
    let probe = network(spec.relays, spec.per_user, spec.files, 1)?;
    let size = minimal_file_size(&probe, &spec.config, spec.file_size_request).map_err(invalid)?;
    let topo = network(spec.relays, spec.per_user, spec.files, size)?;
    let users = topo.user_count();
    let demand = match &spec.demand {
        DemandSpec::WorstCase => DemandVector::worst_case(users, spec.files).map_err(invalid)?,
        DemandSpec::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            DemandVector::random(users, spec.files, &mut rng)
        }
        DemandSpec::Explicit(v) => DemandVector(v.clone()),
    };
    demand.validate(users, spec.files).map_err(invalid)?;

    let library = Library::random(spec.files, size, spec.seed);
    let placement = place(&topo, &spec.config, &library).map_err(invalid)?;
    let report = simulate(&topo, &placement, &demand).map_err(|e| CliError::Failed(e.to_string()))?;
    let issues = check_run(&topo, &placement, &report);
    let plan = &placement.plan;

    writeln!(out, "scheme {} H={} r={} N={} K={} B={}", spec.config.kind(), spec.relays, spec.per_user, spec.files, users, size)?;
    if spec.config.kind() != SchemeKind::Routing {
        let d = plan.dims;
        writeln!(out, "g={} n={} k1={} k2={} k3={}", spec.config.gain(), d.n, d.k1, d.k2, d.k3)?;
    }
    let n = BigRational::from_integer(spec.files.into());
    let m_frac = &plan.memory / &n;
    writeln!(out, "M   = {} ({})", plan.memory, decimal(&plan.memory))?;
    writeln!(out, "M/N = {} ({})", m_frac, decimal(&m_frac))?;
    writeln!(out, "R1  = {} ({})", report.loads.r1, decimal(&report.loads.r1))?;
    writeln!(out, "R2  = {} ({})", report.loads.r2, decimal(&report.loads.r2))?;
    writeln!(out, "messages = {}", report.message_count)?;
    let passed: Vec<bool> = report.decoded.iter().map(Result::is_ok).collect();
    for (k, res) in report.decoded.iter().enumerate() {
        match res {
            Ok(()) => writeln!(out, "user {:>3} wants {:>3}: PASS", k + 1, demand.0[k])?,
            Err(e) => writeln!(out, "user {:>3} wants {:>3}: FAIL ({e})", k + 1, demand.0[k])?,
        }
    }
    for issue in &issues {
        writeln!(out, "invariant: {issue}")?;
    }

    if let Some(path) = &spec.dump {
        let path = output_path(path);
        let mut w = BufWriter::new(File::create(&path)?);
        write_transcript(&report.transcript, &mut w)?;
        w.flush()?;
        writeln!(out, "transcript written to {}", path.display())?;
    }

    let summary = SimulateSummary {
        file_size: size,
        memory: plan.memory.clone(),
        r1: report.loads.r1.clone(),
        r2: report.loads.r2.clone(),
        messages: report.message_count,
        passed,
        issues,
    };
    if !summary.issues.is_empty() {
        return Err(CliError::Failed(format!("{} invariant violation(s)", summary.issues.len())));
    }
    Ok(summary)
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub h: u32,
    pub r: u32,
    pub files: u32,
    pub scheme: String,
    pub g: Option<u32>,
    pub m: BigRational,
    pub r1: BigRational,
    pub r2: Option<BigRational>,
    pub dims: Option<CodeDims>,
}

impl SweepRow {
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<String>| v.unwrap_or_default();
        let dims = self.dims;
        [
            self.h.to_string(),
            self.r.to_string(),
            self.files.to_string(),
            self.scheme.clone(),
            opt(self.g.map(|g| g.to_string())),
            self.m.to_string(),
            decimal(&self.m),
            self.r1.to_string(),
            decimal(&self.r1),
            opt(self.r2.as_ref().map(ToString::to_string)),
            opt(self.r2.as_ref().map(decimal)),
            opt(dims.map(|d| d.k1.to_string())),
            opt(dims.map(|d| d.k2.to_string())),
            opt(dims.map(|d| d.k3.to_string())),
            opt(dims.map(|d| d.n.to_string())),
        ]
        .join(",")
    }
}

/// Sweep output: per-(scheme, g) points and sampled envelopes.
#[derive(Debug, Clone)]
pub struct SweepResult {
    pub points: Vec<(SchemePoint, CodeDims)>,
    pub rows: Vec<SweepRow>,
    pub envelopes: Vec<(SchemeKind, analysis::TradeoffCurve)>,
}

pub struct SweepSpec {
    pub relays: u32,
    pub per_user: u32,
    pub files: u32,
    pub gains: Vec<u32>,
    pub schemes: Vec<SchemeKind>,
    pub grid: usize,
    pub simulate: bool,
    pub jobs: Option<usize>,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl SweepSpec {
    pub fn resolve(args: &SweepArgs) -> Result<Self, CliError> {
        let cfg = ConfigFile::load(args.net.config.as_deref())?;
        let relays = required(args.net.relays.or(cfg.relays), "relays")?;
        let per_user = required(args.net.per_user.or(cfg.per_user), "per-user")?;
        let files = required(args.net.files.or(cfg.files), "files")?;
        let gains_text = args.gains.clone().or(cfg.gains).unwrap_or_else(|| "all".into());
        let gains = if gains_text.trim() == "all" {
            let k1 = k_i(relays, per_user, 1).to_u32().unwrap_or(0);
            (1..=k1).collect()
        } else {
            parse_range(&gains_text)?
        };
        let schemes = args
            .schemes
            .clone()
            .or(cfg.schemes)
            .unwrap_or_else(|| "baseline,th1".into())
            .split(',')
            .map(|s| s.trim().parse::<SchemeKind>().map_err(invalid))
            .collect::<Result<Vec<_>, _>>()?;
        if schemes.contains(&SchemeKind::Routing) {
            return Err(invalid("sweep covers coded schemes only"));
        }
        let grid = args.grid.or(cfg.grid).unwrap_or(200);
        if grid < 2 {
            return Err(invalid("grid needs at least 2 samples"));
        }
        Ok(SweepSpec {
            relays,
            per_user,
            files,
            gains,
            schemes,
            grid,
            simulate: args.simulate,
            jobs: args.jobs.or(cfg.jobs),
            seed: args.seed.or(cfg.seed).unwrap_or(0),
            out: args.out.clone().or(cfg.out),
        })
    }
}

fn pool(jobs: Option<usize>) -> Result<rayon::ThreadPool, CliError> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        if j == 0 {
            return Err(invalid("--jobs must be positive"));
        }
        b = b.num_threads(j);
    }
    b.build().map_err(|e| CliError::Failed(e.to_string()))
}

fn config_for(kind: SchemeKind, g: u32) -> SchemeConfig {
    match kind {
        SchemeKind::Baseline => SchemeConfig::Baseline { gain: g },
        SchemeKind::Asymmetric => SchemeConfig::Asymmetric { gain: g },
        SchemeKind::Routing => SchemeConfig::Routing { memory_fraction: BigRational::zero() },
    }
}

/// Simulates `config` with all-distinct demands and checks that the
/// measured memory and loads equal the analytic point.
fn simulate_point(topo: &NetworkTopology, config: &SchemeConfig, point: &SchemePoint, seed: u64) -> Result<(), String> {
    let p = topo.params();
    let size = minimal_file_size(topo, config, 1).map_err(|e| e.to_string())?;
    let topo = build_network(NetworkParams::new(p.relays, p.relays_per_user, p.files, size)).map_err(|e| e.to_string())?;
    let lib = Library::random(p.files, size, seed);
    let placement = place(&topo, config, &lib).map_err(|e| e.to_string())?;
    let d = DemandVector::worst_case(topo.user_count(), p.files).map_err(|e| e.to_string())?;
    let rep = simulate(&topo, &placement, &d).map_err(|e| e.to_string())?;
    let mut issues = check_run(&topo, &placement, &rep);
    if placement.plan.memory != point.m {
        issues.push(format!("placed M = {} vs analytic {}", placement.plan.memory, point.m));
    }
    if rep.loads.r1 != point.r1 || rep.loads.r2 != point.r2 {
        issues.push(format!("measured ({}, {}) vs analytic ({}, {})", rep.loads.r1, rep.loads.r2, point.r1, point.r2));
    }
    if issues.is_empty() {
        Ok(())
    } else {
        Err(issues.join("; "))
    }
}

pub fn cmd_sweep(spec: &SweepSpec) -> Result<SweepResult, CliError> {
    let topo = network(spec.relays, spec.per_user, spec.files, 1)?;
    if spec.simulate && spec.files < topo.user_count() {
        return Err(invalid("simulated sweeps use all-distinct demands and need N >= K"));
    }
    let mut tasks: Vec<(SchemeKind, u32)> =
        spec.schemes.iter().flat_map(|&s| spec.gains.iter().map(move |&g| (s, g))).collect();
    tasks.sort();
    tasks.dedup();

    let pool = pool(spec.jobs)?;
    let computed: Vec<Result<(SchemePoint, CodeDims), CliError>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(kind, g)| {
                let config = config_for(kind, g);
                let dims = code_dims(&topo, &config).map_err(invalid)?;
                let point = analysis::coded_point(kind, spec.files, spec.relays, spec.per_user, g).map_err(invalid)?;
                if spec.simulate {
                    simulate_point(&topo, &config, &point, spec.seed)
                        .map_err(|e| CliError::Failed(format!("{kind} g={g}: {e}")))?;
                }
                Ok((point, dims))
            })
            .collect()
    });
    let points: Vec<(SchemePoint, CodeDims)> = computed.into_iter().collect::<Result<_, _>>()?;

    let mut rows: Vec<SweepRow> = points
        .iter()
        .map(|(p, d)| SweepRow {
            h: spec.relays,
            r: spec.per_user,
            files: spec.files,
            scheme: p.scheme.id().into(),
            g: Some(p.g),
            m: p.m.clone(),
            r1: p.r1.clone(),
            r2: Some(p.r2.clone()),
            dims: Some(*d),
        })
        .collect();

    let mut envelopes = Vec::new();
    if !points.is_empty() {
        let origin = analysis::routing_point(spec.files, spec.relays, spec.per_user, BigRational::zero()).map_err(invalid)?;
        let grid = analysis::memory_grid(spec.files, spec.grid);
        for &kind in spec.schemes.iter() {
            let mut pts: Vec<SchemePoint> = points.iter().filter(|(p, _)| p.scheme == kind).map(|(p, _)| p.clone()).collect();
            if pts.is_empty() {
                continue;
            }
            pts.push(origin.clone());
            let curve = analysis::envelope(&pts, spec.files).map_err(invalid)?;
            for m in &grid {
                let value = curve.evaluate(m).expect("grid lies in [0, N]");
                rows.push(SweepRow {
                    h: spec.relays,
                    r: spec.per_user,
                    files: spec.files,
                    scheme: format!("{}_envelope", kind.id()),
                    g: None,
                    m: m.clone(),
                    r1: value,
                    r2: None,
                    dims: None,
                });
            }
            envelopes.push((kind, curve));
        }
    }
    Ok(SweepResult { points, rows, envelopes })
}

pub fn write_csv(rows: &[SweepRow], out: &mut dyn Write) -> std::io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for row in rows {
        writeln!(out, "{}", row.to_csv())?;
    }
    Ok(())
}

fn emit_csv(spec: &SweepSpec, rows: &[SweepRow], stdout: &mut dyn Write) -> Result<(), CliError> {
    match &spec.out {
        Some(path) => {
            let path = output_path(path);
            let mut w = BufWriter::new(File::create(&path)?);
            write_csv(rows, &mut w)?;
            w.flush()?;
            writeln!(stdout, "wrote {} rows to {}", rows.len(), path.display())?;
        }
        None => write_csv(rows, stdout)?,
    }
    Ok(())
}

pub fn cmd_compare(spec: &SweepSpec, stdout: &mut dyn Write) -> Result<analysis::ComparisonReport, CliError> {
    let report = analysis::corollary1_check(spec.relays, spec.per_user).map_err(|e| match e {
        analysis::AnalysisError::ComparisonViolated { .. } => CliError::Failed(e.to_string()),
        other => invalid(other),
    })?;
    let result = cmd_sweep(spec)?;
    if spec.out.is_some() {
        emit_csv(spec, &result.rows, stdout)?;
    }
    write!(stdout, "{report}")?;
    Ok(report)
}

/// One line of the verification log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckLine {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Largest `Z_t` that verify will materialize for the enumeration check.
const VERIFY_ENUMERATION_BUDGET: u64 = 1_000_000;

fn check(name: impl Into<String>, res: Result<String, String>) -> CheckLine {
    match res {
        Ok(detail) => CheckLine { name: name.into(), passed: true, detail },
        Err(detail) => CheckLine { name: name.into(), passed: false, detail },
    }
}

fn verify_counting(topo: &NetworkTopology) -> Result<String, String> {
    let (h, r) = (topo.relay_count(), topo.relays_per_user());
    let users = topo.user_count();
    let mut compared = 0;
    for t in 1..=users {
        let closed = crate::topology::count_z(h, r, t).map_err(|e| e.to_string())?;
        let incidence = per_user_incidence(h, r, t).map_err(|e| e.to_string())?;
        if closed > VERIFY_ENUMERATION_BUDGET.into() {
            continue;
        }
        let z = topo.enumerate_z(t).map_err(|e| e.to_string())?;
        if closed != z.len().into() {
            return Err(format!("t={t}: closed form {closed} vs enumeration {}", z.len()));
        }
        let mut per_user = vec![0u64; users as usize];
        for w in &z {
            for &k in w.members() {
                per_user[k as usize - 1] += 1;
            }
        }
        if per_user.iter().any(|&c| incidence != c.into()) {
            return Err(format!("t={t}: per-user incidence {incidence} vs counts {per_user:?}"));
        }
        compared += 1;
    }
    Ok(format!("{compared} subset sizes enumerated"))
}

/// Exhaustive any-k decoding for every `(n, k)` with `n <= 12`.
pub fn verify_mds_exhaustive(seed: u64) -> Result<String, String> {
    use rand::RngCore;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut decodes = 0usize;
    for n in 1..=12usize {
        for k in 1..=n {
            let code = MdsCode::new(n, k).map_err(|e| e.to_string())?;
            let msg: Vec<Vec<u8>> = (0..k)
                .map(|_| {
                    let mut v = vec![0u8; 4];
                    rng.fill_bytes(&mut v);
                    v
                })
                .collect();
            let enc = code.encode(&msg).map_err(|e| e.to_string())?;
            let idx: Vec<u32> = (0..n as u32).collect();
            for subset in crate::topology::subsets_colex(&idx, k) {
                let blocks: Vec<_> = subset.iter().map(|&i| enc[i as usize].clone()).collect();
                if code.decode(&blocks).map_err(|e| e.to_string())? != msg {
                    return Err(format!("({n},{k}) failed on {subset:?}"));
                }
                decodes += 1;
            }
        }
    }
    Ok(format!("{decodes} decodes"))
}

/// 100 random `k`-subsets of an `(n, k)` code.
pub fn verify_mds_random(n: usize, k: usize, seed: u64) -> Result<String, String> {
    use rand::seq::index::sample;
    use rand::RngCore;
    let code = MdsCode::new(n, k).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = code.symbol_width();
    let msg: Vec<Vec<u8>> = (0..k)
        .map(|_| {
            let mut v = vec![0u8; 2 * width];
            rng.fill_bytes(&mut v);
            v
        })
        .collect();
    let enc = code.encode(&msg).map_err(|e| e.to_string())?;
    for trial in 0..100 {
        let picked = sample(&mut rng, n, k);
        let blocks: Vec<_> = picked.iter().map(|i| enc[i].clone()).collect();
        if code.decode(&blocks).map_err(|e| e.to_string())? != msg {
            return Err(format!("({n},{k}) failed on trial {trial}"));
        }
    }
    Ok(format!("({n},{k}) 100 subsets"))
}

/// End-to-end runs of one coded configuration: all-distinct demands with
/// `N = K`, then `random_demands` random vectors.
pub fn verify_end_to_end(h: u32, r: u32, config: &SchemeConfig, random_demands: usize, seed: u64) -> Result<String, String> {
    let users = k_i(h, r, 0).to_u32().ok_or("too many users")?;
    let probe = build_network(NetworkParams::new(h, r, users, 1)).map_err(|e| e.to_string())?;
    let size = minimal_file_size(&probe, config, 1).map_err(|e| e.to_string())?;
    let topo = build_network(NetworkParams::new(h, r, users, size)).map_err(|e| e.to_string())?;
    let lib = Library::random(users, size, seed);
    let placement = place(&topo, config, &lib).map_err(|e| e.to_string())?;
    let analytic = analysis::coded_point(config.kind(), users, h, r, config.gain()).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut demands = vec![DemandVector::worst_case(users, users).map_err(|e| e.to_string())?];
    demands.extend((0..random_demands).map(|_| DemandVector::random(users, users, &mut rng)));
    for d in &demands {
        let rep = simulate(&topo, &placement, d).map_err(|e| e.to_string())?;
        let mut issues = check_run(&topo, &placement, &rep);
        if placement.plan.memory != analytic.m || rep.loads.r1 != analytic.r1 || rep.loads.r2 != analytic.r2 {
            issues.push(format!(
                "measured (M={}, R1={}, R2={}) vs analytic ({}, {}, {})",
                placement.plan.memory, rep.loads.r1, rep.loads.r2, analytic.m, analytic.r1, analytic.r2
            ));
        }
        if !issues.is_empty() {
            return Err(format!("demand {:?}: {}", d.0, issues.join("; ")));
        }
    }
    Ok(format!("B={size}, {} demand vectors", demands.len()))
}

pub fn cmd_verify(args: &VerifyArgs, out: &mut dyn Write) -> Result<Vec<CheckLine>, CliError> {
    let hs = parse_range(&args.relays)?;
    let rs = parse_range(&args.per_user)?;
    let pairs: Vec<(u32, u32)> = hs.iter().flat_map(|&h| rs.iter().filter(move |&&r| r >= 1 && r <= h).map(move |&r| (h, r))).collect();
    if pairs.is_empty() {
        return Err(invalid("no (H, r) pair with 1 <= r <= H in the given ranges"));
    }
    let pool = pool(args.jobs)?;
    let mut lines = Vec::new();
    let mut report = |line: CheckLine, out: &mut dyn Write| -> std::io::Result<()> {
        writeln!(out, "[{}] {}: {}", if line.passed { "PASS" } else { "FAIL" }, line.name, line.detail)?;
        lines.push(line);
        Ok(())
    };
    report(check("mds any-k exhaustive n<=12", verify_mds_exhaustive(args.seed)), out)?;

    for (h, r) in pairs {
        let users = k_i(h, r, 0);
        let users_u32 = users.to_u32();
        let tag = format!("H={h} r={r}");
        if users > 30u32.into() {
            writeln!(out, "[SKIP] {tag}: K={users} above the enumeration cap of 30")?;
        } else {
            let topo = network(h, r, 1, 1)?;
            report(check(format!("{tag} counting"), verify_counting(&topo)), out)?;
        }
        let cmp = analysis::corollary1_check(h, r).map(|rep| {
            format!("threshold g>={}, {} gains", rep.equality_threshold, rep.rows.len())
        });
        report(check(format!("{tag} comparison"), cmp.map_err(|e| e.to_string())), out)?;

        let Some(users) = users_u32.filter(|&k| k <= 20) else {
            writeln!(out, "[SKIP] {tag}: K={users} above the simulation cap of 20")?;
            continue;
        };
        let k1 = k_i(h, r, 1).to_u32().unwrap_or(0);
        let topo = network(h, r, users, 1)?;
        let configs: Vec<SchemeConfig> = [SchemeKind::Baseline, SchemeKind::Asymmetric]
            .iter()
            .flat_map(|&kind| (1..=k1).map(move |g| config_for(kind, g)))
            .collect();
        let results: Vec<(String, Result<String, String>, Result<String, String>)> = pool.install(|| {
            configs
                .par_iter()
                .map(|config| {
                    let name = format!("{tag} {} g={}", config.kind(), config.gain());
                    let e2e = verify_end_to_end(h, r, config, args.random_demands, args.seed);
                    let mds = code_dims(&topo, config)
                        .map_err(|e| e.to_string())
                        .and_then(|d| verify_mds_random(d.n, d.dimension(), args.seed));
                    (name, e2e, mds)
                })
                .collect()
        });
        for (name, e2e, mds) in results {
            report(check(format!("{name} mds"), mds), out)?;
            report(check(format!("{name} end-to-end"), e2e), out)?;
        }
    }
    let failed = lines.iter().filter(|l| !l.passed).count();
    writeln!(out, "{} checks, {} failed", lines.len(), failed)?;
    if failed > 0 {
        return Err(CliError::Failed(format!("{failed} verification check(s) failed")));
    }
    Ok(lines)
}

pub fn run(cli: Cli, stdout: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate(args) => {
            let spec = RunSpec::resolve(&args)?;
            let summary = cmd_simulate(&spec, stdout)?;
            if summary.passed.iter().all(|&p| p) {
                Ok(())
            } else {
                Err(CliError::Failed("decode failure".into()))
            }
        }
        Command::Sweep(args) => {
            let spec = SweepSpec::resolve(&args)?;
            let result = cmd_sweep(&spec)?;
            emit_csv(&spec, &result.rows, stdout)
        }
        Command::Compare(args) => {
            let spec = SweepSpec::resolve(&args)?;
            cmd_compare(&spec, stdout).map(|_| ())
        }
        Command::Verify(args) => cmd_verify(&args, stdout).map(|_| ()),
    }
}

/// Parses `std::env::args`, runs, and maps errors to exit codes.
pub fn main_entry() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match run(cli, &mut lock) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = lock.flush();
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

/// Parses a CSV exact-fraction cell.
pub fn parse_exact(cell: &str) -> Option<BigRational> {
    BigRational::from_str(cell).ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges() {
        assert_eq!(parse_range("1..3").unwrap(), vec![1, 2, 3]);
        assert_eq!(parse_range("2..=4").unwrap(), vec![2, 3, 4]);
        assert_eq!(parse_range("5").unwrap(), vec![5]);
        assert_eq!(parse_range("1,4").unwrap(), vec![1, 4]);
        assert!(parse_range("").unwrap().is_empty());
        assert!(parse_range("x").is_err());
    }

    #[test]
    fn decimals_have_twelve_digits() {
        assert_eq!(decimal(&analysis::ratio(1, 3)), "0.333333333333");
        assert_eq!(decimal(&analysis::ratio(20, 3)), "6.66666666667");
        assert_eq!(decimal(&analysis::ratio(0, 3)), "0");
        assert_eq!(decimal(&analysis::ratio(1, 30)), "0.0333333333333");
    }

    #[test]
    fn demand_specs() {
        assert_eq!("worst-case".parse::<DemandSpec>().unwrap(), DemandSpec::WorstCase);
        assert_eq!("1, 2,3".parse::<DemandSpec>().unwrap(), DemandSpec::Explicit(vec![1, 2, 3]));
        assert!("1,a".parse::<DemandSpec>().is_err());
    }

    #[test]
    fn config_file_rejects_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "relays = 4\nbogus = 1\n").unwrap();
        assert!(matches!(ConfigFile::load(Some(&p)), Err(CliError::Invalid(_))));
    }

    #[test]
    fn flags_override_config() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "relays = 5\nper_user = 2\nfiles = 10\nscheme = \"baseline\"\ngain = 2\n").unwrap();
        let args = SimulateArgs {
            net: NetworkArgs { relays: Some(4), per_user: None, files: None, config: Some(p) },
            gain: Some(3),
            ..Default::default()
        };
        let spec = RunSpec::resolve(&args).unwrap();
        assert_eq!((spec.relays, spec.per_user, spec.files), (4, 2, 10));
        assert_eq!(spec.config, SchemeConfig::Baseline { gain: 3 });
        assert_eq!(spec.demand, DemandSpec::WorstCase);
    }

    #[test]
    fn worst_case_needs_enough_files() {
        let args = SimulateArgs {
            net: NetworkArgs { relays: Some(4), per_user: Some(2), files: Some(3), config: None },
            scheme: Some("th1".into()),
            gain: Some(2),
            ..Default::default()
        };
        let spec = RunSpec::resolve(&args).unwrap();
        let err = cmd_simulate(&spec, &mut Vec::new()).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
