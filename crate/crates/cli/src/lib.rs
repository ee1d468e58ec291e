//! Batch front end: every subcommand reads and writes the toolkit's file
//! formats (trace JSONL, track/grid/model/fingerprint JSON, SVG).
//!
//! Exit status is 0 on success, 2 on usage errors and 1 on data errors.

pub mod config;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use floorplan::classify::{train_bagged, Ensemble};
use floorplan::fingerprint::{locate, FingerprintDB};
use floorplan::grid::{GridMap, GridSpec};
use floorplan::pipeline::{build_db, build_grid, classify_at, label_grid, labeled_blocks, reconstruct, true_labels, world_grid, GRID_ALIGN_M};
use floorplan::reckoning::Track;
use floorplan::render::render_svg;
use floorplan::report::{run_report, ReportConfig};
use floorplan::sim::{gen_corpus_with, gen_world, World};
use floorplan::steps::{detect_steps_fsm, detect_steps_variance, Step};
use floorplan::trace::{parse_trace, ApReading, Trace};
use serde::{Deserialize, Serialize};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config keys or parameters.
    Usage(String),
    /// Unreadable or malformed input, or a pipeline failure on it.
    Data(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

/// Library errors: parameter problems are usage errors, the rest are about
/// the data and name `what` (usually a file).
fn lib_err(what: impl std::fmt::Display) -> impl FnOnce(floorplan::Error) -> CliError {
    move |e| match e {
        floorplan::Error::InvalidParams(m) => CliError::Usage(m),
        e => CliError::Data(format!("{what}: {e}")),
    }
}

#[derive(Parser, Debug)]
#[command(name = "floorplan", version, about = "Floor plans from smartphone sensor traces")]
struct Cli {
    /// Flat key=value config file; keys are dotted parameter paths.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one parameter, e.g. --set pipeline.dr.step_length=0.75.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    block_size: Option<f64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Debug)]
struct TraceInputs {
    /// Directory of trace JSONL files.
    #[arg(long, value_name = "DIR")]
    traces: PathBuf,
    /// Directory of track JSON files; reconstructed from the traces when absent.
    #[arg(long, value_name = "DIR")]
    tracks: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Simulate a world and a corpus of traces with ground truth.
    Simulate {
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[arg(long)]
        n_traces: Option<usize>,
        /// Fixed step count per trace instead of visit-based walks.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Count steps with the FSM and the variance baseline.
    Steps {
        #[arg(long, value_name = "FILE")]
        trace: PathBuf,
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Dead-reckon one trace into a track.
    Track {
        #[arg(long, value_name = "FILE")]
        trace: PathBuf,
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Rasterize traces into a block grid.
    BuildMap {
        #[command(flatten)]
        input: TraceInputs,
        /// Simulated world: fixes the grid extent and attaches true labels.
        #[arg(long, value_name = "FILE")]
        world: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Train an ensemble on a labeled grid.
    Train {
        #[arg(long, value_name = "FILE")]
        grid: PathBuf,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Label every block of a grid with a trained ensemble.
    Classify {
        #[arg(long, value_name = "FILE")]
        grid: PathBuf,
        #[arg(long, value_name = "FILE")]
        model: PathBuf,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Build a fingerprint database from traces.
    Fingerprint {
        #[command(flatten)]
        input: TraceInputs,
        #[arg(long, value_name = "FILE")]
        world: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Locate one WiFi scan against a fingerprint database.
    Locate {
        #[arg(long, value_name = "FILE")]
        db: PathBuf,
        /// JSON `{"aps": [{"bssid": ..., "rssi": ...}]}`.
        #[arg(long, value_name = "FILE")]
        scan: PathBuf,
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Render a grid, and optionally tracks, as SVG.
    Render {
        #[arg(long, value_name = "FILE")]
        grid: PathBuf,
        #[arg(long, value_name = "DIR")]
        tracks: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Classification accuracy per block size on a simulated world.
    Sweep {
        #[command(flatten)]
        input: TraceInputs,
        #[arg(long, value_name = "FILE")]
        world: PathBuf,
        /// Comma-separated block sizes in metres.
        #[arg(long, value_delimiter = ',')]
        sizes: Vec<f64>,
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Full pipeline on a simulated corpus.
    Report {
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
        /// Also write the plain-text report here.
        #[arg(long, value_name = "FILE")]
        text: Option<PathBuf>,
    },
}

/// Runs the CLI and returns the exit status. Output files are written
/// directly; anything without an `--out` goes to `stdout`.
pub fn run<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = if code == 0 { write!(stdout, "{e}") } else { write!(stderr, "{e}") };
            return code;
        }
    };
    match dispatch(cli, stdout, stderr) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "{e}");
            e.code()
        }
    }
}

fn resolve_config(cli: &Cli) -> CliResult<ReportConfig> {
    let mut overrides = match &cli.config {
        Some(path) => config::read_file(path)?,
        None => Vec::new(),
    };
    for s in &cli.set {
        overrides.push(config::split_pair(s).ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got `{s}`")))?);
    }
    if let Some(seed) = cli.seed {
        overrides.push(("seed".into(), seed.to_string()));
    }
    if let Some(b) = cli.block_size {
        overrides.push(("pipeline.block_size".into(), b.to_string()));
    }
    let cfg = config::apply(&ReportConfig::default(), &overrides)?;
    cfg.validate().map_err(lib_err("config"))?;
    Ok(cfg)
}

fn same_path(a: &Path, b: &Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(x), Ok(y)) => x == y,
        _ => a == b,
    }
}

fn check_distinct(inputs: &[&Path], out: Option<&Path>) -> CliResult<()> {
    if let Some(o) = out {
        if let Some(i) = inputs.iter().find(|i| same_path(i, o)) {
            return Err(CliError::Usage(format!("output {} is also an input", i.display())));
        }
    }
    Ok(())
}

fn read(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn emit(out: Option<&Path>, stdout: &mut dyn Write, text: &str) -> CliResult<()> {
    match out {
        Some(p) => write_file(p, text),
        None => stdout.write_all(text.as_bytes()).map_err(|e| CliError::Data(format!("stdout: {e}"))),
    }
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn read_trace(path: &Path) -> CliResult<Trace> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    parse_trace(&bytes).map_err(lib_err(path.display()))
}

fn files_with(dir: &Path, ext: &str) -> CliResult<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.extension().is_some_and(|x| x == ext)).collect();
    files.sort();
    Ok(files)
}

fn read_tracks(dir: &Path) -> CliResult<Vec<Track>> {
    files_with(dir, "json")?
        .iter()
        .map(|p| serde_json::from_str::<Track>(&read(p)?).map_err(|e| CliError::Data(format!("{}: {e}", p.display()))))
        .collect()
}

fn read_world(path: &Path) -> CliResult<World> {
    World::from_json(&read(path)?).map_err(lib_err(path.display()))
}

/// Traces of the input directory with their tracks, either read or
/// reconstructed.
fn load_inputs(input: &TraceInputs, cfg: &ReportConfig) -> CliResult<(Vec<Trace>, Vec<Track>)> {
    let files = files_with(&input.traces, "jsonl")?;
    if files.is_empty() {
        return Err(CliError::Data(format!("{}: no .jsonl traces", input.traces.display())));
    }
    let traces = files.iter().map(|p| read_trace(p)).collect::<CliResult<Vec<_>>>()?;
    let tracks = match &input.tracks {
        Some(dir) => {
            let mut by_id: BTreeMap<String, Track> = read_tracks(dir)?.into_iter().map(|t| (t.trace_id.clone(), t)).collect();
            traces
                .iter()
                .map(|t| by_id.remove(&t.trace_id).ok_or_else(|| CliError::Data(format!("{}: no track for trace `{}`", dir.display(), t.trace_id))))
                .collect::<CliResult<Vec<_>>>()?
        }
        None => traces
            .iter()
            .zip(&files)
            .map(|(t, p)| reconstruct(t, &cfg.pipeline).map_err(lib_err(p.display())))
            .collect::<CliResult<Vec<_>>>()?,
    };
    Ok((traces, tracks))
}

/// Grid covering the world when one is given, else the tracks' extent.
fn grid_spec(world: Option<&World>, tracks: &[Track], cfg: &ReportConfig) -> CliResult<GridSpec> {
    let p = &cfg.pipeline;
    match world {
        Some(w) => world_grid(w, p.block_size, p.grid_margin).map_err(lib_err("grid")),
        None => {
            let pts = tracks.iter().flat_map(|t| t.points.iter());
            let (mut lo, mut hi) = ((f64::INFINITY, f64::INFINITY), (f64::NEG_INFINITY, f64::NEG_INFINITY));
            for q in pts {
                lo = (lo.0.min(q.x), lo.1.min(q.y));
                hi = (hi.0.max(q.x), hi.1.max(q.y));
            }
            if !lo.0.is_finite() {
                return Err(CliError::Data("tracks have no points".into()));
            }
            GridSpec::covering(lo, hi, p.block_size, p.grid_margin, GRID_ALIGN_M).map_err(lib_err("grid"))
        }
    }
}

#[derive(Serialize, Deserialize)]
struct StepsOut {
    trace_id: String,
    fsm: usize,
    variance: usize,
    steps: Vec<Step>,
}

#[derive(Deserialize)]
struct ScanFile {
    aps: Vec<ApReading>,
}

#[derive(Serialize)]
struct SweepOut {
    block_size: f64,
    accuracy: f64,
    n_train: usize,
    n_test: usize,
}

fn dispatch(cli: Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> CliResult<()> {
    let cfg = resolve_config(&cli)?;
    match &cli.cmd {
        Cmd::Simulate { out, n_traces, steps } => {
            let world = gen_world(&cfg.world).map_err(lib_err("world"))?;
            let n = n_traces.unwrap_or(cfg.n_traces);
            let walk = floorplan::sim::WalkParams { n_steps: steps.or(cfg.walk.n_steps), ..cfg.walk.clone() };
            let corpus = gen_corpus_with(&world, n, cfg.seed, &walk).map_err(lib_err("simulate"))?;
            write_file(&out.join("world.json"), &(world.to_json() + "\n"))?;
            for (trace, truth) in &corpus {
                write_file(&out.join("traces").join(format!("{}.jsonl", trace.trace_id)), &trace.to_jsonl())?;
                write_file(&out.join("truth").join(format!("{}.json", trace.trace_id)), &(truth.to_json() + "\n"))?;
            }
            Ok(())
        }
        Cmd::Steps { trace, out } => {
            check_distinct(&[trace], out.as_deref())?;
            let t = read_trace(trace)?;
            let p = &cfg.pipeline;
            let steps = detect_steps_fsm(&t, &p.fsm, &p.trace).map_err(lib_err(trace.display()))?;
            let variance = detect_steps_variance(&t, &cfg.variance, &p.trace).map_err(lib_err(trace.display()))?.len();
            emit(out.as_deref(), stdout, &to_json(&StepsOut { trace_id: t.trace_id, fsm: steps.len(), variance, steps }))
        }
        Cmd::Track { trace, out } => {
            check_distinct(&[trace], out.as_deref())?;
            let t = read_trace(trace)?;
            let track = reconstruct(&t, &cfg.pipeline).map_err(lib_err(trace.display()))?;
            emit(out.as_deref(), stdout, &to_json(&track))
        }
        Cmd::BuildMap { input, world, out } => {
            let mut ins: Vec<&Path> = vec![&input.traces];
            ins.extend(input.tracks.as_deref());
            ins.extend(world.as_deref());
            check_distinct(&ins, Some(out))?;
            let world = world.as_deref().map(read_world).transpose()?;
            let (traces, tracks) = load_inputs(input, &cfg)?;
            let spec = grid_spec(world.as_ref(), &tracks, &cfg)?;
            let (mut grid, skipped) = build_grid(&spec, &tracks, &traces).map_err(lib_err(input.traces.display()))?;
            if let Some(w) = &world {
                let labels = true_labels(w, &spec);
                grid.labels = Some(grid.blocks.keys().filter_map(|id| labels.get(id).map(|l| (*id, *l))).collect());
            }
            for i in skipped {
                let _ = writeln!(stderr, "skipped {}: track leaves the grid", traces[i].trace_id);
            }
            write_file(out, &(grid.to_json() + "\n"))
        }
        Cmd::Train { grid, out } => {
            check_distinct(&[grid], Some(out))?;
            let g = GridMap::from_json(&read(grid)?).map_err(lib_err(grid.display()))?;
            let labels = g.labels.clone().ok_or_else(|| CliError::Data(format!("{}: grid has no labels to train on", grid.display())))?;
            let examples: Vec<_> = labeled_blocks(&g, &labels).into_iter().map(|(_, e)| e).collect();
            let model = train_bagged(&examples, &cfg.pipeline.train).map_err(lib_err(grid.display()))?;
            write_file(out, &(model.to_json() + "\n"))
        }
        Cmd::Classify { grid, model, out } => {
            check_distinct(&[grid, model], Some(out))?;
            let mut g = GridMap::from_json(&read(grid)?).map_err(lib_err(grid.display()))?;
            let m = Ensemble::from_json(&read(model)?).map_err(lib_err(model.display()))?;
            label_grid(&mut g, &m);
            write_file(out, &(g.to_json() + "\n"))
        }
        Cmd::Fingerprint { input, world, out } => {
            let mut ins: Vec<&Path> = vec![&input.traces];
            ins.extend(input.tracks.as_deref());
            ins.extend(world.as_deref());
            check_distinct(&ins, Some(out))?;
            let world = world.as_deref().map(read_world).transpose()?;
            let (traces, tracks) = load_inputs(input, &cfg)?;
            let spec = grid_spec(world.as_ref(), &tracks, &cfg)?;
            let db = build_db(&spec, &tracks, &traces).map_err(lib_err(input.traces.display()))?;
            write_file(out, &(db.to_json() + "\n"))
        }
        Cmd::Locate { db, scan, out } => {
            check_distinct(&[db, scan], out.as_deref())?;
            let d = FingerprintDB::from_json(&read(db)?).map_err(lib_err(db.display()))?;
            let s: ScanFile = serde_json::from_str(&read(scan)?).map_err(|e| CliError::Data(format!("{}: {e}", scan.display())))?;
            let loc = locate(&d, &s.aps, &cfg.locate).map_err(lib_err(scan.display()))?;
            emit(out.as_deref(), stdout, &to_json(&loc))
        }
        Cmd::Render { grid, tracks, out } => {
            let mut ins: Vec<&Path> = vec![grid];
            ins.extend(tracks.as_deref());
            check_distinct(&ins, Some(out))?;
            let g = GridMap::from_json(&read(grid)?).map_err(lib_err(grid.display()))?;
            let t = tracks.as_deref().map(read_tracks).transpose()?;
            let svg = render_svg(&g, t.as_deref()).map_err(lib_err(grid.display()))?;
            write_file(out, &svg)
        }
        Cmd::Sweep { input, world, sizes, out } => {
            let mut ins: Vec<&Path> = vec![&input.traces, world];
            ins.extend(input.tracks.as_deref());
            check_distinct(&ins, out.as_deref())?;
            let w = read_world(world)?;
            let (traces, tracks) = load_inputs(input, &cfg)?;
            let sizes = if sizes.is_empty() { &cfg.block_sizes } else { sizes };
            let rows = sizes
                .iter()
                .map(|&s| {
                    let e = classify_at(&w, &tracks, &traces, s, &cfg.pipeline).map_err(lib_err(format!("block size {s}")))?;
                    Ok(SweepOut { block_size: s, accuracy: e.evaluation.accuracy, n_train: e.n_train, n_test: e.n_test })
                })
                .collect::<CliResult<Vec<_>>>()?;
            emit(out.as_deref(), stdout, &to_json(&rows))
        }
        Cmd::Report { out, text } => {
            if let (Some(a), Some(b)) = (out, text) {
                if same_path(a, b) {
                    return Err(CliError::Usage("--out and --text must differ".into()));
                }
            }
            let r = run_report(&cfg).map_err(lib_err("report"))?;
            if let Some(t) = text {
                write_file(t, &r.to_text())?;
            }
            emit(out.as_deref(), stdout, &r.to_json())
        }
    }
}
