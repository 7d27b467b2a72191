use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use graphtune_core::graph::io::{load_content_cites, load_json, load_tu_dataset, save_json, write_content_cites};
use graphtune_core::graph::{Dataset, GraphError};
use graphtune_core::selfcheck;
use graphtune_core::solver::{read_report, save_models, solve, write_report, SolverConfig, SolverError};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "graphtune", version, about = "Automated model search for node and graph classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline and write results.json plus model parameters.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Dataset file, directory or `.content`/`.cites` path prefix.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
        /// Dataset name inside a graph-benchmark directory; defaults to the directory name.
        #[arg(long)]
        name: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the leaderboard stored in an output directory.
    Report { dir: PathBuf },
    /// Convert a node dataset between on-disk formats.
    Convert {
        #[arg(long, value_enum)]
        from: Format,
        #[arg(long, value_enum)]
        to: Format,
        #[arg(long)]
        input: PathBuf,
        /// Output file, or path prefix when writing content/cites.
        #[arg(long)]
        output: PathBuf,
    },
    /// Run gradient checks, feature oracles and pipeline invariants.
    Selfcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    ContentCites,
    Tu,
}

struct Failure {
    code: u8,
    msg: String,
}

impl Failure {
    fn new(code: u8, msg: impl Into<String>) -> Self {
        Self { code, msg: msg.into() }
    }
}

fn graph_failure(e: GraphError) -> Failure {
    Failure::new(EXIT_DATA, e.to_string())
}

fn solver_failure(e: SolverError) -> Failure {
    let code = match e {
        SolverError::Config(_) => EXIT_USAGE,
        SolverError::Data(_) | SolverError::Graph(_) | SolverError::Schema { .. } | SolverError::Io { .. } => EXIT_DATA,
        _ => EXIT_RUNTIME,
    };
    Failure::new(code, e.to_string())
}

/// `prefix.content` / `prefix.cites`. A directory must hold exactly one
/// `.content` file; a path ending in either extension is stripped.
fn content_cites_paths(data: &Path) -> Result<(PathBuf, PathBuf), Failure> {
    let prefix = if data.is_dir() {
        let found: Vec<PathBuf> = std::fs::read_dir(data)
            .map_err(|e| Failure::new(EXIT_DATA, format!("{}: {e}", data.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "content"))
            .collect();
        match found.as_slice() {
            [one] => one.with_extension(""),
            _ => return Err(Failure::new(EXIT_DATA, format!("{}: expected exactly one .content file, found {}", data.display(), found.len()))),
        }
    } else if data.extension().is_some_and(|x| x == "content" || x == "cites") {
        data.with_extension("")
    } else {
        data.to_path_buf()
    };
    Ok((prefix.with_extension("content"), prefix.with_extension("cites")))
}

fn load(data: &Path, format: Format, name: Option<&str>) -> Result<Dataset, Failure> {
    match format {
        Format::Json => Ok(Dataset::Node(load_json(data).map_err(graph_failure)?)),
        Format::ContentCites => {
            let (content, cites) = content_cites_paths(data)?;
            let mut ds = load_content_cites(&content, &cites).map_err(graph_failure)?;
            if ds.name.is_empty() {
                ds.name = content.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            }
            Ok(Dataset::Node(ds))
        }
        Format::Tu => {
            let name = match name {
                Some(n) => n.to_string(),
                None => data
                    .file_name()
                    .map(|s| s.to_string_lossy().into_owned())
                    .ok_or_else(|| Failure::new(EXIT_USAGE, "cannot infer dataset name, pass --name"))?,
            };
            Ok(Dataset::Graph(load_tu_dataset(data, &name).map_err(graph_failure)?))
        }
    }
}

fn run(config: &Path, data: &Path, format: Format, name: Option<&str>, out: &Path) -> Result<(), Failure> {
    let text = std::fs::read_to_string(config).map_err(|e| Failure::new(EXIT_DATA, format!("{}: {e}", config.display())))?;
    let mut cfg = SolverConfig::from_json(&text).map_err(solver_failure)?;
    if let Ok(s) = std::env::var("GRAPHTUNE_SEED") {
        cfg.seed = s.trim().parse().map_err(|_| Failure::new(EXIT_USAGE, format!("GRAPHTUNE_SEED must be an unsigned integer, got `{s}`")))?;
    }
    let ds = load(data, format, name)?;
    log::info!("loaded {} ({} items, digest {})", ds.name(), ds.size(), ds.digest());
    let output = solve(&ds, &cfg).map_err(solver_failure)?;
    write_report(&output.report, out).map_err(solver_failure)?;
    let saved = save_models(&output.models, out).map_err(solver_failure)?;
    print!("{}", output.report.render());
    println!("wrote {} and {} parameter files to {}", graphtune_core::solver::RESULTS_FILE, saved.len(), out.display());
    Ok(())
}

fn convert(from: Format, to: Format, input: &Path, output: &Path) -> Result<(), Failure> {
    let ds = match load(input, from, None)? {
        Dataset::Node(d) => d,
        Dataset::Graph(_) => return Err(Failure::new(EXIT_USAGE, "only node datasets can be converted")),
    };
    match to {
        Format::Json => save_json(&ds, output).map_err(graph_failure),
        Format::ContentCites => {
            let (content, cites) = content_cites_paths(output)?;
            write_content_cites(&ds, &content, &cites).map_err(graph_failure)
        }
        Format::Tu => Err(Failure::new(EXIT_USAGE, "conversion to the graph-benchmark layout is not supported")),
    }
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run { config, data, format, name, out } => run(&config, &data, format, name.as_deref(), &out),
        Command::Report { dir } => {
            let report = read_report(&dir).map_err(solver_failure)?;
            print!("{}", report.render());
            Ok(())
        }
        Command::Convert { from, to, input, output } => convert(from, to, &input, &output),
        Command::Selfcheck { seed } => {
            let results = selfcheck::run_all(seed);
            for r in &results {
                println!("{}", r.line());
            }
            let failed = results.iter().filter(|r| !r.passed).count();
            println!("{} checks, {failed} failed", results.len());
            if failed == 0 {
                Ok(())
            } else {
                Err(Failure::new(EXIT_RUNTIME, format!("{failed} selfcheck(s) failed")))
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
