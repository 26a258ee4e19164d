//! `poroviz` command-line driver.
//!
//! Exit status: 0 on success, 1 for bad input (flags, files, parameters),
//! 2 for internal failures.

use std::collections::BTreeMap;
use std::fs;
use std::io::{IsTerminal, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use poroviz::engine::{self, ApiError, Ensemble, Query};
use poroviz::metrics::Channel;
use poroviz::synth::{generate_ensemble, standard_variants, PhantomLayout};
use poroviz::GridSpec;
use poroviz_server::ServerConfig;
use serde::Deserialize;

#[derive(Parser, Debug)]
#[command(name = "poroviz", version, about = "Ensemble analysis for porous-media CO2 runs")]
struct Cli {
    /// TOML file with defaults for any flag below.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate a manifest and write aligned volumes to a cache directory.
    Ingest {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a phantom ensemble with frames, time series and a manifest.
    Synth {
        #[arg(long, default_value_t = 3)]
        runs: usize,
        #[arg(long, default_value_t = 0)]
        experiments: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// 5 cm cells instead of the 1 cm canonical grid.
        #[arg(long)]
        coarse: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute a distance matrix.
    Distances {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[command(flatten)]
        query: QueryFlags,
        #[arg(long, value_enum)]
        format: Option<MatrixFormat>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Project a distance matrix to 2-D and write the JSON document.
    Project {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[command(flatten)]
        query: QueryFlags,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print when CO2 first reaches a box, per run.
    Events {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long = "box")]
        box_name: String,
        #[arg(long, default_value = "co2_presence")]
        channel: String,
        #[arg(long, default_value_t = 0.001)]
        threshold: f64,
        /// Also write the table as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        bind: Option<String>,
        #[arg(long)]
        cache_size: Option<usize>,
    },
}

/// Mirrors the server's query parameters one to one.
#[derive(Args, Debug, Default)]
struct QueryFlags {
    #[arg(long)]
    metric: Option<String>,
    #[arg(long)]
    variable: Option<String>,
    #[arg(long)]
    segmented: bool,
    #[arg(long)]
    threshold: Option<String>,
    #[arg(long)]
    algo: Option<String>,
    #[arg(long)]
    mode: Option<String>,
    /// Comma-separated run ids.
    #[arg(long)]
    runs: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    bins: Option<String>,
    #[arg(long)]
    range: Option<String>,
    #[arg(long)]
    downsample: Option<String>,
    #[arg(long)]
    perplexity: Option<String>,
    #[arg(long)]
    iterations: Option<String>,
    #[arg(long)]
    restarts: Option<String>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MatrixFormat {
    Pmdm,
    Json,
    Csv,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ConfigFile {
    manifest: Option<PathBuf>,
    query: BTreeMap<String, toml::Value>,
    server: Option<ServerConfig>,
}

enum Failure {
    Input(String),
    Internal(String),
}

impl From<ApiError> for Failure {
    fn from(e: ApiError) -> Self {
        if e.is_input_error() {
            Failure::Input(e.to_string())
        } else {
            Failure::Internal(e.to_string())
        }
    }
}

impl From<poroviz::Error> for Failure {
    fn from(e: poroviz::Error) -> Self {
        // anything read from disk or given on the command line is user input
        Failure::Input(e.to_string())
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn load_config(path: Option<&Path>) -> CliResult<ConfigFile> {
    let Some(path) = path else {
        return Ok(ConfigFile::default());
    };
    let text = fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn toml_scalar(key: &str, v: &toml::Value) -> CliResult<String> {
    match v {
        toml::Value::String(s) => Ok(s.clone()),
        toml::Value::Integer(i) => Ok(i.to_string()),
        toml::Value::Float(f) => Ok(f.to_string()),
        toml::Value::Boolean(b) => Ok(b.to_string()),
        toml::Value::Array(items) => Ok(items
            .iter()
            .map(|i| toml_scalar(key, i))
            .collect::<CliResult<Vec<_>>>()?
            .join(",")),
        _ => Err(Failure::Input(format!("config query.{key} must be a scalar"))),
    }
}

/// Config-file defaults overridden by explicit flags, as query parameters.
fn query_params(config: &ConfigFile, flags: &QueryFlags) -> CliResult<Vec<(String, String)>> {
    let mut map = BTreeMap::new();
    for (k, v) in &config.query {
        map.insert(k.clone(), toml_scalar(k, v)?);
    }
    let explicit = [
        ("metric", &flags.metric),
        ("variable", &flags.variable),
        ("threshold", &flags.threshold),
        ("algo", &flags.algo),
        ("mode", &flags.mode),
        ("runs", &flags.runs),
        ("seed", &flags.seed),
        ("bins", &flags.bins),
        ("range", &flags.range),
        ("downsample", &flags.downsample),
        ("perplexity", &flags.perplexity),
        ("iterations", &flags.iterations),
        ("restarts", &flags.restarts),
    ];
    for (k, v) in explicit {
        if let Some(v) = v {
            map.insert(k.to_string(), v.clone());
        }
    }
    if flags.segmented {
        map.insert("segmented".into(), "true".into());
    }
    Ok(map.into_iter().collect())
}

fn manifest_path(flag: Option<PathBuf>, config: &ConfigFile) -> CliResult<PathBuf> {
    flag.or_else(|| config.manifest.clone())
        .or_else(|| config.server.as_ref().map(|s| s.manifest.clone()))
        .map(|p| engine::locate_manifest(&p))
        .ok_or_else(|| Failure::Input("--manifest is required".into()))
}

fn open(flag: Option<PathBuf>, config: &ConfigFile) -> CliResult<Ensemble> {
    Ok(Ensemble::open(&manifest_path(flag, config)?)?)
}

fn write_out(out: Option<&Path>, bytes: &[u8]) -> CliResult {
    match out {
        Some(path) => {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent).map_err(|e| Failure::Input(format!("{}: {e}", parent.display())))?;
            }
            fs::write(path, bytes).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(bytes)
                .and_then(|_| stdout.write_all(b"\n"))
                .map_err(|e| Failure::Internal(e.to_string()))
        }
    }
}

fn coarse_grid() -> GridSpec {
    GridSpec {
        x_min: 0.025,
        x_max: 2.825,
        y_min: 0.025,
        y_max: 1.225,
        dx: 0.05,
        dy: 0.05,
        ..GridSpec::canonical()
    }
}

fn color_enabled() -> bool {
    std::env::var_os("NO_COLOR").is_none_or(|v| v.is_empty()) && std::io::stdout().is_terminal()
}

fn print_presence_table(rows: &[engine::PresenceRow], box_name: &str) {
    let width = rows.iter().map(|r| r.run.len()).max().unwrap_or(3).max(3);
    let header = format!("{:<width$}  first presence in {box_name} [min]", "run");
    if color_enabled() {
        println!("\x1b[1m{header}\x1b[0m");
    } else {
        println!("{header}");
    }
    for r in rows {
        match r.minutes {
            Some(m) => println!("{:<width$}  {m}", r.run),
            None => println!("{:<width$}  -", r.run),
        }
    }
}

fn run(cli: Cli) -> CliResult {
    let config = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Ingest { manifest, out } => {
            let ensemble = open(manifest, &config)?;
            let written = ensemble.write_aligned(&out)?;
            println!("{} runs aligned, {} files written to {}", ensemble.runs().count(), written.len(), out.display());
        }
        Command::Synth {
            runs,
            experiments,
            seed,
            coarse,
            out,
        } => {
            if runs + experiments == 0 {
                return Err(Failure::Input("nothing to generate".into()));
            }
            let grid = if coarse { coarse_grid() } else { GridSpec::canonical() };
            let variants = standard_variants(runs, experiments, seed);
            let (manifest, _) = generate_ensemble(&variants, &PhantomLayout::default(), &grid, &out)?;
            println!("{} runs written to {}", manifest.runs.len(), out.join("manifest.toml").display());
        }
        Command::Distances {
            manifest,
            query,
            format,
            out,
        } => {
            let ensemble = open(manifest, &config)?;
            let q = Query::from_params(&query_params(&config, &query)?)?;
            let format = format.unwrap_or_else(|| match out.as_ref().and_then(|p| p.extension()).and_then(|e| e.to_str()) {
                Some("json") => MatrixFormat::Json,
                Some("csv") => MatrixFormat::Csv,
                _ => MatrixFormat::Pmdm,
            });
            let bytes = match format {
                MatrixFormat::Pmdm => ensemble.distances_pmdm(&q)?,
                MatrixFormat::Json => ensemble.distances_json(&q)?.into_bytes(),
                MatrixFormat::Csv => ensemble.distances_csv(&q)?.into_bytes(),
            };
            if out.is_none() && matches!(format, MatrixFormat::Pmdm) {
                return Err(Failure::Input("binary output needs --out or --format json|csv".into()));
            }
            write_out(out.as_deref(), &bytes)?;
        }
        Command::Project { manifest, query, out } => {
            let ensemble = open(manifest, &config)?;
            let q = Query::from_params(&query_params(&config, &query)?)?;
            write_out(out.as_deref(), ensemble.projection_json(&q)?.as_bytes())?;
        }
        Command::Events {
            manifest,
            box_name,
            channel,
            threshold,
            out,
        } => {
            let channel =
                Channel::parse(&channel).ok_or_else(|| Failure::Input(format!("unknown channel {channel:?}")))?;
            let ensemble = open(manifest, &config)?;
            let rows = ensemble.first_presence_table(&box_name, channel, threshold)?;
            print_presence_table(&rows, &box_name);
            if let Some(out) = out {
                let json = serde_json::to_string(&rows).map_err(|e| Failure::Internal(e.to_string()))?;
                write_out(Some(&out), json.as_bytes())?;
            }
        }
        Command::Serve {
            manifest,
            bind,
            cache_size,
        } => {
            let mut server = config.server.clone().unwrap_or_default();
            server.manifest = manifest_path(manifest, &config)?;
            if let Some(b) = bind {
                server.bind = b;
            }
            if let Some(c) = cache_size {
                server.cache_size = c;
            }
            server.validate()?;
            let runtime = tokio::runtime::Runtime::new().map_err(|e| Failure::Internal(e.to_string()))?;
            runtime
                .block_on(poroviz_server::serve(server))
                .map_err(|e| Failure::Input(e.to_string()))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(Failure::Input(msg))) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Ok(Err(Failure::Internal(msg))) => {
            eprintln!("internal error: {msg}");
            ExitCode::from(2)
        }
        Err(_) => ExitCode::from(2),
    }
}
