//! `isdim` - importance-sampling cost diagnostics for linear-Gaussian
//! inverse problems and one-step particle filtering.
//!
//! Usage: `isdim <command> <config-file> [--set section.key=value]...
//! [--threads N]`. The config file is the sole positional argument;
//! repeated `--set` flags override its values (flags win). Results go to
//! the path named by `run.output` ("-" for standard output) as CSV or JSON,
//! with one summary line per row on standard error.
//!
//! Exit codes: 0 success, 2 config errors (with a line/field diagnostic),
//! 3 runtime numeric failures, 1 I/O problems. Divergence verdicts are not
//! errors; they are rows labeled "inf" in the verdict column.

mod commands;
mod config;
mod emit;

use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use commands::{run_command, CliError, Command};
use config::RawConfig;
use emit::{render, write_output, Preamble};

const VERSION: &str = env!("CARGO_PKG_VERSION");

const USAGE: &str = "\
usage: isdim <command> <config-file> [options]

commands:
  diagnose          intrinsic dimensions and log rho of one model
  sweep-cascade     scaling table of the spectral-cascade family
  verify-bounds     empirical check of the bias and MSE bounds
  filter-compare    standard vs optimal proposal on one data set
  sweep-filter      small-noise / large-d scalings of both proposals
  deconvolve-demo   periodic deconvolution as a cascade (beta = 2t + 2s)
  singular-limit    rho growth along g_eps = exp(-h/eps)
  product-collapse  rho_d = rho_1^d across dimensions

options:
  --set section.key=value   override a config value (repeatable; flags win)
  --threads N               worker threads (default: logical cores;
                            env ISDIM_THREADS is the fallback)
  --help                    this text
  --version                 print the version

The config file has INI-style [model], [grid] and [run] sections; see the
README for the full grammar and per-command keys. run.seed is required.
";

struct Args {
    command: Command,
    config_path: String,
    sets: Vec<String>,
    threads: Option<usize>,
}

fn parse_args(argv: &[String]) -> Result<Option<Args>, CliError> {
    if argv.is_empty()
        || argv
            .iter()
            .any(|a| a == "--help" || a == "-h" || a == "help")
    {
        println!("{USAGE}");
        return Ok(None);
    }
    if argv.iter().any(|a| a == "--version") {
        println!("isdim {VERSION}");
        return Ok(None);
    }
    let command = Command::from_name(&argv[0]).ok_or_else(|| {
        CliError::Config(format!(
            "unknown command {:?}; expected one of: {}",
            argv[0],
            Command::ALL.join(", ")
        ))
    })?;
    let mut config_path = None;
    let mut sets = Vec::new();
    let mut threads = None;
    let mut i = 1;
    while i < argv.len() {
        match argv[i].as_str() {
            "--set" => {
                i += 1;
                let v = argv.get(i).ok_or_else(|| {
                    CliError::Config("--set needs an argument: section.key=value".into())
                })?;
                let path = v.split_once('=').map(|(p, _)| p);
                if !path.is_some_and(|p| p.contains('.')) {
                    return Err(CliError::Config(format!(
                        "--set {v:?}: expected section.key=value"
                    )));
                }
                sets.push(v.clone());
            }
            "--threads" => {
                i += 1;
                let v = argv
                    .get(i)
                    .ok_or_else(|| CliError::Config("--threads needs a positive integer".into()))?;
                threads = Some(parse_threads(v)?);
            }
            flag if flag.starts_with("--") => {
                return Err(CliError::Config(format!("unknown flag {flag:?}")));
            }
            path => {
                if config_path.replace(path.to_string()).is_some() {
                    return Err(CliError::Config(
                        "exactly one config file path is expected".into(),
                    ));
                }
            }
        }
        i += 1;
    }
    let config_path =
        config_path.ok_or_else(|| CliError::Config("missing config file path".into()))?;
    Ok(Some(Args {
        command,
        config_path,
        sets,
        threads,
    }))
}

fn parse_threads(text: &str) -> Result<usize, CliError> {
    match text.parse::<usize>() {
        Ok(n) if n >= 1 => Ok(n),
        _ => Err(CliError::Config(format!(
            "thread count must be a positive integer, got {text:?}"
        ))),
    }
}

fn resolve_threads(flag: Option<usize>) -> Result<Option<usize>, CliError> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var("ISDIM_THREADS") {
        Ok(v) => Ok(Some(parse_threads(&v)?)),
        Err(_) => Ok(None),
    }
}

fn run(argv: &[String]) -> Result<(), CliError> {
    let Some(args) = parse_args(argv)? else {
        return Ok(());
    };
    if let Some(n) = resolve_threads(args.threads)? {
        // Thread count never changes results: all parallel reductions are
        // order-independent over deterministic per-index seeds.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }

    let text = std::fs::read_to_string(&args.config_path)
        .map_err(|e| CliError::Io(format!("cannot read config {:?}: {e}", args.config_path)))?;
    let mut raw = RawConfig::parse(&text).map_err(CliError::from)?;
    for set in &args.sets {
        raw.apply_set(set).map_err(CliError::from)?;
    }
    let fields = config::Fields::new(raw).map_err(CliError::from)?;

    let (table, norm, run_params) = run_command(args.command, fields)?;

    let preamble = Preamble {
        version: VERSION,
        command: args.command.name().to_string(),
        config: norm,
        timestamp: run_params.timestamp.then(unix_timestamp),
    };
    let content = render(&preamble, &table, run_params.format);
    write_output(&run_params.output, &content)
        .map_err(|e| CliError::Io(format!("cannot write {:?}: {e}", run_params.output)))?;

    for i in 0..table.rows.len() {
        eprintln!(
            "{} row {}/{}: {}",
            args.command.name(),
            i + 1,
            table.rows.len(),
            table.summary_line(i)
        );
    }
    Ok(())
}

fn unix_timestamp() -> String {
    let secs = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    format!("{secs} (unix seconds)")
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    match run(&argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("runtime error: {msg}");
            ExitCode::from(3)
        }
        Err(CliError::Io(msg)) => {
            eprintln!("io error: {msg}");
            ExitCode::from(1)
        }
    }
}
