use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ccarena::harness::{
    desk_scale, gnuplot_table, run_checked, run_matrix, write_csv, MatrixConfig,
    MatrixError, RunMetrics,
};
use ccarena::oracle::{
    brute_force_serializable, check_commitment_ordering_on, is_acyclic, Acyclicity,
    SerializationGraph, BRUTE_FORCE_LIMIT,
};
use ccarena::{ConfigError, History, ProtocolKind, SimConfig};

const EXIT_CONFIG: u8 = 1;
const EXIT_ORACLE: u8 = 2;

#[derive(Parser)]
#[command(name = "ccarena", version, about = "Mobile transaction concurrency-control simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one configuration and print its metrics row.
    Run {
        #[arg(long)]
        protocol: Option<ProtocolKind>,
        #[arg(long)]
        clients: Option<usize>,
        #[arg(long)]
        items: Option<usize>,
        #[arg(long)]
        txns: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// `key = value` file applied before the flags.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        retries: Option<u32>,
        /// CSV destination; stdout if absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        gnuplot: Option<PathBuf>,
        /// Where a history that fails the oracle is written.
        #[arg(long, default_value = ".")]
        dump_dir: PathBuf,
    },
    /// Run every cell of a matrix file and write one CSV row per run.
    Matrix {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        gnuplot: Option<PathBuf>,
        #[arg(long, default_value = ".")]
        dump_dir: PathBuf,
    },
    /// Run the oracles on a dumped history.
    Check {
        #[arg(long)]
        history: PathBuf,
        /// Also fail when commitment ordering does not hold.
        #[arg(long)]
        co: bool,
    },
}

enum Failure {
    Config(String),
    Oracle(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<MatrixError> for Failure {
    fn from(e: MatrixError) -> Self {
        match e {
            MatrixError::Config(e) => e.into(),
            oracle @ MatrixError::Oracle(_) => Failure::Oracle(oracle.to_string()),
        }
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn emit(rows: &[RunMetrics], out: Option<&Path>, gnuplot: Option<&Path>) -> Result<(), Failure> {
    let result = match out {
        Some(path) => {
            let file = fs::File::create(path)
                .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
            write_csv(rows, file)
        }
        None => write_csv(rows, io::stdout().lock()),
    };
    result.map_err(|e| Failure::Config(format!("writing csv: {e}")))?;
    if let Some(path) = gnuplot {
        write_file(path, &gnuplot_table(rows))?;
    }
    Ok(())
}

fn dump_violation(e: MatrixError, dir: &Path) -> MatrixError {
    match e {
        MatrixError::Oracle(mut v) => {
            if let Err(io) = v.dump(dir) {
                eprintln!("could not write history to {}: {io}", dir.display());
            }
            MatrixError::Oracle(v)
        }
        other => other,
    }
}

fn check(path: &Path, require_co: bool) -> Result<(), Failure> {
    let history = History::parse_text(&read(path)?)
        .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    history
        .validate()
        .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    let g = SerializationGraph::build(&history);
    println!(
        "{} committed, {} conflict edges ({} ties)",
        g.nodes().len(),
        g.edge_count(),
        g.ties()
    );
    let mut failed = None;
    match is_acyclic(&g) {
        Acyclicity::Acyclic => println!("serialization graph: acyclic"),
        Acyclicity::Cyclic(cycle) => {
            let names: Vec<String> = cycle.iter().map(ToString::to_string).collect();
            println!("serialization graph: cycle {}", names.join(" -> "));
            failed = Some("not conflict serializable".to_string());
        }
    }
    match check_commitment_ordering_on(&g) {
        Ok(()) => println!("commitment ordering: ok"),
        Err(v) => {
            println!("commitment ordering: {v}");
            if require_co && failed.is_none() {
                failed = Some("commitment ordering violated".to_string());
            }
        }
    }
    if g.nodes().len() <= BRUTE_FORCE_LIMIT {
        let ok = brute_force_serializable(&history).expect("size checked");
        println!("exhaustive search: {}", if ok { "serializable" } else { "not serializable" });
    }
    match failed {
        Some(reason) => Err(Failure::Oracle(reason)),
        None => Ok(()),
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run {
            protocol,
            clients,
            items,
            txns,
            seed,
            config,
            retries,
            out,
            gnuplot,
            dump_dir,
        } => {
            let mut cfg: SimConfig = desk_scale();
            if let Some(path) = &config {
                cfg.apply_kv_text(&read(path)?)?;
            }
            cfg.protocol = protocol.unwrap_or(cfg.protocol);
            cfg.n_clients = clients.unwrap_or(cfg.n_clients);
            cfg.n_items = items.unwrap_or(cfg.n_items);
            cfg.n_txns = txns.unwrap_or(cfg.n_txns);
            cfg.seed = seed.unwrap_or(cfg.seed);
            cfg.retries = retries.unwrap_or(cfg.retries);
            cfg.validate()?;
            let row = run_checked(&cfg).map_err(|e| dump_violation(e, &dump_dir))?;
            emit(&[row], out.as_deref(), gnuplot.as_deref())
        }
        Command::Matrix {
            config,
            out,
            gnuplot,
            dump_dir,
        } => {
            let m = MatrixConfig::from_kv_text(&read(&config)?)?;
            let rows = run_matrix(&m, Some(&dump_dir))?;
            emit(&rows, Some(&out), gnuplot.as_deref())
        }
        Command::Check { history, co } => check(&history, co),
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
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Oracle(msg)) => {
            eprintln!("oracle violation: {msg}");
            ExitCode::from(EXIT_ORACLE)
        }
    }
}
