use std::fmt;
use std::io;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::error::ConfigError;
use crate::harness::metrics::RunMetrics;
use crate::harness::desk_scale;
use crate::model::History;
use crate::oracle::{check_commitment_ordering_on, is_acyclic, Acyclicity, CoViolation, SerializationGraph};
use crate::sim::{parse_kv_lines, run_simulation, ProtocolKind, SimConfig};

/// Protocols x item counts x transaction counts x seeds, over a base config.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixConfig {
    pub protocols: Vec<ProtocolKind>,
    pub items: Vec<usize>,
    pub txns: Vec<usize>,
    pub seeds: Vec<u64>,
    pub base: SimConfig,
}

impl Default for MatrixConfig {
    fn default() -> Self {
        MatrixConfig {
            protocols: ProtocolKind::ALL.to_vec(),
            items: vec![100, 1000],
            txns: vec![200, 500, 1000, 2000],
            seeds: (1..=20).collect(),
            base: desk_scale(),
        }
    }
}

fn parse_list<T>(key: &str, value: &str, item: impl Fn(&str) -> Result<T, ConfigError>) -> Result<Vec<T>, ConfigError> {
    let out: Vec<T> = value
        .split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(item)
        .collect::<Result<_, _>>()?;
    if out.is_empty() {
        return Err(ConfigError::invalid(key, "empty list"));
    }
    Ok(out)
}

fn parse_count(key: &str, v: &str) -> Result<usize, ConfigError> {
    v.parse()
        .map_err(|_| ConfigError::invalid(key, format!("`{v}` is not a count")))
}

/// `a..b` (inclusive) or a comma list.
fn parse_seeds(value: &str) -> Result<Vec<u64>, ConfigError> {
    let num = |v: &str| {
        v.trim()
            .parse::<u64>()
            .map_err(|_| ConfigError::invalid("seeds", format!("`{v}` is not a seed")))
    };
    if let Some((lo, hi)) = value.split_once("..") {
        let (lo, hi) = (num(lo)?, num(hi)?);
        if lo > hi {
            return Err(ConfigError::invalid("seeds", "empty range"));
        }
        return Ok((lo..=hi).collect());
    }
    parse_list("seeds", value, num)
}

impl MatrixConfig {
    /// Reads `protocols`, `items`, `txns` and `seeds` lists; every other key
    /// is a [`SimConfig`] field applied to the base.
    pub fn from_kv_text(text: &str) -> Result<Self, ConfigError> {
        let mut m = MatrixConfig::default();
        for (line, key, value) in parse_kv_lines(text)? {
            match key.as_str() {
                "protocols" => m.protocols = parse_list("protocols", &value, str::parse)?,
                "items" => m.items = parse_list("items", &value, |v| parse_count("items", v))?,
                "txns" => m.txns = parse_list("txns", &value, |v| parse_count("txns", v))?,
                "seeds" => m.seeds = parse_seeds(&value)?,
                "protocol" | "n_items" | "n_txns" | "seed" => {
                    return Err(ConfigError::Syntax {
                        line,
                        reason: format!("`{key}` is swept; use the list key instead"),
                    })
                }
                _ => m.base.set(&key, &value).map_err(|e| match e {
                    ConfigError::UnknownKey(k) => ConfigError::Syntax {
                        line,
                        reason: format!("unknown key `{k}`"),
                    },
                    other => other,
                })?,
            }
        }
        for cfg in m.cells() {
            cfg.validate()?;
        }
        Ok(m)
    }

    /// Every run of the matrix, in output order.
    pub fn cells(&self) -> Vec<SimConfig> {
        let mut cells = Vec::new();
        for &protocol in &self.protocols {
            for &n_items in &self.items {
                for &n_txns in &self.txns {
                    for &seed in &self.seeds {
                        cells.push(SimConfig {
                            protocol,
                            n_items,
                            n_txns,
                            seed,
                            ..self.base.clone()
                        });
                    }
                }
            }
        }
        cells
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ViolationKind {
    Cycle(Vec<crate::model::TxnId>),
    CommitmentOrder(CoViolation),
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ViolationKind::Cycle(c) => {
                write!(f, "serialization graph has a cycle:")?;
                for t in c {
                    write!(f, " {t}")?;
                }
                Ok(())
            }
            ViolationKind::CommitmentOrder(v) => write!(f, "commitment ordering violated: {v}"),
        }
    }
}

/// A run whose history failed an oracle.
#[derive(Debug, Clone)]
pub struct Violation {
    pub config: SimConfig,
    pub kind: ViolationKind,
    pub history: History,
    /// Where the history was written, if it was.
    pub dumped_to: Option<PathBuf>,
}

impl Violation {
    pub fn fixture_name(&self) -> String {
        format!(
            "violation-{}-items{}-txns{}-seed{}.history",
            self.config.protocol, self.config.n_items, self.config.n_txns, self.config.seed
        )
    }

    /// Writes the history, prefixed by the config as comments, into `dir`.
    pub fn dump(&mut self, dir: &Path) -> io::Result<PathBuf> {
        let path = dir.join(self.fixture_name());
        let mut text = String::new();
        for line in self.config.to_kv_text().lines() {
            text.push_str("# ");
            text.push_str(line);
            text.push('\n');
        }
        text.push_str(&format!("# {}\n", self.kind));
        text.push_str(&self.history.to_text());
        std::fs::write(&path, text)?;
        self.dumped_to = Some(path.clone());
        Ok(path)
    }
}

#[derive(Debug, Error)]
pub enum MatrixError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{} seed {}: {}{}", .0.config.protocol, .0.config.seed, .0.kind,
            .0.dumped_to.as_ref().map(|p| format!(" (history in {})", p.display())).unwrap_or_default())]
    Oracle(Box<Violation>),
}

/// Acyclicity for every protocol; commitment ordering as well for OPCOT.
pub fn check_history(protocol: ProtocolKind, history: &History) -> Result<(), ViolationKind> {
    let g = SerializationGraph::build_reduced(history);
    if let Acyclicity::Cyclic(c) = is_acyclic(&g) {
        return Err(ViolationKind::Cycle(c));
    }
    if protocol == ProtocolKind::Opcot {
        check_commitment_ordering_on(&g).map_err(ViolationKind::CommitmentOrder)?;
    }
    Ok(())
}

/// Simulates one config and passes its history through the oracles.
pub fn run_checked(cfg: &SimConfig) -> Result<RunMetrics, MatrixError> {
    let out = run_simulation(cfg)?;
    if let Err(kind) = check_history(cfg.protocol, &out.history) {
        return Err(MatrixError::Oracle(Box::new(Violation {
            config: cfg.clone(),
            kind,
            history: out.history,
            dumped_to: None,
        })));
    }
    Ok(RunMetrics::from_outcome(cfg, &out))
}

/// Runs every cell in parallel and returns rows sorted by
/// `(protocol, n_items, n_txns, seed)`. The first oracle violation (in that
/// order) fails the whole matrix; its history goes to `dump_dir` if given.
pub fn run_matrix(m: &MatrixConfig, dump_dir: Option<&Path>) -> Result<Vec<RunMetrics>, MatrixError> {
    let cells = m.cells();
    let results: Vec<Result<RunMetrics, MatrixError>> = cells.par_iter().map(run_checked).collect();
    let mut rows = Vec::with_capacity(results.len());
    for r in results {
        match r {
            Ok(row) => rows.push(row),
            Err(MatrixError::Oracle(mut v)) => {
                if let Some(dir) = dump_dir {
                    // the violation is reported either way
                    let _ = v.dump(dir);
                }
                return Err(MatrixError::Oracle(v));
            }
            Err(e) => return Err(e),
        }
    }
    sort_rows(&mut rows);
    Ok(rows)
}

pub fn sort_rows(rows: &mut [RunMetrics]) {
    rows.sort_by(|a, b| {
        (a.protocol, a.n_items, a.n_txns, a.seed).cmp(&(b.protocol, b.n_items, b.n_txns, b.seed))
    });
}

pub fn write_csv<W: io::Write>(rows: &[RunMetrics], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    if rows.is_empty() {
        w.write_record(crate::harness::metrics::CSV_HEADER.split(','))?;
    }
    w.flush()?;
    Ok(())
}

pub fn csv_string(rows: &[RunMetrics]) -> String {
    let mut buf = Vec::new();
    write_csv(rows, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("csv is utf-8")
}

/// Seed-averaged table for plotting: one block per `(protocol, n_items)`,
/// separated by two blank lines so each is a gnuplot `index`.
pub fn gnuplot_table(rows: &[RunMetrics]) -> String {
    let mut sorted = rows.to_vec();
    sort_rows(&mut sorted);
    let mut out = String::new();
    let blocks = sorted.chunk_by(|a, b| (a.protocol, a.n_items) == (b.protocol, b.n_items));
    for (i, block) in blocks.enumerate() {
        if i > 0 {
            out.push_str("\n\n");
        }
        out.push_str(&format!(
            "# protocol={} n_items={}\n# n_txns mean_aborted mean_abort_rate mean_wait_ms mean_p95_wait_ms mean_messages_per_txn\n",
            block[0].protocol, block[0].n_items
        ));
        for cell in block.chunk_by(|a, b| a.n_txns == b.n_txns) {
            let n = cell.len() as f64;
            let avg = |f: fn(&RunMetrics) -> f64| cell.iter().map(f).sum::<f64>() / n;
            out.push_str(&format!(
                "{} {} {} {} {} {}\n",
                cell[0].n_txns,
                avg(|r| r.aborted as f64),
                avg(|r| r.abort_rate),
                avg(|r| r.mean_wait_ms),
                avg(|r| r.p95_wait_ms),
                avg(|r| r.mean_messages_per_txn),
            ));
        }
    }
    out
}
