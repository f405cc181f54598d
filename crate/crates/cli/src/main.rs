use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dske::secret_sharing::SchemeKind;
use dske_cli::bench::{self, BenchConfig, Corruption, Received};
use dske_cli::{agree, attack, provision, CliError};
use dske_simnet::{RunParams, Verdict};

#[derive(Parser)]
#[command(name = "dske", version, about = "Distributed symmetric key establishment toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write one PSKM file per hub and client.
    Provision {
        #[arg(long)]
        hubs: usize,
        /// Comma-separated client ids.
        #[arg(long, value_delimiter = ',', default_value = "alice,bob")]
        clients: Vec<String>,
        /// Table size N in bytes.
        #[arg(long, default_value_t = 1 << 20)]
        table_bytes: u64,
        /// Deterministic tables for testing; OS entropy otherwise.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Run one key agreement between two clients over the simulated network.
    ///
    /// With --adapted, the second pass XORs the shares of every hub whose
    /// tag checks out and needs at least k of them, so with k = n any lost
    /// or damaged share aborts it.
    Agree(AgreeArgs),
    /// Run attack scenario files (or every .scn file in a directory).
    Attack {
        #[arg(long, required = true, num_args = 1..)]
        scenario: Vec<PathBuf>,
        /// Print full run logs, not just verdicts.
        #[arg(long)]
        log: bool,
    },
    /// Time share generation and reconstruction across parameters.
    Bench(BenchArgs),
}

#[derive(Args)]
struct AgreeArgs {
    /// Number of hubs; same as --n.
    #[arg(long, conflicts_with = "n")]
    hubs: Option<u16>,
    #[arg(long)]
    n: Option<u16>,
    #[arg(long, default_value_t = 2)]
    k: u16,
    /// Smallest threshold the responder accepts; defaults to k.
    #[arg(long)]
    kb: Option<u16>,
    #[arg(long, default_value_t = 1 << 20)]
    m_bytes: usize,
    #[arg(long, default_value = "shamir", value_parser = parse_scheme)]
    scheme: SchemeKind,
    #[arg(long)]
    adapted: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 1)]
    n_min: usize,
    #[arg(long, default_value_t = 20)]
    n_max: usize,
    #[arg(long, default_value_t = 1)]
    k_min: usize,
    #[arg(long, default_value_t = 20)]
    k_max: usize,
    #[arg(long, default_value_t = 1 << 20)]
    m_bytes: usize,
    /// Received-share counts: all (k..=n), full (n) or k.
    #[arg(long, default_value = "all")]
    received: Received,
    /// Corruption levels among received shares: none, one, many (s - k).
    #[arg(long, value_delimiter = ',', default_value = "none")]
    corrupt: Vec<Corruption>,
    /// Skip corrupted cases needing more than this many k-subsets.
    #[arg(long, default_value_t = 200)]
    max_subsets: u64,
    #[arg(long, default_value_t = 1)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV path; a gnuplot script is written next to it. Stdout otherwise.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_scheme(s: &str) -> Result<SchemeKind, String> {
    s.parse()
}

fn run(cli: Cli) -> Result<bool, CliError> {
    match cli.command {
        Command::Provision { hubs, clients, table_bytes, seed, out } => {
            let files = provision(&out, hubs, &clients, table_bytes, seed)?;
            for f in &files {
                println!("{}", f.display());
            }
            Ok(true)
        }
        Command::Agree(a) => {
            let n = a.hubs.or(a.n).unwrap_or(3);
            let params = RunParams {
                n,
                k: a.k,
                k_b: a.kb.unwrap_or(a.k),
                m: a.m_bytes,
                scheme: a.scheme,
                adapted: a.adapted,
                seed: a.seed,
                identity: false,
            };
            let outcome = agree(&params)?;
            print!("{}", outcome.report);
            Ok(outcome.verdict == Verdict::Agreed)
        }
        Command::Attack { scenario, log } => {
            let outcome = attack(&scenario, log)?;
            print!("{}", outcome.report);
            Ok(outcome.failed == 0)
        }
        Command::Bench(b) => {
            let cfg = BenchConfig {
                n_min: b.n_min,
                n_max: b.n_max,
                k_min: b.k_min,
                k_max: b.k_max,
                m_bytes: b.m_bytes,
                received: b.received,
                corruption: b.corrupt,
                max_subsets: b.max_subsets,
                reps: b.reps,
                seed: b.seed,
            };
            if cfg.m_bytes == 0 {
                return Err(CliError::Usage("m-bytes must be positive".into()));
            }
            let rows = bench::run(&cfg);
            let csv = bench::to_csv(&rows);
            match b.out {
                Some(path) => {
                    let io = |source| CliError::Io { path: path.clone(), source };
                    fs::write(&path, &csv).map_err(io)?;
                    let gp = path.with_extension("gp");
                    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
                    fs::write(&gp, bench::gnuplot_script(&name)).map_err(|source| CliError::Io { path: gp.clone(), source })?;
                    eprintln!("{} rows written to {}", rows.len(), path.display());
                }
                None => print!("{csv}"),
            }
            Ok(rows.iter().all(|r| r.agreed || r.combo.corrupted > r.combo.s - r.combo.k))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("dske: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
