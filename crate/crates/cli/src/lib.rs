//! Operator commands behind the `dske` binary: PSKM provisioning, simulated
//! key agreements, attack scenarios and the share-processing benchmark.

pub mod bench;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use dske::ids::PartyId;
use dske::psk_table::{PskError, PskTable};
use dske_simnet::report::digest;
use dske_simnet::{evaluate, AdversaryScript, Node, RunParams, Scenario, ScriptError, Simulation, Verdict};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Script { path: PathBuf, source: ScriptError },
    #[error(transparent)]
    Psk(#[from] PskError),
}

impl CliError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Script { .. } => 2,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

/// File name of the PSKM shared by hub `hub` (1-based) and `client`.
pub fn pskm_name(hub: usize, client: &str) -> String {
    format!("H{hub}-{client}.pskm")
}

/// Writes one PSKM per hub and client into `dir`. Without a seed the tables
/// come from OS entropy.
pub fn provision(dir: &Path, hubs: usize, clients: &[String], table_bytes: u64, seed: Option<u64>) -> Result<Vec<PathBuf>, CliError> {
    if hubs == 0 || hubs > 255 {
        return Err(CliError::Usage(format!("hub count must be in 1..=255, got {hubs}")));
    }
    if clients.is_empty() {
        return Err(CliError::Usage("at least one client id is required".into()));
    }
    if table_bytes == 0 {
        return Err(CliError::Usage("table size must be positive".into()));
    }
    for c in clients {
        if c.is_empty() || c.len() > 16 || c.contains(['/', '\\']) {
            return Err(CliError::Usage(format!("client id {c:?} must be 1 to 16 bytes without path separators")));
        }
    }
    let mut rng = match seed {
        Some(s) => ChaCha20Rng::seed_from_u64(s),
        None => ChaCha20Rng::from_entropy(),
    };
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = Vec::new();
    for h in 1..=hubs {
        for (c, client) in clients.iter().enumerate() {
            let mut data = vec![0u8; table_bytes as usize];
            rng.fill_bytes(&mut data);
            let table_id = ((h as u64) << 16) | c as u64;
            let table = PskTable::new(PartyId::from_label(&format!("H{h}")), PartyId::from_label(client), table_id, data);
            let path = dir.join(pskm_name(h, client));
            let file = fs::File::create(&path).map_err(io_err(&path))?;
            table.write_pskm(std::io::BufWriter::new(file))?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Checks a parameter set before running it.
pub fn check_params(p: &RunParams) -> Result<(), CliError> {
    if p.n == 0 || p.n > 255 {
        return Err(CliError::Usage(format!("n must be in 1..=255, got {}", p.n)));
    }
    if p.k == 0 || p.k > p.n {
        return Err(CliError::Usage(format!("k must be in 1..=n, got k={} n={}", p.k, p.n)));
    }
    if p.k_b == 0 {
        return Err(CliError::Usage("kb must be at least 1".into()));
    }
    if p.scheme == dske::secret_sharing::SchemeKind::Xor && p.k != p.n {
        return Err(CliError::Usage(format!("xor sharing needs k = n, got k={} n={}", p.k, p.n)));
    }
    if p.m == 0 {
        return Err(CliError::Usage("m-bytes must be positive".into()));
    }
    Ok(())
}

#[derive(Debug)]
pub struct AgreeOutcome {
    pub verdict: Verdict,
    pub report: String,
}

/// Runs one honest key agreement over the simulated network.
pub fn agree(params: &RunParams) -> Result<AgreeOutcome, CliError> {
    check_params(params)?;
    let mut sim = Simulation::new(params, 1);
    let start = Instant::now();
    let run = sim.run("agree", &AdversaryScript::default());
    let elapsed = start.elapsed();

    let mut out = String::new();
    let _ = writeln!(out, "params {params}");
    if let Some(id) = &run.key_id {
        let _ = writeln!(out, "key-id {id}");
    }
    for (side, outcome) in [("A", &run.alice), ("B", &run.bob)] {
        match outcome.key() {
            Some(key) => {
                let _ = writeln!(out, "{side} agreed {} bytes digest={}", key.len(), digest(key));
            }
            None => {
                let _ = writeln!(out, "{side} {outcome:?}");
            }
        }
    }
    if let Some(acc) = &run.accepted_shares {
        let xs: Vec<String> = acc.iter().map(|x| x.to_string()).collect();
        let _ = writeln!(out, "accepted shares [{}]", xs.join(","));
    }
    for u in &run.accounting {
        let side = if u.hub_copy { "hub" } else { "client" };
        let _ = writeln!(out, "table {}:{} {side} used={}", Node::Hub(u.hub), u.client, u.delta);
    }
    let mbit = params.m as f64 * 8.0 / 1e6;
    let ms = elapsed.as_secs_f64() * 1e3;
    let _ = writeln!(out, "time {ms:.3} ms total, {:.3} ms/Mbit", ms / mbit);
    let verdict = run.verdict();
    let _ = writeln!(out, "verdict {verdict}");
    Ok(AgreeOutcome { verdict, report: out })
}

/// Scenario files named directly or found (as `*.scn`) in named directories.
pub fn scenario_files(paths: &[PathBuf]) -> Result<Vec<PathBuf>, CliError> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)
                .map_err(io_err(p))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "scn"))
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(p.clone());
        }
    }
    Ok(files)
}

#[derive(Debug)]
pub struct AttackOutcome {
    pub passed: usize,
    pub failed: usize,
    pub report: String,
}

/// Runs every scenario. Each one reports pass, fail or (without an
/// expectation) just its verdict.
pub fn attack(paths: &[PathBuf], full_log: bool) -> Result<AttackOutcome, CliError> {
    let files = scenario_files(paths)?;
    if files.is_empty() {
        return Err(CliError::Usage("no scenario files given".into()));
    }
    let mut scenarios = Vec::with_capacity(files.len());
    for f in &files {
        let text = fs::read_to_string(f).map_err(io_err(f))?;
        let sc = Scenario::parse(&text).map_err(|source| CliError::Script { path: f.clone(), source })?;
        scenarios.push(sc);
    }

    let mut out = AttackOutcome { passed: 0, failed: 0, report: String::new() };
    for sc in &scenarios {
        let result = evaluate(sc);
        if full_log {
            for r in &result.reports {
                out.report.push_str(&r.to_log());
            }
            if let Some(points) = &result.sweep {
                for p in points {
                    let _ = writeln!(out.report, "sweep d={} {} {}", p.disrupted, p.adversary, p.verdict);
                }
            }
        }
        let mark = match result.passed {
            Some(true) => {
                out.passed += 1;
                "PASS"
            }
            Some(false) => {
                out.failed += 1;
                "FAIL"
            }
            None => "----",
        };
        let _ = writeln!(out.report, "{mark} {}", result.summary);
    }
    let _ = writeln!(out.report, "{} passed, {} failed", out.passed, out.failed);
    Ok(out)
}
