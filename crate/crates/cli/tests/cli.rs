use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dske_cli::bench::{combos, BenchConfig, Corruption, Received};
use proptest::prelude::*;

fn dske(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dske")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn scenarios_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../simnet/scenarios")
}

fn listing(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn provision_writes_one_file_per_pair() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = dske(&["provision", "--hubs", "3", "--clients", "alice,bob", "--table-bytes", "256", "--seed", "5", "--out", out]);
    assert!(o.status.success(), "{o:?}");
    let files = listing(dir.path());
    assert_eq!(files.len(), 6);
    assert!(files.iter().any(|(n, _)| n == "H3-bob.pskm"));
}

#[test]
fn provision_is_reproducible_under_a_seed() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    for (dir, seed) in [(&a, "11"), (&b, "11"), (&c, "12")] {
        let o = dske(&["provision", "--hubs", "2", "--table-bytes", "128", "--seed", seed, "--out", dir.path().to_str().unwrap()]);
        assert!(o.status.success());
    }
    assert_eq!(listing(a.path()), listing(b.path()));
    assert_ne!(listing(a.path()), listing(c.path()));
}

#[test]
fn provision_rejects_empty_tables() {
    let dir = tempfile::tempdir().unwrap();
    let o = dske(&["provision", "--hubs", "3", "--table-bytes", "0", "--out", dir.path().to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("table size"));
}

#[test]
fn agree_one_mebibyte() {
    let o = dske(&["agree", "--n", "3", "--k", "2", "--m-bytes", "1048576", "--seed", "3"]);
    assert!(o.status.success(), "{o:?}");
    let text = stdout(&o);
    let digests: Vec<&str> = text.lines().filter_map(|l| l.split("digest=").nth(1)).collect();
    assert_eq!(digests.len(), 2);
    assert_eq!(digests[0], digests[1]);
    assert_eq!(text.lines().filter(|l| l.ends_with(&format!("used={}", 1048576 + 32))).count(), 12);
    assert!(text.contains("ms/Mbit"));
    assert!(text.contains("verdict agreed"));
}

#[test]
fn agree_output_is_reproducible_apart_from_timing() {
    let strip = |o: Output| stdout(&o).lines().filter(|l| !l.starts_with("time")).collect::<Vec<_>>().join("\n");
    let args = ["agree", "--hubs", "4", "--k", "3", "--m-bytes", "64", "--seed", "8"];
    assert_eq!(strip(dske(&args)), strip(dske(&args)));
}

#[test]
fn agree_rejects_k_above_n() {
    let o = dske(&["agree", "--n", "3", "--k", "4"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("k must be"));
}

#[test]
fn agree_adapted_with_k_equal_n() {
    let o = dske(&["agree", "--n", "3", "--k", "3", "--adapted", "--m-bytes", "256"]);
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).contains("accepted shares [0x01,0x02,0x03]"));
}

#[test]
fn agree_xor() {
    assert!(dske(&["agree", "--n", "4", "--k", "4", "--scheme", "xor", "--m-bytes", "100"]).status.success());
    assert_eq!(dske(&["agree", "--n", "4", "--k", "2", "--scheme", "xor"]).status.code(), Some(2));
}

#[test]
fn attack_corpus_passes() {
    let o = dske(&["attack", "--scenario", scenarios_dir().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stdout(&o));
    let text = stdout(&o);
    assert!(!text.contains("FAIL "));
    assert!(text.contains("threshold-sweep: disruption boundary 5"));
}

#[test]
fn attack_reports_failed_expectations() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("wrong.scn");
    std::fs::write(&path, "name = wrong\nn = 3\nk = 2\nlink H1->B = drop\nlink H2->B = drop\nexpect = agreed\n").unwrap();
    let o = dske(&["attack", "--scenario", path.to_str().unwrap(), "--log"]);
    assert_eq!(o.status.code(), Some(1));
    let text = stdout(&o);
    assert!(text.contains("FAIL wrong: aborted:InsufficientShares"));
    assert!(text.contains("trace "));
}

#[test]
fn attack_rejects_malformed_scenarios() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.scn");
    std::fs::write(&path, "n = 3\nk = 2\nlink H1->Q = drop\n").unwrap();
    let o = dske(&["attack", "--scenario", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"));
}

#[test]
fn bench_rows_match_combinations() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bench.csv");
    let o = dske(&[
        "bench", "--n-max", "5", "--k-max", "5", "--m-bytes", "512", "--corrupt", "none,one,many", "--out",
        csv.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{o:?}");
    let text = std::fs::read_to_string(&csv).unwrap();
    let cfg = BenchConfig {
        n_max: 5,
        k_max: 5,
        m_bytes: 512,
        corruption: vec![Corruption::None, Corruption::One, Corruption::Many],
        ..BenchConfig::default()
    };
    assert_eq!(text.lines().count() - 1, combos(&cfg).len());
    assert!(text.starts_with("n,k,s,corrupted"));
    assert!(std::fs::read_to_string(csv.with_extension("gp")).unwrap().contains("bench.csv"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn uncorrupted_sweep_size_is_closed_form(n_max in 1usize..30, k_max in 1usize..30) {
        let cfg = BenchConfig { n_max, k_max, ..BenchConfig::default() };
        // For each n: s ranges over k..=n for every k <= min(n, k_max).
        let expected: usize = (1..=n_max).map(|n| (1..=k_max.min(n)).map(|k| n - k + 1).sum::<usize>()).sum();
        prop_assert_eq!(combos(&cfg).len(), expected);
        let full = BenchConfig { received: Received::Full, ..cfg };
        prop_assert_eq!(combos(&full).len(), (1..=n_max).map(|n| k_max.min(n)).sum::<usize>());
    }
}
