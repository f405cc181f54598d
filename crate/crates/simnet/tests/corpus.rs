use std::path::PathBuf;

use dske_simnet::{evaluate, run_scenario, Scenario};

fn dir(sub: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join(sub)
}

fn corpus() -> Vec<(String, Scenario)> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir("scenarios"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "scn"))
        .collect();
    files.sort();
    files
        .into_iter()
        .map(|p| {
            let text = std::fs::read_to_string(&p).unwrap();
            let scenario = Scenario::parse(&text).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            (p.file_name().unwrap().to_string_lossy().into_owned(), scenario)
        })
        .collect()
}

#[test]
fn every_bundled_scenario_meets_its_expectation() {
    let scenarios = corpus();
    assert!(scenarios.len() >= 15);
    for (file, scenario) in scenarios {
        let outcome = evaluate(&scenario);
        assert_eq!(outcome.passed, Some(true), "{file}: {}", outcome.summary);
    }
}

/// Logs of a few bundled scenarios, compared byte for byte. Run with
/// `DSKE_BLESS=1` to regenerate after a deliberate change.
#[test]
fn golden_traces() {
    for name in ["honest", "modification", "injection-at-threshold", "adapted-corrupt", "undermining-trust"] {
        let text = std::fs::read_to_string(dir("scenarios").join(format!("{name}.scn"))).unwrap();
        let s = Scenario::parse(&text).unwrap();
        let log = run_scenario(&s.name, &s.params, &s.script).to_log();
        let path = dir("tests/fixtures").join(format!("{name}.log"));
        if std::env::var_os("DSKE_BLESS").is_some() {
            std::fs::write(&path, &log).unwrap();
        }
        let golden = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(log, golden, "{name}");
    }
}
