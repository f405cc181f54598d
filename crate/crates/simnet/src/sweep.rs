//! Threshold sweeps and scenario evaluation.

use crate::report::{RunReport, Verdict};
use crate::script::{AdversaryScript, Expectation, Link, LinkAction, LinkRule, Node, RunParams, Scenario, Strategy, Sweep};
use crate::sim::run_scenario;

/// Byte offset inside the encrypted share of a key instruction frame.
pub const SHARE_BYTE: usize = 100;

/// Fewest disrupted hubs that can stop agreement: min(n - k + 1, k_B).
pub fn disruption_threshold(n: u16, k: u16, k_b: u16) -> usize {
    (n - k + 1).min(k_b) as usize
}

/// Fewest compromised hubs that learn the key.
pub fn leakage_threshold(k: u16) -> usize {
    k as usize
}

/// Fewest compromised hubs that can make the responder accept a key of
/// their choosing (or inject one).
pub fn injection_threshold(k_b: u16) -> usize {
    k_b as usize
}

fn hubs(d: usize) -> impl Iterator<Item = usize> {
    0..d
}

fn drop_links(d: usize) -> AdversaryScript {
    AdversaryScript {
        links: hubs(d)
            .map(|i| LinkRule { link: Link::new(Node::Hub(i), Node::Bob), frame: None, action: LinkAction::Drop })
            .collect(),
        ..AdversaryScript::default()
    }
}

fn corrupt_links(d: usize) -> AdversaryScript {
    AdversaryScript {
        links: hubs(d)
            .map(|i| LinkRule {
                link: Link::new(Node::Hub(i), Node::Bob),
                frame: None,
                action: LinkAction::Corrupt(vec![SHARE_BYTE]),
            })
            .collect(),
        ..AdversaryScript::default()
    }
}

fn compromised(d: usize, strategy: Strategy) -> AdversaryScript {
    AdversaryScript { compromised: hubs(d).collect(), strategy: Some(strategy), links: Vec::new() }
}

/// Every disruption adversary acting on hubs H1..Hd.
pub fn disruption_scripts(d: usize) -> Vec<(&'static str, AdversaryScript)> {
    vec![
        ("drop-links", drop_links(d)),
        ("corrupt-links", corrupt_links(d)),
        ("drop-hubs", compromised(d, Strategy::Drop)),
        ("corrupt-hubs", compromised(d, Strategy::Corrupt)),
        ("fake-group", compromised(d, Strategy::FakeGroup)),
    ]
}

#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub disrupted: usize,
    pub adversary: &'static str,
    pub verdict: Verdict,
}

impl SweepPoint {
    pub fn succeeded(&self) -> bool {
        self.verdict == Verdict::Agreed
    }
}

/// Runs every disruption adversary for d = 0..=n disrupted hubs.
pub fn disruption_sweep(params: &RunParams) -> Vec<SweepPoint> {
    let mut points = Vec::new();
    for d in 0..=params.n as usize {
        let p = RunParams { seed: params.seed.wrapping_add(d as u64), ..*params };
        for (adversary, script) in disruption_scripts(d) {
            let report = run_scenario(adversary, &p, &script);
            points.push(SweepPoint { disrupted: d, adversary, verdict: report.verdict() });
        }
    }
    points
}

/// Smallest d at which some adversary stopped agreement.
pub fn observed_boundary(points: &[SweepPoint]) -> Option<usize> {
    points.iter().filter(|p| !p.succeeded()).map(|p| p.disrupted).min()
}

/// Whether the sweep shows a sharp boundary at `threshold`: every run below
/// it agreed, and at every d at or above it some adversary prevented agreement.
pub fn is_sharp(points: &[SweepPoint], threshold: usize) -> bool {
    let below = points.iter().filter(|p| p.disrupted < threshold).all(SweepPoint::succeeded);
    let max_d = points.iter().map(|p| p.disrupted).max().unwrap_or(0);
    let above = (threshold..=max_d).all(|d| points.iter().any(|p| p.disrupted == d && !p.succeeded()));
    below && above
}

/// Result of running a scenario file.
#[derive(Debug)]
pub struct ScenarioOutcome {
    pub reports: Vec<RunReport>,
    pub sweep: Option<Vec<SweepPoint>>,
    /// `None` when the scenario states no expectation.
    pub passed: Option<bool>,
    pub summary: String,
}

pub fn evaluate(scenario: &Scenario) -> ScenarioOutcome {
    match scenario.sweep {
        Some(Sweep::Disruption) => {
            let p = &scenario.params;
            let points = disruption_sweep(p);
            let boundary = observed_boundary(&points);
            let threshold = disruption_threshold(p.n, p.k, p.k_b);
            let passed = match scenario.expect {
                Some(Expectation::Boundary(d)) => Some(boundary == Some(d) && is_sharp(&points, d)),
                _ => None,
            };
            let found = boundary.map_or("none".to_string(), |b| b.to_string());
            let summary = format!("{}: disruption boundary {found} (min(n-k+1, kb) = {threshold})", scenario.name);
            ScenarioOutcome { reports: Vec::new(), sweep: Some(points), passed, summary }
        }
        None => {
            let report = run_scenario(&scenario.name, &scenario.params, &scenario.script);
            let verdict = report.verdict();
            let passed = scenario.expect.as_ref().map(|e| verdict.satisfies(e));
            let summary = format!("{}: {verdict}", scenario.name);
            ScenarioOutcome { reports: vec![report], sweep: None, passed, summary }
        }
    }
}
