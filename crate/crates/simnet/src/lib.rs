//! Deterministic in-process network for key agreement runs, with a
//! scriptable adversary on links and hubs.
//!
//! A [`Simulation`] owns one initiator (A), one responder (B) and n hubs,
//! all provisioned from a seed. Frames travel through an event queue in
//! logical time; the adversary sees every frame and acts on it according
//! to an [`AdversaryScript`]. See [`script`] for the scenario file format.

pub mod report;
pub mod script;
pub mod sim;
pub mod sweep;

pub use report::{IdentityReport, KnowledgeLedger, PartyOutcome, RunReport, TableUsage, TraceEvent, Verdict};
pub use script::{AdversaryScript, Expectation, Link, LinkAction, LinkRule, Node, RunParams, Scenario, ScriptError, Strategy};
pub use sim::{replay_attack, run_scenario, CapturedFrame, Simulation};
pub use sweep::{disruption_sweep, disruption_threshold, evaluate, ScenarioOutcome, SweepPoint};
