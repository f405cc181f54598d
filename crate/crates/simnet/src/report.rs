//! Run reports and their line-oriented log form.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use dske::finite_field::Gf256;
use dske::ids::KeyId;
use sha2::{Digest, Sha256};

use crate::script::{Expectation, Link, Node, RunParams};

/// First 8 bytes of SHA-256, hex.
pub fn digest(bytes: &[u8]) -> String {
    hex::encode(&Sha256::digest(bytes)[..8])
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEvent {
    pub step: u64,
    pub link: Link,
    /// `send`, `drop`, `corrupt`, `replay`, `inject`, `reorder`, `accept` or `reject`.
    pub event: &'static str,
    pub detail: String,
}

/// How one party's side of the run ended.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PartyOutcome {
    Agreed { key: Vec<u8> },
    /// Aborted with the reason's name and its full description.
    Aborted { reason: String, detail: String },
    /// Could not start or continue (exhausted tables, no identity consensus, ...).
    Failed(String),
    /// The party never reached a decision (e.g. standalone replays).
    Idle,
}

impl PartyOutcome {
    pub fn key(&self) -> Option<&[u8]> {
        match self {
            PartyOutcome::Agreed { key } => Some(key),
            _ => None,
        }
    }

    fn log_form(&self) -> String {
        match self {
            PartyOutcome::Agreed { key } => format!("agreed digest={}", digest(key)),
            PartyOutcome::Aborted { reason, detail } => format!("aborted {reason} ({detail})"),
            PartyOutcome::Failed(why) => format!("failed ({why})"),
            PartyOutcome::Idle => "idle".to_string(),
        }
    }
}

/// Name of a `Debug`-printed enum variant: `Foo { a: 1 }` becomes `Foo`.
/// Wrapped table errors are named by the inner variant.
pub(crate) fn variant_name<T: std::fmt::Debug>(value: &T) -> String {
    let full = format!("{value:?}");
    let mut words = full.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty());
    let first = words.next().unwrap_or_default();
    match (first, words.next()) {
        ("Table", Some(inner)) => inner.to_string(),
        _ => first.to_string(),
    }
}

/// Overall classification from the responder's point of view.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    /// Both hold the same key.
    Agreed,
    /// The responder accepted a key the initiator does not hold.
    WrongKey,
    /// The responder aborted with this reason.
    Aborted(String),
    /// The initiator could not complete its side.
    InitiatorFailed(String),
    Idle,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Verdict::Agreed => f.write_str("agreed"),
            Verdict::WrongKey => f.write_str("wrong-key"),
            Verdict::Aborted(r) => write!(f, "aborted:{r}"),
            Verdict::InitiatorFailed(r) => write!(f, "initiator-failed:{r}"),
            Verdict::Idle => f.write_str("idle"),
        }
    }
}

impl Verdict {
    pub fn satisfies(&self, expect: &Expectation) -> bool {
        match expect {
            Expectation::Agreed => *self == Verdict::Agreed,
            Expectation::WrongKey => *self == Verdict::WrongKey,
            Expectation::NoWrongKey => matches!(self, Verdict::Agreed | Verdict::Aborted(_)),
            Expectation::Aborted(None) => matches!(self, Verdict::Aborted(_)),
            Expectation::Aborted(Some(r)) => matches!(self, Verdict::Aborted(got) if got == r),
            Expectation::Boundary(_) => false,
        }
    }
}

/// Bytes used from one copy of one table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TableUsage {
    pub hub: usize,
    pub client: Node,
    /// `true` for the hub's copy, `false` for the client's.
    pub hub_copy: bool,
    /// Used during this run.
    pub delta: u64,
    /// Used since provisioning.
    pub total: u64,
}

/// Everything the adversary has seen.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KnowledgeLedger {
    /// Table copies read through compromised hubs, as (hub, client).
    pub tables: Vec<(usize, Node)>,
    /// Frames observed on all links, with their total size.
    pub frames: usize,
    pub frame_bytes: usize,
    /// Decrypted shares Y_x learned by compromised hubs, per key.
    pub shares: BTreeMap<KeyId, BTreeMap<Gf256, Vec<u8>>>,
    /// Keys the adversary could reconstruct and check against the key tag.
    pub recovered: BTreeMap<KeyId, Vec<u8>>,
    /// False identity records handed out, as (hub, record).
    pub identity_lies: Vec<(usize, Vec<u8>)>,
}

/// Identity-query phase result.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IdentityReport {
    Settled { record: Vec<u8>, excluded: Vec<usize> },
    NoConsensus,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub name: String,
    pub run: usize,
    pub params: RunParams,
    pub key_id: Option<KeyId>,
    pub alice: PartyOutcome,
    pub bob: PartyOutcome,
    /// Adapted protocol: shares A accepted in the second pass.
    pub accepted_shares: Option<Vec<Gf256>>,
    pub identity: Option<IdentityReport>,
    pub trace: Vec<TraceEvent>,
    pub accounting: Vec<TableUsage>,
    pub ledger: KnowledgeLedger,
}

impl RunReport {
    pub fn verdict(&self) -> Verdict {
        match (&self.alice, &self.bob) {
            (_, PartyOutcome::Aborted { reason, .. }) => Verdict::Aborted(reason.clone()),
            (PartyOutcome::Agreed { key: a }, PartyOutcome::Agreed { key: b }) => {
                if a == b {
                    Verdict::Agreed
                } else {
                    Verdict::WrongKey
                }
            }
            (PartyOutcome::Aborted { reason, .. }, _) => Verdict::InitiatorFailed(reason.clone()),
            (PartyOutcome::Failed(why), _) => Verdict::InitiatorFailed(why.clone()),
            (_, PartyOutcome::Agreed { .. }) => Verdict::WrongKey,
            (_, PartyOutcome::Failed(why)) => Verdict::Aborted(why.clone()),
            _ => Verdict::Idle,
        }
    }

    /// Trace events of the given kind.
    pub fn events<'a>(&'a self, event: &'a str) -> impl Iterator<Item = &'a TraceEvent> + 'a {
        self.trace.iter().filter(move |e| e.event == event)
    }

    /// Rejection reasons recorded anywhere in the trace.
    pub fn rejections(&self) -> Vec<&str> {
        self.events("reject").map(|e| e.detail.split_whitespace().next().unwrap_or("")).collect()
    }

    pub fn usage(&self, hub: usize, client: Node, hub_copy: bool) -> Option<TableUsage> {
        self.accounting.iter().copied().find(|u| u.hub == hub && u.client == client && u.hub_copy == hub_copy)
    }

    /// The report as text, one fact per line, stable across identical runs.
    pub fn to_log(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "run {} {}", self.run, self.name);
        let _ = writeln!(out, "params {}", self.params);
        if let Some(id) = &self.key_id {
            let _ = writeln!(out, "key-id {id}");
        }
        if let Some(identity) = &self.identity {
            match identity {
                IdentityReport::Settled { record, excluded } => {
                    let ex: Vec<String> = excluded.iter().map(|h| Node::Hub(*h).to_string()).collect();
                    let _ = writeln!(out, "identity record={} excluded=[{}]", hex::encode(record), ex.join(","));
                }
                IdentityReport::NoConsensus => {
                    let _ = writeln!(out, "identity no-consensus");
                }
            }
        }
        for e in &self.trace {
            let _ = writeln!(out, "trace {:05} {} {} {}", e.step, e.link, e.event, e.detail);
        }
        for u in &self.accounting {
            let side = if u.hub_copy { "hub" } else { "client" };
            let _ = writeln!(out, "table {}:{} {side} delta={} total={}", Node::Hub(u.hub), u.client, u.delta, u.total);
        }
        let l = &self.ledger;
        let tables: Vec<String> = l.tables.iter().map(|(h, c)| format!("{}:{c}", Node::Hub(*h))).collect();
        let _ = writeln!(out, "ledger tables=[{}] frames={} bytes={}", tables.join(","), l.frames, l.frame_bytes);
        for (id, shares) in &l.shares {
            let xs: Vec<String> = shares.keys().map(|x| x.to_string()).collect();
            let _ = writeln!(out, "ledger shares {id} x=[{}]", xs.join(","));
        }
        for (id, key) in &l.recovered {
            let _ = writeln!(out, "ledger recovered {id} digest={}", digest(key));
        }
        for (h, record) in &l.identity_lies {
            let _ = writeln!(out, "ledger identity-lie {} {}", Node::Hub(*h), hex::encode(record));
        }
        if let Some(acc) = &self.accepted_shares {
            let xs: Vec<String> = acc.iter().map(|x| x.to_string()).collect();
            let _ = writeln!(out, "accepted [{}]", xs.join(","));
        }
        let _ = writeln!(out, "outcome A {}", self.alice.log_form());
        let _ = writeln!(out, "outcome B {}", self.bob.log_form());
        let _ = writeln!(out, "verdict {}", self.verdict());
        out
    }
}
