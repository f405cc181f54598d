//! Scenario files: run parameters plus the adversary's script.
//!
//! One `key = value` pair per line; `#` starts a comment. Hubs are named
//! `H1`..`Hn`, the initiator `A` and the responder `B`.
//!
//! ```text
//! name = two-dropped
//! n = 3
//! k = 2
//! kb = 2
//! m = 64                     # key length in bytes
//! scheme = shamir            # or xor
//! adapted = no               # yes: bootstrap + adapted second pass
//! seed = 7
//! identity = no              # yes: A first queries B's identity
//! compromised = H1, H2
//! strategy = fake-group      # passive | drop | corrupt | fake-group | known-secret | lie-identity
//! link H1->B = drop          # applies to every frame on the link
//! link A->H2 #0 = corrupt 12, 13
//! link A->H3 = replay
//! link H3->B = inject 0000001a02...
//! link H2->B = reorder
//! expect = aborted:InsufficientShares
//! ```
//!
//! `#i` restricts a rule to the i-th frame (from 0) sent on that link. The
//! first matching rule wins; frames with no matching rule are delivered.
//! `corrupt` XORs 0x01 into the listed byte positions of the frame.
//!
//! `sweep = disruption` replaces the single run by one run per disrupted
//! hub count d = 0..=n, each against every disruption adversary acting on
//! hubs H1..Hd (dropped or corrupted links, dropping, corrupting or
//! fake-group hubs); `expect = boundary <d>` names the smallest d at which
//! some adversary stops agreement.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use dske::secret_sharing::SchemeKind;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct ScriptError {
    pub line: usize,
    pub message: String,
}

fn err(line: usize, message: impl Into<String>) -> ScriptError {
    ScriptError { line, message: message.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Node {
    Alice,
    Bob,
    /// Zero-based hub index; printed one-based.
    Hub(usize),
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Node::Alice => f.write_str("A"),
            Node::Bob => f.write_str("B"),
            Node::Hub(i) => write!(f, "H{}", i + 1),
        }
    }
}

impl FromStr for Node {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim() {
            "A" => Ok(Node::Alice),
            "B" => Ok(Node::Bob),
            h => {
                let idx: usize = h
                    .strip_prefix('H')
                    .and_then(|d| d.parse().ok())
                    .filter(|&i| i >= 1)
                    .ok_or_else(|| format!("unknown node {h:?}"))?;
                Ok(Node::Hub(idx - 1))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Link {
    pub from: Node,
    pub to: Node,
}

impl Link {
    pub fn new(from: Node, to: Node) -> Self {
        Link { from, to }
    }

    /// Whether the protocol ever sends on this link.
    pub fn exists(&self, hubs: usize) -> bool {
        match (self.from, self.to) {
            (Node::Alice, Node::Hub(i)) | (Node::Hub(i), Node::Alice) | (Node::Hub(i), Node::Bob) => i < hubs,
            (Node::Alice, Node::Bob) | (Node::Bob, Node::Alice) => true,
            _ => false,
        }
    }
}

impl fmt::Display for Link {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}->{}", self.from, self.to)
    }
}

impl FromStr for Link {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (a, b) = s.split_once("->").ok_or_else(|| format!("link {s:?} must look like A->H1"))?;
        Ok(Link { from: a.parse()?, to: b.parse()? })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LinkAction {
    Deliver,
    Drop,
    Corrupt(Vec<usize>),
    /// Deliver, then deliver the same frame again later.
    Replay,
    /// Deliver, then deliver these bytes on the same link.
    Inject(Vec<u8>),
    /// Deliver after everything already queued.
    Reorder,
}

impl fmt::Display for LinkAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LinkAction::Deliver => f.write_str("deliver"),
            LinkAction::Drop => f.write_str("drop"),
            LinkAction::Corrupt(p) => {
                let list: Vec<String> = p.iter().map(|x| x.to_string()).collect();
                write!(f, "corrupt {}", list.join(","))
            }
            LinkAction::Replay => f.write_str("replay"),
            LinkAction::Inject(b) => write!(f, "inject {}", hex::encode(b)),
            LinkAction::Reorder => f.write_str("reorder"),
        }
    }
}

impl FromStr for LinkAction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim();
        let (verb, rest) = s.split_once(char::is_whitespace).unwrap_or((s, ""));
        let rest = rest.trim();
        match verb {
            "deliver" => Ok(LinkAction::Deliver),
            "drop" => Ok(LinkAction::Drop),
            "replay" => Ok(LinkAction::Replay),
            "reorder" => Ok(LinkAction::Reorder),
            "corrupt" => {
                let positions = rest
                    .split(',')
                    .map(|p| p.trim().parse::<usize>().map_err(|_| format!("bad byte position {p:?}")))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(LinkAction::Corrupt(positions))
            }
            "inject" => hex::decode(rest).map(LinkAction::Inject).map_err(|e| format!("bad inject hex: {e}")),
            other => Err(format!("unknown link action {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkRule {
    pub link: Link,
    /// Only the frame with this per-link sequence number, if set.
    pub frame: Option<usize>,
    pub action: LinkAction,
}

/// What compromised hubs do with the requests they handle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    /// Follow the protocol; the adversary only records what the hubs see.
    Passive,
    /// Never forward.
    Drop,
    /// Forward a share with one byte changed, under a valid message tag.
    Corrupt,
    /// Forward shares of a fresh secret, with threshold k_B and a key tag
    /// that matches it.
    FakeGroup,
    /// With at least k compromised hubs, recover the real secret and forward
    /// shares of a different secret that still matches the real key tag.
    /// With fewer, behaves like `Corrupt`.
    KnownSecret,
    /// Follow the protocol for keys but give a false identity record.
    LieIdentity,
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s.trim() {
            "passive" => Strategy::Passive,
            "drop" => Strategy::Drop,
            "corrupt" => Strategy::Corrupt,
            "fake-group" => Strategy::FakeGroup,
            "known-secret" => Strategy::KnownSecret,
            "lie-identity" => Strategy::LieIdentity,
            other => return Err(format!("unknown strategy {other:?}")),
        })
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Passive => "passive",
            Strategy::Drop => "drop",
            Strategy::Corrupt => "corrupt",
            Strategy::FakeGroup => "fake-group",
            Strategy::KnownSecret => "known-secret",
            Strategy::LieIdentity => "lie-identity",
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AdversaryScript {
    /// Zero-based indices of compromised hubs.
    pub compromised: BTreeSet<usize>,
    pub strategy: Option<Strategy>,
    pub links: Vec<LinkRule>,
}

impl AdversaryScript {
    pub fn honest() -> Self {
        Self::default()
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy.unwrap_or(Strategy::Passive)
    }

    /// The action for the `seq`-th frame on `link`.
    pub fn action_for(&self, link: Link, seq: usize) -> LinkAction {
        self.links
            .iter()
            .find(|r| r.link == link && r.frame.is_none_or(|f| f == seq))
            .map_or(LinkAction::Deliver, |r| r.action.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunParams {
    pub n: u16,
    pub k: u16,
    pub k_b: u16,
    pub m: usize,
    pub scheme: SchemeKind,
    pub adapted: bool,
    pub seed: u64,
    pub identity: bool,
}

impl Default for RunParams {
    fn default() -> Self {
        RunParams { n: 3, k: 2, k_b: 2, m: 32, scheme: SchemeKind::Shamir, adapted: false, seed: 0, identity: false }
    }
}

impl fmt::Display for RunParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "n={} k={} kb={} m={} scheme={} adapted={} seed={} identity={}",
            self.n,
            self.k,
            self.k_b,
            self.m,
            self.scheme,
            if self.adapted { "yes" } else { "no" },
            self.seed,
            if self.identity { "yes" } else { "no" }
        )
    }
}

/// Expected result of a scenario.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expectation {
    /// Both parties hold the same key.
    Agreed,
    /// The responder aborted; optionally with this reason name.
    Aborted(Option<String>),
    /// Either agreement on the right key or an abort.
    NoWrongKey,
    /// The responder accepted a key different from the initiator's.
    WrongKey,
    /// Sweep: the smallest disrupted-hub count at which agreement fails.
    Boundary(usize),
}

impl FromStr for Expectation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim();
        if let Some(d) = s.strip_prefix("boundary") {
            return d.trim().parse().map(Expectation::Boundary).map_err(|_| format!("bad boundary {d:?}"));
        }
        if let Some(reason) = s.strip_prefix("aborted:") {
            return Ok(Expectation::Aborted(Some(reason.trim().to_string())));
        }
        match s {
            "agreed" => Ok(Expectation::Agreed),
            "aborted" => Ok(Expectation::Aborted(None)),
            "no-wrong-key" => Ok(Expectation::NoWrongKey),
            "wrong-key" => Ok(Expectation::WrongKey),
            other => Err(format!("unknown expectation {other:?}")),
        }
    }
}

impl fmt::Display for Expectation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expectation::Agreed => f.write_str("agreed"),
            Expectation::Aborted(None) => f.write_str("aborted"),
            Expectation::Aborted(Some(r)) => write!(f, "aborted:{r}"),
            Expectation::NoWrongKey => f.write_str("no-wrong-key"),
            Expectation::WrongKey => f.write_str("wrong-key"),
            Expectation::Boundary(d) => write!(f, "boundary {d}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sweep {
    Disruption,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scenario {
    pub name: String,
    pub params: RunParams,
    pub script: AdversaryScript,
    pub expect: Option<Expectation>,
    pub sweep: Option<Sweep>,
}

fn parse_bool(v: &str) -> Option<bool> {
    match v {
        "yes" | "true" | "1" => Some(true),
        "no" | "false" | "0" => Some(false),
        _ => None,
    }
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Scenario, ScriptError> {
        let mut params = RunParams::default();
        let mut name = String::from("unnamed");
        let mut script = AdversaryScript::default();
        let mut expect = None;
        let mut sweep = None;
        let mut compromised_line = 0;

        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("");
            // `#i` frame selectors are part of link keys, so re-split those lines.
            let line = if raw.trim_start().starts_with("link ") { strip_comment_keep_selector(raw) } else { line.to_string() };
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| err(line_no, "expected key = value"))?;
            let (key, value) = (key.trim(), value.trim());
            let num = |v: &str| v.parse::<u64>().map_err(|_| err(line_no, format!("{key}: not a number: {v:?}")));
            match key {
                "name" => name = value.to_string(),
                "n" => params.n = num(value)?.try_into().map_err(|_| err(line_no, "n too large"))?,
                "k" => params.k = num(value)?.try_into().map_err(|_| err(line_no, "k too large"))?,
                "kb" => params.k_b = num(value)?.try_into().map_err(|_| err(line_no, "kb too large"))?,
                "m" => params.m = num(value)? as usize,
                "seed" => params.seed = num(value)?,
                "scheme" => params.scheme = value.parse().map_err(|e: String| err(line_no, e))?,
                "adapted" => params.adapted = parse_bool(value).ok_or_else(|| err(line_no, "adapted: yes or no"))?,
                "identity" => params.identity = parse_bool(value).ok_or_else(|| err(line_no, "identity: yes or no"))?,
                "strategy" => script.strategy = Some(value.parse().map_err(|e: String| err(line_no, e))?),
                "expect" => expect = Some(value.parse().map_err(|e: String| err(line_no, e))?),
                "sweep" => {
                    sweep = match value {
                        "disruption" => Some(Sweep::Disruption),
                        other => return Err(err(line_no, format!("unknown sweep {other:?}"))),
                    }
                }
                "compromised" => {
                    compromised_line = line_no;
                    for h in value.split(',').map(str::trim).filter(|h| !h.is_empty()) {
                        match h.parse::<Node>().map_err(|e| err(line_no, e))? {
                            Node::Hub(i) => {
                                script.compromised.insert(i);
                            }
                            other => return Err(err(line_no, format!("only hubs can be compromised, not {other}"))),
                        }
                    }
                }
                k if k.starts_with("link ") => {
                    let spec = k["link ".len()..].trim();
                    let (link, frame) = match spec.split_once('#') {
                        Some((l, f)) => {
                            let f = f.trim().parse::<usize>().map_err(|_| err(line_no, format!("bad frame index {f:?}")))?;
                            (l.trim(), Some(f))
                        }
                        None => (spec, None),
                    };
                    let link: Link = link.parse().map_err(|e: String| err(line_no, e))?;
                    let action = value.parse().map_err(|e: String| err(line_no, e))?;
                    script.links.push(LinkRule { link, frame, action });
                }
                other => return Err(err(line_no, format!("unknown key {other:?}"))),
            }
        }

        let n = params.n as usize;
        if params.n == 0 || params.k == 0 || params.k > params.n || params.n > 255 {
            return Err(err(0, format!("need 1 <= k <= n <= 255, got n={} k={}", params.n, params.k)));
        }
        if params.scheme == SchemeKind::Xor && params.k != params.n {
            return Err(err(0, "the xor scheme needs k = n"));
        }
        if params.k_b == 0 {
            return Err(err(0, "kb must be at least 1"));
        }
        if let Some(&h) = script.compromised.iter().find(|&&h| h >= n) {
            return Err(err(compromised_line, format!("compromised hub H{} does not exist", h + 1)));
        }
        if let Some(rule) = script.links.iter().find(|r| !r.link.exists(n)) {
            return Err(err(0, format!("link {} does not exist", rule.link)));
        }
        if sweep.is_some() && !matches!(expect, None | Some(Expectation::Boundary(_))) {
            return Err(err(0, "a sweep expects `boundary <d>`"));
        }
        Ok(Scenario { name, params, script, expect, sweep })
    }
}

/// Drops a trailing comment from a link line without eating its `#i` selector.
fn strip_comment_keep_selector(raw: &str) -> String {
    let Some((key, value)) = raw.split_once('=') else {
        return raw.to_string();
    };
    let value = value.split('#').next().unwrap_or("");
    format!("{key}={value}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_a_full_scenario() {
        let text = "\
# comment
name = demo
n = 4
k = 3
kb = 2
m = 16
scheme = shamir
adapted = yes
seed = 9
identity = yes
compromised = H1, H3
strategy = fake-group
link H1->B = drop   # trailing comment
link A->H2 #1 = corrupt 3, 4
link H4->B = inject 00ff
expect = aborted:InjectionDetected
";
        let s = Scenario::parse(text).unwrap();
        assert_eq!(s.name, "demo");
        assert_eq!(s.params.n, 4);
        assert!(s.params.adapted && s.params.identity);
        assert_eq!(s.script.compromised, BTreeSet::from([0, 2]));
        assert_eq!(s.script.strategy(), Strategy::FakeGroup);
        assert_eq!(s.script.links.len(), 3);
        assert_eq!(s.script.links[1].frame, Some(1));
        assert_eq!(s.script.links[1].action, LinkAction::Corrupt(vec![3, 4]));
        assert_eq!(s.expect, Some(Expectation::Aborted(Some("InjectionDetected".into()))));

        let link = Link::new(Node::Alice, Node::Hub(1));
        assert_eq!(s.script.action_for(link, 0), LinkAction::Deliver);
        assert_eq!(s.script.action_for(link, 1), LinkAction::Corrupt(vec![3, 4]));
    }

    #[test]
    fn malformed_scenarios_are_rejected() {
        for bad in [
            "n = 3\nk = 4",
            "n = three",
            "bogus = 1",
            "n = 3\ncompromised = H4",
            "n = 3\nlink H1->H2 = drop",
            "n = 3\nlink A->H1 = explode",
            "n = 3\nlink A->H1 = inject zz",
            "n = 3\nstrategy = nice",
            "n = 3\nk = 2\nscheme = xor",
            "just words",
            "n = 3\ncompromised = B",
        ] {
            assert!(Scenario::parse(bad).is_err(), "{bad:?}");
        }
    }

    #[test]
    fn names_round_trip() {
        for l in ["A->H1", "H12->B", "B->A", "A->B", "H3->A"] {
            assert_eq!(l.parse::<Link>().unwrap().to_string(), l);
        }
        for e in ["agreed", "aborted", "aborted:NoValidCandidate", "no-wrong-key", "wrong-key", "boundary 5"] {
            assert_eq!(e.parse::<Expectation>().unwrap().to_string(), e);
        }
    }
}
