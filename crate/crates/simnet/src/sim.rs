//! The simulated network: one initiator, one responder, n hubs and an
//! adversary acting on links and compromised hubs.

use std::collections::{BTreeMap, VecDeque};

use dske::auth_tags::{compute_tag, poly_hash, verify_tag, Tag, TagKey, TAG_KEY_LEN};
use dske::client::{bootstrap_len, AgreedKey, Client, ReceiverPolicy};
use dske::finite_field::{Gf256, Gf64};
use dske::hub::{ForwardedShare, Hub};
use dske::ids::{KeyId, PartyId};
use dske::psk_table::PskTable;
use dske::secret_sharing::{reconstruct, Interpolator, SchemeKind, SchemeParams, SecretBundle, Share};
use dske::wire::{decode, encode, IdentityResponse, KeyRequest, Message};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::report::{
    digest, variant_name, IdentityReport, KnowledgeLedger, PartyOutcome, RunReport, TableUsage, TraceEvent,
};
use crate::script::{AdversaryScript, Link, LinkAction, Node, RunParams, Strategy};

/// Record a lying hub hands out instead of the responder's.
pub const FALSE_RECORD: &[u8] = b"mallory";

pub fn hub_id(i: usize) -> PartyId {
    PartyId::from_label(&format!("H{}", i + 1))
}

pub fn alice_id() -> PartyId {
    PartyId::from_label("alice")
}

pub fn bob_id() -> PartyId {
    PartyId::from_label("bob")
}

/// A frame as it was first put on a link, before any adversary action.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CapturedFrame {
    pub run: usize,
    pub link: Link,
    pub bytes: Vec<u8>,
}

struct Frame {
    link: Link,
    bytes: Vec<u8>,
    /// Per-link sequence number; `None` for frames the adversary put there.
    seq: Option<usize>,
}

#[derive(Default)]
struct RunState {
    queue: VecDeque<Frame>,
    seq: BTreeMap<Link, usize>,
    trace: Vec<TraceEvent>,
    /// Shares withheld by compromised hubs until the network goes quiet.
    pending: BTreeMap<KeyId, BTreeMap<usize, ForwardedShare>>,
    /// What the adversary knows about each key's sharing.
    meta: BTreeMap<KeyId, (u16, u16, SchemeKind, Option<Tag>)>,
    ledger: KnowledgeLedger,
    identity_responses: Vec<IdentityResponse>,
    second_key: Option<KeyId>,
    finalized: Option<Finalized>,
    completed: Option<AgreedKey>,
}

/// A's finalize result: accepted coordinates and key, or (reason, detail).
type Finalized = Result<(Vec<Gf256>, Vec<u8>), (String, String)>;

pub struct Simulation {
    params: RunParams,
    hubs: Vec<Hub>,
    alice: Client,
    bob: Client,
    rng: ChaCha20Rng,
    runs: usize,
    step: u64,
    captured: Vec<CapturedFrame>,
}

/// Table bytes per copy that comfortably cover `runs` runs.
fn table_capacity(params: &RunParams, runs: usize) -> usize {
    let first = params.m.max(bootstrap_len(params.n as usize));
    let per_run = 2 * (first + params.m + 8 * TAG_KEY_LEN);
    // Each side allocates from its own half.
    2 * runs.max(1) * per_run + 4096
}

impl Simulation {
    /// Provisions fresh tables from the seed, sized for `runs` key agreements.
    pub fn new(params: &RunParams, runs: usize) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(params.seed);
        let cap = table_capacity(params, runs);
        let mut alice = Client::new(alice_id());
        let mut bob = Client::new(bob_id());
        let mut hubs = Vec::with_capacity(params.n as usize);
        for i in 0..params.n as usize {
            let mut hub = Hub::new(hub_id(i));
            for (c, client) in [&mut alice, &mut bob].into_iter().enumerate() {
                let mut data = vec![0u8; cap];
                rng.fill_bytes(&mut data);
                let table_id = ((i as u64 + 1) << 8) | c as u64;
                let cid = client.id();
                hub.register(cid, cid.to_string().into_bytes(), PskTable::new(hub.id(), cid, table_id, data.clone()))
                    .expect("fresh hub");
                client.add_table(PskTable::new(hub.id(), cid, table_id, data)).expect("fresh client");
            }
            hubs.push(hub);
        }
        Simulation { params: *params, hubs, alice, bob, rng, runs: 0, step: 0, captured: Vec::new() }
    }

    pub fn params(&self) -> &RunParams {
        &self.params
    }

    pub fn hub(&self, i: usize) -> &Hub {
        &self.hubs[i]
    }

    pub fn alice(&mut self) -> &mut Client {
        &mut self.alice
    }

    pub fn bob(&mut self) -> &mut Client {
        &mut self.bob
    }

    /// Every frame sent so far, as first transmitted.
    pub fn frames(&self) -> &[CapturedFrame] {
        &self.captured
    }

    fn policy(&self) -> ReceiverPolicy {
        ReceiverPolicy::new((0..self.hubs.len()).map(hub_id), [alice_id()], self.params.k_b)
    }

    fn usage(&self) -> Vec<(usize, Node, bool, u64)> {
        let mut out = Vec::new();
        for (i, hub) in self.hubs.iter().enumerate() {
            for (node, client) in [(Node::Alice, &self.alice), (Node::Bob, &self.bob)] {
                let hub_used = hub.table(client.id()).map_or(0, |t| t.used_bytes());
                let client_used = client.table(hub.id()).map_or(0, |t| t.used_bytes());
                out.push((i, node, true, hub_used));
                out.push((i, node, false, client_used));
            }
        }
        out
    }

    fn note(&mut self, st: &mut RunState, link: Link, event: &'static str, detail: String) {
        self.step += 1;
        st.trace.push(TraceEvent { step: self.step, link, event, detail });
    }

    fn send(&mut self, st: &mut RunState, link: Link, message: &Message) {
        let bytes = match encode(message) {
            Ok(b) => b,
            Err(e) => {
                self.note(st, link, "reject", format!("{} {e}", variant_name(&e)));
                return;
            }
        };
        let seq = st.seq.entry(link).or_default();
        let this = *seq;
        *seq += 1;
        st.ledger.frames += 1;
        st.ledger.frame_bytes += bytes.len();
        self.note(st, link, "send", format!("{} #{this} {}", message_name(message), digest(&bytes)));
        self.captured.push(CapturedFrame { run: self.runs, link, bytes: bytes.clone() });
        st.queue.push_back(Frame { link, bytes, seq: Some(this) });
    }

    fn transmit(&mut self, st: &mut RunState, script: &AdversaryScript, frame: Frame) {
        let Some(seq) = frame.seq else {
            self.deliver(st, script, frame.link, &frame.bytes);
            return;
        };
        let link = frame.link;
        match script.action_for(link, seq) {
            LinkAction::Deliver => self.deliver(st, script, link, &frame.bytes),
            LinkAction::Drop => self.note(st, link, "drop", format!("#{seq}")),
            LinkAction::Corrupt(positions) => {
                let mut bytes = frame.bytes;
                for &p in &positions {
                    if let Some(b) = bytes.get_mut(p) {
                        *b ^= 0x01;
                    }
                }
                self.note(st, link, "corrupt", format!("#{seq} {}", digest(&bytes)));
                self.deliver(st, script, link, &bytes);
            }
            LinkAction::Replay => {
                self.note(st, link, "replay", format!("#{seq}"));
                self.deliver(st, script, link, &frame.bytes);
                st.queue.push_back(Frame { link, bytes: frame.bytes, seq: None });
            }
            LinkAction::Inject(extra) => {
                self.note(st, link, "inject", format!("after #{seq} {}", digest(&extra)));
                self.deliver(st, script, link, &frame.bytes);
                st.queue.push_back(Frame { link, bytes: extra, seq: None });
            }
            LinkAction::Reorder => {
                self.note(st, link, "reorder", format!("#{seq}"));
                st.queue.push_back(Frame { link, bytes: frame.bytes, seq: None });
            }
        }
    }

    fn deliver(&mut self, st: &mut RunState, script: &AdversaryScript, link: Link, bytes: &[u8]) {
        let message = match decode(bytes) {
            Ok(m) => m,
            Err(e) => {
                self.note(st, link, "reject", format!("Malformed {e}"));
                return;
            }
        };
        match (link.to, message) {
            (Node::Hub(i), Message::KeyRequest(req)) => self.hub_request(st, script, link, i, req),
            (Node::Hub(i), Message::IdentityQuery(q)) => {
                let hub = &self.hubs[i];
                let response = if script.compromised.contains(&i) && script.strategy() == Strategy::LieIdentity {
                    st.ledger.identity_lies.push((i, FALSE_RECORD.to_vec()));
                    hub.identity_response(q.querier, q.subject, FALSE_RECORD.to_vec())
                } else {
                    hub.handle_identity_query(&q)
                };
                match response {
                    Ok(r) => {
                        self.note(st, link, "accept", "IdentityQuery".into());
                        self.send(st, Link::new(Node::Hub(i), Node::Alice), &Message::IdentityResponse(r));
                    }
                    Err(e) => self.note(st, link, "reject", format!("{} {e}", variant_name(&e))),
                }
            }
            (Node::Alice, Message::IdentityResponse(r)) => {
                self.note(st, link, "accept", "IdentityResponse".into());
                st.identity_responses.push(r);
            }
            (Node::Bob, Message::KeyInstruction(ins)) => {
                let policy = self.policy();
                let result = if ins.key_tag.is_some() {
                    self.bob.receive_instruction(&ins, &policy)
                } else {
                    self.bob.adapted_receive(&ins, &policy)
                };
                match result {
                    Ok(x) => {
                        if ins.key_tag.is_none() {
                            st.second_key = Some(ins.key_id);
                        }
                        self.note(st, link, "accept", format!("KeyInstruction x={x} key={}", ins.key_id));
                    }
                    Err(e) => self.note(st, link, "reject", format!("{} {e}", variant_name(&e))),
                }
            }
            (Node::Alice, Message::Negotiation(msg)) => match self.alice.adapted_finalize(&msg) {
                Ok(fin) => {
                    self.note(st, link, "accept", format!("Negotiation shares={}", msg.share_tags.len()));
                    let key = self.alice.keystore().take(&fin.key_id).unwrap_or_default();
                    st.finalized = Some(Ok((fin.accepted.clone(), key)));
                    self.send(st, Link::new(Node::Alice, Node::Bob), &Message::Finalize(fin));
                }
                Err(reason) => {
                    self.note(st, link, "reject", format!("{} {reason}", variant_name(&reason)));
                    st.finalized = Some(Err((variant_name(&reason), reason.to_string())));
                }
            },
            (Node::Bob, Message::Finalize(msg)) => {
                let key = self.bob.adapted_complete(&msg, alice_id());
                match key.abort_reason() {
                    None => self.note(st, link, "accept", "Finalize".into()),
                    Some(r) => self.note(st, link, "reject", format!("{} {r}", variant_name(r))),
                }
                st.completed = Some(key);
            }
            (_, other) => self.note(st, link, "reject", format!("Unexpected {}", message_name(&other))),
        }
    }

    fn hub_request(&mut self, st: &mut RunState, script: &AdversaryScript, link: Link, i: usize, req: KeyRequest) {
        let out = Link::new(Node::Hub(i), Node::Bob);
        if !script.compromised.contains(&i) {
            match self.hubs[i].handle_key_request(&req) {
                Ok(ins) => {
                    self.note(st, link, "accept", format!("KeyRequest x={}", req.x_coord));
                    self.send(st, out, &Message::KeyInstruction(ins));
                }
                Err(e) => self.note(st, link, "reject", format!("{} {e}", variant_name(&e))),
            }
            return;
        }
        let mut share = match self.hubs[i].open_request(&req) {
            Ok(s) => s,
            Err(e) => {
                self.note(st, link, "reject", format!("{} {e}", variant_name(&e)));
                return;
            }
        };
        self.note(st, link, "accept", format!("KeyRequest x={}", req.x_coord));
        st.ledger.shares.entry(share.key_id).or_default().insert(share.x_coord, share.share.clone());
        st.meta.insert(share.key_id, (share.n, share.k, share.scheme, share.key_tag));
        let second_pass = share.key_tag.is_none();
        match script.strategy() {
            Strategy::Passive | Strategy::LieIdentity => {}
            Strategy::Drop => {
                self.note(st, out, "withhold", format!("x={}", share.x_coord));
                return;
            }
            Strategy::FakeGroup | Strategy::KnownSecret if !second_pass => {
                st.pending.entry(share.key_id).or_default().insert(i, share);
                return;
            }
            Strategy::Corrupt | Strategy::FakeGroup | Strategy::KnownSecret => {
                self.corrupt_share(&mut share);
                self.note(st, out, "forge", format!("corrupt x={}", share.x_coord));
            }
        }
        self.forward(st, i, share);
    }

    fn forward(&mut self, st: &mut RunState, i: usize, share: ForwardedShare) {
        let out = Link::new(Node::Hub(i), Node::Bob);
        match self.hubs[i].forward(share) {
            Ok(ins) => self.send(st, out, &Message::KeyInstruction(ins)),
            Err(e) => self.note(st, out, "reject", format!("{} {e}", variant_name(&e))),
        }
    }

    fn corrupt_share(&mut self, share: &mut ForwardedShare) {
        if share.share.is_empty() {
            return;
        }
        let pos = self.rng.gen_range(0..share.share.len());
        share.share[pos] ^= self.rng.gen_range(1..=255u8);
    }

    /// Releases withheld shares once the network is quiet. Returns whether
    /// anything was sent.
    fn flush_adversary(&mut self, st: &mut RunState, script: &AdversaryScript) -> bool {
        let pending = std::mem::take(&mut st.pending);
        if pending.is_empty() {
            return false;
        }
        for (_, withheld) in pending {
            let forged = match script.strategy() {
                Strategy::KnownSecret => self.known_secret(withheld),
                _ => self.fake_group(withheld),
            };
            for (i, share, how) in forged {
                self.note(st, Link::new(Node::Hub(i), Node::Bob), "forge", format!("{how} x={}", share.x_coord));
                self.forward(st, i, share);
            }
        }
        true
    }

    /// Shares of a fresh secret with threshold k_B and a key tag that
    /// matches it.
    fn fake_group(&mut self, withheld: BTreeMap<usize, ForwardedShare>) -> Vec<(usize, ForwardedShare, &'static str)> {
        let Some(first) = withheld.values().next() else { return Vec::new() };
        let len = first.share.len();
        let k_fake = self.params.k_b.clamp(1, first.n.max(1));
        let mut secret = vec![0u8; len];
        self.rng.fill_bytes(&mut secret);
        let bundle = SecretBundle::new(secret);
        let Some(tag_key) = bundle.tag_key() else { return Vec::new() };
        let tag = compute_tag(&tag_key, bundle.key_bits());
        let xs: Vec<Gf256> = withheld.values().map(|s| s.x_coord).collect();
        let free = (k_fake as usize - 1).min(xs.len());
        let anchors: Vec<Vec<u8>> = (0..free)
            .map(|_| {
                let mut y = vec![0u8; len];
                self.rng.fill_bytes(&mut y);
                y
            })
            .collect();
        let shares = fake_polynomial(bundle.as_bytes(), &xs, &anchors);
        withheld
            .into_iter()
            .zip(shares)
            .map(|((i, mut s), data)| {
                s.k = k_fake;
                s.scheme = SchemeKind::Shamir;
                s.key_tag = Some(tag);
                s.share = data;
                (i, s, "fake-group")
            })
            .collect()
    }

    /// With at least k shares: shares of a secret of the adversary's
    /// choosing whose key tag equals the real one, changing as few shares
    /// as possible (k - 1 stay genuine). Otherwise corrupts.
    fn known_secret(&mut self, withheld: BTreeMap<usize, ForwardedShare>) -> Vec<(usize, ForwardedShare, &'static str)> {
        let Some(first) = withheld.values().next() else { return Vec::new() };
        let (n, k, scheme, tag) = (first.n, first.k, first.scheme, first.key_tag);
        let len = first.share.len();
        let real = SchemeParams::new(n, k, scheme).ok().and_then(|p| {
            let shares: Vec<Share> = withheld.values().take(k as usize).map(|s| Share { x: s.x_coord, data: s.share.clone() }).collect();
            (shares.len() == k as usize).then(|| reconstruct(&p, &shares).ok()).flatten()
        });
        let (Some(_), Some(tag)) = (real, tag) else {
            return withheld
                .into_iter()
                .map(|(i, mut s)| {
                    self.corrupt_share(&mut s);
                    (i, s, "corrupt")
                })
                .collect();
        };
        // u' = (kappa', beta') with beta' chosen so that S' gets the real tag.
        let mut chosen = vec![0u8; len - TAG_KEY_LEN];
        self.rng.fill_bytes(&mut chosen);
        let kappa = Gf64(self.rng.next_u64());
        let beta = Gf64(tag.to_u64()) + poly_hash(kappa, Gf64::ZERO, &chosen);
        let fake_key = TagKey::new(kappa, beta);
        debug_assert!(verify_tag(&fake_key, &chosen, &tag));
        let mut secret = fake_key.to_bytes().to_vec();
        secret.extend_from_slice(&chosen);

        let xs: Vec<Gf256> = withheld.values().map(|s| s.x_coord).collect();
        let genuine: Vec<Vec<u8>> = withheld.values().take(k as usize - 1).map(|s| s.share.clone()).collect();
        let shares = match scheme {
            SchemeKind::Shamir => fake_polynomial(&secret, &xs, &genuine),
            SchemeKind::Xor => {
                let mut last = secret.clone();
                for y in &genuine {
                    last.iter_mut().zip(y).for_each(|(a, b)| *a ^= b);
                }
                let mut out = genuine;
                out.push(last);
                out
            }
        };
        withheld
            .into_iter()
            .zip(shares)
            .map(|((i, mut s), data)| {
                s.share = data;
                (i, s, "known-secret")
            })
            .collect()
    }

    fn settle(&mut self, st: &mut RunState, script: &AdversaryScript) {
        loop {
            while let Some(frame) = st.queue.pop_front() {
                self.transmit(st, script, frame);
            }
            if !self.flush_adversary(st, script) {
                break;
            }
        }
    }

    /// Keys the adversary can rebuild from what compromised hubs saw and
    /// confirm against the key tag.
    fn recover(st: &mut RunState) {
        for (id, shares) in &st.ledger.shares {
            let Some(&(n, k, scheme, Some(tag))) = st.meta.get(id) else { continue };
            let Ok(params) = SchemeParams::new(n, k, scheme) else { continue };
            if shares.len() < params.k() {
                continue;
            }
            let subset: Vec<Share> =
                shares.iter().take(params.k()).map(|(&x, y)| Share { x, data: y.clone() }).collect();
            let Ok(bundle) = reconstruct(&params, &subset) else { continue };
            if bundle.tag_key().is_some_and(|u| verify_tag(&u, bundle.key_bits(), &tag)) {
                st.ledger.recovered.insert(*id, bundle.key_bits().to_vec());
            }
        }
    }

    fn finish(&mut self, mut st: RunState, name: &str, before: Vec<(usize, Node, bool, u64)>) -> RunReportParts {
        Self::recover(&mut st);
        let after = self.usage();
        let accounting = after
            .iter()
            .zip(&before)
            .map(|(&(hub, client, hub_copy, total), &(_, _, _, prev))| TableUsage {
                hub,
                client,
                hub_copy,
                delta: total - prev,
                total,
            })
            .collect();
        RunReportParts { name: name.to_string(), trace: st.trace, accounting, ledger: st.ledger }
    }

    /// Runs one key agreement to completion under `script`.
    pub fn run(&mut self, name: &str, script: &AdversaryScript) -> RunReport {
        self.runs += 1;
        let before = self.usage();
        let mut st = RunState::default();
        let mut report = RunReport {
            name: name.to_string(),
            run: self.runs,
            params: self.params,
            key_id: None,
            alice: PartyOutcome::Idle,
            bob: PartyOutcome::Idle,
            accepted_shares: None,
            identity: None,
            trace: Vec::new(),
            accounting: Vec::new(),
            ledger: KnowledgeLedger::default(),
        };

        let mut hubs: Vec<usize> = (0..self.hubs.len()).collect();
        if self.params.identity {
            let query = Message::IdentityQuery(self.alice.identity_query(bob_id()));
            for &i in &hubs {
                self.send(&mut st, Link::new(Node::Alice, Node::Hub(i)), &query);
            }
            self.settle(&mut st, script);
            let responses = std::mem::take(&mut st.identity_responses);
            match self.alice.resolve_identity(bob_id(), &responses) {
                Ok(outcome) => {
                    let excluded: Vec<usize> =
                        hubs.iter().copied().filter(|&i| outcome.excluded.contains(&hub_id(i))).collect();
                    hubs.retain(|i| !excluded.contains(i));
                    if outcome.record != bob_id().to_string().into_bytes() {
                        report.alice = PartyOutcome::Failed("identity record is not the responder's".into());
                    }
                    report.identity = Some(IdentityReport::Settled { record: outcome.record, excluded });
                }
                Err(e) => {
                    report.identity = Some(IdentityReport::NoConsensus);
                    report.alice = PartyOutcome::Failed(e.to_string());
                }
            }
        }

        if report.alice == PartyOutcome::Idle {
            self.key_agreement(&mut st, script, &hubs, &mut report);
        }

        let parts = self.finish(st, name, before);
        report.trace = parts.trace;
        report.accounting = parts.accounting;
        report.ledger = parts.ledger;
        report.ledger.tables =
            script.compromised.iter().flat_map(|&h| [(h, Node::Alice), (h, Node::Bob)]).collect();
        report
    }

    fn key_agreement(&mut self, st: &mut RunState, script: &AdversaryScript, hubs: &[usize], report: &mut RunReport) {
        let p = self.params;
        let hub_ids: Vec<PartyId> = hubs.iter().map(|&i| hub_id(i)).collect();
        let index: BTreeMap<PartyId, usize> = hubs.iter().map(|&i| (hub_id(i), i)).collect();
        let scheme = match SchemeParams::new(hubs.len() as u16, p.k, p.scheme) {
            Ok(s) => s,
            Err(e) => {
                report.alice = PartyOutcome::Failed(e.to_string());
                return;
            }
        };
        let started = if p.adapted {
            self.alice.adapted_bootstrap(bob_id(), scheme, &hub_ids, &mut self.rng)
        } else {
            self.alice.initiate_key_agreement(bob_id(), scheme, p.m, &hub_ids, &mut self.rng)
        };
        let init = match started {
            Ok(i) => i,
            Err(e) => {
                report.alice = PartyOutcome::Failed(e.to_string());
                return;
            }
        };
        report.key_id = Some(init.key_id);
        for (hub, req) in &init.requests {
            self.send(st, Link::new(Node::Alice, Node::Hub(index[hub])), &Message::KeyRequest(req.clone()));
        }
        self.settle(st, script);
        let policy = self.policy();
        let first = self.bob.reconstruct_and_validate(init.key_id, &policy);

        if !p.adapted {
            report.alice = PartyOutcome::Agreed { key: init.bundle.key_bits().to_vec() };
            report.bob = outcome_of(&first);
            return;
        }
        if !first.is_agreed() {
            report.bob = outcome_of(&first);
            return;
        }

        // Adapted second pass over the bootstrap key.
        let n = hubs.len();
        let xs = (1..=n as u8).map(Gf256);
        let installed = self
            .alice
            .install_bootstrap(bob_id(), init.key_id, n, xs.zip(hub_ids.iter().copied()), p.k)
            .and_then(|()| {
                self.bob.install_bootstrap(
                    alice_id(),
                    init.key_id,
                    n,
                    first.x_coords.iter().copied().zip(first.hubs.iter().copied()),
                    p.k,
                )
            });
        if let Err(e) = installed {
            report.alice = PartyOutcome::Failed(e.to_string());
            return;
        }
        let second = match self.alice.adapted_distribute(bob_id(), p.m, &mut self.rng) {
            Ok(s) => s,
            Err(e) => {
                report.alice = PartyOutcome::Failed(e.to_string());
                return;
            }
        };
        report.key_id = Some(second.key_id);
        for (hub, req) in &second.requests {
            self.send(st, Link::new(Node::Alice, Node::Hub(index[hub])), &Message::KeyRequest(req.clone()));
        }
        self.settle(st, script);
        let key = st.second_key.unwrap_or(second.key_id);
        match self.bob.adapted_negotiate(key, alice_id(), &policy) {
            Ok(msg) => {
                self.send(st, Link::new(Node::Bob, Node::Alice), &Message::Negotiation(msg));
                self.settle(st, script);
            }
            Err(reason) => {
                report.bob = PartyOutcome::Aborted { reason: variant_name(&reason), detail: reason.to_string() };
                return;
            }
        }
        report.alice = match st.finalized.take() {
            Some(Ok((accepted, key))) => {
                report.accepted_shares = Some(accepted);
                PartyOutcome::Agreed { key }
            }
            Some(Err((reason, detail))) => PartyOutcome::Aborted { reason, detail },
            None => PartyOutcome::Aborted { reason: "NoNegotiation".into(), detail: "negotiation never arrived".into() },
        };
        report.bob = match st.completed.take() {
            Some(k) => outcome_of(&k),
            None => PartyOutcome::Aborted { reason: "NoFinalize".into(), detail: "finalize never arrived".into() },
        };
    }

    /// Puts `bytes` on `link` outside any key agreement and runs to
    /// quiescence. Used to replay captured frames.
    pub fn inject(&mut self, name: &str, link: Link, bytes: Vec<u8>) -> RunReport {
        self.runs += 1;
        let before = self.usage();
        let mut st = RunState::default();
        let script = AdversaryScript::honest();
        self.note(&mut st, link, "inject", digest(&bytes));
        st.queue.push_back(Frame { link, bytes, seq: None });
        self.settle(&mut st, &script);
        let parts = self.finish(st, name, before);
        RunReport {
            name: parts.name,
            run: self.runs,
            params: self.params,
            key_id: None,
            alice: PartyOutcome::Idle,
            bob: PartyOutcome::Idle,
            accepted_shares: None,
            identity: None,
            trace: parts.trace,
            accounting: parts.accounting,
            ledger: parts.ledger,
        }
    }
}

struct RunReportParts {
    name: String,
    trace: Vec<TraceEvent>,
    accounting: Vec<TableUsage>,
    ledger: KnowledgeLedger,
}

/// Values at `xs` of the polynomial through (0, secret) and
/// (xs[i], anchors[i]) for each anchor.
fn fake_polynomial(secret: &[u8], xs: &[Gf256], anchors: &[Vec<u8>]) -> Vec<Vec<u8>> {
    let mut anchor_xs = vec![Gf256(0)];
    anchor_xs.extend_from_slice(&xs[..anchors.len()]);
    let interp = Interpolator::through_secret(&anchor_xs).expect("distinct coordinates");
    let mut ys: Vec<&[u8]> = vec![secret];
    ys.extend(anchors.iter().map(|y| y.as_slice()));
    xs.iter().map(|&x| interp.evaluate(&ys, x)).collect()
}

fn outcome_of(key: &AgreedKey) -> PartyOutcome {
    match key.abort_reason() {
        None => PartyOutcome::Agreed { key: key.secret.clone() },
        Some(r) => PartyOutcome::Aborted { reason: variant_name(r), detail: r.to_string() },
    }
}

fn message_name(m: &Message) -> &'static str {
    match m {
        Message::KeyRequest(_) => "KeyRequest",
        Message::KeyInstruction(_) => "KeyInstruction",
        Message::IdentityQuery(_) => "IdentityQuery",
        Message::IdentityResponse(_) => "IdentityResponse",
        Message::Negotiation(_) => "Negotiation",
        Message::Finalize(_) => "Finalize",
    }
}

/// One run on freshly provisioned tables.
pub fn run_scenario(name: &str, params: &RunParams, script: &AdversaryScript) -> RunReport {
    Simulation::new(params, 1).run(name, script)
}

/// Re-sends a captured frame on `link` in a later run of the same simulation.
pub fn replay_attack(sim: &mut Simulation, frame: &CapturedFrame, link: Link) -> RunReport {
    sim.inject("replay", link, frame.bytes.clone())
}
