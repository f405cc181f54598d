//! Initiator and responder state machines.
//!
//! General protocol: the initiator fixes the first k shares to fresh table
//! bytes (so those travel without ciphertext), derives the rest, and sends
//! one request per hub. The responder collects instructions, reconstructs
//! one candidate from k shares, cross-checks the others and validates the
//! candidate against the key tag. Only if some share disagrees does it
//! fall back to trying every k-subset.
//!
//! Adapted protocol: a first general run agrees a bootstrap key of
//! l(n+2) bytes. Later keys are sent as raw pass-through shares; the
//! responder tags each share it holds with its own bootstrap slot, the
//! initiator XORs together the shares whose tags check out and sends back
//! the list with a key tag.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::RngCore;
use thiserror::Error;

use crate::auth_tags::{compute_tag, verify_tag, Tag, TagKey, TAG_KEY_LEN};
use crate::finite_field::Gf256;
use crate::hub::{xor, Hub, HubError};
use crate::ids::{KeyId, PartyId};
use crate::keystore::Keystore;
use crate::psk_table::{PskError, PskTable, Region};
use crate::secret_sharing::{complete_shares, Interpolator, SchemeKind, SchemeParams, SecretBundle, Share, SharingError};
use crate::wire::{
    Authenticated, FinalizeMessage, IdentityQuery, IdentityResponse, KeyInstruction, KeyRequest, NegotiationMessage,
};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("no table shared with hub {0}")]
    UnknownHub(PartyId),
    #[error("table belongs to client {found}, not {expected}")]
    WrongClient { expected: PartyId, found: PartyId },
    #[error("table exhausted: requested {requested}, largest free range {available}")]
    TableExhausted { requested: u64, available: u64 },
    #[error("bad parameters: {0}")]
    BadParams(String),
    #[error("no bootstrap key shared with {0}")]
    NoBootstrap(PartyId),
    #[error("unknown key {0}")]
    UnknownKey(KeyId),
    #[error(transparent)]
    Sharing(#[from] SharingError),
    #[error(transparent)]
    Table(PskError),
}

impl From<PskError> for ClientError {
    fn from(e: PskError) -> Self {
        match e {
            PskError::TableExhausted { requested, available } => ClientError::TableExhausted { requested, available },
            other => ClientError::Table(other),
        }
    }
}

/// Why an instruction was discarded.
#[derive(Debug, Error)]
pub enum ReceiveError {
    #[error("hub {0} is not accepted")]
    HubNotAccepted(PartyId),
    #[error("sender {0} is not accepted")]
    SenderNotAccepted(PartyId),
    #[error("parameters out of range: {0}")]
    ParamsOutOfRange(String),
    #[error("referenced range [{start}, +{len}) already used")]
    OverlapDetected { start: u64, len: u64 },
    #[error("message tag invalid")]
    TagInvalid,
    #[error("hub {0} already delivered a share for this key")]
    DuplicateShare(PartyId),
    #[error(transparent)]
    Table(PskError),
}

impl From<PskError> for ReceiveError {
    fn from(e: PskError) -> Self {
        match e {
            PskError::OverlapDetected { start, len } => ReceiveError::OverlapDetected { start, len },
            other => ReceiveError::Table(other),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AbortReason {
    #[error("insufficient shares: have {have}, need {need}")]
    InsufficientShares { have: usize, need: usize },
    #[error("{candidates} distinct valid candidates: injection detected")]
    InjectionDetected { candidates: usize },
    #[error("no candidate matches its key tag")]
    NoValidCandidate,
    #[error("insufficient valid shares: have {have}, need {need}")]
    InsufficientValidShares { have: usize, need: usize },
    #[error("message tag invalid")]
    TagInvalid,
    #[error("accepted list is not a subset of the shares held")]
    NotSubset,
    #[error("no shares received for this key")]
    UnknownKey,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum KeyStatus {
    Agreed,
    Aborted(AbortReason),
}

/// Outcome of a key agreement on the responder side.
#[derive(Clone, PartialEq, Eq)]
pub struct AgreedKey {
    pub key_id: KeyId,
    /// The key S; empty unless agreed.
    pub secret: Vec<u8>,
    /// Hubs whose shares are consistent with the agreed secret.
    pub hubs: Vec<PartyId>,
    pub x_coords: Vec<Gf256>,
    pub status: KeyStatus,
}

impl std::fmt::Debug for AgreedKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AgreedKey")
            .field("key_id", &self.key_id)
            .field("len", &self.secret.len())
            .field("x_coords", &self.x_coords)
            .field("status", &self.status)
            .finish()
    }
}

impl AgreedKey {
    fn aborted(key_id: KeyId, reason: AbortReason) -> Self {
        AgreedKey { key_id, secret: Vec::new(), hubs: Vec::new(), x_coords: Vec::new(), status: KeyStatus::Aborted(reason) }
    }

    pub fn is_agreed(&self) -> bool {
        self.status == KeyStatus::Agreed
    }

    pub fn abort_reason(&self) -> Option<&AbortReason> {
        match &self.status {
            KeyStatus::Aborted(r) => Some(r),
            KeyStatus::Agreed => None,
        }
    }
}

/// Responder-side acceptance rules.
#[derive(Debug, Clone)]
pub struct ReceiverPolicy {
    pub accepted_hubs: BTreeSet<PartyId>,
    pub accepted_senders: BTreeSet<PartyId>,
    /// Smallest threshold k the responder accepts.
    pub k_b: u16,
    pub min_n: u16,
    pub max_n: u16,
}

impl ReceiverPolicy {
    pub fn new(hubs: impl IntoIterator<Item = PartyId>, senders: impl IntoIterator<Item = PartyId>, k_b: u16) -> Self {
        ReceiverPolicy {
            accepted_hubs: hubs.into_iter().collect(),
            accepted_senders: senders.into_iter().collect(),
            k_b: k_b.max(1),
            min_n: 1,
            max_n: 255,
        }
    }
}

/// A share as held by the responder after decryption.
#[derive(Debug, Clone)]
pub struct ReceivedShare {
    pub hub: PartyId,
    pub sender: PartyId,
    pub n: u16,
    pub k: u16,
    pub scheme: SchemeKind,
    pub key_tag: Option<Tag>,
    pub share: Share,
}

/// Initiator output: one request per hub, in hub order.
#[derive(Debug)]
pub struct Initiated {
    pub key_id: KeyId,
    pub requests: Vec<(PartyId, KeyRequest)>,
    pub bundle: SecretBundle,
}

/// Identity established by hub consensus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdentityOutcome {
    pub record: Vec<u8>,
    pub excluded: Vec<PartyId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IdentityError {
    #[error("no strict majority among {responders} valid responses")]
    NoConsensus { responders: usize },
}

/// Bootstrap key for the adapted protocol, split into n + 2 tag keys.
///
/// Slot i < n tags the share at x = i + 1 (responder), slot n tags the
/// negotiation message (responder), slot n + 1 the finalize message
/// (initiator). Each slot is used at most once.
#[derive(Clone)]
pub struct BootstrapKey {
    bytes: Vec<u8>,
    n: usize,
    hubs: BTreeMap<Gf256, PartyId>,
    k: u16,
    used: Vec<bool>,
}

impl std::fmt::Debug for BootstrapKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BootstrapKey").field("hubs", &self.hubs).field("used", &self.used).finish()
    }
}

/// Bootstrap length m' for `n` hubs.
pub fn bootstrap_len(n: usize) -> usize {
    TAG_KEY_LEN * (n + 2)
}

impl BootstrapKey {
    /// `hubs` maps each first-pass x-coordinate to the hub that carried
    /// it; the responder may know only some of them.
    pub fn new(bytes: Vec<u8>, n: usize, hubs: BTreeMap<Gf256, PartyId>, k: u16) -> Result<Self, ClientError> {
        if bytes.len() != bootstrap_len(n) {
            return Err(ClientError::BadParams(format!(
                "bootstrap key for {n} hubs must be {} bytes, got {}",
                bootstrap_len(n),
                bytes.len()
            )));
        }
        if hubs.keys().any(|x| x.value() == 0 || x.value() as usize > n) {
            return Err(ClientError::BadParams("first-pass coordinate outside 1..=n".into()));
        }
        let used = vec![false; n + 2];
        Ok(BootstrapKey { bytes, n, hubs, k, used })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> u16 {
        self.k
    }

    pub fn hubs(&self) -> &BTreeMap<Gf256, PartyId> {
        &self.hubs
    }

    /// Slot boundaries as `(start, end)` byte offsets.
    pub fn slot_range(&self, slot: usize) -> (usize, usize) {
        (slot * TAG_KEY_LEN, (slot + 1) * TAG_KEY_LEN)
    }

    /// Takes a slot, or `None` if it was already used or does not exist.
    fn take_slot(&mut self, slot: usize) -> Option<TagKey> {
        if slot >= self.used.len() || self.used[slot] {
            return None;
        }
        self.used[slot] = true;
        let (s, e) = self.slot_range(slot);
        Some(TagKey::from_bytes(&self.bytes[s..e]))
    }

    fn share_slot(&self, x: Gf256) -> Option<usize> {
        let slot = (x.value() as usize).checked_sub(1)?;
        (slot < self.n()).then_some(slot)
    }

    /// Bytes of the responder's slots used so far.
    pub fn responder_bytes_used(&self) -> usize {
        self.used[..=self.n()].iter().filter(|&&u| u).count() * TAG_KEY_LEN
    }

    /// Bytes of the initiator's slot used so far.
    pub fn initiator_bytes_used(&self) -> usize {
        usize::from(self.used[self.n() + 1]) * TAG_KEY_LEN
    }
}

struct AdaptedSent {
    peer: PartyId,
    shares: BTreeMap<Gf256, Vec<u8>>,
}

pub struct Client {
    id: PartyId,
    tables: BTreeMap<PartyId, PskTable>,
    inbox: HashMap<KeyId, Vec<ReceivedShare>>,
    adapted_inbox: HashMap<KeyId, Vec<ReceivedShare>>,
    adapted_sent: HashMap<KeyId, AdaptedSent>,
    bootstraps: HashMap<PartyId, BootstrapKey>,
    keystore: Keystore,
    excluded: BTreeSet<PartyId>,
    next_index: u64,
}

impl std::fmt::Debug for Client {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Client").field("id", &self.id).field("hubs", &self.tables.len()).finish_non_exhaustive()
    }
}

impl Client {
    pub fn new(id: PartyId) -> Self {
        Client {
            id,
            tables: BTreeMap::new(),
            inbox: HashMap::new(),
            adapted_inbox: HashMap::new(),
            adapted_sent: HashMap::new(),
            bootstraps: HashMap::new(),
            keystore: Keystore::new(),
            excluded: BTreeSet::new(),
            next_index: 0,
        }
    }

    pub fn id(&self) -> PartyId {
        self.id
    }

    /// Installs the client's copy of the table shared with `table.hub_id()`.
    pub fn add_table(&mut self, table: PskTable) -> Result<(), ClientError> {
        if table.client_id() != self.id {
            return Err(ClientError::WrongClient { expected: self.id, found: table.client_id() });
        }
        self.tables.insert(table.hub_id(), table);
        Ok(())
    }

    pub fn table(&self, hub: PartyId) -> Option<&PskTable> {
        self.tables.get(&hub)
    }

    pub fn table_mut(&mut self, hub: PartyId) -> Option<&mut PskTable> {
        self.tables.get_mut(&hub)
    }

    pub fn hubs(&self) -> impl Iterator<Item = PartyId> + '_ {
        self.tables.keys().copied()
    }

    /// Hubs excluded after disagreeing with an identity consensus.
    pub fn excluded_hubs(&self) -> &BTreeSet<PartyId> {
        &self.excluded
    }

    pub fn keystore(&mut self) -> &mut Keystore {
        &mut self.keystore
    }

    pub fn bootstrap(&self, peer: PartyId) -> Option<&BootstrapKey> {
        self.bootstraps.get(&peer)
    }

    fn fresh_key_id(&mut self, rng: &mut dyn RngCore) -> KeyId {
        let mut nonce = [0u8; 16];
        rng.fill_bytes(&mut nonce);
        let index = self.next_index;
        self.next_index += 1;
        KeyId { nonce, index }
    }

    fn check_hubs(&self, hubs: &[PartyId]) -> Result<(), ClientError> {
        let distinct: BTreeSet<_> = hubs.iter().collect();
        if distinct.len() != hubs.len() {
            return Err(ClientError::BadParams("hub list contains duplicates".into()));
        }
        if hubs.len() > 255 {
            return Err(ClientError::BadParams("at most 255 hubs".into()));
        }
        match hubs.iter().find(|h| !self.tables.contains_key(h)) {
            Some(&h) => Err(ClientError::UnknownHub(h)),
            None => Ok(()),
        }
    }

    /// Takes `len` bytes of pad and one tag key from the table shared with `hub`.
    fn allocate_pair(&mut self, hub: PartyId, len: usize) -> Result<(crate::psk_table::KeySlice, TagKey, crate::psk_table::SliceRef), ClientError> {
        let table = self.tables.get_mut(&hub).ok_or(ClientError::UnknownHub(hub))?;
        let pad = table.allocate_from(Region::ClientOriginated, len as u64)?;
        let tag = table.allocate_from(Region::ClientOriginated, TAG_KEY_LEN as u64)?;
        Ok((pad, TagKey::from_bytes(&tag.bytes), tag.slice_ref()))
    }

    /// Starts a key agreement with `receiver` for an `m`-byte key.
    ///
    /// Hub `hubs[i]` carries the share at x = i + 1. The key S is also
    /// placed in this client's keystore.
    pub fn initiate_key_agreement(
        &mut self,
        receiver: PartyId,
        params: SchemeParams,
        m: usize,
        hubs: &[PartyId],
        rng: &mut dyn RngCore,
    ) -> Result<Initiated, ClientError> {
        if hubs.len() != params.n() {
            return Err(ClientError::BadParams(format!("{} hubs for n = {}", hubs.len(), params.n())));
        }
        self.check_hubs(hubs)?;
        let key_id = self.fresh_key_id(rng);
        let share_len = m + TAG_KEY_LEN;

        let mut pads = Vec::with_capacity(hubs.len());
        for &hub in hubs {
            pads.push(self.allocate_pair(hub, share_len)?);
        }
        let fixed: Vec<Share> =
            pads.iter().take(params.k()).enumerate().map(|(i, (pad, _, _))| Share::new(i as u8 + 1, pad.bytes.clone())).collect();
        let (shares, bundle) = complete_shares(&params, &fixed)?;
        let tag_key = bundle.tag_key().expect("secret holds a tag key");
        let key_tag = compute_tag(&tag_key, bundle.key_bits());

        let requests = hubs
            .iter()
            .zip(pads)
            .zip(&shares)
            .enumerate()
            .map(|(i, ((&hub, (pad, msg_key, msg_tag_slice)), share))| {
                let encrypted_share = (i >= params.k()).then(|| xor(&share.data, &pad.bytes));
                let mut request = KeyRequest {
                    sender: self.id,
                    receiver,
                    key_id,
                    n: params.n() as u16,
                    k: params.k() as u16,
                    scheme: params.kind(),
                    x_coord: share.x,
                    share_slice: pad.slice_ref(),
                    encrypted_share,
                    key_tag: Some(key_tag),
                    msg_tag_slice,
                    message_tag: Tag::default(),
                };
                request.seal(&msg_key);
                (hub, request)
            })
            .collect();
        self.keystore.insert(key_id, bundle.key_bits().to_vec());
        Ok(Initiated { key_id, requests, bundle })
    }

    fn check_policy(&self, msg: &KeyInstruction, policy: &ReceiverPolicy) -> Result<SchemeParams, ReceiveError> {
        if !policy.accepted_hubs.contains(&msg.hub) || self.excluded.contains(&msg.hub) || !self.tables.contains_key(&msg.hub)
        {
            return Err(ReceiveError::HubNotAccepted(msg.hub));
        }
        if !policy.accepted_senders.contains(&msg.sender) {
            return Err(ReceiveError::SenderNotAccepted(msg.sender));
        }
        if msg.k < policy.k_b || msg.k > msg.n || msg.n < policy.min_n || msg.n > policy.max_n {
            return Err(ReceiveError::ParamsOutOfRange(format!(
                "n = {}, k = {} with k_B = {} and n in [{}, {}]",
                msg.n, msg.k, policy.k_b, policy.min_n, policy.max_n
            )));
        }
        let x = msg.x_coord.value() as u16;
        if x == 0 || x > msg.n {
            return Err(ReceiveError::ParamsOutOfRange(format!("x-coordinate {x} outside 1..={}", msg.n)));
        }
        if msg.share_slice.len < TAG_KEY_LEN as u64 {
            return Err(ReceiveError::ParamsOutOfRange("share shorter than the tag key".into()));
        }
        if msg.msg_tag_slice.len != TAG_KEY_LEN as u64 {
            return Err(ReceiveError::ParamsOutOfRange("message tag slice must be one tag key long".into()));
        }
        SchemeParams::new(msg.n, msg.k, msg.scheme).map_err(|e| ReceiveError::ParamsOutOfRange(e.to_string()))
    }

    /// Claims the referenced ranges, verifies the message tag and decrypts.
    fn open_instruction(&mut self, msg: &KeyInstruction) -> Result<Vec<u8>, ReceiveError> {
        let table = self.tables.get_mut(&msg.hub).ok_or(ReceiveError::HubNotAccepted(msg.hub))?;
        let pad = table.claim(&msg.share_slice)?;
        let tag_key = table.claim(&msg.msg_tag_slice)?;
        if !msg.verify(&TagKey::from_bytes(&tag_key.bytes)) {
            return Err(ReceiveError::TagInvalid);
        }
        Ok(xor(&msg.encrypted_share, &pad.bytes))
    }

    fn store(inbox: &mut HashMap<KeyId, Vec<ReceivedShare>>, msg: &KeyInstruction, data: Vec<u8>) -> Result<Gf256, ReceiveError> {
        let held = inbox.entry(msg.key_id).or_default();
        if held.iter().any(|s| s.hub == msg.hub) {
            return Err(ReceiveError::DuplicateShare(msg.hub));
        }
        held.push(ReceivedShare {
            hub: msg.hub,
            sender: msg.sender,
            n: msg.n,
            k: msg.k,
            scheme: msg.scheme,
            key_tag: msg.key_tag,
            share: Share { x: msg.x_coord, data },
        });
        Ok(msg.x_coord)
    }

    /// Accepts one instruction of the general protocol, returning the
    /// x-coordinate of the stored share.
    ///
    /// Policy checks happen before any table bytes are touched; after that
    /// the referenced ranges are consumed whether or not the tag verifies.
    pub fn receive_instruction(&mut self, msg: &KeyInstruction, policy: &ReceiverPolicy) -> Result<Gf256, ReceiveError> {
        self.check_policy(msg, policy)?;
        if msg.key_tag.is_none() {
            return Err(ReceiveError::ParamsOutOfRange("missing key tag".into()));
        }
        let data = self.open_instruction(msg)?;
        Self::store(&mut self.inbox, msg, data)
    }

    /// Shares held for `key_id` (general protocol).
    pub fn received(&self, key_id: &KeyId) -> &[ReceivedShare] {
        self.inbox.get(key_id).map_or(&[], |v| v.as_slice())
    }

    /// Reconstructs and validates the key from all shares held for `key_id`.
    ///
    /// Consumes the held shares. An agreed key is also placed in the keystore.
    pub fn reconstruct_and_validate(&mut self, key_id: KeyId, policy: &ReceiverPolicy) -> AgreedKey {
        let Some(shares) = self.inbox.remove(&key_id) else {
            return AgreedKey::aborted(key_id, AbortReason::InsufficientShares { have: 0, need: policy.k_b as usize });
        };
        let result = validate_shares(key_id, &shares, policy);
        if result.is_agreed() {
            self.keystore.insert(key_id, result.secret.clone());
        }
        result
    }

    /// Starts the adapted protocol's bootstrap: a general run for
    /// l(n+2) bytes. Both sides install the result with
    /// [`Client::install_bootstrap`].
    pub fn adapted_bootstrap(
        &mut self,
        receiver: PartyId,
        params: SchemeParams,
        hubs: &[PartyId],
        rng: &mut dyn RngCore,
    ) -> Result<Initiated, ClientError> {
        self.initiate_key_agreement(receiver, params, bootstrap_len(hubs.len()), hubs, rng)
    }

    /// Moves an agreed key out of the keystore and keeps it as the
    /// bootstrap key shared with `peer`. `hubs` pairs first-pass
    /// x-coordinates with the hubs that carried them.
    pub fn install_bootstrap(
        &mut self,
        peer: PartyId,
        key_id: KeyId,
        n: usize,
        hubs: impl IntoIterator<Item = (Gf256, PartyId)>,
        k: u16,
    ) -> Result<(), ClientError> {
        let bytes = self.keystore.take(&key_id).ok_or(ClientError::UnknownKey(key_id))?;
        self.bootstraps.insert(peer, BootstrapKey::new(bytes, n, hubs.into_iter().collect(), k)?);
        Ok(())
    }

    /// Second pass, initiator: one pass-through share of `m + l` bytes per
    /// first-pass hub, no key tag.
    pub fn adapted_distribute(&mut self, receiver: PartyId, m: usize, rng: &mut dyn RngCore) -> Result<Initiated, ClientError> {
        let boot = self.bootstraps.get(&receiver).ok_or(ClientError::NoBootstrap(receiver))?;
        let (n, k) = (boot.n() as u16, boot.k());
        if boot.hubs().len() != boot.n() {
            return Err(ClientError::BadParams("initiator bootstrap must name every first-pass hub".into()));
        }
        let hubs: Vec<(Gf256, PartyId)> = boot.hubs().iter().map(|(&x, &h)| (x, h)).collect();
        self.check_hubs(&hubs.iter().map(|&(_, h)| h).collect::<Vec<_>>())?;
        let key_id = self.fresh_key_id(rng);
        let mut shares = BTreeMap::new();
        let mut requests = Vec::with_capacity(hubs.len());
        for (x, hub) in hubs {
            let (pad, msg_key, msg_tag_slice) = self.allocate_pair(hub, m + TAG_KEY_LEN)?;
            let mut request = KeyRequest {
                sender: self.id,
                receiver,
                key_id,
                n,
                k,
                scheme: SchemeKind::Xor,
                x_coord: x,
                share_slice: pad.slice_ref(),
                encrypted_share: None,
                key_tag: None,
                msg_tag_slice,
                message_tag: Tag::default(),
            };
            request.seal(&msg_key);
            shares.insert(x, pad.bytes);
            requests.push((hub, request));
        }
        self.adapted_sent.insert(key_id, AdaptedSent { peer: receiver, shares });
        // Nothing is agreed until the responder's tags come back.
        Ok(Initiated { key_id, requests, bundle: SecretBundle::new(Vec::new()) })
    }

    /// Second pass, responder: accepts a pass-through share from a first-pass hub.
    pub fn adapted_receive(&mut self, msg: &KeyInstruction, policy: &ReceiverPolicy) -> Result<Gf256, ReceiveError> {
        let boot = self.bootstraps.get(&msg.sender).ok_or(ReceiveError::SenderNotAccepted(msg.sender))?;
        if boot.hubs().get(&msg.x_coord) != Some(&msg.hub) {
            return Err(ReceiveError::HubNotAccepted(msg.hub));
        }
        if msg.n as usize != boot.n() {
            return Err(ReceiveError::ParamsOutOfRange(format!("n = {} but the bootstrap covers {}", msg.n, boot.n())));
        }
        if !policy.accepted_senders.contains(&msg.sender) {
            return Err(ReceiveError::SenderNotAccepted(msg.sender));
        }
        if msg.k < policy.k_b || msg.k > msg.n {
            return Err(ReceiveError::ParamsOutOfRange(format!("k = {} with k_B = {}", msg.k, policy.k_b)));
        }
        if msg.key_tag.is_some() || msg.scheme != SchemeKind::Xor {
            return Err(ReceiveError::ParamsOutOfRange("second-pass shares carry no key tag".into()));
        }
        if msg.share_slice.len < TAG_KEY_LEN as u64 || msg.msg_tag_slice.len != TAG_KEY_LEN as u64 {
            return Err(ReceiveError::ParamsOutOfRange("slice lengths".into()));
        }
        if !self.tables.contains_key(&msg.hub) || self.excluded.contains(&msg.hub) {
            return Err(ReceiveError::HubNotAccepted(msg.hub));
        }
        let data = self.open_instruction(msg)?;
        Self::store(&mut self.adapted_inbox, msg, data)
    }

    /// Responder: tags every held share with its own bootstrap slot.
    pub fn adapted_negotiate(&mut self, key_id: KeyId, peer: PartyId, policy: &ReceiverPolicy) -> Result<NegotiationMessage, AbortReason> {
        let held = self.adapted_inbox.get(&key_id).map_or(&[][..], |v| v.as_slice());
        let k = held.first().map_or(policy.k_b, |s| s.k);
        let need = k.max(policy.k_b) as usize;
        if held.len() < need {
            let have = held.len();
            self.adapted_inbox.remove(&key_id);
            return Err(AbortReason::InsufficientValidShares { have, need });
        }
        let boot = self.bootstraps.get_mut(&peer).ok_or(AbortReason::UnknownKey)?;
        let mut share_tags = Vec::with_capacity(held.len());
        let mut ordered: Vec<&ReceivedShare> = held.iter().collect();
        ordered.sort_by_key(|s| s.share.x);
        for s in ordered {
            let slot = boot.share_slot(s.share.x).ok_or(AbortReason::UnknownKey)?;
            let key = boot.take_slot(slot).ok_or(AbortReason::TagInvalid)?;
            share_tags.push((s.share.x, compute_tag(&key, &s.share.data)));
        }
        let msg_key = boot.take_slot(boot.n()).ok_or(AbortReason::TagInvalid)?;
        let mut msg = NegotiationMessage { key_id, share_tags, message_tag: Tag::default() };
        msg.seal(&msg_key);
        Ok(msg)
    }

    /// Initiator: checks the responder's share tags, XORs the shares that
    /// verified and answers with the list and a key tag.
    pub fn adapted_finalize(&mut self, msg: &NegotiationMessage) -> Result<FinalizeMessage, AbortReason> {
        let sent = self.adapted_sent.remove(&msg.key_id).ok_or(AbortReason::UnknownKey)?;
        let boot = self.bootstraps.get_mut(&sent.peer).ok_or(AbortReason::UnknownKey)?;
        let msg_key = boot.take_slot(boot.n()).ok_or(AbortReason::TagInvalid)?;
        if !msg.verify(&msg_key) {
            return Err(AbortReason::TagInvalid);
        }
        let mut accepted = Vec::new();
        for (x, tag) in &msg.share_tags {
            let Some(slot) = boot.share_slot(*x) else { continue };
            let Some(key) = boot.take_slot(slot) else { continue };
            if let Some(share) = sent.shares.get(x) {
                if verify_tag(&key, share, tag) {
                    accepted.push(*x);
                }
            }
        }
        let need = boot.k() as usize;
        if accepted.len() < need {
            return Err(AbortReason::InsufficientValidShares { have: accepted.len(), need });
        }
        let secret = xor_shares(accepted.iter().map(|x| sent.shares[x].as_slice()));
        let bundle = SecretBundle::new(secret);
        let key_tag = compute_tag(&bundle.tag_key().expect("share holds a tag key"), bundle.key_bits());
        let finalize_key = boot.take_slot(boot.n() + 1).ok_or(AbortReason::TagInvalid)?;
        let mut out = FinalizeMessage { key_id: msg.key_id, accepted, key_tag, message_tag: Tag::default() };
        out.seal(&finalize_key);
        self.keystore.insert(msg.key_id, bundle.key_bits().to_vec());
        Ok(out)
    }

    /// Responder: checks the finalize message and recovers the key.
    pub fn adapted_complete(&mut self, msg: &FinalizeMessage, peer: PartyId) -> AgreedKey {
        let key_id = msg.key_id;
        let held = self.adapted_inbox.remove(&key_id).unwrap_or_default();
        let Some(boot) = self.bootstraps.get_mut(&peer) else {
            return AgreedKey::aborted(key_id, AbortReason::UnknownKey);
        };
        let Some(finalize_key) = boot.take_slot(boot.n() + 1) else {
            return AgreedKey::aborted(key_id, AbortReason::TagInvalid);
        };
        if !msg.verify(&finalize_key) {
            return AgreedKey::aborted(key_id, AbortReason::TagInvalid);
        }
        let distinct: BTreeSet<Gf256> = msg.accepted.iter().copied().collect();
        if distinct.len() != msg.accepted.len() {
            return AgreedKey::aborted(key_id, AbortReason::NotSubset);
        }
        let mut chosen = Vec::with_capacity(msg.accepted.len());
        for x in &msg.accepted {
            match held.iter().find(|s| s.share.x == *x) {
                Some(s) => chosen.push(s),
                None => return AgreedKey::aborted(key_id, AbortReason::NotSubset),
            }
        }
        let need = boot.k() as usize;
        if chosen.len() < need {
            return AgreedKey::aborted(key_id, AbortReason::InsufficientValidShares { have: chosen.len(), need });
        }
        let bundle = SecretBundle::new(xor_shares(chosen.iter().map(|s| s.share.data.as_slice())));
        let valid = bundle.tag_key().is_some_and(|u| verify_tag(&u, bundle.key_bits(), &msg.key_tag));
        if !valid {
            return AgreedKey::aborted(key_id, AbortReason::NoValidCandidate);
        }
        let secret = bundle.key_bits().to_vec();
        self.keystore.insert(key_id, secret.clone());
        AgreedKey {
            key_id,
            secret,
            hubs: chosen.iter().map(|s| s.hub).collect(),
            x_coords: msg.accepted.clone(),
            status: KeyStatus::Agreed,
        }
    }

    pub fn identity_query(&self, subject: PartyId) -> IdentityQuery {
        IdentityQuery { querier: self.id, subject }
    }

    /// Settles `subject`'s identity from hub responses.
    ///
    /// Responses that fail authentication are ignored. The record backed by
    /// a strict majority of the rest wins; hubs that answered differently
    /// are excluded from future use.
    pub fn resolve_identity(
        &mut self,
        subject: PartyId,
        responses: &[IdentityResponse],
    ) -> Result<IdentityOutcome, IdentityError> {
        let mut valid: BTreeMap<PartyId, Vec<u8>> = BTreeMap::new();
        for r in responses {
            if r.querier != self.id || r.subject != subject || self.excluded.contains(&r.hub) || valid.contains_key(&r.hub) {
                continue;
            }
            let Some(table) = self.tables.get_mut(&r.hub) else { continue };
            if r.msg_tag_slice.len != TAG_KEY_LEN as u64 {
                continue;
            }
            let Ok(key) = table.claim(&r.msg_tag_slice) else { continue };
            if r.verify(&TagKey::from_bytes(&key.bytes)) {
                valid.insert(r.hub, r.record.clone());
            }
        }
        let mut votes: BTreeMap<&[u8], usize> = BTreeMap::new();
        for record in valid.values() {
            *votes.entry(record.as_slice()).or_default() += 1;
        }
        let responders = valid.len();
        let winner = votes.into_iter().find(|&(_, count)| 2 * count > responders).map(|(r, _)| r.to_vec());
        let Some(record) = winner else {
            return Err(IdentityError::NoConsensus { responders });
        };
        let excluded: Vec<PartyId> = valid.iter().filter(|(_, r)| **r != record).map(|(&h, _)| h).collect();
        self.excluded.extend(excluded.iter().copied());
        Ok(IdentityOutcome { record, excluded })
    }

    /// Queries every hub in-process and settles the answer.
    pub fn query_peer_identity(&mut self, hubs: &[&Hub], subject: PartyId) -> Result<IdentityOutcome, IdentityError> {
        let query = self.identity_query(subject);
        let responses: Vec<IdentityResponse> = hubs
            .iter()
            .filter_map(|h| h.handle_identity_query(&query).map_err(|e: HubError| e).ok())
            .collect();
        self.resolve_identity(subject, &responses)
    }
}

fn xor_shares<'a>(shares: impl Iterator<Item = &'a [u8]>) -> Vec<u8> {
    let mut out: Vec<u8> = Vec::new();
    for s in shares {
        if out.is_empty() {
            out = s.to_vec();
        } else {
            out.iter_mut().zip(s).for_each(|(o, b)| *o ^= b);
        }
    }
    out
}

/// Shares that agree on every protocol parameter and on the key tag.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct GroupKey {
    sender: PartyId,
    n: u16,
    k: u16,
    scheme: u8,
    key_tag: [u8; 8],
    len: usize,
}

struct Candidate {
    bundle: SecretBundle,
    consistent: Vec<bool>,
}

/// Share members consistent with the polynomial through `subset`.
fn consistency(params: &SchemeParams, subset: &[&ReceivedShare], all: &[&ReceivedShare]) -> Vec<bool> {
    let xs: Vec<Gf256> = subset.iter().map(|s| s.share.x).collect();
    let ys: Vec<&[u8]> = subset.iter().map(|s| s.share.data.as_slice()).collect();
    let interp = match params.kind() {
        SchemeKind::Shamir => Interpolator::new(&xs).ok(),
        SchemeKind::Xor => None,
    };
    all.iter()
        .map(|s| {
            if let Some(pos) = xs.iter().position(|&x| x == s.share.x) {
                return ys[pos] == s.share.data.as_slice();
            }
            match &interp {
                Some(i) => i.evaluate(&ys, s.share.x) == s.share.data,
                None => false,
            }
        })
        .collect()
}

fn candidate_secret(params: &SchemeParams, subset: &[&ReceivedShare]) -> SecretBundle {
    match params.kind() {
        SchemeKind::Xor => SecretBundle::new(xor_shares(subset.iter().map(|s| s.share.data.as_slice()))),
        SchemeKind::Shamir => {
            let xs: Vec<Gf256> = subset.iter().map(|s| s.share.x).collect();
            let ys: Vec<&[u8]> = subset.iter().map(|s| s.share.data.as_slice()).collect();
            SecretBundle::new(Interpolator::new(&xs).expect("distinct coordinates").evaluate(&ys, Gf256::ZERO))
        }
    }
}

fn tag_matches(bundle: &SecretBundle, tag: &Tag) -> bool {
    bundle.tag_key().is_some_and(|u| verify_tag(&u, bundle.key_bits(), tag))
}

fn has_distinct_x(subset: &[&ReceivedShare]) -> bool {
    let xs: BTreeSet<Gf256> = subset.iter().map(|s| s.share.x).collect();
    xs.len() == subset.len()
}

/// Advances `idx` to the next k-combination of `0..s` in lexicographic order.
fn next_combination(idx: &mut [usize], s: usize) -> bool {
    let k = idx.len();
    for i in (0..k).rev() {
        if idx[i] < s - k + i {
            idx[i] += 1;
            for j in i + 1..k {
                idx[j] = idx[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// All distinct tag-valid candidates from one consistent group.
fn group_candidates(params: &SchemeParams, tag: &Tag, shares: &[&ReceivedShare]) -> Vec<Candidate> {
    let k = params.k();
    let s = shares.len();

    // Optimistic path: the first k distinct coordinates, then cross-check.
    let mut first: Vec<&ReceivedShare> = Vec::with_capacity(k);
    for &sh in shares {
        if first.len() < k && first.iter().all(|f| f.share.x != sh.share.x) {
            first.push(sh);
        }
    }
    let bundle = candidate_secret(params, &first);
    let consistent = consistency(params, &first, shares);
    let valid = tag_matches(&bundle, tag);
    if consistent.iter().all(|&c| c) {
        return if valid { vec![Candidate { bundle, consistent }] } else { Vec::new() };
    }

    let mut found: Vec<Candidate> = Vec::new();
    let mut covered: Vec<Vec<bool>> = vec![consistent.clone()];
    if valid {
        found.push(Candidate { bundle, consistent });
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        let subset: Vec<&ReceivedShare> = idx.iter().map(|&i| shares[i]).collect();
        let redundant = covered.iter().any(|c| idx.iter().all(|&i| c[i]));
        if !redundant && has_distinct_x(&subset) {
            let bundle = candidate_secret(params, &subset);
            if tag_matches(&bundle, tag) && found.iter().all(|c| c.bundle != bundle) {
                let consistent = consistency(params, &subset, shares);
                covered.push(consistent.clone());
                found.push(Candidate { bundle, consistent });
            }
        }
        if !next_combination(&mut idx, s) {
            break;
        }
    }
    found
}

/// The responder's decision over every share received for one key.
pub fn validate_shares(key_id: KeyId, shares: &[ReceivedShare], policy: &ReceiverPolicy) -> AgreedKey {
    let mut groups: BTreeMap<GroupKey, Vec<&ReceivedShare>> = BTreeMap::new();
    for s in shares {
        let Some(tag) = s.key_tag else { continue };
        let key = GroupKey {
            sender: s.sender,
            n: s.n,
            k: s.k,
            scheme: s.scheme.code(),
            key_tag: tag.0,
            len: s.share.data.len(),
        };
        groups.entry(key).or_default().push(s);
    }

    let mut candidates: Vec<(Candidate, Vec<&ReceivedShare>)> = Vec::new();
    let mut best_short = (0usize, policy.k_b as usize);
    let mut any_enough = false;
    for (key, mut members) in groups {
        members.sort_by_key(|s| s.share.x);
        let Ok(params) = SchemeParams::new(key.n, key.k, SchemeKind::from_code(key.scheme).expect("valid code")) else {
            continue;
        };
        let distinct = members.iter().map(|s| s.share.x).collect::<BTreeSet<_>>().len();
        if distinct < params.k() {
            if distinct > best_short.0 {
                best_short = (distinct, params.k());
            }
            continue;
        }
        any_enough = true;
        for c in group_candidates(&params, &Tag(key.key_tag), &members) {
            if candidates.iter().all(|(o, _)| o.bundle != c.bundle) {
                candidates.push((c, members.clone()));
            }
        }
    }

    if !any_enough {
        let (have, need) = best_short;
        return AgreedKey::aborted(key_id, AbortReason::InsufficientShares { have, need });
    }
    match candidates.len() {
        0 => AgreedKey::aborted(key_id, AbortReason::NoValidCandidate),
        1 => {
            let (c, members) = candidates.pop().expect("one candidate");
            let backing: Vec<&&ReceivedShare> = members.iter().zip(&c.consistent).filter(|(_, &ok)| ok).map(|(s, _)| s).collect();
            AgreedKey {
                key_id,
                secret: c.bundle.key_bits().to_vec(),
                hubs: backing.iter().map(|s| s.hub).collect(),
                x_coords: backing.iter().map(|s| s.share.x).collect(),
                status: KeyStatus::Agreed,
            }
        }
        n => AgreedKey::aborted(key_id, AbortReason::InjectionDetected { candidates: n }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn combinations_enumerate_binomial_count() {
        for (s, k, expected) in [(5usize, 2usize, 10usize), (6, 3, 20), (4, 4, 1), (7, 1, 7)] {
            let mut idx: Vec<usize> = (0..k).collect();
            let mut count = 1;
            while next_combination(&mut idx, s) {
                count += 1;
            }
            assert_eq!(count, expected);
        }
    }

    #[test]
    fn bootstrap_slots_are_single_use() {
        let hubs: BTreeMap<Gf256, PartyId> = (1..=3).map(|i| (Gf256(i), PartyId::from_label(&format!("h{i}")))).collect();
        let mut boot = BootstrapKey::new((0..80).collect(), 3, hubs, 2).unwrap();
        assert_eq!(bootstrap_len(3), 5 * TAG_KEY_LEN);
        let a = boot.take_slot(0).unwrap();
        assert!(boot.take_slot(0).is_none());
        let b = boot.take_slot(4).unwrap();
        assert!(boot.take_slot(5).is_none());
        assert_ne!(a, b);
        assert_eq!(boot.responder_bytes_used(), TAG_KEY_LEN);
        assert_eq!(boot.initiator_bytes_used(), TAG_KEY_LEN);
        let ranges: Vec<_> = (0..5).map(|s| boot.slot_range(s)).collect();
        assert!(ranges.windows(2).all(|w| w[0].1 == w[1].0));
        assert!(BootstrapKey::new(vec![0; 79], 3, BTreeMap::new(), 2).is_err());
        let outside = BTreeMap::from([(Gf256(4), PartyId::default())]);
        assert!(BootstrapKey::new(vec![0; 80], 3, outside, 2).is_err());
    }

    fn share(hub: u8, x: u8, k: u16, tag: Tag, data: Vec<u8>) -> ReceivedShare {
        ReceivedShare {
            hub: PartyId([hub; 16]),
            sender: PartyId([0xA; 16]),
            n: 4,
            k,
            scheme: SchemeKind::Shamir,
            key_tag: Some(tag),
            share: Share::new(x, data),
        }
    }

    fn honest(rng: &mut ChaCha8Rng, k: u16) -> (Vec<ReceivedShare>, SecretBundle, Tag) {
        let params = SchemeParams::shamir(4, k).unwrap();
        let fixed: Vec<Share> = (1..=k as u8).map(|x| Share::new(x, (0..24).map(|_| rng.gen()).collect::<Vec<u8>>())).collect();
        let (all, bundle) = complete_shares(&params, &fixed).unwrap();
        let tag = compute_tag(&bundle.tag_key().unwrap(), bundle.key_bits());
        let received = all.into_iter().map(|s| share(s.x.value(), s.x.value(), k, tag, s.data)).collect();
        (received, bundle, tag)
    }

    fn policy(k_b: u16) -> ReceiverPolicy {
        ReceiverPolicy::new((0..=255).map(|h| PartyId([h; 16])), [PartyId([0xA; 16])], k_b)
    }

    #[test]
    fn validation_recovers_from_a_corrupted_share() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (mut shares, bundle, _) = honest(&mut rng, 2);
        shares[0].share.data[3] ^= 0x40;
        let key = validate_shares(KeyId::default(), &shares, &policy(2));
        assert!(key.is_agreed());
        assert_eq!(key.secret, bundle.key_bits());
        assert_eq!(key.x_coords, vec![Gf256(2), Gf256(3), Gf256(4)]);
    }

    #[test]
    fn validation_detects_two_valid_candidates() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (honest_shares, _, tag) = honest(&mut rng, 2);
        // A second polynomial through share 1 whose secret also carries `tag`.
        let params = SchemeParams::shamir(4, 2).unwrap();
        let real = candidate_secret(&params, &honest_shares.iter().take(2).collect::<Vec<_>>());
        let (u, _) = real.partition().unwrap();
        let fake_s: Vec<u8> = (0..8).map(|_| rng.gen()).collect();
        let kappa = TagKey::from_bytes(u).kappa;
        let no_beta = compute_tag(&TagKey::new(kappa, crate::finite_field::Gf64::ZERO), &fake_s);
        let beta = crate::finite_field::Gf64(no_beta.to_u64() ^ tag.to_u64());
        let mut fake_secret = TagKey::new(kappa, beta).to_bytes().to_vec();
        fake_secret.extend_from_slice(&fake_s);
        let interp = Interpolator::through_secret(&[Gf256(1), Gf256::ZERO]).unwrap();
        let ys = [honest_shares[0].share.data.as_slice(), fake_secret.as_slice()];
        let fake_x2 = interp.evaluate(&ys, Gf256(2));
        let shares = vec![
            honest_shares[0].clone(),
            share(2, 2, 2, tag, fake_x2),
            honest_shares[2].clone(),
        ];
        let key = validate_shares(KeyId::default(), &shares, &policy(2));
        assert_eq!(key.abort_reason(), Some(&AbortReason::InjectionDetected { candidates: 2 }));
    }

    #[test]
    fn too_few_shares_abort() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (shares, _, _) = honest(&mut rng, 3);
        let key = validate_shares(KeyId::default(), &shares[..2], &policy(2));
        assert_eq!(key.abort_reason(), Some(&AbortReason::InsufficientShares { have: 2, need: 3 }));
    }

    #[test]
    fn wrong_tag_gives_no_candidate() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (mut shares, _, _) = honest(&mut rng, 2);
        for s in &mut shares {
            s.key_tag = Some(Tag::from_u64(1));
        }
        let key = validate_shares(KeyId::default(), &shares, &policy(2));
        assert_eq!(key.abort_reason(), Some(&AbortReason::NoValidCandidate));
    }

    #[test]
    fn duplicate_coordinates_are_skipped() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (mut shares, bundle, tag) = honest(&mut rng, 2);
        shares.push(share(9, 1, 2, tag, vec![0; 24]));
        let key = validate_shares(KeyId::default(), &shares, &policy(2));
        assert!(key.is_agreed());
        assert_eq!(key.secret, bundle.key_bits());
    }

    proptest! {
        #[test]
        fn any_k_honest_shares_agree(seed: u64, k in 1u16..=4, drop_mask in 0u8..16) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (shares, bundle, _) = honest(&mut rng, k);
            let kept: Vec<ReceivedShare> =
                shares.into_iter().enumerate().filter(|(i, _)| drop_mask & (1 << i) == 0).map(|(_, s)| s).collect();
            let key = validate_shares(KeyId::default(), &kept, &policy(1));
            if kept.len() >= k as usize {
                prop_assert!(key.is_agreed());
                prop_assert_eq!(key.secret, bundle.key_bits().to_vec());
            } else {
                let is_short = matches!(key.abort_reason(), Some(AbortReason::InsufficientShares { .. }));
                prop_assert!(is_short);
            }
        }
    }
}
