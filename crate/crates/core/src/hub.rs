//! Security hub: re-keys shares from the initiator's table onto the
//! responder's and answers identity queries.
//!
//! Invalid requests are dropped. The returned error is for local logging
//! only and is never sent back to the requester.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Mutex, MutexGuard};

use thiserror::Error;

use crate::auth_tags::{Tag, TagKey, TAG_KEY_LEN};
use crate::finite_field::Gf256;
use crate::ids::{KeyId, PartyId};
use crate::psk_table::{PskError, PskTable, Region};
use crate::secret_sharing::SchemeKind;
use crate::wire::{Authenticated, IdentityQuery, IdentityResponse, KeyInstruction, KeyRequest};

#[derive(Debug, Error)]
pub enum HubError {
    #[error("unknown client {0}")]
    UnknownClient(PartyId),
    #[error("unknown subject {0}")]
    UnknownSubject(PartyId),
    #[error("client {0} is already registered")]
    AlreadyRegistered(PartyId),
    #[error("referenced range [{start}, +{len}) already used")]
    OverlapDetected { start: u64, len: u64 },
    #[error("message tag invalid")]
    TagInvalid,
    #[error("table exhausted: requested {requested}, largest free range {available}")]
    TableExhausted { requested: u64, available: u64 },
    #[error("request cap of {cap} reached for {sender} -> {receiver}")]
    RequestCapExceeded { sender: PartyId, receiver: PartyId, cap: u64 },
    #[error("malformed request: {0}")]
    Malformed(&'static str),
    #[error(transparent)]
    Table(PskError),
}

impl From<PskError> for HubError {
    fn from(e: PskError) -> Self {
        match e {
            PskError::OverlapDetected { start, len } => HubError::OverlapDetected { start, len },
            PskError::TableExhausted { requested, available } => HubError::TableExhausted { requested, available },
            other => HubError::Table(other),
        }
    }
}

struct ClientEntry {
    record: Vec<u8>,
    table: Mutex<PskTable>,
    /// Most instructions this client will accept from any single sender.
    request_cap: Option<u64>,
}

/// Share content the hub is about to forward, independent of how it arrived.
#[derive(Debug, Clone)]
pub struct ForwardedShare {
    pub sender: PartyId,
    pub receiver: PartyId,
    pub key_id: KeyId,
    pub n: u16,
    pub k: u16,
    pub scheme: SchemeKind,
    pub x_coord: Gf256,
    pub key_tag: Option<Tag>,
    pub share: Vec<u8>,
}

pub struct Hub {
    id: PartyId,
    clients: BTreeMap<PartyId, ClientEntry>,
    forwarded: Mutex<HashMap<(PartyId, PartyId), u64>>,
}

impl std::fmt::Debug for Hub {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Hub").field("id", &self.id).field("clients", &self.clients.len()).finish()
    }
}

impl Hub {
    pub fn new(id: PartyId) -> Self {
        Hub { id, clients: BTreeMap::new(), forwarded: Mutex::new(HashMap::new()) }
    }

    pub fn id(&self) -> PartyId {
        self.id
    }

    /// Adds a client with its identity record and the hub's copy of their table.
    pub fn register(&mut self, client: PartyId, record: Vec<u8>, table: PskTable) -> Result<(), HubError> {
        if self.clients.contains_key(&client) {
            return Err(HubError::AlreadyRegistered(client));
        }
        self.clients.insert(client, ClientEntry { record, table: Mutex::new(table), request_cap: None });
        Ok(())
    }

    /// Limits how many shares from one sender the hub forwards to `client`.
    pub fn set_request_cap(&mut self, client: PartyId, cap: Option<u64>) -> Result<(), HubError> {
        self.clients.get_mut(&client).ok_or(HubError::UnknownClient(client))?.request_cap = cap;
        Ok(())
    }

    pub fn clients(&self) -> impl Iterator<Item = PartyId> + '_ {
        self.clients.keys().copied()
    }

    pub fn identity_record(&self, client: PartyId) -> Option<&[u8]> {
        self.clients.get(&client).map(|c| c.record.as_slice())
    }

    /// The hub's copy of the table shared with `client`.
    pub fn table(&self, client: PartyId) -> Result<MutexGuard<'_, PskTable>, HubError> {
        let entry = self.clients.get(&client).ok_or(HubError::UnknownClient(client))?;
        Ok(entry.table.lock().unwrap_or_else(|p| p.into_inner()))
    }

    /// Validates a request from the initiator and builds the matching
    /// instruction for the responder.
    pub fn handle_key_request(&self, msg: &KeyRequest) -> Result<KeyInstruction, HubError> {
        let share = self.open_request(msg)?;
        self.forward(share)
    }

    /// Authenticates a request and recovers its share without forwarding it.
    ///
    /// Ranges named in the request are consumed before the tag is checked,
    /// so a rejected request still burns them.
    pub fn open_request(&self, msg: &KeyRequest) -> Result<ForwardedShare, HubError> {
        if !self.clients.contains_key(&msg.receiver) {
            return Err(HubError::UnknownClient(msg.receiver));
        }
        if msg.msg_tag_slice.len != TAG_KEY_LEN as u64 {
            return Err(HubError::Malformed("message tag slice must be one tag key long"));
        }
        let (pad, tag_key) = {
            let mut table = self.table(msg.sender)?;
            let pad = table.claim(&msg.share_slice)?;
            let tag_key = table.claim(&msg.msg_tag_slice)?;
            (pad, tag_key)
        };
        if !msg.verify(&TagKey::from_bytes(&tag_key.bytes)) {
            return Err(HubError::TagInvalid);
        }
        let share = match &msg.encrypted_share {
            Some(z) => xor(z, &pad.bytes),
            None => pad.bytes,
        };
        Ok(ForwardedShare {
            sender: msg.sender,
            receiver: msg.receiver,
            key_id: msg.key_id,
            n: msg.n,
            k: msg.k,
            scheme: msg.scheme,
            x_coord: msg.x_coord,
            key_tag: msg.key_tag,
            share,
        })
    }

    /// Encrypts a share under fresh bytes of the receiver's table and tags it.
    pub fn forward(&self, share: ForwardedShare) -> Result<KeyInstruction, HubError> {
        let entry = self.clients.get(&share.receiver).ok_or(HubError::UnknownClient(share.receiver))?;
        {
            let mut counts = self.forwarded.lock().unwrap_or_else(|p| p.into_inner());
            let count = counts.entry((share.sender, share.receiver)).or_default();
            if let Some(cap) = entry.request_cap {
                if *count >= cap {
                    return Err(HubError::RequestCapExceeded { sender: share.sender, receiver: share.receiver, cap });
                }
            }
            *count += 1;
        }
        let (pad, tag_key) = {
            let mut table = self.table(share.receiver)?;
            let pad = table.allocate_from(Region::HubOriginated, share.share.len() as u64)?;
            let tag_key = table.allocate_from(Region::HubOriginated, TAG_KEY_LEN as u64)?;
            (pad, tag_key)
        };
        let mut instruction = KeyInstruction {
            hub: self.id,
            sender: share.sender,
            key_id: share.key_id,
            n: share.n,
            k: share.k,
            scheme: share.scheme,
            x_coord: share.x_coord,
            share_slice: pad.slice_ref(),
            encrypted_share: xor(&share.share, &pad.bytes),
            key_tag: share.key_tag,
            msg_tag_slice: tag_key.slice_ref(),
            message_tag: Tag::default(),
        };
        instruction.seal(&TagKey::from_bytes(&tag_key.bytes));
        Ok(instruction)
    }

    /// Answers `querier`'s question about `query.subject`, tagged under
    /// fresh bytes of the querier's table.
    pub fn handle_identity_query(&self, query: &IdentityQuery) -> Result<IdentityResponse, HubError> {
        let querier = query.querier;
        if !self.clients.contains_key(&querier) {
            return Err(HubError::UnknownClient(querier));
        }
        let record = self.identity_record(query.subject).ok_or(HubError::UnknownSubject(query.subject))?;
        self.identity_response(querier, query.subject, record.to_vec())
    }

    /// A tagged identity response carrying an arbitrary record.
    pub fn identity_response(
        &self,
        querier: PartyId,
        subject: PartyId,
        record: Vec<u8>,
    ) -> Result<IdentityResponse, HubError> {
        let tag_key = self.table(querier)?.allocate_from(Region::HubOriginated, TAG_KEY_LEN as u64)?;
        let mut response = IdentityResponse {
            hub: self.id,
            querier,
            subject,
            record,
            msg_tag_slice: tag_key.slice_ref(),
            message_tag: Tag::default(),
        };
        response.seal(&TagKey::from_bytes(&tag_key.bytes));
        Ok(response)
    }
}

pub(crate) fn xor(a: &[u8], b: &[u8]) -> Vec<u8> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x ^ y).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::psk_table::SliceRef;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const M: usize = 8;

    struct Fixture {
        hub: Hub,
        alice_table: PskTable,
        bob_table: PskTable,
    }

    fn fixture() -> Fixture {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let hub_id = PartyId::from_label("hub");
        let alice = PartyId::from_label("alice");
        let bob = PartyId::from_label("bob");
        let a: Vec<u8> = (0..512).map(|_| rng.gen()).collect();
        let b: Vec<u8> = (0..512).map(|_| rng.gen()).collect();
        let mut hub = Hub::new(hub_id);
        hub.register(alice, b"alice-record".to_vec(), PskTable::new(hub_id, alice, 1, a.clone())).unwrap();
        hub.register(bob, b"bob-record".to_vec(), PskTable::new(hub_id, bob, 2, b.clone())).unwrap();
        Fixture {
            hub,
            alice_table: PskTable::new(hub_id, alice, 1, a),
            bob_table: PskTable::new(hub_id, bob, 2, b),
        }
    }

    fn request(table: &mut PskTable, encrypted: Option<Vec<u8>>) -> (KeyRequest, Vec<u8>) {
        let pad = table.allocate_from(Region::ClientOriginated, (M + TAG_KEY_LEN) as u64).unwrap();
        let tag_key = table.allocate_from(Region::ClientOriginated, TAG_KEY_LEN as u64).unwrap();
        let mut msg = KeyRequest {
            sender: PartyId::from_label("alice"),
            receiver: PartyId::from_label("bob"),
            key_id: KeyId { nonce: [9; 16], index: 0 },
            n: 3,
            k: 2,
            scheme: SchemeKind::Shamir,
            x_coord: Gf256(1),
            share_slice: pad.slice_ref(),
            encrypted_share: encrypted.map(|y| xor(&y, &pad.bytes)),
            key_tag: Some(Tag::from_u64(42)),
            msg_tag_slice: tag_key.slice_ref(),
            message_tag: Tag::default(),
        };
        msg.seal(&TagKey::from_bytes(&tag_key.bytes));
        (msg, pad.bytes)
    }

    fn open(table: &mut PskTable, ins: &KeyInstruction) -> Vec<u8> {
        let pad = table.claim(&ins.share_slice).unwrap();
        let tag_key = table.claim(&ins.msg_tag_slice).unwrap();
        assert!(ins.verify(&TagKey::from_bytes(&tag_key.bytes)));
        xor(&ins.encrypted_share, &pad.bytes)
    }

    #[test]
    fn pass_through_share_reaches_receiver() {
        let mut f = fixture();
        let (msg, r_a) = request(&mut f.alice_table, None);
        let ins = f.hub.handle_key_request(&msg).unwrap();
        assert_eq!(open(&mut f.bob_table, &ins), r_a);
        assert_eq!(ins.key_tag, Some(Tag::from_u64(42)));
        assert_eq!(ins.hub, f.hub.id());
    }

    #[test]
    fn derived_share_is_decrypted_then_reencrypted() {
        let mut f = fixture();
        let y: Vec<u8> = (0..(M + TAG_KEY_LEN) as u8).collect();
        let (msg, _) = request(&mut f.alice_table, Some(y.clone()));
        let ins = f.hub.handle_key_request(&msg).unwrap();
        assert_eq!(open(&mut f.bob_table, &ins), y);
    }

    #[test]
    fn consumption_is_m_plus_two_l_on_each_side() {
        let f = fixture();
        let mut alice_table = f.alice_table;
        let (msg, _) = request(&mut alice_table, Some(vec![0; M + TAG_KEY_LEN]));
        f.hub.handle_key_request(&msg).unwrap();
        let expected = (M + 2 * TAG_KEY_LEN) as u64;
        assert_eq!(f.hub.table(msg.sender).unwrap().used_bytes(), expected);
        assert_eq!(f.hub.table(msg.receiver).unwrap().used_bytes(), expected);
    }

    #[test]
    fn flipped_tag_is_dropped_and_burns_ranges() {
        let mut f = fixture();
        let (mut msg, _) = request(&mut f.alice_table, None);
        msg.message_tag.0[0] ^= 1;
        assert!(matches!(f.hub.handle_key_request(&msg), Err(HubError::TagInvalid)));
        let table = f.hub.table(msg.sender).unwrap();
        assert!(table.is_used(msg.share_slice.start, msg.share_slice.len));
        assert!(table.is_used(msg.msg_tag_slice.start, msg.msg_tag_slice.len));
        drop(table);
        assert!(f.hub.table(msg.receiver).unwrap().is_fresh());
    }

    #[test]
    fn replay_is_rejected() {
        let mut f = fixture();
        let (msg, _) = request(&mut f.alice_table, None);
        f.hub.handle_key_request(&msg).unwrap();
        assert!(matches!(f.hub.handle_key_request(&msg), Err(HubError::OverlapDetected { .. })));
    }

    #[test]
    fn unknown_parties_and_bad_slices() {
        let mut f = fixture();
        let (mut msg, _) = request(&mut f.alice_table, None);
        msg.receiver = PartyId::from_label("carol");
        assert!(matches!(f.hub.handle_key_request(&msg), Err(HubError::UnknownClient(_))));
        let (mut msg, _) = request(&mut f.alice_table, None);
        msg.msg_tag_slice = SliceRef { len: 8, ..msg.msg_tag_slice };
        assert!(matches!(f.hub.handle_key_request(&msg), Err(HubError::Malformed(_))));
        let (mut msg, _) = request(&mut f.alice_table, None);
        msg.share_slice.table_id = 77;
        assert!(matches!(f.hub.handle_key_request(&msg), Err(HubError::Table(PskError::TableMismatch { .. }))));
    }

    #[test]
    fn request_cap_limits_forwarding() {
        let mut f = fixture();
        f.hub.set_request_cap(PartyId::from_label("bob"), Some(1)).unwrap();
        let (msg, _) = request(&mut f.alice_table, None);
        f.hub.handle_key_request(&msg).unwrap();
        let (msg, _) = request(&mut f.alice_table, None);
        assert!(matches!(f.hub.handle_key_request(&msg), Err(HubError::RequestCapExceeded { cap: 1, .. })));
    }

    #[test]
    fn identity_queries() {
        let mut f = fixture();
        let query = IdentityQuery { querier: PartyId::from_label("alice"), subject: PartyId::from_label("bob") };
        let response = f.hub.handle_identity_query(&query).unwrap();
        assert_eq!(response.record, b"bob-record");
        let tag_key = f.alice_table.claim(&response.msg_tag_slice).unwrap();
        assert!(response.verify(&TagKey::from_bytes(&tag_key.bytes)));

        let unknown = IdentityQuery { subject: PartyId::from_label("mallory"), ..query };
        assert!(matches!(f.hub.handle_identity_query(&unknown), Err(HubError::UnknownSubject(_))));
    }

    #[test]
    fn instruction_is_deterministic() {
        let run = || {
            let mut f = fixture();
            let (msg, _) = request(&mut f.alice_table, None);
            f.hub.handle_key_request(&msg).unwrap()
        };
        assert_eq!(run(), run());
    }
}
