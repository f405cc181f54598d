//! Canonical binary encoding of protocol messages.
//!
//! Frame: `len u32 | type u8 | body`, where `len` counts the type byte and
//! the body. All integers are big-endian, fields appear in declaration
//! order, optional fields carry a one-byte presence flag (0 or 1), lists a
//! u16 count and opaque records a u32 length. Every message ends with its
//! 8-byte message tag, which covers the type byte and all preceding body
//! bytes. Decoding rejects anything that would not re-encode to the same
//! bytes, so equal messages always have identical encodings.

use thiserror::Error;

use crate::auth_tags::{compute_tag, verify_tag, Tag, TagKey, TAG_LEN};
use crate::finite_field::Gf256;
use crate::ids::{KeyId, PartyId};
use crate::psk_table::SliceRef;
use crate::secret_sharing::SchemeKind;

/// Upper bound on a frame's declared length.
pub const MAX_FRAME_LEN: usize = 1 << 30;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("frame truncated")]
    Truncated,
    #[error("unknown message type {0:#04x}")]
    UnknownMessageType(u8),
    #[error("field overflow: {0}")]
    FieldOverflow(&'static str),
    #[error("invalid field: {0}")]
    InvalidField(&'static str),
    #[error("bytes left over after the message")]
    TrailingBytes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum MessageType {
    KeyRequest = 0x01,
    KeyInstruction = 0x02,
    IdentityQuery = 0x03,
    IdentityResponse = 0x04,
    Negotiation = 0x05,
    Finalize = 0x06,
}

impl MessageType {
    fn from_code(code: u8) -> Result<Self, WireError> {
        Ok(match code {
            0x01 => MessageType::KeyRequest,
            0x02 => MessageType::KeyInstruction,
            0x03 => MessageType::IdentityQuery,
            0x04 => MessageType::IdentityResponse,
            0x05 => MessageType::Negotiation,
            0x06 => MessageType::Finalize,
            other => return Err(WireError::UnknownMessageType(other)),
        })
    }
}

/// Initiator to hub: one share of a key agreement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyRequest {
    pub sender: PartyId,
    pub receiver: PartyId,
    pub key_id: KeyId,
    pub n: u16,
    pub k: u16,
    pub scheme: SchemeKind,
    pub x_coord: Gf256,
    pub share_slice: SliceRef,
    /// Z = Y xor R for derived shares; absent when the share is R itself.
    pub encrypted_share: Option<Vec<u8>>,
    pub key_tag: Option<Tag>,
    pub msg_tag_slice: SliceRef,
    pub message_tag: Tag,
}

/// Hub to responder: the share re-encrypted under the responder's table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyInstruction {
    pub hub: PartyId,
    pub sender: PartyId,
    pub key_id: KeyId,
    pub n: u16,
    pub k: u16,
    pub scheme: SchemeKind,
    pub x_coord: Gf256,
    pub share_slice: SliceRef,
    pub encrypted_share: Vec<u8>,
    pub key_tag: Option<Tag>,
    pub msg_tag_slice: SliceRef,
    pub message_tag: Tag,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdentityQuery {
    pub querier: PartyId,
    pub subject: PartyId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdentityResponse {
    pub hub: PartyId,
    pub querier: PartyId,
    pub subject: PartyId,
    pub record: Vec<u8>,
    pub msg_tag_slice: SliceRef,
    pub message_tag: Tag,
}

/// Responder to initiator (adapted protocol): a tag per received share.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NegotiationMessage {
    pub key_id: KeyId,
    pub share_tags: Vec<(Gf256, Tag)>,
    pub message_tag: Tag,
}

/// Initiator to responder (adapted protocol): the shares to combine.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FinalizeMessage {
    pub key_id: KeyId,
    pub accepted: Vec<Gf256>,
    pub key_tag: Tag,
    pub message_tag: Tag,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    KeyRequest(KeyRequest),
    KeyInstruction(KeyInstruction),
    IdentityQuery(IdentityQuery),
    IdentityResponse(IdentityResponse),
    Negotiation(NegotiationMessage),
    Finalize(FinalizeMessage),
}

impl Message {
    pub fn message_type(&self) -> MessageType {
        match self {
            Message::KeyRequest(_) => MessageType::KeyRequest,
            Message::KeyInstruction(_) => MessageType::KeyInstruction,
            Message::IdentityQuery(_) => MessageType::IdentityQuery,
            Message::IdentityResponse(_) => MessageType::IdentityResponse,
            Message::Negotiation(_) => MessageType::Negotiation,
            Message::Finalize(_) => MessageType::Finalize,
        }
    }
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new(kind: MessageType) -> Self {
        Writer { buf: vec![kind as u8] }
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }

    fn bytes(&mut self, v: &[u8]) {
        self.buf.extend_from_slice(v);
    }

    fn id(&mut self, id: &PartyId) {
        self.bytes(&id.0);
    }

    fn key_id(&mut self, id: &KeyId) {
        self.bytes(&id.nonce);
        self.u64(id.index);
    }

    fn slice(&mut self, s: &SliceRef) {
        self.u64(s.table_id);
        self.u64(s.start);
        self.u64(s.len);
    }

    fn tag(&mut self, t: &Tag) {
        self.bytes(&t.0);
    }

    fn opt_tag(&mut self, t: &Option<Tag>) {
        match t {
            Some(t) => {
                self.u8(1);
                self.tag(t);
            }
            None => self.u8(0),
        }
    }

    fn count(&mut self, n: usize) -> Result<(), WireError> {
        let n = u16::try_from(n).map_err(|_| WireError::FieldOverflow("list longer than u16"))?;
        self.u16(n);
        Ok(())
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.buf.len() - self.pos < n {
            return Err(WireError::Truncated);
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, WireError> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn id(&mut self) -> Result<PartyId, WireError> {
        Ok(PartyId(self.take(16)?.try_into().expect("16 bytes")))
    }

    fn key_id(&mut self) -> Result<KeyId, WireError> {
        let nonce = self.take(16)?.try_into().expect("16 bytes");
        Ok(KeyId { nonce, index: self.u64()? })
    }

    fn slice(&mut self) -> Result<SliceRef, WireError> {
        Ok(SliceRef { table_id: self.u64()?, start: self.u64()?, len: self.u64()? })
    }

    fn tag(&mut self) -> Result<Tag, WireError> {
        Ok(Tag(self.take(TAG_LEN)?.try_into().expect("tag bytes")))
    }

    fn flag(&mut self) -> Result<bool, WireError> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(WireError::InvalidField("presence flag")),
        }
    }

    fn opt_tag(&mut self) -> Result<Option<Tag>, WireError> {
        Ok(if self.flag()? { Some(self.tag()?) } else { None })
    }

    fn scheme(&mut self) -> Result<SchemeKind, WireError> {
        SchemeKind::from_code(self.u8()?).ok_or(WireError::InvalidField("scheme"))
    }

    fn share_bytes(&mut self, slice: &SliceRef) -> Result<Vec<u8>, WireError> {
        let len = usize::try_from(slice.len).map_err(|_| WireError::FieldOverflow("share length"))?;
        Ok(self.take(len)?.to_vec())
    }
}

/// Message bytes covered by the message tag: type byte plus every body
/// field before the tag.
pub trait Authenticated {
    fn signing_bytes(&self) -> Vec<u8>;
    fn message_tag(&self) -> Tag;
    fn set_message_tag(&mut self, tag: Tag);

    fn seal(&mut self, key: &TagKey) {
        let tag = compute_tag(key, &self.signing_bytes());
        self.set_message_tag(tag);
    }

    fn verify(&self, key: &TagKey) -> bool {
        verify_tag(key, &self.signing_bytes(), &self.message_tag())
    }
}

macro_rules! authenticated {
    ($ty:ty, $body:ident) => {
        impl Authenticated for $ty {
            fn signing_bytes(&self) -> Vec<u8> {
                let mut w = Writer::new(Self::TYPE);
                self.$body(&mut w).expect("bounded fields");
                w.buf
            }

            fn message_tag(&self) -> Tag {
                self.message_tag
            }

            fn set_message_tag(&mut self, tag: Tag) {
                self.message_tag = tag;
            }
        }
    };
}

impl KeyRequest {
    const TYPE: MessageType = MessageType::KeyRequest;

    fn write_unsigned(&self, w: &mut Writer) -> Result<(), WireError> {
        w.id(&self.sender);
        w.id(&self.receiver);
        w.key_id(&self.key_id);
        w.u16(self.n);
        w.u16(self.k);
        w.u8(self.scheme.code());
        w.u8(self.x_coord.value());
        w.slice(&self.share_slice);
        match &self.encrypted_share {
            Some(z) => {
                if z.len() as u64 != self.share_slice.len {
                    return Err(WireError::InvalidField("encrypted share length"));
                }
                w.u8(1);
                w.bytes(z);
            }
            None => w.u8(0),
        }
        w.opt_tag(&self.key_tag);
        w.slice(&self.msg_tag_slice);
        Ok(())
    }

    fn read(r: &mut Reader<'_>) -> Result<Self, WireError> {
        let sender = r.id()?;
        let receiver = r.id()?;
        let key_id = r.key_id()?;
        let n = r.u16()?;
        let k = r.u16()?;
        let scheme = r.scheme()?;
        let x_coord = Gf256(r.u8()?);
        let share_slice = r.slice()?;
        let encrypted_share = if r.flag()? { Some(r.share_bytes(&share_slice)?) } else { None };
        let key_tag = r.opt_tag()?;
        let msg_tag_slice = r.slice()?;
        let message_tag = r.tag()?;
        Ok(KeyRequest {
            sender,
            receiver,
            key_id,
            n,
            k,
            scheme,
            x_coord,
            share_slice,
            encrypted_share,
            key_tag,
            msg_tag_slice,
            message_tag,
        })
    }
}
authenticated!(KeyRequest, write_unsigned);

impl KeyInstruction {
    const TYPE: MessageType = MessageType::KeyInstruction;

    fn write_unsigned(&self, w: &mut Writer) -> Result<(), WireError> {
        if self.encrypted_share.len() as u64 != self.share_slice.len {
            return Err(WireError::InvalidField("encrypted share length"));
        }
        w.id(&self.hub);
        w.id(&self.sender);
        w.key_id(&self.key_id);
        w.u16(self.n);
        w.u16(self.k);
        w.u8(self.scheme.code());
        w.u8(self.x_coord.value());
        w.slice(&self.share_slice);
        w.bytes(&self.encrypted_share);
        w.opt_tag(&self.key_tag);
        w.slice(&self.msg_tag_slice);
        Ok(())
    }

    fn read(r: &mut Reader<'_>) -> Result<Self, WireError> {
        let hub = r.id()?;
        let sender = r.id()?;
        let key_id = r.key_id()?;
        let n = r.u16()?;
        let k = r.u16()?;
        let scheme = r.scheme()?;
        let x_coord = Gf256(r.u8()?);
        let share_slice = r.slice()?;
        let encrypted_share = r.share_bytes(&share_slice)?;
        let key_tag = r.opt_tag()?;
        let msg_tag_slice = r.slice()?;
        let message_tag = r.tag()?;
        Ok(KeyInstruction {
            hub,
            sender,
            key_id,
            n,
            k,
            scheme,
            x_coord,
            share_slice,
            encrypted_share,
            key_tag,
            msg_tag_slice,
            message_tag,
        })
    }
}
authenticated!(KeyInstruction, write_unsigned);

impl IdentityQuery {
    fn write(&self, w: &mut Writer) {
        w.id(&self.querier);
        w.id(&self.subject);
    }

    fn read(r: &mut Reader<'_>) -> Result<Self, WireError> {
        Ok(IdentityQuery { querier: r.id()?, subject: r.id()? })
    }
}

impl IdentityResponse {
    const TYPE: MessageType = MessageType::IdentityResponse;

    fn write_unsigned(&self, w: &mut Writer) -> Result<(), WireError> {
        w.id(&self.hub);
        w.id(&self.querier);
        w.id(&self.subject);
        let len = u32::try_from(self.record.len()).map_err(|_| WireError::FieldOverflow("record longer than u32"))?;
        w.bytes(&len.to_be_bytes());
        w.bytes(&self.record);
        w.slice(&self.msg_tag_slice);
        Ok(())
    }

    fn read(r: &mut Reader<'_>) -> Result<Self, WireError> {
        let hub = r.id()?;
        let querier = r.id()?;
        let subject = r.id()?;
        let len = r.u32()? as usize;
        let record = r.take(len)?.to_vec();
        let msg_tag_slice = r.slice()?;
        let message_tag = r.tag()?;
        Ok(IdentityResponse { hub, querier, subject, record, msg_tag_slice, message_tag })
    }
}
authenticated!(IdentityResponse, write_unsigned);

impl NegotiationMessage {
    const TYPE: MessageType = MessageType::Negotiation;

    fn write_unsigned(&self, w: &mut Writer) -> Result<(), WireError> {
        w.key_id(&self.key_id);
        w.count(self.share_tags.len())?;
        for (x, t) in &self.share_tags {
            w.u8(x.value());
            w.tag(t);
        }
        Ok(())
    }

    fn read(r: &mut Reader<'_>) -> Result<Self, WireError> {
        let key_id = r.key_id()?;
        let count = r.u16()? as usize;
        if count * (1 + TAG_LEN) > r.remaining() {
            return Err(WireError::Truncated);
        }
        let share_tags = (0..count).map(|_| Ok((Gf256(r.u8()?), r.tag()?))).collect::<Result<_, WireError>>()?;
        let message_tag = r.tag()?;
        Ok(NegotiationMessage { key_id, share_tags, message_tag })
    }
}
authenticated!(NegotiationMessage, write_unsigned);

impl FinalizeMessage {
    const TYPE: MessageType = MessageType::Finalize;

    fn write_unsigned(&self, w: &mut Writer) -> Result<(), WireError> {
        w.key_id(&self.key_id);
        w.count(self.accepted.len())?;
        for x in &self.accepted {
            w.u8(x.value());
        }
        w.tag(&self.key_tag);
        Ok(())
    }

    fn read(r: &mut Reader<'_>) -> Result<Self, WireError> {
        let key_id = r.key_id()?;
        let count = r.u16()? as usize;
        let accepted = r.take(count)?.iter().map(|&x| Gf256(x)).collect();
        let key_tag = r.tag()?;
        let message_tag = r.tag()?;
        Ok(FinalizeMessage { key_id, accepted, key_tag, message_tag })
    }
}
authenticated!(FinalizeMessage, write_unsigned);

/// Encodes one message as a length-prefixed frame.
pub fn encode(message: &Message) -> Result<Vec<u8>, WireError> {
    let mut w = Writer::new(message.message_type());
    match message {
        Message::KeyRequest(m) => {
            m.write_unsigned(&mut w)?;
            w.tag(&m.message_tag);
        }
        Message::KeyInstruction(m) => {
            m.write_unsigned(&mut w)?;
            w.tag(&m.message_tag);
        }
        Message::IdentityQuery(m) => m.write(&mut w),
        Message::IdentityResponse(m) => {
            m.write_unsigned(&mut w)?;
            w.tag(&m.message_tag);
        }
        Message::Negotiation(m) => {
            m.write_unsigned(&mut w)?;
            w.tag(&m.message_tag);
        }
        Message::Finalize(m) => {
            m.write_unsigned(&mut w)?;
            w.tag(&m.message_tag);
        }
    }
    if w.buf.len() > MAX_FRAME_LEN {
        return Err(WireError::FieldOverflow("frame longer than MAX_FRAME_LEN"));
    }
    let mut frame = Vec::with_capacity(4 + w.buf.len());
    frame.extend_from_slice(&(w.buf.len() as u32).to_be_bytes());
    frame.extend_from_slice(&w.buf);
    Ok(frame)
}

/// Decodes the frame at the front of `buf`, returning it and the bytes consumed.
pub fn decode_frame(buf: &[u8]) -> Result<(Message, usize), WireError> {
    if buf.len() < 4 {
        return Err(WireError::Truncated);
    }
    let len = u32::from_be_bytes(buf[..4].try_into().expect("4 bytes")) as usize;
    if len > MAX_FRAME_LEN {
        return Err(WireError::FieldOverflow("declared frame length"));
    }
    if len == 0 {
        return Err(WireError::Truncated);
    }
    if buf.len() - 4 < len {
        return Err(WireError::Truncated);
    }
    let body = &buf[4..4 + len];
    let kind = MessageType::from_code(body[0])?;
    let mut r = Reader { buf: body, pos: 1 };
    let message = match kind {
        MessageType::KeyRequest => Message::KeyRequest(KeyRequest::read(&mut r)?),
        MessageType::KeyInstruction => Message::KeyInstruction(KeyInstruction::read(&mut r)?),
        MessageType::IdentityQuery => Message::IdentityQuery(IdentityQuery::read(&mut r)?),
        MessageType::IdentityResponse => Message::IdentityResponse(IdentityResponse::read(&mut r)?),
        MessageType::Negotiation => Message::Negotiation(NegotiationMessage::read(&mut r)?),
        MessageType::Finalize => Message::Finalize(FinalizeMessage::read(&mut r)?),
    };
    if r.remaining() != 0 {
        return Err(WireError::TrailingBytes);
    }
    Ok((message, 4 + len))
}

/// Decodes a buffer holding exactly one frame.
pub fn decode(buf: &[u8]) -> Result<Message, WireError> {
    let (message, used) = decode_frame(buf)?;
    if used != buf.len() {
        return Err(WireError::TrailingBytes);
    }
    Ok(message)
}
