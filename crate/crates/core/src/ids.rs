use std::fmt;

/// Opaque 16-byte identifier of a hub or client.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct PartyId(pub [u8; 16]);

impl PartyId {
    /// Builds an id from a short label, zero-padded (labels over 16 bytes are truncated).
    pub fn from_label(label: &str) -> Self {
        let mut id = [0u8; 16];
        let bytes = label.as_bytes();
        let len = bytes.len().min(16);
        id[..len].copy_from_slice(&bytes[..len]);
        PartyId(id)
    }

    /// The label if the id is printable ASCII followed by zero padding.
    pub fn label(&self) -> Option<&str> {
        let end = self.0.iter().position(|&b| b == 0).unwrap_or(16);
        if end == 0 || self.0[end..].iter().any(|&b| b != 0) {
            return None;
        }
        let s = std::str::from_utf8(&self.0[..end]).ok()?;
        s.chars().all(|c| c.is_ascii_graphic()).then_some(s)
    }
}

impl fmt::Display for PartyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.label() {
            Some(l) => f.write_str(l),
            None => self.0.iter().try_for_each(|b| write!(f, "{b:02x}")),
        }
    }
}

impl fmt::Debug for PartyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PartyId({self})")
    }
}

/// Key identifier: a random nonce chosen by the initiator plus a running index.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct KeyId {
    pub nonce: [u8; 16],
    pub index: u64,
}

impl fmt::Display for KeyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.nonce[..4].iter().try_for_each(|b| write!(f, "{b:02x}"))?;
        write!(f, "/{}", self.index)
    }
}

impl fmt::Debug for KeyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "KeyId({self})")
    }
}
