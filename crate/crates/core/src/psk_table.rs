//! Pre-shared random tables with single-use accounting.
//!
//! Each hub/client pair shares one table. Every byte may be handed out at
//! most once: the initiator side takes the next unused range with
//! [`PskTable::allocate`], the other copy honours the ranges named in a
//! message with [`PskTable::claim_range`]. Bytes are marked used as soon as
//! they are read, even if the message they key later fails validation.
//!
//! A table can be backed by an append-only journal of `(start, len)`
//! records. The record is made durable before the bytes are returned, so a
//! crash can lose table capacity but never causes reuse.
//!
//! PSKM file layout (all integers big-endian):
//!
//! ```text
//! "DSKE" | version u8 = 1 | hub_id [16] | client_id [16] | table_id u64 | length u64 | data
//! ```

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{self, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::ids::PartyId;

pub const PSKM_MAGIC: &[u8; 4] = b"DSKE";
pub const PSKM_VERSION: u8 = 1;
pub const PSKM_HEADER_LEN: usize = 4 + 1 + 16 + 16 + 8 + 8;

const JOURNAL_RECORD_LEN: usize = 16;

#[derive(Debug, Error)]
pub enum PskError {
    #[error("table exhausted: requested {requested} bytes, {available} contiguous available")]
    TableExhausted { requested: u64, available: u64 },
    #[error("range [{start}, +{len}) overlaps bytes already used")]
    OverlapDetected { start: u64, len: u64 },
    #[error("range [{start}, +{len}) outside table of {capacity} bytes")]
    OutOfBounds { start: u64, len: u64, capacity: u64 },
    #[error("slice names table {found}, expected {expected}")]
    TableMismatch { expected: u64, found: u64 },
    #[error("bad PSKM magic")]
    BadMagic,
    #[error("unsupported PSKM version {0}")]
    UnsupportedVersion(u8),
    #[error("PSKM file truncated")]
    TruncatedFile,
    #[error("PSKM file has bytes past the declared length")]
    TrailingBytes,
    #[error("PSKM identifiers do not match the expected hub/client pair")]
    IdMismatch,
    #[error("only a fully unused table may be written to a PSKM")]
    NotFresh,
    #[error("journal I/O: {0}")]
    Io(#[from] io::Error),
}

/// Half of a table from which one end allocates.
///
/// Both copies of a table hand out ranges independently, so each end
/// allocates only from its own half: the client from the lower half for
/// messages it originates, the hub from the upper half. Claims may name
/// any range.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    ClientOriginated,
    HubOriginated,
}

/// Reference to a byte range of one table, as carried in messages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SliceRef {
    pub table_id: u64,
    pub start: u64,
    pub len: u64,
}

/// Bytes handed out by one allocation or claim.
#[derive(Clone, PartialEq, Eq)]
pub struct KeySlice {
    pub table_id: u64,
    pub start: u64,
    pub bytes: Vec<u8>,
}

impl std::fmt::Debug for KeySlice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "KeySlice(table {} [{}, +{}))", self.table_id, self.start, self.bytes.len())
    }
}

impl KeySlice {
    pub fn slice_ref(&self) -> SliceRef {
        SliceRef { table_id: self.table_id, start: self.start, len: self.bytes.len() as u64 }
    }
}

/// Disjoint, coalesced `start -> end` intervals of used bytes.
#[derive(Debug, Clone, Default)]
struct UsedRanges {
    spans: BTreeMap<u64, u64>,
    total: u64,
}

impl UsedRanges {
    fn overlaps(&self, start: u64, end: u64) -> bool {
        if let Some((_, &e)) = self.spans.range(..end).next_back() {
            if e > start {
                return true;
            }
        }
        false
    }

    fn insert(&mut self, start: u64, end: u64) {
        let mut lo = start;
        let mut hi = end;
        if let Some((&s, &e)) = self.spans.range(..=start).next_back() {
            if e >= start {
                lo = s;
                hi = hi.max(e);
            }
        }
        let absorbed: Vec<(u64, u64)> = self.spans.range(lo..=hi).map(|(&s, &e)| (s, e)).collect();
        for (s, e) in absorbed {
            self.total -= e - s;
            hi = hi.max(e);
            self.spans.remove(&s);
        }
        self.total += hi - lo;
        self.spans.insert(lo, hi);
    }

    /// First gap of at least `len` bytes in `[lo, hi)` and the largest gap seen.
    fn first_fit(&self, len: u64, lo: u64, hi: u64) -> Result<u64, u64> {
        let mut cand = lo;
        let mut largest = 0u64;
        if let Some((_, &e)) = self.spans.range(..lo).next_back() {
            cand = cand.max(e);
        }
        for (&s, &e) in self.spans.range(lo..hi) {
            let gap = s.saturating_sub(cand);
            if gap >= len {
                return Ok(cand);
            }
            largest = largest.max(gap);
            cand = cand.max(e);
        }
        let tail = hi.saturating_sub(cand);
        if tail >= len {
            Ok(cand)
        } else {
            Err(largest.max(tail))
        }
    }

    fn high_water(&self) -> u64 {
        self.spans.iter().next_back().map_or(0, |(_, &e)| e)
    }
}

struct Journal {
    file: File,
}

impl Journal {
    fn record(&mut self, start: u64, len: u64) -> io::Result<()> {
        let mut rec = [0u8; JOURNAL_RECORD_LEN];
        rec[..8].copy_from_slice(&start.to_be_bytes());
        rec[8..].copy_from_slice(&len.to_be_bytes());
        self.file.write_all(&rec)?;
        self.file.sync_data()
    }
}

pub struct PskTable {
    hub_id: PartyId,
    client_id: PartyId,
    table_id: u64,
    data: Vec<u8>,
    used: UsedRanges,
    journal: Option<Journal>,
}

impl std::fmt::Debug for PskTable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PskTable")
            .field("hub_id", &self.hub_id)
            .field("client_id", &self.client_id)
            .field("table_id", &self.table_id)
            .field("capacity", &self.data.len())
            .field("used", &self.used.total)
            .finish()
    }
}

impl PskTable {
    pub fn new(hub_id: PartyId, client_id: PartyId, table_id: u64, data: Vec<u8>) -> Self {
        PskTable { hub_id, client_id, table_id, data, used: UsedRanges::default(), journal: None }
    }

    pub fn hub_id(&self) -> PartyId {
        self.hub_id
    }

    pub fn client_id(&self) -> PartyId {
        self.client_id
    }

    pub fn table_id(&self) -> u64 {
        self.table_id
    }

    pub fn capacity(&self) -> u64 {
        self.data.len() as u64
    }

    pub fn used_bytes(&self) -> u64 {
        self.used.total
    }

    pub fn unused_bytes(&self) -> u64 {
        self.capacity() - self.used.total
    }

    /// One past the highest used index.
    pub fn cursor(&self) -> u64 {
        self.used.high_water()
    }

    pub fn is_fresh(&self) -> bool {
        self.used.total == 0
    }

    pub fn is_used(&self, start: u64, len: u64) -> bool {
        self.used.overlaps(start, start + len)
    }

    /// Raw table contents, regardless of consumption state.
    pub fn raw_bytes(&self) -> &[u8] {
        &self.data
    }

    /// Takes the first unused range of `len` bytes anywhere in the table.
    pub fn allocate(&mut self, len: u64) -> Result<KeySlice, PskError> {
        self.allocate_in(0, self.capacity(), len)
    }

    /// Byte bounds of `region`.
    pub fn region_bounds(&self, region: Region) -> (u64, u64) {
        let mid = self.capacity() / 2;
        match region {
            Region::ClientOriginated => (0, mid),
            Region::HubOriginated => (mid, self.capacity()),
        }
    }

    /// Takes the first unused range of `len` bytes inside `region`.
    pub fn allocate_from(&mut self, region: Region, len: u64) -> Result<KeySlice, PskError> {
        let (lo, hi) = self.region_bounds(region);
        self.allocate_in(lo, hi, len)
    }

    fn allocate_in(&mut self, lo: u64, hi: u64, len: u64) -> Result<KeySlice, PskError> {
        let start = self
            .used
            .first_fit(len, lo, hi)
            .map_err(|available| PskError::TableExhausted { requested: len, available })?;
        self.take(start, len)
    }

    /// Takes exactly `[start, start + len)`, which must be unused.
    pub fn claim_range(&mut self, start: u64, len: u64) -> Result<KeySlice, PskError> {
        let end = start.checked_add(len).filter(|&e| e <= self.capacity());
        let Some(end) = end else {
            return Err(PskError::OutOfBounds { start, len, capacity: self.capacity() });
        };
        if self.used.overlaps(start, end) {
            return Err(PskError::OverlapDetected { start, len });
        }
        self.take(start, len)
    }

    /// [`PskTable::claim_range`] for a message's slice reference.
    pub fn claim(&mut self, slice: &SliceRef) -> Result<KeySlice, PskError> {
        if slice.table_id != self.table_id {
            return Err(PskError::TableMismatch { expected: self.table_id, found: slice.table_id });
        }
        self.claim_range(slice.start, slice.len)
    }

    fn take(&mut self, start: u64, len: u64) -> Result<KeySlice, PskError> {
        if len > 0 {
            if let Some(journal) = self.journal.as_mut() {
                journal.record(start, len)?;
            }
            self.used.insert(start, start + len);
        }
        let bytes = self.data[start as usize..(start + len) as usize].to_vec();
        Ok(KeySlice { table_id: self.table_id, start, bytes })
    }

    /// Backs consumption state with an append-only journal at `path`,
    /// replaying any records already there.
    pub fn attach_journal(&mut self, path: &Path) -> Result<(), PskError> {
        let mut existing = Vec::new();
        if path.exists() {
            File::open(path)?.read_to_end(&mut existing)?;
        }
        // A torn trailing record was never acknowledged, so its bytes were
        // never released; dropping it is safe.
        for rec in existing.chunks_exact(JOURNAL_RECORD_LEN) {
            let start = u64::from_be_bytes(rec[..8].try_into().expect("record"));
            let len = u64::from_be_bytes(rec[8..].try_into().expect("record"));
            let end = start.checked_add(len).filter(|&e| e <= self.capacity());
            let Some(end) = end else {
                return Err(PskError::OutOfBounds { start, len, capacity: self.capacity() });
            };
            self.used.insert(start, end);
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        self.journal = Some(Journal { file });
        Ok(())
    }

    pub fn write_pskm<W: Write>(&self, mut out: W) -> Result<(), PskError> {
        if !self.is_fresh() {
            return Err(PskError::NotFresh);
        }
        let mut header = Vec::with_capacity(PSKM_HEADER_LEN);
        header.extend_from_slice(PSKM_MAGIC);
        header.push(PSKM_VERSION);
        header.extend_from_slice(&self.hub_id.0);
        header.extend_from_slice(&self.client_id.0);
        header.extend_from_slice(&self.table_id.to_be_bytes());
        header.extend_from_slice(&(self.data.len() as u64).to_be_bytes());
        out.write_all(&header)?;
        out.write_all(&self.data)?;
        out.flush()?;
        Ok(())
    }

    /// Parses a PSKM; the returned table is entirely unused.
    pub fn read_pskm<R: Read>(mut input: R) -> Result<PskTable, PskError> {
        let mut buf = Vec::new();
        input.read_to_end(&mut buf)?;
        Self::parse_pskm(&buf)
    }

    /// [`PskTable::read_pskm`], rejecting a file issued for a different pair.
    pub fn read_pskm_for<R: Read>(input: R, hub_id: PartyId, client_id: PartyId) -> Result<PskTable, PskError> {
        let table = Self::read_pskm(input)?;
        if table.hub_id != hub_id || table.client_id != client_id {
            return Err(PskError::IdMismatch);
        }
        Ok(table)
    }

    pub fn parse_pskm(buf: &[u8]) -> Result<PskTable, PskError> {
        if buf.len() < 4 {
            return Err(PskError::TruncatedFile);
        }
        if &buf[..4] != PSKM_MAGIC {
            return Err(PskError::BadMagic);
        }
        if buf.len() < PSKM_HEADER_LEN {
            return Err(PskError::TruncatedFile);
        }
        if buf[4] != PSKM_VERSION {
            return Err(PskError::UnsupportedVersion(buf[4]));
        }
        let hub_id = PartyId(buf[5..21].try_into().expect("16 bytes"));
        let client_id = PartyId(buf[21..37].try_into().expect("16 bytes"));
        let table_id = u64::from_be_bytes(buf[37..45].try_into().expect("8 bytes"));
        let length = u64::from_be_bytes(buf[45..53].try_into().expect("8 bytes"));
        let body = &buf[PSKM_HEADER_LEN..];
        if (body.len() as u64) < length {
            return Err(PskError::TruncatedFile);
        }
        if body.len() as u64 > length {
            return Err(PskError::TrailingBytes);
        }
        Ok(PskTable::new(hub_id, client_id, table_id, body.to_vec()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn table(n: usize) -> PskTable {
        PskTable::new(
            PartyId::from_label("hub"),
            PartyId::from_label("alice"),
            1,
            (0..n).map(|i| i as u8).collect(),
        )
    }

    #[test]
    fn allocate_examples() {
        let mut t = table(100);
        let a = t.allocate(10).unwrap();
        assert_eq!((a.start, a.bytes.len()), (0, 10));
        assert_eq!(t.cursor(), 10);
        let b = t.allocate(10).unwrap();
        assert_eq!((b.start, b.bytes.len()), (10, 10));
        assert!(matches!(table(100).allocate(101), Err(PskError::TableExhausted { requested: 101, .. })));
    }

    #[test]
    fn claim_examples() {
        let mut t = table(100);
        t.claim_range(0, 10).unwrap();
        assert!(matches!(t.claim_range(0, 10), Err(PskError::OverlapDetected { .. })));
        assert!(matches!(t.claim_range(95, 15), Err(PskError::OutOfBounds { .. })));

        let mut t = table(100);
        t.allocate(10).unwrap();
        let s = t.claim_range(10, 5).unwrap();
        assert_eq!(s.bytes, vec![10, 11, 12, 13, 14]);
    }

    #[test]
    fn regions_do_not_collide() {
        let mut t = table(100);
        assert_eq!(t.allocate_from(Region::HubOriginated, 10).unwrap().start, 50);
        assert_eq!(t.allocate_from(Region::ClientOriginated, 10).unwrap().start, 0);
        t.claim_range(40, 5).unwrap();
        assert_eq!(t.allocate_from(Region::ClientOriginated, 10).unwrap().start, 10);
        assert_eq!(t.allocate_from(Region::HubOriginated, 10).unwrap().start, 60);
        assert!(matches!(
            t.allocate_from(Region::ClientOriginated, 30),
            Err(PskError::TableExhausted { available: 20, .. })
        ));
    }

    #[test]
    fn claim_rejects_other_tables() {
        let mut t = table(10);
        let r = SliceRef { table_id: 2, start: 0, len: 1 };
        assert!(matches!(t.claim(&r), Err(PskError::TableMismatch { expected: 1, found: 2 })));
    }

    #[test]
    fn allocate_skips_claimed_ranges() {
        let mut t = table(30);
        t.claim_range(5, 5).unwrap();
        assert_eq!(t.allocate(5).unwrap().start, 0);
        assert_eq!(t.allocate(3).unwrap().start, 10);
        t.claim_range(20, 2).unwrap();
        assert_eq!(t.allocate(8).unwrap().start, 22);
        assert!(matches!(t.allocate(8), Err(PskError::TableExhausted { available: 7, .. })));
    }

    #[test]
    fn pskm_round_trip_and_errors() {
        let t = table(64);
        let mut buf = Vec::new();
        t.write_pskm(&mut buf).unwrap();
        assert_eq!(buf.len(), PSKM_HEADER_LEN + 64);
        let back = PskTable::read_pskm(&buf[..]).unwrap();
        assert_eq!(back.raw_bytes(), t.raw_bytes());
        assert_eq!((back.hub_id(), back.client_id(), back.table_id()), (t.hub_id(), t.client_id(), 1));
        assert!(back.is_fresh());

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(PskTable::read_pskm(&bad[..]), Err(PskError::BadMagic)));
        assert!(matches!(PskTable::read_pskm(&buf[..buf.len() - 1]), Err(PskError::TruncatedFile)));
        assert!(matches!(PskTable::read_pskm(&buf[..20]), Err(PskError::TruncatedFile)));
        let mut long = buf.clone();
        long.push(0);
        assert!(matches!(PskTable::read_pskm(&long[..]), Err(PskError::TrailingBytes)));
        let mut v2 = buf.clone();
        v2[4] = 2;
        assert!(matches!(PskTable::read_pskm(&v2[..]), Err(PskError::UnsupportedVersion(2))));
        assert!(matches!(
            PskTable::read_pskm_for(&buf[..], PartyId::from_label("other"), t.client_id()),
            Err(PskError::IdMismatch)
        ));
    }

    #[test]
    fn used_table_cannot_be_shipped() {
        let mut t = table(8);
        t.allocate(1).unwrap();
        assert!(matches!(t.write_pskm(Vec::new()), Err(PskError::NotFresh)));
    }

    #[test]
    fn journal_survives_restart() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("table.journal");
        let mut t = table(100);
        t.attach_journal(&path).unwrap();
        t.allocate(10).unwrap();
        t.claim_range(50, 5).unwrap();
        drop(t);

        // a torn trailing record is ignored
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(&[0, 0, 0]).unwrap();
        drop(f);

        let mut restored = table(100);
        restored.attach_journal(&path).unwrap();
        assert_eq!(restored.used_bytes(), 15);
        assert!(matches!(restored.claim_range(0, 1), Err(PskError::OverlapDetected { .. })));
        assert!(matches!(restored.claim_range(52, 1), Err(PskError::OverlapDetected { .. })));
        assert_eq!(restored.allocate(10).unwrap().start, 10);
    }

    proptest! {
        #[test]
        fn interleaved_operations_never_reuse_bytes(seed: u64, ops in 1usize..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 500u64;
            let mut t = table(n as usize);
            let mut owner = vec![false; n as usize];
            let mut handed_out = 0u64;
            for _ in 0..ops {
                let result = if rng.gen_bool(0.5) {
                    t.allocate(rng.gen_range(0..30))
                } else {
                    t.claim_range(rng.gen_range(0..n + 10), rng.gen_range(0..30))
                };
                if let Ok(slice) = result {
                    for i in slice.start..slice.start + slice.bytes.len() as u64 {
                        prop_assert!(!owner[i as usize], "byte {} handed out twice", i);
                        owner[i as usize] = true;
                    }
                    handed_out += slice.bytes.len() as u64;
                }
                prop_assert_eq!(handed_out + t.unused_bytes(), n);
                prop_assert!(t.cursor() <= n);
            }
        }
    }
}
