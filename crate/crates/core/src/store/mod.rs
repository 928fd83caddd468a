//! Append-only event log.
//!
//! Record layout, repeated to end of file (all integers little-endian):
//!
//! ```text
//! +----------------+----------------+-------------------------+
//! | len: u32       | crc32: u32     | payload: len bytes JSON |
//! +----------------+----------------+-------------------------+
//! ```
//!
//! `crc32` is CRC-32/ISO-HDLC of the payload. Payloads carry their own `seq`,
//! which must run 1, 2, 3, ... without gaps. Snapshots live in a separate
//! slot as `seq: u64 | crc32: u32 | JSON state`.

mod event;
pub mod export;
mod storage;

pub use event::{Event, EventDraft, EventKind, MessagePurpose, ScheduleReason};
pub use storage::{FileStorage, LogStorage, MemoryStorage};

use std::io::{self, Read};

use thiserror::Error;

const HEADER: usize = 8;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("storage failure: {0}")]
    StorageFailure(String),
    #[error("corrupt event at seq {seq}")]
    CorruptEvent { seq: u64 },
    #[error("no event with seq {0}")]
    NotFound(u64),
}

impl From<io::Error> for StoreError {
    fn from(e: io::Error) -> Self {
        StoreError::StorageFailure(e.to_string())
    }
}

/// A read model built by folding events in order.
pub trait Fold {
    fn apply(&mut self, event: &Event);
}

pub fn encode_record(event: &Event) -> Vec<u8> {
    let payload = serde_json::to_vec(event).expect("events serialize");
    let mut out = Vec::with_capacity(HEADER + payload.len());
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
    out.extend_from_slice(&payload);
    out
}

enum DecodeError {
    /// The log ends inside a record.
    Torn { seq: u64, offset: u64 },
    Corrupt { seq: u64 },
    Io(io::Error),
}

impl From<DecodeError> for StoreError {
    fn from(e: DecodeError) -> Self {
        match e {
            DecodeError::Torn { seq, .. } | DecodeError::Corrupt { seq } => StoreError::CorruptEvent { seq },
            DecodeError::Io(e) => e.into(),
        }
    }
}

/// Streams `(offset, event)` pairs from the start of a log.
struct RecordReader<R> {
    inner: R,
    offset: u64,
    expected: u64,
    done: bool,
}

impl<R: Read> RecordReader<R> {
    fn new(inner: R) -> Self {
        RecordReader { inner, offset: 0, expected: 1, done: false }
    }

    /// Fills `buf`; `Ok(false)` on clean EOF before the first byte.
    fn fill(&mut self, buf: &mut [u8], at_boundary: bool) -> Result<bool, DecodeError> {
        let mut read = 0;
        while read < buf.len() {
            match self.inner.read(&mut buf[read..]) {
                Ok(0) if read == 0 && at_boundary => return Ok(false),
                Ok(0) => return Err(DecodeError::Torn { seq: self.expected, offset: self.offset }),
                Ok(n) => read += n,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(DecodeError::Io(e)),
            }
        }
        Ok(true)
    }

    fn next_record(&mut self) -> Result<Option<(u64, Event)>, DecodeError> {
        let mut header = [0u8; HEADER];
        if !self.fill(&mut header, true)? {
            return Ok(None);
        }
        let len = u32::from_le_bytes(header[..4].try_into().expect("4 bytes")) as usize;
        let crc = u32::from_le_bytes(header[4..].try_into().expect("4 bytes"));
        let mut payload = vec![0u8; len];
        self.fill(&mut payload, false)?;
        let seq = self.expected;
        if crc32fast::hash(&payload) != crc {
            return Err(DecodeError::Corrupt { seq });
        }
        let event: Event = serde_json::from_slice(&payload).map_err(|_| DecodeError::Corrupt { seq })?;
        if event.seq != seq {
            return Err(DecodeError::Corrupt { seq });
        }
        let at = self.offset;
        self.offset += (HEADER + len) as u64;
        self.expected += 1;
        Ok(Some((at, event)))
    }
}

impl<R: Read> Iterator for RecordReader<R> {
    type Item = Result<(u64, Event), DecodeError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        match self.next_record() {
            Ok(Some(r)) => Some(Ok(r)),
            Ok(None) => {
                self.done = true;
                None
            }
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}

/// The log plus an offset index. Single writer; reads never block appends
/// of other stores but do borrow this one.
pub struct EventStore {
    storage: Box<dyn LogStorage>,
    offsets: Vec<u64>,
    end: u64,
    poisoned: bool,
}

impl EventStore {
    pub fn in_memory() -> Self {
        EventStore { storage: Box::new(MemoryStorage::new()), offsets: Vec::new(), end: 0, poisoned: false }
    }

    /// Opens an existing log, verifying every record.
    pub fn open(storage: Box<dyn LogStorage>) -> Result<Self, StoreError> {
        let (offsets, end) = scan(storage.as_ref()).map_err(StoreError::from)?;
        Ok(EventStore { storage, offsets, end, poisoned: false })
    }

    /// Like [`open`](Self::open), but cuts off a record torn by a crash
    /// mid-append. Returns the number of bytes dropped.
    pub fn open_repairing(mut storage: Box<dyn LogStorage>) -> Result<(Self, u64), StoreError> {
        match scan(storage.as_ref()) {
            Ok((offsets, end)) => Ok((EventStore { storage, offsets, end, poisoned: false }, 0)),
            Err(DecodeError::Torn { offset, .. }) => {
                let total = storage.len()?;
                storage.truncate(offset)?;
                let mut store = Self::open(storage)?;
                store.end = offset;
                Ok((store, total - offset))
            }
            Err(e) => Err(e.into()),
        }
    }

    pub fn last_seq(&self) -> u64 {
        self.offsets.len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn append(&mut self, draft: EventDraft) -> Result<Event, StoreError> {
        let mut v = self.append_batch(vec![draft])?;
        Ok(v.pop().expect("one event"))
    }

    /// Appends all drafts in one write. After a storage failure every append
    /// fails until the backend accepts a rollback to the last good length.
    pub fn append_batch(&mut self, drafts: Vec<EventDraft>) -> Result<Vec<Event>, StoreError> {
        if self.poisoned {
            self.storage
                .truncate(self.end)
                .map_err(|e| StoreError::StorageFailure(format!("still failing: {e}")))?;
            self.poisoned = false;
        }
        let mut seq = self.last_seq();
        let mut bytes = Vec::new();
        let mut offsets = Vec::with_capacity(drafts.len());
        let events: Vec<Event> = drafts
            .into_iter()
            .map(|d| {
                seq += 1;
                let e = Event { seq, at: d.at, patient_id: d.patient_id, kind: d.kind };
                offsets.push(self.end + bytes.len() as u64);
                bytes.extend_from_slice(&encode_record(&e));
                e
            })
            .collect();
        if let Err(e) = self.storage.append(&bytes) {
            self.poisoned = true;
            return Err(StoreError::StorageFailure(e.to_string()));
        }
        self.end += bytes.len() as u64;
        self.offsets.extend(offsets);
        Ok(events)
    }

    pub fn read(&self, seq: u64) -> Result<Event, StoreError> {
        let idx = seq.checked_sub(1).ok_or(StoreError::NotFound(seq))? as usize;
        let offset = *self.offsets.get(idx).ok_or(StoreError::NotFound(seq))?;
        let mut header = [0u8; HEADER];
        self.storage.read_at(offset, &mut header)?;
        let len = u32::from_le_bytes(header[..4].try_into().expect("4 bytes")) as usize;
        let crc = u32::from_le_bytes(header[4..].try_into().expect("4 bytes"));
        let mut payload = vec![0u8; len];
        self.storage.read_at(offset + HEADER as u64, &mut payload)?;
        if crc32fast::hash(&payload) != crc {
            return Err(StoreError::CorruptEvent { seq });
        }
        serde_json::from_slice(&payload).map_err(|_| StoreError::CorruptEvent { seq })
    }

    /// Every event with `seq > after`, in order.
    pub fn events_after(&self, after: u64) -> Result<Vec<Event>, StoreError> {
        let mut out = Vec::new();
        self.for_each_after(after, |e| out.push(e.clone()))?;
        Ok(out)
    }

    pub fn for_each_after(&self, after: u64, mut f: impl FnMut(&Event)) -> Result<(), StoreError> {
        if after >= self.last_seq() {
            return Ok(());
        }
        for rec in RecordReader::new(self.storage.reader()?) {
            let (_, event) = rec?;
            if event.seq > after {
                f(&event);
            }
        }
        Ok(())
    }

    /// Folds the whole log into a fresh read model.
    pub fn replay<F: Fold + Default>(&self) -> Result<F, StoreError> {
        let mut state = F::default();
        self.replay_onto(&mut state, 0)?;
        Ok(state)
    }

    /// Applies events with `seq > after` onto an existing state.
    pub fn replay_onto<F: Fold>(&self, state: &mut F, after: u64) -> Result<(), StoreError> {
        self.for_each_after(after, |e| state.apply(e))
    }

    pub fn write_snapshot(&mut self, seq: u64, state_json: &[u8]) -> Result<(), StoreError> {
        let mut bytes = Vec::with_capacity(12 + state_json.len());
        bytes.extend_from_slice(&seq.to_le_bytes());
        bytes.extend_from_slice(&crc32fast::hash(state_json).to_le_bytes());
        bytes.extend_from_slice(state_json);
        self.storage.write_snapshot(&bytes)?;
        Ok(())
    }

    /// The stored snapshot, if present, intact and not ahead of the log.
    pub fn read_snapshot(&self) -> Result<Option<(u64, Vec<u8>)>, StoreError> {
        let Some(bytes) = self.storage.read_snapshot()? else { return Ok(None) };
        if bytes.len() < 12 {
            return Ok(None);
        }
        let seq = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"));
        let crc = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        let body = &bytes[12..];
        if crc32fast::hash(body) != crc || seq > self.last_seq() {
            return Ok(None);
        }
        Ok(Some((seq, body.to_vec())))
    }
}

fn scan(storage: &dyn LogStorage) -> Result<(Vec<u64>, u64), DecodeError> {
    let mut offsets = Vec::new();
    let mut reader = RecordReader::new(storage.reader().map_err(DecodeError::Io)?);
    while let Some((offset, _)) = reader.next_record()? {
        offsets.push(offset);
    }
    Ok((offsets, reader.offset))
}

/// Folds raw log bytes; convenience for tooling and tests.
pub fn replay_bytes<F: Fold + Default>(bytes: &[u8]) -> Result<F, StoreError> {
    let mut state = F::default();
    for rec in RecordReader::new(bytes) {
        state.apply(&rec?.1);
    }
    Ok(state)
}

/// Byte offsets where records end, i.e. every valid truncation point.
pub fn record_boundaries(bytes: &[u8]) -> Result<Vec<usize>, StoreError> {
    let mut out = vec![0];
    let mut reader = RecordReader::new(bytes);
    while reader.next_record()?.is_some() {
        out.push(reader.offset as usize);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{PatientId, TriageCategory};
    use std::sync::{Arc, Mutex};

    fn draft(n: u64) -> EventDraft {
        EventDraft::patient(
            &PatientId::new(format!("p{n}")),
            "2020-03-09T08:00:00Z".parse().unwrap(),
            EventKind::FlagChanged {
                from: TriageCategory::Green,
                to: TriageCategory::Red,
                ruleset_version: "v".into(),
            },
        )
    }

    #[derive(Default, Debug, PartialEq)]
    struct Seqs(Vec<u64>);

    impl Fold for Seqs {
        fn apply(&mut self, e: &Event) {
            self.0.push(e.seq);
        }
    }

    #[test]
    fn seq_starts_at_one_and_increases() {
        let mut s = EventStore::in_memory();
        assert_eq!(s.append(draft(1)).unwrap().seq, 1);
        assert_eq!(s.append(draft(2)).unwrap().seq, 2);
        let batch = s.append_batch(vec![draft(3), draft(4)]).unwrap();
        assert_eq!(batch.iter().map(|e| e.seq).collect::<Vec<_>>(), [3, 4]);
        assert_eq!(s.read(3).unwrap(), batch[0]);
        assert!(matches!(s.read(5), Err(StoreError::NotFound(5))));
        assert_eq!(s.replay::<Seqs>().unwrap(), Seqs(vec![1, 2, 3, 4]));
        assert_eq!(s.events_after(2).unwrap().len(), 2);
    }

    #[test]
    fn empty_log_replays_to_default() {
        let s = EventStore::in_memory();
        assert_eq!(s.replay::<Seqs>().unwrap(), Seqs::default());
    }

    #[test]
    fn event_json_round_trips() {
        let mut s = EventStore::in_memory();
        let e = s.append(draft(1)).unwrap();
        let json = serde_json::to_value(&e).unwrap();
        assert_eq!(json["kind"], "flag_changed");
        assert_eq!(json["payload"]["to"], "red");
        assert_eq!(serde_json::from_value::<Event>(json).unwrap(), e);
    }

    fn log_of(n: u64) -> Vec<u8> {
        let mut s = MemoryStorage::new();
        for i in 1..=n {
            let mut d = draft(i);
            d.patient_id = Some(PatientId::new(format!("p{i}")));
            let e = Event { seq: i, at: d.at, patient_id: d.patient_id, kind: d.kind };
            s.append(&encode_record(&e)).unwrap();
        }
        s.bytes().to_vec()
    }

    #[test]
    fn flipped_byte_reports_its_seq() {
        let mut bytes = log_of(5);
        let bounds = record_boundaries(&bytes).unwrap();
        bytes[bounds[2] + HEADER + 5] ^= 0x40;
        let err = EventStore::open(Box::new(MemoryStorage::from_bytes(bytes.clone()))).err().unwrap();
        assert!(matches!(err, StoreError::CorruptEvent { seq: 3 }));
        assert!(matches!(replay_bytes::<Seqs>(&bytes), Err(StoreError::CorruptEvent { seq: 3 })));
    }

    #[test]
    fn every_record_boundary_is_a_valid_prefix() {
        let bytes = log_of(6);
        let bounds = record_boundaries(&bytes).unwrap();
        assert_eq!(bounds.len(), 7);
        for (n, cut) in bounds.iter().enumerate() {
            let store = EventStore::open(Box::new(MemoryStorage::from_bytes(bytes[..*cut].to_vec()))).unwrap();
            assert_eq!(store.last_seq(), n as u64);
            let seqs: Seqs = store.replay().unwrap();
            assert_eq!(seqs.0, (1..=n as u64).collect::<Vec<_>>());
        }
    }

    #[test]
    fn torn_tail_is_corrupt_but_repairable() {
        let bytes = log_of(3);
        let torn = bytes[..bytes.len() - 3].to_vec();
        assert!(matches!(
            EventStore::open(Box::new(MemoryStorage::from_bytes(torn.clone()))),
            Err(StoreError::CorruptEvent { seq: 3 })
        ));
        let (mut store, dropped) = EventStore::open_repairing(Box::new(MemoryStorage::from_bytes(torn))).unwrap();
        assert!(dropped > 0);
        assert_eq!(store.last_seq(), 2);
        assert_eq!(store.append(draft(9)).unwrap().seq, 3);
        assert_eq!(store.replay::<Seqs>().unwrap().0, [1, 2, 3]);
    }

    /// Fails writes while `down` is set, leaving half a write behind.
    struct Flaky {
        inner: MemoryStorage,
        down: Arc<Mutex<bool>>,
    }

    impl LogStorage for Flaky {
        fn append(&mut self, bytes: &[u8]) -> io::Result<()> {
            if *self.down.lock().unwrap() {
                self.inner.append(&bytes[..bytes.len() / 2])?;
                return Err(io::Error::other("disk full"));
            }
            self.inner.append(bytes)
        }
        fn len(&self) -> io::Result<u64> {
            self.inner.len()
        }
        fn truncate(&mut self, len: u64) -> io::Result<()> {
            if *self.down.lock().unwrap() {
                return Err(io::Error::other("disk full"));
            }
            self.inner.truncate(len)
        }
        fn read_at(&self, offset: u64, buf: &mut [u8]) -> io::Result<()> {
            self.inner.read_at(offset, buf)
        }
        fn reader(&self) -> io::Result<Box<dyn Read + '_>> {
            self.inner.reader()
        }
        fn write_snapshot(&mut self, bytes: &[u8]) -> io::Result<()> {
            self.inner.write_snapshot(bytes)
        }
        fn read_snapshot(&self) -> io::Result<Option<Vec<u8>>> {
            self.inner.read_snapshot()
        }
    }

    #[test]
    fn storage_failure_is_fail_stop_until_recovery() {
        let down = Arc::new(Mutex::new(false));
        let mut s = EventStore::open(Box::new(Flaky { inner: MemoryStorage::new(), down: down.clone() })).unwrap();
        s.append(draft(1)).unwrap();
        *down.lock().unwrap() = true;
        assert!(matches!(s.append(draft(2)), Err(StoreError::StorageFailure(_))));
        assert!(matches!(s.append(draft(2)), Err(StoreError::StorageFailure(_))));
        *down.lock().unwrap() = false;
        assert_eq!(s.append(draft(2)).unwrap().seq, 2);
        assert_eq!(s.replay::<Seqs>().unwrap().0, [1, 2]);
    }

    #[test]
    fn snapshot_slot_checks_crc_and_position() {
        let mut s = EventStore::in_memory();
        s.append(draft(1)).unwrap();
        assert!(s.read_snapshot().unwrap().is_none());
        s.write_snapshot(1, b"{\"x\":1}").unwrap();
        assert_eq!(s.read_snapshot().unwrap(), Some((1, b"{\"x\":1}".to_vec())));
        s.write_snapshot(7, b"{}").unwrap();
        assert!(s.read_snapshot().unwrap().is_none(), "snapshot ahead of the log is ignored");
    }

    #[test]
    fn file_storage_survives_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log/events.log");
        {
            let mut s = EventStore::open(Box::new(FileStorage::open(&path, false).unwrap())).unwrap();
            s.append_batch(vec![draft(1), draft(2), draft(3)]).unwrap();
            s.write_snapshot(2, b"{}").unwrap();
        }
        let s = EventStore::open(Box::new(FileStorage::open(&path, true).unwrap())).unwrap();
        assert_eq!(s.last_seq(), 3);
        assert_eq!(s.read(2).unwrap().seq, 2);
        assert_eq!(s.read_snapshot().unwrap().unwrap().0, 2);
    }
}
