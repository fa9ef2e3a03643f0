//! Binary trial-record files.
//!
//! Layout:
//!
//! ```text
//! offset 0   magic   b"MQR1"
//! offset 4   version u32 LE (currently 1)
//! offset 8   trials  u64 LE
//! offset 16  packed body: 2 bits per trial, little-endian bit order
//!            bit 0 = test-mode flag, bit 1 = outcome bit
//! then       side table: test count u64 LE, then per test trial in
//!            ascending index order: index u64 LE, state tag u8 (0..=3)
//! ```
//!
//! The packed body streams at scale; the side table restores probe-state
//! assignments on read. Raw click detail (no-click vs double-click) is a
//! diagnostic and is not persisted.

use crate::protocol::{Schedule, TrialMode, TrialRecord};
use crate::qstate::TestStateId;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

const MAGIC: [u8; 4] = *b"MQR1";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic; not a trial-record file")]
    BadMagic,
    #[error("unsupported record file version {0}")]
    BadVersion(u32),
    #[error("record file truncated")]
    Truncated,
    #[error("side table disagrees with packed mode flags at trial {0}")]
    SideTableMismatch(u64),
    #[error("writer saw trial {got}, expected {expected} (records must arrive in index order)")]
    OutOfOrder { got: u64, expected: u64 },
    #[error("writer closed after {got} of {expected} trials")]
    WrongCount { got: u64, expected: u64 },
}

/// Streaming writer; records must arrive in index order.
pub struct RecordWriter<W: Write> {
    out: W,
    trials: u64,
    next_index: u64,
    bit_byte: u8,
    tests: Vec<(u64, u8)>,
}

impl RecordWriter<BufWriter<File>> {
    pub fn create(path: &Path, trials: u64) -> Result<Self, RecordError> {
        Self::new(BufWriter::new(File::create(path)?), trials)
    }
}

impl<W: Write> RecordWriter<W> {
    pub fn new(mut out: W, trials: u64) -> Result<Self, RecordError> {
        out.write_all(&MAGIC)?;
        out.write_all(&VERSION.to_le_bytes())?;
        out.write_all(&trials.to_le_bytes())?;
        Ok(Self { out, trials, next_index: 0, bit_byte: 0, tests: Vec::new() })
    }

    pub fn push(&mut self, rec: &TrialRecord) -> Result<(), RecordError> {
        if rec.index != self.next_index {
            return Err(RecordError::OutOfOrder { got: rec.index, expected: self.next_index });
        }
        let slot = (rec.index % 4) as u32 * 2;
        let mut pair = (rec.bit() as u8) << 1;
        if let TrialMode::Test(state) = rec.mode {
            pair |= 1;
            self.tests.push((rec.index, state.index() as u8));
        }
        self.bit_byte |= pair << slot;
        self.next_index += 1;
        if self.next_index % 4 == 0 {
            self.out.write_all(&[self.bit_byte])?;
            self.bit_byte = 0;
        }
        Ok(())
    }

    /// Flushes the body, writes the side table, and returns the sink.
    pub fn finish(mut self) -> Result<W, RecordError> {
        if self.next_index != self.trials {
            return Err(RecordError::WrongCount { got: self.next_index, expected: self.trials });
        }
        if self.next_index % 4 != 0 {
            self.out.write_all(&[self.bit_byte])?;
        }
        self.out.write_all(&(self.tests.len() as u64).to_le_bytes())?;
        for &(index, tag) in &self.tests {
            self.out.write_all(&index.to_le_bytes())?;
            self.out.write_all(&[tag])?;
        }
        self.out.flush()?;
        Ok(self.out)
    }
}

/// Header and side table of a record file.
#[derive(Debug, Clone)]
pub struct RecordHeader {
    pub trials: u64,
    pub tests: Vec<(u64, TestStateId)>,
}

impl RecordHeader {
    pub fn schedule(&self) -> Result<Schedule, crate::protocol::ProtocolError> {
        Schedule::from_tests(self.trials, self.tests.clone())
    }
}

/// Reads a record file, streaming `(mode, bit)` pairs in index order.
pub struct RecordReader<R: Read> {
    body: R,
    trials: u64,
    next_index: u64,
    cur_byte: u8,
    tests: Vec<(u64, TestStateId)>,
    next_test: usize,
}

impl RecordReader<BufReader<File>> {
    pub fn open(path: &Path) -> Result<Self, RecordError> {
        Self::new(BufReader::new(File::open(path)?))
    }
}

fn read_exact_or_truncated<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<(), RecordError> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            RecordError::Truncated
        } else {
            RecordError::Io(e)
        }
    })
}

impl<R: Read + io::Seek> RecordReader<R> {
    pub fn new(mut body: R) -> Result<Self, RecordError> {
        let mut magic = [0u8; 4];
        read_exact_or_truncated(&mut body, &mut magic)?;
        if magic != MAGIC {
            return Err(RecordError::BadMagic);
        }
        let mut word = [0u8; 4];
        read_exact_or_truncated(&mut body, &mut word)?;
        let version = u32::from_le_bytes(word);
        if version != VERSION {
            return Err(RecordError::BadVersion(version));
        }
        let mut qword = [0u8; 8];
        read_exact_or_truncated(&mut body, &mut qword)?;
        let trials = u64::from_le_bytes(qword);

        // side table sits after the packed body
        let body_bytes = trials.div_ceil(4);
        body.seek(io::SeekFrom::Start(16 + body_bytes))?;
        read_exact_or_truncated(&mut body, &mut qword)?;
        let n_tests = u64::from_le_bytes(qword);
        let mut tests = Vec::with_capacity(n_tests as usize);
        let mut entry = [0u8; 9];
        for _ in 0..n_tests {
            read_exact_or_truncated(&mut body, &mut entry)?;
            let index = u64::from_le_bytes(entry[..8].try_into().expect("8 bytes"));
            let state = TestStateId::from_index(entry[8] as usize)
                .ok_or(RecordError::SideTableMismatch(index))?;
            tests.push((index, state));
        }
        body.seek(io::SeekFrom::Start(16))?;
        Ok(Self { body, trials, next_index: 0, cur_byte: 0, tests, next_test: 0 })
    }

    pub fn header(&self) -> RecordHeader {
        RecordHeader { trials: self.trials, tests: self.tests.clone() }
    }

    pub fn trials(&self) -> u64 {
        self.trials
    }

    /// Next `(mode, bit)` pair, or `None` at the end.
    pub fn next_record(&mut self) -> Result<Option<(TrialMode, bool)>, RecordError> {
        if self.next_index >= self.trials {
            return Ok(None);
        }
        if self.next_index % 4 == 0 {
            let mut byte = [0u8; 1];
            read_exact_or_truncated(&mut self.body, &mut byte)?;
            self.cur_byte = byte[0];
        }
        let slot = (self.next_index % 4) as u32 * 2;
        let pair = (self.cur_byte >> slot) & 0b11;
        let is_test = pair & 1 == 1;
        let bit = pair & 2 == 2;
        let mode = if is_test {
            match self.tests.get(self.next_test) {
                Some(&(pos, state)) if pos == self.next_index => {
                    self.next_test += 1;
                    TrialMode::Test(state)
                }
                _ => return Err(RecordError::SideTableMismatch(self.next_index)),
            }
        } else {
            if let Some(&(pos, _)) = self.tests.get(self.next_test) {
                if pos == self.next_index {
                    return Err(RecordError::SideTableMismatch(self.next_index));
                }
            }
            TrialMode::Generation
        };
        self.next_index += 1;
        Ok(Some((mode, bit)))
    }

    /// Streams every record into `f`.
    pub fn for_each(&mut self, mut f: impl FnMut(TrialMode, bool)) -> Result<(), RecordError> {
        while let Some((mode, bit)) = self.next_record()? {
            f(mode, bit);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::RawOutcome;
    use std::io::Cursor;

    fn roundtrip(records: &[TrialRecord]) -> Vec<(TrialMode, bool)> {
        let mut w = RecordWriter::new(Cursor::new(Vec::new()), records.len() as u64).unwrap();
        for r in records {
            w.push(r).unwrap();
        }
        let bytes = w.finish().unwrap().into_inner();
        let mut r = RecordReader::new(Cursor::new(bytes)).unwrap();
        let mut out = Vec::new();
        r.for_each(|m, b| out.push((m, b))).unwrap();
        out
    }

    #[test]
    fn round_trips_modes_and_bits() {
        let records = vec![
            TrialRecord { index: 0, mode: TrialMode::Generation, raw: RawOutcome::Click1 },
            TrialRecord { index: 1, mode: TrialMode::Test(TestStateId::XPlus), raw: RawOutcome::Click0 },
            TrialRecord { index: 2, mode: TrialMode::Generation, raw: RawOutcome::NoClick },
            TrialRecord { index: 3, mode: TrialMode::Test(TestStateId::Z1), raw: RawOutcome::Click1 },
            TrialRecord { index: 4, mode: TrialMode::Generation, raw: RawOutcome::Click0 },
        ];
        let got = roundtrip(&records);
        assert_eq!(
            got,
            vec![
                (TrialMode::Generation, true),
                (TrialMode::Test(TestStateId::XPlus), false),
                (TrialMode::Generation, false),
                (TrialMode::Test(TestStateId::Z1), true),
                (TrialMode::Generation, false),
            ]
        );
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(matches!(
            RecordReader::new(Cursor::new(b"nope".to_vec())),
            Err(RecordError::Truncated) | Err(RecordError::BadMagic)
        ));
        let mut w = RecordWriter::new(Cursor::new(Vec::new()), 1).unwrap();
        w.push(&TrialRecord { index: 0, mode: TrialMode::Generation, raw: RawOutcome::Click0 })
            .unwrap();
        let mut bytes = w.finish().unwrap().into_inner();
        bytes.truncate(bytes.len() - 4);
        assert!(matches!(RecordReader::new(Cursor::new(bytes)), Err(RecordError::Truncated)));
    }

    #[test]
    fn writer_enforces_order_and_count() {
        let mut w = RecordWriter::new(Cursor::new(Vec::new()), 2).unwrap();
        let rec = TrialRecord { index: 1, mode: TrialMode::Generation, raw: RawOutcome::Click0 };
        assert!(matches!(w.push(&rec), Err(RecordError::OutOfOrder { .. })));
        let rec0 = TrialRecord { index: 0, mode: TrialMode::Generation, raw: RawOutcome::Click0 };
        w.push(&rec0).unwrap();
        assert!(matches!(w.finish(), Err(RecordError::WrongCount { got: 1, expected: 2 })));
    }

    #[test]
    fn header_reconstructs_schedule() {
        let records = vec![
            TrialRecord { index: 0, mode: TrialMode::Generation, raw: RawOutcome::Click0 },
            TrialRecord { index: 1, mode: TrialMode::Test(TestStateId::YPlus), raw: RawOutcome::Click1 },
        ];
        let mut w = RecordWriter::new(Cursor::new(Vec::new()), 2).unwrap();
        for r in &records {
            w.push(r).unwrap();
        }
        let bytes = w.finish().unwrap().into_inner();
        let r = RecordReader::new(Cursor::new(bytes)).unwrap();
        let schedule = r.header().schedule().unwrap();
        assert_eq!(schedule.n_trials(), 2);
        assert_eq!(schedule.tests(), &[(1, TestStateId::YPlus)]);
    }
}
