//! On-disk column file: one file per entity kind per snapshot.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8  b"QFCOL001"
//! entity     1
//! reserved   7  zeros
//! rows       8
//! dir_bytes  4  byte length of the directory that follows
//! ncols      4
//! directory  ncols entries: name_len u16, name bytes, kind u8,
//!            offset u64 (absolute), len u64, crc32 u32
//! data       column payloads at their directory offsets
//! ```
//!
//! Fixed-width kinds store one value per row. Optional kinds use in-band
//! sentinels (`u64::MAX`, `i64::MIN`), which cannot collide with real ids or
//! millisecond timestamps. `Str` stores `rows+1` u64 offsets into a UTF-8
//! heap that follows them inside the same payload.
//!
//! Full-column reads verify the per-column checksum. Point reads seek into
//! the payload and skip verification; corruption there surfaces as a decode
//! error or a wrong value, and `verify` exists for explicit integrity
//! sweeps.

use crate::error::{PipelineError, Result};
use crate::timestamp::Timestamp;
use std::fs::File;
use std::io::{Read, Write};
use std::os::unix::fs::FileExt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

pub const COLUMN_MAGIC: &[u8; 8] = b"QFCOL001";
const HEADER_BYTES: u64 = 8 + 1 + 7 + 8 + 4 + 4;

const NONE_U64: u64 = u64::MAX;
const NONE_TS: i64 = i64::MIN;

// CRC-32 (IEEE 802.3), reflected polynomial.
const fn crc_table() -> [u32; 256] {
    let mut table = [0u32; 256];
    let mut i = 0;
    while i < 256 {
        let mut c = i as u32;
        let mut k = 0;
        while k < 8 {
            c = if c & 1 != 0 { 0xEDB8_8320 ^ (c >> 1) } else { c >> 1 };
            k += 1;
        }
        table[i] = c;
        i += 1;
    }
    table
}

static CRC_TABLE: [u32; 256] = crc_table();

pub fn crc32(bytes: &[u8]) -> u32 {
    let mut c = 0xFFFF_FFFFu32;
    for &b in bytes {
        c = (c >> 8) ^ CRC_TABLE[((c ^ b as u32) & 0xFF) as usize];
    }
    !c
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EntityKind {
    Question,
    Answer,
    User,
}

impl EntityKind {
    pub fn file_name(self) -> &'static str {
        match self {
            EntityKind::Question => "questions.col",
            EntityKind::Answer => "answers.col",
            EntityKind::User => "users.col",
        }
    }

    fn code(self) -> u8 {
        match self {
            EntityKind::Question => 0,
            EntityKind::Answer => 1,
            EntityKind::User => 2,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(EntityKind::Question),
            1 => Some(EntityKind::Answer),
            2 => Some(EntityKind::User),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnKind {
    U64,
    I64,
    Ts,
    OptU64,
    OptTs,
    Str,
}

impl ColumnKind {
    fn code(self) -> u8 {
        match self {
            ColumnKind::U64 => 0,
            ColumnKind::I64 => 1,
            ColumnKind::Ts => 2,
            ColumnKind::OptU64 => 3,
            ColumnKind::OptTs => 4,
            ColumnKind::Str => 5,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(ColumnKind::U64),
            1 => Some(ColumnKind::I64),
            2 => Some(ColumnKind::Ts),
            3 => Some(ColumnKind::OptU64),
            4 => Some(ColumnKind::OptTs),
            5 => Some(ColumnKind::Str),
            _ => None,
        }
    }
}

/// A fully materialized column, the unit of round-trip testing.
#[derive(Debug, Clone, PartialEq)]
pub enum ColumnData {
    U64(Vec<u64>),
    I64(Vec<i64>),
    Ts(Vec<Timestamp>),
    OptU64(Vec<Option<u64>>),
    OptTs(Vec<Option<Timestamp>>),
    Str(Vec<String>),
}

impl ColumnData {
    pub fn len(&self) -> usize {
        match self {
            ColumnData::U64(v) => v.len(),
            ColumnData::I64(v) => v.len(),
            ColumnData::Ts(v) => v.len(),
            ColumnData::OptU64(v) => v.len(),
            ColumnData::OptTs(v) => v.len(),
            ColumnData::Str(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kind(&self) -> ColumnKind {
        match self {
            ColumnData::U64(_) => ColumnKind::U64,
            ColumnData::I64(_) => ColumnKind::I64,
            ColumnData::Ts(_) => ColumnKind::Ts,
            ColumnData::OptU64(_) => ColumnKind::OptU64,
            ColumnData::OptTs(_) => ColumnKind::OptTs,
            ColumnData::Str(_) => ColumnKind::Str,
        }
    }

    fn encode(&self) -> Vec<u8> {
        match self {
            ColumnData::U64(v) => {
                let mut out = Vec::with_capacity(v.len() * 8);
                for x in v {
                    out.extend_from_slice(&x.to_le_bytes());
                }
                out
            }
            ColumnData::I64(v) => {
                let mut out = Vec::with_capacity(v.len() * 8);
                for x in v {
                    out.extend_from_slice(&x.to_le_bytes());
                }
                out
            }
            ColumnData::Ts(v) => {
                let mut out = Vec::with_capacity(v.len() * 8);
                for x in v {
                    out.extend_from_slice(&x.millis().to_le_bytes());
                }
                out
            }
            ColumnData::OptU64(v) => {
                let mut out = Vec::with_capacity(v.len() * 8);
                for x in v {
                    out.extend_from_slice(&x.unwrap_or(NONE_U64).to_le_bytes());
                }
                out
            }
            ColumnData::OptTs(v) => {
                let mut out = Vec::with_capacity(v.len() * 8);
                for x in v {
                    out.extend_from_slice(&x.map(|t| t.millis()).unwrap_or(NONE_TS).to_le_bytes());
                }
                out
            }
            ColumnData::Str(v) => {
                let heap_len: usize = v.iter().map(|s| s.len()).sum();
                let mut out = Vec::with_capacity((v.len() + 1) * 8 + heap_len);
                let base = (v.len() as u64 + 1) * 8;
                let mut off = base;
                out.extend_from_slice(&off.to_le_bytes());
                for s in v {
                    off += s.len() as u64;
                    out.extend_from_slice(&off.to_le_bytes());
                }
                for s in v {
                    out.extend_from_slice(s.as_bytes());
                }
                out
            }
        }
    }

    fn decode(kind: ColumnKind, rows: u64, bytes: &[u8]) -> Result<ColumnData> {
        let n = rows as usize;
        let fixed = |bytes: &[u8]| -> Result<Vec<[u8; 8]>> {
            if bytes.len() != n * 8 {
                return Err(PipelineError::format(format!(
                    "column payload is {} bytes, expected {}",
                    bytes.len(),
                    n * 8
                )));
            }
            Ok(bytes.chunks_exact(8).map(|c| c.try_into().unwrap()).collect())
        };
        Ok(match kind {
            ColumnKind::U64 => {
                ColumnData::U64(fixed(bytes)?.into_iter().map(u64::from_le_bytes).collect())
            }
            ColumnKind::I64 => {
                ColumnData::I64(fixed(bytes)?.into_iter().map(i64::from_le_bytes).collect())
            }
            ColumnKind::Ts => ColumnData::Ts(
                fixed(bytes)?
                    .into_iter()
                    .map(|c| Timestamp::from_millis(i64::from_le_bytes(c)))
                    .collect(),
            ),
            ColumnKind::OptU64 => ColumnData::OptU64(
                fixed(bytes)?
                    .into_iter()
                    .map(|c| {
                        let v = u64::from_le_bytes(c);
                        (v != NONE_U64).then_some(v)
                    })
                    .collect(),
            ),
            ColumnKind::OptTs => ColumnData::OptTs(
                fixed(bytes)?
                    .into_iter()
                    .map(|c| {
                        let v = i64::from_le_bytes(c);
                        (v != NONE_TS).then(|| Timestamp::from_millis(v))
                    })
                    .collect(),
            ),
            ColumnKind::Str => {
                let offsets_len = (n + 1) * 8;
                if bytes.len() < offsets_len {
                    return Err(PipelineError::format("string column payload truncated"));
                }
                let offs: Vec<u64> = bytes[..offsets_len]
                    .chunks_exact(8)
                    .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                let mut out = Vec::with_capacity(n);
                for w in offs.windows(2) {
                    let (a, b) = (w[0] as usize, w[1] as usize);
                    if a > b || b > bytes.len() {
                        return Err(PipelineError::format("string column offsets out of order"));
                    }
                    let s = std::str::from_utf8(&bytes[a..b])
                        .map_err(|_| PipelineError::format("string column is not UTF-8"))?;
                    out.push(s.to_string());
                }
                ColumnData::Str(out)
            }
        })
    }
}

/// Counts every disk read issued through snapshot readers. Shared across
/// one store so query-cost properties can be asserted from outside.
#[derive(Debug, Default)]
pub struct IoCounters {
    pub read_calls: AtomicU64,
    pub bytes_read: AtomicU64,
}

impl IoCounters {
    pub fn snapshot(&self) -> (u64, u64) {
        (
            self.read_calls.load(Ordering::Relaxed),
            self.bytes_read.load(Ordering::Relaxed),
        )
    }

    pub fn reset(&self) {
        self.read_calls.store(0, Ordering::Relaxed);
        self.bytes_read.store(0, Ordering::Relaxed);
    }

    pub(crate) fn count(&self, bytes: usize) {
        self.read_calls.fetch_add(1, Ordering::Relaxed);
        self.bytes_read.fetch_add(bytes as u64, Ordering::Relaxed);
    }
}

pub struct ColumnFileWriter {
    entity: EntityKind,
    rows: u64,
    columns: Vec<(String, ColumnData)>,
}

impl ColumnFileWriter {
    pub fn new(entity: EntityKind, rows: u64) -> Self {
        ColumnFileWriter {
            entity,
            rows,
            columns: Vec::new(),
        }
    }

    pub fn push(&mut self, name: &str, data: ColumnData) -> Result<()> {
        if data.len() as u64 != self.rows {
            return Err(PipelineError::data(format!(
                "column {name} has {} rows, file has {}",
                data.len(),
                self.rows
            )));
        }
        if self.columns.iter().any(|(n, _)| n == name) {
            return Err(PipelineError::data(format!("duplicate column {name}")));
        }
        self.columns.push((name.to_string(), data));
        Ok(())
    }

    /// Writes the complete file. The caller handles atomicity at the
    /// directory level; this produces a plain file.
    pub fn write_to(self, file: &mut File) -> Result<()> {
        let dir_bytes: u64 = self
            .columns
            .iter()
            .map(|(n, _)| 2 + n.len() as u64 + 1 + 8 + 8 + 4)
            .sum();
        let mut header = Vec::with_capacity(HEADER_BYTES as usize + dir_bytes as usize);
        header.extend_from_slice(COLUMN_MAGIC);
        header.push(self.entity.code());
        header.extend_from_slice(&[0u8; 7]);
        header.extend_from_slice(&self.rows.to_le_bytes());
        header.extend_from_slice(&(dir_bytes as u32).to_le_bytes());
        header.extend_from_slice(&(self.columns.len() as u32).to_le_bytes());

        let mut offset = HEADER_BYTES + dir_bytes;
        let mut payloads = Vec::with_capacity(self.columns.len());
        for (name, data) in &self.columns {
            let payload = data.encode();
            header.extend_from_slice(&(name.len() as u16).to_le_bytes());
            header.extend_from_slice(name.as_bytes());
            header.push(data.kind().code());
            header.extend_from_slice(&offset.to_le_bytes());
            header.extend_from_slice(&(payload.len() as u64).to_le_bytes());
            header.extend_from_slice(&crc32(&payload).to_le_bytes());
            offset += payload.len() as u64;
            payloads.push(payload);
        }
        file.write_all(&header)?;
        for payload in payloads {
            file.write_all(&payload)?;
        }
        file.sync_all()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct DirEntry {
    name: String,
    kind: ColumnKind,
    offset: u64,
    len: u64,
    crc: u32,
}

/// Random-access reader over one column file. All reads go through the
/// shared [`IoCounters`].
pub struct ColumnFileReader {
    file: File,
    pub entity: EntityKind,
    pub rows: u64,
    dir: Vec<DirEntry>,
    counters: Arc<IoCounters>,
}

impl ColumnFileReader {
    pub fn open(path: &std::path::Path, counters: Arc<IoCounters>) -> Result<Self> {
        let mut file = File::open(path)?;
        let mut header = [0u8; HEADER_BYTES as usize];
        file.read_exact(&mut header)?;
        counters.count(header.len());
        if &header[..8] != COLUMN_MAGIC {
            return Err(PipelineError::format(format!("{}: bad magic", path.display())));
        }
        let entity = EntityKind::from_code(header[8])
            .ok_or_else(|| PipelineError::format("unknown entity code"))?;
        let rows = u64::from_le_bytes(header[16..24].try_into().unwrap());
        let dir_bytes = u32::from_le_bytes(header[24..28].try_into().unwrap()) as usize;
        let ncols = u32::from_le_bytes(header[28..32].try_into().unwrap()) as usize;
        let mut dir_buf = vec![0u8; dir_bytes];
        file.read_exact(&mut dir_buf)?;
        counters.count(dir_bytes);
        let mut dir = Vec::with_capacity(ncols);
        let mut p = 0usize;
        for _ in 0..ncols {
            let need = |p: usize, n: usize| -> Result<()> {
                if p + n > dir_buf.len() {
                    Err(PipelineError::format("column directory truncated"))
                } else {
                    Ok(())
                }
            };
            need(p, 2)?;
            let name_len = u16::from_le_bytes(dir_buf[p..p + 2].try_into().unwrap()) as usize;
            p += 2;
            need(p, name_len + 1 + 8 + 8 + 4)?;
            let name = std::str::from_utf8(&dir_buf[p..p + name_len])
                .map_err(|_| PipelineError::format("column name is not UTF-8"))?
                .to_string();
            p += name_len;
            let kind = ColumnKind::from_code(dir_buf[p])
                .ok_or_else(|| PipelineError::format("unknown column kind"))?;
            p += 1;
            let offset = u64::from_le_bytes(dir_buf[p..p + 8].try_into().unwrap());
            p += 8;
            let len = u64::from_le_bytes(dir_buf[p..p + 8].try_into().unwrap());
            p += 8;
            let crc = u32::from_le_bytes(dir_buf[p..p + 4].try_into().unwrap());
            p += 4;
            dir.push(DirEntry { name, kind, offset, len, crc });
        }
        Ok(ColumnFileReader { file, entity, rows, dir, counters })
    }

    pub fn column_names(&self) -> Vec<&str> {
        self.dir.iter().map(|e| e.name.as_str()).collect()
    }

    fn entry(&self, name: &str) -> Result<&DirEntry> {
        self.dir
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| PipelineError::format(format!("no column named {name}")))
    }

    fn pread(&self, offset: u64, buf: &mut [u8]) -> Result<()> {
        self.file.read_exact_at(buf, offset)?;
        self.counters.count(buf.len());
        Ok(())
    }

    /// Reads and checksum-verifies an entire column.
    pub fn read_column(&self, name: &str) -> Result<ColumnData> {
        let e = self.entry(name)?.clone();
        let mut buf = vec![0u8; e.len as usize];
        self.pread(e.offset, &mut buf)?;
        if crc32(&buf) != e.crc {
            return Err(PipelineError::format(format!(
                "column {name}: checksum mismatch"
            )));
        }
        ColumnData::decode(e.kind, self.rows, &buf)
    }

    /// Verifies every column checksum.
    pub fn verify(&self) -> Result<()> {
        for e in &self.dir {
            self.read_column(&e.name.clone())?;
        }
        Ok(())
    }

    fn read_u64_at(&self, entry: &DirEntry, index: u64) -> Result<u64> {
        let mut buf = [0u8; 8];
        self.pread(entry.offset + index * 8, &mut buf)?;
        Ok(u64::from_le_bytes(buf))
    }

    /// Binary search over a sorted u64 column, reading only the probed
    /// cells. Returns the row index of `value` if present.
    pub fn find_sorted(&self, name: &str, value: u64) -> Result<Option<u64>> {
        let e = self.entry(name)?.clone();
        if e.kind != ColumnKind::U64 {
            return Err(PipelineError::format(format!("{name} is not a u64 column")));
        }
        let mut lo = 0u64;
        let mut hi = self.rows;
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            let v = self.read_u64_at(&e, mid)?;
            if v < value {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        if lo < self.rows && self.read_u64_at(&e, lo)? == value {
            Ok(Some(lo))
        } else {
            Ok(None)
        }
    }

    /// Point read of one fixed-width cell, without checksum verification.
    pub fn cell(&self, name: &str, index: u64) -> Result<CellValue> {
        let e = self.entry(name)?.clone();
        if index >= self.rows {
            return Err(PipelineError::data(format!(
                "row {index} out of range ({} rows)",
                self.rows
            )));
        }
        match e.kind {
            ColumnKind::Str => {
                let mut offs = [0u8; 16];
                self.pread(e.offset + index * 8, &mut offs)?;
                let a = u64::from_le_bytes(offs[..8].try_into().unwrap());
                let b = u64::from_le_bytes(offs[8..].try_into().unwrap());
                if a > b || b > e.len {
                    return Err(PipelineError::format("string column offsets out of order"));
                }
                let mut buf = vec![0u8; (b - a) as usize];
                self.pread(e.offset + a, &mut buf)?;
                let s = String::from_utf8(buf)
                    .map_err(|_| PipelineError::format("string cell is not UTF-8"))?;
                Ok(CellValue::Str(s))
            }
            kind => {
                let mut buf = [0u8; 8];
                self.pread(e.offset + index * 8, &mut buf)?;
                Ok(match kind {
                    ColumnKind::U64 => CellValue::U64(u64::from_le_bytes(buf)),
                    ColumnKind::I64 => CellValue::I64(i64::from_le_bytes(buf)),
                    ColumnKind::Ts => {
                        CellValue::Ts(Timestamp::from_millis(i64::from_le_bytes(buf)))
                    }
                    ColumnKind::OptU64 => {
                        let v = u64::from_le_bytes(buf);
                        CellValue::OptU64((v != NONE_U64).then_some(v))
                    }
                    ColumnKind::OptTs => {
                        let v = i64::from_le_bytes(buf);
                        CellValue::OptTs((v != NONE_TS).then(|| Timestamp::from_millis(v)))
                    }
                    ColumnKind::Str => unreachable!(),
                })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CellValue {
    U64(u64),
    I64(i64),
    Ts(Timestamp),
    OptU64(Option<u64>),
    OptTs(Option<Timestamp>),
    Str(String),
}

impl CellValue {
    pub fn as_u64(&self) -> Result<u64> {
        match self {
            CellValue::U64(v) => Ok(*v),
            other => Err(PipelineError::format(format!("expected u64 cell, got {other:?}"))),
        }
    }
}
