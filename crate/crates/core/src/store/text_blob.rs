//! Raw question text (title + body HTML) in a separate addressable file,
//! so runs that never touch text pay no text I/O.
//!
//! Layout, little-endian:
//!
//! ```text
//! magic  8  b"QFTXT001"
//! count  8
//! index  count entries sorted by id:
//!        id u64, title_off u64, title_len u64, body_off u64, body_len u64
//! data   UTF-8 bytes at absolute offsets
//! ```

use crate::error::{PipelineError, Result};
use crate::store::column::IoCounters;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::os::unix::fs::FileExt;
use std::sync::Arc;

pub const TEXT_MAGIC: &[u8; 8] = b"QFTXT001";
const ENTRY_BYTES: u64 = 40;
const HEADER_BYTES: u64 = 16;

/// Entries must arrive sorted by strictly increasing id.
pub fn write_blob(path: &std::path::Path, entries: &[(u64, &str, &str)]) -> Result<()> {
    for w in entries.windows(2) {
        if w[0].0 >= w[1].0 {
            return Err(PipelineError::data("text blob ids not strictly increasing"));
        }
    }
    let file = File::create(path)?;
    let mut out = BufWriter::new(file);
    out.write_all(TEXT_MAGIC)?;
    out.write_all(&(entries.len() as u64).to_le_bytes())?;
    let mut off = HEADER_BYTES + entries.len() as u64 * ENTRY_BYTES;
    for (id, title, body) in entries {
        out.write_all(&id.to_le_bytes())?;
        out.write_all(&off.to_le_bytes())?;
        out.write_all(&(title.len() as u64).to_le_bytes())?;
        off += title.len() as u64;
        out.write_all(&off.to_le_bytes())?;
        out.write_all(&(body.len() as u64).to_le_bytes())?;
        off += body.len() as u64;
    }
    for (_, title, body) in entries {
        out.write_all(title.as_bytes())?;
        out.write_all(body.as_bytes())?;
    }
    out.flush()?;
    out.into_inner()
        .map_err(|e| PipelineError::Io(e.into_error()))?
        .sync_all()?;
    Ok(())
}

pub struct TextBlobReader {
    file: File,
    count: u64,
    counters: Arc<IoCounters>,
}

impl TextBlobReader {
    pub fn open(path: &std::path::Path, counters: Arc<IoCounters>) -> Result<Self> {
        let mut file = File::open(path)?;
        let mut header = [0u8; HEADER_BYTES as usize];
        file.read_exact(&mut header)?;
        counters.count(header.len());
        if &header[..8] != TEXT_MAGIC {
            return Err(PipelineError::format(format!("{}: bad magic", path.display())));
        }
        let count = u64::from_le_bytes(header[8..].try_into().unwrap());
        Ok(TextBlobReader { file, count, counters })
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    fn pread(&self, offset: u64, buf: &mut [u8]) -> Result<()> {
        self.file.read_exact_at(buf, offset)?;
        self.counters.count(buf.len());
        Ok(())
    }

    fn entry_id(&self, index: u64) -> Result<u64> {
        let mut buf = [0u8; 8];
        self.pread(HEADER_BYTES + index * ENTRY_BYTES, &mut buf)?;
        Ok(u64::from_le_bytes(buf))
    }

    /// Title and body for one question, touching only that entry.
    pub fn get(&self, id: u64) -> Result<Option<(String, String)>> {
        let mut lo = 0u64;
        let mut hi = self.count;
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            if self.entry_id(mid)? < id {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        if lo >= self.count || self.entry_id(lo)? != id {
            return Ok(None);
        }
        let mut entry = [0u8; (ENTRY_BYTES - 8) as usize];
        self.pread(HEADER_BYTES + lo * ENTRY_BYTES + 8, &mut entry)?;
        let title_off = u64::from_le_bytes(entry[0..8].try_into().unwrap());
        let title_len = u64::from_le_bytes(entry[8..16].try_into().unwrap());
        let body_off = u64::from_le_bytes(entry[16..24].try_into().unwrap());
        let body_len = u64::from_le_bytes(entry[24..32].try_into().unwrap());
        let mut title = vec![0u8; title_len as usize];
        self.pread(title_off, &mut title)?;
        let mut body = vec![0u8; body_len as usize];
        self.pread(body_off, &mut body)?;
        let title = String::from_utf8(title)
            .map_err(|_| PipelineError::format("title bytes are not UTF-8"))?;
        let body = String::from_utf8(body)
            .map_err(|_| PipelineError::format("body bytes are not UTF-8"))?;
        Ok(Some((title, body)))
    }
}
