//! `PSEB1` binary embedding store.
//!
//! Layout, all integers little-endian:
//!
//! | field        | type                |
//! |--------------|---------------------|
//! | magic        | `b"PSEB1"`          |
//! | d            | u32                 |
//! | g            | u32 (0 if no tokens)|
//! | flags        | u32, bit 0 = tokens |
//! | count        | u64                 |
//!
//! then `count` records of: `patch_id`, `slide_id`, `case_id` (each a u32
//! byte length followed by UTF-8), one magnification byte (0 = 5x, 1 = 10x,
//! 2 = 20x, 3 = 40x), `d` f32 values of `cls`, and when the tokens flag is
//! set `g * g * d` f32 values of the token grid in row-major order.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{EmbeddingRecord, TokenGrid};
use crate::error::{Error, Result};
use crate::patch::Magnification;

pub const STORE_MAGIC: &[u8; 5] = b"PSEB1";
const FLAG_TOKENS: u32 = 1;

fn put_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

fn put_f32s(buf: &mut Vec<u8>, v: &[f32]) {
    for x in v {
        buf.extend_from_slice(&x.to_le_bytes());
    }
}

/// Writes `records` to `path` and returns the number written. All records
/// must share `d`, and either all or none carry token grids of equal side.
pub fn store_write(path: &Path, records: &[EmbeddingRecord]) -> Result<usize> {
    let d = records.first().map_or(0, |r| r.dim());
    let g = records.first().and_then(|r| r.tokens.as_ref()).map_or(0, |t| t.side());
    let has_tokens = g > 0;
    for r in records {
        if r.dim() != d {
            return Err(Error::DimensionMismatch { expected: d, actual: r.dim() });
        }
        match (&r.tokens, has_tokens) {
            (Some(t), true) if t.side() == g && t.dim() == d => {}
            (None, false) => {}
            _ => {
                return Err(Error::invalid(format!(
                    "record {} has a token grid inconsistent with the store (side {g}, dim {d})",
                    r.patch_id
                )))
            }
        }
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut buf = Vec::with_capacity(64);
    buf.extend_from_slice(STORE_MAGIC);
    buf.extend_from_slice(&(d as u32).to_le_bytes());
    buf.extend_from_slice(&(g as u32).to_le_bytes());
    buf.extend_from_slice(&(if has_tokens { FLAG_TOKENS } else { 0 }).to_le_bytes());
    buf.extend_from_slice(&(records.len() as u64).to_le_bytes());
    w.write_all(&buf).map_err(|e| Error::io(path, e))?;
    for r in records {
        buf.clear();
        put_str(&mut buf, &r.patch_id);
        put_str(&mut buf, &r.slide_id);
        put_str(&mut buf, &r.case_id);
        buf.push(r.magnification.code());
        put_f32s(&mut buf, &r.cls);
        if let Some(t) = &r.tokens {
            put_f32s(&mut buf, t.data());
        }
        w.write_all(&buf).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(records.len())
}

struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.path,
                format!("truncated store: needed {n} bytes at offset {}", self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::format(self.path, "id is not valid UTF-8"))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n * 4)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }
}

/// Reads every record from a store written by [`store_write`].
pub fn store_read(path: &Path) -> Result<Vec<EmbeddingRecord>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader { path, bytes: &bytes, pos: 0 };
    let magic = r.take(STORE_MAGIC.len()).map_err(|_| {
        Error::format(path, "file too short to hold the PSEB1 magic")
    })?;
    if magic != STORE_MAGIC {
        return Err(Error::format(
            path,
            format!("bad magic {:?}, expected \"PSEB1\"", String::from_utf8_lossy(magic)),
        ));
    }
    let d = r.u32()? as usize;
    let g = r.u32()? as usize;
    let flags = r.u32()?;
    if flags & !FLAG_TOKENS != 0 {
        return Err(Error::format(path, format!("unknown flags {flags:#x}")));
    }
    let has_tokens = flags & FLAG_TOKENS != 0;
    if has_tokens && g == 0 {
        return Err(Error::format(path, "token flag set with a zero grid side"));
    }
    let count = r.u64()?;
    // Every record holds at least its id prefixes, the magnification byte and cls.
    let min_record = 13 + 4 * d;
    if count.saturating_mul(min_record as u64) > (bytes.len() - r.pos) as u64 {
        return Err(Error::format(path, format!("truncated store: header announces {count} records")));
    }
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let patch_id = r.string()?;
        let slide_id = r.string()?;
        let case_id = r.string()?;
        let code = r.take(1)?[0];
        let magnification = Magnification::from_code(code)
            .ok_or_else(|| Error::format(path, format!("unknown magnification code {code}")))?;
        let cls = r.f32s(d)?;
        let tokens = if has_tokens {
            Some(TokenGrid::new(g, d, r.f32s(g * g * d)?)?)
        } else {
            None
        };
        out.push(EmbeddingRecord {
            patch_id,
            slide_id,
            case_id,
            magnification,
            cls,
            tokens,
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::format(path, format!("{} trailing bytes after the last record", bytes.len() - r.pos)));
    }
    Ok(out)
}

/// Writes one JSON object per line with ids, magnification and `cls`
/// (token grids are omitted).
pub fn export_jsonl(path: &Path, records: &[EmbeddingRecord]) -> Result<()> {
    #[derive(serde::Serialize)]
    struct Line<'a> {
        patch_id: &'a str,
        slide_id: &'a str,
        case_id: &'a str,
        magnification: Magnification,
        cls: &'a [f32],
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = Line {
            patch_id: &r.patch_id,
            slide_id: &r.slide_id,
            case_id: &r.case_id,
            magnification: r.magnification,
            cls: &r.cls,
        };
        serde_json::to_writer(&mut w, &line).map_err(|e| Error::format(path, e.to_string()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
