//! Checksummed snapshot framing shared by every persisted artifact.
//!
//! ```text
//! offset  size  field
//! 0       8     magic (artifact kind, e.g. b"CURHNSW\0")
//! 8       4     format version, u32 LE
//! 12      8     body length in bytes, u64 LE
//! 20      32    SHA-256 of the body
//! 52      n     body (artifact-specific, little-endian)
//! ```
//!
//! Readers check magic, version, exact length and checksum before decoding
//! the body, so a truncated or bit-flipped file is rejected as corrupt before
//! any artifact-specific parsing runs.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use sha2::{Digest, Sha256};

pub const HEADER_LEN: usize = 8 + 4 + 8 + 32;

#[derive(Debug, thiserror::Error)]
pub enum SnapshotError {
    #[error("corrupt snapshot: {0}")]
    Corrupt(String),
    #[error("snapshot format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("snapshot I/O error: {0}")]
    Io(#[from] io::Error),
}

impl SnapshotError {
    pub fn corrupt(detail: impl Into<String>) -> Self {
        SnapshotError::Corrupt(detail.into())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Wraps `body` in a framed, checksummed container.
pub fn encode_frame(magic: &[u8; 8], version: u32, body: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + body.len());
    out.extend_from_slice(magic);
    out.write_u32::<LittleEndian>(version).expect("vec write");
    out.write_u64::<LittleEndian>(body.len() as u64)
        .expect("vec write");
    out.extend_from_slice(&Sha256::digest(body));
    out.extend_from_slice(body);
    out
}

/// Validates the frame and returns the body slice.
pub fn decode_frame<'a>(
    magic: &[u8; 8],
    version: u32,
    bytes: &'a [u8],
) -> Result<&'a [u8], SnapshotError> {
    if bytes.len() < HEADER_LEN {
        return Err(SnapshotError::corrupt("file shorter than header"));
    }
    if &bytes[..8] != magic {
        return Err(SnapshotError::corrupt("bad magic bytes"));
    }
    let mut header = &bytes[8..20];
    let found = header.read_u32::<LittleEndian>()?;
    if found != version {
        return Err(SnapshotError::VersionMismatch {
            found,
            expected: version,
        });
    }
    let body_len = header.read_u64::<LittleEndian>()?;
    let body = &bytes[HEADER_LEN..];
    if body.len() as u64 != body_len {
        return Err(SnapshotError::corrupt(format!(
            "body length {} does not match header {}",
            body.len(),
            body_len
        )));
    }
    if Sha256::digest(body).as_slice() != &bytes[20..52] {
        return Err(SnapshotError::corrupt("checksum mismatch"));
    }
    Ok(body)
}

/// Writes through a sibling temp file and renames, so readers never observe a
/// half-written snapshot.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

/// Bounds-checked little-endian reader over a snapshot body. Every length read
/// from the file is checked against the bytes that remain before allocating.
pub(crate) struct BodyReader<'a> {
    buf: &'a [u8],
}

impl<'a> BodyReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf }
    }

    pub fn remaining(&self) -> usize {
        self.buf.len()
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], SnapshotError> {
        if self.buf.len() < n {
            return Err(SnapshotError::corrupt("unexpected end of body"));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    pub fn u8(&mut self) -> Result<u8, SnapshotError> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32, SnapshotError> {
        Ok(self.take(4)?.read_u32::<LittleEndian>()?)
    }

    pub fn u64(&mut self) -> Result<u64, SnapshotError> {
        Ok(self.take(8)?.read_u64::<LittleEndian>()?)
    }

    pub fn f64(&mut self) -> Result<f64, SnapshotError> {
        Ok(self.take(8)?.read_f64::<LittleEndian>()?)
    }

    /// A count of items that each occupy at least `min_item_bytes`.
    pub fn count(&mut self, min_item_bytes: usize) -> Result<usize, SnapshotError> {
        let n = self.u64()?;
        let n = usize::try_from(n).map_err(|_| SnapshotError::corrupt("count overflow"))?;
        if n.saturating_mul(min_item_bytes.max(1)) > self.buf.len() {
            return Err(SnapshotError::corrupt("count exceeds remaining bytes"));
        }
        Ok(n)
    }

    pub fn string(&mut self) -> Result<String, SnapshotError> {
        let len = self.u32()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| SnapshotError::corrupt("invalid utf-8"))
    }

    pub fn f32_vec(&mut self, n: usize) -> Result<Vec<f32>, SnapshotError> {
        let mut bytes = self.take(n.checked_mul(4).ok_or_else(|| SnapshotError::corrupt("overflow"))?)?;
        let mut out = vec![0f32; n];
        bytes.read_f32_into::<LittleEndian>(&mut out)?;
        Ok(out)
    }

    pub fn finish(self) -> Result<(), SnapshotError> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(SnapshotError::corrupt("trailing bytes after body"))
        }
    }
}

pub(crate) trait BodyWriter {
    fn put_u8(&mut self, v: u8);
    fn put_u32(&mut self, v: u32);
    fn put_u64(&mut self, v: u64);
    fn put_f64(&mut self, v: f64);
    fn put_str(&mut self, s: &str);
    fn put_f32s(&mut self, v: &[f32]);
}

impl BodyWriter for Vec<u8> {
    fn put_u8(&mut self, v: u8) {
        self.push(v);
    }
    fn put_u32(&mut self, v: u32) {
        self.extend_from_slice(&v.to_le_bytes());
    }
    fn put_u64(&mut self, v: u64) {
        self.extend_from_slice(&v.to_le_bytes());
    }
    fn put_f64(&mut self, v: f64) {
        self.extend_from_slice(&v.to_le_bytes());
    }
    fn put_str(&mut self, s: &str) {
        self.put_u32(s.len() as u32);
        self.extend_from_slice(s.as_bytes());
    }
    fn put_f32s(&mut self, v: &[f32]) {
        for x in v {
            self.extend_from_slice(&x.to_le_bytes());
        }
    }
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>, SnapshotError> {
    let mut f = fs::File::open(path)?;
    let mut buf = Vec::new();
    f.read_to_end(&mut buf)?;
    Ok(buf)
}
