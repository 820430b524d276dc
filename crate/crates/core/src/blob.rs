//! Self-describing binary artifacts.
//!
//! Layout: the 5-byte magic `LFLW1`, one kind byte, a length-prefixed UTF-8
//! config hash, then a kind-specific little-endian payload.

use std::io::{Read, Write};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 5] = b"LFLW1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum BlobKind {
    CorrespondenceMap = 1,
    TangentField = 2,
    Signal = 3,
}

impl BlobKind {
    fn from_byte(b: u8) -> Result<Self> {
        match b {
            1 => Ok(BlobKind::CorrespondenceMap),
            2 => Ok(BlobKind::TangentField),
            3 => Ok(BlobKind::Signal),
            other => Err(Error::Format(format!("unknown blob kind {other}"))),
        }
    }
}

pub fn write_header<W: Write>(w: &mut W, kind: BlobKind, config_hash: &str) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&[kind as u8])?;
    write_str(w, config_hash)
}

/// Reads the header and checks the kind. Returns the config hash.
pub fn read_header<R: Read>(r: &mut R, expected: BlobKind) -> Result<String> {
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a lesionflow artifact (bad magic)".into()));
    }
    let mut kind = [0u8; 1];
    r.read_exact(&mut kind)?;
    let kind = BlobKind::from_byte(kind[0])?;
    if kind != expected {
        return Err(Error::Format(format!("expected a {expected:?} artifact, found {kind:?}")));
    }
    read_str(r)
}

pub fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    write_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

pub fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let n = read_u32(r)? as usize;
    if n > 1 << 20 {
        return Err(Error::Format(format!("string length {n} too large")));
    }
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Format(e.to_string()))
}

pub fn write_u32<W: Write>(w: &mut W, x: u32) -> Result<()> {
    w.write_all(&x.to_le_bytes())?;
    Ok(())
}

pub fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn write_u64<W: Write>(w: &mut W, x: u64) -> Result<()> {
    w.write_all(&x.to_le_bytes())?;
    Ok(())
}

pub fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn write_f64<W: Write>(w: &mut W, x: f64) -> Result<()> {
    w.write_all(&x.to_le_bytes())?;
    Ok(())
}

pub fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

/// Reads a record count and rejects values that cannot fit in memory.
pub fn read_len<R: Read>(r: &mut R) -> Result<usize> {
    let n = read_u64(r)?;
    if n > 1 << 32 {
        return Err(Error::Format(format!("record count {n} too large")));
    }
    Ok(n as usize)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_roundtrip_and_kind_check() {
        let mut buf = Vec::new();
        write_header(&mut buf, BlobKind::TangentField, "abc123").unwrap();
        let h = read_header(&mut buf.as_slice(), BlobKind::TangentField).unwrap();
        assert_eq!(h, "abc123");
        assert!(read_header(&mut buf.as_slice(), BlobKind::Signal).is_err());
        assert!(read_header(&mut &b"NOPE!\x01"[..], BlobKind::Signal).is_err());
    }
}
