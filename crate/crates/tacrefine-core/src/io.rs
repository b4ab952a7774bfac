//! Shared binary container framing.
//!
//! Every on-disk artifact uses the same envelope: a 4-byte magic, a little
//! endian `u16` version, the payload, and a trailing CRC32 over everything
//! before it. Field encoding is little endian throughout.

use crate::error::{Error, Result};
use std::fs;
use std::path::Path;

/// Append-only byte sink with typed little endian writers.
#[derive(Default)]
pub struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    pub fn new(magic: [u8; 4], version: u16) -> Self {
        let mut w = ByteWriter { buf: Vec::new() };
        w.buf.extend_from_slice(&magic);
        w.put_u16(version);
        w
    }

    pub fn put_u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn put_u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn put_u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn put_u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn put_f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn put_bytes(&mut self, v: &[u8]) {
        self.buf.extend_from_slice(v);
    }

    pub fn put_f64_slice(&mut self, v: &[f64]) {
        for x in v {
            self.put_f64(*x);
        }
    }

    /// Append the trailing CRC32 and return the finished buffer.
    pub fn finish(mut self) -> Vec<u8> {
        let crc = crc32fast::hash(&self.buf);
        self.put_u32(crc);
        self.buf
    }

    pub fn finish_to_file(self, path: &Path) -> Result<()> {
        let bytes = self.finish();
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent)?;
            }
        }
        fs::write(path, bytes)?;
        Ok(())
    }
}

/// Cursor over a checked container body.
#[derive(Debug)]
pub struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    /// Validate magic, version and trailing CRC, and return a reader
    /// positioned right after the version field.
    pub fn open(bytes: &'a [u8], magic: [u8; 4], version: u16) -> Result<Self> {
        if bytes.len() < 10 {
            return Err(Error::Truncated { needed: 10, available: bytes.len() });
        }
        let body_len = bytes.len() - 4;
        let stored = u32::from_le_bytes(bytes[body_len..].try_into().unwrap());
        let computed = crc32fast::hash(&bytes[..body_len]);
        if stored != computed {
            return Err(Error::ChecksumMismatch { offset: body_len as u64, stored, computed });
        }
        let found: [u8; 4] = bytes[..4].try_into().unwrap();
        if found != magic {
            return Err(Error::BadMagic { expected: magic, found });
        }
        let ver = u16::from_le_bytes(bytes[4..6].try_into().unwrap());
        if ver != version {
            return Err(Error::UnsupportedVersion { found: ver, supported: version });
        }
        Ok(ByteReader { buf: &bytes[..body_len], pos: 6 })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Truncated { needed: self.pos + n, available: self.buf.len() });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn get_u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn get_u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn get_u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn get_u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn get_f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn get_bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        self.take(n)
    }

    pub fn get_f64_vec(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n * 8)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

/// FNV-1a 64-bit hash, used for content fingerprints (sensor params,
/// dataset identity, config hash).
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}
