//! Versioned binary container of named blocks, shared by the model and
//! graph checkpoints.
//!
//! Layout (all integers and reals little-endian):
//!
//! ```text
//! magic[6] version:u8 block_count:u32
//! block := name_len:u32 name:utf8 kind:u8 payload
//!   kind 0 (f64) | kind 1 (u64): ndim:u32 dims:u64*ndim values:8*product(dims)
//!   kind 2 (strings):            count:u64 (len:u32 utf8)*count
//! ```

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Reals { shape: Vec<usize>, values: Vec<f64> },
    Naturals { shape: Vec<usize>, values: Vec<u64> },
    Strings(Vec<String>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub name: String,
    pub payload: Payload,
}

pub struct ContainerWriter {
    buf: Vec<u8>,
    count: u32,
}

impl ContainerWriter {
    pub fn new(magic: &[u8; 6], version: u8) -> Self {
        let mut buf = Vec::with_capacity(1 << 16);
        buf.extend_from_slice(magic);
        buf.push(version);
        buf.extend_from_slice(&0u32.to_le_bytes());
        ContainerWriter { buf, count: 0 }
    }

    fn header(&mut self, name: &str, kind: u8) {
        self.count += 1;
        self.buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        self.buf.extend_from_slice(name.as_bytes());
        self.buf.push(kind);
    }

    fn shape(&mut self, shape: &[usize], len: usize) {
        assert_eq!(shape.iter().product::<usize>(), len, "shape does not match data length");
        self.buf.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            self.buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
    }

    pub fn reals(&mut self, name: &str, shape: &[usize], values: &[f64]) -> &mut Self {
        self.header(name, 0);
        self.shape(shape, values.len());
        for v in values {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
        self
    }

    pub fn naturals(&mut self, name: &str, shape: &[usize], values: &[u64]) -> &mut Self {
        self.header(name, 1);
        self.shape(shape, values.len());
        for v in values {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
        self
    }

    pub fn strings<S: AsRef<str>>(&mut self, name: &str, values: &[S]) -> &mut Self {
        self.header(name, 2);
        self.buf.extend_from_slice(&(values.len() as u64).to_le_bytes());
        for s in values {
            let s = s.as_ref();
            self.buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
            self.buf.extend_from_slice(s.as_bytes());
        }
        self
    }

    pub fn finish(mut self) -> Vec<u8> {
        self.buf[7..11].copy_from_slice(&self.count.to_le_bytes());
        self.buf
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        String::from_utf8(self.take(len)?.to_vec()).map_err(|_| Error::Checkpoint("invalid UTF-8".into()))
    }

    fn shape(&mut self) -> Result<(Vec<usize>, usize)> {
        let ndim = self.u32()? as usize;
        let shape = (0..ndim).map(|_| self.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let len = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|&l| l.saturating_mul(8) <= self.bytes.len() - self.pos)
            .ok_or_else(|| Error::Checkpoint("block shape exceeds file size".into()))?;
        Ok((shape, len))
    }
}

/// Parses a container, checking magic and returning `(version, blocks)`.
pub fn read_container(bytes: &[u8], magic: &[u8; 6]) -> Result<(u8, Vec<Block>)> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(6)? != magic {
        return Err(Error::Checkpoint(format!(
            "expected magic {:?}",
            String::from_utf8_lossy(magic)
        )));
    }
    let version = cur.u8()?;
    let count = cur.u32()?;
    let mut blocks = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name = cur.string()?;
        let payload = match cur.u8()? {
            0 => {
                let (shape, len) = cur.shape()?;
                let values = (0..len)
                    .map(|_| cur.u64().map(f64::from_bits))
                    .collect::<Result<_>>()?;
                Payload::Reals { shape, values }
            }
            1 => {
                let (shape, len) = cur.shape()?;
                let values = (0..len).map(|_| cur.u64()).collect::<Result<_>>()?;
                Payload::Naturals { shape, values }
            }
            2 => {
                let n = cur.u64()?;
                let values = (0..n).map(|_| cur.string()).collect::<Result<_>>()?;
                Payload::Strings(values)
            }
            k => return Err(Error::Checkpoint(format!("unknown block kind {k} in {name:?}"))),
        };
        blocks.push(Block { name, payload });
    }
    if cur.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after last block".into()));
    }
    Ok((version, blocks))
}

/// Name-indexed access to parsed blocks.
pub struct Blocks(Vec<Block>);

impl Blocks {
    pub fn new(blocks: Vec<Block>) -> Self {
        Blocks(blocks)
    }

    fn get(&self, name: &str) -> Result<&Payload> {
        self.0
            .iter()
            .find(|b| b.name == name)
            .map(|b| &b.payload)
            .ok_or_else(|| Error::Checkpoint(format!("missing block {name:?}")))
    }

    pub fn reals(&self, name: &str) -> Result<(&[usize], &[f64])> {
        match self.get(name)? {
            Payload::Reals { shape, values } => Ok((shape, values)),
            _ => Err(Error::Checkpoint(format!("block {name:?} is not real-valued"))),
        }
    }

    pub fn naturals(&self, name: &str) -> Result<(&[usize], &[u64])> {
        match self.get(name)? {
            Payload::Naturals { shape, values } => Ok((shape, values)),
            _ => Err(Error::Checkpoint(format!("block {name:?} is not natural-valued"))),
        }
    }

    pub fn strings(&self, name: &str) -> Result<&[String]> {
        match self.get(name)? {
            Payload::Strings(v) => Ok(v),
            _ => Err(Error::Checkpoint(format!("block {name:?} is not a string list"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn write_read_write_is_identical(
            reals in prop::collection::vec(any::<f64>(), 0..20),
            nats in prop::collection::vec(any::<u64>(), 0..20),
            strs in prop::collection::vec(".{0,8}", 0..5),
        ) {
            let mut w = ContainerWriter::new(b"TESTC1", 3);
            w.reals("r", &[reals.len()], &reals);
            w.naturals("n", &[1, nats.len()], &nats);
            w.strings("s", &strs);
            let bytes = w.finish();
            let (version, blocks) = read_container(&bytes, b"TESTC1").unwrap();
            prop_assert_eq!(version, 3);
            let mut again = ContainerWriter::new(b"TESTC1", version);
            for b in &blocks {
                match &b.payload {
                    Payload::Reals { shape, values } => again.reals(&b.name, shape, values),
                    Payload::Naturals { shape, values } => again.naturals(&b.name, shape, values),
                    Payload::Strings(v) => again.strings(&b.name, v),
                };
            }
            prop_assert_eq!(again.finish(), bytes);
        }
    }

    #[test]
    fn rejects_wrong_magic_and_truncation() {
        let mut w = ContainerWriter::new(b"TESTC1", 1);
        w.reals("x", &[2], &[1.0, 2.0]);
        let bytes = w.finish();
        assert!(read_container(&bytes, b"OTHER1").is_err());
        assert!(read_container(&bytes[..bytes.len() - 1], b"TESTC1").is_err());
    }
}
