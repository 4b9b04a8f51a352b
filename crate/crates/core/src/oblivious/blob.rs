//! Versioned binary blobs: magic, version, kind, parameters, raw counters.
//! All integers are little-endian.

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"TSKB";
const VERSION: u16 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum BlobKind {
    F0 = 0,
    F2 = 1,
    Stable = 2,
    Recovery = 3,
}

impl BlobKind {
    fn from_u8(b: u8) -> Result<Self> {
        Ok(match b {
            0 => BlobKind::F0,
            1 => BlobKind::F2,
            2 => BlobKind::Stable,
            3 => BlobKind::Recovery,
            _ => return Err(Error::Blob(format!("unknown kind {b}"))),
        })
    }
}

pub struct BlobWriter(Vec<u8>);

impl BlobWriter {
    pub fn new(kind: BlobKind) -> Self {
        let mut buf = Vec::with_capacity(64);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.push(kind as u8);
        BlobWriter(buf)
    }

    pub fn u64(&mut self, x: u64) -> &mut Self {
        self.0.extend_from_slice(&x.to_le_bytes());
        self
    }

    pub fn i64(&mut self, x: i64) -> &mut Self {
        self.0.extend_from_slice(&x.to_le_bytes());
        self
    }

    pub fn f64(&mut self, x: f64) -> &mut Self {
        self.u64(x.to_bits())
    }

    pub fn u64s(&mut self, xs: &[u64]) -> &mut Self {
        self.u64(xs.len() as u64);
        xs.iter().for_each(|&x| self.0.extend_from_slice(&x.to_le_bytes()));
        self
    }

    pub fn i64s(&mut self, xs: &[i64]) -> &mut Self {
        self.u64(xs.len() as u64);
        xs.iter().for_each(|&x| self.0.extend_from_slice(&x.to_le_bytes()));
        self
    }

    pub fn finish(&mut self) -> Vec<u8> {
        std::mem::take(&mut self.0)
    }
}

pub struct BlobReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> BlobReader<'a> {
    /// Validate the header and expect `kind`.
    pub fn open(buf: &'a [u8], kind: BlobKind) -> Result<Self> {
        let found = Self::peek_kind(buf)?;
        if found != kind {
            return Err(Error::Blob(format!("expected {kind:?}, found {found:?}")));
        }
        Ok(BlobReader { buf, pos: 7 })
    }

    pub fn peek_kind(buf: &[u8]) -> Result<BlobKind> {
        if buf.len() < 7 || &buf[..4] != MAGIC {
            return Err(Error::Blob("bad magic".into()));
        }
        let version = u16::from_le_bytes([buf[4], buf[5]]);
        if version != VERSION {
            return Err(Error::Blob(format!("unsupported version {version}")));
        }
        BlobKind::from_u8(buf[6])
    }

    fn take8(&mut self) -> Result<[u8; 8]> {
        let end = self.pos + 8;
        let bytes = self.buf.get(self.pos..end).ok_or_else(|| Error::Blob("truncated".into()))?;
        self.pos = end;
        Ok(bytes.try_into().expect("8 bytes"))
    }

    pub fn u64(&mut self) -> Result<u64> {
        self.take8().map(u64::from_le_bytes)
    }

    pub fn i64(&mut self) -> Result<i64> {
        self.take8().map(i64::from_le_bytes)
    }

    pub fn f64(&mut self) -> Result<f64> {
        self.u64().map(f64::from_bits)
    }

    fn len(&mut self) -> Result<usize> {
        let n = self.u64()? as usize;
        if n > (self.buf.len() - self.pos) / 8 {
            return Err(Error::Blob("length exceeds blob".into()));
        }
        Ok(n)
    }

    pub fn u64s(&mut self) -> Result<Vec<u64>> {
        let n = self.len()?;
        (0..n).map(|_| self.u64()).collect()
    }

    pub fn i64s(&mut self) -> Result<Vec<i64>> {
        let n = self.len()?;
        (0..n).map(|_| self.i64()).collect()
    }

    pub fn finish(self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Blob("trailing bytes".into()));
        }
        Ok(())
    }
}
