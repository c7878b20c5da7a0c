//! Binary container shared by datasets, encoder checkpoints and memory-bank dumps.
//!
//! Every file starts with a fixed 32-byte header: a 4-byte magic tag that
//! identifies the payload kind, a little-endian `u32` version, and 24 bytes of
//! kind-specific fields. The payload follows as little-endian `f32` values.

use crate::error::{Error, Result};

pub const HEADER_LEN: usize = 32;
pub const VERSION: u32 = 1;

/// Little-endian writer for a single container.
pub(crate) struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new(magic: &[u8; 4]) -> Self {
        let mut buf = Vec::with_capacity(HEADER_LEN);
        buf.extend_from_slice(magic);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        Writer { buf }
    }

    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn f32(&mut self, v: f32) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn f32s(&mut self, vs: &[f32]) -> &mut Self {
        for v in vs {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
        self
    }

    pub fn f64s_as_f32(&mut self, vs: &[f64]) -> &mut Self {
        for &v in vs {
            self.buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        self
    }

    pub fn bytes(&mut self, vs: &[u8]) -> &mut Self {
        self.buf.extend_from_slice(vs);
        self
    }

    /// Pads the header with zeros up to [`HEADER_LEN`].
    pub fn end_header(&mut self) -> &mut Self {
        debug_assert!(self.buf.len() <= HEADER_LEN);
        self.buf.resize(HEADER_LEN, 0);
        self
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub(crate) struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    /// Checks the magic tag and version, leaving the cursor on the first
    /// kind-specific header field.
    pub fn open(data: &'a [u8], magic: &[u8; 4]) -> Result<Self> {
        if data.len() < HEADER_LEN {
            return Err(Error::Truncated {
                field: "header",
                expected: HEADER_LEN,
                found: data.len(),
            });
        }
        if &data[..4] != magic {
            return Err(Error::Format {
                field: "magic",
                reason: format!(
                    "expected {:?}, found {:?}",
                    String::from_utf8_lossy(magic),
                    String::from_utf8_lossy(&data[..4])
                ),
            });
        }
        let version = u32::from_le_bytes(data[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(Error::Format {
                field: "version",
                reason: format!("unsupported version {version}"),
            });
        }
        Ok(Reader { data, pos: 8 })
    }

    fn take(&mut self, n: usize, field: &'static str) -> Result<&'a [u8]> {
        let remaining = self.data.len() - self.pos;
        if remaining < n {
            return Err(Error::Truncated {
                field,
                expected: n,
                found: remaining,
            });
        }
        let out = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn u32(&mut self, field: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().unwrap()))
    }

    pub fn u64(&mut self, field: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, field)?.try_into().unwrap()))
    }

    pub fn f32(&mut self, field: &'static str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, field)?.try_into().unwrap()))
    }

    pub fn f32s(&mut self, n: usize, field: &'static str) -> Result<Vec<f32>> {
        let raw = self.take(n * 4, field)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn bytes(&mut self, n: usize, field: &'static str) -> Result<&'a [u8]> {
        self.take(n, field)
    }

    pub fn skip_to_payload(&mut self) {
        self.pos = self.pos.max(HEADER_LEN);
    }

    pub fn expect_end(&self) -> Result<()> {
        if self.pos != self.data.len() {
            return Err(Error::Format {
                field: "payload",
                reason: format!("{} trailing bytes", self.data.len() - self.pos),
            });
        }
        Ok(())
    }
}
