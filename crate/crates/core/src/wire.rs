//! Little-endian primitives shared by the checkpoint and packed formats.

use std::io::{self, Read, Write};

use crate::error::{Error, Result};

pub(crate) struct LeWriter<W: Write> {
    inner: W,
}

impl<W: Write> LeWriter<W> {
    pub fn new(inner: W) -> Self {
        LeWriter { inner }
    }

    pub fn bytes(&mut self, b: &[u8]) -> io::Result<()> {
        self.inner.write_all(b)
    }

    pub fn u8(&mut self, v: u8) -> io::Result<()> {
        self.bytes(&[v])
    }

    pub fn u32(&mut self, v: u32) -> io::Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub fn i32(&mut self, v: i32) -> io::Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub fn u64(&mut self, v: u64) -> io::Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub fn f64(&mut self, v: f64) -> io::Result<()> {
        self.u64(v.to_bits())
    }

    pub fn f64s<'a>(&mut self, vs: impl IntoIterator<Item = &'a f64>) -> io::Result<()> {
        vs.into_iter().try_for_each(|v| self.f64(*v))
    }

    pub fn finish(mut self) -> io::Result<W> {
        self.inner.flush()?;
        Ok(self.inner)
    }
}

pub(crate) struct LeReader<R: Read> {
    inner: R,
    what: &'static str,
}

impl<R: Read> LeReader<R> {
    pub fn new(inner: R, what: &'static str) -> Self {
        LeReader { inner, what }
    }

    pub fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner.read_exact(&mut buf).map_err(|e| match e.kind() {
            io::ErrorKind::UnexpectedEof => Error::format(self.what, "unexpected end of file"),
            _ => Error::Io(e),
        })?;
        Ok(buf)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    pub fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.bytes()?))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }

    /// Reads a dimension and rejects absurd values before allocating.
    pub fn dim(&mut self, max: u32) -> Result<usize> {
        let v = self.u32()?;
        if v == 0 || v > max {
            return Err(Error::format(self.what, format!("dimension {v} outside 1..={max}")));
        }
        Ok(v as usize)
    }

    pub fn expect_end(&mut self) -> Result<()> {
        let mut probe = [0u8; 1];
        match self.inner.read(&mut probe)? {
            0 => Ok(()),
            _ => Err(Error::format(self.what, "trailing bytes after the last section")),
        }
    }

    pub fn fail(&self, reason: impl Into<String>) -> Error {
        Error::format(self.what, reason)
    }
}
