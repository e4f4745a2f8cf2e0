//! Binary checkpoint container.
//!
//! Layout: `DGLB`, version `u16`, `u32` length + UTF-8 `key=value` lines, then
//! tensor records until end of file. A record is name length `u16`, name,
//! dtype `u8`, rank `u8`, one `u32` per dimension, raw little-endian values.
//! All integers are little-endian.

use std::path::Path;

use crate::error::{io_err, Error, Result};
use crate::tensor::{DType, Scalar, Tensor};

pub const MAGIC: &[u8; 4] = b"DGLB";
pub const VERSION: u16 = 1;

/// A tensor as stored, in its on-disk precision.
#[derive(Clone, Debug, PartialEq)]
pub enum Stored {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl Stored {
    pub fn shape(&self) -> &[usize] {
        match self {
            Stored::F32(t) => t.shape(),
            Stored::F64(t) => t.shape(),
        }
    }

    /// Converts to `T`; exact when the stored precision is `T`.
    pub fn to<T: Scalar>(&self) -> Tensor<T> {
        match self {
            Stored::F32(t) => t.cast(),
            Stored::F64(t) => t.cast(),
        }
    }
}

pub trait IntoStored {
    fn into_stored(self) -> Stored;
}

impl IntoStored for Tensor<f32> {
    fn into_stored(self) -> Stored {
        Stored::F32(self)
    }
}

impl IntoStored for Tensor<f64> {
    fn into_stored(self) -> Stored {
        Stored::F64(self)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: Vec<(String, String)>,
    pub tensors: Vec<(String, Stored)>,
}

fn write_tensor<T: Scalar>(buf: &mut Vec<u8>, t: &Tensor<T>) {
    buf.push(T::DTYPE.code());
    buf.push(t.shape().len() as u8);
    for &d in t.shape() {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        v.write_le(buf);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint(format!("truncated while reading {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn values<T: Scalar>(&mut self, shape: Vec<usize>, name: &str) -> Result<Tensor<T>> {
        let n: usize = shape.iter().product();
        let size = T::DTYPE.size();
        let raw = self.take(n * size, name)?;
        let data = raw.chunks_exact(size).map(T::read_le).collect();
        Tensor::new(shape, data)
    }
}

impl Checkpoint {
    pub fn meta_get(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn tensor(&self, name: &str) -> Option<&Stored> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        let mut text = String::new();
        for (k, v) in &self.meta {
            if k.contains(['=', '\n']) || v.contains('\n') {
                return Err(Error::Checkpoint(format!("metadata entry `{k}` cannot be encoded")));
            }
            text.push_str(&format!("{k}={v}\n"));
        }
        buf.extend_from_slice(&(text.len() as u32).to_le_bytes());
        buf.extend_from_slice(text.as_bytes());
        for (name, t) in &self.tensors {
            if name.len() > u16::MAX as usize {
                return Err(Error::Checkpoint(format!("tensor name too long: {name}")));
            }
            buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
            match t {
                Stored::F32(t) => write_tensor(&mut buf, t),
                Stored::F64(t) => write_tensor(&mut buf, t),
            }
        }
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
        }
        let version = r.u16("version")?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {version}")));
        }
        let len = r.u32("config length")? as usize;
        let text = std::str::from_utf8(r.take(len, "config")?)
            .map_err(|_| Error::Checkpoint("config text is not UTF-8".into()))?;
        let mut meta = Vec::new();
        for line in text.lines().filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Checkpoint(format!("malformed config line `{line}`")))?;
            meta.push((k.to_string(), v.to_string()));
        }
        let mut tensors = Vec::new();
        while r.pos < bytes.len() {
            let n = r.u16("name length")? as usize;
            let name = std::str::from_utf8(r.take(n, "name")?)
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
                .to_string();
            let dtype = r.u8(&name)?;
            let rank = r.u8(&name)? as usize;
            let shape = (0..rank).map(|_| r.u32(&name).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let t = match DType::from_code(dtype) {
                Some(DType::F32) => Stored::F32(r.values(shape, &name)?),
                Some(DType::F64) => Stored::F64(r.values(shape, &name)?),
                None => return Err(Error::Checkpoint(format!("`{name}` has unknown dtype {dtype}"))),
            };
            tensors.push((name, t));
        }
        Ok(Self { meta, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        std::fs::write(path, self.to_bytes()?).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path).map_err(io_err(path))?)
    }
}
