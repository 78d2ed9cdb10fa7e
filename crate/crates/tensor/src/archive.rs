//! Parameter checkpoint archive.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      4 bytes   "SDTA"
//! version    u8        1
//! meta_count u32
//!   key_len u32, key utf-8, value_len u32, value utf-8      (meta_count times)
//! tensor_count u32
//!   name_len u32, name utf-8
//!   ndim u32, dims ndim x u32
//!   values product(dims) x f32                               (tensor_count times)
//! ```
//!
//! Entries are written in lexical name order. Trailing bytes are rejected.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Result, TensorError};
use crate::params::ParamSet;
use crate::tensor::{Scalar, Tensor};

pub const MAGIC: &[u8; 4] = b"SDTA";
pub const VERSION: u8 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Archive {
    pub meta: BTreeMap<String, String>,
    pub params: ParamSet<f32>,
}

fn put_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_str(w: &mut impl Write, s: &str) -> Result<()> {
    put_u32(w, len_u32(s.len())?)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn len_u32(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| TensorError::Format(format!("length {n} exceeds u32")))
}

pub fn write_archive<T: Scalar>(
    w: &mut impl Write,
    meta: &BTreeMap<String, String>,
    params: &ParamSet<T>,
) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&[VERSION])?;
    put_u32(w, len_u32(meta.len())?)?;
    for (k, v) in meta {
        put_str(w, k)?;
        put_str(w, v)?;
    }
    put_u32(w, len_u32(params.len())?)?;
    for (name, t) in params.iter() {
        put_str(w, name)?;
        put_u32(w, len_u32(t.shape().len())?)?;
        for &d in t.shape() {
            put_u32(w, len_u32(d)?)?;
        }
        let mut buf = Vec::with_capacity(t.len() * 4);
        for &x in t.data() {
            buf.extend_from_slice(&(x.as_f64() as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

struct Cursor<R> {
    inner: R,
}

impl<R: Read> Cursor<R> {
    fn bytes(&mut self, n: usize, what: &str) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner.read_exact(&mut buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => TensorError::Format(format!("truncated while reading {what}")),
            _ => TensorError::Io(e),
        })?;
        Ok(buf)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.bytes(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)? as usize;
        String::from_utf8(self.bytes(n, what)?).map_err(|_| TensorError::Format(format!("{what} is not UTF-8")))
    }
}

pub fn read_archive(r: impl Read) -> Result<Archive> {
    let mut cur = Cursor { inner: r };
    if cur.bytes(4, "magic")? != MAGIC {
        return Err(TensorError::Format("bad magic".into()));
    }
    let version = cur.bytes(1, "version")?[0];
    if version != VERSION {
        return Err(TensorError::Format(format!("unsupported version {version}")));
    }
    let mut meta = BTreeMap::new();
    for _ in 0..cur.u32("meta count")? {
        let k = cur.string("meta key")?;
        let v = cur.string("meta value")?;
        meta.insert(k, v);
    }
    let mut params = ParamSet::new();
    for _ in 0..cur.u32("tensor count")? {
        let name = cur.string("tensor name")?;
        let ndim = cur.u32("ndim")? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(cur.u32("dim")? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = cur.bytes(numel * 4, &format!("values of {name}"))?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        if params.contains(&name) {
            return Err(TensorError::Format(format!("duplicate tensor {name:?}")));
        }
        params.insert(name, Tensor::new(shape, data)?);
    }
    let mut rest = Vec::new();
    cur.inner.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(TensorError::Format(format!("{} trailing bytes", rest.len())));
    }
    Ok(Archive { meta, params })
}

pub fn save<T: Scalar>(path: impl AsRef<Path>, meta: &BTreeMap<String, String>, params: &ParamSet<T>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_archive(&mut w, meta, params)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Archive> {
    read_archive(BufReader::new(File::open(path)?))
}
