//! Named-tensor container file.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "VLDT"  u16 version
//! repeated until EOF:
//!   u32 name_len, name bytes (UTF-8)
//!   u8  dtype (0 = f64, 1 = f32, 2 = u8)
//!   u8  ndim, then ndim x u64 extents
//!   payload: product(extents) elements, little-endian
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Result, VldError};
use crate::params::ParamStore;
use crate::tensor::{numel, Tensor};

pub const MAGIC: &[u8; 4] = b"VLDT";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    F64(Vec<f64>),
    F32(Vec<f32>),
    U8(Vec<u8>),
}

impl Payload {
    fn code(&self) -> u8 {
        match self {
            Payload::F64(_) => 0,
            Payload::F32(_) => 1,
            Payload::U8(_) => 2,
        }
    }

    fn len(&self) -> usize {
        match self {
            Payload::F64(v) => v.len(),
            Payload::F32(v) => v.len(),
            Payload::U8(v) => v.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub shape: Vec<usize>,
    pub payload: Payload,
}

impl Record {
    pub fn f64(name: &str, t: &Tensor) -> Self {
        Self {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            payload: Payload::F64(t.data().to_vec()),
        }
    }

    pub fn u8(name: &str, shape: Vec<usize>, bytes: Vec<u8>) -> Self {
        Self {
            name: name.to_string(),
            shape,
            payload: Payload::U8(bytes),
        }
    }

    /// Decodes any numeric payload into an f64 tensor.
    pub fn to_tensor(&self) -> Tensor {
        let data = match &self.payload {
            Payload::F64(v) => v.clone(),
            Payload::F32(v) => v.iter().map(|&x| x as f64).collect(),
            Payload::U8(v) => v.iter().map(|&x| x as f64).collect(),
        };
        Tensor::from_parts(self.shape.clone(), data)
    }
}

pub fn encode(records: &[Record]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for r in records {
        if numel(&r.shape) != r.payload.len() {
            return Err(VldError::Dimension(format!(
                "record '{}' has shape {:?} but {} values",
                r.name,
                r.shape,
                r.payload.len()
            )));
        }
        if r.shape.len() > u8::MAX as usize {
            return Err(VldError::Dimension(format!("record '{}' has too many axes", r.name)));
        }
        out.extend_from_slice(&(r.name.len() as u32).to_le_bytes());
        out.extend_from_slice(r.name.as_bytes());
        out.push(r.payload.code());
        out.push(r.shape.len() as u8);
        for &e in &r.shape {
            out.extend_from_slice(&(e as u64).to_le_bytes());
        }
        match &r.payload {
            Payload::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Payload::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Payload::U8(v) => out.extend_from_slice(v),
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(VldError::Load(format!("truncated container at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
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
}

pub fn decode(buf: &[u8]) -> Result<Vec<Record>> {
    let mut c = Cursor { buf, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(VldError::Load("bad magic, expected VLDT".into()));
    }
    let version = u16::from_le_bytes(c.take(2)?.try_into().unwrap());
    if version != VERSION {
        return Err(VldError::Load(format!("unsupported container version {}", version)));
    }
    let mut records = Vec::new();
    while c.pos < buf.len() {
        let name_len = c.u32()? as usize;
        let name = String::from_utf8(c.take(name_len)?.to_vec())
            .map_err(|_| VldError::Load("record name is not UTF-8".into()))?;
        let dtype = c.u8()?;
        let ndim = c.u8()? as usize;
        let shape = (0..ndim).map(|_| c.u64().map(|e| e as usize)).collect::<Result<Vec<_>>>()?;
        let n = numel(&shape);
        let payload = match dtype {
            0 => Payload::F64(
                c.take(n * 8)?
                    .chunks_exact(8)
                    .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                    .collect(),
            ),
            1 => Payload::F32(
                c.take(n * 4)?
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                    .collect(),
            ),
            2 => Payload::U8(c.take(n)?.to_vec()),
            other => return Err(VldError::Load(format!("unknown dtype code {} in '{}'", other, name))),
        };
        records.push(Record { name, shape, payload });
    }
    Ok(records)
}

pub fn write(path: &Path, records: &[Record]) -> Result<()> {
    let bytes = encode(records)?;
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
    }
    fs::rename(tmp, path)?;
    Ok(())
}

pub fn read(path: &Path) -> Result<Vec<Record>> {
    decode(&fs::read(path)?)
}

pub fn store_records(store: &ParamStore) -> Vec<Record> {
    store.iter().map(|p| Record::f64(&p.name, &p.tensor)).collect()
}

/// Copies matching records into `store`; every stored parameter must be present
/// with the same shape.
pub fn load_into(store: &mut ParamStore, records: &[Record]) -> Result<()> {
    for p in store.iter_mut() {
        let r = records
            .iter()
            .find(|r| r.name == p.name)
            .ok_or_else(|| VldError::Load(format!("checkpoint has no '{}'", p.name)))?;
        if r.shape != p.tensor.shape() {
            return Err(VldError::Load(format!(
                "'{}' has shape {:?} in checkpoint but {:?} in the configured model",
                p.name,
                r.shape,
                p.tensor.shape()
            )));
        }
        let t = r.to_tensor();
        p.tensor.data_mut().copy_from_slice(t.data());
    }
    Ok(())
}
