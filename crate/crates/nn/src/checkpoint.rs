//! Binary checkpoint format.
//!
//! ```text
//! magic   "ZSELCKPT"
//! u16     version (1)
//! u32     block count
//! block*  u16 name length, UTF-8 name, u8 dtype tag, u8 rank,
//!         u32 dims[rank], little-endian payload
//! u32     CRC32 of every preceding byte
//! ```
//!
//! Each parameter `p` produces the blocks `p`, `p@adam.m` and `p@adam.v`;
//! the optimizer step counter is stored in the `@adam.step` block (u64).

use std::collections::BTreeSet;
use std::path::Path;

use crate::error::{NnError, Result};
use crate::params::ParameterSet;
use crate::scalar::{DType, Real};
use crate::tensor::{numel, Tensor};

pub const MAGIC: &[u8; 8] = b"ZSELCKPT";
pub const VERSION: u16 = 1;
const STEP_BLOCK: &str = "@adam.step";
const M_SUFFIX: &str = "@adam.m";
const V_SUFFIX: &str = "@adam.v";

fn put_block<T: Real>(out: &mut Vec<u8>, name: &str, shape: &[usize], data: &[T]) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(T::DTYPE as u8);
    out.push(shape.len() as u8);
    for &d in shape {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &x in data {
        x.write_le(out);
    }
}

pub fn encode<T: Real>(params: &ParameterSet<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&((params.len() * 3 + 1) as u32).to_le_bytes());
    for (name, p) in params.iter() {
        let shape = p.value().shape();
        put_block(&mut out, name, shape, p.value().data());
        put_block(&mut out, &format!("{name}{M_SUFFIX}"), shape, p.first_moment());
        put_block(&mut out, &format!("{name}{V_SUFFIX}"), shape, p.second_moment());
    }
    out.extend_from_slice(&(STEP_BLOCK.len() as u16).to_le_bytes());
    out.extend_from_slice(STEP_BLOCK.as_bytes());
    out.push(DType::U64 as u8);
    out.push(1);
    out.extend_from_slice(&1u32.to_le_bytes());
    out.extend_from_slice(&params.step().to_le_bytes());
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(NnError::Truncated)?;
        let s = self.buf.get(self.pos..end).ok_or(NnError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

struct RawBlock<'a> {
    name: String,
    tag: u8,
    shape: Vec<usize>,
    payload: &'a [u8],
}

fn read_blocks(bytes: &[u8]) -> Result<Vec<RawBlock<'_>>> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(NnError::BadMagic);
    }
    if bytes.len() < MAGIC.len() + 2 + 4 + 4 {
        return Err(NnError::Truncated);
    }
    let mut r = Reader { buf: &bytes[..bytes.len() - 4], pos: MAGIC.len() };
    let version = r.u16()?;
    if version != VERSION {
        return Err(NnError::UnsupportedVersion(version));
    }
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().expect("4 bytes"));
    let computed = crc32fast::hash(&bytes[..bytes.len() - 4]);
    let count = r.u32()?;
    let mut blocks = Vec::with_capacity(count.min(1 << 16) as usize);
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|e| NnError::Malformed(e.to_string()))?;
        let tag = r.u8()?;
        let dtype = DType::from_tag(tag).ok_or_else(|| NnError::Malformed(format!("unknown dtype tag {tag} in `{name}`")))?;
        let rank = r.u8()? as usize;
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let payload = r.take(numel(&shape) * dtype.size())?;
        blocks.push(RawBlock { name, tag, shape, payload });
    }
    if stored != computed {
        return Err(NnError::CrcMismatch { stored, computed });
    }
    if r.pos != r.buf.len() {
        return Err(NnError::Malformed(format!("{} trailing bytes", r.buf.len() - r.pos)));
    }
    Ok(blocks)
}

fn decode_floats<T: Real>(b: &RawBlock<'_>) -> Result<Vec<T>> {
    if b.tag != T::DTYPE as u8 {
        return Err(NnError::DTypeMismatch { name: b.name.clone(), tag: b.tag, expected: T::DTYPE as u8 });
    }
    let w = T::DTYPE.size();
    Ok(b.payload.chunks_exact(w).map(T::read_le).collect())
}

pub fn decode<T: Real>(bytes: &[u8]) -> Result<ParameterSet<T>> {
    let blocks = read_blocks(bytes)?;
    let mut out = ParameterSet::new();
    let find = |name: &str| blocks.iter().find(|b| b.name == name);
    for b in &blocks {
        if b.name == STEP_BLOCK {
            if b.tag != DType::U64 as u8 || b.payload.len() != 8 {
                return Err(NnError::Malformed("step block".into()));
            }
            out.set_step(u64::from_le_bytes(b.payload.try_into().expect("8 bytes")));
            continue;
        }
        if b.name.ends_with(M_SUFFIX) || b.name.ends_with(V_SUFFIX) {
            continue;
        }
        let value = Tensor::new(&b.shape, decode_floats::<T>(b)?)?;
        let moment = |suffix: &str| -> Result<Vec<T>> {
            match find(&format!("{}{suffix}", b.name)) {
                Some(mb) if mb.shape == b.shape => decode_floats::<T>(mb),
                Some(mb) => Err(NnError::BlockShape { name: mb.name.clone(), expected: b.shape.clone(), found: mb.shape.clone() }),
                None => Ok(vec![T::zero(); value.numel()]),
            }
        };
        let (m, v) = (moment(M_SUFFIX)?, moment(V_SUFFIX)?);
        out.insert_raw(b.name.clone(), ParameterSet::raw_parts(value, m, v));
    }
    Ok(out)
}

pub fn save_checkpoint<T: Real>(params: &ParameterSet<T>, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode(params))?;
    Ok(())
}

pub fn load_checkpoint<T: Real>(path: impl AsRef<Path>) -> Result<ParameterSet<T>> {
    decode(&std::fs::read(path)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoadMode {
    /// Every target name must be supplied by the source.
    Strict,
    /// Target names absent from the source keep their current values.
    Partial,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub loaded: Vec<String>,
    pub missing: Vec<String>,
    pub unexpected: Vec<String>,
}

/// Copy values and moments from `source` into the matching names of
/// `target`, restricted to names starting with `prefix`.
pub fn load_into<T: Real>(
    target: &mut ParameterSet<T>,
    source: &ParameterSet<T>,
    prefix: &str,
    mode: LoadMode,
) -> Result<LoadReport> {
    let wanted: BTreeSet<String> = target.names().filter(|n| n.starts_with(prefix)).map(str::to_string).collect();
    let offered: BTreeSet<String> = source.names().filter(|n| n.starts_with(prefix)).map(str::to_string).collect();
    let missing: Vec<String> = wanted.difference(&offered).cloned().collect();
    let unexpected: Vec<String> = offered.difference(&wanted).cloned().collect();
    if mode == LoadMode::Strict && !missing.is_empty() {
        return Err(NnError::MissingBlocks(missing));
    }
    let mut loaded = Vec::new();
    for name in wanted.intersection(&offered) {
        let src = source.param(name).expect("offered");
        let expected = target.get(name).expect("wanted").shape().to_vec();
        if src.value().shape() != expected.as_slice() {
            return Err(NnError::BlockShape { name: name.clone(), expected, found: src.value().shape().to_vec() });
        }
        let p = ParameterSet::raw_parts(src.value().clone(), src.first_moment().to_vec(), src.second_moment().to_vec());
        target.insert_raw(name.clone(), p);
        loaded.push(name.clone());
    }
    Ok(LoadReport { loaded, missing, unexpected })
}
