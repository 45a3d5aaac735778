//! Clip file container.
//!
//! Version 1 holds a single tensor:
//!
//! ```text
//! "VCLP" | version u16 = 1 | dtype u8 (1 = f64, 2 = f32) | rank u8 (4 or 5)
//!        | rank × u32 dims in (B,) H, W, T, C order | payload in layout order
//! ```
//!
//! Version 2 is a named archive used for checkpoints:
//!
//! ```text
//! "VCLP" | version u16 = 2 | entry count u32 | metadata length u32 | metadata (UTF-8)
//!        | name table: count × (name length u16 | name bytes)
//!        | count × (dtype u8 | rank u8 (1..=5) | rank × u32 dims | payload)
//! ```
//!
//! Everything is little-endian; there is no compression.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::tensor::{checked_product, Array, ClipTensor, TensorShape};

pub const MAGIC: &[u8; 4] = b"VCLP";
pub const VERSION_CLIP: u16 = 1;
pub const VERSION_ARCHIVE: u16 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum DType {
    F64 = 1,
    F32 = 2,
}

impl DType {
    fn from_code(code: u8) -> Result<Self> {
        match code {
            1 => Ok(DType::F64),
            2 => Ok(DType::F32),
            other => Err(Error::Format(format!("unknown dtype code {other}"))),
        }
    }

    fn width(self) -> usize {
        match self {
            DType::F64 => 8,
            DType::F32 => 4,
        }
    }
}

pub fn write_clip(path: impl AsRef<Path>, tensor: &ClipTensor) -> Result<()> {
    write_clip_as(path, tensor, DType::F64)
}

pub fn write_clip_as(path: impl AsRef<Path>, tensor: &ClipTensor, dtype: DType) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    encode_clip(&mut out, tensor, dtype)?;
    out.flush()?;
    Ok(())
}

pub fn read_clip(path: impl AsRef<Path>) -> Result<ClipTensor> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    decode_clip(&bytes)
}

pub fn encode_clip<W: Write>(out: &mut W, tensor: &ClipTensor, dtype: DType) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_u16::<LittleEndian>(VERSION_CLIP)?;
    write_body(out, &tensor.shape().dims(), tensor.data(), dtype)
}

pub fn decode_clip(bytes: &[u8]) -> Result<ClipTensor> {
    let mut cur = bytes;
    let version = read_header(&mut cur)?;
    if version != VERSION_CLIP {
        return Err(Error::Format(format!("expected version {VERSION_CLIP}, found {version}")));
    }
    let (dims, data) = read_body(&mut cur, 4..=5, true)?;
    let shape = TensorShape::from_dims(&dims)?;
    ClipTensor::from_vec(shape, data)
}

/// A checkpoint: free-form metadata plus an ordered list of named arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct Archive {
    pub metadata: String,
    pub entries: Vec<(String, Array)>,
}

pub fn write_archive(path: impl AsRef<Path>, archive: &Archive) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    encode_archive(&mut out, archive)?;
    out.flush()?;
    Ok(())
}

pub fn read_archive(path: impl AsRef<Path>) -> Result<Archive> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    decode_archive(&bytes)
}

pub fn encode_archive<W: Write>(out: &mut W, archive: &Archive) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_u16::<LittleEndian>(VERSION_ARCHIVE)?;
    out.write_u32::<LittleEndian>(to_u32(archive.entries.len(), "entry count")?)?;
    out.write_u32::<LittleEndian>(to_u32(archive.metadata.len(), "metadata length")?)?;
    out.write_all(archive.metadata.as_bytes())?;
    for (name, _) in &archive.entries {
        let len = u16::try_from(name.len()).map_err(|_| Error::Format(format!("name too long: {name}")))?;
        out.write_u16::<LittleEndian>(len)?;
        out.write_all(name.as_bytes())?;
    }
    for (_, array) in &archive.entries {
        write_body(out, array.dims(), array.data(), DType::F64)?;
    }
    Ok(())
}

pub fn decode_archive(bytes: &[u8]) -> Result<Archive> {
    let mut cur = bytes;
    let version = read_header(&mut cur)?;
    if version != VERSION_ARCHIVE {
        return Err(Error::Format(format!("expected version {VERSION_ARCHIVE}, found {version}")));
    }
    let count = cur.read_u32::<LittleEndian>().map_err(eof)? as usize;
    let meta_len = cur.read_u32::<LittleEndian>().map_err(eof)? as usize;
    let metadata = String::from_utf8(take(&mut cur, meta_len)?.to_vec())
        .map_err(|_| Error::Format("metadata is not UTF-8".into()))?;
    let mut names = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = cur.read_u16::<LittleEndian>().map_err(eof)? as usize;
        let name = String::from_utf8(take(&mut cur, len)?.to_vec())
            .map_err(|_| Error::Format("entry name is not UTF-8".into()))?;
        names.push(name);
    }
    let mut entries = Vec::with_capacity(names.len());
    for name in names {
        let (dims, data) = read_body(&mut cur, 1..=5, false)?;
        entries.push((name, Array::from_vec(&dims, data)?));
    }
    if !cur.is_empty() {
        return Err(Error::Format(format!("{} trailing bytes", cur.len())));
    }
    Ok(Archive { metadata, entries })
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Format(format!("{what} {v} exceeds u32")))
}

fn eof(_: std::io::Error) -> Error {
    Error::Format("unexpected end of header".into())
}

fn take<'a>(cur: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if cur.len() < n {
        return Err(Error::Format("unexpected end of header".into()));
    }
    let (head, tail) = cur.split_at(n);
    *cur = tail;
    Ok(head)
}

fn read_header(cur: &mut &[u8]) -> Result<u16> {
    let magic = take(cur, 4)?;
    if magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    cur.read_u16::<LittleEndian>().map_err(eof)
}

fn write_body<W: Write>(out: &mut W, dims: &[usize], data: &[f64], dtype: DType) -> Result<()> {
    out.write_u8(dtype as u8)?;
    out.write_u8(dims.len() as u8)?;
    for &d in dims {
        out.write_u32::<LittleEndian>(to_u32(d, "dimension")?)?;
    }
    match dtype {
        DType::F64 => {
            for &v in data {
                out.write_f64::<LittleEndian>(v)?;
            }
        }
        DType::F32 => {
            for &v in data {
                out.write_f32::<LittleEndian>(v as f32)?;
            }
        }
    }
    Ok(())
}

/// Reads one `dtype | rank | dims | payload` body. With `to_end` the payload
/// must consume the rest of the buffer exactly.
fn read_body(cur: &mut &[u8], ranks: std::ops::RangeInclusive<usize>, to_end: bool) -> Result<(Vec<usize>, Vec<f64>)> {
    let dtype = DType::from_code(cur.read_u8().map_err(eof)?)?;
    let rank = cur.read_u8().map_err(eof)? as usize;
    if !ranks.contains(&rank) {
        return Err(Error::Format(format!("unsupported rank {rank}")));
    }
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        dims.push(cur.read_u32::<LittleEndian>().map_err(eof)? as usize);
    }
    let expected = checked_product(&dims).map_err(|_| Error::Format(format!("dims {dims:?} overflow")))?;
    let width = dtype.width();
    let available = cur.len() / width;
    let bad_tail = to_end && (!cur.len().is_multiple_of(width) || available != expected);
    if available < expected || bad_tail {
        return Err(Error::Truncated { expected, found: available });
    }
    let payload = take(cur, expected * width)?;
    let data = match dtype {
        DType::F64 => payload.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect(),
        DType::F32 => payload.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64).collect(),
    };
    Ok((dims, data))
}
