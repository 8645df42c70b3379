//! Binary checkpoint format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! u32  format_version (= 1)
//! u64  kind length        | kind bytes (utf-8)
//! u64  hyperparams length | hyperparams bytes (json, utf-8)
//! u64  parameter count
//! per parameter:
//!   u64 name length | name bytes (utf-8)
//!   u64 rank        | rank * u64 extents
//!   numel * f32 data
//! ```
//!
//! Round-trips are bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{ParamSet, Tensor};

pub const FORMAT_VERSION: u32 = 1;

/// A checkpoint ready to write or just read.
pub struct Checkpoint {
    pub kind: String,
    pub hyperparams_json: String,
    pub params: ParamSet<f32>,
}

pub fn save(path: &Path, kind: &str, hyperparams_json: &str, params: &ParamSet<f32>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| Error::io(path.display().to_string(), e);

    w.write_all(&FORMAT_VERSION.to_le_bytes()).map_err(io_err)?;
    write_str(&mut w, kind).map_err(io_err)?;
    write_str(&mut w, hyperparams_json).map_err(io_err)?;
    w.write_all(&(params.len() as u64).to_le_bytes()).map_err(io_err)?;
    for (_, p) in params.iter() {
        write_str(&mut w, &p.name).map_err(io_err)?;
        w.write_all(&(p.value.shape().len() as u64).to_le_bytes()).map_err(io_err)?;
        for &e in p.value.shape() {
            w.write_all(&(e as u64).to_le_bytes()).map_err(io_err)?;
        }
        for &v in p.value.data() {
            w.write_all(&v.to_le_bytes()).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut r = BufReader::new(file);
    let io_err = |e| Error::io(path.display().to_string(), e);

    let version = read_u32(&mut r).map_err(io_err)?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let kind = read_str(&mut r).map_err(io_err)?;
    let hyperparams_json = read_str(&mut r).map_err(io_err)?;
    let count = read_u64(&mut r).map_err(io_err)? as usize;

    let mut params = ParamSet::new();
    for _ in 0..count {
        let name = read_str(&mut r).map_err(io_err)?;
        let rank = read_u64(&mut r).map_err(io_err)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u64(&mut r).map_err(io_err)? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = vec![0f32; numel];
        let mut buf = [0u8; 4];
        for v in &mut data {
            r.read_exact(&mut buf).map_err(io_err)?;
            *v = f32::from_le_bytes(buf);
        }
        let tensor = Tensor::new(shape, data)
            .map_err(|e| Error::Checkpoint(format!("corrupt parameter {name:?}: {e}")))?;
        params
            .add(name, tensor)
            .map_err(|e| Error::Checkpoint(format!("duplicate parameter in file: {e}")))?;
    }
    Ok(Checkpoint { kind, hyperparams_json, params })
}

/// Load and require a model kind; mismatches are compatibility errors.
pub fn load_expecting(path: &Path, kind: &str) -> Result<Checkpoint> {
    let ckpt = load(path)?;
    if ckpt.kind != kind {
        return Err(Error::Checkpoint(format!(
            "model kind mismatch: checkpoint holds {:?}, expected {kind:?}",
            ckpt.kind
        )));
    }
    Ok(ckpt)
}

fn write_str<W: Write>(w: &mut W, s: &str) -> std::io::Result<()> {
    w.write_all(&(s.len() as u64).to_le_bytes())?;
    w.write_all(s.as_bytes())
}

fn read_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_str<R: Read>(r: &mut R) -> std::io::Result<String> {
    let len = read_u64(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}
