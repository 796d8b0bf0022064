//! Binary parameter files for the tiny denoiser.
//!
//! Layout, all little-endian: the magic `TNP1`, a `u32` layer count, `(cin, cout)`
//! as `u32` pairs per layer, then every parameter as an `f64` in storage order.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use jointfuse_core::denoiser::{TinyNetParams, LAYERS};

pub const MAGIC: &[u8; 4] = b"TNP1";

#[derive(Debug, thiserror::Error)]
pub enum ParamsError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: io::Error },
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: io::Error },
    #[error("not a parameter file (bad magic)")]
    BadMagic,
    #[error("layer layout does not match this network: {0}")]
    Layout(String),
    #[error("parameter file truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("invalid parameters: {0}")]
    Invalid(String),
}

pub fn encode_params(p: &TinyNetParams) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 8 * LAYERS.len() + 8 * TinyNetParams::LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(LAYERS.len() as u32).to_le_bytes());
    for l in LAYERS {
        out.extend_from_slice(&(l.cin as u32).to_le_bytes());
        out.extend_from_slice(&(l.cout as u32).to_le_bytes());
    }
    for v in p.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn read_u32(bytes: &[u8], at: usize) -> Option<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
}

pub fn decode_params(bytes: &[u8]) -> Result<TinyNetParams, ParamsError> {
    if bytes.get(..4) != Some(MAGIC.as_slice()) {
        return Err(ParamsError::BadMagic);
    }
    let header = 8 + 8 * LAYERS.len();
    let expected = header + 8 * TinyNetParams::LEN;
    let layers = read_u32(bytes, 4).ok_or(ParamsError::Truncated {
        expected,
        found: bytes.len(),
    })?;
    if layers as usize != LAYERS.len() {
        return Err(ParamsError::Layout(format!(
            "{layers} layers, expected {}",
            LAYERS.len()
        )));
    }
    for (i, l) in LAYERS.iter().enumerate() {
        let at = 8 + 8 * i;
        let (cin, cout) = match (read_u32(bytes, at), read_u32(bytes, at + 4)) {
            (Some(a), Some(b)) => (a as usize, b as usize),
            _ => {
                return Err(ParamsError::Truncated {
                    expected,
                    found: bytes.len(),
                })
            }
        };
        if (cin, cout) != (l.cin, l.cout) {
            return Err(ParamsError::Layout(format!(
                "layer {i} is {cin}->{cout}, expected {}->{}",
                l.cin, l.cout
            )));
        }
    }
    if bytes.len() != expected {
        return Err(ParamsError::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    let values = bytes[header..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    TinyNetParams::from_values(values).map_err(|e| ParamsError::Invalid(e.to_string()))
}

pub fn save_params(p: &TinyNetParams, path: impl AsRef<Path>) -> Result<(), ParamsError> {
    let path = path.as_ref();
    fs::write(path, encode_params(p)).map_err(|source| ParamsError::Write {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_params(path: impl AsRef<Path>) -> Result<TinyNetParams, ParamsError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| ParamsError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    decode_params(&bytes)
}
