//! Grayscale Netpbm (PGM) reading and writing.
//!
//! Both the ASCII (`P2`) and binary (`P5`) encodings are read. Writing uses `P5`.
//! Samples are mapped to `[0, 1]` by dividing by `maxval`; on output they are
//! clamped and quantized with round-half-up.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use jointfuse_core::ImagePlane;

#[derive(Debug, thiserror::Error)]
pub enum PgmError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: io::Error },
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: io::Error },
    #[error("unsupported magic {0:?}; expected P2 or P5")]
    UnsupportedMagic(String),
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("truncated payload: expected {expected} samples, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("malformed sample {index}: {message}")]
    MalformedSample { index: usize, message: String },
    #[error("unsupported maxval {0}; use 255 or 65535")]
    UnsupportedMaxval(u32),
}

pub type PgmResult<T> = Result<T, PgmError>;

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn skip_whitespace_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    /// Next whitespace-delimited token, or `None` at end of input.
    fn token(&mut self) -> Option<&'a [u8]> {
        self.skip_whitespace_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len()
            && !self.bytes[self.pos].is_ascii_whitespace()
            && self.bytes[self.pos] != b'#'
        {
            self.pos += 1;
        }
        (self.pos > start).then(|| &self.bytes[start..self.pos])
    }

    fn header_number(&mut self, what: &str) -> PgmResult<u32> {
        let tok = self
            .token()
            .ok_or_else(|| PgmError::MalformedHeader(format!("missing {what}")))?;
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse::<u32>().ok())
            .ok_or_else(|| {
                PgmError::MalformedHeader(format!(
                    "{what} is not a number: {:?}",
                    String::from_utf8_lossy(tok)
                ))
            })
    }
}

/// Decode a PGM file held in memory.
pub fn decode_pgm(bytes: &[u8]) -> PgmResult<ImagePlane> {
    if bytes.len() < 2 {
        return Err(PgmError::MalformedHeader(
            "file too short for a magic number".into(),
        ));
    }
    let magic = &bytes[..2];
    let binary = match magic {
        b"P5" => true,
        b"P2" => false,
        other => {
            return Err(PgmError::UnsupportedMagic(
                String::from_utf8_lossy(other).into_owned(),
            ))
        }
    };
    let mut cur = Cursor { bytes, pos: 2 };
    if !bytes
        .get(2)
        .is_some_and(|b| b.is_ascii_whitespace() || *b == b'#')
    {
        return Err(PgmError::MalformedHeader(
            "magic must be followed by whitespace".into(),
        ));
    }
    let width = cur.header_number("width")? as usize;
    let height = cur.header_number("height")? as usize;
    let maxval = cur.header_number("maxval")?;
    if width == 0 || height == 0 {
        return Err(PgmError::MalformedHeader(format!(
            "empty image {width}x{height}"
        )));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(PgmError::MalformedHeader(format!(
            "maxval {maxval} outside 1..=65535"
        )));
    }
    let count = width
        .checked_mul(height)
        .ok_or_else(|| PgmError::MalformedHeader("dimensions overflow".into()))?;
    let scale = 1.0 / maxval as f64;
    let mut data = Vec::with_capacity(count);

    if binary {
        // Exactly one whitespace byte separates the header from the raster.
        if !bytes.get(cur.pos).is_some_and(u8::is_ascii_whitespace) {
            return Err(PgmError::MalformedHeader(
                "missing separator after maxval".into(),
            ));
        }
        let raster = &bytes[cur.pos + 1..];
        let width_bytes = if maxval > 255 { 2 } else { 1 };
        let available = raster.len() / width_bytes;
        if available < count {
            return Err(PgmError::Truncated {
                expected: count,
                found: available,
            });
        }
        for i in 0..count {
            let v = if width_bytes == 2 {
                u16::from_be_bytes([raster[2 * i], raster[2 * i + 1]]) as u32
            } else {
                raster[i] as u32
            };
            if v > maxval {
                return Err(PgmError::MalformedSample {
                    index: i,
                    message: format!("{v} exceeds maxval {maxval}"),
                });
            }
            data.push(v as f64 * scale);
        }
    } else {
        for i in 0..count {
            let tok = cur.token().ok_or(PgmError::Truncated {
                expected: count,
                found: i,
            })?;
            let v = std::str::from_utf8(tok)
                .ok()
                .and_then(|s| s.parse::<u32>().ok())
                .ok_or_else(|| PgmError::MalformedSample {
                    index: i,
                    message: format!("not a number: {:?}", String::from_utf8_lossy(tok)),
                })?;
            if v > maxval {
                return Err(PgmError::MalformedSample {
                    index: i,
                    message: format!("{v} exceeds maxval {maxval}"),
                });
            }
            data.push(v as f64 * scale);
        }
    }
    Ok(ImagePlane::new(height, width, data)
        .expect("header dimensions are positive and match the raster"))
}

/// `round(v · maxval)` after clamping to `[0, 1]`, halves rounding up.
pub fn quantize(v: f64, maxval: u32) -> u32 {
    let q = (v.clamp(0.0, 1.0) * maxval as f64 + 0.5).floor();
    if q.is_nan() {
        0
    } else {
        q as u32
    }
}

fn check_maxval(maxval: u32) -> PgmResult<()> {
    match maxval {
        255 | 65535 => Ok(()),
        other => Err(PgmError::UnsupportedMaxval(other)),
    }
}

/// Binary `P5` encoding.
pub fn encode_pgm(img: &ImagePlane, maxval: u32) -> PgmResult<Vec<u8>> {
    check_maxval(maxval)?;
    let mut out = format!("P5\n{} {}\n{}\n", img.width(), img.height(), maxval).into_bytes();
    for &v in img.data() {
        let q = quantize(v, maxval);
        if maxval > 255 {
            out.extend_from_slice(&(q as u16).to_be_bytes());
        } else {
            out.push(q as u8);
        }
    }
    Ok(out)
}

/// ASCII `P2` encoding, one image row per line.
pub fn encode_pgm_ascii(img: &ImagePlane, maxval: u32) -> PgmResult<Vec<u8>> {
    check_maxval(maxval)?;
    let mut out = format!("P2\n{} {}\n{}\n", img.width(), img.height(), maxval);
    for row in img.data().chunks(img.width()) {
        let line: Vec<String> = row
            .iter()
            .map(|&v| quantize(v, maxval).to_string())
            .collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    Ok(out.into_bytes())
}

pub fn load_pgm(path: impl AsRef<Path>) -> PgmResult<ImagePlane> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| PgmError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    decode_pgm(&bytes)
}

pub fn save_pgm(img: &ImagePlane, path: impl AsRef<Path>, maxval: u32) -> PgmResult<()> {
    let path = path.as_ref();
    let bytes = encode_pgm(img, maxval)?;
    fs::write(path, bytes).map_err(|source| PgmError::Write {
        path: path.to_path_buf(),
        source,
    })
}
