//! Textual operator specifications such as `blur:sigma=1.0+down:s=2`.
//!
//! ```text
//! spec  := term ('+' term)*
//! term  := 'id' | 'blur' [':' kv (',' kv)*] | 'down' ':' 's=' int
//! kv    := 'sigma=' real | 'gamma=' real | 'size=' odd-int
//! ```
//!
//! Terms of a chain act left to right.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use super::degradation::LinearDegradation;
use super::kernel::BlurKernel;
use crate::error::{Error, Result};
use crate::image::Dims;

pub const DEFAULT_BLUR_SIGMA: f64 = 1.0;
pub const DEFAULT_BLUR_SIZE: usize = 5;
pub const DEFAULT_WIENER_GAMMA: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub enum OpTerm {
    Identity,
    Blur { sigma: f64, gamma: f64, size: usize },
    Down { scale: usize },
}

/// A parsed, size-independent operator description.
#[derive(Debug, Clone, PartialEq)]
pub struct OpSpec {
    pub terms: Vec<OpTerm>,
}

fn spec_error(position: usize, message: impl Into<String>) -> Error {
    Error::OpSpec {
        position,
        message: message.into(),
    }
}

fn parse_real(value: &str, at: usize) -> Result<f64> {
    let v: f64 = value
        .parse()
        .map_err(|_| spec_error(at, alloc::format!("expected a number, found '{value}'")))?;
    if !v.is_finite() {
        return Err(spec_error(at, "value must be finite"));
    }
    Ok(v)
}

fn parse_int(value: &str, at: usize) -> Result<usize> {
    value
        .parse()
        .map_err(|_| spec_error(at, alloc::format!("expected an integer, found '{value}'")))
}

fn parse_term(text: &str, offset: usize) -> Result<OpTerm> {
    let (name, params) = match text.find(':') {
        Some(i) => (&text[..i], Some((&text[i + 1..], offset + i + 1))),
        None => (text, None),
    };
    let mut pairs = Vec::new();
    if let Some((body, mut at)) = params {
        if body.is_empty() {
            return Err(spec_error(at, "empty parameter list"));
        }
        for kv in body.split(',') {
            let eq = kv.find('=').ok_or_else(|| {
                spec_error(at, alloc::format!("expected key=value, found '{kv}'"))
            })?;
            pairs.push((&kv[..eq], &kv[eq + 1..], at, at + eq + 1));
            at += kv.len() + 1;
        }
    }
    match name {
        "id" => {
            if let Some(&(_, _, at, _)) = pairs.first() {
                return Err(spec_error(at, "'id' takes no parameters"));
            }
            Ok(OpTerm::Identity)
        }
        "blur" => {
            let (mut sigma, mut gamma, mut size) =
                (DEFAULT_BLUR_SIGMA, DEFAULT_WIENER_GAMMA, DEFAULT_BLUR_SIZE);
            for (k, v, kat, vat) in pairs {
                match k {
                    "sigma" => sigma = parse_real(v, vat)?,
                    "gamma" => gamma = parse_real(v, vat)?,
                    "size" => size = parse_int(v, vat)?,
                    _ => {
                        return Err(spec_error(
                            kat,
                            alloc::format!("unknown blur parameter '{k}'"),
                        ))
                    }
                }
            }
            if sigma <= 0.0 {
                return Err(spec_error(offset, "blur sigma must be positive"));
            }
            if gamma < 0.0 {
                return Err(spec_error(offset, "blur gamma must be non-negative"));
            }
            if size % 2 == 0 {
                return Err(spec_error(offset, "blur size must be odd"));
            }
            Ok(OpTerm::Blur { sigma, gamma, size })
        }
        "down" => {
            let mut scale = None;
            for (k, v, kat, vat) in pairs {
                match k {
                    "s" => scale = Some(parse_int(v, vat)?),
                    _ => {
                        return Err(spec_error(
                            kat,
                            alloc::format!("unknown down parameter '{k}'"),
                        ))
                    }
                }
            }
            match scale {
                Some(0) => Err(spec_error(offset, "down scale must be positive")),
                Some(scale) => Ok(OpTerm::Down { scale }),
                None => Err(spec_error(offset, "'down' requires s=<scale>")),
            }
        }
        "" => Err(spec_error(offset, "empty operator term")),
        other => Err(spec_error(
            offset,
            alloc::format!("unknown operator '{other}'"),
        )),
    }
}

impl FromStr for OpSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut terms = Vec::new();
        let mut offset = 0;
        for part in s.split('+') {
            terms.push(parse_term(
                part.trim(),
                offset + (part.len() - part.trim_start().len()),
            )?);
            offset += part.len() + 1;
        }
        Ok(Self { terms })
    }
}

impl fmt::Display for OpTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OpTerm::Identity => write!(f, "id"),
            OpTerm::Blur { sigma, gamma, size } => {
                write!(f, "blur:sigma={sigma},gamma={gamma},size={size}")
            }
            OpTerm::Down { scale } => write!(f, "down:s={scale}"),
        }
    }
}

impl fmt::Display for OpSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.terms.iter().map(|t| t.to_string()).collect();
        write!(f, "{}", parts.join("+"))
    }
}

impl OpTerm {
    fn build(&self, dims: Dims) -> Result<LinearDegradation> {
        match *self {
            OpTerm::Identity => Ok(LinearDegradation::identity(dims)),
            OpTerm::Blur { sigma, gamma, size } => {
                LinearDegradation::blur(dims, BlurKernel::gaussian(size, sigma)?, gamma)
            }
            OpTerm::Down { scale } => LinearDegradation::downsample(dims, scale),
        }
    }
}

impl OpSpec {
    /// Instantiate the operator on a clean grid of size `dims`.
    pub fn build(&self, dims: Dims) -> Result<LinearDegradation> {
        let mut ops = Vec::with_capacity(self.terms.len());
        let mut d = dims;
        for t in &self.terms {
            let op = t.build(d)?;
            d = op.out_dims();
            ops.push(op);
        }
        if ops.len() == 1 {
            Ok(ops.pop().expect("one term"))
        } else {
            LinearDegradation::composite(ops)
        }
    }

    /// Output grid for a clean grid of size `dims`, without building the operator.
    pub fn out_dims(&self, dims: Dims) -> Result<Dims> {
        let mut d = dims;
        for t in &self.terms {
            if let OpTerm::Down { scale } = t {
                if d.height % scale != 0 || d.width % scale != 0 {
                    return Err(Error::InvalidArgument(alloc::format!(
                        "downsample scale {scale} must divide {d}"
                    )));
                }
                d = Dims::new(d.height / scale, d.width / scale);
            }
        }
        Ok(d)
    }

    /// Clean grid that maps onto an observation of size `out`.
    pub fn in_dims_for(&self, out: Dims) -> Dims {
        let s: usize = self
            .terms
            .iter()
            .map(|t| match t {
                OpTerm::Down { scale } => *scale,
                _ => 1,
            })
            .product();
        Dims::new(out.height * s, out.width * s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_defaults_and_chains() {
        let s: OpSpec = "blur:sigma=1.0+down:s=2".parse().unwrap();
        assert_eq!(
            s.terms,
            alloc::vec![
                OpTerm::Blur {
                    sigma: 1.0,
                    gamma: 1e-3,
                    size: 5
                },
                OpTerm::Down { scale: 2 }
            ]
        );
        let s: OpSpec = "blur".parse().unwrap();
        assert_eq!(s.to_string(), "blur:sigma=1,gamma=0.001,size=5");
        assert_eq!(
            "id".parse::<OpSpec>().unwrap().terms,
            alloc::vec![OpTerm::Identity]
        );
    }

    #[test]
    fn display_round_trips() {
        for text in [
            "id",
            "down:s=3",
            "blur:sigma=0.5,gamma=0,size=3+down:s=2+id",
        ] {
            let s: OpSpec = text.parse().unwrap();
            assert_eq!(s.to_string().parse::<OpSpec>().unwrap(), s);
        }
    }

    #[test]
    fn errors_carry_positions() {
        let err = "blur+down:q=2".parse::<OpSpec>().unwrap_err();
        assert_eq!(err, spec_error(10, "unknown down parameter 'q'"));
        let err = "blur:sigma=abc".parse::<OpSpec>().unwrap_err();
        assert!(matches!(err, Error::OpSpec { position: 11, .. }));
        assert!(matches!(
            "id+warp".parse::<OpSpec>(),
            Err(Error::OpSpec { position: 3, .. })
        ));
        assert!(matches!(
            "down".parse::<OpSpec>(),
            Err(Error::OpSpec { position: 0, .. })
        ));
        assert!("blur:size=4".parse::<OpSpec>().is_err());
        assert!("".parse::<OpSpec>().is_err());
    }

    #[test]
    fn builds_with_propagated_dims() {
        let s: OpSpec = "blur+down:s=2+blur:sigma=0.5,size=3".parse().unwrap();
        let op = s.build(Dims::new(16, 8)).unwrap();
        assert_eq!(op.out_dims(), Dims::new(8, 4));
        assert_eq!(s.out_dims(Dims::new(16, 8)).unwrap(), Dims::new(8, 4));
        assert_eq!(s.in_dims_for(Dims::new(8, 4)), Dims::new(16, 8));
        assert!(s.build(Dims::new(15, 8)).is_err());
    }
}
