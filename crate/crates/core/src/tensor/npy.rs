//! NPY (format 1.0) reading and writing for little-endian `f4`/`f8` arrays in
//! C order. Version 2.0 headers are accepted on read.

use thiserror::Error;

use super::{Scalar, Tensor};

const MAGIC: &[u8; 6] = b"\x93NUMPY";
/// Hard cap on declared element counts so a hostile header cannot request a
/// huge allocation before the payload length is checked.
const MAX_ELEMENTS: usize = 1 << 31;

#[derive(Debug, Error, PartialEq)]
pub enum NpyError {
    #[error("not an NPY file: {0}")]
    Magic(&'static str),
    #[error("unsupported NPY version {0}.{1}")]
    Version(u8, u8),
    #[error("truncated input: {0}")]
    Truncated(&'static str),
    #[error("malformed header: {0}")]
    Header(String),
    #[error("unsupported dtype {0:?}; expected '<f4' or '<f8'")]
    Dtype(String),
    #[error("fortran-ordered arrays are not supported")]
    FortranOrder,
    #[error("payload holds {got} bytes, header declares {expected}")]
    Payload { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub enum NpyData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NpyArray {
    pub shape: Vec<usize>,
    pub data: NpyData,
}

impl NpyArray {
    pub fn into_tensor<T: Scalar>(self) -> Tensor<T> {
        let values: Vec<T> = match self.data {
            NpyData::F32(v) => v.into_iter().map(|x| T::lit(f64::from(x))).collect(),
            NpyData::F64(v) => v.into_iter().map(|x| T::from_f64(x).unwrap_or(T::nan())).collect(),
        };
        Tensor::from_vec(&self.shape, values).expect("decoder checked the element count")
    }
}

pub fn encode<T: Scalar>(tensor: &Tensor<T>) -> Vec<u8> {
    let shape = match tensor.shape() {
        [n] => format!("({n},)"),
        dims => format!(
            "({})",
            dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(", ")
        ),
    };
    let mut header = format!(
        "{{'descr': '{}', 'fortran_order': False, 'shape': {shape}, }}",
        T::DESCR
    );
    // Pad so magic + version + length + header is a multiple of 64.
    let unpadded = MAGIC.len() + 2 + 2 + header.len() + 1;
    header.push_str(&" ".repeat((64 - unpadded % 64) % 64));
    header.push('\n');

    let width = std::mem::size_of::<T>();
    let mut out = Vec::with_capacity(10 + header.len() + tensor.len() * width);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(header.len() as u16).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for v in tensor.values() {
        let x = v.to_f64().unwrap_or(f64::NAN);
        if width == 4 {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        } else {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<NpyArray, NpyError> {
    if bytes.len() < 8 {
        return Err(NpyError::Truncated("preamble"));
    }
    if &bytes[..6] != MAGIC {
        return Err(NpyError::Magic("bad magic string"));
    }
    let (major, minor) = (bytes[6], bytes[7]);
    let (header_len, start) = match major {
        1 => {
            let raw = bytes.get(8..10).ok_or(NpyError::Truncated("header length"))?;
            (u16::from_le_bytes([raw[0], raw[1]]) as usize, 10usize)
        }
        2 => {
            let raw = bytes.get(8..12).ok_or(NpyError::Truncated("header length"))?;
            (u32::from_le_bytes([raw[0], raw[1], raw[2], raw[3]]) as usize, 12)
        }
        _ => return Err(NpyError::Version(major, minor)),
    };
    let end = start
        .checked_add(header_len)
        .ok_or(NpyError::Truncated("header"))?;
    let header = bytes.get(start..end).ok_or(NpyError::Truncated("header"))?;
    let header = std::str::from_utf8(header).map_err(|_| NpyError::Header("header is not UTF-8".into()))?;
    let parsed = parse_header(header)?;
    if parsed.fortran_order {
        return Err(NpyError::FortranOrder);
    }
    let count = parsed
        .shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .filter(|&c| c <= MAX_ELEMENTS)
        .ok_or_else(|| NpyError::Header("shape too large".into()))?;
    let width = if parsed.descr == "<f4" { 4 } else { 8 };
    let payload = &bytes[end..];
    let expected = count * width;
    if payload.len() != expected {
        return Err(NpyError::Payload {
            expected,
            got: payload.len(),
        });
    }
    let data = if width == 4 {
        NpyData::F32(
            payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
        )
    } else {
        NpyData::F64(
            payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect(),
        )
    };
    Ok(NpyArray {
        shape: parsed.shape,
        data,
    })
}

pub fn decode_tensor<T: Scalar>(bytes: &[u8]) -> Result<Tensor<T>, NpyError> {
    decode(bytes).map(NpyArray::into_tensor)
}

struct Header {
    descr: String,
    fortran_order: bool,
    shape: Vec<usize>,
}

/// Parses the Python dict literal used by NPY headers.
fn parse_header(text: &str) -> Result<Header, NpyError> {
    let mut p = Cursor { s: text.as_bytes(), pos: 0 };
    p.ws();
    p.expect(b'{')?;
    let (mut descr, mut fortran, mut shape) = (None, None, None);
    loop {
        p.ws();
        if p.eat(b'}') {
            break;
        }
        let key = p.string()?;
        p.ws();
        p.expect(b':')?;
        p.ws();
        match key.as_str() {
            "descr" => descr = Some(p.string()?),
            "fortran_order" => fortran = Some(p.boolean()?),
            "shape" => shape = Some(p.tuple()?),
            other => return Err(NpyError::Header(format!("unexpected key {other:?}"))),
        }
        p.ws();
        if !p.eat(b',') {
            p.ws();
            p.expect(b'}')?;
            break;
        }
    }
    p.ws();
    if p.pos != p.s.len() {
        return Err(NpyError::Header("trailing bytes after header dict".into()));
    }
    let descr = descr.ok_or_else(|| NpyError::Header("missing 'descr'".into()))?;
    if descr != "<f4" && descr != "<f8" {
        return Err(NpyError::Dtype(descr));
    }
    Ok(Header {
        descr,
        fortran_order: fortran.ok_or_else(|| NpyError::Header("missing 'fortran_order'".into()))?,
        shape: shape.ok_or_else(|| NpyError::Header("missing 'shape'".into()))?,
    })
}

struct Cursor<'a> {
    s: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn ws(&mut self) {
        while self.pos < self.s.len() && self.s[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.s.get(self.pos) == Some(&c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: u8) -> Result<(), NpyError> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(NpyError::Header(format!(
                "expected '{}' at offset {}",
                c as char, self.pos
            )))
        }
    }

    fn string(&mut self) -> Result<String, NpyError> {
        let quote = match self.s.get(self.pos) {
            Some(q @ (b'\'' | b'"')) => *q,
            _ => return Err(NpyError::Header(format!("expected string at offset {}", self.pos))),
        };
        self.pos += 1;
        let start = self.pos;
        while self.pos < self.s.len() && self.s[self.pos] != quote {
            self.pos += 1;
        }
        if self.pos >= self.s.len() {
            return Err(NpyError::Header("unterminated string".into()));
        }
        let out = String::from_utf8_lossy(&self.s[start..self.pos]).into_owned();
        self.pos += 1;
        Ok(out)
    }

    fn boolean(&mut self) -> Result<bool, NpyError> {
        for (word, value) in [(&b"True"[..], true), (&b"False"[..], false)] {
            if self.s[self.pos..].starts_with(word) {
                self.pos += word.len();
                return Ok(value);
            }
        }
        Err(NpyError::Header(format!("expected True/False at offset {}", self.pos)))
    }

    fn tuple(&mut self) -> Result<Vec<usize>, NpyError> {
        self.expect(b'(')?;
        let mut dims = Vec::new();
        loop {
            self.ws();
            if self.eat(b')') {
                return Ok(dims);
            }
            let start = self.pos;
            while self.pos < self.s.len() && self.s[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
            let digits = std::str::from_utf8(&self.s[start..self.pos]).expect("ascii digits");
            let dim = digits
                .parse::<usize>()
                .map_err(|_| NpyError::Header(format!("bad dimension at offset {start}")))?;
            dims.push(dim);
            self.ws();
            if !self.eat(b',') {
                self.ws();
                self.expect(b')')?;
                return Ok(dims);
            }
        }
    }
}
