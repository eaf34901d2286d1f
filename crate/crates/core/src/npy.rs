//! NPY v1.0 tensor files, restricted to little-endian `f32`/`f64`, C order and
//! rank 1 or 2.
//!
//! Layout: the magic `\x93NUMPY`, version bytes `01 00`, a little-endian `u16`
//! header length, then an ASCII dict such as
//! `{'descr': '<f8', 'fortran_order': False, 'shape': (3, 2), }` padded with
//! spaces and terminated by `\n` so the payload starts on a 64-byte boundary.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::spectral::RepresentationSet;

pub const MAGIC: &[u8; 6] = b"\x93NUMPY";
const PREAMBLE_LEN: usize = 10;
const ALIGN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn descr(self) -> &'static str {
        match self {
            Dtype::F32 => "<f4",
            Dtype::F64 => "<f8",
        }
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

/// Payload of a tensor file in its stored precision.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> Dtype {
        match self {
            TensorData::F32(_) => Dtype::F32,
            TensorData::F64(_) => Dtype::F64,
        }
    }

    /// Values promoted to `f64`.
    pub fn to_f64(&self) -> Vec<f64> {
        match self {
            TensorData::F32(v) => v.iter().map(|&x| f64::from(x)).collect(),
            TensorData::F64(v) => v.clone(),
        }
    }
}

/// Dtype and shape read from a header, without the payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorHeader {
    pub dtype: Dtype,
    pub shape: Vec<usize>,
}

impl TensorHeader {
    pub fn element_count(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn payload_len(&self) -> usize {
        self.element_count() * self.dtype.size()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let shape = match self.shape.as_slice() {
            [n] => format!("({n},)"),
            dims => format!(
                "({})",
                dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(", ")
            ),
        };
        let mut dict = format!(
            "{{'descr': '{}', 'fortran_order': False, 'shape': {shape}, }}",
            self.dtype.descr()
        );
        let unpadded = PREAMBLE_LEN + dict.len() + 1;
        let pad = (ALIGN - unpadded % ALIGN) % ALIGN;
        dict.extend(std::iter::repeat_n(' ', pad));
        dict.push('\n');

        let mut out = Vec::with_capacity(PREAMBLE_LEN + dict.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&[1, 0]);
        out.extend_from_slice(&(dict.len() as u16).to_le_bytes());
        out.extend_from_slice(dict.as_bytes());
        out
    }

    /// Parses the preamble and header dict from the start of `bytes`,
    /// returning the header and the payload offset.
    pub fn parse(bytes: &[u8]) -> Result<(Self, usize)> {
        if bytes.len() < PREAMBLE_LEN {
            return Err(Error::MalformedHeader("file shorter than npy preamble".into()));
        }
        if &bytes[..6] != MAGIC {
            return Err(Error::MalformedHeader("missing \\x93NUMPY magic".into()));
        }
        if bytes[6..8] != [1, 0] {
            return Err(Error::MalformedHeader(format!(
                "unsupported npy version {}.{}",
                bytes[6], bytes[7]
            )));
        }
        let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
        let end = PREAMBLE_LEN + header_len;
        if bytes.len() < end {
            return Err(Error::MalformedHeader(format!(
                "header declares {header_len} bytes but file has {}",
                bytes.len() - PREAMBLE_LEN
            )));
        }
        let text = std::str::from_utf8(&bytes[PREAMBLE_LEN..end])
            .ok()
            .filter(|t| t.is_ascii())
            .ok_or_else(|| Error::MalformedHeader("header is not ASCII".into()))?;
        if !text.ends_with('\n') {
            return Err(Error::MalformedHeader("header not terminated by newline".into()));
        }
        Ok((parse_dict(text.trim_end())?, end))
    }
}

/// Parses the restricted Python dict literal numpy writes.
fn parse_dict(text: &str) -> Result<TensorHeader> {
    let bad = |msg: &str| Error::MalformedHeader(format!("{msg} in {text:?}"));
    let inner = text
        .strip_prefix('{')
        .and_then(|t| t.strip_suffix('}'))
        .ok_or_else(|| bad("header is not a dict"))?;

    let mut descr = None;
    let mut fortran = None;
    let mut shape = None;
    let mut rest = inner.trim_start();
    while !rest.is_empty() {
        let (key, after) = take_quoted(rest).ok_or_else(|| bad("expected quoted key"))?;
        let after = after.trim_start().strip_prefix(':').ok_or_else(|| bad("expected ':'"))?.trim_start();
        let after = match key {
            "descr" => {
                let (v, a) = take_quoted(after).ok_or_else(|| bad("expected quoted descr"))?;
                descr = Some(v);
                a
            }
            "fortran_order" => {
                if let Some(a) = after.strip_prefix("False") {
                    fortran = Some(false);
                    a
                } else if let Some(a) = after.strip_prefix("True") {
                    fortran = Some(true);
                    a
                } else {
                    return Err(bad("fortran_order must be True or False"));
                }
            }
            "shape" => {
                let close = after.find(')').ok_or_else(|| bad("unterminated shape"))?;
                let tuple = after.strip_prefix('(').ok_or_else(|| bad("shape must be a tuple"))?;
                let dims = tuple[..close - 1]
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| s.parse::<usize>().map_err(|_| bad("invalid shape dimension")))
                    .collect::<Result<Vec<_>>>()?;
                shape = Some(dims);
                &after[close + 1..]
            }
            other => return Err(bad(&format!("unexpected key {other:?}"))),
        };
        let after = after.trim_start();
        rest = match after.strip_prefix(',') {
            Some(a) => a.trim_start(),
            None if after.is_empty() => after,
            None => return Err(bad("expected ',' between entries")),
        };
    }

    let descr = descr.ok_or_else(|| bad("missing descr"))?;
    let dtype = match descr {
        "<f4" => Dtype::F32,
        "<f8" => Dtype::F64,
        "|O" | "O" | "<O" => return Err(bad("pickled object arrays are not supported")),
        other => return Err(bad(&format!("unsupported descr {other:?}"))),
    };
    if fortran.ok_or_else(|| bad("missing fortran_order"))? {
        return Err(bad("fortran_order arrays are not supported"));
    }
    let shape = shape.ok_or_else(|| bad("missing shape"))?;
    if shape.is_empty() || shape.len() > 2 {
        return Err(Error::ShapeMismatch(format!(
            "rank {} tensors are not supported, expected rank 1 or 2",
            shape.len()
        )));
    }
    Ok(TensorHeader { dtype, shape })
}

fn take_quoted(s: &str) -> Option<(&str, &str)> {
    let quote = s.chars().next().filter(|c| *c == '\'' || *c == '"')?;
    let body = &s[1..];
    let end = body.find(quote)?;
    Some((&body[..end], &body[end + 1..]))
}

/// An in-memory NPY tensor of rank 1 or 2.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    shape: Vec<usize>,
    data: TensorData,
}

impl TensorFile {
    pub fn new(shape: Vec<usize>, data: TensorData) -> Result<Self> {
        if shape.is_empty() || shape.len() > 2 {
            return Err(Error::ShapeMismatch(format!("rank {} is not supported", shape.len())));
        }
        let count: usize = shape.iter().product();
        if count != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} holds {count} elements, got {}",
                data.len()
            )));
        }
        Ok(TensorFile { shape, data })
    }

    pub fn matrix_f64(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], TensorData::F64(data))
    }

    pub fn matrix_f32(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        Self::new(vec![rows, cols], TensorData::F32(data))
    }

    pub fn vector_f64(data: Vec<f64>) -> Self {
        TensorFile {
            shape: vec![data.len()],
            data: TensorData::F64(data),
        }
    }

    pub fn vector_f32(data: Vec<f32>) -> Self {
        TensorFile {
            shape: vec![data.len()],
            data: TensorData::F32(data),
        }
    }

    pub fn dtype(&self) -> Dtype {
        self.data.dtype()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn header(&self) -> TensorHeader {
        TensorHeader {
            dtype: self.dtype(),
            shape: self.shape.clone(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.header().to_bytes();
        out.reserve(self.data.len() * self.dtype().size());
        match &self.data {
            TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, offset) = TensorHeader::parse(bytes)?;
        let payload = &bytes[offset..];
        let expected = header.payload_len();
        if payload.len() < expected {
            return Err(Error::TruncatedPayload {
                expected,
                actual: payload.len(),
            });
        }
        if payload.len() > expected {
            return Err(Error::ShapeMismatch(format!(
                "shape {:?} needs {expected} payload bytes, file has {}",
                header.shape,
                payload.len()
            )));
        }
        let data = match header.dtype {
            Dtype::F32 => TensorData::F32(
                payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            Dtype::F64 => TensorData::F64(
                payload
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
        };
        Ok(TensorFile {
            shape: header.shape,
            data,
        })
    }

    /// Interprets a rank-2 tensor as token representations, promoting to `f64`.
    pub fn to_representation_set(&self) -> Result<RepresentationSet> {
        match self.shape.as_slice() {
            &[rows, cols] => RepresentationSet::new(rows, cols, self.data.to_f64()),
            other => Err(Error::ShapeMismatch(format!(
                "representations must be rank 2, got shape {other:?}"
            ))),
        }
    }

    /// Interprets a rank-1 tensor as a sequence of values, promoting to `f64`.
    pub fn to_vector(&self) -> Result<Vec<f64>> {
        match self.shape.as_slice() {
            [_] => Ok(self.data.to_f64()),
            other => Err(Error::ShapeMismatch(format!("expected rank 1, got shape {other:?}"))),
        }
    }
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<TensorFile> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    TensorFile::from_bytes(&bytes).map_err(|e| Error::at_path(path, e))
}

/// Reads only the header of a tensor file.
pub fn read_tensor_header(path: impl AsRef<Path>) -> Result<TensorHeader> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut preamble = [0u8; PREAMBLE_LEN];
    reader.read_exact(&mut preamble).map_err(|_| {
        Error::at_path(path, Error::MalformedHeader("file shorter than npy preamble".into()))
    })?;
    let header_len = u16::from_le_bytes([preamble[8], preamble[9]]) as usize;
    let mut buf = preamble.to_vec();
    buf.resize(PREAMBLE_LEN + header_len, 0);
    reader
        .read_exact(&mut buf[PREAMBLE_LEN..])
        .map_err(|_| Error::at_path(path, Error::MalformedHeader("truncated header".into())))?;
    TensorHeader::parse(&buf)
        .map(|(h, _)| h)
        .map_err(|e| Error::at_path(path, e))
}

/// Writes a tensor through a temporary file and an atomic rename.
pub fn write_tensor(tensor: &TensorFile, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &tensor.to_bytes())
}
