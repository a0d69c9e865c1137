//! Reading and writing the numpy `.npy` format.
//!
//! Only what the engine exchanges with the extractor adapter is supported:
//! little-endian float32/float64 2-D feature arrays and 1-D integer label
//! arrays, C order. Files are written as format version 1.0; versions 2.0
//! and 3.0 are accepted on read since they differ only in the header length
//! field.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: [u8; 6] = *b"\x93NUMPY";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
    I8,
    I16,
    I32,
    I64,
    U8,
    U16,
    U32,
    U64,
}

impl Dtype {
    fn parse(descr: &str) -> Result<Self> {
        let (endian, code) = descr.split_at(1.min(descr.len()));
        // Single-byte types are written with '|'.
        let little = matches!(endian, "<" | "|");
        if !little {
            return Err(Error::Npy(format!("unsupported byte order in '{descr}'")));
        }
        Ok(match code {
            "f4" => Dtype::F32,
            "f8" => Dtype::F64,
            "i1" => Dtype::I8,
            "i2" => Dtype::I16,
            "i4" => Dtype::I32,
            "i8" => Dtype::I64,
            "u1" => Dtype::U8,
            "u2" => Dtype::U16,
            "u4" => Dtype::U32,
            "u8" => Dtype::U64,
            _ => return Err(Error::Npy(format!("unsupported dtype '{descr}'"))),
        })
    }

    pub fn descr(self) -> &'static str {
        match self {
            Dtype::F32 => "<f4",
            Dtype::F64 => "<f8",
            Dtype::I8 => "|i1",
            Dtype::I16 => "<i2",
            Dtype::I32 => "<i4",
            Dtype::I64 => "<i8",
            Dtype::U8 => "|u1",
            Dtype::U16 => "<u2",
            Dtype::U32 => "<u4",
            Dtype::U64 => "<u8",
        }
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::I8 | Dtype::U8 => 1,
            Dtype::I16 | Dtype::U16 => 2,
            Dtype::F32 | Dtype::I32 | Dtype::U32 => 4,
            Dtype::F64 | Dtype::I64 | Dtype::U64 => 8,
        }
    }

    pub fn is_float(self) -> bool {
        matches!(self, Dtype::F32 | Dtype::F64)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Header {
    pub dtype: Dtype,
    pub fortran_order: bool,
    pub shape: Vec<usize>,
}

impl Header {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn read<R: Read>(reader: &mut R) -> Result<Self> {
        let mut magic = [0u8; 6];
        read_exact(reader, &mut magic)?;
        if magic != MAGIC {
            return Err(Error::Npy("bad magic string".into()));
        }
        let mut version = [0u8; 2];
        read_exact(reader, &mut version)?;
        let header_len = match version[0] {
            1 => {
                let mut b = [0u8; 2];
                read_exact(reader, &mut b)?;
                u16::from_le_bytes(b) as usize
            }
            2 | 3 => {
                let mut b = [0u8; 4];
                read_exact(reader, &mut b)?;
                u32::from_le_bytes(b) as usize
            }
            v => return Err(Error::Npy(format!("unsupported format version {v}"))),
        };
        let mut raw = vec![0u8; header_len];
        read_exact(reader, &mut raw)?;
        let text = std::str::from_utf8(&raw).map_err(|_| Error::Npy("header is not utf-8".into()))?;
        parse_dict(text)
    }

    fn to_bytes(&self) -> Vec<u8> {
        let shape = match self.shape.len() {
            1 => format!("({},)", self.shape[0]),
            _ => format!(
                "({})",
                self.shape.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(", ")
            ),
        };
        let fortran = if self.fortran_order { "True" } else { "False" };
        let mut dict = format!(
            "{{'descr': '{}', 'fortran_order': {}, 'shape': {}, }}",
            self.dtype.descr(),
            fortran,
            shape
        );
        // Pad so that the data starts on a 64-byte boundary; the header ends in '\n'.
        let unpadded = MAGIC.len() + 2 + 2 + dict.len() + 1;
        let pad = (64 - unpadded % 64) % 64;
        dict.extend(std::iter::repeat_n(' ', pad));
        dict.push('\n');

        let mut out = Vec::with_capacity(10 + dict.len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&[1, 0]);
        out.extend_from_slice(&(dict.len() as u16).to_le_bytes());
        out.extend_from_slice(dict.as_bytes());
        out
    }
}

fn read_exact<R: Read>(reader: &mut R, buf: &mut [u8]) -> Result<()> {
    reader
        .read_exact(buf)
        .map_err(|e| Error::Npy(format!("truncated file: {e}")))
}

/// Parses the python-literal header dictionary.
fn parse_dict(text: &str) -> Result<Header> {
    let body = text
        .trim()
        .strip_prefix('{')
        .and_then(|t| t.strip_suffix('}'))
        .ok_or_else(|| Error::Npy(format!("header is not a dict: {text}")))?;

    let descr = value_after(body, "descr")?;
    let descr = descr
        .split(['\'', '"'])
        .nth(1)
        .ok_or_else(|| Error::Npy("descr is not a string".into()))?;
    let dtype = Dtype::parse(descr)?;

    let fortran = value_after(body, "fortran_order")?;
    let fortran_order = if fortran.starts_with("True") {
        true
    } else if fortran.starts_with("False") {
        false
    } else {
        return Err(Error::Npy("fortran_order is not a bool".into()));
    };

    let shape = value_after(body, "shape")?;
    let inner = shape
        .strip_prefix('(')
        .and_then(|s| s.split(')').next())
        .ok_or_else(|| Error::Npy("shape is not a tuple".into()))?;
    let shape = inner
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.trim_end_matches('L').parse::<usize>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| Error::Npy(format!("bad shape ({inner})")))?;

    Ok(Header {
        dtype,
        fortran_order,
        shape,
    })
}

fn value_after<'a>(body: &'a str, key: &str) -> Result<&'a str> {
    for quote in ['\'', '"'] {
        let pat = format!("{quote}{key}{quote}");
        if let Some(pos) = body.find(&pat) {
            let rest = body[pos + pat.len()..].trim_start();
            let rest = rest
                .strip_prefix(':')
                .ok_or_else(|| Error::Npy(format!("missing ':' after {key}")))?;
            return Ok(rest.trim_start());
        }
    }
    Err(Error::Npy(format!("header has no '{key}' key")))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

/// Reads just the header of a file.
pub fn read_header(path: &Path) -> Result<Header> {
    Header::read(&mut open(path)?)
}

/// Reads a 2-D float array, widening float32 to float64.
pub fn read_matrix(path: &Path) -> Result<(Header, Vec<f64>)> {
    let mut reader = open(path)?;
    let header = Header::read(&mut reader)?;
    if header.fortran_order {
        return Err(Error::Npy("fortran order is not supported".into()));
    }
    if header.shape.len() != 2 {
        return Err(Error::ShapeMismatch {
            expected: "2-D array".into(),
            found: format!("{}-D array", header.shape.len()),
        });
    }
    if !header.dtype.is_float() {
        return Err(Error::Npy(format!(
            "feature arrays must be float32 or float64, found {}",
            header.dtype.descr()
        )));
    }
    let raw = read_payload(&mut reader, &header)?;
    let values = match header.dtype {
        Dtype::F32 => raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        _ => raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    };
    Ok((header, values))
}

/// Reads a 1-D integer array.
pub fn read_labels(path: &Path) -> Result<Vec<i64>> {
    let mut reader = open(path)?;
    let header = Header::read(&mut reader)?;
    if header.shape.len() != 1 {
        return Err(Error::ShapeMismatch {
            expected: "1-D label array".into(),
            found: format!("{:?}", header.shape),
        });
    }
    if header.dtype.is_float() {
        return Err(Error::Npy("label arrays must hold integers".into()));
    }
    let raw = read_payload(&mut reader, &header)?;
    let size = header.dtype.size();
    let mut labels = Vec::with_capacity(header.len());
    for c in raw.chunks_exact(size) {
        let v = match header.dtype {
            Dtype::I8 => c[0] as i8 as i64,
            Dtype::U8 => c[0] as i64,
            Dtype::I16 => i16::from_le_bytes([c[0], c[1]]) as i64,
            Dtype::U16 => u16::from_le_bytes([c[0], c[1]]) as i64,
            Dtype::I32 => i32::from_le_bytes(c.try_into().unwrap()) as i64,
            Dtype::U32 => u32::from_le_bytes(c.try_into().unwrap()) as i64,
            Dtype::I64 => i64::from_le_bytes(c.try_into().unwrap()),
            Dtype::U64 => {
                let v = u64::from_le_bytes(c.try_into().unwrap());
                i64::try_from(v).map_err(|_| Error::Npy(format!("label {v} too large")))?
            }
            Dtype::F32 | Dtype::F64 => unreachable!(),
        };
        labels.push(v);
    }
    Ok(labels)
}

fn read_payload<R: Read>(reader: &mut R, header: &Header) -> Result<Vec<u8>> {
    let expected = header.len() * header.dtype.size();
    let mut raw = Vec::with_capacity(expected);
    reader
        .read_to_end(&mut raw)
        .map_err(|e| Error::Npy(format!("read failed: {e}")))?;
    if raw.len() != expected {
        return Err(Error::Npy(format!(
            "payload has {} bytes, header implies {expected}",
            raw.len()
        )));
    }
    Ok(raw)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn write_all(path: &Path, header: &Header, payload: impl Iterator<Item = u8>) -> Result<()> {
    let mut w = create(path)?;
    let bytes: Vec<u8> = header.to_bytes().into_iter().chain(payload).collect();
    w.write_all(&bytes)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// Writes a row-major `rows × cols` float64 array.
pub fn write_matrix_f64(path: &Path, rows: usize, cols: usize, data: &[f64]) -> Result<()> {
    assert_eq!(data.len(), rows * cols);
    let header = Header {
        dtype: Dtype::F64,
        fortran_order: false,
        shape: vec![rows, cols],
    };
    write_all(path, &header, data.iter().flat_map(|v| v.to_le_bytes()))
}

/// Writes a row-major `rows × cols` float32 array.
pub fn write_matrix_f32(path: &Path, rows: usize, cols: usize, data: &[f32]) -> Result<()> {
    assert_eq!(data.len(), rows * cols);
    let header = Header {
        dtype: Dtype::F32,
        fortran_order: false,
        shape: vec![rows, cols],
    };
    write_all(path, &header, data.iter().flat_map(|v| v.to_le_bytes()))
}

pub fn write_labels(path: &Path, labels: &[i64]) -> Result<()> {
    let header = Header {
        dtype: Dtype::I64,
        fortran_order: false,
        shape: vec![labels.len()],
    };
    write_all(path, &header, labels.iter().flat_map(|v| v.to_le_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let h = Header {
            dtype: Dtype::F32,
            fortran_order: false,
            shape: vec![3, 2],
        };
        let bytes = h.to_bytes();
        assert_eq!(bytes.len() % 64, 0);
        assert_eq!(&bytes[..8], b"\x93NUMPY\x01\x00");
        assert_eq!(*bytes.last().unwrap(), b'\n');
        let parsed = Header::read(&mut bytes.as_slice()).unwrap();
        assert_eq!(parsed, h);
    }

    #[test]
    fn parses_numpy_written_header() {
        // Verbatim header as produced by numpy.save for np.zeros((3, 2), '<f8').
        let dict = "{'descr': '<f8', 'fortran_order': False, 'shape': (3, 2), }";
        let h = parse_dict(dict).unwrap();
        assert_eq!(h.dtype, Dtype::F64);
        assert_eq!(h.shape, vec![3, 2]);

        let one_d = parse_dict("{'descr': '<i8', 'fortran_order': False, 'shape': (5,), }").unwrap();
        assert_eq!(one_d.shape, vec![5]);
    }

    #[test]
    fn rejects_big_endian() {
        assert!(parse_dict("{'descr': '>f8', 'fortran_order': False, 'shape': (1, 1), }").is_err());
    }

    #[test]
    fn labels_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("l.npy");
        write_labels(&path, &[0, 5, 999, 3]).unwrap();
        assert_eq!(read_labels(&path).unwrap(), vec![0, 5, 999, 3]);
    }

    #[test]
    fn truncated_payload_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.npy");
        write_matrix_f64(&path, 2, 2, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(read_matrix(&path), Err(Error::Npy(_))));
    }
}
