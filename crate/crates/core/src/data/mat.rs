//! Reader for level-5 MAT-files, limited to what the recordings need:
//! real numeric matrices, plain or zlib-compressed, either byte order.
//! Character, cell, struct and sparse arrays are skipped.

use std::fs;
use std::io::Read;
use std::path::Path;

use flate2::read::ZlibDecoder;

use crate::error::{Error, Result};

const HEADER_LEN: usize = 128;

const MI_INT8: u32 = 1;
const MI_UINT8: u32 = 2;
const MI_INT16: u32 = 3;
const MI_UINT16: u32 = 4;
const MI_INT32: u32 = 5;
const MI_UINT32: u32 = 6;
const MI_SINGLE: u32 = 7;
const MI_DOUBLE: u32 = 9;
const MI_INT64: u32 = 12;
const MI_UINT64: u32 = 13;
const MI_MATRIX: u32 = 14;
const MI_COMPRESSED: u32 = 15;

/// Array classes holding plain numbers (double through uint64).
const NUMERIC_CLASSES: std::ops::RangeInclusive<u32> = 6..=15;

/// A real numeric array. `data` is column-major, as stored.
#[derive(Clone, Debug, PartialEq)]
pub struct MatArray {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl MatArray {
    pub fn rows(&self) -> usize {
        self.dims.first().copied().unwrap_or(0)
    }

    pub fn cols(&self) -> usize {
        self.dims.iter().skip(1).product()
    }
}

pub fn read_mat(path: &Path) -> Result<Vec<MatArray>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_mat(&bytes).map_err(|msg| Error::Format(format!("{}: {msg}", path.display())))
}

/// The array called `name`.
pub fn read_mat_var(path: &Path, name: &str) -> Result<MatArray> {
    read_mat(path)?
        .into_iter()
        .find(|a| a.name == name)
        .ok_or_else(|| Error::Format(format!("{}: no numeric variable {name:?}", path.display())))
}

type Parse<T> = std::result::Result<T, String>;

#[derive(Clone, Copy)]
struct Reader<'a> {
    bytes: &'a [u8],
    big_endian: bool,
}

struct Element<'a> {
    ty: u32,
    payload: &'a [u8],
    /// Offset of the next element.
    next: usize,
}

impl<'a> Reader<'a> {
    fn with(self, bytes: &'a [u8]) -> Self {
        Reader { bytes, ..self }
    }

    fn u32_at(&self, pos: usize) -> Parse<u32> {
        let b: [u8; 4] = self
            .bytes
            .get(pos..pos + 4)
            .ok_or_else(|| format!("truncated at byte {pos}"))?
            .try_into()
            .expect("four bytes");
        Ok(if self.big_endian {
            u32::from_be_bytes(b)
        } else {
            u32::from_le_bytes(b)
        })
    }

    fn element(&self, pos: usize) -> Parse<Element<'a>> {
        let first = self.u32_at(pos)?;
        // Small elements pack the size into the upper half of the type word.
        if first >> 16 != 0 {
            let size = (first >> 16) as usize;
            if size > 4 {
                return Err(format!("small element at byte {pos} claims {size} bytes"));
            }
            return Ok(Element {
                ty: first & 0xffff,
                payload: self.slice(pos + 4, size)?,
                next: pos + 8,
            });
        }
        let size = self.u32_at(pos + 4)? as usize;
        let padded = if first == MI_COMPRESSED { size } else { size.div_ceil(8) * 8 };
        Ok(Element {
            ty: first,
            payload: self.slice(pos + 8, size)?,
            next: pos + 8 + padded,
        })
    }

    fn slice(&self, pos: usize, len: usize) -> Parse<&'a [u8]> {
        pos.checked_add(len)
            .and_then(|end| self.bytes.get(pos..end))
            .ok_or_else(|| format!("element at byte {pos} runs past the end of the data"))
    }

    fn numbers(&self, ty: u32, payload: &[u8]) -> Parse<Vec<f64>> {
        let width = match ty {
            MI_INT8 | MI_UINT8 => 1,
            MI_INT16 | MI_UINT16 => 2,
            MI_INT32 | MI_UINT32 | MI_SINGLE => 4,
            MI_DOUBLE | MI_INT64 | MI_UINT64 => 8,
            other => return Err(format!("unsupported numeric data type {other}")),
        };
        if payload.len() % width != 0 {
            return Err(format!("{} bytes is not a whole number of type-{ty} values", payload.len()));
        }
        let big = self.big_endian;
        let values = payload
            .chunks_exact(width)
            .map(|c| {
                let mut b = [0u8; 8];
                if big {
                    b[..width].copy_from_slice(c);
                    b[..width].reverse();
                } else {
                    b[..width].copy_from_slice(c);
                }
                match ty {
                    MI_INT8 => b[0] as i8 as f64,
                    MI_UINT8 => b[0] as f64,
                    MI_INT16 => i16::from_le_bytes([b[0], b[1]]) as f64,
                    MI_UINT16 => u16::from_le_bytes([b[0], b[1]]) as f64,
                    MI_INT32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
                    MI_UINT32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
                    MI_SINGLE => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
                    MI_DOUBLE => f64::from_le_bytes(b),
                    MI_INT64 => i64::from_le_bytes(b) as f64,
                    _ => u64::from_le_bytes(b) as f64,
                }
            })
            .collect();
        Ok(values)
    }

    fn elements(&self, out: &mut Vec<MatArray>) -> Parse<()> {
        let mut pos = 0;
        while pos + 8 <= self.bytes.len() {
            let el = self.element(pos)?;
            match el.ty {
                MI_COMPRESSED => {
                    let mut inflated = Vec::new();
                    ZlibDecoder::new(el.payload)
                        .read_to_end(&mut inflated)
                        .map_err(|e| format!("compressed element at byte {pos}: {e}"))?;
                    self.with(&inflated).elements(out)?;
                }
                MI_MATRIX => {
                    if let Some(a) = self.with(el.payload).matrix()? {
                        out.push(a);
                    }
                }
                _ => {}
            }
            pos = el.next;
        }
        Ok(())
    }

    /// Decodes the body of a matrix element; `None` for non-numeric arrays.
    fn matrix(&self) -> Parse<Option<MatArray>> {
        if self.bytes.is_empty() {
            return Ok(None);
        }
        let flags = self.element(0)?;
        if flags.payload.len() < 4 {
            return Err("array flags too short".into());
        }
        let class = self.with(flags.payload).u32_at(0)? & 0xff;
        let dims_el = self.element(flags.next)?;
        let dims: Vec<usize> = self
            .numbers(dims_el.ty, dims_el.payload)?
            .into_iter()
            .map(|d| d as usize)
            .collect();
        let name_el = self.element(dims_el.next)?;
        let name = String::from_utf8_lossy(name_el.payload).into_owned();
        if !NUMERIC_CLASSES.contains(&class) {
            return Ok(None);
        }
        let real = self.element(name_el.next)?;
        let data = self.numbers(real.ty, real.payload)?;
        let expected: usize = dims.iter().product();
        if data.len() != expected {
            return Err(format!(
                "variable {name:?} has dimensions {dims:?} but {} values",
                data.len()
            ));
        }
        Ok(Some(MatArray { name, dims, data }))
    }
}

/// Parses a whole MAT-file image.
pub fn parse_mat(bytes: &[u8]) -> Parse<Vec<MatArray>> {
    if bytes.len() < HEADER_LEN {
        return Err("shorter than a MAT-file header".into());
    }
    let big_endian = match &bytes[126..128] {
        b"IM" => false,
        b"MI" => true,
        _ => return Err("not a level-5 MAT-file (bad endian indicator)".into()),
    };
    let mut out = Vec::new();
    Reader {
        bytes: &bytes[HEADER_LEN..],
        big_endian,
    }
    .elements(&mut out)?;
    Ok(out)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use flate2::write::ZlibEncoder;
    use flate2::Compression;
    use std::io::Write;

    fn tag(ty: u32, payload: &[u8]) -> Vec<u8> {
        let mut v = ty.to_le_bytes().to_vec();
        v.extend((payload.len() as u32).to_le_bytes());
        v.extend(payload);
        v.resize(v.len().div_ceil(8) * 8, 0);
        v
    }

    /// Little-endian MAT-file with one double matrix per entry.
    pub(crate) fn write_doubles(vars: &[(&str, usize, usize, &[f64])], compress: bool) -> Vec<u8> {
        let mut out = vec![b' '; 116];
        out.extend([0u8; 8]);
        out.extend([0x00, 0x01]);
        out.extend(b"IM");
        for &(name, rows, cols, data) in vars {
            let mut body = tag(MI_UINT32, &[6, 0, 0, 0, 0, 0, 0, 0]);
            let dims: Vec<u8> = [rows as i32, cols as i32].iter().flat_map(|d| d.to_le_bytes()).collect();
            body.extend(tag(MI_INT32, &dims));
            body.extend(tag(MI_INT8, name.as_bytes()));
            let values: Vec<u8> = data.iter().flat_map(|v| v.to_le_bytes()).collect();
            body.extend(tag(MI_DOUBLE, &values));
            let matrix = tag(MI_MATRIX, &body);
            if compress {
                let mut enc = ZlibEncoder::new(Vec::new(), Compression::default());
                enc.write_all(&matrix).unwrap();
                let z = enc.finish().unwrap();
                out.extend(MI_COMPRESSED.to_le_bytes());
                out.extend((z.len() as u32).to_le_bytes());
                out.extend(z);
            } else {
                out.extend(matrix);
            }
        }
        out
    }

    #[test]
    fn plain_and_compressed_round_trip() {
        let data: Vec<f64> = (0..12).map(|i| i as f64 * 0.5 - 2.0).collect();
        for compress in [false, true] {
            let bytes = write_doubles(&[("x", 4, 3, &data), ("y", 1, 1, &[7.0])], compress);
            let arrays = parse_mat(&bytes).unwrap();
            assert_eq!(arrays.len(), 2);
            assert_eq!(arrays[0].name, "x");
            assert_eq!(arrays[0].dims, vec![4, 3]);
            assert_eq!(arrays[0].data, data);
            assert_eq!((arrays[1].rows(), arrays[1].cols()), (1, 1));
        }
    }

    #[test]
    fn truncation_is_an_error() {
        let bytes = write_doubles(&[("x", 2, 2, &[1.0, 2.0, 3.0, 4.0])], false);
        assert!(parse_mat(&bytes[..bytes.len() - 9]).is_err());
        assert!(parse_mat(&bytes[..100]).is_err());
    }
}
