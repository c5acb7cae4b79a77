//! Middlebury `.flo` interchange format.
//!
//! Layout (little-endian): `f32` magic 202021.25, `i32` width, `i32` height,
//! then `width * height` interleaved `(u, v)` `f32` pairs in row-major order.

use std::fs;
use std::path::Path;

use super::FlowField;
use crate::error::{Error, Result};

pub const FLO_MAGIC: f32 = 202021.25;
/// Samples with a larger magnitude are read as unknown flow.
pub const FLO_UNKNOWN_THRESHOLD: f32 = 1e9;
/// Value written in both channels of an invalid pixel.
pub const FLO_UNKNOWN_VALUE: f32 = 1e10;

const HEADER_LEN: usize = 12;

pub fn read_flow_flo(path: impl AsRef<Path>) -> Result<FlowField> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < HEADER_LEN {
        return Err(Error::Length {
            path: path.to_path_buf(),
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let word = |i: usize| -> [u8; 4] { bytes[i..i + 4].try_into().unwrap() };
    let magic = f32::from_le_bytes(word(0));
    if magic != FLO_MAGIC {
        return Err(Error::format(path, format!("bad magic {magic}")));
    }
    let width = i32::from_le_bytes(word(4));
    let height = i32::from_le_bytes(word(8));
    if width < 1 || height < 1 {
        return Err(Error::format(path, format!("bad dimensions {width}x{height}")));
    }
    let (width, height) = (width as usize, height as usize);
    let n = width
        .checked_mul(height)
        .ok_or_else(|| Error::format(path, "dimensions overflow"))?;
    let expected = HEADER_LEN + n * 8;
    if bytes.len() < expected {
        return Err(Error::Length {
            path: path.to_path_buf(),
            expected,
            found: bytes.len(),
        });
    }

    let mut u = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    let mut valid = Vec::with_capacity(n);
    for px in bytes[HEADER_LEN..expected].chunks_exact(8) {
        let a = f32::from_le_bytes(px[0..4].try_into().unwrap());
        let b = f32::from_le_bytes(px[4..8].try_into().unwrap());
        let known =
            a.is_finite() && b.is_finite() && a.abs() <= FLO_UNKNOWN_THRESHOLD && b.abs() <= FLO_UNKNOWN_THRESHOLD;
        if known {
            u.push(a);
            v.push(b);
        } else {
            u.push(0.0);
            v.push(0.0);
        }
        valid.push(known);
    }
    FlowField::from_parts(width, height, u, v, valid)
}

pub fn write_flow_flo(flow: &FlowField, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(flow)).map_err(|e| Error::io(path, e))
}

pub(crate) fn encode(flow: &FlowField) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + flow.len() * 8);
    out.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    out.extend_from_slice(&(flow.width() as i32).to_le_bytes());
    out.extend_from_slice(&(flow.height() as i32).to_le_bytes());
    for ((&a, &b), &ok) in flow.u().iter().zip(flow.v()).zip(flow.valid()) {
        let (a, b) = if ok {
            (a, b)
        } else {
            (FLO_UNKNOWN_VALUE, FLO_UNKNOWN_VALUE)
        };
        out.extend_from_slice(&a.to_le_bytes());
        out.extend_from_slice(&b.to_le_bytes());
    }
    out
}
