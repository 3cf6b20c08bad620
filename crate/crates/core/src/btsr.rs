//! BTSR binary tensor files.
//!
//! Layout, all integers little-endian:
//!
//! | offset | size      | field                          |
//! |--------|-----------|--------------------------------|
//! | 0      | 4         | magic `BTSR`                   |
//! | 4      | 1         | version, currently 1           |
//! | 5      | 1         | rank (1..=8)                   |
//! | 6      | 6         | reserved, zero                 |
//! | 12     | rank × 8  | extents as `u64`               |
//! | ...    | numel × 4 | payload, `f32` row-major       |

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Tensor, MAX_RANK};

pub const MAGIC: [u8; 4] = *b"BTSR";
pub const VERSION: u8 = 1;
const HEADER_LEN: usize = 12;

pub fn encode(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + t.rank() * 8 + t.len() * 4);
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(t.rank() as u8);
    out.extend_from_slice(&[0u8; 6]);
    for &e in t.shape() {
        out.extend_from_slice(&(e as u64).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::TruncatedPayload {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let found: [u8; 4] = bytes[0..4].try_into().unwrap();
    if found != MAGIC {
        return Err(Error::BadMagic {
            expected: MAGIC,
            found,
        });
    }
    if bytes[4] != VERSION {
        return Err(Error::UnsupportedVersion(bytes[4]));
    }
    let rank = bytes[5] as usize;
    if rank > MAX_RANK {
        return Err(Error::RankOverflow(rank));
    }
    if rank == 0 {
        return Err(Error::EmptyShape);
    }
    let shape_end = HEADER_LEN + rank * 8;
    if bytes.len() < shape_end {
        return Err(Error::TruncatedPayload {
            expected: shape_end,
            found: bytes.len(),
        });
    }
    let shape: Vec<usize> = bytes[HEADER_LEN..shape_end]
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let numel = shape
        .iter()
        .try_fold(1usize, |a, &e| a.checked_mul(e))
        .ok_or_else(|| Error::InvalidShape {
            shape: shape.clone(),
            reason: "element count overflows".into(),
        })?;
    let payload = &bytes[shape_end..];
    let expected = numel * 4;
    if payload.len() != expected {
        return Err(Error::TruncatedPayload {
            expected,
            found: payload.len(),
        });
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::new(shape, data)
}

pub fn read(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

pub fn write(t: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(t)).map_err(|e| Error::io(path, e))
}
