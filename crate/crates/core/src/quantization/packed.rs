//! `.pqw` packed quantized-weight files.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "PQW1"            4 bytes (magic "PQW" + version '1')
//! m                 u32
//! d                 u16
//! q[0..d]           d × f64
//! payload           ceil(m * bits / 8) bytes, bits = ceil(log2 d)
//! ```
//!
//! Index `j` occupies bits `j*bits .. (j+1)*bits` of the payload, least
//! significant bit first within each byte.

use std::fs;
use std::path::Path;

use super::{QuantLevels, QuantizedWeights};
use crate::error::{Error, Result};

pub const PQW_MAGIC: &[u8; 4] = b"PQW1";

/// Header bytes before the level values.
pub const PQW_HEADER_FIXED_LEN: usize = 4 + 4 + 2;

/// `ceil(log2 d)`.
pub fn bits_per_index(d: usize) -> usize {
    debug_assert!(d >= 2);
    (usize::BITS - (d - 1).leading_zeros()) as usize
}

pub fn packed_payload_len(m: usize, d: usize) -> usize {
    (m * bits_per_index(d)).div_ceil(8)
}

pub fn pack_quantized(w: &QuantizedWeights) -> Vec<u8> {
    let levels = w.levels().values();
    let d = levels.len();
    let m = w.m();
    let bits = bits_per_index(d);
    let mut out = Vec::with_capacity(PQW_HEADER_FIXED_LEN + 8 * d + packed_payload_len(m, d));
    out.extend_from_slice(PQW_MAGIC);
    out.extend_from_slice(&(m as u32).to_le_bytes());
    out.extend_from_slice(&(d as u16).to_le_bytes());
    for q in levels {
        out.extend_from_slice(&q.to_le_bytes());
    }

    let start = out.len();
    out.resize(start + packed_payload_len(m, d), 0);
    let payload = &mut out[start..];
    for (j, &index) in w.indices().iter().enumerate() {
        for b in 0..bits {
            if (index >> b) & 1 == 1 {
                let bit = j * bits + b;
                payload[bit / 8] |= 1 << (bit % 8);
            }
        }
    }
    out
}

fn take<'a>(bytes: &mut &'a [u8], n: usize, field: &str) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(Error::format(
            field,
            format!("truncated: need {n} bytes, {} remain", bytes.len()),
        ));
    }
    let (head, tail) = bytes.split_at(n);
    *bytes = tail;
    Ok(head)
}

pub fn unpack_quantized(bytes: &[u8]) -> Result<QuantizedWeights> {
    let mut rest = bytes;
    let magic = take(&mut rest, 4, "magic")?;
    if &magic[..3] != b"PQW" {
        return Err(Error::format("magic", format!("expected \"PQW\", found {:?}", &magic[..3])));
    }
    if magic[3] != PQW_MAGIC[3] {
        return Err(Error::format(
            "version",
            format!("unsupported version byte {:#04x}", magic[3]),
        ));
    }
    let m = u32::from_le_bytes(take(&mut rest, 4, "m")?.try_into().unwrap()) as usize;
    let d = u16::from_le_bytes(take(&mut rest, 2, "d")?.try_into().unwrap()) as usize;
    if d < 2 {
        return Err(Error::format("d", format!("need at least 2 levels, found {d}")));
    }
    let q: Vec<f64> = take(&mut rest, 8 * d, "levels")?
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let levels = QuantLevels::new(q).map_err(|e| Error::format("levels", e.to_string()))?;

    let bits = bits_per_index(d);
    let payload_len = packed_payload_len(m, d);
    let payload = take(&mut rest, payload_len, "payload")?;
    if !rest.is_empty() {
        return Err(Error::format(
            "payload",
            format!("{} unexpected trailing bytes", rest.len()),
        ));
    }

    let mut indices = Vec::with_capacity(m);
    for j in 0..m {
        let mut index = 0u16;
        for b in 0..bits {
            let bit = j * bits + b;
            if (payload[bit / 8] >> (bit % 8)) & 1 == 1 {
                index |= 1 << b;
            }
        }
        if index as usize >= d {
            return Err(Error::format(
                "payload",
                format!("weight {j} has level index {index} but d = {d}"),
            ));
        }
        indices.push(index);
    }
    QuantizedWeights::new(indices, levels)
}

pub fn write_pqw(path: impl AsRef<Path>, w: &QuantizedWeights) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, pack_quantized(w)).map_err(|e| Error::io(path, e))
}

pub fn read_pqw(path: impl AsRef<Path>) -> Result<QuantizedWeights> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    unpack_quantized(&bytes)
}
