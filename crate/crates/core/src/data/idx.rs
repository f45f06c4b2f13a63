use std::path::Path;

use crate::error::{Error, Result};

pub const IDX_LABEL_MAGIC: u32 = 0x0000_0801;
pub const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxHeader {
    pub magic: u32,
    pub dims: Vec<usize>,
}

impl IdxHeader {
    pub fn header_len(&self) -> usize {
        4 + 4 * self.dims.len()
    }

    pub fn payload_len(&self) -> usize {
        self.dims.iter().product()
    }
}

fn read_u32(bytes: &[u8], offset: usize, file: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| {
            Error::format(
                file,
                format!("truncated header at offset {offset}: need 4 bytes, file has {}", bytes.len()),
            )
        })
}

/// Parses an unsigned-byte IDX buffer with the given magic, returning the
/// header and the payload. `file` names the source in error messages.
pub fn parse_idx<'a>(bytes: &'a [u8], expected_magic: u32, file: &str) -> Result<(IdxHeader, &'a [u8])> {
    let magic = read_u32(bytes, 0, file)?;
    if magic != expected_magic {
        return Err(Error::format(
            file,
            format!("bad magic 0x{magic:08x} at offset 0, expected 0x{expected_magic:08x}"),
        ));
    }
    let rank = (magic & 0xff) as usize;
    let mut dims = Vec::with_capacity(rank);
    for i in 0..rank {
        dims.push(read_u32(bytes, 4 + 4 * i, file)? as usize);
    }
    let header = IdxHeader { magic, dims };
    let start = header.header_len();
    let expected = header.payload_len();
    let actual = bytes.len() - start;
    if actual < expected {
        return Err(Error::format(
            file,
            format!(
                "truncated payload at offset {}: dimensions {:?} need {expected} bytes, found {actual}",
                bytes.len(),
                header.dims
            ),
        ));
    }
    if actual > expected {
        return Err(Error::format(
            file,
            format!(
                "dimension mismatch at offset {}: dimensions {:?} need {expected} bytes, found {actual}",
                start + expected,
                header.dims
            ),
        ));
    }
    Ok((header, &bytes[start..]))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// `(count, rows, cols, pixels)` from an IDX image file.
pub fn read_idx_images(path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let bytes = read_file(path)?;
    let name = path.display().to_string();
    let (header, payload) = parse_idx(&bytes, IDX_IMAGE_MAGIC, &name)?;
    let [n, rows, cols] = header.dims[..] else {
        unreachable!("image magic fixes the rank at 3")
    };
    Ok((n, rows, cols, payload.to_vec()))
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = read_file(path)?;
    let name = path.display().to_string();
    let (_, payload) = parse_idx(&bytes, IDX_LABEL_MAGIC, &name)?;
    Ok(payload.to_vec())
}

/// Big-endian IDX encoding of unsigned bytes.
pub fn encode_idx(magic: u32, dims: &[usize], payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 4 * dims.len() + payload.len());
    out.extend_from_slice(&magic.to_be_bytes());
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(payload);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_a_small_image_file() {
        let bytes = encode_idx(IDX_IMAGE_MAGIC, &[2, 2, 3], &[0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11]);
        let (h, p) = parse_idx(&bytes, IDX_IMAGE_MAGIC, "x").unwrap();
        assert_eq!(h.dims, vec![2, 2, 3]);
        assert_eq!(h.header_len(), 16);
        assert_eq!(p.len(), 12);
        assert_eq!(&bytes[..8], &[0, 0, 8, 3, 0, 0, 0, 2]);
    }

    #[test]
    fn errors_name_the_file_and_offset() {
        let good = encode_idx(IDX_LABEL_MAGIC, &[4], &[1, 2, 3, 4]);
        match parse_idx(&good[..10], IDX_LABEL_MAGIC, "labels.idx").unwrap_err() {
            Error::Format { field, message } => {
                assert_eq!(field, "labels.idx");
                assert!(message.contains("offset 10"), "{message}");
            }
            e => panic!("{e:?}"),
        }
        let err = parse_idx(&good, IDX_IMAGE_MAGIC, "labels.idx").unwrap_err();
        assert!(err.to_string().contains("offset 0"));
        let mut long = good.clone();
        long.push(0);
        assert!(parse_idx(&long, IDX_LABEL_MAGIC, "f").unwrap_err().to_string().contains("mismatch"));
        assert!(parse_idx(&good[..3], IDX_LABEL_MAGIC, "f").is_err());
    }

    #[test]
    fn missing_files_are_io_errors() {
        assert!(matches!(read_idx_labels(Path::new("")), Err(Error::Io { .. })));
    }
}
