//! `MPF1` matrix files: magic, little-endian `u32` rows and cols, then
//! row-major little-endian `f32` values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numcore::Matrix;

pub const MAGIC: &[u8; 4] = b"MPF1";
const HEADER_LEN: usize = 12;

pub fn encode(m: &Matrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * m.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    for &v in m.as_slice() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Matrix> {
    let (rows, cols) = parse_header(bytes, path)?;
    let expected = HEADER_LEN + 4 * rows * cols;
    if bytes.len() != expected {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!("{rows}x{cols} needs {expected} bytes, file has {}", bytes.len()),
        });
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect();
    Matrix::from_vec(rows, cols, data)
}

fn parse_header(bytes: &[u8], path: &Path) -> Result<(usize, usize)> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: "missing MPF1 header".into(),
        });
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    Ok((rows, cols))
}

pub fn write(path: &Path, m: &Matrix) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&encode(m)).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<Matrix> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

/// Reads only the `(rows, cols)` header.
pub fn read_shape(path: &Path) -> Result<(usize, usize)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut header = [0u8; HEADER_LEN];
    BufReader::new(file)
        .read_exact(&mut header)
        .map_err(|_| Error::Format {
            path: path.to_path_buf(),
            reason: "file shorter than the MPF1 header".into(),
        })?;
    parse_header(&header, path)
}

/// Rounds every entry through `f32`, the on-disk precision.
pub fn quantize(m: &Matrix) -> Matrix {
    m.map(|v| f64::from(v as f32))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout_is_bit_exact() {
        let m = Matrix::from_rows(&[vec![1.0, -2.5], vec![0.5, 3.0]]).unwrap();
        let bytes = encode(&m);
        assert_eq!(&bytes[..4], b"MPF1");
        assert_eq!(&bytes[4..8], &2u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &2u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &1.0f32.to_le_bytes());
        assert_eq!(&bytes[16..20], &(-2.5f32).to_le_bytes());
        assert_eq!(&bytes[24..28], &3.0f32.to_le_bytes());
        assert_eq!(bytes.len(), 28);
    }

    #[test]
    fn rejects_truncated_and_foreign_files() {
        let p = Path::new("x.mpf");
        assert!(decode(b"NOPE\0\0\0\0\0\0\0\0", p).is_err());
        let mut bytes = encode(&Matrix::zeros(2, 3));
        bytes.pop();
        assert!(matches!(decode(&bytes, p), Err(Error::Format { .. })));
    }

    proptest! {
        #[test]
        fn quantized_matrices_round_trip_bitwise(
            rows in 1usize..6,
            cols in 1usize..6,
            seed in any::<u64>(),
        ) {
            let mut rng = crate::numcore::Rng::new(seed);
            let data = (0..rows * cols).map(|_| rng.normal() * 100.0).collect();
            let m = quantize(&Matrix::from_vec(rows, cols, data).unwrap());
            let back = decode(&encode(&m), Path::new("mem")).unwrap();
            prop_assert_eq!(
                back.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                m.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }
    }
}
