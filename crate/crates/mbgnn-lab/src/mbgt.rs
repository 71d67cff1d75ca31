//! MBGT raw tensor files: magic bytes `MBGT`, little-endian u32 rank, u32
//! dims[rank], then a float32 payload in row-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use mbgnn_core::DenseMatrix;

use crate::LabError;

const MAGIC: &[u8; 4] = b"MBGT";

pub fn write_tensor(path: &Path, dims: &[usize], data: &[f64]) -> Result<(), LabError> {
    let expected: usize = dims.iter().product();
    if expected != data.len() {
        return Err(LabError::Format(format!(
            "tensor dims {dims:?} do not match {} values",
            data.len()
        )));
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(dims.len() as u32).to_le_bytes())?;
    for &d in dims {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    for &v in data {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_tensor(path: &Path) -> Result<(Vec<usize>, Vec<f32>), LabError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(LabError::Format(format!(
            "{}: bad magic {magic:?}",
            path.display()
        )));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let rank = u32::from_le_bytes(word) as usize;
    if rank > 8 {
        return Err(LabError::Format(format!("{}: rank {rank} too large", path.display())));
    }
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        r.read_exact(&mut word)?;
        dims.push(u32::from_le_bytes(word) as usize);
    }
    let len: usize = dims.iter().product();
    let mut payload = vec![0f32; len];
    let mut buf = [0u8; 4];
    for v in payload.iter_mut() {
        r.read_exact(&mut buf)?;
        *v = f32::from_le_bytes(buf);
    }
    // Trailing bytes mean a malformed file.
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(LabError::Format(format!(
            "{}: trailing bytes after payload",
            path.display()
        )));
    }
    Ok((dims, payload))
}

pub fn write_matrix(path: &Path, m: &DenseMatrix) -> Result<(), LabError> {
    write_tensor(path, &[m.rows(), m.cols()], m.as_slice())
}

pub fn read_matrix(path: &Path) -> Result<DenseMatrix, LabError> {
    let (dims, payload) = read_tensor(path)?;
    if dims.len() != 2 {
        return Err(LabError::Format(format!(
            "{}: expected rank 2, got {:?}",
            path.display(),
            dims
        )));
    }
    let data: Vec<f64> = payload.iter().map(|&v| v as f64).collect();
    DenseMatrix::from_vec(dims[0], dims[1], data)
        .map_err(|e| LabError::Format(format!("{}: {e}", path.display())))
}

/// Labels round-trip as a rank-1 tensor; values must be whole numbers.
pub fn write_labels(path: &Path, labels: &[usize]) -> Result<(), LabError> {
    let data: Vec<f64> = labels.iter().map(|&y| y as f64).collect();
    write_tensor(path, &[labels.len()], &data)
}

pub fn read_labels(path: &Path) -> Result<Vec<usize>, LabError> {
    let (dims, payload) = read_tensor(path)?;
    if dims.len() != 1 {
        return Err(LabError::Format(format!(
            "{}: expected rank 1 labels, got {:?}",
            path.display(),
            dims
        )));
    }
    payload
        .iter()
        .map(|&v| {
            if v < 0.0 || v.fract() != 0.0 {
                Err(LabError::Format(format!(
                    "{}: non-integer label {v}",
                    path.display()
                )))
            } else {
                Ok(v as usize)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use mbgnn_core::SeededRng;
    use tempfile::tempdir;

    #[test]
    fn tensor_round_trip_is_bit_identical() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("t.mbgt");
        let mut rng = SeededRng::new(1);
        let m = rng.gaussian_matrix(7, 5, 3.0).unwrap();
        write_matrix(&path, &m).unwrap();
        let (dims, payload) = read_tensor(&path).unwrap();
        assert_eq!(dims, vec![7, 5]);
        // The payload is f32; compare bit patterns against the cast source.
        for (&p, &v) in payload.iter().zip(m.as_slice()) {
            assert_eq!(p.to_bits(), (v as f32).to_bits());
        }
        // And a second write of the same data is byte-identical.
        let path2 = dir.path().join("t2.mbgt");
        write_matrix(&path2, &m).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn labels_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("y.mbgt");
        let labels = vec![0usize, 3, 1, 7, 2];
        write_labels(&path, &labels).unwrap();
        assert_eq!(read_labels(&path).unwrap(), labels);
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.mbgt");
        std::fs::write(&path, b"NOPE\x01\x00\x00\x00\x01\x00\x00\x00\x00\x00\x80\x3f").unwrap();
        assert!(matches!(read_tensor(&path), Err(LabError::Format(_))));
    }

    #[test]
    fn truncated_payload_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("short.mbgt");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"MBGT");
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&1f32.to_le_bytes()); // 1 of 4 values
        std::fs::write(&path, bytes).unwrap();
        assert!(read_tensor(&path).is_err());
    }
}
