use std::io::{BufRead, Read, Write};

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SEMB";
const VERSION: u32 = 1;

/// Row-major float32 matrix of spectrum embeddings with a (run_id, scan_id)
/// row index.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub dim: usize,
    pub data: Vec<f32>,
    pub rows: Vec<(String, String)>,
}

impl EmbeddingMatrix {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            data: Vec::new(),
            rows: Vec::new(),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn push(&mut self, run_id: &str, scan_id: &str, values: &[f32]) -> Result<()> {
        if values.len() != self.dim {
            return Err(Error::Format(format!("row has {} values, expected {}", values.len(), self.dim)));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("embedding for {run_id}/{scan_id}")));
        }
        self.data.extend_from_slice(values);
        self.rows.push((run_id.to_string(), scan_id.to_string()));
        Ok(())
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_vectors(&self) -> Vec<Vec<f32>> {
        (0..self.n_rows()).map(|i| self.row(i).to_vec()).collect()
    }
}

/// Writes the binary matrix: magic, version, n_rows, dim, then float32 data,
/// all little-endian. The row index goes to a separate sidecar.
pub fn write_embeddings<W: Write>(mut w: W, m: &EmbeddingMatrix) -> Result<()> {
    let n = u32::try_from(m.n_rows()).map_err(|_| Error::Format("too many rows".into()))?;
    let dim = u32::try_from(m.dim).map_err(|_| Error::Format("dimension too large".into()))?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&n.to_le_bytes())?;
    w.write_all(&dim.to_le_bytes())?;
    for v in &m.data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Reads the binary matrix. Row identifiers are left empty (`""`) unless
/// filled from the sidecar with [`read_row_index`].
pub fn read_embeddings<R: Read>(mut r: R) -> Result<EmbeddingMatrix> {
    let mut header = [0u8; 16];
    r.read_exact(&mut header)
        .map_err(|_| Error::Format("file shorter than the 16-byte header".into()))?;
    if &header[0..4] != MAGIC {
        return Err(Error::Format("bad magic, expected SEMB".into()));
    }
    let word = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap());
    if word(4) != VERSION {
        return Err(Error::Format(format!("unsupported version {}", word(4))));
    }
    let n = word(8) as usize;
    let dim = word(12) as usize;
    let expected = n
        .checked_mul(dim)
        .and_then(|x| x.checked_mul(4))
        .ok_or_else(|| Error::Format("header sizes overflow".into()))?;
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    if body.len() != expected {
        return Err(Error::Format(format!(
            "header declares {n}x{dim} floats ({expected} bytes) but body has {} bytes",
            body.len()
        )));
    }
    let data: Vec<f32> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Format("non-finite embedding value".into()));
    }
    Ok(EmbeddingMatrix {
        dim,
        data,
        rows: vec![(String::new(), String::new()); n],
    })
}

const INDEX_HEADER: &str = "run_id\tscan_id";

pub fn write_row_index<W: Write>(mut w: W, m: &EmbeddingMatrix) -> Result<()> {
    writeln!(w, "{INDEX_HEADER}")?;
    for (run, scan) in &m.rows {
        writeln!(w, "{run}\t{scan}")?;
    }
    Ok(())
}

/// Fills `m.rows` from a sidecar; the row count must match.
pub fn read_row_index<R: BufRead>(r: R, m: &mut EmbeddingMatrix) -> Result<()> {
    let mut rows = Vec::with_capacity(m.n_rows());
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if i == 0 {
            if line.trim_end() != INDEX_HEADER {
                return Err(Error::Format(format!("unexpected row index header {line:?}")));
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let (run, scan) = line
            .split_once('\t')
            .ok_or_else(|| Error::Format(format!("row index line {} lacks a tab", i + 1)))?;
        rows.push((run.to_string(), scan.to_string()));
    }
    if rows.len() != m.n_rows() {
        return Err(Error::Format(format!(
            "row index has {} rows but matrix has {}",
            rows.len(),
            m.n_rows()
        )));
    }
    m.rows = rows;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_matrix_is_header_only() {
        let m = EmbeddingMatrix::new(512);
        let mut buf = Vec::new();
        write_embeddings(&mut buf, &m).unwrap();
        assert_eq!(buf.len(), 16);
        let back = read_embeddings(buf.as_slice()).unwrap();
        assert_eq!(back.dim, 512);
        assert_eq!(back.n_rows(), 0);
    }

    #[test]
    fn two_by_three_byte_layout() {
        let mut m = EmbeddingMatrix::new(3);
        m.push("r", "a", &[1.0, -2.5, 0.125]).unwrap();
        m.push("r", "b", &[3.0e-8, 1.0e6, -0.0]).unwrap();
        let mut buf = Vec::new();
        write_embeddings(&mut buf, &m).unwrap();
        assert_eq!(buf.len(), 16 + 24);
        // Frozen byte fixture for the header and first value.
        assert_eq!(&buf[..20], &[
            b'S', b'E', b'M', b'B', 1, 0, 0, 0, 2, 0, 0, 0, 3, 0, 0, 0, 0x00, 0x00, 0x80, 0x3f
        ]);
        let mut back = read_embeddings(buf.as_slice()).unwrap();
        let mut idx = Vec::new();
        write_row_index(&mut idx, &m).unwrap();
        read_row_index(idx.as_slice(), &mut back).unwrap();
        assert_eq!(back.rows, m.rows);
        let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back.data), bits(&m.data));
    }

    #[test]
    fn truncated_and_bad_magic() {
        let mut m = EmbeddingMatrix::new(4);
        m.push("r", "a", &[1.0; 4]).unwrap();
        let mut buf = Vec::new();
        write_embeddings(&mut buf, &m).unwrap();
        assert!(matches!(read_embeddings(&buf[..buf.len() - 2]), Err(Error::Format(_))));
        assert!(matches!(read_embeddings(&buf[..10]), Err(Error::Format(_))));
        buf[0] = b'X';
        assert!(matches!(read_embeddings(buf.as_slice()), Err(Error::Format(_))));
    }
}
