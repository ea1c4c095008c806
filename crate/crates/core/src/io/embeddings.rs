use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use mn_autodiff::Matrix;

use super::{io_err, IoError};

pub const EMBEDDING_MAGIC: &[u8; 4] = b"MNEM";
pub const EMBEDDING_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmbeddingFormat {
    /// `node_id` followed by one column per dimension, 17 significant digits.
    Tsv,
    /// `MNEM`, version u32, rows u64, cols u64, then row-major f64, all
    /// little-endian.
    Binary,
}

impl EmbeddingFormat {
    /// `.bin` selects the binary layout, anything else TSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("bin") => Self::Binary,
            _ => Self::Tsv,
        }
    }
}

pub fn write_matrix_bin(m: &Matrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + 8 * m.as_slice().len());
    out.extend_from_slice(EMBEDDING_MAGIC);
    out.extend_from_slice(&EMBEDDING_VERSION.to_le_bytes());
    out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    for v in m.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn read_matrix_bin(bytes: &[u8], path: &Path) -> Result<Matrix, IoError> {
    let invalid = |msg: String| IoError::Invalid {
        path: path.to_path_buf(),
        msg,
    };
    if bytes.len() < 24 || &bytes[..4] != EMBEDDING_MAGIC {
        return Err(IoError::Magic {
            path: path.to_path_buf(),
            what: "matrix",
        });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != EMBEDDING_VERSION {
        return Err(IoError::Version {
            path: path.to_path_buf(),
            got: version,
            want: EMBEDDING_VERSION,
        });
    }
    let rows = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
    let want = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| invalid(format!("header claims {rows}x{cols}")))?;
    let body = &bytes[24..];
    if body.len() != want {
        return Err(invalid(format!(
            "header claims {rows}x{cols} ({want} bytes), body has {} bytes",
            body.len()
        )));
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Matrix::from_vec(rows, cols, data).expect("length checked"))
}

/// Writes one row per node; row `i` belongs to node `i` of the exported type.
pub fn save_embeddings(m: &Matrix, path: &Path) -> Result<(), IoError> {
    match EmbeddingFormat::from_path(path) {
        EmbeddingFormat::Binary => fs::write(path, write_matrix_bin(m)).map_err(io_err(path)),
        EmbeddingFormat::Tsv => {
            let file = fs::File::create(path).map_err(io_err(path))?;
            let mut w = BufWriter::new(file);
            for i in 0..m.rows() {
                write!(w, "{i}").map_err(io_err(path))?;
                for v in m.row(i) {
                    write!(w, "\t{v:.16e}").map_err(io_err(path))?;
                }
                writeln!(w).map_err(io_err(path))?;
            }
            w.flush().map_err(io_err(path))
        }
    }
}

pub fn load_embeddings(path: &Path) -> Result<Matrix, IoError> {
    match EmbeddingFormat::from_path(path) {
        EmbeddingFormat::Binary => read_matrix_bin(&fs::read(path).map_err(io_err(path))?, path),
        EmbeddingFormat::Tsv => {
            let text = fs::read_to_string(path).map_err(io_err(path))?;
            let mut rows: Vec<(usize, Vec<f64>)> = Vec::new();
            for (ln, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let parse_err = |msg: String| IoError::Parse {
                    path: path.to_path_buf(),
                    line: ln + 1,
                    msg,
                };
                let mut fields = line.split('\t');
                let id_field = fields.next().unwrap_or("");
                let id: usize = id_field
                    .trim()
                    .parse()
                    .map_err(|_| parse_err(format!("bad node id `{id_field}`")))?;
                let values = fields
                    .map(|f| {
                        f.trim()
                            .parse::<f64>()
                            .map_err(|_| parse_err(format!("non-numeric value `{f}`")))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                if let Some((_, first)) = rows.first() {
                    if first.len() != values.len() {
                        return Err(parse_err(format!(
                            "expected {} columns, found {}",
                            first.len(),
                            values.len()
                        )));
                    }
                }
                rows.push((id, values));
            }
            let n = rows.len();
            let cols = rows.first().map_or(0, |r| r.1.len());
            let mut data = vec![0.0; n * cols];
            let mut seen = vec![false; n];
            for (id, values) in rows {
                if id >= n || seen[id] {
                    return Err(IoError::Invalid {
                        path: path.to_path_buf(),
                        msg: format!("node ids must be a permutation of 0..{n}, offending id {id}"),
                    });
                }
                seen[id] = true;
                data[id * cols..(id + 1) * cols].copy_from_slice(&values);
            }
            Ok(Matrix::from_vec(n, cols, data).expect("sized"))
        }
    }
}
