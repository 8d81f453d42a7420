//! Parameter blobs: little-endian `f64` values back to back, plus a text
//! index with one `name<TAB>shape<TAB>byte_offset` line per tensor. Shapes
//! are written as `dim x dim` (e.g. `20x128`); a scalar is written as `-`.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Result, TensorError};
use crate::params::ParamStore;
use crate::tensor::Tensor;

const INDEX_HEADER: &str = "# name\tshape\tbyte_offset";

fn format_shape(shape: &[usize]) -> String {
    if shape.is_empty() {
        "-".to_string()
    } else {
        shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
    }
}

fn parse_shape(s: &str) -> Result<Vec<usize>> {
    if s == "-" {
        return Ok(Vec::new());
    }
    s.split('x')
        .map(|d| {
            d.parse::<usize>()
                .map_err(|_| TensorError::Checkpoint(format!("bad shape `{s}`")))
        })
        .collect()
}

/// Writes every parameter of `store` in insertion order.
pub fn write_checkpoint(store: &ParamStore, index_path: &Path, blob_path: &Path) -> Result<()> {
    let mut index = String::from(INDEX_HEADER);
    index.push('\n');
    let mut blob = BufWriter::new(fs::File::create(blob_path)?);
    let mut offset = 0usize;
    for (name, p) in store.iter() {
        if name.contains(['\t', '\n']) {
            return Err(TensorError::Checkpoint(format!("invalid name `{name}`")));
        }
        index.push_str(&format!("{name}\t{}\t{offset}\n", format_shape(p.value.shape())));
        for v in p.value.data() {
            blob.write_all(&v.to_le_bytes())?;
        }
        offset += p.value.len() * 8;
    }
    blob.flush()?;
    fs::write(index_path, index)?;
    Ok(())
}

/// Reads a checkpoint written by [`write_checkpoint`]. Every parameter comes
/// back trainable.
pub fn read_checkpoint(index_path: &Path, blob_path: &Path) -> Result<ParamStore> {
    let index = fs::read_to_string(index_path)?;
    let blob = fs::read(blob_path)?;
    let mut store = ParamStore::new();
    for (lineno, line) in index.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [name, shape, offset] = fields[..] else {
            return Err(TensorError::Checkpoint(format!(
                "index line {}: expected 3 fields",
                lineno + 1
            )));
        };
        let shape = parse_shape(shape)?;
        let offset: usize = offset
            .parse()
            .map_err(|_| TensorError::Checkpoint(format!("bad offset `{offset}`")))?;
        let count: usize = shape.iter().product();
        let end = offset + count * 8;
        if end > blob.len() {
            return Err(TensorError::Checkpoint(format!(
                "`{name}` extends past the end of the blob ({end} > {})",
                blob.len()
            )));
        }
        let data = blob[offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        store.insert(name, Tensor::new(shape, data)?);
    }
    Ok(store)
}
