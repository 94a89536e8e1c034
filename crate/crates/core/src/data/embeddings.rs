//! Pretrained embedding files: `token SP f1 … fd` per line, UTF-8.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Std of the normal used for tokens missing from a file.
pub const FALLBACK_INIT_STD: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingFile {
    pub dim: usize,
    pub vectors: HashMap<String, Vec<f64>>,
}

impl EmbeddingFile {
    pub fn from_rows(dim: usize, rows: Vec<(String, Vec<f64>)>) -> Result<Self> {
        if let Some((t, v)) = rows.iter().find(|(_, v)| v.len() != dim) {
            return Err(Error::Config(format!(
                "vector for {t} has {} values, expected {dim}",
                v.len()
            )));
        }
        Ok(EmbeddingFile {
            dim,
            vectors: rows.into_iter().collect(),
        })
    }
}

pub fn load_embeddings(path: &Path, expected_dim: usize) -> Result<EmbeddingFile> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut vectors = HashMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let bad = |message: String| Error::Format {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let mut parts = line.split(' ').filter(|p| !p.is_empty());
        let Some(token) = parts.next() else { continue };
        let values = parts
            .map(|p| {
                p.parse::<f64>()
                    .map_err(|e| bad(format!("bad float {p:?}: {e}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if values.len() != expected_dim {
            return Err(bad(format!(
                "expected {expected_dim} values, found {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(bad("non-finite value".into()));
        }
        vectors.insert(token.to_string(), values);
    }
    Ok(EmbeddingFile {
        dim: expected_dim,
        vectors,
    })
}

pub fn write_embeddings(path: &Path, rows: &[(String, Vec<f64>)]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    for (token, v) in rows {
        let nums: Vec<String> = v.iter().map(|x| x.to_string()).collect();
        writeln!(w, "{token} {}", nums.join(" ")).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Builds a `[tokens.len(), dim]` table. Rows come from `file` when the
/// token is present, otherwise from `N(0, 0.1²)` drawn in token order from
/// `rng`. Returns the table and the number of rows found in the file.
pub fn embedding_table<R: Rng + ?Sized>(
    tokens: &[String],
    dim: usize,
    file: Option<&EmbeddingFile>,
    rng: &mut R,
) -> Result<(Tensor, usize)> {
    if let Some(f) = file {
        if f.dim != dim {
            return Err(Error::Config(format!(
                "embedding file has dim {}, model expects {dim}",
                f.dim
            )));
        }
    }
    let normal = Normal::new(0.0, FALLBACK_INIT_STD).expect("valid std");
    let mut data = Vec::with_capacity(tokens.len() * dim);
    let mut hits = 0;
    for t in tokens {
        match file.and_then(|f| f.vectors.get(t)) {
            Some(v) => {
                hits += 1;
                data.extend_from_slice(v);
            }
            None => data.extend((0..dim).map(|_| normal.sample(rng))),
        }
    }
    Ok((Tensor::new(vec![tokens.len(), dim], data)?, hits))
}
