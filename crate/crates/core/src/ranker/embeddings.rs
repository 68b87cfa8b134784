use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_EMBEDDING_DIM: usize = 300;
/// Half-width of the uniform range for tokens missing from the file.
pub const OOV_SCALE: f64 = 0.05;

/// Word vectors for a fixed vocabulary, one row per token.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    vocab: BTreeMap<String, usize>,
    matrix: Tensor,
    /// Tokens whose row came from the file.
    found: usize,
}

impl EmbeddingTable {
    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    pub fn index(&self, token: &str) -> Option<usize> {
        self.vocab.get(token).copied()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.matrix.row(i)
    }

    pub fn vector(&self, token: &str) -> Option<&[f64]> {
        self.index(token).map(|i| self.row(i))
    }

    pub fn matrix(&self) -> &Tensor {
        &self.matrix
    }

    pub fn found(&self) -> usize {
        self.found
    }
}

/// Builds the table for `vocabulary`. Every row starts seeded-uniform in
/// `[−0.05, 0.05]` (drawn in vocabulary order); rows for tokens present in
/// the whitespace-separated text file at `path` are then overwritten.
pub fn load_embeddings(path: Option<&Path>, vocabulary: &[String], dim: usize, seed: u64) -> Result<EmbeddingTable> {
    let mut vocab = BTreeMap::new();
    for tok in vocabulary {
        let next = vocab.len();
        vocab.entry(tok.clone()).or_insert(next);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..vocab.len() * dim)
        .map(|_| rng.gen_range(-OOV_SCALE..=OOV_SCALE))
        .collect();
    let mut matrix = Tensor::matrix(vocab.len(), dim, data)?;
    let mut found = 0;

    if let Some(path) = path {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let mut fields = line.split_whitespace();
            let Some(token) = fields.next() else { continue };
            let values: Vec<f64> = fields
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::parse(path, i + 1, format!("bad vector component: {e}")))?;
            if values.len() != dim {
                return Err(Error::parse(
                    path,
                    i + 1,
                    format!("expected {dim} components, found {}", values.len()),
                ));
            }
            if let Some(&row) = vocab.get(token) {
                matrix.data_mut()[row * dim..(row + 1) * dim].copy_from_slice(&values);
                found += 1;
            }
        }
    }
    log::info!("embeddings: {found} of {} vocabulary tokens found in file", vocab.len());
    Ok(EmbeddingTable { vocab, matrix, found })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn vocab(ts: &[&str]) -> Vec<String> {
        ts.iter().map(|t| t.to_string()).collect()
    }

    #[test]
    fn known_rows_copied_unknown_rows_bounded() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "a 0.5 -1.5 2").unwrap();
        writeln!(f, "other 1 1 1").unwrap();
        let t = load_embeddings(Some(f.path()), &vocab(&["a", "zzz"]), 3, 1).unwrap();
        assert_eq!(t.vector("a").unwrap(), &[0.5, -1.5, 2.0]);
        assert!(t.vector("zzz").unwrap().iter().all(|v| v.abs() <= OOV_SCALE));
        assert_eq!(t.found(), 1);
    }

    #[test]
    fn seeded() {
        let v = vocab(&["x", "y", "z"]);
        assert_eq!(load_embeddings(None, &v, 4, 9).unwrap(), load_embeddings(None, &v, 4, 9).unwrap());
        assert_ne!(load_embeddings(None, &v, 4, 9).unwrap(), load_embeddings(None, &v, 4, 10).unwrap());
    }

    #[test]
    fn dimension_mismatch_names_line() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "a 1 2 3").unwrap();
        writeln!(f, "b 1 2").unwrap();
        let err = load_embeddings(Some(f.path()), &vocab(&["a"]), 3, 0).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }
}
