use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ParamSet, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub shape: Vec<usize>,
    /// Byte offset into the `.bin` file.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub tensors: BTreeMap<String, ManifestEntry>,
}

fn paths(dir: &Path, stem: &str) -> (PathBuf, PathBuf) {
    (dir.join(format!("{stem}.bin")), dir.join(format!("{stem}.json")))
}

/// Writes `stem.bin` (little-endian f64 values, parameters in insertion
/// order) and `stem.json` (name → shape, byte offset).
pub fn save_params(params: &ParamSet, dir: &Path, stem: &str) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (bin, json) = paths(dir, stem);
    let mut bytes = Vec::with_capacity(params.num_scalars() * 8);
    let mut manifest = Manifest::default();
    for (name, t) in params.iter() {
        manifest.tensors.insert(
            name.to_string(),
            ManifestEntry {
                shape: t.shape().to_vec(),
                offset: bytes.len(),
            },
        );
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(&bin, bytes).map_err(|e| Error::io(&bin, e))?;
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&json, text + "\n").map_err(|e| Error::io(&json, e))?;
    Ok(())
}

/// Overwrites every tensor of `params` with the checkpointed value of the
/// same name. Names and shapes must match exactly.
pub fn load_params(params: &mut ParamSet, dir: &Path, stem: &str) -> Result<()> {
    let (bin, json) = paths(dir, stem);
    let text = fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    if manifest.tensors.len() != params.len() {
        return Err(Error::Config(format!(
            "checkpoint {} has {} tensors, model has {}",
            json.display(),
            manifest.tensors.len(),
            params.len()
        )));
    }
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let name = params.name(id).to_string();
        let entry = manifest
            .tensors
            .get(&name)
            .ok_or_else(|| Error::Config(format!("checkpoint lacks tensor {name:?}")))?;
        let n: usize = entry.shape.iter().product();
        let end = entry.offset + 8 * n;
        if end > bytes.len() {
            return Err(Error::Config(format!("tensor {name:?} runs past end of {}", bin.display())));
        }
        let data = bytes[entry.offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        params.set(id, Tensor::new(entry.shape.clone(), data)?)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = ParamSet::new();
        p.add_uniform("b", &[3], 1.0, &mut rng);
        p.add_uniform("a", &[2, 2], 1.0, &mut rng);
        save_params(&p, dir.path(), "m").unwrap();

        let mut q = ParamSet::new();
        q.add_zeros("b", &[3]);
        q.add_zeros("a", &[2, 2]);
        load_params(&mut q, dir.path(), "m").unwrap();
        assert_eq!(p.bit_snapshot(), q.bit_snapshot());

        let manifest: Manifest =
            serde_json::from_str(&fs::read_to_string(dir.path().join("m.json")).unwrap()).unwrap();
        assert_eq!(manifest.tensors["a"].offset, 24);
        assert_eq!(manifest.tensors["a"].shape, vec![2, 2]);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut p = ParamSet::new();
        p.add_zeros("w", &[2]);
        save_params(&p, dir.path(), "m").unwrap();
        let mut q = ParamSet::new();
        q.add_zeros("w", &[3]);
        assert!(load_params(&mut q, dir.path(), "m").is_err());
    }
}
