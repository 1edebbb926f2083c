//! Checkpoint directories: `manifest.json` plus `params.bin`.
//!
//! `params.bin` is every tensor's data as little-endian `f64`, concatenated in
//! manifest order. The manifest carries the model kind, its config, the seed,
//! the RNG name and a SHA-256 digest of the blob.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use autodiff::Tensor;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::RNG_NAME;

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PARAMS_FILE: &str = "params.bin";

/// Crate version string stamped into every artifact.
pub const VERSION: &str = concat!("latcon ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    /// Offset into `params.bin`, in `f64` elements.
    pub offset: usize,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub kind: String,
    pub version: String,
    pub seed: u64,
    pub rng: String,
    pub config: Value,
    pub config_digest: String,
    pub tensors: Vec<TensorEntry>,
    pub digest: String,
}

/// A model that can be written to and rebuilt from a checkpoint.
pub trait Checkpoint: Sized {
    const KIND: &'static str;

    fn config_json(&self) -> Result<Value>;
    fn tensors(&self) -> Vec<(String, Tensor)>;
    fn from_parts(config: &Value, take: &mut dyn FnMut(&str) -> Result<Tensor>) -> Result<Self>;
}

/// Lowercase hex SHA-256.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Digest of the compact JSON form of `config` (object keys sorted).
pub fn config_digest(config: &Value) -> String {
    sha256_hex(config.to_string().as_bytes())
}

pub fn save_checkpoint<M: Checkpoint>(model: &M, dir: impl AsRef<Path>, seed: u64) -> Result<Manifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut blob = Vec::new();
    let mut entries = Vec::new();
    for (name, t) in &model.tensors() {
        entries.push(TensorEntry {
            name: name.clone(),
            offset: blob.len() / 8,
            shape: t.shape().to_vec(),
        });
        for v in t.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let config = model.config_json()?;
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        kind: M::KIND.to_string(),
        version: VERSION.to_string(),
        seed,
        rng: RNG_NAME.to_string(),
        config_digest: config_digest(&config),
        config,
        tensors: entries,
        digest: sha256_hex(&blob),
    };
    let params = dir.join(PARAMS_FILE);
    fs::write(&params, &blob).map_err(|e| Error::io(&params, e))?;
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<Manifest> {
    let path = dir.as_ref().join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.schema_version != SCHEMA_VERSION {
        return Err(Error::SchemaVersion {
            found: manifest.schema_version,
            supported: SCHEMA_VERSION,
        });
    }
    Ok(manifest)
}

pub fn load_checkpoint<M: Checkpoint>(dir: impl AsRef<Path>) -> Result<(M, Manifest)> {
    let dir = dir.as_ref();
    let manifest = read_manifest(dir)?;
    if manifest.kind != M::KIND {
        return Err(Error::WrongKind {
            expected: M::KIND.to_string(),
            found: manifest.kind,
        });
    }
    let params = dir.join(PARAMS_FILE);
    let blob = fs::read(&params).map_err(|e| Error::io(&params, e))?;
    let found = sha256_hex(&blob);
    if found != manifest.digest {
        return Err(Error::DigestMismatch {
            expected: manifest.digest.clone(),
            found,
        });
    }
    let total = blob.len() / 8;
    let mut tensors: HashMap<&str, Tensor> = HashMap::new();
    for e in &manifest.tensors {
        let n: usize = e.shape.iter().product();
        if e.offset + n > total {
            return Err(Error::MissingTensor(e.name.clone()));
        }
        let data = blob[e.offset * 8..(e.offset + n) * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        tensors.insert(&e.name, Tensor::new(e.shape.clone(), data)?);
    }
    let mut take =
        |name: &str| tensors.remove(name).ok_or_else(|| Error::MissingTensor(name.to_string()));
    let model = M::from_parts(&manifest.config, &mut take)?;
    Ok((model, manifest))
}

/// Parses `config` into a typed block, mapping failures to config errors.
pub fn config_from<T: serde::de::DeserializeOwned>(config: &Value) -> Result<T> {
    serde_json::from_value(config.clone()).map_err(|e| Error::Config(format!("checkpoint config: {e}")))
}

/// Takes `name` and checks it has `shape`.
pub fn take_shaped(
    take: &mut dyn FnMut(&str) -> Result<Tensor>,
    name: &str,
    shape: &[usize],
) -> Result<Tensor> {
    let t = take(name)?;
    if t.shape() != shape {
        return Err(Error::Invalid(format!(
            "tensor `{name}` has shape {:?}, expected {shape:?}",
            t.shape()
        )));
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, PartialEq)]
    struct Pair {
        scale: f64,
        a: Tensor,
        b: Tensor,
    }

    impl Checkpoint for Pair {
        const KIND: &'static str = "pair";

        fn config_json(&self) -> Result<Value> {
            Ok(serde_json::json!({ "scale": self.scale }))
        }

        fn tensors(&self) -> Vec<(String, Tensor)> {
            vec![("a".into(), self.a.clone()), ("b".into(), self.b.clone())]
        }

        fn from_parts(config: &Value, take: &mut dyn FnMut(&str) -> Result<Tensor>) -> Result<Self> {
            Ok(Self {
                scale: config["scale"].as_f64().unwrap(),
                a: take("a")?,
                b: take("b")?,
            })
        }
    }

    fn sample() -> Pair {
        Pair {
            scale: 0.1,
            a: Tensor::new([2, 2], vec![1.0 / 3.0, -0.0, f64::MIN_POSITIVE, 1e300]).unwrap(),
            b: Tensor::vector(vec![std::f64::consts::PI]),
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = sample();
        save_checkpoint(&p, dir.path(), 7).unwrap();
        let (q, m) = load_checkpoint::<Pair>(dir.path()).unwrap();
        assert_eq!(m.seed, 7);
        assert_eq!(m.rng, RNG_NAME);
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&p.a), bits(&q.a));
        assert_eq!(bits(&p.b), bits(&q.b));
        assert_eq!(p, q);
    }

    #[test]
    fn flipped_byte_is_a_digest_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(&sample(), dir.path(), 0).unwrap();
        let path = dir.path().join(PARAMS_FILE);
        let mut blob = fs::read(&path).unwrap();
        blob[3] ^= 0x40;
        fs::write(&path, blob).unwrap();
        assert!(matches!(
            load_checkpoint::<Pair>(dir.path()),
            Err(Error::DigestMismatch { .. })
        ));
    }

    #[test]
    fn tensor_beyond_blob_is_missing() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = save_checkpoint(&sample(), dir.path(), 0).unwrap();
        m.tensors.push(TensorEntry {
            name: "ghost".into(),
            offset: 5,
            shape: vec![3],
        });
        fs::write(dir.path().join(MANIFEST_FILE), serde_json::to_string(&m).unwrap()).unwrap();
        match load_checkpoint::<Pair>(dir.path()) {
            Err(Error::MissingTensor(name)) => assert_eq!(name, "ghost"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unlisted_tensor_is_missing() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = save_checkpoint(&sample(), dir.path(), 0).unwrap();
        m.tensors.retain(|e| e.name != "b");
        fs::write(dir.path().join(MANIFEST_FILE), serde_json::to_string(&m).unwrap()).unwrap();
        assert!(matches!(load_checkpoint::<Pair>(dir.path()), Err(Error::MissingTensor(_))));
    }

    #[test]
    fn schema_and_kind_are_checked() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = save_checkpoint(&sample(), dir.path(), 0).unwrap();
        m.schema_version = 99;
        fs::write(dir.path().join(MANIFEST_FILE), serde_json::to_string(&m).unwrap()).unwrap();
        assert!(matches!(
            load_checkpoint::<Pair>(dir.path()),
            Err(Error::SchemaVersion { found: 99, .. })
        ));
        m.schema_version = SCHEMA_VERSION;
        m.kind = "other".into();
        fs::write(dir.path().join(MANIFEST_FILE), serde_json::to_string(&m).unwrap()).unwrap();
        assert!(matches!(load_checkpoint::<Pair>(dir.path()), Err(Error::WrongKind { .. })));
    }

    #[test]
    fn digest_is_hex_sha256() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
