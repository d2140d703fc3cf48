//! Parameter persistence: a checkpoint is a directory holding
//! `manifest.json` (format version, array names/shapes/dtype, and the model
//! metadata needed to rebuild the network) plus one little-endian f64 binary
//! file per parameter array, row-major. Round-trips are bit-exact.

use crate::kernel::KernelConfig;
use crate::net::{Architecture, InputMeta, ModelParams};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("checkpoint version {found} unsupported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path, source: std::io::Error) -> CheckpointError {
    CheckpointError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Everything needed to rebuild and evaluate the model besides the arrays.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CheckpointModelMeta {
    pub architecture: Architecture,
    pub input: InputMeta,
    pub k: usize,
    pub seed: u64,
    /// Chunk size used for full-dataset evaluation passes.
    pub batch_size: usize,
    pub kernel: KernelConfig,
    pub lambda: f64,
    /// Companion ablation switches the model was trained with.
    #[serde(default)]
    pub per_layer_enabled: Vec<bool>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    version: u32,
    arrays: Vec<ArrayEntry>,
    model: CheckpointModelMeta,
}

/// File name of one array's payload inside the checkpoint directory.
fn array_file(name: &str) -> String {
    format!("{name}.bin")
}

pub fn save_checkpoint(
    params: &ModelParams,
    meta: &CheckpointModelMeta,
    dir: &Path,
) -> Result<(), CheckpointError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let manifest = Manifest {
        version: CHECKPOINT_VERSION,
        arrays: params
            .arrays()
            .iter()
            .map(|(name, arr)| ArrayEntry {
                name: name.clone(),
                shape: arr.shape().to_vec(),
                dtype: "f64".into(),
            })
            .collect(),
        model: meta.clone(),
    };
    let manifest_path = dir.join("manifest.json");
    let body = serde_json::to_string_pretty(&manifest)
        .map_err(|e| CheckpointError::CorruptCheckpoint(format!("manifest encode: {e}")))?;
    fs::write(&manifest_path, body).map_err(|e| io_err(&manifest_path, e))?;

    for (name, arr) in params.arrays() {
        let path = dir.join(array_file(name));
        let file = fs::File::create(&path).map_err(|e| io_err(&path, e))?;
        let mut w = BufWriter::new(file);
        for &v in arr.iter() {
            w.write_f64::<LittleEndian>(v).map_err(|e| io_err(&path, e))?;
        }
        w.flush().map_err(|e| io_err(&path, e))?;
    }
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<(ModelParams, CheckpointModelMeta), CheckpointError> {
    let manifest_path = dir.join("manifest.json");
    let body = fs::read_to_string(&manifest_path).map_err(|e| io_err(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&body)
        .map_err(|e| CheckpointError::CorruptCheckpoint(format!("manifest.json: {e}")))?;
    if manifest.version != CHECKPOINT_VERSION {
        return Err(CheckpointError::VersionMismatch {
            found: manifest.version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let mut arrays = Vec::with_capacity(manifest.arrays.len());
    for entry in &manifest.arrays {
        if entry.dtype != "f64" {
            return Err(CheckpointError::CorruptCheckpoint(format!(
                "array {} has dtype {}, expected f64",
                entry.name, entry.dtype
            )));
        }
        let count: usize = entry.shape.iter().product();
        let path = dir.join(array_file(&entry.name));
        let file = fs::File::open(&path).map_err(|e| io_err(&path, e))?;
        let bytes = file.metadata().map_err(|e| io_err(&path, e))?.len();
        if bytes != (count * 8) as u64 {
            return Err(CheckpointError::CorruptCheckpoint(format!(
                "array {} holds {bytes} bytes, expected exactly {}",
                entry.name,
                count * 8
            )));
        }
        let mut r = BufReader::new(file);
        let mut values = Vec::with_capacity(count);
        for _ in 0..count {
            values.push(r.read_f64::<LittleEndian>().map_err(|e| io_err(&path, e))?);
        }
        let mut extra = [0u8; 1];
        if r.read(&mut extra).map_err(|e| io_err(&path, e))? != 0 {
            return Err(CheckpointError::CorruptCheckpoint(format!(
                "array {} has trailing bytes",
                entry.name
            )));
        }
        let arr = ArrayD::from_shape_vec(IxDyn(&entry.shape), values)
            .map_err(|e| CheckpointError::CorruptCheckpoint(format!("array {}: {e}", entry.name)))?;
        arrays.push((entry.name.clone(), arr));
    }
    Ok((
        ModelParams::from_arrays(arrays, manifest.model.seed),
        manifest.model,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{default_cnn_architecture, ModelParams};
    use tempfile::tempdir;

    fn sample() -> (ModelParams, CheckpointModelMeta) {
        let arch = Architecture {
            backbone: crate::net::BackboneSpec::Conv {
                blocks: vec![crate::net::ConvBlock::new(3, 3)],
            },
            hidden_units: 5,
        };
        let input = InputMeta::Image {
            channels: 1,
            height: 8,
            width: 8,
        };
        let params = ModelParams::init(&arch, &input, 2, 77).unwrap();
        let meta = CheckpointModelMeta {
            architecture: arch,
            input,
            k: 2,
            seed: 77,
            batch_size: 16,
            kernel: KernelConfig::default(),
            lambda: 0.1,
            per_layer_enabled: Vec::new(),
        };
        (params, meta)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (params, meta) = sample();
        let dir = tempdir().unwrap();
        save_checkpoint(&params, &meta, dir.path()).unwrap();
        let (back, back_meta) = load_checkpoint(dir.path()).unwrap();
        assert_eq!(meta, back_meta);
        assert_eq!(params.arrays().len(), back.arrays().len());
        for ((na, va), (nb, vb)) in params.arrays().iter().zip(back.arrays().iter()) {
            assert_eq!(na, nb);
            assert_eq!(va.shape(), vb.shape());
            for (x, y) in va.iter().zip(vb.iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn truncated_array_is_corrupt() {
        let (params, meta) = sample();
        let dir = tempdir().unwrap();
        save_checkpoint(&params, &meta, dir.path()).unwrap();
        let victim = dir.path().join("head.w.bin");
        let bytes = fs::read(&victim).unwrap();
        fs::write(&victim, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(
            load_checkpoint(dir.path()),
            Err(CheckpointError::CorruptCheckpoint(_))
        ));
    }

    #[test]
    fn version_mismatch_reports_versions() {
        let (params, meta) = sample();
        let dir = tempdir().unwrap();
        save_checkpoint(&params, &meta, dir.path()).unwrap();
        let manifest_path = dir.path().join("manifest.json");
        let mut manifest: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(&manifest_path).unwrap()).unwrap();
        manifest["version"] = serde_json::json!(99);
        fs::write(&manifest_path, serde_json::to_string(&manifest).unwrap()).unwrap();
        match load_checkpoint(dir.path()) {
            Err(CheckpointError::VersionMismatch { found, expected }) => {
                assert_eq!(found, 99);
                assert_eq!(expected, CHECKPOINT_VERSION);
            }
            other => panic!("expected version mismatch, got {other:?}"),
        }
    }

    #[test]
    fn save_is_deterministic() {
        let (params, meta) = sample();
        let d1 = tempdir().unwrap();
        let d2 = tempdir().unwrap();
        save_checkpoint(&params, &meta, d1.path()).unwrap();
        save_checkpoint(&params, &meta, d2.path()).unwrap();
        for entry in fs::read_dir(d1.path()).unwrap() {
            let name = entry.unwrap().file_name();
            let a = fs::read(d1.path().join(&name)).unwrap();
            let b = fs::read(d2.path().join(&name)).unwrap();
            assert_eq!(a, b, "{name:?} differs");
        }
        let _ = default_cnn_architecture();
    }
}
