//! Dataset container format, loaders and synthetic generators.
//!
//! A dataset is a directory with
//!
//! - `meta.json` — attributes (see [`DatasetMeta`]),
//! - `data.f32` — little-endian 32-bit floats, row-major
//!   (`n×C×H×W` for images, `n×max_len×dim` for sequences),
//! - `labels.i32` — optional little-endian 32-bit signed labels,
//! - `lengths.i32` — sequence datasets only: per-sequence valid lengths.
//!
//! Values are held as f64 in memory but quantized to f32 at generation time,
//! so write → load round-trips are bit-exact.

use crate::net::{InputMeta, SequenceBatch};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array3, Array4};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("corrupt dataset: {0}")]
    CorruptDataset(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid generator arguments: {0}")]
    BadArgs(String),
}

fn io_err(path: &Path, source: std::io::Error) -> DataError {
    DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataKind {
    Image,
    Sequence,
}

/// Attributes of a stored dataset; declared shapes must match the binary
/// payload sizes exactly.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub name: String,
    pub kind: DataKind,
    pub n: usize,
    pub k: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channels: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_len: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_len: Option<usize>,
    pub has_labels: bool,
}

impl DatasetMeta {
    fn validate(&self) -> Result<(), DataError> {
        if self.n == 0 {
            return Err(DataError::CorruptDataset("n must be positive".into()));
        }
        if self.k < 2 {
            return Err(DataError::CorruptDataset("k must be at least 2".into()));
        }
        match self.kind {
            DataKind::Image => {
                if self.channels.is_none() || self.height.is_none() || self.width.is_none() {
                    return Err(DataError::CorruptDataset(
                        "image metadata requires channels/height/width".into(),
                    ));
                }
            }
            DataKind::Sequence => {
                if self.dim.is_none() || self.min_len.is_none() || self.max_len.is_none() {
                    return Err(DataError::CorruptDataset(
                        "sequence metadata requires dim/min_len/max_len".into(),
                    ));
                }
                if self.min_len.unwrap() == 0 || self.min_len.unwrap() > self.max_len.unwrap() {
                    return Err(DataError::CorruptDataset("invalid length range".into()));
                }
            }
        }
        Ok(())
    }

    fn value_count(&self) -> usize {
        match self.kind {
            DataKind::Image => {
                self.n * self.channels.unwrap() * self.height.unwrap() * self.width.unwrap()
            }
            DataKind::Sequence => self.n * self.max_len.unwrap() * self.dim.unwrap(),
        }
    }
}

#[derive(Debug, Clone)]
pub enum DataPayload {
    Images(Array4<f64>),
    Sequences(SequenceBatch),
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub payload: DataPayload,
    pub labels: Option<Vec<i32>>,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.meta.n
    }

    pub fn k(&self) -> usize {
        self.meta.k
    }

    pub fn input_meta(&self) -> InputMeta {
        match self.meta.kind {
            DataKind::Image => InputMeta::Image {
                channels: self.meta.channels.unwrap(),
                height: self.meta.height.unwrap(),
                width: self.meta.width.unwrap(),
            },
            DataKind::Sequence => InputMeta::Sequence {
                dim: self.meta.dim.unwrap(),
            },
        }
    }

    /// Integer labels as `usize`, when present and in range.
    pub fn labels_usize(&self) -> Option<Vec<usize>> {
        self.labels
            .as_ref()
            .map(|ls| ls.iter().map(|&l| l as usize).collect())
    }
}

fn quantize(v: f64) -> f64 {
    v as f32 as f64
}

/// Writes a dataset directory (meta + payloads).
pub fn store_dataset(ds: &Dataset, dir: &Path) -> Result<(), DataError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let meta_path = dir.join("meta.json");
    let meta_json = serde_json::to_string_pretty(&ds.meta)
        .map_err(|e| DataError::CorruptDataset(format!("meta encode: {e}")))?;
    fs::write(&meta_path, meta_json).map_err(|e| io_err(&meta_path, e))?;

    let data_path = dir.join("data.f32");
    let file = fs::File::create(&data_path).map_err(|e| io_err(&data_path, e))?;
    let mut w = BufWriter::new(file);
    let write_all = |w: &mut BufWriter<fs::File>, it: &mut dyn Iterator<Item = f64>| {
        for v in it {
            w.write_f32::<LittleEndian>(v as f32)
                .map_err(|e| io_err(&data_path, e))?;
        }
        Ok::<(), DataError>(())
    };
    match &ds.payload {
        DataPayload::Images(a) => write_all(&mut w, &mut a.iter().copied())?,
        DataPayload::Sequences(s) => write_all(&mut w, &mut s.values().iter().copied())?,
    }
    w.flush().map_err(|e| io_err(&data_path, e))?;

    if let DataPayload::Sequences(s) = &ds.payload {
        let len_path = dir.join("lengths.i32");
        let file = fs::File::create(&len_path).map_err(|e| io_err(&len_path, e))?;
        let mut w = BufWriter::new(file);
        for &l in s.lengths() {
            w.write_i32::<LittleEndian>(l as i32)
                .map_err(|e| io_err(&len_path, e))?;
        }
        w.flush().map_err(|e| io_err(&len_path, e))?;
    }

    if let Some(labels) = &ds.labels {
        let lab_path = dir.join("labels.i32");
        let file = fs::File::create(&lab_path).map_err(|e| io_err(&lab_path, e))?;
        let mut w = BufWriter::new(file);
        for &l in labels {
            w.write_i32::<LittleEndian>(l)
                .map_err(|e| io_err(&lab_path, e))?;
        }
        w.flush().map_err(|e| io_err(&lab_path, e))?;
    }
    Ok(())
}

fn read_f32_exact(path: &Path, count: usize) -> Result<Vec<f64>, DataError> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let meta_len = file.metadata().map_err(|e| io_err(path, e))?.len();
    if meta_len != (count * 4) as u64 {
        return Err(DataError::CorruptDataset(format!(
            "{} holds {meta_len} bytes, expected exactly {}",
            path.display(),
            count * 4
        )));
    }
    let mut r = BufReader::new(file);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        out.push(r.read_f32::<LittleEndian>().map_err(|e| io_err(path, e))? as f64);
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra).map_err(|e| io_err(path, e))? != 0 {
        return Err(DataError::CorruptDataset("trailing bytes in payload".into()));
    }
    Ok(out)
}

fn read_i32_exact(path: &Path, count: usize) -> Result<Vec<i32>, DataError> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let meta_len = file.metadata().map_err(|e| io_err(path, e))?.len();
    if meta_len != (count * 4) as u64 {
        return Err(DataError::CorruptDataset(format!(
            "{} holds {meta_len} bytes, expected exactly {}",
            path.display(),
            count * 4
        )));
    }
    let mut r = BufReader::new(file);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        out.push(r.read_i32::<LittleEndian>().map_err(|e| io_err(path, e))?);
    }
    Ok(out)
}

/// Loads and validates a dataset directory.
pub fn load_dataset(dir: &Path) -> Result<Dataset, DataError> {
    let meta_path = dir.join("meta.json");
    let meta_src = fs::read_to_string(&meta_path).map_err(|e| io_err(&meta_path, e))?;
    let meta: DatasetMeta = serde_json::from_str(&meta_src)
        .map_err(|e| DataError::CorruptDataset(format!("meta.json: {e}")))?;
    meta.validate()?;

    let values = read_f32_exact(&dir.join("data.f32"), meta.value_count())?;
    let payload = match meta.kind {
        DataKind::Image => {
            let (c, h, w) = (
                meta.channels.unwrap(),
                meta.height.unwrap(),
                meta.width.unwrap(),
            );
            let arr = Array4::from_shape_vec((meta.n, c, h, w), values)
                .map_err(|e| DataError::CorruptDataset(format!("image payload: {e}")))?;
            DataPayload::Images(arr)
        }
        DataKind::Sequence => {
            let (dim, min_len, max_len) = (
                meta.dim.unwrap(),
                meta.min_len.unwrap(),
                meta.max_len.unwrap(),
            );
            let raw_lengths = read_i32_exact(&dir.join("lengths.i32"), meta.n)?;
            let mut lengths = Vec::with_capacity(meta.n);
            for (i, &l) in raw_lengths.iter().enumerate() {
                if l < min_len as i32 || l > max_len as i32 {
                    return Err(DataError::CorruptDataset(format!(
                        "sequence {i} length {l} outside [{min_len}, {max_len}]"
                    )));
                }
                lengths.push(l as usize);
            }
            let arr = Array3::from_shape_vec((meta.n, max_len, dim), values)
                .map_err(|e| DataError::CorruptDataset(format!("sequence payload: {e}")))?;
            let batch = SequenceBatch::new(arr, lengths)
                .map_err(|e| DataError::CorruptDataset(format!("padding: {e}")))?;
            DataPayload::Sequences(batch)
        }
    };

    let labels_path = dir.join("labels.i32");
    let labels = if meta.has_labels {
        if !labels_path.exists() {
            return Err(DataError::CorruptDataset(
                "meta declares labels but labels.i32 is missing".into(),
            ));
        }
        let raw = read_i32_exact(&labels_path, meta.n)?;
        for (i, &l) in raw.iter().enumerate() {
            if l < 0 || l >= meta.k as i32 {
                return Err(DataError::CorruptDataset(format!(
                    "label {l} of observation {i} outside [0, {})",
                    meta.k
                )));
            }
        }
        Some(raw)
    } else {
        None
    };

    Ok(Dataset {
        meta,
        payload,
        labels,
    })
}

/// k well-separated bright Gaussian blobs on a `side`×`side` canvas, one
/// location per cluster, plus pixel noise (std 0.05). Rows interleave the
/// clusters so any prefix is roughly balanced. Deterministic per seed.
pub fn make_synthetic_blob_images(
    k: usize,
    per_cluster: usize,
    side: usize,
    seed: u64,
) -> Result<Dataset, DataError> {
    if k < 2 {
        return Err(DataError::BadArgs("k must be at least 2".into()));
    }
    if side < 8 {
        return Err(DataError::BadArgs("side must be at least 8".into()));
    }
    if per_cluster == 0 {
        return Err(DataError::BadArgs("per_cluster must be positive".into()));
    }
    let n = k * per_cluster;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.05).unwrap();

    // Cluster centers on a circle; for small k the chord length stays well
    // above side/3.
    let half = side as f64 / 2.0;
    let radius = 0.32 * side as f64;
    let centers: Vec<(f64, f64)> = (0..k)
        .map(|c| {
            let angle = 2.0 * std::f64::consts::PI * c as f64 / k as f64;
            (half + radius * angle.cos(), half + radius * angle.sin())
        })
        .collect();
    let blob_sigma = side as f64 / 8.0;

    let mut images = Array4::<f64>::zeros((n, 1, side, side));
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % k;
        labels.push(c as i32);
        let (cx, cy) = centers[c];
        for y in 0..side {
            for x in 0..side {
                let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                let v = (-d2 / (2.0 * blob_sigma * blob_sigma)).exp() + noise.sample(&mut rng);
                images[(i, 0, y, x)] = quantize(v);
            }
        }
    }

    Ok(Dataset {
        meta: DatasetMeta {
            name: format!("blobs-k{k}-s{side}-seed{seed}"),
            kind: DataKind::Image,
            n,
            k,
            channels: Some(1),
            height: Some(side),
            width: Some(side),
            dim: None,
            min_len: None,
            max_len: None,
            has_labels: true,
        },
        payload: DataPayload::Images(images),
        labels: Some(labels),
    })
}

/// Cluster frequencies used by the sequence generator: 2c+1 cycles over each
/// sequence (1, 3, 5, ...).
pub fn sequence_cluster_frequency(c: usize) -> f64 {
    (2 * c + 1) as f64
}

/// Noisy multichannel sinusoids with a cluster-specific frequency and
/// variable lengths drawn uniformly from `length_range`. Rows interleave the
/// clusters. Deterministic per seed.
pub fn make_synthetic_sequences(
    k: usize,
    per_cluster: usize,
    dim: usize,
    length_range: (usize, usize),
    seed: u64,
) -> Result<Dataset, DataError> {
    let (min_len, max_len) = length_range;
    if k < 2 || per_cluster == 0 || dim == 0 {
        return Err(DataError::BadArgs("k ≥ 2, per_cluster ≥ 1, dim ≥ 1 required".into()));
    }
    if min_len < 4 || min_len > max_len {
        return Err(DataError::BadArgs(format!(
            "invalid length range [{min_len}, {max_len}]"
        )));
    }
    // Highest frequency must stay below Nyquist for the shortest sequence.
    if 2.0 * sequence_cluster_frequency(k - 1) >= min_len as f64 {
        return Err(DataError::BadArgs(format!(
            "min_len {min_len} too short for {k} clusters (aliasing)"
        )));
    }
    let n = k * per_cluster;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.1).unwrap();

    let mut values = Array3::<f64>::zeros((n, max_len, dim));
    let mut lengths = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % k;
        labels.push(c as i32);
        let len = rng.gen_range(min_len..=max_len);
        lengths.push(len);
        let freq = sequence_cluster_frequency(c);
        for t in 0..len {
            for d in 0..dim {
                let phase = 2.0 * std::f64::consts::PI * d as f64 / (dim as f64 + 1.0);
                let arg = 2.0 * std::f64::consts::PI * freq * t as f64 / len as f64 + phase;
                values[(i, t, d)] = quantize(arg.sin() + noise.sample(&mut rng));
            }
        }
    }
    let batch = SequenceBatch::new(values, lengths)
        .map_err(|e| DataError::CorruptDataset(format!("generator produced {e}")))?;

    Ok(Dataset {
        meta: DatasetMeta {
            name: format!("seqs-k{k}-d{dim}-seed{seed}"),
            kind: DataKind::Sequence,
            n,
            k,
            channels: None,
            height: None,
            width: None,
            dim: Some(dim),
            min_len: Some(min_len),
            max_len: Some(max_len),
            has_labels: true,
        },
        payload: DataPayload::Sequences(batch),
        labels: Some(labels),
    })
}
