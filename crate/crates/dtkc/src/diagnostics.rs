//! Analysis instruments: input-gradient importance maps per companion
//! objective, loss↔accuracy mismatch curves, and cluster visualization
//! exports.

use crate::data::{DataPayload, Dataset};
use crate::evaluate::{argmax_rows, assignments_dataset};
use crate::graph::Graph;
use crate::kernel::KernelConfig;
use crate::net::{Architecture, InputMeta, ModelParams, ParamNodes, TapKind};
use crate::objective::{
    build_companion_terms, build_ddc_terms, build_gaussian_kernel, build_tensor_kernel,
    CompanionWeights, SigmaSet,
};
use crate::train::{build_forward, BatchInput, RunRecord, TrainError};
use ndarray::{Array2, Array4};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DiagError {
    #[error("layer {0} has no companion objective")]
    LayerWithoutCompanion(usize),
    #[error("constant series: {0} has zero variance, correlation undefined")]
    ConstantSeries(String),
    #[error("run history has no per-epoch accuracy")]
    MissingAccuracy,
    #[error("not an image dataset")]
    NotAnImageDataset,
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path, source: std::io::Error) -> DiagError {
    DiagError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Which objective the importance map differentiates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossSelect {
    /// The main clustering loss on the hidden representation.
    Main,
    /// The companion objective of one tapped layer.
    Companion(usize),
}

/// Per-observation saliency: |∂loss/∂pixel|, channel-summed and
/// max-normalized to [0, 1] (all-zero when the gradient vanishes).
#[derive(Debug, Clone)]
pub struct ImportanceMap {
    pub observation: usize,
    pub select: LossSelect,
    pub values: Array2<f64>,
}

pub fn importance_maps(
    params: &ModelParams,
    arch: &Architecture,
    input: &InputMeta,
    k: usize,
    images: &Array4<f64>,
    select: LossSelect,
    weights: &CompanionWeights,
    kcfg: &KernelConfig,
) -> Result<Vec<ImportanceMap>, DiagError> {
    importance_maps_scaled(params, arch, input, k, images, select, weights, kcfg, 1.0)
}

/// Internal variant with a loss prefactor; the maps are invariant to it
/// because of the max normalization (asserted in tests).
#[allow(clippy::too_many_arguments)]
pub(crate) fn importance_maps_scaled(
    params: &ModelParams,
    arch: &Architecture,
    input: &InputMeta,
    k: usize,
    images: &Array4<f64>,
    select: LossSelect,
    weights: &CompanionWeights,
    kcfg: &KernelConfig,
    scale: f64,
) -> Result<Vec<ImportanceMap>, DiagError> {
    let InputMeta::Image { .. } = input else {
        return Err(DiagError::NotAnImageDataset);
    };
    let batch = BatchInput::Images(images.clone());
    let mut g = Graph::new();
    let pnodes = ParamNodes::insert(&mut g, params);
    let fwd = build_forward(&mut g, &pnodes, &batch, arch, input, k, true)
        .map_err(TrainError::from)?;
    let sigmas = SigmaSet::from_forward(&g, &fwd, kcfg).map_err(TrainError::from)?;

    let loss = match select {
        LossSelect::Main => {
            let kn = build_gaussian_kernel(&mut g, fwd.hidden, sigmas.hidden);
            let (terms, _) = build_ddc_terms(&mut g, fwd.assign, kn);
            terms.total
        }
        LossSelect::Companion(layer) => {
            if layer >= fwd.taps.len() || !weights.enabled(layer) {
                return Err(DiagError::LayerWithoutCompanion(layer));
            }
            let (kind, tap) = fwd.taps[layer];
            let kn = match kind {
                TapKind::ConvMap => build_tensor_kernel(&mut g, tap, sigmas.taps[layer], kcfg),
                TapKind::LastHiddenState => build_gaussian_kernel(&mut g, tap, sigmas.taps[layer]),
            };
            let (terms, _) = build_companion_terms(&mut g, layer, fwd.assign, kn);
            terms.total
        }
    };
    let loss = g.mul_scalar(loss, scale);
    let grads = g.backward(loss);
    let gx = grads
        .get(fwd.input)
        .expect("input is a differentiable leaf")
        .clone();

    let (n, c, h, w) = images.dim();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut map = Array2::<f64>::zeros((h, w));
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    map[(y, x)] += gx[[i, ch, y, x]].abs();
                }
            }
        }
        let max = map.iter().cloned().fold(0.0f64, f64::max);
        if max > 0.0 {
            map.mapv_inplace(|v| v / max);
        }
        out.push(ImportanceMap {
            observation: i,
            select,
            values: map,
        });
    }
    Ok(out)
}

/// Per-epoch loss/accuracy pairs with their Pearson correlation. A strongly
/// negative correlation means the unsupervised loss tracks accuracy well
/// (low objective-function mismatch).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OfmReport {
    pub epochs: Vec<usize>,
    pub loss: Vec<f64>,
    pub accuracy: Vec<f64>,
    pub correlation: f64,
}

pub fn ofm_curves(record: &RunRecord) -> Result<OfmReport, DiagError> {
    if record.history.is_empty() || record.history.iter().any(|e| e.accuracy.is_none()) {
        return Err(DiagError::MissingAccuracy);
    }
    let epochs: Vec<usize> = record.history.iter().map(|e| e.epoch).collect();
    let loss: Vec<f64> = record.history.iter().map(|e| e.total).collect();
    let accuracy: Vec<f64> = record.history.iter().map(|e| e.accuracy.unwrap()).collect();
    let correlation = pearson(&loss, &accuracy)?;
    Ok(OfmReport {
        epochs,
        loss,
        accuracy,
        correlation,
    })
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64, DiagError> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (&a, &b) in x.iter().zip(y.iter()) {
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
        sxy += (a - mx) * (b - my);
    }
    if sxx == 0.0 {
        return Err(DiagError::ConstantSeries("loss".into()));
    }
    if syy == 0.0 {
        return Err(DiagError::ConstantSeries("accuracy".into()));
    }
    Ok(sxy / (sxx.sqrt() * syy.sqrt()))
}

/// Binary 8-bit PGM (P5) writer for values in [0, 1].
pub fn write_pgm(path: &Path, image: &Array2<f64>) -> Result<(), DiagError> {
    let (h, w) = image.dim();
    let file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    write!(out, "P5\n{w} {h}\n255\n").map_err(|e| io_err(path, e))?;
    let bytes: Vec<u8> = image
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    out.write_all(&bytes).map_err(|e| io_err(path, e))?;
    Ok(())
}

/// Members of each predicted cluster ordered by assignment confidence
/// (descending, ties to the lower index), truncated to `per_row`.
pub fn confident_members(assign: &Array2<f64>, k: usize, per_row: usize) -> Vec<Vec<usize>> {
    let pred = argmax_rows(assign);
    let mut rows = Vec::with_capacity(k);
    for c in 0..k {
        let mut members: Vec<usize> = (0..assign.nrows()).filter(|&i| pred[i] == c).collect();
        members.sort_by(|&a, &b| {
            assign[(b, c)]
                .partial_cmp(&assign[(a, c)])
                .unwrap()
                .then(a.cmp(&b))
        });
        members.truncate(per_row);
        rows.push(members);
    }
    rows
}

/// Writes a grid image: one row per predicted cluster, up to 10
/// highest-confidence members per row, blank cells where a cluster has fewer
/// members. Lossless PGM output.
pub fn export_cluster_grid(
    params: &ModelParams,
    arch: &Architecture,
    input: &InputMeta,
    k: usize,
    ds: &Dataset,
    chunk_size: usize,
    out_path: &Path,
) -> Result<(), DiagError> {
    let DataPayload::Images(images) = &ds.payload else {
        return Err(DiagError::NotAnImageDataset);
    };
    let assign = assignments_dataset(params, arch, input, k, ds, chunk_size)?;
    let rows = confident_members(&assign, k, 10);

    let (_, c, h, w) = images.dim();
    let mut grid = Array2::<f64>::zeros((k * h, 10 * w));
    for (cluster, members) in rows.iter().enumerate() {
        for (slot, &i) in members.iter().enumerate() {
            // channel-mean cell, min-max normalized for display
            let mut cell = Array2::<f64>::zeros((h, w));
            for ch in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        cell[(y, x)] += images[(i, ch, y, x)] / c as f64;
                    }
                }
            }
            let min = cell.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = cell.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let range = max - min;
            for y in 0..h {
                for x in 0..w {
                    let v = if range > 0.0 {
                        (cell[(y, x)] - min) / range
                    } else {
                        0.0
                    };
                    grid[(cluster * h + y, slot * w + x)] = v;
                }
            }
        }
    }
    write_pgm(out_path, &grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_synthetic_blob_images;
    use crate::net::{BackboneSpec, ConvBlock};
    use crate::train::EpochStats;
    use ndarray::{ArrayD, IxDyn};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use tempfile::tempdir;

    fn tiny_setup() -> (Architecture, InputMeta, ModelParams, Array4<f64>) {
        let arch = Architecture {
            backbone: BackboneSpec::Conv {
                blocks: vec![
                    ConvBlock::new(2, 3),
                    ConvBlock::new(3, 3),
                ],
            },
            hidden_units: 6,
        };
        let input = InputMeta::Image {
            channels: 1,
            height: 8,
            width: 8,
        };
        let params = ModelParams::init(&arch, &input, 2, 21).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let images = Array4::from_shape_fn((4, 1, 8, 8), |_| rng.gen_range(0.0..1.0));
        (arch, input, params, images)
    }

    #[test]
    fn importance_map_shape_and_range() {
        let (arch, input, params, images) = tiny_setup();
        let maps = importance_maps(
            &params,
            &arch,
            &input,
            2,
            &images,
            LossSelect::Companion(0),
            &CompanionWeights::with_lambda(1.0),
            &KernelConfig::default(),
        )
        .unwrap();
        assert_eq!(maps.len(), 4);
        for m in &maps {
            assert_eq!(m.values.dim(), (8, 8));
            for &v in m.values.iter() {
                assert!((0.0..=1.0).contains(&v) && v.is_finite());
            }
        }
    }

    #[test]
    fn importance_map_zero_first_conv_gives_zero_maps() {
        let (arch, input, mut params, images) = tiny_setup();
        for name in ["conv1.w", "conv1.b"] {
            let shape = params.get(name).unwrap().shape().to_vec();
            params.set(name, ArrayD::zeros(IxDyn(&shape))).unwrap();
        }
        let maps = importance_maps(
            &params,
            &arch,
            &input,
            2,
            &images,
            LossSelect::Companion(0),
            &CompanionWeights::with_lambda(1.0),
            &KernelConfig::default(),
        )
        .unwrap();
        for m in &maps {
            assert!(m.values.iter().all(|&v| v == 0.0), "expected all-zero map");
        }
    }

    #[test]
    fn importance_map_invariant_to_loss_rescaling() {
        let (arch, input, params, images) = tiny_setup();
        let weights = CompanionWeights::with_lambda(1.0);
        let kcfg = KernelConfig::default();
        let base = importance_maps_scaled(
            &params, &arch, &input, 2, &images, LossSelect::Companion(1), &weights, &kcfg, 1.0,
        )
        .unwrap();
        let doubled = importance_maps_scaled(
            &params, &arch, &input, 2, &images, LossSelect::Companion(1), &weights, &kcfg, 2.0,
        )
        .unwrap();
        for (a, b) in base.iter().zip(doubled.iter()) {
            for (x, y) in a.values.iter().zip(b.values.iter()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn importance_map_rejects_missing_companion() {
        let (arch, input, params, images) = tiny_setup();
        let err = importance_maps(
            &params,
            &arch,
            &input,
            2,
            &images,
            LossSelect::Companion(9),
            &CompanionWeights::with_lambda(1.0),
            &KernelConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, DiagError::LayerWithoutCompanion(9)));
        let disabled = CompanionWeights {
            lambda: 1.0,
            per_layer_enabled: vec![false, true],
        };
        let err = importance_maps(
            &params,
            &arch,
            &input,
            2,
            &images,
            LossSelect::Companion(0),
            &disabled,
            &KernelConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, DiagError::LayerWithoutCompanion(0)));
    }

    fn record_with(series: &[(f64, Option<f64>)]) -> RunRecord {
        RunRecord {
            run_index: 0,
            seed: 0,
            checkpoint: None,
            history: series
                .iter()
                .enumerate()
                .map(|(epoch, &(total, accuracy))| EpochStats {
                    epoch,
                    total,
                    main_l1: 0.0,
                    main_l2: 0.0,
                    main_l3: 0.0,
                    companions: vec![],
                    accuracy,
                })
                .collect(),
            empty_column_warnings: 0,
            wall_clock_secs: 0.0,
        }
    }

    #[test]
    fn ofm_affine_series_has_correlation_minus_one() {
        let series: Vec<(f64, Option<f64>)> = (0..10)
            .map(|e| {
                let loss = 3.0 - 0.2 * e as f64;
                (loss, Some(-loss + 1.5))
            })
            .collect();
        let report = ofm_curves(&record_with(&series)).unwrap();
        assert!((report.correlation + 1.0).abs() < 1e-12);
    }

    #[test]
    fn ofm_constant_accuracy_is_an_error() {
        let series: Vec<(f64, Option<f64>)> =
            (0..5).map(|e| (1.0 + e as f64, Some(0.5))).collect();
        assert!(matches!(
            ofm_curves(&record_with(&series)),
            Err(DiagError::ConstantSeries(_))
        ));
    }

    #[test]
    fn ofm_requires_accuracy_history() {
        let series = vec![(1.0, None), (0.5, Some(0.7))];
        assert!(matches!(
            ofm_curves(&record_with(&series)),
            Err(DiagError::MissingAccuracy)
        ));
    }

    #[test]
    fn ofm_matches_direct_correlation_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let series: Vec<(f64, Option<f64>)> = (0..10)
            .map(|_| (rng.gen_range(0.0..3.0), Some(rng.gen_range(0.0..1.0))))
            .collect();
        let report = ofm_curves(&record_with(&series)).unwrap();
        // direct formula
        let x: Vec<f64> = series.iter().map(|s| s.0).collect();
        let y: Vec<f64> = series.iter().map(|s| s.1.unwrap()).collect();
        let n = 10.0;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
        let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
        let expect = sxy / (sxx.sqrt() * syy.sqrt());
        assert!((report.correlation - expect).abs() < 1e-12);
    }

    #[test]
    fn ofm_correlation_invariant_to_affine_rescaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let series: Vec<(f64, Option<f64>)> = (0..8)
            .map(|_| (rng.gen_range(0.0..3.0), Some(rng.gen_range(0.0..1.0))))
            .collect();
        let base = ofm_curves(&record_with(&series)).unwrap();
        let scaled: Vec<(f64, Option<f64>)> = series
            .iter()
            .map(|&(l, a)| (2.5 * l - 1.0, a.map(|v| 0.3 * v + 0.2)))
            .collect();
        let rescaled = ofm_curves(&record_with(&scaled)).unwrap();
        assert!((base.correlation - rescaled.correlation).abs() < 1e-12);
    }

    #[test]
    fn confident_members_match_sort_oracle() {
        let assign = ndarray::array![
            [0.9, 0.1],
            [0.6, 0.4],
            [0.2, 0.8],
            [0.95, 0.05],
            [0.3, 0.7],
        ];
        let rows = confident_members(&assign, 2, 10);
        assert_eq!(rows[0], vec![3, 0, 1]);
        assert_eq!(rows[1], vec![2, 4]);
    }

    #[test]
    fn cluster_grid_has_one_row_per_cluster() {
        let ds = make_synthetic_blob_images(3, 5, 8, 2).unwrap();
        let arch = Architecture {
            backbone: BackboneSpec::Conv {
                blocks: vec![ConvBlock::new(2, 3)],
            },
            hidden_units: 5,
        };
        let input = ds.input_meta();
        let params = ModelParams::init(&arch, &input, 3, 5).unwrap();
        let dir = tempdir().unwrap();
        let path = dir.path().join("grid.pgm");
        export_cluster_grid(&params, &arch, &input, 3, &ds, 8, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        let header = String::from_utf8_lossy(&bytes[..20]).to_string();
        assert!(header.starts_with("P5\n80 24\n255\n"), "header {header:?}");
        // payload: 24 rows of 80 pixels
        assert_eq!(bytes.len(), "P5\n80 24\n255\n".len() + 80 * 24);
    }

    #[test]
    fn pgm_round_trip_values() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("img.pgm");
        let img = ndarray::array![[0.0, 1.0], [0.5, 0.25]];
        write_pgm(&path, &img).unwrap();
        let bytes = fs::read(&path).unwrap();
        let tail = &bytes[bytes.len() - 4..];
        assert_eq!(tail, &[0u8, 255, 128, 64]);
    }
}
