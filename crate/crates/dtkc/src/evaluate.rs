//! Run aggregation and hyperparameter sweeps.
//!
//! Sweep cells reuse the base seed, so two cells differ only in the swept
//! parameter; the λ = 0 cell therefore reproduces a plain training run
//! bit-for-bit.

use crate::data::Dataset;
use crate::graph::Graph;
use crate::metrics::{hungarian_accuracy, nmi};
use crate::net::{Architecture, InputMeta, ModelParams, ParamNodes};
use crate::train::{
    batch_from_indices, build_forward, train_multi, MultiRun, TrainConfig, TrainError, TrainOutput,
};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::fmt;

/// Predicted labels (argmax assignments over the full dataset) and the
/// optional ground truth.
#[derive(Debug, Clone)]
pub struct ClusteringResult {
    pub predicted: Vec<usize>,
    pub truth: Option<Vec<usize>>,
    pub k: usize,
}

/// Soft assignments over the whole dataset, computed in dataset order in
/// chunks of `chunk_size` observations.
pub fn assignments_dataset(
    params: &ModelParams,
    arch: &Architecture,
    input: &InputMeta,
    k: usize,
    ds: &Dataset,
    chunk_size: usize,
) -> Result<Array2<f64>, TrainError> {
    let n = ds.n();
    let chunk_size = chunk_size.max(1).min(n);
    let mut out = Array2::<f64>::zeros((n, k));
    let mut start = 0usize;
    while start < n {
        let end = (start + chunk_size).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let batch = batch_from_indices(ds, &idx);
        let mut g = Graph::new();
        let pnodes = ParamNodes::insert(&mut g, params);
        let fwd = build_forward(&mut g, &pnodes, &batch, arch, input, k, false)?;
        let assign = g.value(fwd.assign);
        for (row, i) in (start..end).enumerate() {
            for j in 0..k {
                out[(i, j)] = assign[[row, j]];
            }
        }
        start = end;
    }
    Ok(out)
}

/// Hard cluster predictions over the full dataset.
pub fn predict_dataset(
    params: &ModelParams,
    arch: &Architecture,
    input: &InputMeta,
    k: usize,
    ds: &Dataset,
    chunk_size: usize,
) -> Result<ClusteringResult, TrainError> {
    let assign = assignments_dataset(params, arch, input, k, ds, chunk_size)?;
    let predicted = argmax_rows(&assign);
    Ok(ClusteringResult {
        predicted,
        truth: ds.labels_usize(),
        k,
    })
}

pub fn argmax_rows(assign: &Array2<f64>) -> Vec<usize> {
    assign
        .rows()
        .into_iter()
        .map(|r| {
            let mut best = 0;
            for (j, &v) in r.iter().enumerate() {
                if v > r[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Accuracy statistics over the runs of one configuration.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunSummary {
    pub n_runs: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub best: f64,
    /// Accuracy of the loss-selected run (unsupervised model selection).
    pub selected: f64,
    pub selected_run_index: usize,
    pub per_run: Vec<f64>,
}

/// Mean / population-std / best over per-run accuracies.
pub fn summarize_accuracies(per_run: &[f64], selected_pos: usize, run_indices: &[usize]) -> RunSummary {
    let n = per_run.len();
    let mean = per_run.iter().sum::<f64>() / n as f64;
    let var = per_run.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n as f64;
    let best = per_run.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    RunSummary {
        n_runs: n,
        mean,
        std: var.sqrt(),
        best,
        selected: per_run[selected_pos],
        selected_run_index: run_indices[selected_pos],
        per_run: per_run.to_vec(),
    }
}

/// Evaluates every run's final parameters on the full labeled dataset.
pub fn aggregate_runs(
    cfg: &TrainConfig,
    outputs: &[TrainOutput],
    best_pos: usize,
    ds: &Dataset,
) -> Result<RunSummary, TrainError> {
    if outputs.is_empty() {
        return Err(TrainError::BadConfig("no runs to aggregate".into()));
    }
    let truth = ds
        .labels_usize()
        .ok_or_else(|| TrainError::BadConfig("dataset has no labels".into()))?;
    let input = ds.input_meta();
    let arch = cfg.resolve_architecture(&input);
    let mut per_run = Vec::with_capacity(outputs.len());
    let mut run_indices = Vec::with_capacity(outputs.len());
    for out in outputs {
        let result = predict_dataset(&out.params, &arch, &input, ds.k(), ds, cfg.batch_size)?;
        per_run.push(hungarian_accuracy(&result.predicted, &truth, ds.k())?);
        run_indices.push(out.record.run_index);
    }
    Ok(summarize_accuracies(&per_run, best_pos, &run_indices))
}

/// Accuracy and NMI of one parameter set on a labeled dataset.
pub fn evaluate_params(
    params: &ModelParams,
    arch: &Architecture,
    input: &InputMeta,
    k: usize,
    ds: &Dataset,
    chunk_size: usize,
) -> Result<(f64, f64), TrainError> {
    let truth = ds
        .labels_usize()
        .ok_or_else(|| TrainError::BadConfig("dataset has no labels".into()))?;
    let result = predict_dataset(params, arch, input, k, ds, chunk_size)?;
    let acc = hungarian_accuracy(&result.predicted, &truth, k)?;
    let mi = nmi(&result.predicted, &truth)?;
    Ok((acc, mi))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Lambda,
    RelSigma,
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SweepParam::Lambda => write!(f, "lambda"),
            SweepParam::RelSigma => write!(f, "rel_sigma"),
        }
    }
}

impl std::str::FromStr for SweepParam {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lambda" => Ok(SweepParam::Lambda),
            "rel_sigma" => Ok(SweepParam::RelSigma),
            other => Err(format!("unknown sweep parameter {other:?} (lambda|rel_sigma)")),
        }
    }
}

/// Applies one swept value to a copy of the base configuration.
pub fn apply_sweep_value(
    base: &TrainConfig,
    param: SweepParam,
    value: f64,
) -> Result<TrainConfig, TrainError> {
    let mut cfg = base.clone();
    match param {
        SweepParam::Lambda => {
            if value < 0.0 || !value.is_finite() {
                return Err(TrainError::BadConfig(format!("lambda {value} invalid")));
            }
            cfg.lambda = value;
        }
        SweepParam::RelSigma => {
            if !(value > 0.0) || !value.is_finite() {
                return Err(TrainError::BadConfig(format!("rel_sigma {value} invalid")));
            }
            cfg.kernel.rel_sigma = value;
        }
    }
    Ok(cfg)
}

/// One sweep cell: the trained runs and their summary, or the error that
/// marked the cell failed.
pub struct SweepCell {
    pub value: f64,
    pub run: Option<MultiRun>,
    pub summary: Option<RunSummary>,
    pub error: Option<String>,
}

/// Trains one configuration per value, reusing the base seed for every cell.
/// A failed cell is recorded, not fatal.
pub fn sweep(
    base: &TrainConfig,
    ds: &Dataset,
    param: SweepParam,
    values: &[f64],
) -> Result<Vec<SweepCell>, TrainError> {
    if values.is_empty() {
        return Err(TrainError::BadConfig("sweep needs at least one value".into()));
    }
    let mut cells = Vec::with_capacity(values.len());
    for &value in values {
        let outcome = apply_sweep_value(base, param, value).and_then(|cfg| {
            let run = train_multi(&cfg, ds)?;
            let summary = aggregate_runs(&cfg, &run.outputs, run.best, ds)?;
            Ok((run, summary))
        });
        match outcome {
            Ok((run, summary)) => cells.push(SweepCell {
                value,
                run: Some(run),
                summary: Some(summary),
                error: None,
            }),
            Err(e) => cells.push(SweepCell {
                value,
                run: None,
                summary: None,
                error: Some(e.to_string()),
            }),
        }
    }
    Ok(cells)
}

/// CSV rendering of a sweep table (`value,mean,std,best,n_runs,error`).
pub fn sweep_csv(cells: &[SweepCell]) -> String {
    let mut out = String::from("value,mean,std,best,n_runs,error\n");
    for c in cells {
        match &c.summary {
            Some(s) => out.push_str(&format!(
                "{},{},{},{},{},\n",
                c.value, s.mean, s.std, s.best, s.n_runs
            )),
            None => out.push_str(&format!(
                "{},,,,,{}\n",
                c.value,
                c.error.as_deref().unwrap_or("failed")
            )),
        }
    }
    out
}

/// JSON rendering of a sweep table.
pub fn sweep_json(param: SweepParam, cells: &[SweepCell]) -> serde_json::Value {
    let rows: Vec<serde_json::Value> = cells
        .iter()
        .map(|c| match &c.summary {
            Some(s) => serde_json::json!({
                "value": c.value,
                "mean": s.mean,
                "std": s.std,
                "best": s.best,
                "n_runs": s.n_runs,
            }),
            None => serde_json::json!({
                "value": c.value,
                "error": c.error,
            }),
        })
        .collect();
    serde_json::json!({ "param": param.to_string(), "cells": rows })
}
