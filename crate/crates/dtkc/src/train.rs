//! Mini-batch training with adaptive-moment updates, the multi-run protocol
//! with unsupervised best-by-loss selection, and per-epoch history capture.
//!
//! Labels never reach the gradient path: the objective builders accept none.
//! The optional per-epoch accuracy in the history is computed evaluation-side
//! on the fixed evaluation batch.

use crate::checkpoint::CheckpointError;
use crate::data::{DataPayload, Dataset};
use crate::graph::Graph;
use crate::kernel::{KernelConfig, KernelError};
use crate::metrics::{hungarian_accuracy, MetricError};
use crate::net::{
    build_cnn_forward, build_gru_forward, default_cnn_architecture, default_rnn_architecture,
    Architecture, ForwardNodes, InputMeta, ModelParams, NetError, ParamNodes, SequenceBatch,
};
use crate::objective::{
    breakdown_from_nodes, build_total_objective, CompanionTerm, CompanionWeights,
    ObjectiveBreakdown, ObjectiveError, SigmaSet,
};
use ndarray::{Array4, ArrayD, Axis};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite loss at run {run_index}, epoch {epoch}, step {step}")]
    NonFiniteLoss {
        run_index: usize,
        epoch: usize,
        step: usize,
    },
    #[error("invalid training configuration: {0}")]
    BadConfig(String),
    #[error("all {0} runs failed")]
    AllRunsFailed(usize),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    #[serde(default = "d_beta1")]
    pub beta1: f64,
    #[serde(default = "d_beta2")]
    pub beta2: f64,
    #[serde(default = "d_adam_eps")]
    pub epsilon: f64,
}

fn d_beta1() -> f64 {
    0.9
}
fn d_beta2() -> f64 {
    0.999
}
fn d_adam_eps() -> f64 {
    1e-8
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            beta1: d_beta1(),
            beta2: d_beta2(),
            epsilon: d_adam_eps(),
        }
    }
}

/// All experiment knobs. Mirrors the JSON config file field-for-field;
/// unknown keys are a hard error.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "d_batch_size")]
    pub batch_size: usize,
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default = "d_learning_rate")]
    pub learning_rate: f64,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default = "d_n_runs")]
    pub n_runs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub lambda: f64,
    /// Companion ablation switches; layers without an entry are enabled.
    #[serde(default)]
    pub per_layer_enabled: Vec<bool>,
    #[serde(default)]
    pub kernel: KernelConfig,
    /// Omitted: a default backbone is chosen from the dataset kind.
    #[serde(default)]
    pub architecture: Option<Architecture>,
    /// Dataset directory (used by the command-line driver).
    #[serde(default)]
    pub dataset: String,
}

fn d_batch_size() -> usize {
    120
}
fn d_epochs() -> usize {
    100
}
fn d_learning_rate() -> f64 {
    1e-3
}
fn d_n_runs() -> usize {
    20
}

impl Default for TrainConfig {
    fn default() -> Self {
        serde_json::from_str("{}").unwrap()
    }
}

impl TrainConfig {
    pub fn from_json_str(s: &str) -> Result<Self, TrainError> {
        let cfg: TrainConfig =
            serde_json::from_str(s).map_err(|e| TrainError::BadConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size < 2 {
            return Err(TrainError::BadConfig(
                "batch_size must be at least 2 (kernels need pairs)".into(),
            ));
        }
        if self.n_runs < 1 {
            return Err(TrainError::BadConfig("n_runs must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(TrainError::BadConfig("learning_rate must be positive".into()));
        }
        if self.lambda < 0.0 || !self.lambda.is_finite() {
            return Err(TrainError::BadConfig("lambda must be nonnegative".into()));
        }
        Ok(())
    }

    /// The architecture to train: the configured one, or the default for the
    /// dataset kind.
    pub fn resolve_architecture(&self, input: &InputMeta) -> Architecture {
        self.architecture.clone().unwrap_or_else(|| match input {
            InputMeta::Image { .. } => default_cnn_architecture(),
            InputMeta::Sequence { .. } => default_rnn_architecture(),
        })
    }

    pub fn companion_weights(&self) -> CompanionWeights {
        CompanionWeights {
            lambda: self.lambda,
            per_layer_enabled: self.per_layer_enabled.clone(),
        }
    }
}

/// Loss and diagnostic values recorded after one epoch on the fixed
/// evaluation batch.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub total: f64,
    pub main_l1: f64,
    pub main_l2: f64,
    pub main_l3: f64,
    pub companions: Vec<CompanionTerm>,
    pub accuracy: Option<f64>,
}

/// History and bookkeeping of one training run. Serialization is
/// deterministic: wall-clock time stays in memory only.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_index: usize,
    pub seed: u64,
    pub checkpoint: Option<String>,
    pub history: Vec<EpochStats>,
    pub empty_column_warnings: u64,
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

impl RunRecord {
    pub fn final_total_loss(&self) -> f64 {
        self.history.last().map(|e| e.total).unwrap_or(f64::INFINITY)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub record: RunRecord,
    pub params: ModelParams,
}

/// One assembled mini-batch.
pub enum BatchInput {
    Images(Array4<f64>),
    Sequences(SequenceBatch),
}

/// Gathers the rows of `ds` at `idx` into a batch.
pub fn batch_from_indices(ds: &Dataset, idx: &[usize]) -> BatchInput {
    match &ds.payload {
        DataPayload::Images(images) => {
            let mut out = Array4::zeros((
                idx.len(),
                images.dim().1,
                images.dim().2,
                images.dim().3,
            ));
            for (row, &i) in idx.iter().enumerate() {
                out.index_axis_mut(Axis(0), row)
                    .assign(&images.index_axis(Axis(0), i));
            }
            BatchInput::Images(out)
        }
        DataPayload::Sequences(seqs) => BatchInput::Sequences(seqs.select(idx)),
    }
}

/// Builds the forward graph for a batch.
pub fn build_forward(
    g: &mut Graph,
    pnodes: &ParamNodes,
    batch: &BatchInput,
    arch: &Architecture,
    input: &InputMeta,
    k: usize,
    differentiable_input: bool,
) -> Result<ForwardNodes, NetError> {
    match batch {
        BatchInput::Images(images) => {
            let x = if differentiable_input {
                g.leaf(images.clone().into_dyn())
            } else {
                g.constant(images.clone().into_dyn())
            };
            build_cnn_forward(g, pnodes, x, arch, input, k)
        }
        BatchInput::Sequences(seqs) => build_gru_forward(g, pnodes, seqs, arch, k),
    }
}

struct Adam {
    m: Vec<ArrayD<f64>>,
    v: Vec<ArrayD<f64>>,
    t: u64,
    lr: f64,
    cfg: OptimizerConfig,
}

impl Adam {
    fn new(params: &ModelParams, lr: f64, cfg: OptimizerConfig) -> Self {
        let shapes: Vec<ArrayD<f64>> = params
            .arrays()
            .iter()
            .map(|(_, a)| ArrayD::zeros(a.raw_dim()))
            .collect();
        Self {
            m: shapes.clone(),
            v: shapes,
            t: 0,
            lr,
            cfg,
        }
    }

    fn step(&mut self, params: &mut ModelParams, grads: &[Option<ArrayD<f64>>]) {
        self.t += 1;
        let b1 = self.cfg.beta1;
        let b2 = self.cfg.beta2;
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);
        for (i, (_, p)) in params.arrays_mut().iter_mut().enumerate() {
            let zero;
            let g = match &grads[i] {
                Some(g) => g,
                None => {
                    zero = ArrayD::zeros(p.raw_dim());
                    &zero
                }
            };
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            ndarray::Zip::from(&mut *m).and(g).for_each(|m, &g| {
                *m = b1 * *m + (1.0 - b1) * g;
            });
            ndarray::Zip::from(&mut *v).and(g).for_each(|v, &g| {
                *v = b2 * *v + (1.0 - b2) * g * g;
            });
            ndarray::Zip::from(p).and(&*m).and(&*v).for_each(|p, &m, &v| {
                let mhat = m / bc1;
                let vhat = v / bc2;
                *p -= self.lr * mhat / (vhat.sqrt() + self.cfg.epsilon);
            });
        }
    }
}

/// Evaluates the objective on a batch without updating anything.
pub fn evaluate_batch(
    params: &ModelParams,
    batch: &BatchInput,
    arch: &Architecture,
    input: &InputMeta,
    k: usize,
    weights: &CompanionWeights,
    kcfg: &KernelConfig,
) -> Result<(ObjectiveBreakdown, Vec<usize>), TrainError> {
    let mut g = Graph::new();
    let pnodes = ParamNodes::insert(&mut g, params);
    let fwd = build_forward(&mut g, &pnodes, batch, arch, input, k, false)?;
    let sigmas = SigmaSet::from_forward(&g, &fwd, kcfg)?;
    let obj = build_total_objective(&mut g, &fwd, &sigmas, weights, kcfg)?;
    let breakdown = breakdown_from_nodes(&g, &obj, fwd.assign, weights.lambda);
    let assign = g.value(fwd.assign);
    let mut pred = Vec::with_capacity(assign.shape()[0]);
    for row in assign
        .view()
        .into_dimensionality::<ndarray::Ix2>()
        .unwrap()
        .rows()
    {
        let mut best = 0;
        for (j, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = j;
            }
        }
        pred.push(best);
    }
    Ok((breakdown, pred))
}

/// Runs one seeded training run: `epochs` passes of shuffled mini-batches
/// with adaptive-moment updates, recording history on a fixed evaluation
/// batch (the first `batch_size` observations in dataset order) after every
/// epoch. Single-threaded and deterministic per seed.
pub fn train_one_run(
    cfg: &TrainConfig,
    ds: &Dataset,
    run_index: usize,
    run_seed: u64,
) -> Result<TrainOutput, TrainError> {
    cfg.validate()?;
    let started = Instant::now();
    let n = ds.n();
    if n == 0 {
        return Err(TrainError::BadConfig("dataset is empty".into()));
    }
    if cfg.batch_size > n {
        return Err(TrainError::BadConfig(format!(
            "batch_size {} exceeds dataset size {n}",
            cfg.batch_size
        )));
    }
    let input = ds.input_meta();
    let arch = cfg.resolve_architecture(&input);
    let k = ds.k();
    let weights = cfg.companion_weights();

    let mut params = ModelParams::init(&arch, &input, k, run_seed)?;
    let mut adam = Adam::new(&params, cfg.learning_rate, cfg.optimizer.clone());
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(run_seed);
    shuffle_rng.set_stream(1);

    let eval_idx: Vec<usize> = (0..cfg.batch_size.min(n)).collect();
    let eval_batch = batch_from_indices(ds, &eval_idx);
    let eval_labels: Option<Vec<usize>> = ds
        .labels_usize()
        .map(|ls| eval_idx.iter().map(|&i| ls[i]).collect());

    let mut history: Vec<EpochStats> = Vec::with_capacity(cfg.epochs);
    let mut warnings: u64 = 0;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut shuffle_rng);
        let mut step = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                continue; // kernels need pairs
            }
            let batch = batch_from_indices(ds, chunk);
            let mut g = Graph::new();
            let pnodes = ParamNodes::insert(&mut g, &params);
            let fwd = build_forward(&mut g, &pnodes, &batch, &arch, &input, k, false)?;
            let sigmas = SigmaSet::from_forward(&g, &fwd, &cfg.kernel)?;
            let obj = build_total_objective(&mut g, &fwd, &sigmas, &weights, &cfg.kernel)?;
            warnings += obj.empty_column_warnings as u64;
            let total = g.scalar_value(obj.total);
            if !total.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    run_index,
                    epoch,
                    step,
                });
            }
            let grads = g.backward(obj.total);
            let collected: Vec<Option<ArrayD<f64>>> = pnodes
                .ids
                .iter()
                .map(|&id| grads.get(id).cloned())
                .collect();
            adam.step(&mut params, &collected);
            step += 1;
        }

        let (breakdown, pred) = evaluate_batch(
            &params,
            &eval_batch,
            &arch,
            &input,
            k,
            &weights,
            &cfg.kernel,
        )?;
        if !breakdown.total.is_finite() {
            return Err(TrainError::NonFiniteLoss {
                run_index,
                epoch,
                step,
            });
        }
        warnings += breakdown.main.empty_column_warnings as u64;
        let accuracy = match &eval_labels {
            Some(truth) => Some(hungarian_accuracy(&pred, truth, k)?),
            None => None,
        };
        history.push(EpochStats {
            epoch,
            total: breakdown.total,
            main_l1: breakdown.main.l1_separation,
            main_l2: breakdown.main.l2_orthogonality,
            main_l3: breakdown.main.l3_corner,
            companions: breakdown.companions,
            accuracy,
        });
    }

    Ok(TrainOutput {
        record: RunRecord {
            run_index,
            seed: run_seed,
            checkpoint: None,
            history,
            empty_column_warnings: warnings,
            wall_clock_secs: started.elapsed().as_secs_f64(),
        },
        params,
    })
}

/// Index of the run with the lowest final total loss; ties break to the
/// lower position. Runs with empty histories rank last.
pub fn select_best(records: &[RunRecord]) -> Option<usize> {
    if records.is_empty() {
        return None;
    }
    let mut best = 0usize;
    for (i, r) in records.iter().enumerate().skip(1) {
        if r.final_total_loss() < records[best].final_total_loss() {
            best = i;
        }
    }
    Some(best)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunFailure {
    pub run_index: usize,
    pub error: String,
}

#[derive(Debug, Clone)]
pub struct MultiRun {
    /// Successful runs, in run-index order.
    pub outputs: Vec<TrainOutput>,
    pub failures: Vec<RunFailure>,
    /// Position of the loss-selected run within `outputs`.
    pub best: usize,
}

impl MultiRun {
    pub fn best_output(&self) -> &TrainOutput {
        &self.outputs[self.best]
    }
}

/// Runs `n_runs` independent runs with seeds `seed + i` and selects the best
/// by final loss — labels are never consulted.
pub fn train_multi(cfg: &TrainConfig, ds: &Dataset) -> Result<MultiRun, TrainError> {
    cfg.validate()?;
    let mut outputs = Vec::new();
    let mut failures = Vec::new();
    for i in 0..cfg.n_runs {
        match train_one_run(cfg, ds, i, cfg.seed.wrapping_add(i as u64)) {
            Ok(out) => outputs.push(out),
            Err(e) => failures.push(RunFailure {
                run_index: i,
                error: e.to_string(),
            }),
        }
    }
    if outputs.is_empty() {
        return Err(TrainError::AllRunsFailed(cfg.n_runs));
    }
    let records: Vec<RunRecord> = outputs.iter().map(|o| o.record.clone()).collect();
    let best = select_best(&records).unwrap();
    Ok(MultiRun {
        outputs,
        failures,
        best,
    })
}
