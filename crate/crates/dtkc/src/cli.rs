//! Command-line driver. The binary is a thin shim over [`run`].
//!
//! Subcommands: `train`, `eval`, `sweep`, `viz-importance`, `viz-clusters`,
//! `ofm`, `make-data`. Exit codes: 0 success, 2 usage error, 1 runtime
//! error. The `DTKC_SEED` environment variable overrides the config seed.

use crate::checkpoint::{load_checkpoint, save_checkpoint, CheckpointModelMeta};
use crate::data::{load_dataset, make_synthetic_blob_images, make_synthetic_sequences, store_dataset, Dataset};
use crate::diagnostics::{export_cluster_grid, importance_maps, ofm_curves, write_pgm, LossSelect};
use crate::evaluate::{aggregate_runs, evaluate_params, sweep, sweep_csv, sweep_json, SweepCell, SweepParam};
use crate::net::InputMeta;
use crate::train::{train_multi, MultiRun, RunRecord, TrainConfig};
use anyhow::{bail, Context, Result};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use ndarray::Array4;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "dtkc",
    about = "Deep tensor kernel clustering: training, evaluation, sweeps and diagnostics",
    long_about = None,
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train with the multi-run protocol and write checkpoints + run records
    Train(TrainArgs),
    /// Evaluate a checkpoint on a labeled dataset (prints accuracy/NMI JSON)
    Eval(EvalArgs),
    /// Sweep lambda or rel_sigma over a list of values
    Sweep(SweepArgs),
    /// Export input-gradient importance maps (PGM + JSON)
    VizImportance(VizImportanceArgs),
    /// Export a cluster membership grid image
    VizClusters(VizClustersArgs),
    /// Loss-accuracy mismatch report for a run record
    Ofm(OfmArgs),
    /// Generate synthetic datasets
    MakeData(MakeDataArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// JSON config mirroring TrainConfig
    #[arg(long)]
    config: PathBuf,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint directory
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset directory (labels required)
    #[arg(long)]
    data: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    /// Swept parameter: lambda | rel_sigma
    #[arg(long)]
    param: SweepParam,
    /// Comma-separated values
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<f64>,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct VizImportanceArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Companion layer index, or "main" for the main clustering loss
    #[arg(long)]
    layer: String,
    #[arg(long)]
    out: PathBuf,
    /// Number of observations to render (from the head of the dataset)
    #[arg(long, default_value_t = 8)]
    count: usize,
}

#[derive(Args)]
struct VizClustersArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Output PGM file
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct OfmArgs {
    /// Path to a run record JSON file
    #[arg(long)]
    run: PathBuf,
}

#[derive(Args)]
struct MakeDataArgs {
    #[command(subcommand)]
    kind: MakeDataKind,
}

#[derive(Subcommand)]
enum MakeDataKind {
    /// Gaussian-blob images, one blob location per cluster
    Blobs {
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 60)]
        per_cluster: usize,
        #[arg(long, default_value_t = 16)]
        side: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Noisy sinusoid sequences, one frequency per cluster
    Seqs {
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 40)]
        per_cluster: usize,
        #[arg(long, default_value_t = 3)]
        dim: usize,
        #[arg(long, default_value_t = 16)]
        min_len: usize,
        #[arg(long, default_value_t = 28)]
        max_len: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Entry point used by the binary; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    0
                }
                _ => {
                    eprint!("{e}");
                    2
                }
            };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::VizImportance(args) => cmd_viz_importance(args),
        Command::VizClusters(args) => cmd_viz_clusters(args),
        Command::Ofm(args) => cmd_ofm(args),
        Command::MakeData(args) => cmd_make_data(args),
    }
}

/// Loads a config file, applying the `DTKC_SEED` override when set.
fn load_config(path: &Path) -> Result<TrainConfig> {
    let body = fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let mut cfg = TrainConfig::from_json_str(&body)?;
    if let Ok(seed) = std::env::var("DTKC_SEED") {
        cfg.seed = seed
            .parse::<u64>()
            .with_context(|| format!("DTKC_SEED={seed} is not a u64"))?;
    }
    Ok(cfg)
}

fn load_config_dataset(cfg: &TrainConfig, config_path: &Path) -> Result<Dataset> {
    if cfg.dataset.is_empty() {
        bail!("config has no dataset path");
    }
    // dataset paths resolve relative to the config file
    let base = config_path.parent().unwrap_or_else(|| Path::new("."));
    let candidate = base.join(&cfg.dataset);
    let dir = if candidate.join("meta.json").exists() {
        candidate
    } else {
        PathBuf::from(&cfg.dataset)
    };
    Ok(load_dataset(&dir)?)
}

fn checkpoint_meta(cfg: &TrainConfig, ds: &Dataset) -> CheckpointModelMeta {
    let input = ds.input_meta();
    CheckpointModelMeta {
        architecture: cfg.resolve_architecture(&input),
        input,
        k: ds.k(),
        seed: cfg.seed,
        batch_size: cfg.batch_size,
        kernel: cfg.kernel.clone(),
        lambda: cfg.lambda,
        per_layer_enabled: cfg.per_layer_enabled.clone(),
    }
}

/// Writes run records, checkpoints and the summary for a finished multi-run.
fn write_multirun(
    cfg: &TrainConfig,
    ds: &Dataset,
    multi: &mut MultiRun,
    out: &Path,
) -> Result<serde_json::Value> {
    let runs_dir = out.join("runs");
    let ckpt_dir = out.join("checkpoints");
    fs::create_dir_all(&runs_dir)?;
    fs::create_dir_all(&ckpt_dir)?;

    let meta = checkpoint_meta(cfg, ds);
    for output in multi.outputs.iter_mut() {
        let rel = format!("checkpoints/run_{}", output.record.run_index);
        save_checkpoint(&output.params, &meta, &out.join(&rel))?;
        output.record.checkpoint = Some(rel);
    }
    let mut timings = Vec::new();
    for output in &multi.outputs {
        let path = runs_dir.join(format!("run_{}.json", output.record.run_index));
        fs::write(&path, serde_json::to_string_pretty(&output.record)?)?;
        timings.push(serde_json::json!({
            "run_index": output.record.run_index,
            "wall_clock_secs": output.record.wall_clock_secs,
        }));
    }
    // wall-clock is non-deterministic, so it lives outside the records
    fs::write(
        out.join("timing.json"),
        serde_json::to_string_pretty(&serde_json::Value::Array(timings))?,
    )?;

    let accuracy = if ds.labels_usize().is_some() {
        Some(aggregate_runs(cfg, &multi.outputs, multi.best, ds)?)
    } else {
        None
    };
    let summary = serde_json::json!({
        "n_runs": cfg.n_runs,
        "seed": cfg.seed,
        "lambda": cfg.lambda,
        "best_run_index": multi.best_output().record.run_index,
        "final_losses": multi.outputs.iter().map(|o| serde_json::json!({
            "run_index": o.record.run_index,
            "final_loss": o.record.final_total_loss(),
        })).collect::<Vec<_>>(),
        "failures": multi.failures,
        "accuracy": accuracy,
    });
    fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let cfg = load_config(&args.config)?;
    let ds = load_config_dataset(&cfg, &args.config)?;
    fs::create_dir_all(&args.out)?;
    fs::write(
        args.out.join("config.json"),
        serde_json::to_string_pretty(&cfg)?,
    )?;
    let mut multi = train_multi(&cfg, &ds)?;
    let summary = write_multirun(&cfg, &ds, &mut multi, &args.out)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let (params, meta) = load_checkpoint(&args.checkpoint)?;
    let ds = load_dataset(&args.data)?;
    if ds.input_meta() != meta.input {
        bail!(
            "dataset geometry {:?} does not match checkpoint {:?}",
            ds.input_meta(),
            meta.input
        );
    }
    let (accuracy, nmi) = evaluate_params(
        &params,
        &meta.architecture,
        &meta.input,
        meta.k,
        &ds,
        meta.batch_size,
    )?;
    let out = serde_json::json!({
        "accuracy": accuracy,
        "nmi": nmi,
        "n": ds.n(),
        "k": meta.k,
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let cfg = load_config(&args.config)?;
    let ds = load_config_dataset(&cfg, &args.config)?;
    fs::create_dir_all(&args.out)?;
    let cells = sweep(&cfg, &ds, args.param, &args.values)?;

    for cell in &cells {
        if let Some(run) = &cell.run {
            let cell_cfg = crate::evaluate::apply_sweep_value(&cfg, args.param, cell.value)?;
            let cell_dir = args.out.join(format!("cells/{}_{}", args.param, cell.value));
            fs::create_dir_all(&cell_dir)?;
            let mut run_clone = run.clone();
            write_multirun(&cell_cfg, &ds, &mut run_clone, &cell_dir)?;
        }
    }

    fs::write(args.out.join("sweep.csv"), sweep_csv(&cells))?;
    fs::write(
        args.out.join("sweep.json"),
        serde_json::to_string_pretty(&sweep_json(args.param, &cells))?,
    )?;
    print_sweep(&cells);
    Ok(())
}

fn print_sweep(cells: &[SweepCell]) {
    println!("{}", sweep_csv(cells).trim_end());
}

fn cmd_viz_importance(args: VizImportanceArgs) -> Result<()> {
    let (params, meta) = load_checkpoint(&args.checkpoint)?;
    let ds = load_dataset(&args.data)?;
    let select = match args.layer.as_str() {
        "main" => LossSelect::Main,
        other => LossSelect::Companion(
            other
                .parse::<usize>()
                .with_context(|| format!("--layer must be 'main' or an index, got {other:?}"))?,
        ),
    };
    let crate::data::DataPayload::Images(images) = &ds.payload else {
        bail!("importance maps require an image dataset");
    };
    let count = args.count.max(2).min(ds.n());
    let batch: Array4<f64> = images.slice(ndarray::s![..count, .., .., ..]).to_owned();
    let weights = crate::objective::CompanionWeights {
        lambda: 1.0, // only the enable switches matter here
        per_layer_enabled: meta.per_layer_enabled.clone(),
    };
    let maps = importance_maps(
        &params,
        &meta.architecture,
        &meta.input,
        meta.k,
        &batch,
        select,
        &weights,
        &meta.kernel,
    )?;
    fs::create_dir_all(&args.out)?;
    let layer_tag = match select {
        LossSelect::Main => "main".to_string(),
        LossSelect::Companion(l) => format!("layer{l}"),
    };
    let mut report = Vec::new();
    for map in &maps {
        let path = args.out.join(format!("{layer_tag}_obs{}.pgm", map.observation));
        write_pgm(&path, &map.values)?;
        report.push(serde_json::json!({
            "observation": map.observation,
            "file": path.file_name().unwrap().to_string_lossy(),
            "values": map.values.rows().into_iter()
                .map(|r| r.to_vec()).collect::<Vec<_>>(),
        }));
    }
    fs::write(
        args.out.join("importance.json"),
        serde_json::to_string_pretty(&serde_json::json!({
            "layer": layer_tag,
            "maps": report,
        }))?,
    )?;
    println!("wrote {} maps to {}", maps.len(), args.out.display());
    Ok(())
}

fn cmd_viz_clusters(args: VizClustersArgs) -> Result<()> {
    let (params, meta) = load_checkpoint(&args.checkpoint)?;
    let ds = load_dataset(&args.data)?;
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    export_cluster_grid(
        &params,
        &meta.architecture,
        &meta.input,
        meta.k,
        &ds,
        meta.batch_size,
        &args.out,
    )?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_ofm(args: OfmArgs) -> Result<()> {
    let body = fs::read_to_string(&args.run)
        .with_context(|| format!("reading run record {}", args.run.display()))?;
    let record: RunRecord = serde_json::from_str(&body)
        .with_context(|| format!("parsing run record {}", args.run.display()))?;
    let report = ofm_curves(&record)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn cmd_make_data(args: MakeDataArgs) -> Result<()> {
    let (ds, out) = match args.kind {
        MakeDataKind::Blobs {
            k,
            per_cluster,
            side,
            seed,
            out,
        } => (make_synthetic_blob_images(k, per_cluster, side, seed)?, out),
        MakeDataKind::Seqs {
            k,
            per_cluster,
            dim,
            min_len,
            max_len,
            seed,
            out,
        } => (
            make_synthetic_sequences(k, per_cluster, dim, (min_len, max_len), seed)?,
            out,
        ),
    };
    store_dataset(&ds, &out)?;
    let kind = match ds.input_meta() {
        InputMeta::Image { .. } => "image",
        InputMeta::Sequence { .. } => "sequence",
    };
    println!(
        "wrote {kind} dataset: n={}, k={} at {}",
        ds.n(),
        ds.k(),
        out.display()
    );
    Ok(())
}
