//! End-to-end image clustering on synthetic blobs: train a small CNN with
//! the multi-run protocol, select the best run by loss (no labels), then
//! score it against the ground truth and export a cluster grid.
//!
//!     cargo run --release --example train_blobs

use dtkc::data::make_synthetic_blob_images;
use dtkc::diagnostics::export_cluster_grid;
use dtkc::evaluate::aggregate_runs;
use dtkc::net::{Architecture, BackboneSpec, ConvBlock};
use dtkc::train::{train_multi, TrainConfig};

fn main() {
    let ds = make_synthetic_blob_images(3, 40, 16, 1).unwrap();
    let cfg = TrainConfig {
        batch_size: 60,
        epochs: 15,
        n_runs: 3,
        seed: 7,
        lambda: 0.0,
        architecture: Some(Architecture {
            backbone: BackboneSpec::Conv {
                blocks: vec![
                    ConvBlock::new(6, 5),
                    ConvBlock::new(12, 5),
                ],
            },
            hidden_units: 24,
        }),
        ..TrainConfig::default()
    };

    println!("training {} runs × {} epochs on {} blob images ...", cfg.n_runs, cfg.epochs, ds.n());
    let multi = train_multi(&cfg, &ds).unwrap();
    for out in &multi.outputs {
        println!(
            "  run {}: final loss {:.4} ({:.1}s)",
            out.record.run_index,
            out.record.final_total_loss(),
            out.record.wall_clock_secs
        );
    }
    println!("loss-selected run: {}", multi.best_output().record.run_index);

    let summary = aggregate_runs(&cfg, &multi.outputs, multi.best, &ds).unwrap();
    println!(
        "accuracy: mean {:.3} ± {:.3}, best {:.3}, selected {:.3}",
        summary.mean, summary.std, summary.best, summary.selected
    );

    let input = ds.input_meta();
    let arch = cfg.resolve_architecture(&input);
    let out_path = std::env::temp_dir().join("dtkc_blob_grid.pgm");
    export_cluster_grid(
        &multi.best_output().params,
        &arch,
        &input,
        ds.k(),
        &ds,
        cfg.batch_size,
        &out_path,
    )
    .unwrap();
    println!("cluster grid written to {}", out_path.display());
}
