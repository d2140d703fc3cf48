//! Objective-function mismatch: how well does the unsupervised loss track
//! labeled accuracy over training? A strongly negative correlation means
//! the loss is a good proxy for clustering quality.
//!
//!     cargo run --release --example ofm_report

use dtkc::data::make_synthetic_blob_images;
use dtkc::diagnostics::ofm_curves;
use dtkc::net::{Architecture, BackboneSpec, ConvBlock};
use dtkc::train::{train_one_run, TrainConfig};

fn main() {
    let ds = make_synthetic_blob_images(3, 30, 16, 6).unwrap();
    let cfg = TrainConfig {
        batch_size: 90,
        epochs: 18,
        n_runs: 1,
        seed: 31,
        lambda: 0.0,
        architecture: Some(Architecture {
            backbone: BackboneSpec::Conv {
                blocks: vec![
                    ConvBlock::new(4, 5),
                    ConvBlock::new(8, 5),
                ],
            },
            hidden_units: 16,
        }),
        ..TrainConfig::default()
    };

    let out = train_one_run(&cfg, &ds, 0, cfg.seed).unwrap();
    match ofm_curves(&out.record) {
        Ok(report) => {
            println!("epoch   loss     accuracy");
            for ((e, l), a) in report
                .epochs
                .iter()
                .zip(report.loss.iter())
                .zip(report.accuracy.iter())
            {
                println!("{e:>5}   {l:.4}   {a:.3}");
            }
            println!("\nloss-accuracy Pearson correlation: {:.4}", report.correlation);
            println!("(negative = loss decreases as accuracy increases: low mismatch)");
        }
        Err(e) => println!("no mismatch report: {e}"),
    }
}
