//! Recurrent clustering of variable-length sequences with companion
//! objectives on each layer's last hidden states (Gaussian kernels).
//!
//!     cargo run --release --example train_sequences

use dtkc::data::make_synthetic_sequences;
use dtkc::evaluate::aggregate_runs;
use dtkc::train::{train_multi, TrainConfig};

fn main() {
    // four clusters of noisy sinusoids with distinct frequencies
    let ds = make_synthetic_sequences(4, 25, 3, (16, 28), 2).unwrap();
    let mut cfg = TrainConfig {
        batch_size: 100,
        epochs: 15,
        n_runs: 3,
        seed: 11,
        lambda: 0.01,
        architecture: None, // default: two-layer bidirectional recurrent backbone
        ..TrainConfig::default()
    };

    println!(
        "training the recurrent model with λ = {} on {} sequences ...",
        cfg.lambda,
        ds.n()
    );
    let multi = train_multi(&cfg, &ds).unwrap();
    let with_companions = aggregate_runs(&cfg, &multi.outputs, multi.best, &ds).unwrap();

    cfg.lambda = 0.0;
    let plain = train_multi(&cfg, &ds).unwrap();
    let baseline = aggregate_runs(&cfg, &plain.outputs, plain.best, &ds).unwrap();

    println!("accuracy over {} runs:", cfg.n_runs);
    println!(
        "  λ = 0.01 : mean {:.3} ± {:.3}, best {:.3}",
        with_companions.mean, with_companions.std, with_companions.best
    );
    println!(
        "  λ = 0    : mean {:.3} ± {:.3}, best {:.3}",
        baseline.mean, baseline.std, baseline.best
    );

    // per-layer companion values of the selected run's last epoch
    if let Some(last) = multi.best_output().record.history.last() {
        for c in &last.companions {
            println!(
                "  layer {} companion at the last epoch: l1 = {:.4}, l3 = {:.4}",
                c.layer_index, c.l1, c.l3
            );
        }
    }
}
