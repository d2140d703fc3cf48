//! Sweep the companion weight λ and print the accuracy table. Every cell
//! reuses the same base seed, so rows differ only in λ.
//!
//!     cargo run --release --example lambda_sweep

use dtkc::data::make_synthetic_sequences;
use dtkc::evaluate::{sweep, sweep_csv, SweepParam};
use dtkc::train::TrainConfig;

fn main() {
    let ds = make_synthetic_sequences(3, 20, 2, (12, 20), 4).unwrap();
    let cfg = TrainConfig {
        batch_size: 60,
        epochs: 10,
        n_runs: 3,
        seed: 17,
        ..TrainConfig::default()
    };

    let values = [0.0, 0.01, 0.1];
    println!("sweeping lambda over {values:?} ({} runs per cell) ...", cfg.n_runs);
    let cells = sweep(&cfg, &ds, SweepParam::Lambda, &values).unwrap();
    print!("{}", sweep_csv(&cells));
    println!("\nthe λ = 0 row is the plain clustering baseline (no companions).");
}
