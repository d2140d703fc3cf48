//! Input-gradient importance maps: which pixels drive each layer's
//! companion objective (and the main loss) after a quick training run.
//!
//!     cargo run --release --example importance_maps

use dtkc::data::{make_synthetic_blob_images, DataPayload};
use dtkc::diagnostics::{importance_maps, write_pgm, LossSelect};
use dtkc::net::{Architecture, BackboneSpec, ConvBlock};
use dtkc::train::{train_multi, TrainConfig};
use ndarray::s;

fn main() {
    let ds = make_synthetic_blob_images(3, 30, 16, 9).unwrap();
    let cfg = TrainConfig {
        batch_size: 45,
        epochs: 10,
        n_runs: 1,
        seed: 23,
        lambda: 0.1,
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
    println!("training briefly with λ = {} ...", cfg.lambda);
    let multi = train_multi(&cfg, &ds).unwrap();
    let params = &multi.best_output().params;

    let DataPayload::Images(images) = &ds.payload else {
        unreachable!()
    };
    let batch = images.slice(s![..6, .., .., ..]).to_owned();
    let input = ds.input_meta();
    let arch = cfg.resolve_architecture(&input);
    let out_dir = std::env::temp_dir().join("dtkc_importance");
    std::fs::create_dir_all(&out_dir).unwrap();

    for (tag, select) in [
        ("layer0", LossSelect::Companion(0)),
        ("layer1", LossSelect::Companion(1)),
        ("main", LossSelect::Main),
    ] {
        let maps = importance_maps(
            params,
            &arch,
            &input,
            ds.k(),
            &batch,
            select,
            &cfg.companion_weights(),
            &cfg.kernel,
        )
        .unwrap();
        for map in &maps {
            let path = out_dir.join(format!("{tag}_obs{}.pgm", map.observation));
            write_pgm(&path, &map.values).unwrap();
        }
        let mean_mass: f64 =
            maps.iter().map(|m| m.values.sum()).sum::<f64>() / maps.len() as f64;
        println!("{tag:<7} mean normalized saliency mass per image: {mean_mass:.2}");
    }
    println!("maps written to {}", out_dir.display());
}
