//! Tensor kernels compare rank-3 feature maps through the subspaces spanned
//! by their mode unfoldings, which makes them invariant to rescaling.
//!
//!     cargo run --example tensor_kernel

use dtkc::kernel::{tensor_kernel_matrix, KernelConfig};
use dtkc::tensor::DenseTensor;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

fn random_map(rng: &mut ChaCha8Rng, shape: [usize; 3]) -> DenseTensor {
    let numel: usize = shape.iter().product();
    DenseTensor::new(
        shape.to_vec(),
        (0..numel).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let shape = [4, 6, 6]; // channels × height × width

    let a = random_map(&mut rng, shape);
    let b = random_map(&mut rng, shape);
    // c is a rescaled copy of a: same subspaces, so κ(a, c) = 1
    let c = DenseTensor::new(
        shape.to_vec(),
        a.values().iter().map(|v| -3.0 * v).collect(),
    )
    .unwrap();

    let batch = vec![a, b, c];
    let kernel = tensor_kernel_matrix(&batch, 0.8, &KernelConfig::default()).unwrap();

    println!("tensor kernel over [a, b, -3a]:");
    for i in 0..3 {
        let row: Vec<String> = (0..3)
            .map(|j| format!("{:7.4}", kernel.entries()[(i, j)]))
            .collect();
        println!("  [{}]", row.join(", "));
    }
    println!(
        "scale invariance: κ(a, -3a) = {:.12}",
        kernel.entries()[(0, 2)]
    );
}
