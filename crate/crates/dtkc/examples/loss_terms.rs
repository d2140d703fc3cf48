//! The three clustering loss terms on hand-picked assignment matrices.
//!
//!     cargo run --example loss_terms

use dtkc::kernel::gaussian_kernel_matrix;
use dtkc::loss::{ddc_loss, AssignmentMatrix};
use ndarray::{array, Array2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

fn main() {
    let n = 6;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let rows = Array2::from_shape_fn((n, 4), |_| rng.gen_range(-1.0..1.0));
    let kernel = gaussian_kernel_matrix(&rows, 0.8).unwrap();

    let report = |name: &str, a: &AssignmentMatrix| {
        let b = ddc_loss(a, &kernel).unwrap();
        println!(
            "{name:<22} l1 = {:.4}  l2 = {:.4}  l3 = {:.4}  total = {:.4}",
            b.l1_separation, b.l2_orthogonality, b.l3_corner, b.total
        );
    };

    // uniform rows: the worst case, every term at its maximum
    report("uniform (1/k)", &AssignmentMatrix::uniform(n, 3));

    // hard balanced assignment
    report("hard balanced", &AssignmentMatrix::hard(&[0, 1, 2, 0, 1, 2], 3));

    // a soft assignment leaning toward the hard one
    let soft = array![
        [0.8, 0.1, 0.1],
        [0.1, 0.8, 0.1],
        [0.1, 0.1, 0.8],
        [0.7, 0.2, 0.1],
        [0.15, 0.7, 0.15],
        [0.1, 0.2, 0.7],
    ];
    report("soft", &AssignmentMatrix::new(soft).unwrap());

    println!("\nlower is better; training pushes l1 (cluster separation),");
    println!("l2 (assignment orthogonality) and l3 (corner pull) down jointly.");
}
