//! The three-term divergence clustering loss.
//!
//! Given an assignment matrix A (rows on the probability simplex) and a
//! kernel matrix K, the loss is
//!
//!   total = l1 + l2 + l3
//!
//! where l1 is the averaged Cauchy-Schwarz ratio over cluster-column pairs of
//! A, l2 the normalized strictly-upper-triangular mass of AAᵀ, and l3 the
//! same CS ratio applied to the simplex-corner similarity matrix
//! M = [exp(−‖α_q − e_i‖²)].

use crate::kernel::KernelMatrix;
use ndarray::Array2;
use thiserror::Error;

/// Guard added under the square root of every CS denominator.
pub const CS_EPSILON: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("assignment matrix and kernel disagree on batch size: {0} vs {1}")]
    BatchMismatch(usize, usize),
    #[error("need at least {needed} rows, got {got}")]
    TooFewRows { got: usize, needed: usize },
    #[error("need at least 2 columns, got {0}")]
    TooFewColumns(usize),
    #[error("assignment entries must lie in [0, 1], found {0}")]
    EntryOutOfRange(f64),
    #[error("assignment row {row} sums to {sum}, expected 1 within 1e-6")]
    RowNotOnSimplex { row: usize, sum: f64 },
    #[error("assignment entries must be finite")]
    NonFinite,
}

/// Soft cluster assignments: n×k, entries in [0, 1], rows summing to 1.
#[derive(Debug, Clone)]
pub struct AssignmentMatrix {
    entries: Array2<f64>,
}

impl AssignmentMatrix {
    pub fn new(entries: Array2<f64>) -> Result<Self, LossError> {
        for &v in entries.iter() {
            if !v.is_finite() {
                return Err(LossError::NonFinite);
            }
            if !(-1e-12..=1.0 + 1e-12).contains(&v) {
                return Err(LossError::EntryOutOfRange(v));
            }
        }
        for (row, r) in entries.rows().into_iter().enumerate() {
            let sum: f64 = r.sum();
            if (sum - 1.0).abs() > 1e-6 {
                return Err(LossError::RowNotOnSimplex { row, sum });
            }
        }
        Ok(Self { entries })
    }

    /// Uniform assignment: every entry 1/k.
    pub fn uniform(n: usize, k: usize) -> Self {
        Self {
            entries: Array2::from_elem((n, k), 1.0 / k as f64),
        }
    }

    /// Hard one-hot assignment from labels.
    pub fn hard(labels: &[usize], k: usize) -> Self {
        let mut entries = Array2::zeros((labels.len(), k));
        for (i, &c) in labels.iter().enumerate() {
            entries[(i, c)] = 1.0;
        }
        Self { entries }
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn k(&self) -> usize {
        self.entries.ncols()
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.entries
    }

    /// Row-wise argmax as predicted cluster labels (ties to the lower index).
    pub fn argmax_labels(&self) -> Vec<usize> {
        self.entries
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
}

/// A CS ratio together with the number of ε-guarded (numerically empty)
/// columns encountered.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CsRatio {
    pub value: f64,
    pub empty_columns: usize,
}

/// Averaged pairwise Cauchy-Schwarz ratio over the columns of `c`:
///
///   (2 / p(p−1)) Σ_{i<j} (cᵢᵀ K cⱼ) / sqrt(cᵢᵀ K cᵢ · cⱼᵀ K cⱼ + ε²)
///
/// Columns whose quadratic form falls below ε are counted as empty; their
/// pairs still evaluate through the ε guard.
pub fn cs_pairwise_ratio(c: &Array2<f64>, kernel: &KernelMatrix) -> Result<CsRatio, LossError> {
    let (n, p) = c.dim();
    if kernel.n() != n {
        return Err(LossError::BatchMismatch(n, kernel.n()));
    }
    if p < 2 {
        return Err(LossError::TooFewColumns(p));
    }
    let kc = kernel.entries().dot(c); // n×p
    let q = c.t().dot(&kc); // p×p, q[(i,j)] = cᵢᵀ K cⱼ
    let empty_columns = (0..p).filter(|&i| q[(i, i)] < CS_EPSILON).count();
    let mut acc = 0.0;
    for i in 0..p {
        for j in (i + 1)..p {
            let den = (q[(i, i)] * q[(j, j)] + CS_EPSILON * CS_EPSILON).sqrt();
            acc += q[(i, j)] / den;
        }
    }
    let pairs = (p * (p - 1)) as f64 / 2.0;
    Ok(CsRatio {
        value: acc / pairs,
        empty_columns,
    })
}

/// Between-cluster separation term: CS ratio over the k columns of A.
pub fn l1_cluster_separation(
    a: &AssignmentMatrix,
    kernel: &KernelMatrix,
) -> Result<CsRatio, LossError> {
    cs_pairwise_ratio(a.entries(), kernel)
}

/// Orthogonality regularizer: (2 / n(n−1)) Σ_{q<r} α_qᵀ α_r, the normalized
/// strictly-upper-triangular mass of AAᵀ.
pub fn l2_orthogonality(a: &AssignmentMatrix) -> Result<f64, LossError> {
    let n = a.n();
    if n < 2 {
        return Err(LossError::TooFewRows { got: n, needed: 2 });
    }
    let aat = a.entries().dot(&a.entries().t());
    let mut acc = 0.0;
    for q in 0..n {
        for r in (q + 1)..n {
            acc += aat[(q, r)];
        }
    }
    Ok(acc / (n * (n - 1)) as f64 * 2.0)
}

/// Similarity of each assignment row to each simplex corner:
/// m_{qi} = exp(−‖α_q − e_i‖²).
pub fn simplex_similarity(a: &AssignmentMatrix) -> Array2<f64> {
    let (n, k) = a.entries().dim();
    let mut m = Array2::zeros((n, k));
    for q in 0..n {
        let row_sq: f64 = (0..k).map(|j| a.entries()[(q, j)] * a.entries()[(q, j)]).sum();
        for i in 0..k {
            // ‖α_q − e_i‖² = ‖α_q‖² − 2 α_{qi} + 1
            let d2 = row_sq - 2.0 * a.entries()[(q, i)] + 1.0;
            m[(q, i)] = (-d2).exp();
        }
    }
    m
}

/// Corner-pull term: CS ratio over the k columns of the simplex-similarity
/// matrix M.
pub fn l3_corner(a: &AssignmentMatrix, kernel: &KernelMatrix) -> Result<CsRatio, LossError> {
    let m = simplex_similarity(a);
    cs_pairwise_ratio(&m, kernel)
}

/// Per-term values of the clustering loss plus the λ-relevant total.
#[derive(Debug, Clone)]
pub struct LossBreakdown {
    pub l1_separation: f64,
    pub l2_orthogonality: f64,
    pub l3_corner: f64,
    pub total: f64,
    /// Intermediate simplex-similarity matrix M (entries m_{qi}).
    pub simplex_similarity: Array2<f64>,
    /// Number of ε-guarded column pairs seen across the CS terms.
    pub empty_column_warnings: usize,
}

/// Full three-term loss: total = l1 + l2 + l3.
pub fn ddc_loss(a: &AssignmentMatrix, kernel: &KernelMatrix) -> Result<LossBreakdown, LossError> {
    if kernel.n() != a.n() {
        return Err(LossError::BatchMismatch(a.n(), kernel.n()));
    }
    let l1 = l1_cluster_separation(a, kernel)?;
    let l2 = l2_orthogonality(a)?;
    let m = simplex_similarity(a);
    let l3 = cs_pairwise_ratio(&m, kernel)?;
    Ok(LossBreakdown {
        l1_separation: l1.value,
        l2_orthogonality: l2,
        l3_corner: l3.value,
        total: l1.value + l2 + l3.value,
        simplex_similarity: m,
        empty_column_warnings: l1.empty_columns + l3.empty_columns,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::gaussian_kernel_matrix;
    use ndarray::array;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_assignment(rng: &mut ChaCha8Rng, n: usize, k: usize) -> AssignmentMatrix {
        let mut entries = Array2::<f64>::zeros((n, k));
        for q in 0..n {
            let mut row: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..1.0)).collect();
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= s);
            for (j, v) in row.into_iter().enumerate() {
                entries[(q, j)] = v;
            }
        }
        AssignmentMatrix::new(entries).unwrap()
    }

    fn random_kernel(rng: &mut ChaCha8Rng, n: usize) -> KernelMatrix {
        let rows = Array2::<f64>::from_shape_fn((n, 4), |_| rng.gen_range(-1.0..1.0));
        gaussian_kernel_matrix(&rows, 0.9).unwrap()
    }

    #[test]
    fn assignment_validation() {
        assert!(AssignmentMatrix::new(array![[0.5, 0.5], [1.0, 0.0]]).is_ok());
        assert!(AssignmentMatrix::new(array![[0.7, 0.7]]).is_err());
        assert!(AssignmentMatrix::new(array![[1.5, -0.5]]).is_err());
        assert!(AssignmentMatrix::new(array![[f64::NAN, 1.0]]).is_err());
    }

    #[test]
    fn cs_ratio_orthogonal_columns_is_zero() {
        let a = AssignmentMatrix::hard(&[0, 0, 1, 1], 2);
        let k = KernelMatrix::identity(4);
        let r = cs_pairwise_ratio(a.entries(), &k).unwrap();
        assert!(r.value.abs() < 1e-12);
        assert_eq!(r.empty_columns, 0);
    }

    #[test]
    fn cs_ratio_identical_columns_is_one() {
        let c = array![[0.3, 0.3], [0.7, 0.7], [0.2, 0.2]];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let k = random_kernel(&mut rng, 3);
        let r = cs_pairwise_ratio(&c, &k).unwrap();
        assert!((r.value - 1.0).abs() < 1e-9);
    }

    #[test]
    fn cs_ratio_matches_double_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = Array2::<f64>::from_shape_fn((6, 3), |_| rng.gen_range(0.0..1.0));
        let k = random_kernel(&mut rng, 6);
        let got = cs_pairwise_ratio(&c, &k).unwrap().value;

        // Direct double-loop oracle.
        let quad = |ci: usize, cj: usize| -> f64 {
            let mut acc = 0.0;
            for x in 0..6 {
                for y in 0..6 {
                    acc += c[(x, ci)] * k.entries()[(x, y)] * c[(y, cj)];
                }
            }
            acc
        };
        let mut acc = 0.0;
        for i in 0..3 {
            for j in (i + 1)..3 {
                acc += quad(i, j) / (quad(i, i) * quad(j, j) + CS_EPSILON * CS_EPSILON).sqrt();
            }
        }
        let expect = acc * 2.0 / 6.0;
        assert!((got - expect).abs() < 1e-12);
    }

    #[test]
    fn cs_ratio_flags_empty_columns() {
        let c = array![[1.0, 0.0], [1.0, 0.0]];
        let k = KernelMatrix::identity(2);
        let r = cs_pairwise_ratio(&c, &k).unwrap();
        assert_eq!(r.empty_columns, 1);
        assert!(r.value.is_finite());
    }

    #[test]
    fn l1_uniform_is_one_and_hard_is_zero() {
        let k = KernelMatrix::identity(4);
        let uni = AssignmentMatrix::uniform(4, 2);
        assert!((l1_cluster_separation(&uni, &k).unwrap().value - 1.0).abs() < 1e-9);
        let hard = AssignmentMatrix::hard(&[0, 1, 0, 1], 2);
        assert!(l1_cluster_separation(&hard, &k).unwrap().value.abs() < 1e-12);
    }

    #[test]
    fn l1_matches_oracle_on_soft_assignment() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_assignment(&mut rng, 8, 3);
        let k = random_kernel(&mut rng, 8);
        let got = l1_cluster_separation(&a, &k).unwrap().value;
        let expect = cs_pairwise_ratio(a.entries(), &k).unwrap().value;
        assert_eq!(got, expect);
        // and the ratio is a genuine [0,1] quantity here
        assert!(got > 0.0 && got <= 1.0 + 1e-9);
    }

    #[test]
    fn l2_two_row_cases() {
        let a = AssignmentMatrix::new(array![[1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert!(l2_orthogonality(&a).unwrap().abs() < 1e-15);
        let b = AssignmentMatrix::new(array![[1.0, 0.0], [1.0, 0.0]]).unwrap();
        assert!((l2_orthogonality(&b).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn l2_uniform_is_inverse_k() {
        for (n, k) in [(4, 2), (6, 3), (5, 4)] {
            let a = AssignmentMatrix::uniform(n, k);
            assert!((l2_orthogonality(&a).unwrap() - 1.0 / k as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn l2_rejects_single_row() {
        let a = AssignmentMatrix::new(array![[1.0, 0.0]]).unwrap();
        assert!(matches!(
            l2_orthogonality(&a),
            Err(LossError::TooFewRows { .. })
        ));
    }

    #[test]
    fn simplex_similarity_corner_row() {
        let a = AssignmentMatrix::new(array![[1.0, 0.0, 0.0]]).unwrap();
        let m = simplex_similarity(&a);
        assert!((m[(0, 0)] - 1.0).abs() < 1e-15);
        let e2 = (-2.0f64).exp();
        assert!((m[(0, 1)] - e2).abs() < 1e-12);
        assert!((m[(0, 2)] - e2).abs() < 1e-12);
        assert!((e2 - 0.1353352832).abs() < 1e-9);
    }

    #[test]
    fn simplex_similarity_uniform_row_k2() {
        let a = AssignmentMatrix::uniform(1, 2);
        let m = simplex_similarity(&a);
        let expect = (-0.5f64).exp();
        assert!((m[(0, 0)] - expect).abs() < 1e-12);
        assert!((m[(0, 1)] - expect).abs() < 1e-12);
    }

    #[test]
    fn simplex_similarity_matches_elementwise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_assignment(&mut rng, 5, 3);
        let m = simplex_similarity(&a);
        for q in 0..5 {
            for i in 0..3 {
                let mut d2 = 0.0;
                for j in 0..3 {
                    let e = if i == j { 1.0 } else { 0.0 };
                    let diff = a.entries()[(q, j)] - e;
                    d2 += diff * diff;
                }
                assert!((m[(q, i)] - (-d2).exp()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn l3_uniform_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = AssignmentMatrix::uniform(6, 3);
        let k = random_kernel(&mut rng, 6);
        assert!((l3_corner(&a, &k).unwrap().value - 1.0).abs() < 1e-9);
    }

    #[test]
    fn l3_hard_two_by_two_closed_form() {
        // A = I with K = I: M = [[1, e⁻²], [e⁻², 1]] and the single column
        // pair gives (2e⁻²) / (1 + e⁻⁴).
        let a = AssignmentMatrix::new(array![[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let k = KernelMatrix::identity(2);
        let got = l3_corner(&a, &k).unwrap().value;
        let expect = 2.0 * (-2.0f64).exp() / (1.0 + (-4.0f64).exp());
        assert!((got - expect).abs() < 1e-10, "{got} vs {expect}");
    }

    #[test]
    fn ddc_loss_uniform_total() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for k in [2usize, 3, 4] {
            let a = AssignmentMatrix::uniform(6, k);
            let km = random_kernel(&mut rng, 6);
            let breakdown = ddc_loss(&a, &km).unwrap();
            let expect = 1.0 + 1.0 / k as f64 + 1.0;
            assert!((breakdown.total - expect).abs() < 1e-9);
        }
    }

    #[test]
    fn ddc_loss_total_is_sum_of_terms() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_assignment(&mut rng, 7, 3);
        let km = random_kernel(&mut rng, 7);
        let b = ddc_loss(&a, &km).unwrap();
        assert!(
            (b.total - (b.l1_separation + b.l2_orthogonality + b.l3_corner)).abs() < 1e-10
        );
        assert!(b.l1_separation >= 0.0 && b.l1_separation <= 1.0 + 1e-9);
        assert!(b.l3_corner >= 0.0 && b.l3_corner <= 1.0 + 1e-9);
    }

    #[test]
    fn loss_invariant_under_row_permutation_with_conjugated_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 6;
        let a = random_assignment(&mut rng, n, 3);
        let km = random_kernel(&mut rng, n);
        let base = ddc_loss(&a, &km).unwrap();

        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let pa = Array2::from_shape_fn((n, 3), |(i, j)| a.entries()[(perm[i], j)]);
        let pk = Array2::from_shape_fn((n, n), |(i, j)| km.entries()[(perm[i], perm[j])]);
        let a2 = AssignmentMatrix::new(pa).unwrap();
        let k2 = KernelMatrix::from_entries(pk, km.sigma(), km.kind());
        let permuted = ddc_loss(&a2, &k2).unwrap();
        assert!((base.total - permuted.total).abs() < 1e-10);
        assert!((base.l1_separation - permuted.l1_separation).abs() < 1e-10);
        assert!((base.l2_orthogonality - permuted.l2_orthogonality).abs() < 1e-10);
    }

    #[test]
    fn l1_l3_invariant_under_column_relabeling() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = random_assignment(&mut rng, 6, 3);
        let km = random_kernel(&mut rng, 6);
        let base = ddc_loss(&a, &km).unwrap();
        let relabeled =
            Array2::from_shape_fn((6, 3), |(i, j)| a.entries()[(i, (j + 1) % 3)]);
        let a2 = AssignmentMatrix::new(relabeled).unwrap();
        let perm = ddc_loss(&a2, &km).unwrap();
        assert!((base.l1_separation - perm.l1_separation).abs() < 1e-10);
        assert!((base.l3_corner - perm.l3_corner).abs() < 1e-10);
    }

    #[test]
    fn l1_l3_invariant_under_kernel_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let a = random_assignment(&mut rng, 6, 3);
        let km = random_kernel(&mut rng, 6);
        let base = ddc_loss(&a, &km).unwrap();
        for c in [0.5, 7.0] {
            let scaled =
                KernelMatrix::from_entries(km.entries().mapv(|v| c * v), km.sigma(), km.kind());
            let got = ddc_loss(&a, &scaled).unwrap();
            assert!((base.l1_separation - got.l1_separation).abs() < 1e-10);
            assert!((base.l3_corner - got.l3_corner).abs() < 1e-10);
        }
    }
}
