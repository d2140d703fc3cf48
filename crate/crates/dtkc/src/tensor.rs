//! Dense tensor algebra: mode unfoldings, orthonormal subspace extraction and
//! pairwise-distance utilities.
//!
//! Everything here is deterministic and pure; the kernel builders in
//! [`crate::kernel`] are thin layers on top of these primitives.

use ndarray::{Array1, Array2};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("tensor has rank {got}, expected rank {expected}")]
    WrongRank { got: usize, expected: usize },
    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: String },
    #[error("tensor values must be finite")]
    NonFinite,
    #[error("matrix is numerically zero")]
    DegenerateInput,
    #[error("subspace rank {r} out of range (must be in 1..={max})")]
    RankTooLarge { r: usize, max: usize },
    #[error("need at least {needed} rows, got {got}")]
    TooFewRows { got: usize, needed: usize },
}

/// A dense real tensor of rank 1 to 4, stored in row-major logical order.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self, TensorError> {
        if shape.is_empty() || shape.len() > 4 {
            return Err(TensorError::WrongRank {
                got: shape.len(),
                expected: 3,
            });
        }
        if shape.iter().any(|&d| d == 0) {
            return Err(TensorError::InvalidShape {
                shape,
                reason: "zero-sized dimension".into(),
            });
        }
        let numel: usize = shape.iter().product();
        if numel != values.len() {
            return Err(TensorError::InvalidShape {
                shape,
                reason: format!("shape implies {numel} values, got {}", values.len()),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite);
        }
        Ok(Self { shape, values })
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Linear index of `(i1, i2, i3)` for a rank-3 tensor.
    fn lin3(&self, i1: usize, i2: usize, i3: usize) -> usize {
        (i1 * self.shape[1] + i2) * self.shape[2] + i3
    }

    /// Frobenius norm of the stored values.
    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Mode-`m` matricization of a rank-3 tensor.
///
/// Fiber `(i, ·)` of mode `m` becomes row `i`. The column index of entry
/// `(i1, i2, i3)` is `i_a + i_b * I_a` where `(a, b)` are the remaining modes
/// in ascending order, 0-based:
///
/// - mode 1: `(i1, i2 + i3 * I2)`
/// - mode 2: `(i2, i1 + i3 * I1)`
/// - mode 3: `(i3, i1 + i2 * I1)`
pub fn unfold(t: &DenseTensor, mode: usize) -> Result<Array2<f64>, TensorError> {
    if t.rank() != 3 {
        return Err(TensorError::WrongRank {
            got: t.rank(),
            expected: 3,
        });
    }
    if !(1..=3).contains(&mode) {
        return Err(TensorError::InvalidShape {
            shape: vec![mode],
            reason: "mode must be 1, 2 or 3".into(),
        });
    }
    let (i1n, i2n, i3n) = (t.shape[0], t.shape[1], t.shape[2]);
    let (rows, cols) = match mode {
        1 => (i1n, i2n * i3n),
        2 => (i2n, i1n * i3n),
        _ => (i3n, i1n * i2n),
    };
    let mut m = Array2::<f64>::zeros((rows, cols));
    for i1 in 0..i1n {
        for i2 in 0..i2n {
            for i3 in 0..i3n {
                let v = t.values[t.lin3(i1, i2, i3)];
                let (r, c) = match mode {
                    1 => (i1, i2 + i3 * i2n),
                    2 => (i2, i1 + i3 * i1n),
                    _ => (i3, i1 + i2 * i1n),
                };
                m[(r, c)] = v;
            }
        }
    }
    Ok(m)
}

/// Inverse of [`unfold`]: rebuild the rank-3 tensor from its mode-`m`
/// matricization. Exact (pure index shuffling).
pub fn refold(m: &Array2<f64>, mode: usize, shape: [usize; 3]) -> Result<DenseTensor, TensorError> {
    let (i1n, i2n, i3n) = (shape[0], shape[1], shape[2]);
    let expected = match mode {
        1 => (i1n, i2n * i3n),
        2 => (i2n, i1n * i3n),
        3 => (i3n, i1n * i2n),
        _ => {
            return Err(TensorError::InvalidShape {
                shape: vec![mode],
                reason: "mode must be 1, 2 or 3".into(),
            })
        }
    };
    if m.dim() != expected {
        return Err(TensorError::InvalidShape {
            shape: vec![m.nrows(), m.ncols()],
            reason: format!("expected {expected:?} for mode {mode} of shape {shape:?}"),
        });
    }
    let mut values = vec![0.0; i1n * i2n * i3n];
    for i1 in 0..i1n {
        for i2 in 0..i2n {
            for i3 in 0..i3n {
                let (r, c) = match mode {
                    1 => (i1, i2 + i3 * i2n),
                    2 => (i2, i1 + i3 * i1n),
                    _ => (i3, i1 + i2 * i1n),
                };
                values[(i1 * i2n + i2) * i3n + i3] = m[(r, c)];
            }
        }
    }
    DenseTensor::new(shape.to_vec(), values)
}

/// `r` mutually orthonormal columns spanning a subspace of an ambient space.
#[derive(Debug, Clone)]
pub struct OrthonormalBasis {
    columns: Array2<f64>,
}

impl OrthonormalBasis {
    /// Wraps a matrix whose columns are checked to be orthonormal (Gram
    /// matrix within 1e-10 of the identity).
    pub fn new(columns: Array2<f64>) -> Result<Self, TensorError> {
        let r = columns.ncols();
        let d = columns.nrows();
        if r < 1 || r > d {
            return Err(TensorError::RankTooLarge { r, max: d });
        }
        let gram = columns.t().dot(&columns);
        for i in 0..r {
            for j in 0..r {
                let target = if i == j { 1.0 } else { 0.0 };
                if (gram[(i, j)] - target).abs() > 1e-10 {
                    return Err(TensorError::InvalidShape {
                        shape: vec![d, r],
                        reason: "columns are not orthonormal".into(),
                    });
                }
            }
        }
        Ok(Self { columns })
    }

    pub fn ambient_dim(&self) -> usize {
        self.columns.nrows()
    }

    pub fn rank(&self) -> usize {
        self.columns.ncols()
    }

    pub fn columns(&self) -> &Array2<f64> {
        &self.columns
    }

    /// Projection matrix `U Uᵀ` onto the subspace.
    pub fn projection(&self) -> Array2<f64> {
        self.columns.dot(&self.columns.t())
    }
}

/// Span of the top-`r` left singular vectors of `m`.
///
/// The projection `U Uᵀ` is unique whenever the singular-value gap
/// `σ_r > σ_{r+1}` is non-degenerate, even though individual vectors are only
/// determined up to sign/rotation.
pub fn left_singular_subspace(m: &Array2<f64>, r: usize) -> Result<OrthonormalBasis, TensorError> {
    let min_dim = m.nrows().min(m.ncols());
    if r < 1 || r > min_dim {
        return Err(TensorError::RankTooLarge { r, max: min_dim });
    }
    let frob = m.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(frob > 0.0) || frob < f64::MIN_POSITIVE {
        return Err(TensorError::DegenerateInput);
    }
    let nm = nalgebra::DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)]);
    let svd = nm.svd(true, false);
    let u = svd.u.as_ref().expect("left singular vectors requested");
    // Sort singular values descending ourselves; we do not rely on the
    // factorization's ordering.
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut cols = Array2::<f64>::zeros((m.nrows(), r));
    for (k, &idx) in order.iter().take(r).enumerate() {
        for i in 0..m.nrows() {
            cols[(i, k)] = u[(i, idx)];
        }
    }
    OrthonormalBasis::new(cols)
}

/// Matrix of squared Euclidean distances between the rows of `rows`.
///
/// Symmetric with an exactly zero diagonal; entries are clamped at 0 from
/// below.
pub fn pairwise_sq_distances(rows: &Array2<f64>) -> Array2<f64> {
    let n = rows.nrows();
    let mut d = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let mut acc = 0.0;
            for c in 0..rows.ncols() {
                let diff = rows[(i, c)] - rows[(j, c)];
                acc += diff * diff;
            }
            let acc = acc.max(0.0);
            d[(i, j)] = acc;
            d[(j, i)] = acc;
        }
    }
    d
}

/// Median of the `n(n-1)/2` pairwise Euclidean distances (not squared)
/// between rows. For an even count, the mean of the two middle values.
pub fn median_pairwise_distance(rows: &Array2<f64>) -> Result<f64, TensorError> {
    let n = rows.nrows();
    if n < 2 {
        return Err(TensorError::TooFewRows { got: n, needed: 2 });
    }
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            let mut acc = 0.0;
            for c in 0..rows.ncols() {
                let diff = rows[(i, c)] - rows[(j, c)];
                acc += diff * diff;
            }
            dists.push(acc.max(0.0).sqrt());
        }
    }
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = dists.len();
    if m % 2 == 1 {
        Ok(dists[m / 2])
    } else {
        Ok(0.5 * (dists[m / 2 - 1] + dists[m / 2]))
    }
}

/// Flattens a rank-anything tensor batch row into a 1-D view for distance
/// computations.
pub fn flatten_tensors(batch: &[DenseTensor]) -> Array2<f64> {
    let n = batch.len();
    let d = if n == 0 { 0 } else { batch[0].values().len() };
    let mut rows = Array2::<f64>::zeros((n, d));
    for (i, t) in batch.iter().enumerate() {
        rows.row_mut(i)
            .assign(&Array1::from_vec(t.values().to_vec()));
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn iota_tensor(shape: [usize; 3]) -> DenseTensor {
        let n: usize = shape.iter().product();
        DenseTensor::new(shape.to_vec(), (0..n).map(|v| v as f64).collect()).unwrap()
    }

    #[test]
    fn unfold_shapes() {
        let t = iota_tensor([2, 3, 4]);
        assert_eq!(unfold(&t, 1).unwrap().dim(), (2, 12));
        assert_eq!(unfold(&t, 2).unwrap().dim(), (3, 8));
        assert_eq!(unfold(&t, 3).unwrap().dim(), (4, 6));
    }

    #[test]
    fn unfold_degenerate_modes() {
        let t = DenseTensor::new(vec![1, 1, 5], vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let m = unfold(&t, 3).unwrap();
        assert_eq!(m.dim(), (5, 1));
        for i in 0..5 {
            assert_eq!(m[(i, 0)], (i + 1) as f64);
        }
    }

    #[test]
    fn unfold_mode2_matches_enumeration_oracle() {
        // Oracle: enumerate all (i1,i2,i3) and place each value at
        // (i2, i1 + i3*I1).
        let t = iota_tensor([2, 3, 4]);
        let m = unfold(&t, 2).unwrap();
        assert_eq!(m.dim(), (3, 8));
        for i1 in 0..2usize {
            for i2 in 0..3usize {
                for i3 in 0..4usize {
                    let v = ((i1 * 3 + i2) * 4 + i3) as f64;
                    assert_eq!(m[(i2, i1 + i3 * 2)], v);
                }
            }
        }
    }

    #[test]
    fn unfold_refold_round_trip_all_modes() {
        let t = iota_tensor([3, 4, 5]);
        for mode in 1..=3 {
            let m = unfold(&t, mode).unwrap();
            let back = refold(&m, mode, [3, 4, 5]).unwrap();
            assert_eq!(back, t);
        }
    }

    #[test]
    fn unfold_preserves_value_multiset() {
        let t = iota_tensor([2, 3, 4]);
        for mode in 1..=3 {
            let m = unfold(&t, mode).unwrap();
            let mut vals: Vec<f64> = m.iter().copied().collect();
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let expect: Vec<f64> = (0..24).map(|v| v as f64).collect();
            assert_eq!(vals, expect);
        }
    }

    #[test]
    fn unfold_rejects_wrong_rank() {
        let t = DenseTensor::new(vec![2, 2], vec![0.0; 4]).unwrap();
        assert!(matches!(
            unfold(&t, 1),
            Err(TensorError::WrongRank { got: 2, .. })
        ));
    }

    #[test]
    fn subspace_of_identity_is_coordinate_projection() {
        let m = Array2::<f64>::eye(3);
        let b = left_singular_subspace(&m, 2).unwrap();
        let p = b.projection();
        // UᵀU = I (checked by constructor); rank of UUᵀ is 2.
        let trace: f64 = (0..3).map(|i| p[(i, i)]).sum();
        assert!((trace - 2.0).abs() < 1e-10);
        // Projection is idempotent.
        let pp = p.dot(&p);
        for i in 0..3 {
            for j in 0..3 {
                assert!((pp[(i, j)] - p[(i, j)]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn subspace_of_single_column_is_normalized_column() {
        let c = array![[3.0], [4.0]];
        let b = left_singular_subspace(&c, 1).unwrap();
        let u = b.columns();
        // Up to sign.
        let s = if u[(0, 0)] > 0.0 { 1.0 } else { -1.0 };
        assert!((s * u[(0, 0)] - 0.6).abs() < 1e-12);
        assert!((s * u[(1, 0)] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn subspace_matches_full_svd_oracle() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let m = Array2::<f64>::from_shape_fn((5, 7), |_| rng.gen_range(-1.0..1.0));
        let b = left_singular_subspace(&m, 2).unwrap();
        let p = b.projection();
        // Oracle: dense full SVD of m, projection from its top-2 left
        // singular vectors.
        let nm = nalgebra::DMatrix::from_fn(5, 7, |i, j| m[(i, j)]);
        let svd = nm.svd(true, false);
        let u = svd.u.unwrap();
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].partial_cmp(&svd.singular_values[a]).unwrap());
        let mut p_oracle = Array2::<f64>::zeros((5, 5));
        for &k in order.iter().take(2) {
            for i in 0..5 {
                for j in 0..5 {
                    p_oracle[(i, j)] += u[(i, k)] * u[(j, k)];
                }
            }
        }
        let err: f64 = (&p - &p_oracle).iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(err < 1e-8, "projection mismatch {err}");
    }

    #[test]
    fn subspace_scale_invariance() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let m = Array2::<f64>::from_shape_fn((4, 6), |_| rng.gen_range(-1.0..1.0));
        let p0 = left_singular_subspace(&m, 2).unwrap().projection();
        for c in [3.5, -0.25, 1e-3] {
            let scaled = m.mapv(|v| c * v);
            let p = left_singular_subspace(&scaled, 2).unwrap().projection();
            let err: f64 = (&p - &p0).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(err < 1e-8, "scale {c}: {err}");
        }
    }

    #[test]
    fn subspace_rejects_zero_and_oversized_rank() {
        let z = Array2::<f64>::zeros((3, 3));
        assert!(matches!(
            left_singular_subspace(&z, 1),
            Err(TensorError::DegenerateInput)
        ));
        let m = Array2::<f64>::eye(3);
        assert!(matches!(
            left_singular_subspace(&m, 4),
            Err(TensorError::RankTooLarge { .. })
        ));
        assert!(matches!(
            left_singular_subspace(&m, 0),
            Err(TensorError::RankTooLarge { .. })
        ));
    }

    #[test]
    fn pairwise_345_triangle() {
        let rows = array![[0.0, 0.0], [3.0, 4.0]];
        let d = pairwise_sq_distances(&rows);
        assert_eq!(d, array![[0.0, 25.0], [25.0, 0.0]]);
    }

    #[test]
    fn pairwise_single_row() {
        let rows = array![[1.0, 2.0, 3.0]];
        let d = pairwise_sq_distances(&rows);
        assert_eq!(d, array![[0.0]]);
    }

    #[test]
    fn pairwise_matches_double_loop_oracle() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let rows = Array2::<f64>::from_shape_fn((4, 5), |_| rng.gen_range(-2.0..2.0));
        let d = pairwise_sq_distances(&rows);
        for i in 0..4 {
            for j in 0..4 {
                let mut acc = 0.0;
                for c in 0..5 {
                    let diff = rows[(i, c)] - rows[(j, c)];
                    acc += diff * diff;
                }
                assert!((d[(i, j)] - acc).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn median_two_rows() {
        let rows = array![[0.0], [2.0]];
        assert_eq!(median_pairwise_distance(&rows).unwrap(), 2.0);
    }

    #[test]
    fn median_three_rows() {
        let rows = array![[0.0], [1.0], [3.0]];
        // distances {1, 2, 3} -> median 2
        assert_eq!(median_pairwise_distance(&rows).unwrap(), 2.0);
    }

    #[test]
    fn median_matches_sort_oracle() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let rows = Array2::<f64>::from_shape_fn((6, 3), |_| rng.gen_range(-1.0..1.0));
        let got = median_pairwise_distance(&rows).unwrap();
        let mut dists = Vec::new();
        for i in 0..6 {
            for j in (i + 1)..6 {
                let mut acc = 0.0;
                for c in 0..3 {
                    let diff = rows[(i, c)] - rows[(j, c)];
                    acc += diff * diff;
                }
                dists.push(acc.sqrt());
            }
        }
        dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let expect = 0.5 * (dists[6] + dists[7]); // 15 distances -> index 7 is the median
        // 15 is odd so the middle element is index 7.
        let expect = if dists.len() % 2 == 1 { dists[7] } else { expect };
        assert!((got - expect).abs() < 1e-12);
    }

    #[test]
    fn median_rejects_single_row() {
        let rows = array![[0.0]];
        assert!(matches!(
            median_pairwise_distance(&rows),
            Err(TensorError::TooFewRows { .. })
        ));
    }

    #[test]
    fn dense_tensor_validation() {
        assert!(DenseTensor::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(DenseTensor::new(vec![], vec![]).is_err());
        assert!(DenseTensor::new(vec![2], vec![f64::NAN, 0.0]).is_err());
        assert!(DenseTensor::new(vec![1, 2, 3, 4, 5], vec![0.0; 120]).is_err());
    }
}
