//! Per-layer kernel matrices: Gaussian kernels on vector representations and
//! tensor kernels on rank-3 feature maps.
//!
//! The tensor kernel compares two tensors through the subspaces spanned by
//! their mode unfoldings:
//!
//! κ(X, Y) = ∏ₘ exp(−d²(Sₓᵐ, Sᵧᵐ) / (2σ²))
//!
//! where Sᵐ is the span of the top-r left singular vectors of the mode-m
//! unfolding and d² is the squared chordal subspace distance. Modes of size 1
//! contribute a factor of 1.

use crate::tensor::{
    left_singular_subspace, median_pairwise_distance, pairwise_sq_distances,
    unfold, DenseTensor, OrthonormalBasis, TensorError,
};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("bandwidth sigma must be positive, got {0}")]
    NonPositiveSigma(f64),
    #[error("subspaces have mismatched dimensions: {0:?} vs {1:?}")]
    DimensionMismatch((usize, usize), (usize, usize)),
    #[error("tensors in a batch must share one shape: {0:?} vs {1:?}")]
    ShapeMismatch(Vec<usize>, Vec<usize>),
    #[error("empty batch")]
    EmptyBatch,
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Bandwidth-selection and tensor-kernel parameters.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    /// Bandwidth as a fraction of the median pairwise distance of the batch.
    #[serde(default = "default_rel_sigma")]
    pub rel_sigma: f64,
    /// Per-mode subspace rank for the tensor kernel (clamped to each
    /// unfolding's smaller dimension).
    #[serde(default = "default_subspace_rank")]
    pub subspace_rank: usize,
    /// Lower bound on the selected bandwidth.
    #[serde(default = "default_min_sigma")]
    pub min_sigma: f64,
}

fn default_rel_sigma() -> f64 {
    0.15
}

fn default_subspace_rank() -> usize {
    2
}

fn default_min_sigma() -> f64 {
    1e-9
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            rel_sigma: default_rel_sigma(),
            subspace_rank: default_subspace_rank(),
            min_sigma: default_min_sigma(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelKind {
    GaussianVector,
    Tensor,
}

/// An n×n similarity matrix with unit diagonal, together with the bandwidth
/// it was built with.
#[derive(Debug, Clone)]
pub struct KernelMatrix {
    entries: Array2<f64>,
    sigma: f64,
    kind: KernelKind,
}

impl KernelMatrix {
    fn new_checked(entries: Array2<f64>, sigma: f64, kind: KernelKind) -> Self {
        debug_assert_eq!(entries.nrows(), entries.ncols());
        Self {
            entries,
            sigma,
            kind,
        }
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.entries
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    /// Identity kernel, handy for tests and as a neutral element.
    pub fn identity(n: usize) -> Self {
        Self::new_checked(Array2::eye(n), 1.0, KernelKind::GaussianVector)
    }

    /// Wraps an arbitrary symmetric matrix as a kernel. Intended for tests
    /// and diagnostics; no invariants are enforced beyond squareness.
    pub fn from_entries(entries: Array2<f64>, sigma: f64, kind: KernelKind) -> Self {
        Self::new_checked(entries, sigma, kind)
    }
}

/// σ = max(rel_sigma × median pairwise distance, min_sigma).
///
/// The bandwidth is recomputed per batch and treated as a constant with
/// respect to gradients.
pub fn bandwidth_from_batch(rows: &Array2<f64>, cfg: &KernelConfig) -> Result<f64, KernelError> {
    let median = median_pairwise_distance(rows)?;
    Ok((cfg.rel_sigma * median).max(cfg.min_sigma))
}

/// Gaussian kernel κᵢⱼ = exp(−‖hᵢ − hⱼ‖² / (2σ²)) on the rows of `rows`.
pub fn gaussian_kernel_matrix(rows: &Array2<f64>, sigma: f64) -> Result<KernelMatrix, KernelError> {
    if !(sigma > 0.0) {
        return Err(KernelError::NonPositiveSigma(sigma));
    }
    let d = pairwise_sq_distances(rows);
    let denom = 2.0 * sigma * sigma;
    let entries = d.mapv(|v| (-v / denom).exp());
    Ok(KernelMatrix::new_checked(
        entries,
        sigma,
        KernelKind::GaussianVector,
    ))
}

/// Squared chordal distance d² = ½‖U_a U_aᵀ − U_b U_bᵀ‖²_F between two
/// subspaces of equal rank; equals the sum of squared sines of the principal
/// angles and lies in [0, r].
pub fn chordal_sq_distance(a: &OrthonormalBasis, b: &OrthonormalBasis) -> Result<f64, KernelError> {
    if a.ambient_dim() != b.ambient_dim() || a.rank() != b.rank() {
        return Err(KernelError::DimensionMismatch(
            (a.ambient_dim(), a.rank()),
            (b.ambient_dim(), b.rank()),
        ));
    }
    let diff = a.projection() - b.projection();
    let d2 = 0.5 * diff.iter().map(|v| v * v).sum::<f64>();
    Ok(d2.max(0.0))
}

/// Per-mode subspaces of one rank-3 tensor, skipping modes of size 1.
fn mode_subspaces(
    t: &DenseTensor,
    cfg: &KernelConfig,
) -> Result<Vec<(usize, OrthonormalBasis)>, KernelError> {
    let mut out = Vec::new();
    for mode in 1..=3 {
        if t.shape()[mode - 1] == 1 {
            continue; // factor 1 by convention
        }
        let m = unfold(t, mode)?;
        let r = cfg.subspace_rank.max(1).min(m.nrows().min(m.ncols()));
        out.push((mode, left_singular_subspace(&m, r)?));
    }
    Ok(out)
}

/// Tensor kernel matrix over a batch of rank-3 tensors of common shape.
///
/// κᵢⱼ is the product over modes of Gaussian factors on squared chordal
/// distances between the per-mode subspaces of tensor i and tensor j.
pub fn tensor_kernel_matrix(
    batch: &[DenseTensor],
    sigma: f64,
    cfg: &KernelConfig,
) -> Result<KernelMatrix, KernelError> {
    if batch.is_empty() {
        return Err(KernelError::EmptyBatch);
    }
    if !(sigma > 0.0) {
        return Err(KernelError::NonPositiveSigma(sigma));
    }
    let shape = batch[0].shape().to_vec();
    for t in batch {
        if t.shape() != shape.as_slice() {
            return Err(KernelError::ShapeMismatch(shape, t.shape().to_vec()));
        }
    }
    let subspaces: Vec<Vec<(usize, OrthonormalBasis)>> = batch
        .iter()
        .map(|t| mode_subspaces(t, cfg))
        .collect::<Result<_, _>>()?;

    let n = batch.len();
    let denom = 2.0 * sigma * sigma;
    let mut entries = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        entries[(i, i)] = 1.0;
        for j in (i + 1)..n {
            let mut k = 1.0;
            for ((_, si), (_, sj)) in subspaces[i].iter().zip(subspaces[j].iter()) {
                let d2 = chordal_sq_distance(si, sj)?;
                k *= (-d2 / denom).exp();
            }
            entries[(i, j)] = k;
            entries[(j, i)] = k;
        }
    }
    Ok(KernelMatrix::new_checked(entries, sigma, KernelKind::Tensor))
}
