//! Companion objectives and the total training objective.
//!
//! Each tapped layer contributes the two kernel-dependent loss terms (l1 and
//! l3) evaluated with that layer's own kernel and the shared head assignment
//! matrix; the kernel-independent l2 term is counted once in the main loss.
//! The total is
//!
//!   total = ddc(A, K_hidden) + λ Σ_l companion_l(A, K_l)
//!
//! so λ = 0 reduces exactly to the plain clustering objective.
//!
//! Everything exists twice: as pure functions over values (library surface,
//! used by evaluation and tests) and as graph builders (used by training and
//! the importance maps). The two routes are cross-checked in the test suite.

use crate::graph::{Graph, NodeId};
use crate::kernel::{
    bandwidth_from_batch, gaussian_kernel_matrix, tensor_kernel_matrix, KernelConfig, KernelError,
    KernelMatrix,
};
use crate::loss::{
    cs_pairwise_ratio, ddc_loss, simplex_similarity, AssignmentMatrix, LossBreakdown, LossError,
    CS_EPSILON,
};
use crate::net::{FeatureBatch, ForwardNodes, LayerTap, TapKind};
use ndarray::{Array2, ArrayD, IxDyn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error("lambda must be nonnegative, got {0}")]
    NegativeLambda(f64),
    #[error("no layer taps or hidden representation available")]
    NothingToScore,
}

/// λ and the per-layer enable switches for the companion objectives.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CompanionWeights {
    pub lambda: f64,
    /// Layers without an entry default to enabled.
    #[serde(default)]
    pub per_layer_enabled: Vec<bool>,
}

impl CompanionWeights {
    pub fn with_lambda(lambda: f64) -> Self {
        Self {
            lambda,
            per_layer_enabled: Vec::new(),
        }
    }

    pub fn enabled(&self, layer: usize) -> bool {
        self.per_layer_enabled.get(layer).copied().unwrap_or(true)
    }

    pub fn validate(&self) -> Result<(), ObjectiveError> {
        if self.lambda < 0.0 || !self.lambda.is_finite() {
            return Err(ObjectiveError::NegativeLambda(self.lambda));
        }
        Ok(())
    }
}

/// Builds the kernel matrix a tap's companion objective uses: a tensor
/// kernel for conv maps, a Gaussian kernel for hidden-state vectors. The
/// bandwidth comes from the flattened tap in both cases.
pub fn companion_kernel(tap: &LayerTap, cfg: &KernelConfig) -> Result<KernelMatrix, ObjectiveError> {
    let rows = tap.batch.flattened();
    let sigma = bandwidth_from_batch(&rows, cfg)?;
    let k = match &tap.batch {
        FeatureBatch::ConvMaps(tensors) => tensor_kernel_matrix(tensors, sigma, cfg)?,
        FeatureBatch::Vectors(m) => gaussian_kernel_matrix(m, sigma)?,
    };
    Ok(k)
}

/// Companion loss of one tap: l1 + l3 under the tap's kernel, sharing the
/// head's assignment matrix. l2 is excluded (kernel-independent).
pub fn companion_loss(
    tap: &LayerTap,
    a: &AssignmentMatrix,
    cfg: &KernelConfig,
) -> Result<LossBreakdown, ObjectiveError> {
    let kernel = companion_kernel(tap, cfg)?;
    let l1 = cs_pairwise_ratio(a.entries(), &kernel)?;
    let m = simplex_similarity(a);
    let l3 = cs_pairwise_ratio(&m, &kernel)?;
    Ok(LossBreakdown {
        l1_separation: l1.value,
        l2_orthogonality: 0.0,
        l3_corner: l3.value,
        total: l1.value + l3.value,
        simplex_similarity: m,
        empty_column_warnings: l1.empty_columns + l3.empty_columns,
    })
}

/// One layer's contribution to the total objective.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompanionTerm {
    pub layer_index: usize,
    pub l1: f64,
    pub l3: f64,
    pub total: f64,
}

/// Per-term values of the full training objective.
#[derive(Debug, Clone)]
pub struct ObjectiveBreakdown {
    pub main: LossBreakdown,
    pub companions: Vec<CompanionTerm>,
    pub lambda: f64,
    pub total: f64,
}

/// Pure evaluation of the total objective from forward-pass values. Each
/// layer's bandwidth is selected from that layer's own representation.
pub fn total_objective(
    taps: &[LayerTap],
    hidden: &Array2<f64>,
    a: &AssignmentMatrix,
    weights: &CompanionWeights,
    cfg: &KernelConfig,
) -> Result<ObjectiveBreakdown, ObjectiveError> {
    weights.validate()?;
    if hidden.nrows() == 0 {
        return Err(ObjectiveError::NothingToScore);
    }
    let sigma = bandwidth_from_batch(hidden, cfg)?;
    let k_hidden = gaussian_kernel_matrix(hidden, sigma)?;
    let main = ddc_loss(a, &k_hidden)?;
    let mut total = main.total;
    let mut companions = Vec::new();
    if weights.lambda > 0.0 {
        for tap in taps {
            if !weights.enabled(tap.layer_index) {
                continue;
            }
            let c = companion_loss(tap, a, cfg)?;
            total += weights.lambda * c.total;
            companions.push(CompanionTerm {
                layer_index: tap.layer_index,
                l1: c.l1_separation,
                l3: c.l3_corner,
                total: c.total,
            });
        }
    }
    Ok(ObjectiveBreakdown {
        main,
        companions,
        lambda: weights.lambda,
        total,
    })
}

// ---------------------------------------------------------------------------
// Graph builders
// ---------------------------------------------------------------------------

/// Per-layer bandwidths, frozen per batch (constants w.r.t. gradients).
#[derive(Debug, Clone)]
pub struct SigmaSet {
    pub hidden: f64,
    pub taps: Vec<f64>,
}

impl SigmaSet {
    /// Selects every bandwidth from the forward values currently in the
    /// graph.
    pub fn from_forward(
        g: &Graph,
        fwd: &ForwardNodes,
        cfg: &KernelConfig,
    ) -> Result<Self, KernelError> {
        let hidden_rows = to2(g.value(fwd.hidden));
        let hidden = bandwidth_from_batch(&hidden_rows, cfg)?;
        let mut taps = Vec::with_capacity(fwd.taps.len());
        for (_, tap) in &fwd.taps {
            let v = g.value(*tap);
            let n = v.shape()[0];
            let d: usize = v.shape()[1..].iter().product();
            let rows = Array2::from_shape_vec((n, d), v.iter().copied().collect()).unwrap();
            taps.push(bandwidth_from_batch(&rows, cfg)?);
        }
        Ok(Self { hidden, taps })
    }
}

fn to2(v: &ArrayD<f64>) -> Array2<f64> {
    v.view()
        .into_dimensionality::<ndarray::Ix2>()
        .unwrap()
        .to_owned()
}

fn strict_upper_mask(p: usize) -> ArrayD<f64> {
    ArrayD::from_shape_fn(IxDyn(&[p, p]), |ix| if ix[0] < ix[1] { 1.0 } else { 0.0 })
}

fn off_diagonal_mask(n: usize) -> ArrayD<f64> {
    ArrayD::from_shape_fn(IxDyn(&[n, n]), |ix| if ix[0] == ix[1] { 0.0 } else { 1.0 })
}

/// CS ratio node over the columns of `c` under kernel `k`; also returns the
/// number of ε-guarded columns (from the eagerly computed diagonal).
pub fn build_cs_ratio(g: &mut Graph, c: NodeId, k: NodeId) -> (NodeId, usize) {
    let p = g.value(c).shape()[1];
    assert!(p >= 2, "cs ratio needs at least two columns");
    let kc = g.matmul(k, c);
    let ct = g.transpose(c);
    let q = g.matmul(ct, kc); // p×p
    let d = g.diag_part(q);
    let empty = g.value(d).iter().filter(|&&v| v < CS_EPSILON).count();
    let dc = g.reshape(d, &[p, 1]);
    let dr = g.reshape(d, &[1, p]);
    let dcb = g.broadcast(dc, &[p, p]);
    let drb = g.broadcast(dr, &[p, p]);
    let dd = g.mul(dcb, drb);
    let den_sq = g.add_scalar(dd, CS_EPSILON * CS_EPSILON);
    let den = g.sqrt(den_sq);
    let ratio = g.div(q, den);
    let masked = g.mul_const(ratio, strict_upper_mask(p));
    let s = g.sum_all(masked);
    let pairs = (p * (p - 1)) as f64 / 2.0;
    (g.mul_scalar(s, 1.0 / pairs), empty)
}

/// l2 node: normalized strictly-upper mass of AAᵀ.
pub fn build_l2(g: &mut Graph, a: NodeId) -> NodeId {
    let n = g.value(a).shape()[0];
    let at = g.transpose(a);
    let aat = g.matmul(a, at);
    let masked = g.mul_const(aat, strict_upper_mask(n));
    let s = g.sum_all(masked);
    g.mul_scalar(s, 2.0 / (n * (n - 1)) as f64)
}

/// Simplex-similarity node M with m_{qi} = exp(−‖α_q − e_i‖²).
pub fn build_simplex_similarity(g: &mut Graph, a: NodeId) -> NodeId {
    let shape = g.value(a).shape().to_vec();
    let (n, k) = (shape[0], shape[1]);
    let sq = g.mul(a, a);
    let rowsq = g.sum_axis(sq, 1);
    let rowsq = g.reshape(rowsq, &[n, 1]);
    let rowsq = g.broadcast(rowsq, &[n, k]);
    let plus_one = g.add_scalar(rowsq, 1.0);
    let twice_a = g.mul_scalar(a, 2.0);
    let d2 = g.sub(plus_one, twice_a);
    let neg = g.neg(d2);
    g.exp(neg)
}

/// Gaussian kernel node exp(−D/(2σ²)) over the rows of `rows`.
pub fn build_gaussian_kernel(g: &mut Graph, rows: NodeId, sigma: f64) -> NodeId {
    let d = g.pairwise_sq_dist(rows);
    let scaled = g.mul_scalar(d, -1.0 / (2.0 * sigma * sigma));
    g.exp(scaled)
}

/// Tensor kernel node over a rank-4 tap `[n, I1, I2, I3]`: the product over
/// modes (of size > 1) of Gaussian factors on squared chordal distances
/// between per-mode spectral subspaces. Fully differentiable through the
/// Gram-based spectral projectors.
pub fn build_tensor_kernel(g: &mut Graph, tap: NodeId, sigma: f64, cfg: &KernelConfig) -> NodeId {
    let shape = g.value(tap).shape().to_vec();
    assert_eq!(shape.len(), 4, "tensor kernel expects [n, I1, I2, I3] taps");
    let n = shape[0];
    let dims = [shape[1], shape[2], shape[3]];
    let mut kernel = g.constant(ArrayD::from_elem(IxDyn(&[n, n]), 1.0));
    let denom = 2.0 * sigma * sigma;

    for (mode, &i_m) in dims.iter().enumerate() {
        if i_m == 1 {
            continue; // factor 1 by convention
        }
        let other: usize = dims.iter().product::<usize>() / i_m;
        let r = cfg.subspace_rank.max(1).min(i_m.min(other));
        let mut flat_projectors = Vec::with_capacity(n);
        for i in 0..n {
            let t_i = g.index_axis0(tap, i); // [I1, I2, I3]
            // Move the mode axis first; column order within the unfolding is
            // irrelevant for the Gram matrix.
            let m_i = match mode {
                0 => g.reshape(t_i, &[i_m, other]),
                1 => {
                    let p = g.permute_axes(t_i, &[1, 0, 2]);
                    g.reshape(p, &[i_m, other])
                }
                _ => {
                    let p = g.permute_axes(t_i, &[2, 0, 1]);
                    g.reshape(p, &[i_m, other])
                }
            };
            let mt = g.transpose(m_i);
            let gram = g.matmul(m_i, mt);
            let proj = g.spectral_projector(gram, r);
            flat_projectors.push(g.reshape(proj, &[1, i_m * i_m]));
        }
        let stack = g.concat(0, &flat_projectors); // [n, I_m²]
        let stack_t = g.transpose(stack);
        let traces = g.matmul(stack, stack_t); // tr(P_i P_j)
        let neg = g.mul_scalar(traces, -1.0);
        let d2 = g.add_scalar(neg, r as f64); // r − tr(P_i P_j)
        let d2 = g.mul_const(d2, off_diagonal_mask(n)); // exact zeros on the diagonal
        let d2 = g.relu(d2); // clamp fp negatives
        let scaled = g.mul_scalar(d2, -1.0 / denom);
        let factor = g.exp(scaled);
        kernel = g.mul(kernel, factor);
    }
    kernel
}

/// Node ids of the three main loss terms.
pub struct TermNodes {
    pub l1: NodeId,
    pub l2: NodeId,
    pub l3: NodeId,
    pub total: NodeId,
}

pub struct CompanionNodes {
    pub layer_index: usize,
    pub l1: NodeId,
    pub l3: NodeId,
    pub total: NodeId,
}

pub struct ObjectiveNodes {
    pub main: TermNodes,
    pub companions: Vec<CompanionNodes>,
    pub total: NodeId,
    pub empty_column_warnings: usize,
}

/// Main three-term loss nodes for an assignment node and a kernel node.
pub fn build_ddc_terms(g: &mut Graph, a: NodeId, k: NodeId) -> (TermNodes, usize) {
    let (l1, w1) = build_cs_ratio(g, a, k);
    let l2 = build_l2(g, a);
    let m = build_simplex_similarity(g, a);
    let (l3, w3) = build_cs_ratio(g, m, k);
    let s = g.add(l1, l2);
    let total = g.add(s, l3);
    (TermNodes { l1, l2, l3, total }, w1 + w3)
}

/// Companion loss nodes (l1 + l3) for one tap kernel.
pub fn build_companion_terms(
    g: &mut Graph,
    layer_index: usize,
    a: NodeId,
    k: NodeId,
) -> (CompanionNodes, usize) {
    let (l1, w1) = build_cs_ratio(g, a, k);
    let m = build_simplex_similarity(g, a);
    let (l3, w3) = build_cs_ratio(g, m, k);
    let total = g.add(l1, l3);
    (
        CompanionNodes {
            layer_index,
            l1,
            l3,
            total,
        },
        w1 + w3,
    )
}

/// Assembles the full objective over a built forward pass. With λ = 0 the
/// companion sub-graphs are not built at all.
pub fn build_total_objective(
    g: &mut Graph,
    fwd: &ForwardNodes,
    sigmas: &SigmaSet,
    weights: &CompanionWeights,
    cfg: &KernelConfig,
) -> Result<ObjectiveNodes, ObjectiveError> {
    weights.validate()?;
    let k_hidden = build_gaussian_kernel(g, fwd.hidden, sigmas.hidden);
    let (main, mut warnings) = build_ddc_terms(g, fwd.assign, k_hidden);
    let mut total = main.total;
    let mut companions = Vec::new();
    if weights.lambda > 0.0 {
        for (li, (kind, tap)) in fwd.taps.iter().enumerate() {
            if !weights.enabled(li) {
                continue;
            }
            let k_tap = match kind {
                TapKind::ConvMap => build_tensor_kernel(g, *tap, sigmas.taps[li], cfg),
                TapKind::LastHiddenState => build_gaussian_kernel(g, *tap, sigmas.taps[li]),
            };
            let (c, w) = build_companion_terms(g, li, fwd.assign, k_tap);
            warnings += w;
            let weighted = g.mul_scalar(c.total, weights.lambda);
            total = g.add(total, weighted);
            companions.push(c);
        }
    }
    Ok(ObjectiveNodes {
        main,
        companions,
        total,
        empty_column_warnings: warnings,
    })
}

/// Reads the eagerly computed term values back out of the graph.
pub fn breakdown_from_nodes(
    g: &Graph,
    nodes: &ObjectiveNodes,
    a_node: NodeId,
    lambda: f64,
) -> ObjectiveBreakdown {
    let a = AssignmentMatrix::new(to2(g.value(a_node))).expect("assignments stay on the simplex");
    let main = LossBreakdown {
        l1_separation: g.scalar_value(nodes.main.l1),
        l2_orthogonality: g.scalar_value(nodes.main.l2),
        l3_corner: g.scalar_value(nodes.main.l3),
        total: g.scalar_value(nodes.main.total),
        simplex_similarity: simplex_similarity(&a),
        empty_column_warnings: nodes.empty_column_warnings,
    };
    let companions = nodes
        .companions
        .iter()
        .map(|c| CompanionTerm {
            layer_index: c.layer_index,
            l1: g.scalar_value(c.l1),
            l3: g.scalar_value(c.l3),
            total: g.scalar_value(c.total),
        })
        .collect();
    ObjectiveBreakdown {
        main,
        companions,
        lambda,
        total: g.scalar_value(nodes.total),
    }
}
