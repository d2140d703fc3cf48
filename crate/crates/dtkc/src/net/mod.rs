//! Trainable backbones with per-layer taps and the clustering head.
//!
//! Both backbones end in the same head: a fully-connected hidden layer (the
//! representation the final kernel is built on) followed by a k-unit linear
//! layer with row softmax producing the assignment matrix.

mod cnn;
mod gru;

pub use cnn::build_cnn_forward;
pub use gru::build_gru_forward;

use crate::graph::{Graph, NodeId};
use crate::loss::AssignmentMatrix;
use crate::tensor::DenseTensor;
use ndarray::{Array2, Array3, ArrayD, IxDyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("input shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("sequence {0} has length 0")]
    EmptySequence(usize),
    #[error("padding of sequence {seq} at position {pos} is nonzero")]
    NonZeroPadding { seq: usize, pos: usize },
    #[error("unknown parameter {0}")]
    UnknownParam(String),
    #[error("architecture invalid: {0}")]
    BadArchitecture(String),
}

/// What a tapped layer yields for the companion objectives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TapKind {
    ConvMap,
    LastHiddenState,
}

/// Batch of layer outputs: rank-3 feature maps for convolutional taps,
/// vectors for recurrent taps.
#[derive(Debug, Clone)]
pub enum FeatureBatch {
    ConvMaps(Vec<DenseTensor>),
    Vectors(Array2<f64>),
}

impl FeatureBatch {
    pub fn n(&self) -> usize {
        match self {
            FeatureBatch::ConvMaps(v) => v.len(),
            FeatureBatch::Vectors(m) => m.nrows(),
        }
    }

    /// Row-major flattening of each observation, used for bandwidth
    /// selection.
    pub fn flattened(&self) -> Array2<f64> {
        match self {
            FeatureBatch::ConvMaps(v) => crate::tensor::flatten_tensors(v),
            FeatureBatch::Vectors(m) => m.clone(),
        }
    }
}

/// One tapped layer of a forward pass.
#[derive(Debug, Clone)]
pub struct LayerTap {
    pub layer_index: usize,
    pub kind: TapKind,
    pub batch: FeatureBatch,
}

/// Variable-length sequences, zero-padded to a common length and masked in
/// the recurrence.
#[derive(Debug, Clone)]
pub struct SequenceBatch {
    values: Array3<f64>, // n × T_max × dim
    lengths: Vec<usize>,
}

impl SequenceBatch {
    pub fn new(values: Array3<f64>, lengths: Vec<usize>) -> Result<Self, NetError> {
        let (n, t_max, dim) = values.dim();
        if lengths.len() != n {
            return Err(NetError::ShapeMismatch(format!(
                "{n} sequences but {} lengths",
                lengths.len()
            )));
        }
        for (i, &len) in lengths.iter().enumerate() {
            if len == 0 {
                return Err(NetError::EmptySequence(i));
            }
            if len > t_max {
                return Err(NetError::ShapeMismatch(format!(
                    "length {len} exceeds padded extent {t_max}"
                )));
            }
            for t in len..t_max {
                for d in 0..dim {
                    if values[(i, t, d)] != 0.0 {
                        return Err(NetError::NonZeroPadding { seq: i, pos: t });
                    }
                }
            }
        }
        Ok(Self { values, lengths })
    }

    pub fn n(&self) -> usize {
        self.values.dim().0
    }

    pub fn max_len(&self) -> usize {
        self.values.dim().1
    }

    pub fn dim(&self) -> usize {
        self.values.dim().2
    }

    pub fn values(&self) -> &Array3<f64> {
        &self.values
    }

    pub fn lengths(&self) -> &[usize] {
        &self.lengths
    }

    /// Rows of elements at time `t` as an n×dim matrix.
    pub fn step(&self, t: usize) -> Array2<f64> {
        let (n, _, dim) = self.values.dim();
        Array2::from_shape_fn((n, dim), |(i, d)| self.values[(i, t, d)])
    }

    /// Subset of sequences by row indices (batch assembly).
    pub fn select(&self, idx: &[usize]) -> SequenceBatch {
        let dim = self.dim();
        let t_max = idx
            .iter()
            .map(|&i| self.lengths[i])
            .max()
            .unwrap_or(1)
            .max(1);
        let mut values = Array3::zeros((idx.len(), t_max, dim));
        let mut lengths = Vec::with_capacity(idx.len());
        for (row, &i) in idx.iter().enumerate() {
            lengths.push(self.lengths[i]);
            for t in 0..self.lengths[i] {
                for d in 0..dim {
                    values[(row, t, d)] = self.values[(i, t, d)];
                }
            }
        }
        SequenceBatch { values, lengths }
    }
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

/// One convolutional block: kernel`×`kernel same-padding convolution,
/// activation, 2×2 max pool, batch norm.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ConvBlock {
    pub channels: usize,
    pub kernel: usize,
    #[serde(default)]
    pub activation: Activation,
}

impl ConvBlock {
    pub fn new(channels: usize, kernel: usize) -> Self {
        Self {
            channels,
            kernel,
            activation: Activation::Relu,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum BackboneSpec {
    /// Stack of convolutional blocks; each block's output is a tap.
    Conv { blocks: Vec<ConvBlock> },
    /// Stacked bidirectional gated recurrent layers; each layer's last
    /// hidden states (both directions concatenated) are a tap.
    Recurrent { layers: usize, state_size: usize },
}

/// JSON-serializable model description.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub backbone: BackboneSpec,
    /// Width of the fully-connected hidden layer feeding the head.
    pub hidden_units: usize,
}

/// Default image backbone: two 5×5 conv blocks (32 and 64 channels) and a
/// 100-unit hidden layer.
pub fn default_cnn_architecture() -> Architecture {
    Architecture {
        backbone: BackboneSpec::Conv {
            blocks: vec![
                ConvBlock::new(32, 5),
                ConvBlock::new(64, 5),
            ],
        },
        hidden_units: 100,
    }
}

/// Default sequence backbone: two bidirectional recurrent layers with
/// 32-dimensional states per direction.
pub fn default_rnn_architecture() -> Architecture {
    Architecture {
        backbone: BackboneSpec::Recurrent {
            layers: 2,
            state_size: 32,
        },
        hidden_units: 100,
    }
}

/// Input geometry the parameters were built for.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum InputMeta {
    Image {
        channels: usize,
        height: usize,
        width: usize,
    },
    Sequence {
        dim: usize,
    },
}

/// Expected tap shapes for an image architecture (shape arithmetic only).
pub fn conv_tap_shapes(
    arch: &Architecture,
    input: &InputMeta,
) -> Result<Vec<[usize; 3]>, NetError> {
    let (BackboneSpec::Conv { blocks }, InputMeta::Image { height, width, .. }) =
        (&arch.backbone, input)
    else {
        return Err(NetError::BadArchitecture(
            "conv_tap_shapes requires a conv backbone and image input".into(),
        ));
    };
    let (mut h, mut w) = (*height, *width);
    let mut shapes = Vec::new();
    for b in blocks {
        if h % 2 != 0 || w % 2 != 0 {
            return Err(NetError::BadArchitecture(format!(
                "spatial dims {h}×{w} not divisible by 2 for pooling"
            )));
        }
        h /= 2;
        w /= 2;
        shapes.push([b.channels, h, w]);
    }
    Ok(shapes)
}

/// Named parameter arrays in a fixed creation order.
#[derive(Debug, Clone)]
pub struct ModelParams {
    arrays: Vec<(String, ArrayD<f64>)>,
    seed: u64,
}

impl ModelParams {
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn arrays(&self) -> &[(String, ArrayD<f64>)] {
        &self.arrays
    }

    pub fn arrays_mut(&mut self) -> &mut [(String, ArrayD<f64>)] {
        &mut self.arrays
    }

    pub fn from_arrays(arrays: Vec<(String, ArrayD<f64>)>, seed: u64) -> Self {
        Self { arrays, seed }
    }

    pub fn get(&self, name: &str) -> Result<&ArrayD<f64>, NetError> {
        self.arrays
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, a)| a)
            .ok_or_else(|| NetError::UnknownParam(name.to_string()))
    }

    pub fn set(&mut self, name: &str, value: ArrayD<f64>) -> Result<(), NetError> {
        let slot = self
            .arrays
            .iter_mut()
            .find(|(n, _)| n == name)
            .ok_or_else(|| NetError::UnknownParam(name.to_string()))?;
        slot.1 = value;
        Ok(())
    }

    /// Initializes all parameters for `arch` on inputs described by `input`,
    /// with `k` output clusters. Deterministic per seed.
    pub fn init(
        arch: &Architecture,
        input: &InputMeta,
        k: usize,
        seed: u64,
    ) -> Result<Self, NetError> {
        use rand::SeedableRng;
        if k < 2 {
            return Err(NetError::BadArchitecture(format!("k = {k} < 2")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut arrays: Vec<(String, ArrayD<f64>)> = Vec::new();

        let he = |rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize| {
            let dist = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).unwrap();
            ArrayD::from_shape_fn(IxDyn(shape), |_| dist.sample(rng))
        };

        let head_in = match (&arch.backbone, input) {
            (BackboneSpec::Conv { blocks }, InputMeta::Image { channels, .. }) => {
                if blocks.is_empty() {
                    return Err(NetError::BadArchitecture("no conv blocks".into()));
                }
                let shapes = conv_tap_shapes(arch, input)?;
                let mut c_in = *channels;
                for (i, b) in blocks.iter().enumerate() {
                    if b.kernel % 2 == 0 {
                        return Err(NetError::BadArchitecture(
                            "even kernel sizes unsupported (same padding)".into(),
                        ));
                    }
                    let fan_in = c_in * b.kernel * b.kernel;
                    arrays.push((
                        format!("conv{}.w", i + 1),
                        he(&mut rng, &[fan_in, b.channels], fan_in),
                    ));
                    arrays.push((
                        format!("conv{}.b", i + 1),
                        ArrayD::zeros(IxDyn(&[b.channels])),
                    ));
                    arrays.push((
                        format!("bn{}.gamma", i + 1),
                        ArrayD::from_elem(IxDyn(&[b.channels]), 1.0),
                    ));
                    arrays.push((
                        format!("bn{}.beta", i + 1),
                        ArrayD::zeros(IxDyn(&[b.channels])),
                    ));
                    c_in = b.channels;
                }
                let last = shapes.last().unwrap();
                last[0] * last[1] * last[2]
            }
            (BackboneSpec::Recurrent { layers, state_size }, InputMeta::Sequence { dim }) => {
                if *layers == 0 || *state_size == 0 {
                    return Err(NetError::BadArchitecture("empty recurrent backbone".into()));
                }
                let h = *state_size;
                for l in 0..*layers {
                    let d_in = if l == 0 { *dim } else { 2 * h };
                    for dir in ["fwd", "rev"] {
                        for gate in ["reset", "update", "cand"] {
                            let std_x = (1.0 / d_in as f64).sqrt();
                            let std_h = (1.0 / h as f64).sqrt();
                            let dist_x = Normal::new(0.0, std_x).unwrap();
                            let dist_h = Normal::new(0.0, std_h).unwrap();
                            arrays.push((
                                format!("gru{}.{dir}.{gate}.wx", l + 1),
                                ArrayD::from_shape_fn(IxDyn(&[d_in, h]), |_| {
                                    dist_x.sample(&mut rng)
                                }),
                            ));
                            arrays.push((
                                format!("gru{}.{dir}.{gate}.wh", l + 1),
                                ArrayD::from_shape_fn(IxDyn(&[h, h]), |_| dist_h.sample(&mut rng)),
                            ));
                            arrays.push((
                                format!("gru{}.{dir}.{gate}.b", l + 1),
                                ArrayD::zeros(IxDyn(&[h])),
                            ));
                        }
                    }
                }
                2 * h
            }
            _ => {
                return Err(NetError::BadArchitecture(
                    "backbone and input kinds disagree".into(),
                ));
            }
        };

        arrays.push((
            "fc_hidden.w".into(),
            he(&mut rng, &[head_in, arch.hidden_units], head_in),
        ));
        arrays.push(("fc_hidden.b".into(), ArrayD::zeros(IxDyn(&[arch.hidden_units]))));
        let glorot_std = (2.0 / (arch.hidden_units + k) as f64).sqrt();
        let dist = Normal::new(0.0, glorot_std).unwrap();
        arrays.push((
            "head.w".into(),
            ArrayD::from_shape_fn(IxDyn(&[arch.hidden_units, k]), |_| dist.sample(&mut rng)),
        ));
        arrays.push(("head.b".into(), ArrayD::zeros(IxDyn(&[k]))));

        let _ = rng.gen::<u64>(); // leave the stream in a defined state
        Ok(Self { arrays, seed })
    }
}

/// Graph handles produced by a forward builder.
pub struct ForwardNodes {
    pub input: NodeId,
    pub taps: Vec<(TapKind, NodeId)>,
    pub hidden: NodeId,
    pub assign: NodeId,
}

/// Parameter leaves inserted into a graph, in `ModelParams` order.
pub struct ParamNodes {
    names: Vec<String>,
    pub ids: Vec<NodeId>,
}

impl ParamNodes {
    /// Inserts every parameter array as a differentiable leaf.
    pub fn insert(g: &mut Graph, params: &ModelParams) -> Self {
        let mut names = Vec::new();
        let mut ids = Vec::new();
        for (name, arr) in params.arrays() {
            names.push(name.clone());
            ids.push(g.leaf(arr.clone()));
        }
        Self { names, ids }
    }

    pub fn node(&self, name: &str) -> NodeId {
        let idx = self
            .names
            .iter()
            .position(|n| n == name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        self.ids[idx]
    }
}

/// Value-level forward pass: taps, hidden representation, assignments.
pub struct ForwardPass {
    pub taps: Vec<LayerTap>,
    pub hidden: Array2<f64>,
    pub assignments: AssignmentMatrix,
}

fn extract_forward(g: &Graph, nodes: &ForwardNodes) -> ForwardPass {
    let mut taps = Vec::new();
    for (li, (kind, id)) in nodes.taps.iter().enumerate() {
        let v = g.value(*id);
        let batch = match kind {
            TapKind::ConvMap => {
                let s = v.shape();
                let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
                let mut tensors = Vec::with_capacity(n);
                for i in 0..n {
                    let slice = v.index_axis(ndarray::Axis(0), i);
                    let vals: Vec<f64> = slice.iter().copied().collect();
                    tensors.push(DenseTensor::new(vec![c, h, w], vals).expect("valid tap tensor"));
                }
                FeatureBatch::ConvMaps(tensors)
            }
            TapKind::LastHiddenState => {
                let m = v
                    .view()
                    .into_dimensionality::<ndarray::Ix2>()
                    .unwrap()
                    .to_owned();
                FeatureBatch::Vectors(m)
            }
        };
        taps.push(LayerTap {
            layer_index: li,
            kind: *kind,
            batch,
        });
    }
    let hidden = g
        .value(nodes.hidden)
        .view()
        .into_dimensionality::<ndarray::Ix2>()
        .unwrap()
        .to_owned();
    let assign = g
        .value(nodes.assign)
        .view()
        .into_dimensionality::<ndarray::Ix2>()
        .unwrap()
        .to_owned();
    ForwardPass {
        taps,
        hidden,
        assignments: AssignmentMatrix::new(assign).expect("softmax rows are on the simplex"),
    }
}

/// Forward pass of the image backbone on a batch `[n, C, H, W]`.
pub fn cnn_forward(
    images: &ndarray::Array4<f64>,
    params: &ModelParams,
    arch: &Architecture,
    input: &InputMeta,
    k: usize,
) -> Result<ForwardPass, NetError> {
    let mut g = Graph::new();
    let x = g.constant(images.clone().into_dyn());
    let pnodes = ParamNodes::insert(&mut g, params);
    let nodes = build_cnn_forward(&mut g, &pnodes, x, arch, input, k)?;
    Ok(extract_forward(&g, &nodes))
}

/// Forward pass of the recurrent backbone on a padded sequence batch.
pub fn rnn_forward(
    seqs: &SequenceBatch,
    params: &ModelParams,
    arch: &Architecture,
    k: usize,
) -> Result<ForwardPass, NetError> {
    let mut g = Graph::new();
    let pnodes = ParamNodes::insert(&mut g, params);
    let nodes = build_gru_forward(&mut g, &pnodes, seqs, arch, k)?;
    Ok(extract_forward(&g, &nodes))
}
