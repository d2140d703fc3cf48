//! Convolutional backbone builder.

use super::{
    Activation, Architecture, BackboneSpec, ForwardNodes, InputMeta, NetError, ParamNodes, TapKind,
};
use crate::graph::{Graph, NodeId};

const BN_EPS: f64 = 1e-5;

/// Batch norm over (n, h, w) per channel, built from differentiable
/// primitives so the adjoint accounts for the batch statistics.
fn batch_norm_nchw(
    g: &mut Graph,
    x: NodeId,
    gamma: NodeId,
    beta: NodeId,
    shape: [usize; 4],
) -> NodeId {
    let [n, c, h, w] = shape;
    let m = (n * h * w) as f64;
    let bshape = [n, c, h, w];

    let per_channel = |g: &mut Graph, v: NodeId| {
        let s3 = g.sum_axis(v, 3);
        let s2 = g.sum_axis(s3, 2);
        let s0 = g.sum_axis(s2, 0);
        g.mul_scalar(s0, 1.0 / m) // [c]
    };
    let spread = |g: &mut Graph, v: NodeId| {
        let r = g.reshape(v, &[1, c, 1, 1]);
        g.broadcast(r, &bshape)
    };

    let mean = per_channel(g, x);
    let mean_b = spread(g, mean);
    let centered = g.sub(x, mean_b);
    let sq = g.mul(centered, centered);
    let var = per_channel(g, sq);
    let var_eps = g.add_scalar(var, BN_EPS);
    let std = g.sqrt(var_eps);
    let std_b = spread(g, std);
    let normed = g.div(centered, std_b);
    let gamma_b = spread(g, gamma);
    let beta_b = spread(g, beta);
    let scaled = g.mul(normed, gamma_b);
    g.add(scaled, beta_b)
}

/// Builds the image forward pass. Every conv block ends in a tap; the
/// flattened last tap feeds the fully-connected head.
pub fn build_cnn_forward(
    g: &mut Graph,
    params: &ParamNodes,
    x: NodeId,
    arch: &Architecture,
    input: &InputMeta,
    k: usize,
) -> Result<ForwardNodes, NetError> {
    let BackboneSpec::Conv { blocks } = &arch.backbone else {
        return Err(NetError::BadArchitecture(
            "build_cnn_forward requires a conv backbone".into(),
        ));
    };
    let InputMeta::Image {
        channels,
        height,
        width,
    } = input
    else {
        return Err(NetError::BadArchitecture("image input required".into()));
    };
    let xs = g.value(x).shape().to_vec();
    if xs.len() != 4 || xs[1] != *channels || xs[2] != *height || xs[3] != *width {
        return Err(NetError::ShapeMismatch(format!(
            "input {xs:?} vs declared {channels}×{height}×{width}"
        )));
    }
    let n = xs[0];

    let mut cur = x;
    let (mut c_in, mut h, mut w) = (*channels, *height, *width);
    let mut taps = Vec::new();
    for (i, b) in blocks.iter().enumerate() {
        if h % 2 != 0 || w % 2 != 0 {
            return Err(NetError::BadArchitecture(format!(
                "spatial dims {h}×{w} not divisible by 2 at block {}",
                i + 1
            )));
        }
        let pad = (b.kernel - 1) / 2;
        let cols = g.im2col(cur, b.kernel, pad); // [n·h·w, c_in·k²]
        let wmat = params.node(&format!("conv{}.w", i + 1));
        let z = g.matmul(cols, wmat); // [n·h·w, c_out]
        let bias = params.node(&format!("conv{}.b", i + 1));
        let bias = g.reshape(bias, &[1, b.channels]);
        let bias = g.broadcast(bias, &[n * h * w, b.channels]);
        let z = g.add(z, bias);
        let z = g.reshape(z, &[n, h, w, b.channels]);
        let z = g.permute_axes(z, &[0, 3, 1, 2]); // [n, c_out, h, w]
        let act = match b.activation {
            Activation::Relu => g.relu(z),
            Activation::Tanh => g.tanh(z),
        };
        let pooled = g.max_pool_2x2(act);
        h /= 2;
        w /= 2;
        let gamma = params.node(&format!("bn{}.gamma", i + 1));
        let beta = params.node(&format!("bn{}.beta", i + 1));
        let out = batch_norm_nchw(g, pooled, gamma, beta, [n, b.channels, h, w]);
        taps.push((TapKind::ConvMap, out));
        cur = out;
        c_in = b.channels;
    }

    let flat = g.reshape(cur, &[n, c_in * h * w]);
    let fc_w = params.node("fc_hidden.w");
    let fc_b = params.node("fc_hidden.b");
    let pre = g.matmul(flat, fc_w);
    let fc_b = g.reshape(fc_b, &[1, arch.hidden_units]);
    let fc_b = g.broadcast(fc_b, &[n, arch.hidden_units]);
    let pre = g.add(pre, fc_b);
    let hidden = g.relu(pre);

    let head_w = params.node("head.w");
    let head_b = params.node("head.b");
    let logits = g.matmul(hidden, head_w);
    let head_b = g.reshape(head_b, &[1, k]);
    let head_b = g.broadcast(head_b, &[n, k]);
    let logits = g.add(logits, head_b);
    let assign = g.softmax_rows(logits);

    Ok(ForwardNodes {
        input: x,
        taps,
        hidden,
        assign,
    })
}
