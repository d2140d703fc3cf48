//! Bidirectional gated recurrent backbone builder.
//!
//! Layer recurrence (per direction), with update gate z, reset gate r and
//! candidate state n:
//!
//!   r_t = σ(x_t W_r + h_{t−1} U_r + b_r)
//!   z_t = σ(x_t W_z + h_{t−1} U_z + b_z)
//!   n_t = tanh(x_t W_n + (r_t ∘ h_{t−1}) U_n + b_n)
//!   h_t = (1 − z_t) ∘ n_t + z_t ∘ h_{t−1}
//!
//! Padded positions are masked: the state is carried through unchanged, so
//! the final state of each sequence is exactly its last valid state. The
//! reverse direction walks t from the padded end down to 1 under the same
//! mask, which makes its final state the full backward pass over the valid
//! range.

use super::{Architecture, BackboneSpec, ForwardNodes, NetError, ParamNodes, SequenceBatch, TapKind};
use crate::graph::{Graph, NodeId};
use ndarray::{Array2, ArrayD, IxDyn};

struct GateParams {
    wx: NodeId,
    wh: NodeId,
    b: NodeId,
}

fn gate(params: &ParamNodes, layer: usize, dir: &str, name: &str) -> GateParams {
    GateParams {
        wx: params.node(&format!("gru{layer}.{dir}.{name}.wx")),
        wh: params.node(&format!("gru{layer}.{dir}.{name}.wh")),
        b: params.node(&format!("gru{layer}.{dir}.{name}.b")),
    }
}

fn gate_pre(
    g: &mut Graph,
    x: NodeId,
    h: NodeId,
    p: &GateParams,
    n: usize,
    state: usize,
) -> NodeId {
    let xp = g.matmul(x, p.wx);
    let hp = g.matmul(h, p.wh);
    let s = g.add(xp, hp);
    let b = g.reshape(p.b, &[1, state]);
    let b = g.broadcast(b, &[n, state]);
    g.add(s, b)
}

/// One masked GRU step: returns the new state node.
#[allow(clippy::too_many_arguments)]
fn gru_step(
    g: &mut Graph,
    x_t: NodeId,
    h_prev: NodeId,
    reset: &GateParams,
    update: &GateParams,
    cand: &GateParams,
    mask: &Array2<f64>, // n×state, 1 where the step is valid
    n: usize,
    state: usize,
) -> NodeId {
    let r_pre = gate_pre(g, x_t, h_prev, reset, n, state);
    let r = g.sigmoid(r_pre);
    let z_pre = gate_pre(g, x_t, h_prev, update, n, state);
    let z = g.sigmoid(z_pre);
    let rh = g.mul(r, h_prev);
    let n_pre = gate_pre(g, x_t, rh, cand, n, state);
    let n_val = g.tanh(n_pre);
    let neg_z = g.neg(z);
    let one_minus_z = g.add_scalar(neg_z, 1.0);
    let a = g.mul(one_minus_z, n_val);
    let b = g.mul(z, h_prev);
    let h_new = g.add(a, b);
    // carry the previous state through masked (padded) positions
    let keep = mask.mapv(|m| 1.0 - m);
    let masked_new = g.mul_const(h_new, mask.clone().into_dyn());
    let masked_old = g.mul_const(h_prev, keep.into_dyn());
    g.add(masked_new, masked_old)
}

/// Builds the recurrent forward pass. Each layer's tap is the concatenation
/// of both directions' final states; the last tap feeds the head.
pub fn build_gru_forward(
    g: &mut Graph,
    params: &ParamNodes,
    seqs: &SequenceBatch,
    arch: &Architecture,
    k: usize,
) -> Result<ForwardNodes, NetError> {
    let BackboneSpec::Recurrent { layers, state_size } = &arch.backbone else {
        return Err(NetError::BadArchitecture(
            "build_gru_forward requires a recurrent backbone".into(),
        ));
    };
    let (layers, state) = (*layers, *state_size);
    let n = seqs.n();
    let t_max = seqs.max_len();

    // Step masks, shared by both directions.
    let masks: Vec<Array2<f64>> = (0..t_max)
        .map(|t| {
            Array2::from_shape_fn((n, state), |(i, _)| {
                if t < seqs.lengths()[i] {
                    1.0
                } else {
                    0.0
                }
            })
        })
        .collect();

    // Layer inputs: per-timestep nodes. Layer 1 reads the raw sequence.
    let mut inputs: Vec<NodeId> = (0..t_max)
        .map(|t| g.constant(seqs.step(t).into_dyn()))
        .collect();
    let input_node = inputs[0];

    let mut taps = Vec::new();
    for layer in 1..=layers {
        let fwd_gates = (
            gate(params, layer, "fwd", "reset"),
            gate(params, layer, "fwd", "update"),
            gate(params, layer, "fwd", "cand"),
        );
        let rev_gates = (
            gate(params, layer, "rev", "reset"),
            gate(params, layer, "rev", "update"),
            gate(params, layer, "rev", "cand"),
        );

        let zero_state = ArrayD::zeros(IxDyn(&[n, state]));
        let mut h_fwd = g.constant(zero_state.clone());
        let mut fwd_states = Vec::with_capacity(t_max);
        for t in 0..t_max {
            h_fwd = gru_step(
                g,
                inputs[t],
                h_fwd,
                &fwd_gates.0,
                &fwd_gates.1,
                &fwd_gates.2,
                &masks[t],
                n,
                state,
            );
            fwd_states.push(h_fwd);
        }

        let mut h_rev = g.constant(zero_state);
        let mut rev_states = vec![h_rev; t_max];
        for t in (0..t_max).rev() {
            h_rev = gru_step(
                g,
                inputs[t],
                h_rev,
                &rev_gates.0,
                &rev_gates.1,
                &rev_gates.2,
                &masks[t],
                n,
                state,
            );
            rev_states[t] = h_rev;
        }

        // Tap: final state of each direction, concatenated.
        let tap = g.concat(1, &[h_fwd, h_rev]);
        taps.push((TapKind::LastHiddenState, tap));

        // Next layer reads the per-step bidirectional outputs.
        inputs = (0..t_max)
            .map(|t| g.concat(1, &[fwd_states[t], rev_states[t]]))
            .collect();
    }

    let feed = taps.last().unwrap().1;
    let fc_w = params.node("fc_hidden.w");
    let fc_b = params.node("fc_hidden.b");
    let pre = g.matmul(feed, fc_w);
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
        input: input_node,
        taps,
        hidden,
        assign,
    })
}
