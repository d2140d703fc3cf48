//! Define-by-run reverse-mode differentiation over dense f64 arrays.
//!
//! A [`Graph`] owns a flat list of nodes; every op computes its value eagerly
//! at insertion, so intermediate results (per-term losses, kernel entries)
//! can be read back without a separate forward pass. `backward` walks the
//! node list in reverse and accumulates vector-Jacobian products.
//!
//! Besides the usual elementwise/matmul ops, two domain-specific ops carry
//! hand-written adjoints:
//!
//! - `pairwise_sq_dist`: squared Euclidean distances between rows, with an
//!   exactly zero diagonal.
//! - `spectral_projector`: the projector onto the top-r eigenspace of a
//!   symmetric matrix, differentiated through the eigendecomposition.

use ndarray::{ArrayD, ArrayViewD, Axis, IxDyn};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Neg(NodeId),
    AddScalar(NodeId),
    MulScalar(NodeId, f64),
    Exp(NodeId),
    Sqrt(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Relu(NodeId),
    Matmul(NodeId, NodeId),
    Transpose(NodeId),
    Reshape(NodeId),
    Broadcast(NodeId),
    SumAll(NodeId),
    SumAxis(NodeId, usize),
    DiagPart(NodeId),
    MulConstArr(NodeId, ArrayD<f64>),
    Concat { axis: usize, parts: Vec<NodeId> },
    PermuteAxes(NodeId, Vec<usize>),
    IndexAxis0(NodeId, usize),
    Im2col { x: NodeId, k: usize, pad: usize },
    MaxPool2x2 { x: NodeId, argmax: Vec<usize> },
    PairwiseSqDist(NodeId),
    SpectralProjector { g: NodeId, r: usize, eigvals: Vec<f64>, eigvecs: ArrayD<f64> },
}

struct Node {
    value: ArrayD<f64>,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

pub struct Gradients {
    grads: Vec<Option<ArrayD<f64>>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&ArrayD<f64>> {
        self.grads[id.0].as_ref()
    }
}

fn as2(v: &ArrayD<f64>) -> ndarray::ArrayView2<'_, f64> {
    v.view()
        .into_dimensionality::<ndarray::Ix2>()
        .expect("expected rank-2 array")
}

fn standardize(a: ArrayD<f64>) -> ArrayD<f64> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &ArrayD<f64> {
        &self.nodes[id.0].value
    }

    /// Scalar value of a single-element node.
    pub fn scalar_value(&self, id: NodeId) -> f64 {
        let v = self.value(id);
        debug_assert_eq!(v.len(), 1);
        v.iter().next().copied().unwrap()
    }

    fn push(&mut self, value: ArrayD<f64>, op: Op, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value: standardize(value),
            op,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, value: ArrayD<f64>) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    /// Differentiable input (parameter or probed input).
    pub fn leaf(&mut self, value: ArrayD<f64>) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    pub fn scalar(&mut self, v: f64) -> NodeId {
        self.constant(ArrayD::from_elem(IxDyn(&[1]), v))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b), self.needs(a) || self.needs(b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a, b), self.needs(a) || self.needs(b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b), self.needs(a) || self.needs(b))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a) / self.value(b);
        self.push(v, Op::Div(a, b), self.needs(a) || self.needs(b))
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(|x| -x);
        self.push(v, Op::Neg(a), self.needs(a))
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a).mapv(|x| x + c);
        self.push(v, Op::AddScalar(a), self.needs(a))
    }

    pub fn mul_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a).mapv(|x| x * c);
        self.push(v, Op::MulScalar(a, c), self.needs(a))
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(f64::exp);
        self.push(v, Op::Exp(a), self.needs(a))
    }

    pub fn sqrt(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(f64::sqrt);
        self.push(v, Op::Sqrt(a), self.needs(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(f64::tanh);
        self.push(v, Op::Tanh(a), self.needs(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(|x| 1.0 / (1.0 + (-x).exp()));
        self.push(v, Op::Sigmoid(a), self.needs(a))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(|x| x.max(0.0));
        self.push(v, Op::Relu(a), self.needs(a))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = as2(self.value(a)).dot(&as2(self.value(b)));
        self.push(
            v.into_dyn(),
            Op::Matmul(a, b),
            self.needs(a) || self.needs(b),
        )
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = as2(self.value(a)).t().to_owned().into_dyn();
        self.push(v, Op::Transpose(a), self.needs(a))
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> NodeId {
        let v = self
            .value(a)
            .clone()
            .into_shape_with_order(IxDyn(shape))
            .expect("reshape: element counts differ");
        self.push(v, Op::Reshape(a), self.needs(a))
    }

    /// Broadcast to `shape`; the source must have the same rank with each
    /// axis either matching or of size 1.
    pub fn broadcast(&mut self, a: NodeId, shape: &[usize]) -> NodeId {
        let src = self.value(a);
        assert_eq!(src.ndim(), shape.len(), "broadcast: rank mismatch");
        for (ax, (&s, &t)) in src.shape().iter().zip(shape.iter()).enumerate() {
            assert!(s == t || s == 1, "broadcast: axis {ax} incompatible");
        }
        let v = src.broadcast(IxDyn(shape)).unwrap().to_owned();
        self.push(v, Op::Broadcast(a), self.needs(a))
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).sum();
        self.push(
            ArrayD::from_elem(IxDyn(&[1]), s),
            Op::SumAll(a),
            self.needs(a),
        )
    }

    pub fn sum_axis(&mut self, a: NodeId, axis: usize) -> NodeId {
        let v = self.value(a).sum_axis(Axis(axis));
        self.push(v, Op::SumAxis(a, axis), self.needs(a))
    }

    /// Diagonal of a square matrix as a vector.
    pub fn diag_part(&mut self, a: NodeId) -> NodeId {
        let m = as2(self.value(a));
        assert_eq!(m.nrows(), m.ncols());
        let v = ndarray::Array1::from_iter((0..m.nrows()).map(|i| m[(i, i)]));
        self.push(v.into_dyn(), Op::DiagPart(a), self.needs(a))
    }

    /// Elementwise product with a non-differentiable constant (masking).
    pub fn mul_const(&mut self, a: NodeId, c: ArrayD<f64>) -> NodeId {
        let v = self.value(a) * &c;
        self.push(v, Op::MulConstArr(a, c), self.needs(a))
    }

    pub fn concat(&mut self, axis: usize, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let views: Vec<ArrayViewD<f64>> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(axis), &views).expect("concat: shape mismatch");
        let needs = parts.iter().any(|&p| self.needs(p));
        self.push(
            v,
            Op::Concat {
                axis,
                parts: parts.to_vec(),
            },
            needs,
        )
    }

    pub fn permute_axes(&mut self, a: NodeId, perm: &[usize]) -> NodeId {
        let v = self.value(a).view().permuted_axes(IxDyn(perm)).to_owned();
        self.push(v, Op::PermuteAxes(a, perm.to_vec()), self.needs(a))
    }

    /// Select one index along axis 0, dropping the axis.
    pub fn index_axis0(&mut self, a: NodeId, i: usize) -> NodeId {
        let v = self.value(a).index_axis(Axis(0), i).to_owned();
        self.push(v, Op::IndexAxis0(a, i), self.needs(a))
    }

    /// Patch-extraction for stride-1 `k`×`k` convolution with symmetric
    /// padding `pad`. Input `[n, C, H, W]`, output `[n·H·W, C·k·k]` with rows
    /// ordered (n, h, w) and columns ordered (c, dy, dx).
    pub fn im2col(&mut self, x: NodeId, k: usize, pad: usize) -> NodeId {
        let xv = self.value(x);
        let (n, c, h, w) = dims4(xv);
        let mut out = ndarray::Array2::<f64>::zeros((n * h * w, c * k * k));
        for b in 0..n {
            for oy in 0..h {
                for ox in 0..w {
                    let row = (b * h + oy) * w + ox;
                    for ch in 0..c {
                        for dy in 0..k {
                            for dx in 0..k {
                                let iy = oy + dy;
                                let ix = ox + dx;
                                if iy < pad || ix < pad {
                                    continue;
                                }
                                let (iy, ix) = (iy - pad, ix - pad);
                                if iy >= h || ix >= w {
                                    continue;
                                }
                                out[(row, (ch * k + dy) * k + dx)] = xv[[b, ch, iy, ix]];
                            }
                        }
                    }
                }
            }
        }
        self.push(out.into_dyn(), Op::Im2col { x, k, pad }, self.needs(x))
    }

    /// 2×2 max pooling with stride 2; spatial dims must be even.
    pub fn max_pool_2x2(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let (n, c, h, w) = dims4(xv);
        assert!(h % 2 == 0 && w % 2 == 0, "max_pool_2x2: odd spatial dims");
        let (oh, ow) = (h / 2, w / 2);
        let mut out = ArrayD::<f64>::zeros(IxDyn(&[n, c, oh, ow]));
        let mut argmax = vec![0usize; n * c * oh * ow];
        let mut slot = 0usize;
        for b in 0..n {
            for ch in 0..c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_idx = 0usize;
                        for dy in 0..2 {
                            for dx in 0..2 {
                                let iy = 2 * oy + dy;
                                let ix = 2 * ox + dx;
                                let v = xv[[b, ch, iy, ix]];
                                if v > best {
                                    best = v;
                                    best_idx = ((b * c + ch) * h + iy) * w + ix;
                                }
                            }
                        }
                        out[[b, ch, oy, ox]] = best;
                        argmax[slot] = best_idx;
                        slot += 1;
                    }
                }
            }
        }
        self.push(out, Op::MaxPool2x2 { x, argmax }, self.needs(x))
    }

    /// Squared Euclidean distances between the rows of `x` (shape `[n, d]`),
    /// with an exactly-zero diagonal and exact symmetry.
    pub fn pairwise_sq_dist(&mut self, x: NodeId) -> NodeId {
        let xv = as2(self.value(x));
        let n = xv.nrows();
        let mut d = ndarray::Array2::<f64>::zeros((n, n));
        for i in 0..n {
            for j in (i + 1)..n {
                let mut acc = 0.0;
                for c in 0..xv.ncols() {
                    let diff = xv[(i, c)] - xv[(j, c)];
                    acc += diff * diff;
                }
                let acc = acc.max(0.0);
                d[(i, j)] = acc;
                d[(j, i)] = acc;
            }
        }
        self.push(d.into_dyn(), Op::PairwiseSqDist(x), self.needs(x))
    }

    /// Projector onto the top-`r` eigenspace of a symmetric matrix.
    ///
    /// The input is symmetrized before decomposition. The adjoint assumes a
    /// non-degenerate gap λ_r > λ_{r+1}; near-degenerate terms are dropped.
    pub fn spectral_projector(&mut self, g: NodeId, r: usize) -> NodeId {
        let gv = as2(self.value(g));
        let m = gv.nrows();
        assert_eq!(m, gv.ncols(), "spectral_projector: square input required");
        assert!(r >= 1 && r <= m, "spectral_projector: rank out of range");
        let sym = nalgebra::DMatrix::from_fn(m, m, |i, j| 0.5 * (gv[(i, j)] + gv[(j, i)]));
        let eig = sym.symmetric_eigen();
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| {
            eig.eigenvalues[b]
                .partial_cmp(&eig.eigenvalues[a])
                .unwrap()
                .then(a.cmp(&b))
        });
        let eigvals: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let mut eigvecs = ndarray::Array2::<f64>::zeros((m, m));
        for (col, &src) in order.iter().enumerate() {
            for row in 0..m {
                eigvecs[(row, col)] = eig.eigenvectors[(row, src)];
            }
        }
        let u_r = eigvecs.slice(ndarray::s![.., ..r]);
        let p = u_r.dot(&u_r.t());
        self.push(
            p.into_dyn(),
            Op::SpectralProjector {
                g,
                r,
                eigvals,
                eigvecs: eigvecs.into_dyn(),
            },
            self.needs(g),
        )
    }

    /// Numerically stable row softmax. The row maximum is detached, which is
    /// exact because softmax is shift-invariant.
    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let v = as2(self.value(a));
        let (n, _k) = v.dim();
        let rowmax = ndarray::Array2::from_shape_fn((n, 1), |(i, _)| {
            v.row(i).iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        });
        let shape = self.value(a).shape().to_vec();
        let mx = self.constant(rowmax.into_dyn());
        let mxb = self.broadcast(mx, &shape);
        let shifted = self.sub(a, mxb);
        let e = self.exp(shifted);
        let s = self.sum_axis(e, 1);
        let s = self.reshape(s, &[n, 1]);
        let sb = self.broadcast(s, &shape);
        self.div(e, sb)
    }

    /// Reverse-mode sweep from a single-element root.
    pub fn backward(&self, root: NodeId) -> Gradients {
        assert_eq!(
            self.value(root).len(),
            1,
            "backward: root must be a scalar node"
        );
        let mut grads: Vec<Option<ArrayD<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(ArrayD::from_elem(self.value(root).raw_dim(), 1.0));

        for idx in (0..=root.0).rev() {
            if grads[idx].is_none() || !self.nodes[idx].needs_grad {
                continue;
            }
            let g = grads[idx].take().unwrap();
            self.accumulate_parents(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn accumulate_parents(
        &self,
        idx: usize,
        g: &ArrayD<f64>,
        grads: &mut [Option<ArrayD<f64>>],
    ) {
        let mut acc = |id: NodeId, delta: ArrayD<f64>| {
            if !self.nodes[id.0].needs_grad {
                return;
            }
            match &mut grads[id.0] {
                Some(existing) => *existing += &delta,
                slot @ None => *slot = Some(standardize(delta)),
            }
        };

        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.mapv(|x| -x));
            }
            Op::Mul(a, b) => {
                acc(*a, g * self.value(*b));
                acc(*b, g * self.value(*a));
            }
            Op::Div(a, b) => {
                let bv = self.value(*b);
                acc(*a, g / bv);
                let av = self.value(*a);
                acc(*b, -(g * av) / (bv * bv));
            }
            Op::Neg(a) => acc(*a, g.mapv(|x| -x)),
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::MulScalar(a, c) => acc(*a, g.mapv(|x| x * c)),
            Op::Exp(a) => acc(*a, g * &self.nodes[idx].value),
            Op::Sqrt(a) => {
                let y = &self.nodes[idx].value;
                acc(*a, g * &y.mapv(|v| 0.5 / v));
            }
            Op::Tanh(a) => {
                let y = &self.nodes[idx].value;
                acc(*a, g * &y.mapv(|v| 1.0 - v * v));
            }
            Op::Sigmoid(a) => {
                let y = &self.nodes[idx].value;
                acc(*a, g * &y.mapv(|v| v * (1.0 - v)));
            }
            Op::Relu(a) => {
                let x = self.value(*a);
                let gate = x.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
                acc(*a, g * &gate);
            }
            Op::Matmul(a, b) => {
                let g2 = as2(g);
                let av = as2(self.value(*a));
                let bv = as2(self.value(*b));
                acc(*a, g2.dot(&bv.t()).into_dyn());
                acc(*b, av.t().dot(&g2).into_dyn());
            }
            Op::Transpose(a) => {
                acc(*a, as2(g).t().to_owned().into_dyn());
            }
            Op::Reshape(a) => {
                let shape = self.value(*a).shape().to_vec();
                acc(
                    *a,
                    standardize(g.clone())
                        .into_shape_with_order(IxDyn(&shape))
                        .unwrap(),
                );
            }
            Op::Broadcast(a) => {
                let src_shape = self.value(*a).shape().to_vec();
                let mut delta = g.clone();
                for (ax, (&s, &t)) in src_shape
                    .iter()
                    .zip(self.nodes[idx].value.shape().iter())
                    .enumerate()
                {
                    if s == 1 && t > 1 {
                        let summed = delta.sum_axis(Axis(ax));
                        delta = summed.insert_axis(Axis(ax));
                    }
                }
                acc(*a, delta);
            }
            Op::SumAll(a) => {
                let seed = g.iter().next().copied().unwrap();
                acc(*a, ArrayD::from_elem(self.value(*a).raw_dim(), seed));
            }
            Op::SumAxis(a, axis) => {
                let expanded = g.clone().insert_axis(Axis(*axis));
                let target = self.value(*a).shape().to_vec();
                let delta = expanded.broadcast(IxDyn(&target)).unwrap().to_owned();
                acc(*a, delta);
            }
            Op::DiagPart(a) => {
                let n = g.len();
                let mut delta = ndarray::Array2::<f64>::zeros((n, n));
                for i in 0..n {
                    delta[(i, i)] = g[[i]];
                }
                acc(*a, delta.into_dyn());
            }
            Op::MulConstArr(a, c) => acc(*a, g * c),
            Op::Concat { axis, parts } => {
                let mut offset = 0usize;
                for &p in parts {
                    let len = self.value(p).shape()[*axis];
                    let slice = g
                        .slice_axis(Axis(*axis), ndarray::Slice::from(offset..offset + len))
                        .to_owned();
                    acc(p, slice);
                    offset += len;
                }
            }
            Op::PermuteAxes(a, perm) => {
                let mut inverse = vec![0usize; perm.len()];
                for (to, &from) in perm.iter().enumerate() {
                    inverse[from] = to;
                }
                acc(*a, g.view().permuted_axes(IxDyn(&inverse)).to_owned());
            }
            Op::IndexAxis0(a, i) => {
                let mut delta = ArrayD::<f64>::zeros(self.value(*a).raw_dim());
                delta.index_axis_mut(Axis(0), *i).assign(g);
                acc(*a, delta);
            }
            Op::Im2col { x, k, pad } => {
                let xv = self.value(*x);
                let (n, c, h, w) = dims4(xv);
                let g2 = as2(g);
                let mut delta = ArrayD::<f64>::zeros(xv.raw_dim());
                for b in 0..n {
                    for oy in 0..h {
                        for ox in 0..w {
                            let row = (b * h + oy) * w + ox;
                            for ch in 0..c {
                                for dy in 0..*k {
                                    for dx in 0..*k {
                                        let iy = oy + dy;
                                        let ix = ox + dx;
                                        if iy < *pad || ix < *pad {
                                            continue;
                                        }
                                        let (iy, ix) = (iy - pad, ix - pad);
                                        if iy >= h || ix >= w {
                                            continue;
                                        }
                                        delta[[b, ch, iy, ix]] +=
                                            g2[(row, (ch * k + dy) * k + dx)];
                                    }
                                }
                            }
                        }
                    }
                }
                acc(*x, delta);
            }
            Op::MaxPool2x2 { x, argmax } => {
                let xv = self.value(*x);
                let mut delta_flat = vec![0.0f64; xv.len()];
                for (slot, gv) in g.iter().enumerate() {
                    delta_flat[argmax[slot]] += gv;
                }
                let delta = ArrayD::from_shape_vec(xv.raw_dim(), delta_flat).unwrap();
                acc(*x, delta);
            }
            Op::PairwiseSqDist(x) => {
                // dL/dX = 2 (diag(s) X − S X) with S = W + Wᵀ, s = row sums of S.
                let xv = as2(self.value(*x));
                let w = as2(g);
                let n = xv.nrows();
                let s = &w + &w.t();
                let rowsum = s.sum_axis(Axis(1));
                let sx = s.dot(&xv);
                let mut delta = ndarray::Array2::<f64>::zeros(xv.raw_dim());
                for i in 0..n {
                    for c in 0..xv.ncols() {
                        delta[(i, c)] = 2.0 * (rowsum[i] * xv[(i, c)] - sx[(i, c)]);
                    }
                }
                acc(*x, delta.into_dyn());
            }
            Op::SpectralProjector {
                g: gid,
                r,
                eigvals,
                eigvecs,
            } => {
                let m = eigvals.len();
                if *r == m {
                    // projector is the identity: constant, zero gradient
                    acc(*gid, ArrayD::zeros(self.value(*gid).raw_dim()));
                    return;
                }
                let u = as2(eigvecs);
                let w = as2(g);
                // Ŵ = Uᵀ W U
                let w_hat = u.t().dot(&w).dot(&u);
                let scale = eigvals[0].abs().max(1.0);
                let mut h_hat = ndarray::Array2::<f64>::zeros((m, m));
                for a in 0..*r {
                    for b in *r..m {
                        let gap = eigvals[a] - eigvals[b];
                        if gap.abs() < 1e-12 * scale {
                            continue;
                        }
                        h_hat[(a, b)] = (w_hat[(a, b)] + w_hat[(b, a)]) / gap;
                    }
                }
                // dL/dG = Σ_{a≤r,b>r} c_ab u_a u_bᵀ = U Ĥ Uᵀ
                let delta = u.dot(&h_hat).dot(&u.t());
                acc(*gid, delta.into_dyn());
            }
        }
    }
}

fn dims4(v: &ArrayD<f64>) -> (usize, usize, usize, usize) {
    let s = v.shape();
    assert_eq!(s.len(), 4, "expected rank-4 array");
    (s[0], s[1], s[2], s[3])
}
