//! Reverse-mode differentiation over a dynamically recorded graph.
//!
//! Operations are recorded on a Wengert tape as enum variants; values are
//! computed eagerly at record time, gradients by a single reverse sweep.
//! Inputs of a node always precede it on the tape, so the recorded graph is
//! acyclic by construction. Parameters enter through [`Tape::param`], which
//! snapshots the tensor from a [`ParamStore`] and remembers the slot so the
//! sweep can hand gradients back in deterministic slot order.
//!
//! Besides elementwise/matrix primitives there are three fused kernels that
//! carry the attention-heavy parts of the model: windowed per-head
//! self-attention, direction-restricted additive attention, and region
//! self-attention with position-augmented keys. The region kernel reduces
//! over regions in value-sorted order so its output is bit-identical under
//! region permutation.

use std::collections::HashMap;

use crate::error::{Result, SailError};
use crate::store::ParamStore;
use crate::tensor::{canonical_sum, softmax_in_place, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param { slot: usize },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    MulElem(NodeId, NodeId),
    Scale(NodeId, f64),
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    /// mat (d x n) plus a length-d vector broadcast over columns.
    AddColVec(NodeId, NodeId),
    /// Same data, new dims.
    Reshape(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    Sigmoid(NodeId),
    SoftmaxRows(NodeId),
    LayerNormCols { x: NodeId, gain: NodeId, bias: NodeId },
    ConcatRows(Vec<NodeId>),
    SliceCols { x: NodeId, start: usize, len: usize },
    SumAll(NodeId),
    PickEntry { x: NodeId, row: usize, col: usize },
    LogClamped { x: NodeId, floor: f64 },
    /// Scaled dot-product attention of one head restricted to a window of
    /// `radius` around each position. q,k: dq x n; v: dv x n; output n x dv.
    LocalAttenHead { q: NodeId, k: NodeId, v: NodeId, radius: usize },
    /// Additive attention restricted to t >= i (forward) or t <= i
    /// (backward). h: d x n values; a = W1*H, b = W2*H: da x n; w_a: da.
    /// Output d x n of aggregated contexts.
    DirectionalContext { h: NodeId, a: NodeId, b: NodeId, w_a: NodeId, forward: bool },
    /// Region self-attention with position-augmented keys. regions: dr x m;
    /// pos[i]: dr x m relative-position matrix for query i. Output dr x m.
    RegionSelfAtten { regions: NodeId, pos: Vec<NodeId> },
}

#[derive(Debug)]
enum Aux {
    None,
    /// Per-column mean and inverse std.
    LayerNorm { mean: Vec<f64>, inv_std: Vec<f64> },
    /// Attention weights packed per query position.
    Windows { weights: Vec<Vec<f64>> },
    /// Attention weights plus the tanh activations saved for backward:
    /// tanh(a_i + b_t) for each in-window (i, t) pair, da values per pair.
    Additive { weights: Vec<Vec<f64>>, tanh: Vec<Vec<f64>> },
}

struct Node {
    op: Op,
    value: Tensor,
    aux: Aux,
}

pub struct Tape {
    nodes: Vec<Node>,
    param_cache: HashMap<usize, NodeId>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn window_bounds(i: usize, radius: usize, n: usize) -> (usize, usize) {
    (i.saturating_sub(radius), (i + radius + 1).min(n))
}

/// Column-contiguous copy of a d x n matrix: column c occupies
/// [c*d, (c+1)*d). Hot kernels iterate positions, so this layout keeps
/// their inner loops on contiguous memory.
fn columns_of(t: &Tensor) -> Vec<f64> {
    let (d, n) = (t.rows(), t.cols());
    let src = t.data();
    let mut out = vec![0.0; d * n];
    for r in 0..d {
        let row = &src[r * n..(r + 1) * n];
        for c in 0..n {
            out[c * d + r] = row[c];
        }
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), param_cache: HashMap::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, value: Tensor, aux: Aux) -> NodeId {
        self.nodes.push(Node { op, value, aux });
        NodeId(self.nodes.len() - 1)
    }

    fn check(&self, id: NodeId, op: &'static str) -> Result<()> {
        if id.0 >= self.nodes.len() {
            return Err(SailError::invalid(op, "node id from another tape"));
        }
        Ok(())
    }

    pub fn leaf(&mut self, t: Tensor) -> NodeId {
        self.push(Op::Leaf, t, Aux::None)
    }

    /// Fetch a parameter as a leaf. Repeated fetches of the same slot share
    /// one node so its gradient accumulates in a single place.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<NodeId> {
        let slot = store
            .slot(name)
            .ok_or_else(|| SailError::invalid("Tape::param", format!("unknown parameter {name}")))?;
        if let Some(&id) = self.param_cache.get(&slot) {
            return Ok(id);
        }
        let id = self.push(Op::Param { slot }, store.param(slot).clone(), Aux::None);
        self.param_cache.insert(slot, id);
        Ok(id)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(Op::Add(a, b), v, Aux::None))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).sub(self.value(b))?;
        Ok(self.push(Op::Sub(a, b), v, Aux::None))
    }

    pub fn mul_elem(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if !va.same_dims(vb) {
            return Err(SailError::shape("mul_elem", format!("{:?} vs {:?}", va.dims(), vb.dims())));
        }
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
        let v = Tensor::new(va.dims().to_vec(), data)?;
        Ok(self.push(Op::MulElem(a, b), v, Aux::None))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.check(a, "scale")?;
        let v = self.value(a).scale(c);
        Ok(self.push(Op::Scale(a, c), v, Aux::None))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), v, Aux::None))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        self.check(a, "transpose")?;
        if self.value(a).rank() != 2 {
            return Err(SailError::shape("transpose", "rank-2 required"));
        }
        let v = self.value(a).transpose();
        Ok(self.push(Op::Transpose(a), v, Aux::None))
    }

    pub fn add_col_vec(&mut self, mat: NodeId, vec: NodeId) -> Result<NodeId> {
        let (vm, vv) = (self.value(mat), self.value(vec));
        if vm.rank() != 2 || vv.rank() != 1 || vm.rows() != vv.len() {
            return Err(SailError::shape(
                "add_col_vec",
                format!("mat {:?} vs vec {:?}", vm.dims(), vv.dims()),
            ));
        }
        let (d, n) = (vm.rows(), vm.cols());
        let mut out = vm.clone();
        for r in 0..d {
            let add = vv.data()[r];
            for c in 0..n {
                out.data_mut()[r * n + c] += add;
            }
        }
        Ok(self.push(Op::AddColVec(mat, vec), out, Aux::None))
    }

    pub fn reshape(&mut self, a: NodeId, dims: Vec<usize>) -> Result<NodeId> {
        self.check(a, "reshape")?;
        let v = Tensor::new(dims, self.value(a).data().to_vec())?;
        Ok(self.push(Op::Reshape(a), v, Aux::None))
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        self.check(a, "tanh")?;
        let v = self.value(a).map(f64::tanh);
        Ok(self.push(Op::Tanh(a), v, Aux::None))
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.check(a, "relu")?;
        let v = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        Ok(self.push(Op::Relu(a), v, Aux::None))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        self.check(a, "sigmoid")?;
        let v = self.value(a).map(|x| 1.0 / (1.0 + (-x).exp()));
        Ok(self.push(Op::Sigmoid(a), v, Aux::None))
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> Result<NodeId> {
        self.check(a, "softmax_rows")?;
        let v = crate::tensor::softmax_rows(self.value(a))?;
        Ok(self.push(Op::SoftmaxRows(a), v, Aux::None))
    }

    /// Layer norm applied to every column of x (d x n); gain/bias length d.
    pub fn layer_norm_cols(&mut self, x: NodeId, gain: NodeId, bias: NodeId, eps: f64) -> Result<NodeId> {
        let (vx, vg, vb) = (self.value(x), self.value(gain), self.value(bias));
        if vx.rank() != 2 || vg.rank() != 1 || vb.rank() != 1 {
            return Err(SailError::shape("layer_norm_cols", "x rank-2, gain/bias rank-1"));
        }
        let (d, n) = (vx.rows(), vx.cols());
        if vg.len() != d || vb.len() != d {
            return Err(SailError::shape("layer_norm_cols", format!("gain/bias must have length {d}")));
        }
        if !(eps > 0.0) {
            return Err(SailError::invalid("layer_norm_cols", "eps must be positive"));
        }
        let mut out = Tensor::zeros(vec![d, n]);
        let mut means = vec![0.0; n];
        let mut inv_stds = vec![0.0; n];
        for c in 0..n {
            let mut mean = 0.0;
            for r in 0..d {
                mean += vx.at(r, c);
            }
            mean /= d as f64;
            let mut var = 0.0;
            for r in 0..d {
                let dxm = vx.at(r, c) - mean;
                var += dxm * dxm;
            }
            var /= d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            means[c] = mean;
            inv_stds[c] = inv;
            for r in 0..d {
                let xhat = (vx.at(r, c) - mean) * inv;
                out.data_mut()[r * n + c] = vg.data()[r] * xhat + vb.data()[r];
            }
        }
        Ok(self.push(
            Op::LayerNormCols { x, gain, bias },
            out,
            Aux::LayerNorm { mean: means, inv_std: inv_stds },
        ))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(SailError::invalid("concat_rows", "no parts"));
        }
        let n = self.value(parts[0]).cols();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            if v.rank() != 2 || v.cols() != n {
                return Err(SailError::shape("concat_rows", "all parts must share column count"));
            }
            rows += v.rows();
        }
        let mut data = Vec::with_capacity(rows * n);
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let v = Tensor::new(vec![rows, n], data)?;
        Ok(self.push(Op::ConcatRows(parts.to_vec()), v, Aux::None))
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let vx = self.value(x);
        if vx.rank() != 2 || start + len > vx.cols() || len == 0 {
            return Err(SailError::shape(
                "slice_cols",
                format!("slice {start}..{} of {:?}", start + len, vx.dims()),
            ));
        }
        let (d, n) = (vx.rows(), vx.cols());
        let mut data = Vec::with_capacity(d * len);
        for r in 0..d {
            data.extend_from_slice(&vx.data()[r * n + start..r * n + start + len]);
        }
        let v = Tensor::new(vec![d, len], data)?;
        Ok(self.push(Op::SliceCols { x, start, len }, v, Aux::None))
    }

    pub fn sum_all(&mut self, a: NodeId) -> Result<NodeId> {
        self.check(a, "sum_all")?;
        let s: f64 = self.value(a).data().iter().sum();
        Ok(self.push(Op::SumAll(a), Tensor::scalar(s), Aux::None))
    }

    pub fn pick_entry(&mut self, x: NodeId, row: usize, col: usize) -> Result<NodeId> {
        let vx = self.value(x);
        if vx.rank() != 2 || row >= vx.rows() || col >= vx.cols() {
            return Err(SailError::shape("pick_entry", format!("({row},{col}) of {:?}", vx.dims())));
        }
        let v = Tensor::scalar(vx.at(row, col));
        Ok(self.push(Op::PickEntry { x, row, col }, v, Aux::None))
    }

    pub fn log_clamped(&mut self, x: NodeId, floor: f64) -> Result<NodeId> {
        self.check(x, "log_clamped")?;
        if !(floor > 0.0) {
            return Err(SailError::invalid("log_clamped", "floor must be positive"));
        }
        let v = self.value(x).map(|p| p.max(floor).ln());
        Ok(self.push(Op::LogClamped { x, floor }, v, Aux::None))
    }

    /// One attention head over a sliding window. Output row i is the
    /// attention result for position i with keys/values clipped to
    /// [i-radius, i+radius]. With radius >= n-1 this is bit-identical to
    /// `softmax(qᵀk * inv_sqrt) vᵀ` computed through matmul nodes.
    pub fn local_atten_head(&mut self, q: NodeId, k: NodeId, v: NodeId, radius: usize) -> Result<NodeId> {
        let (vq, vk, vv) = (self.value(q), self.value(k), self.value(v));
        if vq.rank() != 2 || vk.rank() != 2 || vv.rank() != 2 {
            return Err(SailError::shape("local_atten_head", "rank-2 inputs required"));
        }
        let (dq, n) = (vq.rows(), vq.cols());
        if vk.rows() != dq || vk.cols() != n || vv.cols() != n {
            return Err(SailError::shape(
                "local_atten_head",
                format!("q {:?}, k {:?}, v {:?}", vq.dims(), vk.dims(), vv.dims()),
            ));
        }
        let dv = vv.rows();
        let inv_sqrt = 1.0 / (dq as f64).sqrt();
        let q_cols = columns_of(vq);
        let k_cols = columns_of(vk);
        let v_cols = columns_of(vv);
        let mut out = Tensor::zeros(vec![n, dv]);
        let mut weights = Vec::with_capacity(n);
        for i in 0..n {
            let (lo, hi) = window_bounds(i, radius, n);
            let q_i = &q_cols[i * dq..(i + 1) * dq];
            let mut scores = vec![0.0; hi - lo];
            for (idx, j) in (lo..hi).enumerate() {
                let k_j = &k_cols[j * dq..(j + 1) * dq];
                let mut dot = 0.0;
                for r in 0..dq {
                    dot += q_i[r] * k_j[r];
                }
                scores[idx] = dot * inv_sqrt;
            }
            softmax_in_place(&mut scores);
            let orow = &mut out.data_mut()[i * dv..(i + 1) * dv];
            for (idx, j) in (lo..hi).enumerate() {
                let w = scores[idx];
                let v_j = &v_cols[j * dv..(j + 1) * dv];
                for (o, x) in orow.iter_mut().zip(v_j) {
                    *o += w * x;
                }
            }
            weights.push(scores);
        }
        Ok(self.push(Op::LocalAttenHead { q, k, v, radius }, out, Aux::Windows { weights }))
    }

    /// Direction-restricted additive attention aggregation. Column i of the
    /// output is sum over t of alpha_it * h_t, where the score is
    /// w_aᵀ tanh(a_i + b_t) and t ranges over [i, n) (forward) or [0, i]
    /// (backward).
    pub fn directional_context(
        &mut self,
        h: NodeId,
        a: NodeId,
        b: NodeId,
        w_a: NodeId,
        forward: bool,
    ) -> Result<NodeId> {
        let (vh, va, vb, vw) = (self.value(h), self.value(a), self.value(b), self.value(w_a));
        if vh.rank() != 2 || va.rank() != 2 || vb.rank() != 2 || vw.rank() != 1 {
            return Err(SailError::shape("directional_context", "h/a/b rank-2, w_a rank-1"));
        }
        let (d, n) = (vh.rows(), vh.cols());
        let da = va.rows();
        if va.cols() != n || vb.cols() != n || vb.rows() != da || vw.len() != da {
            return Err(SailError::shape(
                "directional_context",
                format!("h {:?}, a {:?}, b {:?}, w_a {:?}", vh.dims(), va.dims(), vb.dims(), vw.dims()),
            ));
        }
        // contiguous per-position layouts for the O(n^2 * da) inner loops
        let a_cols = columns_of(va);
        let b_cols = columns_of(vb);
        let h_cols = columns_of(vh);
        let w = vw.data();
        let mut out = Tensor::zeros(vec![d, n]);
        let mut weights = Vec::with_capacity(n);
        let mut saved_tanh = Vec::with_capacity(n);
        for i in 0..n {
            let lo = if forward { i } else { 0 };
            let hi = if forward { n } else { i + 1 };
            let span = hi - lo;
            let mut scores = vec![0.0; span];
            let mut tanhs = vec![0.0; span * da];
            let a_i = &a_cols[i * da..(i + 1) * da];
            for (idx, t) in (lo..hi).enumerate() {
                let b_t = &b_cols[t * da..(t + 1) * da];
                let u = &mut tanhs[idx * da..(idx + 1) * da];
                let mut s = 0.0;
                for r in 0..da {
                    let v = (a_i[r] + b_t[r]).tanh();
                    u[r] = v;
                    s += w[r] * v;
                }
                scores[idx] = s;
            }
            softmax_in_place(&mut scores);
            let mut acc = vec![0.0; d];
            for (idx, t) in (lo..hi).enumerate() {
                let wt = scores[idx];
                let h_t = &h_cols[t * d..(t + 1) * d];
                for r in 0..d {
                    acc[r] += wt * h_t[r];
                }
            }
            for r in 0..d {
                out.data_mut()[r * n + i] = acc[r];
            }
            weights.push(scores);
            saved_tanh.push(tanhs);
        }
        Ok(self.push(
            Op::DirectionalContext { h, a, b, w_a, forward },
            out,
            Aux::Additive { weights, tanh: saved_tanh },
        ))
    }

    /// Region self-attention with position-augmented keys/values. Column i
    /// of the output is softmax(r_iᵀ(R + P̃_i)/sqrt(dr)) (R + P̃_i)ᵀ. The
    /// reductions over regions use value-sorted summation, so permuting the
    /// regions (and their position matrices) permutes output columns
    /// bit-exactly.
    pub fn region_self_atten(&mut self, regions: NodeId, pos: &[NodeId]) -> Result<NodeId> {
        let vr = self.value(regions);
        if vr.rank() != 2 {
            return Err(SailError::shape("region_self_atten", "regions must be rank-2"));
        }
        let (dr, m) = (vr.rows(), vr.cols());
        if pos.len() != m {
            return Err(SailError::shape(
                "region_self_atten",
                format!("expected {m} position matrices, got {}", pos.len()),
            ));
        }
        for &p in pos {
            let vp = self.value(p);
            if vp.dims() != [dr, m] {
                return Err(SailError::shape("region_self_atten", "position matrix dims must match regions"));
            }
        }
        let inv_sqrt = 1.0 / (dr as f64).sqrt();
        let mut out = Tensor::zeros(vec![dr, m]);
        let mut weights = Vec::with_capacity(m);
        for i in 0..m {
            let vp = self.value(pos[i]);
            let vr = self.value(regions);
            // scores over keys j
            let mut scores = vec![0.0; m];
            for (j, s) in scores.iter_mut().enumerate() {
                let mut dot = 0.0;
                for r in 0..dr {
                    dot += vr.at(r, i) * (vr.at(r, j) + vp.at(r, j));
                }
                *s = dot * inv_sqrt;
            }
            // permutation-stable softmax
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let mut terms = exps.clone();
            let denom = canonical_sum(&mut terms);
            let alphas: Vec<f64> = exps.iter().map(|e| e / denom).collect();
            // context with permutation-stable accumulation per coordinate
            for r in 0..dr {
                let mut terms: Vec<f64> =
                    (0..m).map(|j| alphas[j] * (vr.at(r, j) + vp.at(r, j))).collect();
                out.data_mut()[r * m + i] = canonical_sum(&mut terms);
            }
            weights.push(alphas);
        }
        Ok(self.push(
            Op::RegionSelfAtten { regions, pos: pos.to_vec() },
            out,
            Aux::Windows { weights },
        ))
    }

    /// Reverse sweep from a scalar loss node. Gradients for parameter
    /// leaves are retrievable afterwards via [`Tape::param_grads`].
    pub fn backward(&mut self, loss: NodeId) -> Result<Vec<Option<Tensor>>> {
        self.check(loss, "backward")?;
        if self.value(loss).len() != 1 {
            return Err(SailError::invalid("backward", "loss must be scalar"));
        }
        if !self.value(loss).is_finite() {
            return Err(SailError::non_finite("backward loss"));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(grads)
    }

    /// Run backward and hand parameter gradients back in slot order.
    pub fn param_grads(&mut self, loss: NodeId) -> Result<Vec<(usize, Tensor)>> {
        let mut grads = self.backward(loss)?;
        let mut slots: Vec<(usize, usize)> = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(idx, n)| match n.op {
                Op::Param { slot } => Some((slot, idx)),
                _ => None,
            })
            .collect();
        slots.sort_unstable_by_key(|&(s, _)| s);
        let mut out = Vec::with_capacity(slots.len());
        for (slot, node) in slots {
            if let Some(g) = grads[node].take() {
                out.push((slot, g));
            }
        }
        Ok(out)
    }

    fn backprop_node(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let add_to = |grads: &mut [Option<Tensor>], id: NodeId, update: &mut dyn FnMut(&mut Tensor)| {
            let slot = &mut grads[id.0];
            if slot.is_none() {
                *slot = Some(Tensor::zeros(self.nodes[id.0].value.dims().to_vec()));
            }
            update(slot.as_mut().unwrap());
        };
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf | Op::Param { .. } => {}
            Op::Add(a, b) => {
                add_to(grads, *a, &mut |t| {
                    for (x, y) in t.data_mut().iter_mut().zip(g.data()) {
                        *x += y;
                    }
                });
                add_to(grads, *b, &mut |t| {
                    for (x, y) in t.data_mut().iter_mut().zip(g.data()) {
                        *x += y;
                    }
                });
            }
            Op::Sub(a, b) => {
                add_to(grads, *a, &mut |t| {
                    for (x, y) in t.data_mut().iter_mut().zip(g.data()) {
                        *x += y;
                    }
                });
                add_to(grads, *b, &mut |t| {
                    for (x, y) in t.data_mut().iter_mut().zip(g.data()) {
                        *x -= y;
                    }
                });
            }
            Op::MulElem(a, b) => {
                let (va, vb) = (self.value(*a).clone(), self.value(*b).clone());
                add_to(grads, *a, &mut |t| {
                    for ((x, y), z) in t.data_mut().iter_mut().zip(g.data()).zip(vb.data()) {
                        *x += y * z;
                    }
                });
                add_to(grads, *b, &mut |t| {
                    for ((x, y), z) in t.data_mut().iter_mut().zip(g.data()).zip(va.data()) {
                        *x += y * z;
                    }
                });
            }
            Op::Scale(a, c) => {
                let c = *c;
                add_to(grads, *a, &mut |t| {
                    for (x, y) in t.data_mut().iter_mut().zip(g.data()) {
                        *x += c * y;
                    }
                });
            }
            Op::MatMul(a, b) => {
                // C = A B: dA = g Bᵀ, dB = Aᵀ g
                let da = g.matmul(&self.value(*b).transpose())?;
                let db = self.value(*a).transpose().matmul(g)?;
                add_to(grads, *a, &mut |t| {
                    for (x, y) in t.data_mut().iter_mut().zip(da.data()) {
                        *x += y;
                    }
                });
                add_to(grads, *b, &mut |t| {
                    for (x, y) in t.data_mut().iter_mut().zip(db.data()) {
                        *x += y;
                    }
                });
            }
            Op::Transpose(a) => {
                let gt = g.transpose();
                add_to(grads, *a, &mut |t| {
                    for (x, y) in t.data_mut().iter_mut().zip(gt.data()) {
                        *x += y;
                    }
                });
            }
            Op::Reshape(a) => {
                add_to(grads, *a, &mut |t| {
                    for (x, y) in t.data_mut().iter_mut().zip(g.data()) {
                        *x += y;
                    }
                });
            }
            Op::AddColVec(mat, vec) => {
                add_to(grads, *mat, &mut |t| {
                    for (x, y) in t.data_mut().iter_mut().zip(g.data()) {
                        *x += y;
                    }
                });
                let (d, n) = (g.rows(), g.cols());
                add_to(grads, *vec, &mut |t| {
                    for r in 0..d {
                        let mut s = 0.0;
                        for c in 0..n {
                            s += g.at(r, c);
                        }
                        t.data_mut()[r] += s;
                    }
                });
            }
            Op::Tanh(a) => {
                let y = node.value.clone();
                add_to(grads, *a, &mut |t| {
                    for ((x, gy), yv) in t.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                        *x += gy * (1.0 - yv * yv);
                    }
                });
            }
            Op::Relu(a) => {
                let xin = self.value(*a).clone();
                add_to(grads, *a, &mut |t| {
                    for ((x, gy), xv) in t.data_mut().iter_mut().zip(g.data()).zip(xin.data()) {
                        if *xv > 0.0 {
                            *x += gy;
                        }
                    }
                });
            }
            Op::Sigmoid(a) => {
                let y = node.value.clone();
                add_to(grads, *a, &mut |t| {
                    for ((x, gy), yv) in t.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                        *x += gy * yv * (1.0 - yv);
                    }
                });
            }
            Op::SoftmaxRows(a) => {
                // dx_row = y ⊙ (g - <g, y>)
                let y = &node.value;
                let (rows, cols) = (y.rows(), y.cols());
                add_to(grads, *a, &mut |t| {
                    for r in 0..rows {
                        let yrow = y.row(r);
                        let grow = g.row(r);
                        let dot: f64 = yrow.iter().zip(grow).map(|(a, b)| a * b).sum();
                        let trow = &mut t.data_mut()[r * cols..(r + 1) * cols];
                        for c in 0..cols {
                            trow[c] += yrow[c] * (grow[c] - dot);
                        }
                    }
                });
            }
            Op::LayerNormCols { x, gain, bias } => {
                let Aux::LayerNorm { mean, inv_std } = &node.aux else { unreachable!() };
                let vx = self.value(*x).clone();
                let vg = self.value(*gain).clone();
                let (d, n) = (vx.rows(), vx.cols());
                // d(bias) = row-sum of g; d(gain) = row-sum of g ⊙ xhat
                add_to(grads, *bias, &mut |t| {
                    for r in 0..d {
                        let mut s = 0.0;
                        for c in 0..n {
                            s += g.at(r, c);
                        }
                        t.data_mut()[r] += s;
                    }
                });
                add_to(grads, *gain, &mut |t| {
                    for r in 0..d {
                        let mut s = 0.0;
                        for c in 0..n {
                            let xhat = (vx.at(r, c) - mean[c]) * inv_std[c];
                            s += g.at(r, c) * xhat;
                        }
                        t.data_mut()[r] += s;
                    }
                });
                add_to(grads, *x, &mut |t| {
                    for c in 0..n {
                        // per-column: dxhat = g ⊙ gain
                        let mut mean_dxhat = 0.0;
                        let mut mean_dxhat_xhat = 0.0;
                        for r in 0..d {
                            let dxhat = g.at(r, c) * vg.data()[r];
                            let xhat = (vx.at(r, c) - mean[c]) * inv_std[c];
                            mean_dxhat += dxhat;
                            mean_dxhat_xhat += dxhat * xhat;
                        }
                        mean_dxhat /= d as f64;
                        mean_dxhat_xhat /= d as f64;
                        for r in 0..d {
                            let dxhat = g.at(r, c) * vg.data()[r];
                            let xhat = (vx.at(r, c) - mean[c]) * inv_std[c];
                            t.data_mut()[r * n + c] +=
                                inv_std[c] * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
                        }
                    }
                });
            }
            Op::ConcatRows(parts) => {
                let mut row0 = 0;
                let n = g.cols();
                for &p in parts {
                    let pr = self.value(p).rows();
                    add_to(grads, p, &mut |t| {
                        for r in 0..pr {
                            for c in 0..n {
                                t.data_mut()[r * n + c] += g.at(row0 + r, c);
                            }
                        }
                    });
                    row0 += pr;
                }
            }
            Op::SliceCols { x, start, len } => {
                let (d, full) = (self.value(*x).rows(), self.value(*x).cols());
                let (start, len) = (*start, *len);
                add_to(grads, *x, &mut |t| {
                    for r in 0..d {
                        for c in 0..len {
                            t.data_mut()[r * full + start + c] += g.at(r, c);
                        }
                    }
                });
            }
            Op::SumAll(a) => {
                let gv = g.data()[0];
                add_to(grads, *a, &mut |t| {
                    for x in t.data_mut() {
                        *x += gv;
                    }
                });
            }
            Op::PickEntry { x, row, col } => {
                let gv = g.data()[0];
                let cols = self.value(*x).cols();
                let (row, col) = (*row, *col);
                add_to(grads, *x, &mut |t| {
                    t.data_mut()[row * cols + col] += gv;
                });
            }
            Op::LogClamped { x, floor } => {
                let vx = self.value(*x).clone();
                let floor = *floor;
                add_to(grads, *x, &mut |t| {
                    for ((o, gy), xv) in t.data_mut().iter_mut().zip(g.data()).zip(vx.data()) {
                        if *xv > floor {
                            *o += gy / xv;
                        }
                    }
                });
            }
            Op::LocalAttenHead { q, k, v, radius } => {
                let Aux::Windows { weights } = &node.aux else { unreachable!() };
                let (vq, vk, vv) = (self.value(*q), self.value(*k), self.value(*v));
                let (dq, n) = (vq.rows(), vq.cols());
                let dv = vv.rows();
                let inv_sqrt = 1.0 / (dq as f64).sqrt();
                let q_cols = columns_of(vq);
                let k_cols = columns_of(vk);
                let v_cols = columns_of(vv);
                let mut dq_cols = vec![0.0; dq * n];
                let mut dk_cols = vec![0.0; dq * n];
                let mut dv_cols = vec![0.0; dv * n];
                for i in 0..n {
                    let (lo, hi) = window_bounds(i, *radius, n);
                    let alphas = &weights[i];
                    let grow = g.row(i);
                    let mut dalpha = vec![0.0; hi - lo];
                    for (idx, j) in (lo..hi).enumerate() {
                        let v_j = &v_cols[j * dv..(j + 1) * dv];
                        let dv_j = &mut dv_cols[j * dv..(j + 1) * dv];
                        let alpha = alphas[idx];
                        let mut s = 0.0;
                        for r in 0..dv {
                            s += v_j[r] * grow[r];
                            dv_j[r] += alpha * grow[r];
                        }
                        dalpha[idx] = s;
                    }
                    let dot: f64 = alphas.iter().zip(&dalpha).map(|(a, d)| a * d).sum();
                    let q_i = &q_cols[i * dq..(i + 1) * dq];
                    let mut dq_i = vec![0.0; dq];
                    for (idx, j) in (lo..hi).enumerate() {
                        let ds = alphas[idx] * (dalpha[idx] - dot) * inv_sqrt;
                        let k_j = &k_cols[j * dq..(j + 1) * dq];
                        let dk_j = &mut dk_cols[j * dq..(j + 1) * dq];
                        for r in 0..dq {
                            dq_i[r] += ds * k_j[r];
                            dk_j[r] += ds * q_i[r];
                        }
                    }
                    for r in 0..dq {
                        dq_cols[i * dq + r] += dq_i[r];
                    }
                }
                let scatter = |cols: &[f64], d: usize, t: &mut Tensor| {
                    let out = t.data_mut();
                    for c in 0..n {
                        for r in 0..d {
                            out[r * n + c] += cols[c * d + r];
                        }
                    }
                };
                add_to(grads, *q, &mut |t| scatter(&dq_cols, dq, t));
                add_to(grads, *k, &mut |t| scatter(&dk_cols, dq, t));
                add_to(grads, *v, &mut |t| scatter(&dv_cols, dv, t));
            }
            Op::DirectionalContext { h, a, b, w_a, forward } => {
                let Aux::Additive { weights, tanh } = &node.aux else { unreachable!() };
                let vh = self.value(*h);
                let vw = self.value(*w_a);
                let (d, n) = (vh.rows(), vh.cols());
                let da = vw.len();
                let h_cols = columns_of(vh);
                let w = vw.data();
                // column-layout accumulators, scattered back at the end
                let mut dh_cols = vec![0.0; d * n];
                let mut da_cols = vec![0.0; da * n];
                let mut db_cols = vec![0.0; da * n];
                let mut dw = vec![0.0; da];
                for i in 0..n {
                    let lo = if *forward { i } else { 0 };
                    let hi = if *forward { n } else { i + 1 };
                    let alphas = &weights[i];
                    let tanhs = &tanh[i];
                    let gcol: Vec<f64> = (0..d).map(|r| g.at(r, i)).collect();
                    let mut dalpha = vec![0.0; hi - lo];
                    for (idx, t) in (lo..hi).enumerate() {
                        let h_t = &h_cols[t * d..(t + 1) * d];
                        let dh_t = &mut dh_cols[t * d..(t + 1) * d];
                        let alpha = alphas[idx];
                        let mut s = 0.0;
                        for r in 0..d {
                            s += h_t[r] * gcol[r];
                            dh_t[r] += alpha * gcol[r];
                        }
                        dalpha[idx] = s;
                    }
                    let dot: f64 = alphas.iter().zip(&dalpha).map(|(a, d)| a * d).sum();
                    let da_i = {
                        // borrow da_cols twice (query col + key cols) via split
                        let mut local = vec![0.0; da];
                        for (idx, t) in (lo..hi).enumerate() {
                            let ds = alphas[idx] * (dalpha[idx] - dot);
                            let u = &tanhs[idx * da..(idx + 1) * da];
                            let db_t = &mut db_cols[t * da..(t + 1) * da];
                            for r in 0..da {
                                dw[r] += ds * u[r];
                                let dpre = ds * w[r] * (1.0 - u[r] * u[r]);
                                local[r] += dpre;
                                db_t[r] += dpre;
                            }
                        }
                        local
                    };
                    for r in 0..da {
                        da_cols[i * da + r] += da_i[r];
                    }
                }
                add_to(grads, *h, &mut |t| {
                    let out = t.data_mut();
                    for c in 0..n {
                        for r in 0..d {
                            out[r * n + c] += dh_cols[c * d + r];
                        }
                    }
                });
                add_to(grads, *a, &mut |t| {
                    let out = t.data_mut();
                    for c in 0..n {
                        for r in 0..da {
                            out[r * n + c] += da_cols[c * da + r];
                        }
                    }
                });
                add_to(grads, *b, &mut |t| {
                    let out = t.data_mut();
                    for c in 0..n {
                        for r in 0..da {
                            out[r * n + c] += db_cols[c * da + r];
                        }
                    }
                });
                add_to(grads, *w_a, &mut |t| {
                    for (x, y) in t.data_mut().iter_mut().zip(&dw) {
                        *x += y;
                    }
                });
            }
            Op::RegionSelfAtten { regions, pos } => {
                let Aux::Windows { weights } = &node.aux else { unreachable!() };
                let vr = self.value(*regions).clone();
                let (dr, m) = (vr.rows(), vr.cols());
                let inv_sqrt = 1.0 / (dr as f64).sqrt();
                let mut dreg = Tensor::zeros(vec![dr, m]);
                let mut dpos: Vec<Tensor> = (0..m).map(|_| Tensor::zeros(vec![dr, m])).collect();
                for i in 0..m {
                    let vp = self.value(pos[i]).clone();
                    let alphas = &weights[i];
                    let gcol: Vec<f64> = (0..dr).map(|r| g.at(r, i)).collect();
                    // keys K[:,j] = R[:,j] + P[:,j]
                    let mut dalpha = vec![0.0; m];
                    for j in 0..m {
                        let mut s = 0.0;
                        for r in 0..dr {
                            let kj = vr.at(r, j) + vp.at(r, j);
                            s += kj * gcol[r];
                            let dk = alphas[j] * gcol[r];
                            dreg.data_mut()[r * m + j] += dk;
                            dpos[i].data_mut()[r * m + j] += dk;
                        }
                        dalpha[j] = s;
                    }
                    let dot: f64 = alphas.iter().zip(&dalpha).map(|(a, d)| a * d).sum();
                    for j in 0..m {
                        let ds = alphas[j] * (dalpha[j] - dot) * inv_sqrt;
                        for r in 0..dr {
                            let kj = vr.at(r, j) + vp.at(r, j);
                            // query contribution
                            dreg.data_mut()[r * m + i] += ds * kj;
                            // key contribution
                            let dk = ds * vr.at(r, i);
                            dreg.data_mut()[r * m + j] += dk;
                            dpos[i].data_mut()[r * m + j] += dk;
                        }
                    }
                }
                add_to(grads, *regions, &mut |t| {
                    for (x, y) in t.data_mut().iter_mut().zip(dreg.data()) {
                        *x += y;
                    }
                });
                for (i, dp) in dpos.into_iter().enumerate() {
                    add_to(grads, pos[i], &mut |t| {
                        for (x, y) in t.data_mut().iter_mut().zip(dp.data()) {
                            *x += y;
                        }
                    });
                }
            }
        }
        Ok(())
    }
}
