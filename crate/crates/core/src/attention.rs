//! Scaled dot-product and multi-head attention, the windowed local variant,
//! and additive attention.
//!
//! Inputs follow the column-as-item convention (queries/keys/values are
//! columns); attention outputs are row-per-query matrices. The pure entry
//! points record onto a scratch tape so there is exactly one implementation
//! of each kernel for both inference and training.

use crate::error::{Result, SailError};
use crate::tape::{NodeId, Tape};
use crate::tensor::{softmax_in_place, Tensor};

/// Per-head projections plus the output projection.
///
/// Head i maps queries through `w_q[i]` (d1 x dq_in), keys through `w_k[i]`
/// (d1 x dk_in) and values through `w_v[i]` (d2 x dv_in); `w_o` is
/// (d_out x H*d2).
#[derive(Clone, Debug)]
pub struct MultiHeadParams {
    pub w_q: Vec<Tensor>,
    pub w_k: Vec<Tensor>,
    pub w_v: Vec<Tensor>,
    pub w_o: Tensor,
}

impl MultiHeadParams {
    pub fn heads(&self) -> usize {
        self.w_q.len()
    }

    pub fn validate(&self) -> Result<()> {
        let h = self.w_q.len();
        if h == 0 || self.w_k.len() != h || self.w_v.len() != h {
            return Err(SailError::invalid("MultiHeadParams", "head projection counts differ"));
        }
        let d1 = self.w_q[0].rows();
        let d2 = self.w_v[0].rows();
        for i in 0..h {
            if self.w_q[i].rows() != d1 || self.w_k[i].rows() != d1 {
                return Err(SailError::shape("MultiHeadParams", "heads disagree on projected query/key dim"));
            }
            if self.w_v[i].rows() != d2 {
                return Err(SailError::shape("MultiHeadParams", "heads disagree on projected value dim"));
            }
        }
        if self.w_o.cols() != h * d2 {
            return Err(SailError::shape(
                "MultiHeadParams",
                format!("w_o expects {} input columns, got {}", h * d2, self.w_o.cols()),
            ));
        }
        Ok(())
    }

    /// Single identity head of dimension d: reduces multi-head to plain
    /// scaled dot-product attention. Test helper.
    pub fn identity(d: usize) -> Self {
        MultiHeadParams {
            w_q: vec![Tensor::eye(d)],
            w_k: vec![Tensor::eye(d)],
            w_v: vec![Tensor::eye(d)],
            w_o: Tensor::eye(d),
        }
    }
}

/// Tape-resident multi-head parameters.
#[derive(Clone, Debug)]
pub struct MultiHeadNodes {
    pub w_q: Vec<NodeId>,
    pub w_k: Vec<NodeId>,
    pub w_v: Vec<NodeId>,
    pub w_o: NodeId,
}

impl MultiHeadNodes {
    pub fn from_params(tape: &mut Tape, p: &MultiHeadParams) -> Result<Self> {
        p.validate()?;
        Ok(MultiHeadNodes {
            w_q: p.w_q.iter().map(|t| tape.leaf(t.clone())).collect(),
            w_k: p.w_k.iter().map(|t| tape.leaf(t.clone())).collect(),
            w_v: p.w_v.iter().map(|t| tape.leaf(t.clone())).collect(),
            w_o: tape.leaf(p.w_o.clone()),
        })
    }

    pub fn heads(&self) -> usize {
        self.w_q.len()
    }
}

/// Softmax(QᵀK/sqrt(d1)) Vᵀ with row-wise softmax. Q: d1 x n1, K: d1 x n2,
/// V: d2 x n2; output n1 x d2.
pub fn dot_atten_node(tape: &mut Tape, q: NodeId, k: NodeId, v: NodeId) -> Result<NodeId> {
    let (dq, dk) = (tape.value(q).rows(), tape.value(k).rows());
    if dq != dk {
        return Err(SailError::shape("dot_atten", format!("query dim {dq} vs key dim {dk}")));
    }
    if tape.value(k).cols() != tape.value(v).cols() {
        return Err(SailError::shape("dot_atten", "key/value counts differ"));
    }
    let qt = tape.transpose(q)?;
    let scores = tape.matmul(qt, k)?;
    let scaled = tape.scale(scores, 1.0 / (dq as f64).sqrt())?;
    let weights = tape.softmax_rows(scaled)?;
    let vt = tape.transpose(v)?;
    tape.matmul(weights, vt)
}

pub fn dot_atten(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let (qn, kn, vn) = (tape.leaf(q.clone()), tape.leaf(k.clone()), tape.leaf(v.clone()));
    let out = dot_atten_node(&mut tape, qn, kn, vn)?;
    Ok(tape.value(out).clone())
}

fn project_heads(
    tape: &mut Tape,
    q: NodeId,
    k: NodeId,
    v: NodeId,
    p: &MultiHeadNodes,
    head: usize,
) -> Result<(NodeId, NodeId, NodeId)> {
    let qh = tape.matmul(p.w_q[head], q)?;
    let kh = tape.matmul(p.w_k[head], k)?;
    let vh = tape.matmul(p.w_v[head], v)?;
    Ok((qh, kh, vh))
}

/// Concatenate per-head outputs (each n x d2) along features and apply the
/// output projection; result is n x d_out.
fn combine_heads(tape: &mut Tape, heads: &[NodeId], w_o: NodeId) -> Result<NodeId> {
    let mut stacked = Vec::with_capacity(heads.len());
    for &h in heads {
        stacked.push(tape.transpose(h)?);
    }
    let concat = tape.concat_rows(&stacked)?; // (H*d2) x n
    let proj = tape.matmul(w_o, concat)?; // d_out x n
    tape.transpose(proj)
}

/// Multi-head attention; output n1 x d_out where d_out is the row count of
/// the output projection.
pub fn multi_head_node(
    tape: &mut Tape,
    q: NodeId,
    k: NodeId,
    v: NodeId,
    p: &MultiHeadNodes,
) -> Result<NodeId> {
    let mut heads = Vec::with_capacity(p.heads());
    for h in 0..p.heads() {
        let (qh, kh, vh) = project_heads(tape, q, k, v, p, h)?;
        heads.push(dot_atten_node(tape, qh, kh, vh)?);
    }
    combine_heads(tape, &heads, p.w_o)
}

pub fn multi_head(q: &Tensor, k: &Tensor, v: &Tensor, p: &MultiHeadParams) -> Result<Tensor> {
    let mut tape = Tape::new();
    let (qn, kn, vn) = (tape.leaf(q.clone()), tape.leaf(k.clone()), tape.leaf(v.clone()));
    let nodes = MultiHeadNodes::from_params(&mut tape, p)?;
    let out = multi_head_node(&mut tape, qn, kn, vn, &nodes)?;
    Ok(tape.value(out).clone())
}

/// Multi-head self-attention over frames with keys/values restricted to a
/// window of `radius` around each position, clipped at the sequence ends.
/// Output n x d_out.
pub fn local_multi_head_node(
    tape: &mut Tape,
    f: NodeId,
    radius: usize,
    p: &MultiHeadNodes,
) -> Result<NodeId> {
    let mut heads = Vec::with_capacity(p.heads());
    for h in 0..p.heads() {
        let (qh, kh, vh) = project_heads(tape, f, f, f, p, h)?;
        heads.push(tape.local_atten_head(qh, kh, vh, radius)?);
    }
    combine_heads(tape, &heads, p.w_o)
}

pub fn local_multi_head(f: &Tensor, radius: usize, p: &MultiHeadParams) -> Result<Tensor> {
    let mut tape = Tape::new();
    let fn_ = tape.leaf(f.clone());
    let nodes = MultiHeadNodes::from_params(&mut tape, p)?;
    let out = local_multi_head_node(&mut tape, fn_, radius, &nodes)?;
    Ok(tape.value(out).clone())
}

/// Parameters of additive attention: scores are w_aᵀ tanh(W1 q + W2 k_t).
#[derive(Clone, Debug)]
pub struct AdditiveParams {
    pub w1: Tensor,
    pub w2: Tensor,
    pub w_a: Tensor,
}

impl AdditiveParams {
    pub fn validate(&self) -> Result<()> {
        if self.w1.rank() != 2 || self.w2.rank() != 2 || self.w_a.rank() != 1 {
            return Err(SailError::shape("AdditiveParams", "w1/w2 rank-2, w_a rank-1"));
        }
        if self.w1.rows() != self.w2.rows() || self.w_a.len() != self.w1.rows() {
            return Err(SailError::shape("AdditiveParams", "projection rows must agree with w_a length"));
        }
        Ok(())
    }
}

/// Additive attention of one query over T keys: weights softmax over
/// w_aᵀ tanh(W1 query + W2 key_t), context the weighted key sum.
pub fn additive_atten(
    query: &Tensor,
    keys: &Tensor,
    p: &AdditiveParams,
) -> Result<(Tensor, Tensor)> {
    p.validate()?;
    if query.rank() != 1 || keys.rank() != 2 {
        return Err(SailError::shape("additive_atten", "query rank-1, keys rank-2"));
    }
    if p.w1.cols() != query.len() || p.w2.cols() != keys.rows() {
        return Err(SailError::shape("additive_atten", "projection columns do not match inputs"));
    }
    let t_count = keys.cols();
    if t_count == 0 {
        return Err(SailError::invalid("additive_atten", "no keys"));
    }
    let da = p.w_a.len();
    // W1 q once
    let mut q_proj = vec![0.0; da];
    for (r, qp) in q_proj.iter_mut().enumerate() {
        for c in 0..query.len() {
            *qp += p.w1.at(r, c) * query.data()[c];
        }
    }
    let mut scores = vec![0.0; t_count];
    for (t, s) in scores.iter_mut().enumerate() {
        for r in 0..da {
            let mut k_proj = 0.0;
            for c in 0..keys.rows() {
                k_proj += p.w2.at(r, c) * keys.at(c, t);
            }
            *s += p.w_a.data()[r] * (q_proj[r] + k_proj).tanh();
        }
    }
    softmax_in_place(&mut scores);
    let mut context = vec![0.0; keys.rows()];
    for (t, &w) in scores.iter().enumerate() {
        for (r, ctx) in context.iter_mut().enumerate() {
            *ctx += w * keys.at(r, t);
        }
    }
    Ok((Tensor::vector(context), Tensor::vector(scores)))
}
