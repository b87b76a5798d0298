//! Order-sensitive boundary prediction: forward/backward additive context
//! aggregation, start/end softmax heads, argmax decoding, and the negative
//! log-likelihood training loss.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SailError};
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

/// Probabilities are clamped here before the log to guard early-training
/// underflow.
pub const PROB_FLOOR: f64 = 1e-12;

/// Additive-attention parameter triple (shared shape with
/// [`crate::attention::AdditiveParams`], kept separate per direction).
#[derive(Clone, Debug)]
pub struct ContextParams {
    pub w1: Tensor,
    pub w2: Tensor,
    pub w_a: Tensor,
}

#[derive(Clone, Copy, Debug)]
pub struct ContextNodes {
    pub w1: NodeId,
    pub w2: NodeId,
    pub w_a: NodeId,
}

impl ContextNodes {
    pub fn from_params(tape: &mut Tape, p: &ContextParams) -> Self {
        ContextNodes {
            w1: tape.leaf(p.w1.clone()),
            w2: tape.leaf(p.w2.clone()),
            w_a: tape.leaf(p.w_a.clone()),
        }
    }
}

/// One boundary head: logits = v tanh(W H + b 1ᵀ); v is stored as a 1 x d
/// row so no reshape is needed.
#[derive(Clone, Debug)]
pub struct HeadParams {
    pub w: Tensor,
    pub b: Tensor,
    pub v: Tensor,
}

#[derive(Clone, Copy, Debug)]
pub struct HeadNodes {
    pub w: NodeId,
    pub b: NodeId,
    pub v: NodeId,
}

impl HeadNodes {
    pub fn from_params(tape: &mut Tape, p: &HeadParams) -> Self {
        HeadNodes { w: tape.leaf(p.w.clone()), b: tape.leaf(p.b.clone()), v: tape.leaf(p.v.clone()) }
    }
}

#[derive(Clone, Debug)]
pub struct LocalizerParams {
    pub fw: ContextParams,
    pub bw: ContextParams,
    pub start: HeadParams,
    pub end: HeadParams,
}

#[derive(Clone, Copy, Debug)]
pub struct LocalizerNodes {
    pub fw: ContextNodes,
    pub bw: ContextNodes,
    pub start: HeadNodes,
    pub end: HeadNodes,
}

impl LocalizerNodes {
    pub fn from_params(tape: &mut Tape, p: &LocalizerParams) -> Self {
        LocalizerNodes {
            fw: ContextNodes::from_params(tape, &p.fw),
            bw: ContextNodes::from_params(tape, &p.bw),
            start: HeadNodes::from_params(tape, &p.start),
            end: HeadNodes::from_params(tape, &p.end),
        }
    }
}

/// Forward context: column i aggregates frames t in [i, n) by additive
/// attention.
pub fn forward_context_node(tape: &mut Tape, hv: NodeId, p: &ContextNodes) -> Result<NodeId> {
    let a = tape.matmul(p.w1, hv)?;
    let b = tape.matmul(p.w2, hv)?;
    tape.directional_context(hv, a, b, p.w_a, true)
}

/// Backward context: column i aggregates frames t in [0, i].
pub fn backward_context_node(tape: &mut Tape, hv: NodeId, p: &ContextNodes) -> Result<NodeId> {
    let a = tape.matmul(p.w1, hv)?;
    let b = tape.matmul(p.w2, hv)?;
    tape.directional_context(hv, a, b, p.w_a, false)
}

pub fn forward_context(hv: &Tensor, p: &ContextParams) -> Result<Tensor> {
    let mut tape = Tape::new();
    let h = tape.leaf(hv.clone());
    let nodes = ContextNodes::from_params(&mut tape, p);
    let out = forward_context_node(&mut tape, h, &nodes)?;
    Ok(tape.value(out).clone())
}

pub fn backward_context(hv: &Tensor, p: &ContextParams) -> Result<Tensor> {
    let mut tape = Tape::new();
    let h = tape.leaf(hv.clone());
    let nodes = ContextNodes::from_params(&mut tape, p);
    let out = backward_context_node(&mut tape, h, &nodes)?;
    Ok(tape.value(out).clone())
}

fn head_distribution_node(tape: &mut Tape, ctx: NodeId, head: &HeadNodes) -> Result<NodeId> {
    let proj = tape.matmul(head.w, ctx)?;
    let biased = tape.add_col_vec(proj, head.b)?;
    let act = tape.tanh(biased)?;
    let logits = tape.matmul(head.v, act)?; // 1 x n
    tape.softmax_rows(logits)
}

/// Start distribution from forward contexts, end distribution from backward
/// contexts; each a 1 x n row summing to one.
pub fn boundary_distributions_node(
    tape: &mut Tape,
    h_fw: NodeId,
    h_bw: NodeId,
    p: &LocalizerNodes,
) -> Result<(NodeId, NodeId)> {
    let p_s = head_distribution_node(tape, h_fw, &p.start)?;
    let p_e = head_distribution_node(tape, h_bw, &p.end)?;
    Ok((p_s, p_e))
}

pub fn boundary_distributions(
    h_fw: &Tensor,
    h_bw: &Tensor,
    p: &LocalizerParams,
) -> Result<(Tensor, Tensor)> {
    let mut tape = Tape::new();
    let f = tape.leaf(h_fw.clone());
    let b = tape.leaf(h_bw.clone());
    let nodes = LocalizerNodes::from_params(&mut tape, p);
    let (ps, pe) = boundary_distributions_node(&mut tape, f, b, &nodes)?;
    Ok((tape.value(ps).clone(), tape.value(pe).clone()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    #[default]
    Independent,
    Constrained,
}

/// Predicted boundary distributions and decoded 1-based frame indices.
#[derive(Clone, Debug)]
pub struct BoundaryPrediction {
    pub p_s: Vec<f64>,
    pub p_e: Vec<f64>,
    pub s_hat: usize,
    pub e_hat: usize,
}

/// Argmax with smallest-index tie-break, 1-based.
fn argmax_first(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best + 1
}

/// Decode boundaries. Independent mode takes each distribution's argmax
/// (ties to the smallest index) and may produce e < s, which evaluation
/// scores as an empty segment. Constrained mode maximizes p_s[i] * p_e[j]
/// over i <= j; ties resolve to the lexicographically largest pair.
pub fn predict_boundaries(p_s: &[f64], p_e: &[f64], mode: DecodeMode) -> (usize, usize) {
    match mode {
        DecodeMode::Independent => (argmax_first(p_s), argmax_first(p_e)),
        DecodeMode::Constrained => {
            let n = p_s.len().min(p_e.len());
            let mut best = (1, 1);
            let mut best_score = f64::NEG_INFINITY;
            for s in 0..n {
                for e in s..n {
                    let score = p_s[s] * p_e[e];
                    if score >= best_score {
                        best_score = score;
                        best = (s + 1, e + 1);
                    }
                }
            }
            best
        }
    }
}

/// Mean negative log probability of the ground-truth boundaries over a
/// batch; probabilities clamped at [`PROB_FLOOR`]. Boundaries are 1-based.
pub fn nll_loss(batch: &[(&[f64], &[f64], usize, usize)]) -> Result<f64> {
    if batch.is_empty() {
        return Err(SailError::invalid("nll_loss", "empty batch"));
    }
    let mut total = 0.0;
    for &(p_s, p_e, s, e) in batch {
        if s == 0 || s > p_s.len() || e == 0 || e > p_e.len() {
            return Err(SailError::invalid(
                "nll_loss",
                format!("ground truth ({s},{e}) outside 1..={}", p_s.len()),
            ));
        }
        total -= p_s[s - 1].max(PROB_FLOOR).ln() + p_e[e - 1].max(PROB_FLOOR).ln();
    }
    Ok(total / batch.len() as f64)
}

/// Per-sample loss on the tape: -(log p_s[s] + log p_e[e]) as a scalar
/// node. Batch averaging is done by the caller.
pub fn sample_nll_node(
    tape: &mut Tape,
    p_s: NodeId,
    p_e: NodeId,
    s: usize,
    e: usize,
) -> Result<NodeId> {
    let n_s = tape.value(p_s).cols();
    let n_e = tape.value(p_e).cols();
    if s == 0 || s > n_s || e == 0 || e > n_e {
        return Err(SailError::invalid(
            "sample_nll",
            format!("ground truth ({s},{e}) outside 1..={n_s}"),
        ));
    }
    let ps = tape.pick_entry(p_s, 0, s - 1)?;
    let pe = tape.pick_entry(p_e, 0, e - 1)?;
    let ls = tape.log_clamped(ps, PROB_FLOOR)?;
    let le = tape.log_clamped(pe, PROB_FLOOR)?;
    let sum = tape.add(ls, le)?;
    tape.scale(sum, -1.0)
}
