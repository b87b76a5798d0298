//! The stacked local transformer encoder over frame sequences: sinusoidal
//! temporal encoding, a windowed multi-head self-attention sublayer, a
//! cross-attention sublayer over region representations combined through an
//! informative fusion, and a position-wise feed-forward sublayer. Every
//! sublayer ends in a residual (or fusion) followed by layer norm.

use crate::attention::{local_multi_head_node, multi_head_node, MultiHeadNodes, MultiHeadParams};
use crate::error::{Result, SailError};
use crate::tape::{NodeId, Tape};
use crate::tensor::{Tensor, LAYER_NORM_EPS};

/// Sinusoidal position encoding, one column per frame:
/// row 2k holds sin(pos / 10000^(2k/d_f)), row 2k+1 the matching cosine.
pub fn temporal_encoding(n: usize, d_f: usize) -> Result<Tensor> {
    if n == 0 {
        return Err(SailError::invalid("temporal_encoding", "n must be >= 1"));
    }
    if d_f == 0 || d_f % 2 != 0 {
        return Err(SailError::invalid("temporal_encoding", "d_f must be positive and even"));
    }
    let mut t = Tensor::zeros(vec![d_f, n]);
    for pos in 0..n {
        for k in 0..d_f / 2 {
            let angle = pos as f64 / 10_000f64.powf(2.0 * k as f64 / d_f as f64);
            t.data_mut()[(2 * k) * n + pos] = angle.sin();
            t.data_mut()[(2 * k + 1) * n + pos] = angle.cos();
        }
    }
    Ok(t)
}

/// tanh(W_f [A; B; A⊙B; A−B] + b_f) per column.
pub fn fusion_node(tape: &mut Tape, a: NodeId, b: NodeId, w_f: NodeId, b_f: NodeId) -> Result<NodeId> {
    if !tape.value(a).same_dims(tape.value(b)) {
        return Err(SailError::shape(
            "fusion",
            format!("{:?} vs {:?}", tape.value(a).dims(), tape.value(b).dims()),
        ));
    }
    let prod = tape.mul_elem(a, b)?;
    let diff = tape.sub(a, b)?;
    let cat = tape.concat_rows(&[a, b, prod, diff])?;
    let lin = tape.matmul(w_f, cat)?;
    let biased = tape.add_col_vec(lin, b_f)?;
    tape.tanh(biased)
}

pub fn fusion(a: &Tensor, b: &Tensor, w_f: &Tensor, b_f: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let (an, bn) = (tape.leaf(a.clone()), tape.leaf(b.clone()));
    let (wn, bfn) = (tape.leaf(w_f.clone()), tape.leaf(b_f.clone()));
    let out = fusion_node(&mut tape, an, bn, wn, bfn)?;
    Ok(tape.value(out).clone())
}

/// Parameters of one encoder layer.
#[derive(Clone, Debug)]
pub struct EncoderLayerParams {
    pub local: MultiHeadParams,
    pub cross: MultiHeadParams,
    pub w_f: Tensor,
    pub b_f: Tensor,
    pub ffn_w1: Tensor,
    pub ffn_b1: Tensor,
    pub ffn_w2: Tensor,
    pub ffn_b2: Tensor,
    pub ln1_gain: Tensor,
    pub ln1_bias: Tensor,
    pub ln2_gain: Tensor,
    pub ln2_bias: Tensor,
    pub ln3_gain: Tensor,
    pub ln3_bias: Tensor,
}

impl EncoderLayerParams {
    pub fn validate(&self, d_f: usize) -> Result<()> {
        self.local.validate()?;
        self.cross.validate()?;
        if self.local.w_o.rows() != d_f || self.cross.w_o.rows() != d_f {
            return Err(SailError::shape("EncoderLayerParams", "sublayer outputs must be d_f"));
        }
        if self.w_f.dims() != [d_f, 4 * d_f] || self.b_f.dims() != [d_f] {
            return Err(SailError::shape("EncoderLayerParams", "fusion dims must be d_f x 4d_f"));
        }
        let d_ff = self.ffn_w1.rows();
        if self.ffn_w1.cols() != d_f
            || self.ffn_b1.dims() != [d_ff]
            || self.ffn_w2.dims() != [d_f, d_ff]
            || self.ffn_b2.dims() != [d_f]
        {
            return Err(SailError::shape("EncoderLayerParams", "feed-forward dims inconsistent"));
        }
        for ln in [
            &self.ln1_gain, &self.ln1_bias, &self.ln2_gain, &self.ln2_bias, &self.ln3_gain,
            &self.ln3_bias,
        ] {
            if ln.dims() != [d_f] {
                return Err(SailError::shape("EncoderLayerParams", "layer norm params must be length d_f"));
            }
        }
        Ok(())
    }
}

/// Tape-resident layer parameters.
#[derive(Clone, Debug)]
pub struct EncoderLayerNodes {
    pub local: MultiHeadNodes,
    pub cross: MultiHeadNodes,
    pub w_f: NodeId,
    pub b_f: NodeId,
    pub ffn_w1: NodeId,
    pub ffn_b1: NodeId,
    pub ffn_w2: NodeId,
    pub ffn_b2: NodeId,
    pub ln1_gain: NodeId,
    pub ln1_bias: NodeId,
    pub ln2_gain: NodeId,
    pub ln2_bias: NodeId,
    pub ln3_gain: NodeId,
    pub ln3_bias: NodeId,
}

impl EncoderLayerNodes {
    pub fn from_params(tape: &mut Tape, p: &EncoderLayerParams) -> Result<Self> {
        Ok(EncoderLayerNodes {
            local: MultiHeadNodes::from_params(tape, &p.local)?,
            cross: MultiHeadNodes::from_params(tape, &p.cross)?,
            w_f: tape.leaf(p.w_f.clone()),
            b_f: tape.leaf(p.b_f.clone()),
            ffn_w1: tape.leaf(p.ffn_w1.clone()),
            ffn_b1: tape.leaf(p.ffn_b1.clone()),
            ffn_w2: tape.leaf(p.ffn_w2.clone()),
            ffn_b2: tape.leaf(p.ffn_b2.clone()),
            ln1_gain: tape.leaf(p.ln1_gain.clone()),
            ln1_bias: tape.leaf(p.ln1_bias.clone()),
            ln2_gain: tape.leaf(p.ln2_gain.clone()),
            ln2_bias: tape.leaf(p.ln2_bias.clone()),
            ln3_gain: tape.leaf(p.ln3_gain.clone()),
            ln3_bias: tape.leaf(p.ln3_bias.clone()),
        })
    }
}

/// Encoder stack configuration. `cross_in_all_layers = false` keeps the
/// cross-attention sublayer only in the final layer; `use_local = false`
/// swaps the windowed self-attention for global multi-head attention.
#[derive(Clone, Copy, Debug)]
pub struct VideoEncoderConfig {
    pub layers: usize,
    pub window: usize,
    pub cross_in_all_layers: bool,
    pub use_local: bool,
}

impl VideoEncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(SailError::invalid("VideoEncoderConfig", "at least one layer required"));
        }
        Ok(())
    }

    pub fn cross_enabled(&self, layer_idx: usize) -> bool {
        self.cross_in_all_layers || layer_idx + 1 == self.layers
    }
}

/// One encoder layer:
///   F1 = LN(SelfAtten(F) + F)
///   F2 = LN(Fusion(F1, MultiHead(F1, Hr, Hr)))   (skipped if !cross)
///   F3 = LN(F2 + FFN(F2))
pub fn encoder_layer_node(
    tape: &mut Tape,
    f_in: NodeId,
    h_r: NodeId,
    p: &EncoderLayerNodes,
    window: usize,
    use_local: bool,
    cross: bool,
) -> Result<NodeId> {
    // sublayer 1: windowed (or global) self-attention with residual
    let atten = if use_local {
        local_multi_head_node(tape, f_in, window, &p.local)?
    } else {
        multi_head_node(tape, f_in, f_in, f_in, &p.local)?
    };
    let atten_t = tape.transpose(atten)?; // back to d_f x n
    let res1 = tape.add(atten_t, f_in)?;
    let f1 = tape.layer_norm_cols(res1, p.ln1_gain, p.ln1_bias, LAYER_NORM_EPS)?;

    // sublayer 2: cross-attention over regions, fused (no additive residual)
    let f2 = if cross {
        let cross_out = multi_head_node(tape, f1, h_r, h_r, &p.cross)?;
        let cross_t = tape.transpose(cross_out)?;
        let fused = fusion_node(tape, f1, cross_t, p.w_f, p.b_f)?;
        tape.layer_norm_cols(fused, p.ln2_gain, p.ln2_bias, LAYER_NORM_EPS)?
    } else {
        f1
    };

    // sublayer 3: position-wise feed-forward with residual
    let h1 = tape.matmul(p.ffn_w1, f2)?;
    let h1b = tape.add_col_vec(h1, p.ffn_b1)?;
    let hrelu = tape.relu(h1b)?;
    let h2 = tape.matmul(p.ffn_w2, hrelu)?;
    let ffn = tape.add_col_vec(h2, p.ffn_b2)?;
    let res3 = tape.add(f2, ffn)?;
    tape.layer_norm_cols(res3, p.ln3_gain, p.ln3_bias, LAYER_NORM_EPS)
}

pub fn encoder_layer(
    f_in: &Tensor,
    h_r: &Tensor,
    p: &EncoderLayerParams,
    window: usize,
    use_local: bool,
    cross: bool,
) -> Result<Tensor> {
    p.validate(f_in.rows())?;
    let mut tape = Tape::new();
    let f = tape.leaf(f_in.clone());
    let hr = tape.leaf(h_r.clone());
    let nodes = EncoderLayerNodes::from_params(&mut tape, p)?;
    let out = encoder_layer_node(&mut tape, f, hr, &nodes, window, use_local, cross)?;
    Ok(tape.value(out).clone())
}

/// Temporal encoding added once, then the layer stack.
pub fn encode_video_node(
    tape: &mut Tape,
    frames: NodeId,
    h_r: NodeId,
    layers: &[EncoderLayerNodes],
    cfg: &VideoEncoderConfig,
) -> Result<NodeId> {
    cfg.validate()?;
    if layers.len() != cfg.layers {
        return Err(SailError::invalid(
            "encode_video",
            format!("{} layer params for {} configured layers", layers.len(), cfg.layers),
        ));
    }
    let (d_f, n) = (tape.value(frames).rows(), tape.value(frames).cols());
    let te = tape.leaf(temporal_encoding(n, d_f)?);
    let mut f = tape.add(frames, te)?;
    for (idx, p) in layers.iter().enumerate() {
        f = encoder_layer_node(tape, f, h_r, p, cfg.window, cfg.use_local, cfg.cross_enabled(idx))?;
    }
    Ok(f)
}

pub fn encode_video(
    frames: &Tensor,
    h_r: &Tensor,
    layers: &[EncoderLayerParams],
    cfg: &VideoEncoderConfig,
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let f = tape.leaf(frames.clone());
    let hr = tape.leaf(h_r.clone());
    let mut nodes = Vec::with_capacity(layers.len());
    for p in layers {
        p.validate(frames.rows())?;
        nodes.push(EncoderLayerNodes::from_params(&mut tape, p)?);
    }
    let out = encode_video_node(&mut tape, f, hr, &nodes, cfg)?;
    Ok(tape.value(out).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngState;
    use std::collections::HashSet;

    #[test]
    fn temporal_encoding_position_zero_alternates() {
        let te = temporal_encoding(3, 6).unwrap();
        for k in 0..3 {
            assert_eq!(te.at(2 * k, 0), 0.0);
            assert_eq!(te.at(2 * k + 1, 0), 1.0);
        }
    }

    #[test]
    fn temporal_encoding_hand_values() {
        let te = temporal_encoding(4, 8).unwrap();
        // pos 1, k=0: angle = 1
        assert!((te.at(0, 1) - 1.0f64.sin()).abs() < 1e-15);
        assert!((te.at(1, 1) - 1.0f64.cos()).abs() < 1e-15);
        assert!((te.at(0, 1) - 0.8415).abs() < 1e-4);
        assert!((te.at(1, 1) - 0.5403).abs() < 1e-4);
    }

    #[test]
    fn temporal_encoding_columns_distinct_up_to_1e4() {
        let n = 10_000;
        let te = temporal_encoding(n, 2).unwrap();
        let mut seen = HashSet::with_capacity(n);
        for pos in 0..n {
            let key = (te.at(0, pos).to_bits(), te.at(1, pos).to_bits());
            assert!(seen.insert(key), "duplicate column at {pos}");
        }
    }

    #[test]
    fn temporal_encoding_rejects_odd_dim() {
        assert!(temporal_encoding(4, 5).is_err());
    }

    #[test]
    fn fusion_zero_weight_yields_tanh_bias() {
        let a = Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = a.scale(2.0);
        let w = Tensor::zeros(vec![2, 8]);
        let bias = Tensor::vector(vec![0.5, -0.25]);
        let out = fusion(&a, &b, &w, &bias).unwrap();
        for c in 0..3 {
            assert_eq!(out.at(0, c), 0.5f64.tanh());
            assert_eq!(out.at(1, c), (-0.25f64).tanh());
        }
    }

    #[test]
    fn fusion_of_equal_inputs_has_zero_difference_slice() {
        // with B = A, the concatenation is [A; A; A⊙A; 0]; pick w_f that
        // reads only the difference slice -> output tanh(0) = 0
        let a = Tensor::matrix(1, 2, vec![0.7, -1.2]).unwrap();
        let mut w = Tensor::zeros(vec![1, 4]);
        w.data_mut()[3] = 5.0; // difference slot only
        let bias = Tensor::zeros(vec![1]);
        let out = fusion(&a, &a, &w, &bias).unwrap();
        assert_eq!(out.data(), &[0.0, 0.0]);
    }

    #[test]
    fn fusion_one_dimensional_hand_value() {
        // A=1, B=2, w_f = [1,1,1,1], b_f = 0: tanh(1 + 2 + 2 - 1) = tanh(4)
        let a = Tensor::matrix(1, 1, vec![1.0]).unwrap();
        let b = Tensor::matrix(1, 1, vec![2.0]).unwrap();
        let w = Tensor::matrix(1, 4, vec![1.0; 4]).unwrap();
        let bias = Tensor::zeros(vec![1]);
        let out = fusion(&a, &b, &w, &bias).unwrap();
        assert!((out.data()[0] - 4.0f64.tanh()).abs() < 1e-15);
        assert!((out.data()[0] - 0.9993).abs() < 1e-4);
    }

    pub(crate) fn random_mh(rng: &mut RngState, heads: usize, d_in_q: usize, d_in_kv: usize, d_out: usize, d1: usize, d2: usize) -> MultiHeadParams {
        let mut mk = |r: usize, c: usize| {
            Tensor::new(vec![r, c], (0..r * c).map(|_| rng.normal() * 0.3).collect()).unwrap()
        };
        MultiHeadParams {
            w_q: (0..heads).map(|_| mk(d1, d_in_q)).collect(),
            w_k: (0..heads).map(|_| mk(d1, d_in_kv)).collect(),
            w_v: (0..heads).map(|_| mk(d2, d_in_kv)).collect(),
            w_o: mk(d_out, heads * d2),
        }
    }

    pub(crate) fn random_layer(rng: &mut RngState, d_f: usize, d_r: usize, d_ff: usize, heads: usize) -> EncoderLayerParams {
        let d1 = d_f / heads;
        fn mk(rng: &mut RngState, r: usize, c: usize) -> Tensor {
            Tensor::new(vec![r, c], (0..r * c).map(|_| rng.normal() * 0.3).collect()).unwrap()
        }
        EncoderLayerParams {
            local: random_mh(rng, heads, d_f, d_f, d_f, d1, d1),
            cross: random_mh(rng, heads, d_f, d_r, d_f, d1, d1),
            w_f: mk(rng, d_f, 4 * d_f),
            b_f: Tensor::zeros(vec![d_f]),
            ffn_w1: mk(rng, d_ff, d_f),
            ffn_b1: Tensor::zeros(vec![d_ff]),
            ffn_w2: mk(rng, d_f, d_ff),
            ffn_b2: Tensor::zeros(vec![d_f]),
            ln1_gain: Tensor::filled(vec![d_f], 1.0),
            ln1_bias: Tensor::zeros(vec![d_f]),
            ln2_gain: Tensor::filled(vec![d_f], 1.0),
            ln2_bias: Tensor::zeros(vec![d_f]),
            ln3_gain: Tensor::filled(vec![d_f], 1.0),
            ln3_bias: Tensor::zeros(vec![d_f]),
        }
    }

    fn random_frames(rng: &mut RngState, d_f: usize, n: usize) -> Tensor {
        Tensor::new(vec![d_f, n], (0..d_f * n).map(|_| rng.normal()).collect()).unwrap()
    }

    #[test]
    fn encoder_layer_output_dims() {
        let mut rng = RngState::new(3);
        let (d_f, d_r, n, m) = (8, 6, 11, 4);
        let p = random_layer(&mut rng, d_f, d_r, 16, 2);
        let f = random_frames(&mut rng, d_f, n);
        let hr = random_frames(&mut rng, d_r, m);
        let out = encoder_layer(&f, &hr, &p, 3, true, true).unwrap();
        assert_eq!(out.dims(), &[d_f, n]);
        assert!(out.is_finite());
    }

    #[test]
    fn layer_without_cross_is_local_outside_window() {
        // with cross disabled and FFN position-wise, output at position i
        // only depends on frames within the window
        let mut rng = RngState::new(5);
        let (d_f, n, w) = (6, 12, 2);
        let p = random_layer(&mut rng, d_f, 4, 12, 2);
        let hr = random_frames(&mut rng, 4, 3);
        let f = random_frames(&mut rng, d_f, n);
        let base = encoder_layer(&f, &hr, &p, w, true, false).unwrap();
        // perturb frame at distance w+1 from position 0
        let mut f2 = f.clone();
        for r in 0..d_f {
            let v = f2.at(r, w + 1) + 3.0;
            f2.set(r, w + 1, v);
        }
        let moved = encoder_layer(&f2, &hr, &p, w, true, false).unwrap();
        for r in 0..d_f {
            assert_eq!(base.at(r, 0).to_bits(), moved.at(r, 0).to_bits());
        }
        // within the window it must change
        assert!((0..d_f).any(|r| base.at(r, 1) != moved.at(r, 1)));
    }

    #[test]
    fn zero_weights_reduce_to_repeated_layer_norm() {
        // all-zero attention and FFN weights with cross disabled collapse
        // each layer to two layer norms of its input
        let mut rng = RngState::new(7);
        let (d_f, n, layers) = (6, 9, 2);
        let zero_mh = MultiHeadParams {
            w_q: vec![Tensor::zeros(vec![3, d_f]); 2],
            w_k: vec![Tensor::zeros(vec![3, d_f]); 2],
            w_v: vec![Tensor::zeros(vec![3, d_f]); 2],
            w_o: Tensor::zeros(vec![d_f, 6]),
        };
        let zero_layer = EncoderLayerParams {
            local: zero_mh.clone(),
            cross: MultiHeadParams {
                w_q: zero_mh.w_q.clone(),
                w_k: vec![Tensor::zeros(vec![3, 4]); 2],
                w_v: vec![Tensor::zeros(vec![3, 4]); 2],
                w_o: Tensor::zeros(vec![d_f, 6]),
            },
            w_f: Tensor::zeros(vec![d_f, 4 * d_f]),
            b_f: Tensor::zeros(vec![d_f]),
            ffn_w1: Tensor::zeros(vec![12, d_f]),
            ffn_b1: Tensor::zeros(vec![12]),
            ffn_w2: Tensor::zeros(vec![d_f, 12]),
            ffn_b2: Tensor::zeros(vec![d_f]),
            ln1_gain: Tensor::filled(vec![d_f], 1.0),
            ln1_bias: Tensor::zeros(vec![d_f]),
            ln2_gain: Tensor::filled(vec![d_f], 1.0),
            ln2_bias: Tensor::zeros(vec![d_f]),
            ln3_gain: Tensor::filled(vec![d_f], 1.0),
            ln3_bias: Tensor::zeros(vec![d_f]),
        };
        let params = vec![zero_layer; layers];
        let f = random_frames(&mut rng, d_f, n);
        let hr = random_frames(&mut rng, 4, 3);

        // zero weights and no cross sublayer: F1 = LN(F), F3 = LN(F1),
        // so every layer is two per-column layer norms
        let te = temporal_encoding(n, d_f).unwrap();
        let ln_cols = |t: &Tensor| {
            let mut out = Tensor::zeros(vec![d_f, n]);
            for c in 0..n {
                let col = t.col(c);
                let ln = crate::tensor::layer_norm(&col, &vec![1.0; d_f], &vec![0.0; d_f], LAYER_NORM_EPS)
                    .unwrap();
                for r in 0..d_f {
                    out.data_mut()[r * n + c] = ln[r];
                }
            }
            out
        };
        let mut got = f.add(&te).unwrap();
        for p in &params {
            got = encoder_layer(&got, &hr, p, 2, true, false).unwrap();
        }
        let mut expect = f.add(&te).unwrap();
        for _ in 0..layers {
            expect = ln_cols(&ln_cols(&expect));
        }
        assert!(got.max_abs_diff(&expect) < 1e-12);
    }

    #[test]
    fn encode_video_is_deterministic() {
        let mut rng = RngState::new(11);
        let (d_f, d_r, n, m) = (8, 6, 10, 4);
        let layers = vec![random_layer(&mut rng, d_f, d_r, 16, 2), random_layer(&mut rng, d_f, d_r, 16, 2)];
        let cfg = VideoEncoderConfig { layers: 2, window: 3, cross_in_all_layers: true, use_local: true };
        let f = random_frames(&mut rng, d_f, n);
        let hr = random_frames(&mut rng, d_r, m);
        let a = encode_video(&f, &hr, &layers, &cfg).unwrap();
        let b = encode_video(&f, &hr, &layers, &cfg).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn global_flag_matches_local_with_covering_window() {
        let mut rng = RngState::new(13);
        let (d_f, d_r, n, m) = (6, 4, 7, 3);
        let layers = vec![random_layer(&mut rng, d_f, d_r, 12, 2)];
        let f = random_frames(&mut rng, d_f, n);
        let hr = random_frames(&mut rng, d_r, m);
        let local_cfg = VideoEncoderConfig { layers: 1, window: n - 1, cross_in_all_layers: true, use_local: true };
        let global_cfg = VideoEncoderConfig { layers: 1, window: 0, cross_in_all_layers: true, use_local: false };
        let a = encode_video(&f, &hr, &layers, &local_cfg).unwrap();
        let b = encode_video(&f, &hr, &layers, &global_cfg).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn cross_attention_couples_regions_to_output() {
        let mut rng = RngState::new(17);
        let (d_f, d_r, n, m) = (6, 4, 8, 3);
        let layers = vec![random_layer(&mut rng, d_f, d_r, 12, 2)];
        let cfg = VideoEncoderConfig { layers: 1, window: 2, cross_in_all_layers: true, use_local: true };
        let f = random_frames(&mut rng, d_f, n);
        let hr = random_frames(&mut rng, d_r, m);
        let base = encode_video(&f, &hr, &layers, &cfg).unwrap();
        let mut hr2 = hr.clone();
        hr2.data_mut()[0] += 1.0;
        let moved = encode_video(&f, &hr2, &layers, &cfg).unwrap();
        assert!(base.max_abs_diff(&moved) > 1e-9, "region perturbation had no effect");
    }

    #[test]
    fn receptive_field_is_exactly_layers_times_window() {
        // L layers of radius-w local attention reach exactly L*w; cross
        // attention and FFN are position-wise so they do not extend it
        let mut rng = RngState::new(19);
        let (d_f, d_r, n, w, l) = (4, 3, 14, 2, 2);
        let layers: Vec<EncoderLayerParams> =
            (0..l).map(|_| random_layer(&mut rng, d_f, d_r, 8, 2)).collect();
        let cfg = VideoEncoderConfig { layers: l, window: w, cross_in_all_layers: true, use_local: true };
        let f = random_frames(&mut rng, d_f, n);
        let hr = random_frames(&mut rng, d_r, 3);
        let base = encode_video(&f, &hr, &layers, &cfg).unwrap();

        let perturb = |dist: usize| {
            let mut f2 = f.clone();
            for r in 0..d_f {
                let v = f2.at(r, dist) + 2.0;
                f2.set(r, dist, v);
            }
            encode_video(&f2, &hr, &layers, &cfg).unwrap()
        };
        // distance L*w: inside the receptive field of position 0
        let inside = perturb(l * w);
        assert!((0..d_f).any(|r| inside.at(r, 0) != base.at(r, 0)), "L*w perturbation invisible");
        // distance L*w + 1: outside
        let outside = perturb(l * w + 1);
        for r in 0..d_f {
            assert_eq!(outside.at(r, 0).to_bits(), base.at(r, 0).to_bits());
        }
    }
}
