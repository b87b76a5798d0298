//! Fine-grained image-region representations: relative position encoding
//! between boxes, region self-attention with position-augmented keys, and
//! the full region encoder (residual, global-feature injection, layer norm).

use crate::error::{Result, SailError};
use crate::tape::{NodeId, Tape};
use crate::tensor::{Tensor, LAYER_NORM_EPS};

/// Center/size box. Width and height must be strictly positive.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundingBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        if !(w > 0.0) || !(h > 0.0) {
            return Err(SailError::invalid("BoundingBox", format!("nonpositive size {w}x{h}")));
        }
        Ok(BoundingBox { cx, cy, w, h })
    }
}

/// An image query: m region feature columns, their boxes, and one global
/// feature vector.
#[derive(Clone, Debug)]
pub struct ImageQuery {
    pub regions: Tensor,
    pub boxes: Vec<BoundingBox>,
    pub global: Tensor,
}

impl ImageQuery {
    pub fn new(regions: Tensor, boxes: Vec<BoundingBox>, global: Tensor) -> Result<Self> {
        if regions.rank() != 2 {
            return Err(SailError::shape("ImageQuery", "regions must be d_r x m"));
        }
        if boxes.len() != regions.cols() {
            return Err(SailError::shape(
                "ImageQuery",
                format!("{} boxes for {} regions", boxes.len(), regions.cols()),
            ));
        }
        if global.rank() != 1 {
            return Err(SailError::shape("ImageQuery", "global feature must be a vector"));
        }
        Ok(ImageQuery { regions, boxes, global })
    }

    pub fn region_count(&self) -> usize {
        self.regions.cols()
    }

    pub fn region_dim(&self) -> usize {
        self.regions.rows()
    }
}

/// Relative position of box i with respect to box j: normalized center
/// offsets and log size ratios.
pub fn relative_position(p_i: &BoundingBox, p_j: &BoundingBox) -> [f64; 4] {
    [
        (p_i.cx - p_j.cx) / p_j.w,
        (p_i.cy - p_j.cy) / p_j.h,
        (p_i.w / p_j.w).ln(),
        (p_i.h / p_j.h).ln(),
    ]
}

/// 4 x m matrix whose column j is the relative position of box i w.r.t.
/// box j.
fn relative_position_matrix(boxes: &[BoundingBox], i: usize) -> Tensor {
    let m = boxes.len();
    let mut t = Tensor::zeros(vec![4, m]);
    for j in 0..m {
        let p = relative_position(&boxes[i], &boxes[j]);
        for (r, &v) in p.iter().enumerate() {
            t.data_mut()[r * m + j] = v;
        }
    }
    t
}

/// Region encoder parameters: the 4 -> d_r position projection, the global
/// feature projection, and a layer norm.
#[derive(Clone, Debug)]
pub struct RegionEncoderParams {
    pub w_r: Tensor,
    pub w_g: Tensor,
    pub ln_gain: Tensor,
    pub ln_bias: Tensor,
}

impl RegionEncoderParams {
    pub fn validate(&self, d_r: usize, d_g: usize) -> Result<()> {
        if self.w_r.dims() != [d_r, 4] {
            return Err(SailError::shape("RegionEncoderParams", format!("w_r must be {d_r} x 4")));
        }
        if self.w_g.dims() != [d_r, d_g] {
            return Err(SailError::shape("RegionEncoderParams", format!("w_g must be {d_r} x {d_g}")));
        }
        if self.ln_gain.dims() != [d_r] || self.ln_bias.dims() != [d_r] {
            return Err(SailError::shape("RegionEncoderParams", "layer norm params must have length d_r"));
        }
        Ok(())
    }
}

/// Tape-resident region encoder parameters.
#[derive(Clone, Copy, Debug)]
pub struct RegionEncoderNodes {
    pub w_r: NodeId,
    pub w_g: NodeId,
    pub ln_gain: NodeId,
    pub ln_bias: NodeId,
}

impl RegionEncoderNodes {
    pub fn from_params(tape: &mut Tape, p: &RegionEncoderParams) -> Self {
        RegionEncoderNodes {
            w_r: tape.leaf(p.w_r.clone()),
            w_g: tape.leaf(p.w_g.clone()),
            ln_gain: tape.leaf(p.ln_gain.clone()),
            ln_bias: tape.leaf(p.ln_bias.clone()),
        }
    }
}

/// Region self-attention with position-augmented keys: output column i is
/// Softmax(r_iᵀ(R + P̃_i)/sqrt(d_r)) (R + P̃_i)ᵀ where P̃_i = W_r P_i.
pub fn region_self_atten_node(
    tape: &mut Tape,
    regions: NodeId,
    boxes: &[BoundingBox],
    w_r: NodeId,
) -> Result<NodeId> {
    let m = tape.value(regions).cols();
    if boxes.len() != m {
        return Err(SailError::shape("region_self_atten", "box/region count mismatch"));
    }
    let mut pos = Vec::with_capacity(m);
    for i in 0..m {
        let rel = tape.leaf(relative_position_matrix(boxes, i));
        pos.push(tape.matmul(w_r, rel)?); // d_r x m
    }
    tape.region_self_atten(regions, &pos)
}

pub fn region_self_atten(regions: &Tensor, boxes: &[BoundingBox], w_r: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let r = tape.leaf(regions.clone());
    let w = tape.leaf(w_r.clone());
    let out = region_self_atten_node(&mut tape, r, boxes, w)?;
    Ok(tape.value(out).clone())
}

/// Full region encoder: LayerNorm(h̃_i + r_i + W_g f_g) per region.
/// `use_self_attention = false` drops the attention term (the w/o RS
/// ablation), leaving LayerNorm(r_i + W_g f_g).
pub fn encode_regions_node(
    tape: &mut Tape,
    query: &ImageQuery,
    p: &RegionEncoderNodes,
    use_self_attention: bool,
) -> Result<NodeId> {
    if query.region_count() == 0 {
        return Err(SailError::invalid("encode_regions", "query has no regions"));
    }
    for b in &query.boxes {
        if !(b.w > 0.0) || !(b.h > 0.0) {
            return Err(SailError::invalid("encode_regions", "box with nonpositive size"));
        }
    }
    let d_g = query.global.len();
    let regions = tape.leaf(query.regions.clone());
    let global = tape.leaf(Tensor::matrix(d_g, 1, query.global.data().to_vec())?);

    let base = if use_self_attention {
        let atten = region_self_atten_node(tape, regions, &query.boxes, p.w_r)?;
        tape.add(atten, regions)?
    } else {
        regions
    };
    let g_col = tape.matmul(p.w_g, global)?; // d_r x 1
    let d_r = tape.value(g_col).rows();
    let g_vec = tape.reshape(g_col, vec![d_r])?;
    let summed = tape.add_col_vec(base, g_vec)?;
    tape.layer_norm_cols(summed, p.ln_gain, p.ln_bias, LAYER_NORM_EPS)
}

pub fn encode_regions(q: &ImageQuery, p: &RegionEncoderParams, use_self_attention: bool) -> Result<Tensor> {
    p.validate(q.region_dim(), q.global.len())?;
    let mut tape = Tape::new();
    let nodes = RegionEncoderNodes::from_params(&mut tape, p);
    let out = encode_regions_node(&mut tape, q, &nodes, use_self_attention)?;
    Ok(tape.value(out).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngState;

    fn bx(cx: f64, cy: f64, w: f64, h: f64) -> BoundingBox {
        BoundingBox::new(cx, cy, w, h).unwrap()
    }

    fn random_query(rng: &mut RngState, d_r: usize, m: usize, d_g: usize) -> ImageQuery {
        let regions = Tensor::new(vec![d_r, m], (0..d_r * m).map(|_| rng.normal()).collect()).unwrap();
        let boxes = (0..m)
            .map(|_| {
                bx(
                    rng.uniform_in(-2.0, 2.0),
                    rng.uniform_in(-2.0, 2.0),
                    rng.uniform_in(0.2, 3.0),
                    rng.uniform_in(0.2, 3.0),
                )
            })
            .collect();
        let global = Tensor::vector((0..d_g).map(|_| rng.normal()).collect());
        ImageQuery::new(regions, boxes, global).unwrap()
    }

    fn random_params(rng: &mut RngState, d_r: usize, d_g: usize) -> RegionEncoderParams {
        RegionEncoderParams {
            w_r: Tensor::new(vec![d_r, 4], (0..d_r * 4).map(|_| rng.normal() * 0.4).collect()).unwrap(),
            w_g: Tensor::new(vec![d_r, d_g], (0..d_r * d_g).map(|_| rng.normal() * 0.4).collect()).unwrap(),
            ln_gain: Tensor::filled(vec![d_r], 1.0),
            ln_bias: Tensor::zeros(vec![d_r]),
        }
    }

    #[test]
    fn relative_position_identity_case() {
        let b = bx(1.5, -0.7, 2.0, 3.0);
        assert_eq!(relative_position(&b, &b), [0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn relative_position_hand_value() {
        let a = bx(3.0, 2.0, 2.0, 4.0);
        let b = bx(1.0, 2.0, 2.0, 2.0);
        let p = relative_position(&a, &b);
        assert_eq!(p[0], 1.0);
        assert_eq!(p[1], 0.0);
        assert_eq!(p[2], 0.0);
        assert!((p[3] - 2.0f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn relative_position_scale_and_translation_invariance() {
        let a = bx(3.0, 2.0, 2.0, 4.0);
        let b = bx(1.0, 5.0, 3.0, 2.0);
        let base = relative_position(&a, &b);
        for &(s, tx, ty) in &[(2.5, 0.0, 0.0), (0.125, 0.0, 0.0), (1.0, 7.0, -3.0), (3.0, -1.0, 9.0)] {
            let scale = |x: &BoundingBox| bx(s * (x.cx + tx), s * (x.cy + ty), s * x.w, s * x.h);
            let moved = relative_position(&scale(&a), &scale(&b));
            for (u, v) in base.iter().zip(moved.iter()) {
                assert!((u - v).abs() < 1e-12, "{u} vs {v}");
            }
        }
    }

    #[test]
    fn nonpositive_box_rejected() {
        assert!(BoundingBox::new(0.0, 0.0, 0.0, 1.0).is_err());
        assert!(BoundingBox::new(0.0, 0.0, 1.0, -2.0).is_err());
    }

    #[test]
    fn single_region_returns_the_region() {
        // m=1: the self relative position is zero, so P̃ = W_r·0 = 0 and the
        // single-key attention returns r_1 itself.
        let mut rng = RngState::new(17);
        let d_r = 5;
        let regions = Tensor::new(vec![d_r, 1], (0..d_r).map(|_| rng.normal()).collect()).unwrap();
        let w_r = Tensor::new(vec![d_r, 4], (0..d_r * 4).map(|_| rng.normal()).collect()).unwrap();
        let out = region_self_atten(&regions, &[bx(0.3, 0.4, 1.0, 2.0)], &w_r).unwrap();
        assert!(out.max_abs_diff(&regions) < 1e-12);
    }

    #[test]
    fn zero_position_projection_reduces_to_plain_self_attention() {
        let mut rng = RngState::new(23);
        let (d_r, m) = (4, 5);
        let regions =
            Tensor::new(vec![d_r, m], (0..d_r * m).map(|_| rng.normal()).collect()).unwrap();
        let boxes: Vec<BoundingBox> =
            (0..m).map(|i| bx(i as f64, 0.5, 1.0 + i as f64, 2.0)).collect();
        let w_r = Tensor::zeros(vec![d_r, 4]);
        let out = region_self_atten(&regions, &boxes, &w_r).unwrap();
        let plain = crate::attention::dot_atten(&regions, &regions, &regions).unwrap();
        // dot_atten emits row-per-query; region attention emits column-per-query
        assert!(out.max_abs_diff(&plain.transpose()) < 1e-12);
    }

    #[test]
    fn region_attention_is_permutation_equivariant_bitwise() {
        let mut rng = RngState::new(31);
        let (d_r, m) = (6, 4);
        let regions =
            Tensor::new(vec![d_r, m], (0..d_r * m).map(|_| rng.normal()).collect()).unwrap();
        let boxes: Vec<BoundingBox> = (0..m)
            .map(|_| {
                bx(
                    rng.uniform_in(-1.0, 1.0),
                    rng.uniform_in(-1.0, 1.0),
                    rng.uniform_in(0.3, 2.0),
                    rng.uniform_in(0.3, 2.0),
                )
            })
            .collect();
        let w_r = Tensor::new(vec![d_r, 4], (0..d_r * 4).map(|_| rng.normal() * 0.3).collect()).unwrap();
        let base = region_self_atten(&regions, &boxes, &w_r).unwrap();

        let perm = [2usize, 0, 3, 1];
        let mut p_regions = Tensor::zeros(vec![d_r, m]);
        let mut p_boxes = vec![boxes[0]; m];
        for (new, &old) in perm.iter().enumerate() {
            p_boxes[new] = boxes[old];
            for r in 0..d_r {
                p_regions.data_mut()[r * m + new] = regions.at(r, old);
            }
        }
        let shuffled = region_self_atten(&p_regions, &p_boxes, &w_r).unwrap();
        for (new, &old) in perm.iter().enumerate() {
            for r in 0..d_r {
                assert_eq!(
                    shuffled.at(r, new).to_bits(),
                    base.at(r, old).to_bits(),
                    "column {new} (from {old}) row {r} not bit-identical"
                );
            }
        }
    }

    #[test]
    fn encoder_output_columns_are_normalized() {
        let mut rng = RngState::new(41);
        let q = random_query(&mut rng, 8, 5, 6);
        let p = random_params(&mut rng, 8, 6);
        let out = encode_regions(&q, &p, true).unwrap();
        assert_eq!(out.dims(), &[8, 5]);
        assert!(out.is_finite());
        for c in 0..5 {
            let col = out.col(c);
            let mean: f64 = col.iter().sum::<f64>() / 8.0;
            let var: f64 = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 8.0;
            assert!(mean.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-4, "var {var}"); // eps shifts variance slightly
        }
    }

    #[test]
    fn zero_projections_reduce_to_ln_of_attention_plus_residual() {
        let mut rng = RngState::new(43);
        let q = random_query(&mut rng, 6, 4, 5);
        let p = RegionEncoderParams {
            w_r: Tensor::zeros(vec![6, 4]),
            w_g: Tensor::zeros(vec![6, 5]),
            ln_gain: Tensor::filled(vec![6], 1.0),
            ln_bias: Tensor::zeros(vec![6]),
        };
        let out = encode_regions(&q, &p, true).unwrap();
        let attn = crate::attention::dot_atten(&q.regions, &q.regions, &q.regions).unwrap().transpose();
        let sum = attn.add(&q.regions).unwrap();
        let mut expect = Tensor::zeros(vec![6, 4]);
        for c in 0..4 {
            let col = sum.col(c);
            let ln = crate::tensor::layer_norm(&col, &[1.0; 6], &[0.0; 6], LAYER_NORM_EPS).unwrap();
            for r in 0..6 {
                expect.data_mut()[r * 4 + c] = ln[r];
            }
        }
        assert!(out.max_abs_diff(&expect) < 1e-9);
    }

    #[test]
    fn encoder_equivariant_under_region_permutation() {
        let mut rng = RngState::new(47);
        let q = random_query(&mut rng, 7, 6, 4);
        let p = random_params(&mut rng, 7, 4);
        let base = encode_regions(&q, &p, true).unwrap();
        let perm = [5usize, 3, 0, 4, 1, 2];
        let mut regions = Tensor::zeros(vec![7, 6]);
        let mut boxes = vec![q.boxes[0]; 6];
        for (new, &old) in perm.iter().enumerate() {
            boxes[new] = q.boxes[old];
            for r in 0..7 {
                regions.data_mut()[r * 6 + new] = q.regions.at(r, old);
            }
        }
        let q2 = ImageQuery::new(regions, boxes, q.global.clone()).unwrap();
        let shuffled = encode_regions(&q2, &p, true).unwrap();
        for (new, &old) in perm.iter().enumerate() {
            for r in 0..7 {
                assert_eq!(shuffled.at(r, new).to_bits(), base.at(r, old).to_bits());
            }
        }
    }
}
