//! The assembled localizer model: configuration, seeded parameter
//! initialization, and the end-to-end forward pass from (video, image
//! query) to boundary distributions and decoded segments.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SailError};
use crate::eval::Segment;
use crate::localizer::{
    self, boundary_distributions_node, BoundaryPrediction, ContextNodes, DecodeMode, HeadNodes,
    LocalizerNodes,
};
use crate::region::{encode_regions_node, ImageQuery, RegionEncoderNodes};
use crate::rng::RngState;
use crate::store::ParamStore;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;
use crate::video::{encode_video_node, EncoderLayerNodes, VideoEncoderConfig};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SailConfig {
    /// Frame feature dimension.
    pub d_f: usize,
    /// Region feature dimension.
    pub d_r: usize,
    /// Global image feature dimension.
    pub d_global: usize,
    /// Attention projection dimension (split across heads).
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    /// Local attention window radius.
    pub window: usize,
    pub d_ff: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Sequences longer than this are uniformly downsampled.
    pub n_max: usize,
    pub no_region_self_attention: bool,
    pub no_multilevel_cross: bool,
    pub no_local_attention: bool,
    pub no_bidirectional: bool,
    pub decode: DecodeMode,
}

impl Default for SailConfig {
    fn default() -> Self {
        SailConfig {
            d_f: 32,
            d_r: 32,
            d_global: 32,
            d_model: 32,
            heads: 4,
            layers: 2,
            window: 8,
            d_ff: 128,
            lr: 5e-4,
            batch_size: 16,
            epochs: 6,
            seed: 7,
            n_max: 200,
            no_region_self_attention: false,
            no_multilevel_cross: false,
            no_local_attention: false,
            no_bidirectional: false,
            decode: DecodeMode::Independent,
        }
    }
}

impl SailConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("d_f", self.d_f),
            ("d_r", self.d_r),
            ("d_global", self.d_global),
            ("d_model", self.d_model),
            ("heads", self.heads),
            ("layers", self.layers),
            ("d_ff", self.d_ff),
            ("batch_size", self.batch_size),
            ("n_max", self.n_max),
        ] {
            if v == 0 {
                return Err(SailError::Config(format!("{name} must be positive")));
            }
        }
        if self.d_model % self.heads != 0 {
            return Err(SailError::Config(format!(
                "d_model {} must be divisible by heads {}",
                self.d_model, self.heads
            )));
        }
        if self.d_f % 2 != 0 {
            return Err(SailError::Config("d_f must be even (temporal encoding pairs)".into()));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(SailError::Config("lr must be finite and nonnegative".into()));
        }
        Ok(())
    }

    fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }
}

/// Uniform(-sqrt(6/(fan_in+fan_out)), +...) initialization.
fn glorot(rng: &mut RngState, rows: usize, cols: usize) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Tensor::new(vec![rows, cols], (0..rows * cols).map(|_| rng.uniform_in(-bound, bound)).collect())
        .expect("glorot dims")
}

fn glorot_vec(rng: &mut RngState, len: usize) -> Tensor {
    let bound = (6.0 / (len + 1) as f64).sqrt();
    Tensor::new(vec![len], (0..len).map(|_| rng.uniform_in(-bound, bound)).collect()).expect("dims")
}

pub struct SailModel {
    pub cfg: SailConfig,
    pub store: ParamStore,
}

/// Decoded prediction plus the index-space bookkeeping for downsampled
/// inputs.
#[derive(Clone, Debug)]
pub struct Prediction {
    pub boundary: BoundaryPrediction,
    /// Segment in the model's (possibly downsampled) index space.
    pub model_segment: Segment,
    /// Segment mapped back to the original frame indices.
    pub segment: Segment,
    pub n_model: usize,
    pub n_original: usize,
}

/// 1-based original indices kept when striding n frames down to n_max.
pub fn downsample_indices(n: usize, n_max: usize) -> Vec<usize> {
    debug_assert!(n > n_max);
    (1..=n_max)
        .map(|k| (((k as f64) * n as f64 / n_max as f64).round() as usize).clamp(1, n))
        .collect()
}

/// Remap a boundary index into downsampled space: round(x * n_max / n),
/// clipped to [1, n_max]. Monotone, so s <= e is preserved.
pub fn remap_boundary(x: usize, n: usize, n_max: usize) -> usize {
    ((x as f64 * n_max as f64 / n as f64).round() as usize).clamp(1, n_max)
}

/// Inverse map from model space back to original indices.
pub fn unmap_boundary(x: usize, n: usize, n_max: usize) -> usize {
    ((x as f64 * n as f64 / n_max as f64).round() as usize).clamp(1, n)
}

struct LayerNames {
    local_q: Vec<String>,
    local_k: Vec<String>,
    local_v: Vec<String>,
    local_o: String,
    cross_q: Vec<String>,
    cross_k: Vec<String>,
    cross_v: Vec<String>,
    cross_o: String,
    fusion_w: String,
    fusion_b: String,
    ffn_w1: String,
    ffn_b1: String,
    ffn_w2: String,
    ffn_b2: String,
    ln: [String; 6],
}

fn layer_names(l: usize, heads: usize) -> LayerNames {
    let head_names = |kind: &str, proj: &str| -> Vec<String> {
        (0..heads).map(|h| format!("enc{l}.{kind}.h{h}.{proj}")).collect()
    };
    LayerNames {
        local_q: head_names("local", "wq"),
        local_k: head_names("local", "wk"),
        local_v: head_names("local", "wv"),
        local_o: format!("enc{l}.local.wo"),
        cross_q: head_names("cross", "wq"),
        cross_k: head_names("cross", "wk"),
        cross_v: head_names("cross", "wv"),
        cross_o: format!("enc{l}.cross.wo"),
        fusion_w: format!("enc{l}.fusion.w"),
        fusion_b: format!("enc{l}.fusion.b"),
        ffn_w1: format!("enc{l}.ffn.w1"),
        ffn_b1: format!("enc{l}.ffn.b1"),
        ffn_w2: format!("enc{l}.ffn.w2"),
        ffn_b2: format!("enc{l}.ffn.b2"),
        ln: [
            format!("enc{l}.ln1.gain"),
            format!("enc{l}.ln1.bias"),
            format!("enc{l}.ln2.gain"),
            format!("enc{l}.ln2.bias"),
            format!("enc{l}.ln3.gain"),
            format!("enc{l}.ln3.bias"),
        ],
    }
}

impl SailModel {
    /// Fresh model with parameters drawn from the config seed alone:
    /// weights Glorot-uniform, biases and layer-norm biases zero, gains one.
    pub fn new(cfg: SailConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = RngState::new(cfg.seed);
        let mut store = ParamStore::new();
        let d1 = cfg.head_dim();

        store.register("region.w_r", glorot(&mut rng, cfg.d_r, 4))?;
        store.register("region.w_g", glorot(&mut rng, cfg.d_r, cfg.d_global))?;
        store.register("region.ln.gain", Tensor::filled(vec![cfg.d_r], 1.0))?;
        store.register("region.ln.bias", Tensor::zeros(vec![cfg.d_r]))?;

        for l in 0..cfg.layers {
            let names = layer_names(l, cfg.heads);
            for h in 0..cfg.heads {
                store.register(&names.local_q[h], glorot(&mut rng, d1, cfg.d_f))?;
                store.register(&names.local_k[h], glorot(&mut rng, d1, cfg.d_f))?;
                store.register(&names.local_v[h], glorot(&mut rng, d1, cfg.d_f))?;
            }
            store.register(&names.local_o, glorot(&mut rng, cfg.d_f, cfg.heads * d1))?;
            for h in 0..cfg.heads {
                store.register(&names.cross_q[h], glorot(&mut rng, d1, cfg.d_f))?;
                store.register(&names.cross_k[h], glorot(&mut rng, d1, cfg.d_r))?;
                store.register(&names.cross_v[h], glorot(&mut rng, d1, cfg.d_r))?;
            }
            store.register(&names.cross_o, glorot(&mut rng, cfg.d_f, cfg.heads * d1))?;
            store.register(&names.fusion_w, glorot(&mut rng, cfg.d_f, 4 * cfg.d_f))?;
            store.register(&names.fusion_b, Tensor::zeros(vec![cfg.d_f]))?;
            store.register(&names.ffn_w1, glorot(&mut rng, cfg.d_ff, cfg.d_f))?;
            store.register(&names.ffn_b1, Tensor::zeros(vec![cfg.d_ff]))?;
            store.register(&names.ffn_w2, glorot(&mut rng, cfg.d_f, cfg.d_ff))?;
            store.register(&names.ffn_b2, Tensor::zeros(vec![cfg.d_f]))?;
            for (i, name) in names.ln.iter().enumerate() {
                let t = if i % 2 == 0 {
                    Tensor::filled(vec![cfg.d_f], 1.0)
                } else {
                    Tensor::zeros(vec![cfg.d_f])
                };
                store.register(name, t)?;
            }
        }

        for dir in ["fw", "bw"] {
            store.register(format!("loc.{dir}.w1"), glorot(&mut rng, cfg.d_model, cfg.d_f))?;
            store.register(format!("loc.{dir}.w2"), glorot(&mut rng, cfg.d_model, cfg.d_f))?;
            store.register(format!("loc.{dir}.wa"), glorot_vec(&mut rng, cfg.d_model))?;
        }
        for head in ["start", "end"] {
            store.register(format!("loc.{head}.w"), glorot(&mut rng, cfg.d_model, cfg.d_f))?;
            store.register(format!("loc.{head}.b"), Tensor::zeros(vec![cfg.d_model]))?;
            store.register(format!("loc.{head}.v"), glorot(&mut rng, 1, cfg.d_model))?;
        }
        Ok(SailModel { cfg, store })
    }

    pub fn from_parts(cfg: SailConfig, store: ParamStore) -> Result<Self> {
        cfg.validate()?;
        // structural check: a fresh model must have the same parameter map
        let fresh = SailModel::new(cfg.clone())?;
        if fresh.store.len() != store.len() {
            return Err(SailError::Config(format!(
                "parameter store has {} tensors, config requires {}",
                store.len(),
                fresh.store.len()
            )));
        }
        for slot in 0..store.len() {
            if fresh.store.name(slot) != store.name(slot)
                || fresh.store.param(slot).dims() != store.param(slot).dims()
            {
                return Err(SailError::Config(format!(
                    "parameter {} does not match config layout",
                    store.name(slot)
                )));
            }
        }
        Ok(SailModel { cfg, store })
    }

    fn region_nodes(&self, tape: &mut Tape) -> Result<RegionEncoderNodes> {
        Ok(RegionEncoderNodes {
            w_r: tape.param(&self.store, "region.w_r")?,
            w_g: tape.param(&self.store, "region.w_g")?,
            ln_gain: tape.param(&self.store, "region.ln.gain")?,
            ln_bias: tape.param(&self.store, "region.ln.bias")?,
        })
    }

    fn layer_nodes(&self, tape: &mut Tape, l: usize) -> Result<EncoderLayerNodes> {
        let names = layer_names(l, self.cfg.heads);
        let fetch = |tape: &mut Tape, names: &[String]| -> Result<Vec<NodeId>> {
            names.iter().map(|n| tape.param(&self.store, n)).collect()
        };
        Ok(EncoderLayerNodes {
            local: crate::attention::MultiHeadNodes {
                w_q: fetch(tape, &names.local_q)?,
                w_k: fetch(tape, &names.local_k)?,
                w_v: fetch(tape, &names.local_v)?,
                w_o: tape.param(&self.store, &names.local_o)?,
            },
            cross: crate::attention::MultiHeadNodes {
                w_q: fetch(tape, &names.cross_q)?,
                w_k: fetch(tape, &names.cross_k)?,
                w_v: fetch(tape, &names.cross_v)?,
                w_o: tape.param(&self.store, &names.cross_o)?,
            },
            w_f: tape.param(&self.store, &names.fusion_w)?,
            b_f: tape.param(&self.store, &names.fusion_b)?,
            ffn_w1: tape.param(&self.store, &names.ffn_w1)?,
            ffn_b1: tape.param(&self.store, &names.ffn_b1)?,
            ffn_w2: tape.param(&self.store, &names.ffn_w2)?,
            ffn_b2: tape.param(&self.store, &names.ffn_b2)?,
            ln1_gain: tape.param(&self.store, &names.ln[0])?,
            ln1_bias: tape.param(&self.store, &names.ln[1])?,
            ln2_gain: tape.param(&self.store, &names.ln[2])?,
            ln2_bias: tape.param(&self.store, &names.ln[3])?,
            ln3_gain: tape.param(&self.store, &names.ln[4])?,
            ln3_bias: tape.param(&self.store, &names.ln[5])?,
        })
    }

    fn localizer_nodes(&self, tape: &mut Tape) -> Result<LocalizerNodes> {
        let ctx = |tape: &mut Tape, dir: &str| -> Result<ContextNodes> {
            Ok(ContextNodes {
                w1: tape.param(&self.store, &format!("loc.{dir}.w1"))?,
                w2: tape.param(&self.store, &format!("loc.{dir}.w2"))?,
                w_a: tape.param(&self.store, &format!("loc.{dir}.wa"))?,
            })
        };
        let head = |tape: &mut Tape, name: &str| -> Result<HeadNodes> {
            Ok(HeadNodes {
                w: tape.param(&self.store, &format!("loc.{name}.w"))?,
                b: tape.param(&self.store, &format!("loc.{name}.b"))?,
                v: tape.param(&self.store, &format!("loc.{name}.v"))?,
            })
        };
        Ok(LocalizerNodes {
            fw: ctx(tape, "fw")?,
            bw: ctx(tape, "bw")?,
            start: head(tape, "start")?,
            end: head(tape, "end")?,
        })
    }

    fn check_sample_dims(&self, frames: &Tensor, query: &ImageQuery) -> Result<()> {
        if frames.rank() != 2 || frames.rows() != self.cfg.d_f {
            return Err(SailError::shape(
                "forward(video-encoder)",
                format!("frames are {:?}, config d_f = {}", frames.dims(), self.cfg.d_f),
            ));
        }
        if query.region_dim() != self.cfg.d_r {
            return Err(SailError::shape(
                "forward(region-encoder)",
                format!("regions are {:?}, config d_r = {}", query.regions.dims(), self.cfg.d_r),
            ));
        }
        if query.global.len() != self.cfg.d_global {
            return Err(SailError::shape(
                "forward(region-encoder)",
                format!("global feature len {}, config d_global = {}", query.global.len(), self.cfg.d_global),
            ));
        }
        Ok(())
    }

    /// Frames after optional downsampling, plus the original length.
    fn model_frames(&self, frames: &Tensor) -> (Tensor, usize) {
        let n = frames.cols();
        if n <= self.cfg.n_max {
            return (frames.clone(), n);
        }
        let idx = downsample_indices(n, self.cfg.n_max);
        let mut out = Tensor::zeros(vec![frames.rows(), idx.len()]);
        for (k, &orig) in idx.iter().enumerate() {
            for r in 0..frames.rows() {
                out.data_mut()[r * idx.len() + k] = frames.at(r, orig - 1);
            }
        }
        (out, n)
    }

    /// Record the whole forward pass; returns the distribution nodes over
    /// the model-space sequence.
    pub fn build_forward(
        &self,
        tape: &mut Tape,
        frames: &Tensor,
        query: &ImageQuery,
    ) -> Result<(NodeId, NodeId)> {
        self.check_sample_dims(frames, query)?;
        let rnodes = self.region_nodes(tape)?;
        let h_r = encode_regions_node(tape, query, &rnodes, !self.cfg.no_region_self_attention)?;

        let mut layers = Vec::with_capacity(self.cfg.layers);
        for l in 0..self.cfg.layers {
            layers.push(self.layer_nodes(tape, l)?);
        }
        let vcfg = VideoEncoderConfig {
            layers: self.cfg.layers,
            window: self.cfg.window,
            cross_in_all_layers: !self.cfg.no_multilevel_cross,
            use_local: !self.cfg.no_local_attention,
        };
        let f = tape.leaf(frames.clone());
        let h_v = encode_video_node(tape, f, h_r, &layers, &vcfg)?;

        let lnodes = self.localizer_nodes(tape)?;
        let (h_fw, h_bw) = if self.cfg.no_bidirectional {
            (h_v, h_v)
        } else {
            (
                localizer::forward_context_node(tape, h_v, &lnodes.fw)?,
                localizer::backward_context_node(tape, h_v, &lnodes.bw)?,
            )
        };
        boundary_distributions_node(tape, h_fw, h_bw, &lnodes)
    }

    /// Forward to a decoded prediction, mapping indices back to the
    /// original space when the input was downsampled.
    pub fn predict(&self, frames: &Tensor, query: &ImageQuery) -> Result<Prediction> {
        let (model_frames, n_original) = self.model_frames(frames);
        let n_model = model_frames.cols();
        let mut tape = Tape::new();
        let (ps, pe) = self.build_forward(&mut tape, &model_frames, query)?;
        let p_s = tape.value(ps).data().to_vec();
        let p_e = tape.value(pe).data().to_vec();
        if !p_s.iter().chain(&p_e).all(|x| x.is_finite()) {
            return Err(SailError::non_finite("forward distributions"));
        }
        let (s_hat, e_hat) = localizer::predict_boundaries(&p_s, &p_e, self.cfg.decode);
        let model_segment = Segment::new(s_hat, e_hat);
        let segment = if n_model == n_original {
            model_segment
        } else {
            Segment::new(
                unmap_boundary(s_hat, n_original, n_model),
                unmap_boundary(e_hat, n_original, n_model),
            )
        };
        Ok(Prediction {
            boundary: BoundaryPrediction { p_s, p_e, s_hat, e_hat },
            model_segment,
            segment,
            n_model,
            n_original,
        })
    }

    /// Per-sample loss node: -(log p_s[s'] + log p_e[e']) with the target
    /// remapped when frames were downsampled.
    pub fn build_loss(
        &self,
        tape: &mut Tape,
        frames: &Tensor,
        query: &ImageQuery,
        target: Segment,
    ) -> Result<NodeId> {
        let n = frames.cols();
        if target.s == 0 || target.s > target.e || target.e > n {
            return Err(SailError::invalid(
                "build_loss",
                format!("target ({},{}) outside 1..={n}", target.s, target.e),
            ));
        }
        let (model_frames, n_original) = self.model_frames(frames);
        let n_model = model_frames.cols();
        let (s, e) = if n_model == n_original {
            (target.s, target.e)
        } else {
            (
                remap_boundary(target.s, n_original, n_model),
                remap_boundary(target.e, n_original, n_model),
            )
        };
        let (ps, pe) = self.build_forward(tape, &model_frames, query)?;
        localizer::sample_nll_node(tape, ps, pe, s, e)
    }
}
