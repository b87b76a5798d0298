//! Class-tree construction and raw video synthesis. Every quantity is drawn
//! from a stream forked off the corpus seed, so generation order never
//! matters and per-video work could run in parallel.

use std::sync::Arc;

use crate::error::Result;
use crate::eval::Segment;
use crate::rng::RngState;
use crate::tensor::Tensor;

use super::{ActivityClass, GenConfig, RawVideo};

pub struct RawCorpus {
    pub classes: Vec<ActivityClass>,
    pub videos: Vec<RawVideo>,
    /// The fixed feature mixer W_v applied to signatures before planting.
    pub mixer: Tensor,
}

fn unit_normal_vec(rng: &mut RngState, d: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
    normalize(v)
}

fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

/// W_v = mix_identity * I + mix_random * G / sqrt(d), fixed per corpus.
fn build_mixer(cfg: &GenConfig, rng: &mut RngState) -> Tensor {
    let d = cfg.d_f;
    let mut m = Tensor::zeros(vec![d, d]);
    let scale = cfg.mix_random / (d as f64).sqrt();
    for r in 0..d {
        for c in 0..d {
            let mut v = scale * rng.normal();
            if r == c {
                v += cfg.mix_identity;
            }
            m.data_mut()[r * d + c] = v;
        }
    }
    m
}

/// Build the sibling-pair class tree: parent p owns classes 2p and 2p+1.
/// Sibling signatures share the parent direction with weight
/// `sibling_shared`; prototypes are class-stable noisy lifts of the
/// signature into region space.
pub fn build_classes(cfg: &GenConfig, rng: &RngState) -> Vec<ActivityClass> {
    let mut classes = Vec::with_capacity(cfg.classes);
    // fixed lift from frame space to region space (identity when dims match)
    let mut lift_rng = rng.fork(0xA11F);
    let lift: Option<Tensor> = if cfg.d_r == cfg.d_f {
        None
    } else {
        let mut t = Tensor::zeros(vec![cfg.d_r, cfg.d_f]);
        for x in t.data_mut() {
            *x = lift_rng.normal() / (cfg.d_f as f64).sqrt();
        }
        Some(t)
    };
    // one carrier direction per corpus: the class-agnostic component all
    // activity frames share
    let mut carrier_rng = rng.fork(0xCA44);
    let carrier = unit_normal_vec(&mut carrier_rng, cfg.d_f);
    for parent in 0..cfg.parents() {
        let mut prng = rng.fork(0x9a9e_0000 + parent as u64);
        let shared = unit_normal_vec(&mut prng, cfg.d_f);
        for child in 0..2u32 {
            let id = parent * 2 + child;
            let own = unit_normal_vec(&mut prng, cfg.d_f);
            let g = cfg.global_shared;
            let a = cfg.sibling_shared;
            let b = (1.0 - g * g - a * a).max(0.0).sqrt();
            let signature = normalize(
                carrier
                    .iter()
                    .zip(shared.iter().zip(&own))
                    .map(|(c, (s, o))| g * c + a * s + b * o)
                    .collect(),
            );
            let lifted: Vec<f64> = match &lift {
                None => signature.clone(),
                Some(l) => {
                    let mut out = vec![0.0; cfg.d_r];
                    for (r, o) in out.iter_mut().enumerate() {
                        for c in 0..cfg.d_f {
                            *o += l.at(r, c) * signature[c];
                        }
                    }
                    normalize(out)
                }
            };
            let prototypes = (0..cfg.prototypes_per_class)
                .map(|_| {
                    normalize(
                        lifted
                            .iter()
                            .map(|&x| x + 0.4 * prng.normal())
                            .collect(),
                    )
                })
                .collect();
            classes.push(ActivityClass { id, parent, signature, prototypes });
        }
    }
    classes
}

fn plant_span(frames: &mut Tensor, planted: &Tensor, amp: f64, seg: Segment) {
    let n = frames.cols();
    for t in seg.s..=seg.e.min(n) {
        for r in 0..frames.rows() {
            frames.set(r, t - 1, amp * planted.data()[r]);
        }
    }
}

fn draw_segment_scaled(cfg: &GenConfig, rng: &mut RngState, n: usize, scale: f64) -> Segment {
    let ratio = scale * rng.uniform_in(cfg.target_ratio_min, cfg.target_ratio_max);
    let len = ((ratio * n as f64).round() as usize).clamp(1, n);
    let s = rng.uniform_usize(1, n - len + 1);
    Segment::new(s, s + len - 1)
}

fn draw_segment(cfg: &GenConfig, rng: &mut RngState, n: usize) -> Segment {
    draw_segment_scaled(cfg, rng, n, 1.0)
}

fn overlaps(a: Segment, b: Segment) -> bool {
    a.s.max(b.s) <= a.e.min(b.e)
}

/// One raw video of class `class_id`: signal spans of W_v u_c over isotropic
/// noise, plus distractor spans from unrelated classes.
fn generate_video(
    cfg: &GenConfig,
    classes: &[ActivityClass],
    mixer: &Tensor,
    class_id: u32,
    mut rng: RngState,
) -> Result<RawVideo> {
    let n = rng.uniform_usize(cfg.n_min, cfg.n_max);
    let d = cfg.d_f;
    let class = &classes[class_id as usize];

    let mixed = |sig: &[f64]| -> Result<Tensor> {
        mixer.matmul(&Tensor::matrix(d, 1, sig.to_vec())?)
    };
    let target_signal = mixed(&class.signature)?;

    // segments (one, sometimes two of the same label)
    let first = draw_segment(cfg, &mut rng, n);
    let mut segments = vec![(class_id, first)];
    if rng.uniform() < cfg.multi_segment_prob {
        let second = if rng.uniform() < cfg.overlap_bias {
            // force overlap: start inside the first segment
            let s = rng.uniform_usize(first.s, first.e);
            let len = ((rng.uniform_in(cfg.target_ratio_min, cfg.target_ratio_max) * n as f64).round()
                as usize)
                .clamp(1, n - s + 1);
            Segment::new(s, s + len - 1)
        } else {
            draw_segment(cfg, &mut rng, n)
        };
        segments.push((class_id, second));
    }

    // background: pure noise
    let mut frames = Tensor::zeros(vec![d, n]);
    // distractor spans from classes under a different parent
    let n_distract = if cfg.distractor_max == 0 {
        0
    } else {
        rng.uniform_usize(cfg.distractor_min.min(cfg.distractor_max), cfg.distractor_max)
    };
    let mut planted_distractors: Vec<Segment> = Vec::new();
    for _ in 0..n_distract {
        let other = loop {
            let cand = rng.uniform_usize(0, classes.len() - 1) as u32;
            if classes[cand as usize].parent != class.parent {
                break cand;
            }
        };
        // distractors must stay clear of every signal span; retry placement
        // (smaller spans are drawn on later attempts so a slot is usually
        // found even in crowded videos)
        let mut placed = None;
        for attempt in 0..24 {
            let mut span = draw_segment_scaled(cfg, &mut rng, n, cfg.distractor_len_scale);
            if attempt >= 8 {
                let len = (span.len() / 2).max(cfg.min_len.min(4));
                span = Segment::new(span.s, (span.s + len - 1).min(n));
            }
            let clear = !segments.iter().any(|&(_, s)| overlaps(s, span))
                && !planted_distractors.iter().any(|&s| overlaps(s, span));
            if clear {
                placed = Some(span);
                break;
            }
        }
        if let Some(span) = placed {
            let signal = mixed(&classes[other as usize].signature)?;
            plant_span(&mut frames, &signal, cfg.distractor_amp, span);
            planted_distractors.push(span);
        }
    }
    // signal spans (same class, so overwriting overlaps is harmless)
    for &(_, seg) in &segments {
        plant_span(&mut frames, &target_signal, 1.0, seg);
    }
    // additive isotropic noise everywhere
    for x in frames.data_mut() {
        *x += cfg.frame_noise * rng.normal();
    }
    Ok(RawVideo { frames: Arc::new(frames), segments })
}

/// The full raw corpus: classes plus `videos_per_class` raw videos per
/// class, each from its own forked stream.
pub fn generate_raw_corpus(cfg: &GenConfig, rng: &RngState) -> Result<RawCorpus> {
    cfg.validate()?;
    let classes = build_classes(cfg, rng);
    let mut mixer_rng = rng.fork(0x3117);
    let mixer = build_mixer(cfg, &mut mixer_rng);
    let mut videos = Vec::with_capacity(cfg.classes * cfg.videos_per_class);
    for class_id in 0..cfg.classes as u32 {
        for v in 0..cfg.videos_per_class {
            let stream = 0x0bea_0000_0000 + (class_id as u64) * 0x1_0000 + v as u64;
            videos.push(generate_video(cfg, &classes, &mixer, class_id, rng.fork(stream))?);
        }
    }
    Ok(RawCorpus { classes, videos, mixer })
}
