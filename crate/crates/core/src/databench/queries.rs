//! Query synthesis: every curated video receives simple queries built from
//! its own class's prototypes and difficult queries built from the sibling
//! class's prototypes. Region features are noisy prototype draws, boxes are
//! random valid boxes, and the global feature is the prototype mean plus
//! noise.

use crate::error::{Result, SailError};
use crate::region::{BoundingBox, ImageQuery};
use crate::rng::RngState;
use crate::tensor::Tensor;

use super::{ActivityClass, CuratedVideo, Difficulty, GenConfig, SplitName, VideoSample};

fn synth_query(
    cfg: &GenConfig,
    class: &ActivityClass,
    rng: &mut RngState,
) -> Result<ImageQuery> {
    let m = rng.uniform_usize(cfg.regions_min, cfg.regions_max);
    let d_r = cfg.d_r;
    let mut regions = Tensor::zeros(vec![d_r, m]);
    let mut chosen = Vec::with_capacity(m);
    for j in 0..m {
        let pick = rng.uniform_usize(0, class.prototypes.len() - 1);
        chosen.push(pick);
        let proto = &class.prototypes[pick];
        for r in 0..d_r {
            regions.data_mut()[r * m + j] = proto[r] + cfg.region_noise * rng.normal();
        }
    }
    let boxes: Vec<BoundingBox> = (0..m)
        .map(|_| {
            BoundingBox::new(
                rng.uniform_in(0.15, 0.85),
                rng.uniform_in(0.15, 0.85),
                rng.uniform_in(0.05, 0.35),
                rng.uniform_in(0.05, 0.35),
            )
        })
        .collect::<Result<_>>()?;
    // global = mean of the chosen prototypes + noise, in global-feature space
    let mut global = vec![0.0; cfg.d_global];
    for &pick in &chosen {
        let proto = &class.prototypes[pick];
        for (g, r) in global.iter_mut().zip(proto.iter().cycle()) {
            *g += r / m as f64;
        }
    }
    for g in global.iter_mut() {
        *g += cfg.global_noise * rng.normal();
    }
    Ok(ImageQuery::new(regions, boxes, Tensor::vector(global))?)
}

/// Attach `simple_queries + difficult_queries` samples to every curated
/// video. Classes holding fewer than two videos are skipped (their sample
/// count is returned as the second tuple member). Preconditions follow the
/// curation output: one target per video.
pub fn make_queries(
    videos: &[CuratedVideo],
    classes: &[ActivityClass],
    cfg: &GenConfig,
    rng: &RngState,
) -> Result<(Vec<VideoSample>, usize)> {
    if videos.is_empty() {
        return Err(SailError::invalid("make_queries", "no curated videos"));
    }
    let mut per_class = vec![0usize; classes.len()];
    for v in videos {
        per_class[v.class_id as usize] += 1;
    }
    let mut samples = Vec::with_capacity(videos.len() * (cfg.simple_queries + cfg.difficult_queries));
    let mut skipped = 0usize;
    for (vid_idx, video) in videos.iter().enumerate() {
        if per_class[video.class_id as usize] < 2 {
            skipped += 1;
            continue;
        }
        let class = &classes[video.class_id as usize];
        let sibling = &classes[class.sibling_id() as usize];
        let mut vrng = rng.fork(0x9e17_0000_0000 + vid_idx as u64);
        for k in 0..cfg.simple_queries + cfg.difficult_queries {
            let (difficulty, query_class) = if k < cfg.simple_queries {
                (Difficulty::Simple, class)
            } else {
                (Difficulty::Difficult, sibling)
            };
            let query = synth_query(cfg, query_class, &mut vrng)?;
            samples.push(VideoSample {
                id: format!("v{vid_idx:05}_q{k}"),
                split: SplitName::Train, // reassigned by split_by_class
                class_id: video.class_id,
                difficulty,
                frames: video.frames.clone(),
                query,
                target: video.target,
            });
        }
    }
    Ok((samples, skipped))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::databench::generate::generate_raw_corpus;
    use crate::databench::{curate, GenConfig};

    fn small_cfg() -> GenConfig {
        GenConfig { classes: 8, videos_per_class: 4, n_min: 24, n_max: 48, split_ratios: (2, 1, 1), ..GenConfig::default() }
    }

    fn pipeline(cfg: &GenConfig, seed: u64) -> (Vec<CuratedVideo>, Vec<ActivityClass>) {
        let raw = generate_raw_corpus(cfg, &RngState::new(seed)).unwrap();
        let curated = curate::curate(&raw.videos, cfg.min_len, cfg.max_len);
        (curated, raw.classes)
    }

    #[test]
    fn five_samples_per_video_when_no_skips() {
        let cfg = small_cfg();
        let (videos, classes) = pipeline(&cfg, 5);
        let (samples, skipped) = make_queries(&videos, &classes, &cfg, &RngState::new(5)).unwrap();
        assert_eq!(skipped, 0);
        assert_eq!(samples.len(), videos.len() * 5);
        for chunk in samples.chunks(5) {
            assert_eq!(chunk.iter().filter(|s| s.difficulty == Difficulty::Simple).count(), 3);
            assert_eq!(chunk.iter().filter(|s| s.difficulty == Difficulty::Difficult).count(), 2);
        }
    }

    #[test]
    fn difficult_queries_use_the_sibling_class() {
        let cfg = small_cfg();
        let (videos, classes) = pipeline(&cfg, 9);
        let (samples, _) = make_queries(&videos, &classes, &cfg, &RngState::new(9)).unwrap();
        let cosine = |a: &[f64], b: &[f64]| {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            dot / (na * nb)
        };
        let mean_proto_cos = |s: &VideoSample, class: &ActivityClass| {
            let m = s.query.region_count();
            let mut best_sum = 0.0;
            for j in 0..m {
                let col = s.query.regions.col(j);
                let best = class
                    .prototypes
                    .iter()
                    .map(|p| cosine(&col, p))
                    .fold(f64::NEG_INFINITY, f64::max);
                best_sum += best;
            }
            best_sum / m as f64
        };
        for s in samples.iter().filter(|s| s.difficulty == Difficulty::Difficult) {
            let own = &classes[s.class_id as usize];
            let sibling = &classes[own.sibling_id() as usize];
            // regions were drawn from sibling prototypes, never the video's
            // own class
            assert!(
                mean_proto_cos(s, sibling) > mean_proto_cos(s, own),
                "difficult query {} not closest to the sibling class",
                s.id
            );
        }
    }

    #[test]
    fn single_video_classes_are_skipped_with_count() {
        let cfg = small_cfg();
        let (mut videos, classes) = pipeline(&cfg, 7);
        // strip class 0 down to one video
        let mut kept_one = false;
        videos.retain(|v| {
            if v.class_id == 0 {
                if kept_one {
                    return false;
                }
                kept_one = true;
            }
            true
        });
        let (samples, skipped) = make_queries(&videos, &classes, &cfg, &RngState::new(7)).unwrap();
        assert_eq!(skipped, 1);
        assert!(samples.iter().all(|s| s.class_id != 0));
    }

    #[test]
    fn simple_queries_correlate_more_with_target_frames() {
        // mean cosine between query regions and target-span frames is
        // higher for simple than difficult queries
        let cfg = GenConfig { classes: 8, videos_per_class: 6, split_ratios: (2, 1, 1), ..GenConfig::default() };
        let (videos, classes) = pipeline(&cfg, 31);
        let (samples, _) = make_queries(&videos, &classes, &cfg, &RngState::new(31)).unwrap();
        let cosine = |a: &[f64], b: &[f64]| {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            dot / (na * nb)
        };
        let mut sums = [0.0f64; 2];
        let mut counts = [0usize; 2];
        for s in &samples {
            let n = s.frames.cols();
            let mut frame_mean = vec![0.0; cfg.d_f];
            let span = s.target;
            for t in span.s..=span.e.min(n) {
                for (r, fm) in frame_mean.iter_mut().enumerate() {
                    *fm += s.frames.at(r, t - 1) / span.len() as f64;
                }
            }
            let m = s.query.region_count();
            let mut qsum = 0.0;
            for j in 0..m {
                let col = s.query.regions.col(j);
                qsum += cosine(&col, &frame_mean);
            }
            let idx = if s.difficulty == Difficulty::Simple { 0 } else { 1 };
            sums[idx] += qsum / m as f64;
            counts[idx] += 1;
        }
        let simple_mean = sums[0] / counts[0] as f64;
        let difficult_mean = sums[1] / counts[1] as f64;
        assert!(
            simple_mean > difficult_mean,
            "cosine gap not positive: simple {simple_mean} vs difficult {difficult_mean}"
        );
    }

    #[test]
    fn queries_are_deterministic_per_seed() {
        let cfg = small_cfg();
        let (videos, classes) = pipeline(&cfg, 3);
        let (a, _) = make_queries(&videos, &classes, &cfg, &RngState::new(3)).unwrap();
        let (b, _) = make_queries(&videos, &classes, &cfg, &RngState::new(3)).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.id, y.id);
            assert_eq!(x.query.regions.data(), y.query.regions.data());
            assert_eq!(x.query.global.data(), y.query.global.data());
        }
    }

    #[test]
    fn make_queries_rejects_empty_input() {
        let cfg = small_cfg();
        let classes = crate::databench::generate::build_classes(&cfg, &RngState::new(1));
        assert!(make_queries(&[], &classes, &cfg, &RngState::new(1)).is_err());
    }
}
