//! Class-disjoint splitting. Parents are assigned wholly to one split, so
//! both siblings land together and difficult queries never cross splits.

use crate::error::{Result, SailError};
use crate::rng::RngState;

use super::{ActivityClass, CorpusManifest, SplitName, SplitSummary, VideoSample};

/// Assign every parent class to train/valid/test at the given ratios
/// (which must divide the parent count exactly), tag the samples in place,
/// and emit the manifest.
pub fn split_by_class(
    samples: &mut [VideoSample],
    classes: &[ActivityClass],
    ratios: (u32, u32, u32),
    rng: &RngState,
    skipped_classes: usize,
) -> Result<CorpusManifest> {
    let parent_count = classes.iter().map(|c| c.parent).max().map(|p| p + 1).unwrap_or(0);
    if parent_count == 0 {
        return Err(SailError::invalid("split_by_class", "no classes"));
    }
    let (a, b, c) = ratios;
    let total = a + b + c;
    if total == 0 {
        return Err(SailError::invalid("split_by_class", "ratios must not all be zero"));
    }
    for r in [a, b, c] {
        if (parent_count * r) % total != 0 {
            return Err(SailError::invalid(
                "split_by_class",
                format!("{parent_count} parents cannot split exactly at {a}:{b}:{c}"),
            ));
        }
    }
    let n_train = (parent_count * a / total) as usize;
    let n_valid = (parent_count * b / total) as usize;

    let mut parents: Vec<u32> = (0..parent_count).collect();
    let mut srng = rng.fork(0x5_1755);
    srng.shuffle(&mut parents);

    let mut parent_split = vec![SplitName::Test; parent_count as usize];
    for (idx, &p) in parents.iter().enumerate() {
        parent_split[p as usize] = if idx < n_train {
            SplitName::Train
        } else if idx < n_train + n_valid {
            SplitName::Valid
        } else {
            SplitName::Test
        };
    }

    for s in samples.iter_mut() {
        let parent = classes[s.class_id as usize].parent;
        s.split = parent_split[parent as usize];
    }

    let mut summaries = Vec::with_capacity(3);
    for name in SplitName::ALL {
        let in_split: Vec<&VideoSample> = samples.iter().filter(|s| s.split == name).collect();
        let mut class_ids: Vec<u32> = classes
            .iter()
            .filter(|cl| parent_split[cl.parent as usize] == name)
            .map(|cl| cl.id)
            .collect();
        class_ids.sort_unstable();
        let count = in_split.len();
        let (mean_video_len, mean_target_len) = if count == 0 {
            (0.0, 0.0)
        } else {
            (
                in_split.iter().map(|s| s.frame_count() as f64).sum::<f64>() / count as f64,
                in_split.iter().map(|s| s.target.len() as f64).sum::<f64>() / count as f64,
            )
        };
        summaries.push(SplitSummary {
            split: name,
            samples: count,
            classes: class_ids,
            mean_video_len,
            mean_target_len,
        });
    }
    Ok(CorpusManifest { splits: summaries, skipped_classes })
}
