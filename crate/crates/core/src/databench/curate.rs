//! Curation: merge overlapping or touching same-label segments to a fixed
//! point, split multi-segment videos into one video per segment, and drop
//! videos whose target falls outside the length window.

use std::collections::BTreeMap;

use crate::eval::Segment;

use super::{CuratedVideo, RawVideo};

/// Merge overlapping/touching segments of one label to a fixed point.
/// Sorting first makes the result independent of input order. Touching
/// means sharing an endpoint frame (next.s <= cur.e under inclusive
/// indices).
pub fn merge_segments(segments: &[Segment]) -> Vec<Segment> {
    let mut sorted: Vec<Segment> = segments.to_vec();
    sorted.sort_unstable_by_key(|s| (s.s, s.e));
    let mut out: Vec<Segment> = Vec::with_capacity(sorted.len());
    for seg in sorted {
        match out.last_mut() {
            Some(last) if seg.s <= last.e => {
                last.e = last.e.max(seg.e);
            }
            _ => out.push(seg),
        }
    }
    out
}

/// Full curation pass over raw videos.
pub fn curate(videos: &[RawVideo], min_len: usize, max_len: usize) -> Vec<CuratedVideo> {
    let mut out = Vec::new();
    for video in videos {
        // group segments by label, deterministically
        let mut by_label: BTreeMap<u32, Vec<Segment>> = BTreeMap::new();
        for &(label, seg) in &video.segments {
            by_label.entry(label).or_default().push(seg);
        }
        for (label, segs) in by_label {
            for seg in merge_segments(&segs) {
                let len = seg.len();
                if len < min_len || len > max_len {
                    continue;
                }
                out.push(CuratedVideo { frames: video.frames.clone(), class_id: label, target: seg });
            }
        }
    }
    out
}
