//! Synthetic planted-activity corpus: class-tree construction, raw video
//! generation, curation (merge / split / length filter), query synthesis
//! (simple and difficult), and class-disjoint splitting, plus the JSON-lines
//! corpus file format.

pub mod curate;
pub mod generate;
pub mod io;
pub mod queries;
pub mod split;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SailError};
use crate::eval::Segment;
use crate::region::ImageQuery;
use crate::rng::RngState;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Valid,
    Test,
}

impl SplitName {
    pub const ALL: [SplitName; 3] = [SplitName::Train, SplitName::Valid, SplitName::Test];

    pub fn as_str(&self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Valid => "valid",
            SplitName::Test => "test",
        }
    }
}

impl std::str::FromStr for SplitName {
    type Err = SailError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitName::Train),
            "valid" => Ok(SplitName::Valid),
            "test" => Ok(SplitName::Test),
            other => Err(SailError::invalid("SplitName", format!("unknown split {other}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Simple,
    Difficult,
}

/// One activity class: a leaf in a two-level tree where every parent has
/// exactly two children (siblings). The signature is the unit vector planted
/// in target frames; prototypes are the class-stable region feature seeds.
#[derive(Clone, Debug)]
pub struct ActivityClass {
    pub id: u32,
    pub parent: u32,
    pub signature: Vec<f64>,
    pub prototypes: Vec<Vec<f64>>,
}

impl ActivityClass {
    /// Classes are laid out as sibling pairs: 2p and 2p+1 share parent p.
    pub fn sibling_id(&self) -> u32 {
        self.id ^ 1
    }
}

/// A generated video before curation: possibly several (label, segment)
/// annotations, possibly overlapping.
#[derive(Clone, Debug)]
pub struct RawVideo {
    pub frames: Arc<Tensor>,
    pub segments: Vec<(u32, Segment)>,
}

/// A curated video: exactly one target segment.
#[derive(Clone, Debug)]
pub struct CuratedVideo {
    pub frames: Arc<Tensor>,
    pub class_id: u32,
    pub target: Segment,
}

/// One benchmark sample: a video paired with an image query and its target.
#[derive(Clone, Debug)]
pub struct VideoSample {
    pub id: String,
    pub split: SplitName,
    pub class_id: u32,
    pub difficulty: Difficulty,
    pub frames: Arc<Tensor>,
    pub query: ImageQuery,
    pub target: Segment,
}

impl VideoSample {
    pub fn frame_count(&self) -> usize {
        self.frames.cols()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SplitSummary {
    pub split: SplitName,
    pub samples: usize,
    pub classes: Vec<u32>,
    pub mean_video_len: f64,
    pub mean_target_len: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct CorpusManifest {
    pub splits: Vec<SplitSummary>,
    /// Classes whose videos could not receive queries (fewer than 2 videos).
    pub skipped_classes: usize,
}

/// Generation configuration with desk-scale defaults.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    pub seed: u64,
    pub classes: usize,
    pub videos_per_class: usize,
    pub d_f: usize,
    pub d_r: usize,
    pub d_global: usize,
    pub n_min: usize,
    pub n_max: usize,
    /// Target length as a fraction of the video, drawn uniformly.
    pub target_ratio_min: f64,
    pub target_ratio_max: f64,
    pub regions_min: usize,
    pub regions_max: usize,
    pub prototypes_per_class: usize,
    pub frame_noise: f64,
    pub region_noise: f64,
    pub global_noise: f64,
    /// Video feature mixer W_v = mix_identity * I + mix_random * G/sqrt(d).
    pub mix_identity: f64,
    pub mix_random: f64,
    /// Background distractor spans from unrelated classes, drawn uniformly
    /// in [distractor_min, distractor_max]. At full amplitude these force
    /// the localizer to consult the query: frame strength alone cannot say
    /// which span is the target.
    pub distractor_min: usize,
    pub distractor_max: usize,
    pub distractor_amp: f64,
    /// Distractor spans draw their length ratio from the target range
    /// scaled by this factor; slightly shorter spans keep frame-level
    /// activity detection viable without revealing the target by length
    /// alone.
    pub distractor_len_scale: f64,
    /// Weight of the corpus-wide carrier component in every class
    /// signature. Activity frames of any class share this direction, the
    /// way real action segments share low-level statistics; a frame-level
    /// model can detect "some activity" without identifying the class.
    pub global_shared: f64,
    /// Weight of the shared parent component in a class signature.
    pub sibling_shared: f64,
    /// Probability that a raw video carries a second same-label segment.
    pub multi_segment_prob: f64,
    /// When a second segment is drawn, probability that it is forced to
    /// overlap the first (so curation merges rather than splits).
    pub overlap_bias: f64,
    pub min_len: usize,
    pub max_len: usize,
    pub simple_queries: usize,
    pub difficult_queries: usize,
    pub split_ratios: (u32, u32, u32),
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            seed: 7,
            classes: 40,
            videos_per_class: 10,
            d_f: 32,
            d_r: 32,
            d_global: 32,
            n_min: 40,
            n_max: 160,
            target_ratio_min: 0.206,
            target_ratio_max: 0.500,
            regions_min: 4,
            regions_max: 10,
            prototypes_per_class: 6,
            frame_noise: 0.3,
            region_noise: 0.2,
            global_noise: 0.25,
            mix_identity: 1.0,
            mix_random: 0.25,
            distractor_min: 1,
            distractor_max: 2,
            distractor_amp: 0.75,
            distractor_len_scale: 0.9,
            global_shared: 0.6,
            sibling_shared: 0.55,
            multi_segment_prob: 0.2,
            overlap_bias: 0.75,
            min_len: 8,
            max_len: 120,
            simple_queries: 3,
            difficult_queries: 2,
            split_ratios: (8, 1, 1),
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.classes % 2 != 0 {
            return Err(SailError::Config("classes must be an even count of sibling pairs".into()));
        }
        let parents = (self.classes / 2) as u32;
        let (a, b, c) = self.split_ratios;
        let total = a + b + c;
        if total == 0 {
            return Err(SailError::Config("split ratios must not all be zero".into()));
        }
        for r in [a, b, c] {
            if (parents * r) % total != 0 {
                return Err(SailError::Config(format!(
                    "{parents} parent classes cannot split exactly at ratios {a}:{b}:{c}"
                )));
            }
        }
        if self.videos_per_class == 0 {
            return Err(SailError::Config("videos_per_class must be positive".into()));
        }
        if self.n_min == 0 || self.n_min > self.n_max {
            return Err(SailError::Config("invalid video length range".into()));
        }
        if !(self.target_ratio_min > 0.0 && self.target_ratio_min <= self.target_ratio_max && self.target_ratio_max <= 1.0) {
            return Err(SailError::Config("invalid target ratio range".into()));
        }
        if self.regions_min == 0 || self.regions_min > self.regions_max {
            return Err(SailError::Config("invalid region count range".into()));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(SailError::Config("invalid curation length range".into()));
        }
        if self.distractor_min > self.distractor_max {
            return Err(SailError::Config("invalid distractor count range".into()));
        }
        if self.global_shared * self.global_shared + self.sibling_shared * self.sibling_shared >= 1.0
        {
            return Err(SailError::Config(
                "global_shared^2 + sibling_shared^2 must stay below 1".into(),
            ));
        }
        if self.d_f == 0 || self.d_f % 2 != 0 {
            return Err(SailError::Config("d_f must be positive and even".into()));
        }
        if self.prototypes_per_class == 0 {
            return Err(SailError::Config("prototypes_per_class must be positive".into()));
        }
        Ok(())
    }

    pub fn parents(&self) -> u32 {
        (self.classes / 2) as u32
    }
}

/// The full synthetic benchmark.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub classes: Vec<ActivityClass>,
    pub samples: Vec<VideoSample>,
    pub manifest: CorpusManifest,
}

impl Corpus {
    pub fn split(&self, name: SplitName) -> impl Iterator<Item = &VideoSample> {
        self.samples.iter().filter(move |s| s.split == name)
    }
}

/// End-to-end pipeline: generate, curate, attach queries, split by class,
/// summarize.
pub fn synthesize(cfg: &GenConfig, seed: u64) -> Result<Corpus> {
    cfg.validate()?;
    let rng = RngState::new(seed);
    let raw = generate::generate_raw_corpus(cfg, &rng)?;
    let curated = curate::curate(&raw.videos, cfg.min_len, cfg.max_len);
    let (mut samples, skipped) = queries::make_queries(&curated, &raw.classes, cfg, &rng)?;
    let manifest = split::split_by_class(&mut samples, &raw.classes, cfg.split_ratios, &rng, skipped)?;
    Ok(Corpus { classes: raw.classes, samples, manifest })
}
