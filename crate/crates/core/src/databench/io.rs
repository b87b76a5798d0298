//! Corpus persistence: one JSON object per line per sample, and a single
//! JSON manifest document.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SailError};
use crate::eval::Segment;
use crate::region::{BoundingBox, ImageQuery};
use crate::tensor::Tensor;

use super::{CorpusManifest, Difficulty, SplitName, VideoSample};

/// On-disk form of one sample. Frames are row-per-frame (n x d_f) and
/// regions row-per-region (m x d_r).
#[derive(Serialize, Deserialize)]
struct SampleRecord {
    id: String,
    split: SplitName,
    class: u32,
    difficulty: Difficulty,
    n: usize,
    frames: Vec<Vec<f64>>,
    regions: Vec<Vec<f64>>,
    boxes: Vec<[f64; 4]>,
    global: Vec<f64>,
    s: usize,
    e: usize,
}

impl SampleRecord {
    fn from_sample(sample: &VideoSample) -> Self {
        let (d_f, n) = (sample.frames.rows(), sample.frames.cols());
        let frames = (0..n)
            .map(|t| (0..d_f).map(|r| sample.frames.at(r, t)).collect())
            .collect();
        let (d_r, m) = (sample.query.regions.rows(), sample.query.regions.cols());
        let regions = (0..m)
            .map(|j| (0..d_r).map(|r| sample.query.regions.at(r, j)).collect())
            .collect();
        let boxes = sample.query.boxes.iter().map(|b| [b.cx, b.cy, b.w, b.h]).collect();
        SampleRecord {
            id: sample.id.clone(),
            split: sample.split,
            class: sample.class_id,
            difficulty: sample.difficulty,
            n,
            frames,
            regions,
            boxes,
            global: sample.query.global.data().to_vec(),
            s: sample.target.s,
            e: sample.target.e,
        }
    }

    fn into_sample(self, line_no: usize) -> Result<VideoSample> {
        let bad = |msg: String| SailError::Corpus(format!("line {line_no}: {msg}"));
        if self.frames.len() != self.n || self.n == 0 {
            return Err(bad(format!("{} frame rows for n={}", self.frames.len(), self.n)));
        }
        let d_f = self.frames[0].len();
        let mut fdata = vec![0.0; d_f * self.n];
        for (t, row) in self.frames.iter().enumerate() {
            if row.len() != d_f {
                return Err(bad(format!("ragged frame row at {t}")));
            }
            for (r, &v) in row.iter().enumerate() {
                fdata[r * self.n + t] = v;
            }
        }
        let frames = Tensor::new(vec![d_f, self.n], fdata).map_err(|e| bad(e.to_string()))?;
        if self.regions.is_empty() || self.regions.len() != self.boxes.len() {
            return Err(bad(format!(
                "{} regions with {} boxes",
                self.regions.len(),
                self.boxes.len()
            )));
        }
        let m = self.regions.len();
        let d_r = self.regions[0].len();
        let mut rdata = vec![0.0; d_r * m];
        for (j, row) in self.regions.iter().enumerate() {
            if row.len() != d_r {
                return Err(bad(format!("ragged region row at {j}")));
            }
            for (r, &v) in row.iter().enumerate() {
                rdata[r * m + j] = v;
            }
        }
        let regions = Tensor::new(vec![d_r, m], rdata).map_err(|e| bad(e.to_string()))?;
        let boxes = self
            .boxes
            .iter()
            .map(|&[cx, cy, w, h]| BoundingBox::new(cx, cy, w, h))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| bad(e.to_string()))?;
        if self.s == 0 || self.s > self.e || self.e > self.n {
            return Err(bad(format!("target ({},{}) outside 1..={}", self.s, self.e, self.n)));
        }
        let query = ImageQuery::new(regions, boxes, Tensor::vector(self.global))
            .map_err(|e| bad(e.to_string()))?;
        Ok(VideoSample {
            id: self.id,
            split: self.split,
            class_id: self.class,
            difficulty: self.difficulty,
            frames: Arc::new(frames),
            query,
            target: Segment::new(self.s, self.e),
        })
    }
}

/// Write samples as JSON lines.
pub fn write_corpus(path: &Path, samples: &[VideoSample]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for sample in samples {
        let record = SampleRecord::from_sample(sample);
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Read a JSON-lines corpus file.
pub fn read_corpus(path: &Path) -> Result<Vec<VideoSample>> {
    let reader = BufReader::new(File::open(path)?);
    let mut samples = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: SampleRecord = serde_json::from_str(&line)
            .map_err(|e| SailError::Corpus(format!("line {}: {e}", idx + 1)))?;
        samples.push(record.into_sample(idx + 1)?);
    }
    if samples.is_empty() {
        return Err(SailError::Corpus(format!("{} holds no samples", path.display())));
    }
    Ok(samples)
}

pub fn write_manifest(path: &Path, manifest: &CorpusManifest) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, manifest)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<CorpusManifest> {
    let reader = BufReader::new(File::open(path)?);
    Ok(serde_json::from_reader(reader)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::databench::{synthesize, GenConfig};

    fn tiny_corpus(seed: u64) -> crate::databench::Corpus {
        let cfg = GenConfig {
            classes: 8,
            videos_per_class: 3,
            n_min: 16,
            n_max: 30,
            split_ratios: (2, 1, 1),
            ..GenConfig::default()
        };
        synthesize(&cfg, seed).unwrap()
    }

    #[test]
    fn corpus_roundtrip_is_exact() {
        let corpus = tiny_corpus(5);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        write_corpus(&path, &corpus.samples).unwrap();
        let loaded = read_corpus(&path).unwrap();
        assert_eq!(loaded.len(), corpus.samples.len());
        for (a, b) in corpus.samples.iter().zip(&loaded) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.split, b.split);
            assert_eq!(a.class_id, b.class_id);
            assert_eq!(a.difficulty, b.difficulty);
            assert_eq!(a.target, b.target);
            for (x, y) in a.frames.data().iter().zip(b.frames.data()) {
                assert_eq!(x.to_bits(), y.to_bits(), "frames not exactly round-tripped");
            }
            for (x, y) in a.query.regions.data().iter().zip(b.query.regions.data()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
            for (x, y) in a.query.global.data().iter().zip(b.query.global.data()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
            assert_eq!(a.query.boxes, b.query.boxes);
        }
    }

    #[test]
    fn same_seed_writes_identical_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let (p1, p2) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
        write_corpus(&p1, &tiny_corpus(9).samples).unwrap();
        write_corpus(&p2, &tiny_corpus(9).samples).unwrap();
        let (b1, b2) = (std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        assert_eq!(b1, b2);
    }

    #[test]
    fn corrupt_lines_are_rejected_with_position() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(&path, "{\"not\": \"a sample\"}\n").unwrap();
        let err = read_corpus(&path).unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
    }

    #[test]
    fn manifest_roundtrip() {
        let corpus = tiny_corpus(13);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        write_manifest(&path, &corpus.manifest).unwrap();
        let loaded = read_manifest(&path).unwrap();
        assert_eq!(loaded, corpus.manifest);
    }
}
