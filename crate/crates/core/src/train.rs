//! Mini-batch Adam training with seeded shuffling, per-epoch validation,
//! and best-checkpoint selection by validation mIoU. Per-sample gradients
//! may be computed on worker threads; they are reduced in sample order, so
//! results are bit-identical for any thread count.

use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::adam::{AdamHyper, AdamState};
use crate::databench::VideoSample;
use crate::error::{Result, SailError};
use crate::eval::{evaluate, Segment, ThresholdHit, DEFAULT_THRESHOLDS};
use crate::model::{SailConfig, SailModel};
use crate::rng::RngState;
use crate::tape::Tape;
use crate::tensor::Tensor;

#[derive(Clone, Debug, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_miou: Option<f64>,
    pub valid_iou_at: Vec<ThresholdHit>,
    pub wall_ms: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct TrainLog {
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_valid_miou: Option<f64>,
}

#[derive(Clone, Copy, Debug)]
pub struct TrainOptions {
    /// Worker threads for per-sample gradients; 1 = fully sequential.
    pub threads: usize,
    /// Optional cap on optimizer steps (overrides epochs when reached).
    pub max_steps: Option<usize>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions { threads: 1, max_steps: None }
    }
}

type SampleGrads = (f64, Vec<(usize, Tensor)>);

fn sample_grads(model: &SailModel, sample: &VideoSample) -> Result<SampleGrads> {
    let mut tape = Tape::new();
    let loss = model.build_loss(&mut tape, &sample.frames, &sample.query, sample.target)?;
    let value = tape.value(loss).data()[0];
    if !value.is_finite() {
        return Err(SailError::non_finite(format!("training loss on sample {}", sample.id)));
    }
    let grads = tape.param_grads(loss)?;
    Ok((value, grads))
}

/// Validation pass: decoded predictions in original index space.
pub fn evaluate_model(model: &SailModel, samples: &[&VideoSample]) -> Result<crate::eval::EvalReport> {
    let mut preds = Vec::with_capacity(samples.len());
    let mut gts = Vec::with_capacity(samples.len());
    for s in samples {
        preds.push(model.predict(&s.frames, &s.query)?.segment);
        gts.push(s.target);
    }
    evaluate(&preds, &gts, &DEFAULT_THRESHOLDS)
}

/// Train on `train_set`, validating each epoch on `valid_set` (may be
/// empty, in which case the final parameters are kept).
pub fn train(
    train_set: &[VideoSample],
    valid_set: &[VideoSample],
    cfg: &SailConfig,
    opts: TrainOptions,
) -> Result<(SailModel, TrainLog)> {
    if train_set.is_empty() {
        return Err(SailError::invalid("train", "empty training set"));
    }
    cfg.validate()?;
    let mut model = SailModel::new(cfg.clone())?;
    let mut adam = AdamState::new(&model.store, AdamHyper { lr: cfg.lr, ..AdamHyper::default() });
    let mut shuffle_rng = RngState::new(cfg.seed ^ 0x7ea1_0c0f_fee0_0d17);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let pool = if opts.threads > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(opts.threads)
                .build()
                .map_err(|e| SailError::Config(format!("thread pool: {e}")))?,
        )
    } else {
        None
    };

    let mut log = TrainLog { seed: cfg.seed, epochs: Vec::new(), best_epoch: 0, best_valid_miou: None };
    let mut best_store = model.store.clone();
    let mut steps_taken = 0usize;
    let valid_refs: Vec<&VideoSample> = valid_set.iter().collect();

    'outer: for epoch in 1..=cfg.epochs {
        let t0 = Instant::now();
        shuffle_rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut loss_count = 0usize;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            if let Some(cap) = opts.max_steps {
                if steps_taken >= cap {
                    break 'outer;
                }
            }
            let results: Vec<SampleGrads> = match &pool {
                Some(pool) => pool.install(|| {
                    chunk
                        .par_iter()
                        .map(|&idx| sample_grads(&model, &train_set[idx]))
                        .collect::<Result<Vec<_>>>()
                })?,
                None => chunk
                    .iter()
                    .map(|&idx| sample_grads(&model, &train_set[idx]))
                    .collect::<Result<Vec<_>>>()?,
            };
            let scale = 1.0 / chunk.len() as f64;
            for (value, grads) in results {
                loss_sum += value;
                loss_count += 1;
                for (slot, g) in grads {
                    model.store.accumulate_grad(slot, &g, scale)?;
                }
            }
            adam.step(&mut model.store)?;
            steps_taken += 1;
        }
        let train_loss = loss_sum / loss_count.max(1) as f64;
        if !train_loss.is_finite() {
            return Err(SailError::non_finite(format!("epoch {epoch} training loss")));
        }

        let (valid_miou, valid_iou_at) = if valid_refs.is_empty() {
            (None, Vec::new())
        } else {
            let report = evaluate_model(&model, &valid_refs)?;
            (Some(report.miou), report.iou_at)
        };
        let improved = match (valid_miou, log.best_valid_miou) {
            (Some(now), Some(best)) => now > best,
            (Some(_), None) => true,
            (None, _) => true, // no validation: keep the latest
        };
        if improved {
            log.best_valid_miou = valid_miou;
            log.best_epoch = epoch;
            best_store = model.store.clone();
        }
        log.epochs.push(EpochRecord {
            epoch,
            train_loss,
            valid_miou,
            valid_iou_at,
            wall_ms: t0.elapsed().as_millis() as u64,
        });
    }
    model.store = best_store;
    Ok((model, log))
}

/// Mean uniform-guess loss, 2 ln(n) averaged over the samples' lengths:
/// the "knows nothing" reference for training curves.
pub fn uniform_loss(samples: &[VideoSample], n_max: usize) -> f64 {
    let total: f64 = samples
        .iter()
        .map(|s| 2.0 * (s.frame_count().min(n_max) as f64).ln())
        .sum();
    total / samples.len().max(1) as f64
}

/// Decode every sample and score against ground truth in original index
/// space, as a (prediction, ground-truth) pair list.
pub fn predict_segments(model: &SailModel, samples: &[&VideoSample]) -> Result<Vec<(Segment, Segment)>> {
    samples
        .iter()
        .map(|s| Ok((model.predict(&s.frames, &s.query)?.segment, s.target)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::databench::{synthesize, GenConfig, SplitName};

    fn micro_train_cfg() -> SailConfig {
        SailConfig {
            d_f: 8,
            d_r: 8,
            d_global: 8,
            d_model: 8,
            heads: 2,
            layers: 1,
            window: 3,
            d_ff: 16,
            lr: 2e-3,
            batch_size: 8,
            epochs: 2,
            ..SailConfig::default()
        }
    }

    fn micro_corpus(seed: u64) -> crate::databench::Corpus {
        let gen = GenConfig {
            classes: 8,
            videos_per_class: 3,
            d_f: 8,
            d_r: 8,
            d_global: 8,
            n_min: 12,
            n_max: 24,
            min_len: 3,
            max_len: 20,
            split_ratios: (2, 1, 1),
            ..GenConfig::default()
        };
        synthesize(&gen, seed).unwrap()
    }

    #[test]
    fn same_seed_same_trainlog_and_params() {
        let corpus = micro_corpus(3);
        let train_set: Vec<_> = corpus.split(SplitName::Train).cloned().collect();
        let valid_set: Vec<_> = corpus.split(SplitName::Valid).cloned().collect();
        let cfg = micro_train_cfg();
        let (m1, log1) = train(&train_set, &valid_set, &cfg, TrainOptions::default()).unwrap();
        let (m2, log2) = train(&train_set, &valid_set, &cfg, TrainOptions::default()).unwrap();
        assert_eq!(log1.epochs.len(), log2.epochs.len());
        for (a, b) in log1.epochs.iter().zip(&log2.epochs) {
            assert_eq!(a.train_loss.to_bits(), b.train_loss.to_bits());
            assert_eq!(a.valid_miou.map(f64::to_bits), b.valid_miou.map(f64::to_bits));
        }
        for slot in 0..m1.store.len() {
            for (x, y) in m1.store.param(slot).data().iter().zip(m2.store.param(slot).data()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn threaded_training_matches_sequential_bitwise() {
        let corpus = micro_corpus(5);
        let train_set: Vec<_> = corpus.split(SplitName::Train).take(12).cloned().collect();
        let cfg = SailConfig { epochs: 1, ..micro_train_cfg() };
        let (m1, _) = train(&train_set, &[], &cfg, TrainOptions { threads: 1, max_steps: None }).unwrap();
        let (m2, _) = train(&train_set, &[], &cfg, TrainOptions { threads: 2, max_steps: None }).unwrap();
        for slot in 0..m1.store.len() {
            for (x, y) in m1.store.param(slot).data().iter().zip(m2.store.param(slot).data()) {
                assert_eq!(x.to_bits(), y.to_bits(), "thread count changed the trajectory");
            }
        }
    }

    #[test]
    fn zero_lr_leaves_parameters_unchanged() {
        let corpus = micro_corpus(7);
        let train_set: Vec<_> = corpus.split(SplitName::Train).take(8).cloned().collect();
        let cfg = SailConfig { lr: 0.0, epochs: 2, ..micro_train_cfg() };
        let fresh = SailModel::new(cfg.clone()).unwrap();
        let (trained, _) = train(&train_set, &[], &cfg, TrainOptions::default()).unwrap();
        for slot in 0..fresh.store.len() {
            for (x, y) in fresh.store.param(slot).data().iter().zip(trained.store.param(slot).data()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn loss_drops_below_uniform_on_a_small_set() {
        // 32 samples, micro config: 200 optimizer steps push the training
        // loss strictly below the uniform-guess loss 2 ln(n)
        let corpus = micro_corpus(11);
        let train_set: Vec<_> = corpus.split(SplitName::Train).take(32).cloned().collect();
        assert!(train_set.len() >= 16, "corpus too small: {}", train_set.len());
        let cfg = SailConfig { epochs: 200, lr: 2e-3, batch_size: 8, ..micro_train_cfg() };
        let opts = TrainOptions { threads: 1, max_steps: Some(200) };
        let (_, log) = train(&train_set, &[], &cfg, opts).unwrap();
        let reference = uniform_loss(&train_set, cfg.n_max);
        let last = log.epochs.last().unwrap().train_loss;
        assert!(
            last < reference,
            "after 200 steps loss {last} is not below uniform reference {reference}"
        );
    }

    #[test]
    fn empty_train_set_rejected() {
        let cfg = micro_train_cfg();
        assert!(train(&[], &[], &cfg, TrainOptions::default()).is_err());
    }
}
