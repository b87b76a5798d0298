//! Frame-level localization baseline. A small MLP scores each frame's
//! probability of lying inside the target segment given the frame feature
//! and the projected global query feature; the predicted segment maximizes
//! the product of inside probabilities and outside complements, computed in
//! log space with prefix sums.

use serde::{Deserialize, Serialize};

use crate::adam::{AdamHyper, AdamState};
use crate::error::{Result, SailError};
use crate::eval::{evaluate, EvalReport, Segment};
use crate::rng::RngState;
use crate::store::ParamStore;
use crate::tape::Tape;
use crate::tensor::Tensor;

const P_CLAMP: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct FlpConfig {
    pub hidden: usize,
    /// Dimension the global feature is projected to before concatenation.
    pub proj: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
}

impl Default for FlpConfig {
    fn default() -> Self {
        FlpConfig { hidden: 48, proj: 24, lr: 3e-3, epochs: 12, batch: 16, seed: 7 }
    }
}

/// Borrowed view of one sample for the baseline.
#[derive(Clone, Copy)]
pub struct FlpSample<'a> {
    pub frames: &'a Tensor,
    pub global: &'a Tensor,
    pub target: Segment,
}

pub struct FlpModel {
    store: ParamStore,
    cfg: FlpConfig,
}

fn glorot(rng: &mut RngState, rows: usize, cols: usize) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Tensor::new(vec![rows, cols], (0..rows * cols).map(|_| rng.uniform_in(-bound, bound)).collect())
        .unwrap()
}

impl FlpModel {
    fn init(cfg: FlpConfig, d_f: usize, d_g: usize) -> Result<Self> {
        let mut rng = RngState::new(cfg.seed);
        let mut store = ParamStore::new();
        store.register("flp.w_g", glorot(&mut rng, cfg.proj, d_g))?;
        store.register("flp.w1", glorot(&mut rng, cfg.hidden, d_f + cfg.proj))?;
        store.register("flp.b1", Tensor::zeros(vec![cfg.hidden]))?;
        store.register("flp.w2", glorot(&mut rng, 1, cfg.hidden))?;
        store.register("flp.b2", Tensor::zeros(vec![1]))?;
        Ok(FlpModel { store, cfg })
    }

    pub fn frame_probs(&self, frames: &Tensor, global: &Tensor) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let p = probs_node(&mut tape, &self.store, self.cfg.proj, frames, global)?;
        Ok(tape.value(p).data().to_vec())
    }

    pub fn predict(&self, frames: &Tensor, global: &Tensor) -> Result<Segment> {
        let probs = self.frame_probs(frames, global)?;
        let (s, e) = best_segment_log_space(&probs);
        Ok(Segment::new(s, e))
    }
}

/// Per-frame inside probabilities: sigmoid over a one-hidden-layer tanh MLP
/// of the frame feature concatenated with the projected global feature.
fn probs_node(
    tape: &mut Tape,
    store: &ParamStore,
    proj: usize,
    frames: &Tensor,
    global: &Tensor,
) -> Result<crate::tape::NodeId> {
    let n = frames.cols();
    let f = tape.leaf(frames.clone());
    let g = tape.leaf(Tensor::matrix(global.len(), 1, global.data().to_vec())?);
    let w_g = tape.param(store, "flp.w_g")?;
    let g_col = tape.matmul(w_g, g)?;
    let g_vec = tape.reshape(g_col, vec![proj])?;
    let zeros = tape.leaf(Tensor::zeros(vec![proj, n]));
    let tiled = tape.add_col_vec(zeros, g_vec)?;
    let cat = tape.concat_rows(&[f, tiled])?;
    let w1 = tape.param(store, "flp.w1")?;
    let b1 = tape.param(store, "flp.b1")?;
    let h = tape.matmul(w1, cat)?;
    let hb = tape.add_col_vec(h, b1)?;
    let ht = tape.tanh(hb)?;
    let w2 = tape.param(store, "flp.w2")?;
    let b2 = tape.param(store, "flp.b2")?;
    let logits = tape.matmul(w2, ht)?;
    let lb = tape.add_col_vec(logits, b2)?;
    tape.sigmoid(lb)
}

/// Log score of segment [s, e] (1-based inclusive) under per-frame inside
/// probabilities: sum of log p inside plus log(1-p) outside.
pub fn segment_log_score(probs: &[f64], s: usize, e: usize) -> f64 {
    let mut total = 0.0;
    for (k, &p) in probs.iter().enumerate() {
        let p = p.clamp(P_CLAMP, 1.0 - P_CLAMP);
        let inside = k + 1 >= s && k + 1 <= e;
        total += if inside { p.ln() } else { (1.0 - p).ln() };
    }
    total
}

/// Argmax over all segments (i <= j) of the product score, computed in log
/// space via prefix sums; first maximal pair in lexicographic order wins.
pub fn best_segment_log_space(probs: &[f64]) -> (usize, usize) {
    let n = probs.len();
    assert!(n > 0, "empty probability vector");
    // prefix[i] = sum over first i frames
    let mut log_p = vec![0.0; n + 1];
    let mut log_q = vec![0.0; n + 1];
    for (k, &p) in probs.iter().enumerate() {
        let p = p.clamp(P_CLAMP, 1.0 - P_CLAMP);
        log_p[k + 1] = log_p[k] + p.ln();
        log_q[k + 1] = log_q[k] + (1.0 - p).ln();
    }
    let mut best = (1, 1);
    let mut best_score = f64::NEG_INFINITY;
    for s in 1..=n {
        for e in s..=n {
            let score = log_q[s - 1] + (log_p[e] - log_p[s - 1]) + (log_q[n] - log_q[e]);
            if score > best_score {
                best_score = score;
                best = (s, e);
            }
        }
    }
    best
}

/// Train the per-frame scorer with binary cross-entropy against the
/// inside-segment indicator.
pub fn train_flp(train: &[FlpSample], cfg: FlpConfig) -> Result<FlpModel> {
    if train.is_empty() {
        return Err(SailError::invalid("train_flp", "empty training set"));
    }
    let d_f = train[0].frames.rows();
    let d_g = train[0].global.len();
    let model = FlpModel::init(cfg, d_f, d_g)?;
    let mut store = model.store;
    let mut adam = AdamState::new(&store, AdamHyper { lr: cfg.lr, ..AdamHyper::default() });
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut rng = RngState::new(cfg.seed ^ 0x5eed);
    for _ in 0..cfg.epochs {
        rng.shuffle(&mut order);
        for chunk in order.chunks(cfg.batch.max(1)) {
            let scale = 1.0 / chunk.len() as f64;
            for &idx in chunk {
                let sample = &train[idx];
                let n = sample.frames.cols();
                if sample.target.s == 0 || sample.target.e > n || sample.target.e < sample.target.s {
                    return Err(SailError::invalid("train_flp", "target outside video"));
                }
                let mut tape = Tape::new();
                let p = probs_node(&mut tape, &store, cfg.proj, sample.frames, sample.global)?;
                let mut y = Tensor::zeros(vec![1, n]);
                for k in sample.target.s..=sample.target.e {
                    y.data_mut()[k - 1] = 1.0;
                }
                let ones = tape.leaf(Tensor::filled(vec![1, n], 1.0));
                let yn = tape.leaf(y);
                let one_minus_y = tape.sub(ones, yn)?;
                let one_minus_p = tape.sub(ones, p)?;
                let lp = tape.log_clamped(p, P_CLAMP)?;
                let lq = tape.log_clamped(one_minus_p, P_CLAMP)?;
                let t1 = tape.mul_elem(yn, lp)?;
                let t2 = tape.mul_elem(one_minus_y, lq)?;
                let sum = tape.add(t1, t2)?;
                let total = tape.sum_all(sum)?;
                let loss = tape.scale(total, -1.0 / n as f64)?;
                let grads = tape.param_grads(loss)?;
                for (slot, g) in grads {
                    store.accumulate_grad(slot, &g, scale)?;
                }
            }
            adam.step(&mut store)?;
        }
    }
    Ok(FlpModel { store, cfg })
}

/// Train on the train split and evaluate segment predictions on the test
/// split.
pub fn flp_baseline(
    train: &[FlpSample],
    test: &[FlpSample],
    cfg: FlpConfig,
    thresholds: &[f64],
) -> Result<EvalReport> {
    let model = train_flp(train, cfg)?;
    let mut preds = Vec::with_capacity(test.len());
    let mut gts = Vec::with_capacity(test.len());
    for s in test {
        preds.push(model.predict(s.frames, s.global)?);
        gts.push(s.target);
    }
    evaluate(&preds, &gts, thresholds)
}
