//! Command-line front end. Every subcommand is a pure function of its
//! input files, flags, and seed: the fully resolved configuration is
//! written next to the outputs, progress goes to stderr, machine-readable
//! results go to files, and stdout carries only the primary output path.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use sail_core::checkpoint::{load_checkpoint, save_checkpoint};
use sail_core::databench::{self, io as corpus_io, GenConfig, SplitName, VideoSample};
use sail_core::error::SailError;
use sail_core::eval::flp::{flp_baseline, FlpConfig, FlpSample};
use sail_core::eval::{random_baseline, DEFAULT_THRESHOLDS};
use sail_core::experiment::{run_experiment, ExperimentGrid};
use sail_core::gradcheck::grad_check;
use sail_core::localizer::DecodeMode;
use sail_core::model::{SailConfig, SailModel};
use sail_core::region::{BoundingBox, ImageQuery};
use sail_core::rng::RngState;
use sail_core::store::ParamStore;
use sail_core::tensor::Tensor;
use sail_core::train::{evaluate_model, train, TrainOptions};

#[derive(Parser)]
#[command(name = "sail", version, about = "Image-query temporal activity localization at desk scale")]
struct Cli {
    /// JSON config file; flag values override file values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "sail-out")]
    out: PathBuf,
    /// Worker threads (1 keeps runs bit-reproducible on any machine;
    /// results are identical for any value).
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineKind {
    Random,
    Flp,
}

#[derive(Clone, Copy, ValueEnum)]
enum DecodeArg {
    Independent,
    Constrained,
}

impl From<DecodeArg> for DecodeMode {
    fn from(d: DecodeArg) -> Self {
        match d {
            DecodeArg::Independent => DecodeMode::Independent,
            DecodeArg::Constrained => DecodeMode::Constrained,
        }
    }
}

/// Model/training overrides shared by train, eval, gradcheck and sweep.
#[derive(Args, Clone)]
struct ModelFlags {
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Drop region self-attention (ablation).
    #[arg(long = "no-rs")]
    no_rs: bool,
    /// Keep cross-attention only in the final encoder layer (ablation).
    #[arg(long = "no-ml")]
    no_ml: bool,
    /// Replace windowed self-attention with global attention (ablation).
    #[arg(long = "no-ls")]
    no_ls: bool,
    /// Drop the bi-directional aggregation (ablation).
    #[arg(long = "no-ba")]
    no_ba: bool,
    #[arg(long)]
    decode: Option<DecodeArg>,
}

/// Sweep-specific overrides: the layer count belongs to the grid there.
#[derive(Args, Clone)]
struct SweepModelFlags {
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    decode: Option<DecodeArg>,
}

impl SweepModelFlags {
    fn as_model_flags(&self) -> ModelFlags {
        ModelFlags {
            layers: None,
            window: self.window,
            heads: self.heads,
            lr: self.lr,
            batch: self.batch,
            epochs: self.epochs,
            no_rs: false,
            no_ml: false,
            no_ls: false,
            no_ba: false,
            decode: self.decode,
        }
    }
}

impl ModelFlags {
    fn apply(&self, cfg: &mut SailConfig) {
        if let Some(v) = self.layers {
            cfg.layers = v;
        }
        if let Some(v) = self.window {
            cfg.window = v;
        }
        if let Some(v) = self.heads {
            cfg.heads = v;
        }
        if let Some(v) = self.lr {
            cfg.lr = v;
        }
        if let Some(v) = self.batch {
            cfg.batch_size = v;
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if self.no_rs {
            cfg.no_region_self_attention = true;
        }
        if self.no_ml {
            cfg.no_multilevel_cross = true;
        }
        if self.no_ls {
            cfg.no_local_attention = true;
        }
        if self.no_ba {
            cfg.no_bidirectional = true;
        }
        if let Some(d) = self.decode {
            cfg.decode = d.into();
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic benchmark corpus and manifest.
    Synth {
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long = "videos-per-class")]
        videos_per_class: Option<usize>,
    },
    /// Train a model on the train split of a corpus file.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        model: ModelFlags,
    },
    /// Evaluate a checkpoint (or a baseline) on one split.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        baseline: Option<BaselineKind>,
        #[command(flatten)]
        model: ModelFlags,
    },
    /// End-to-end finite-difference audit on a micro configuration.
    Gradcheck,
    /// Predict boundaries for a single sample.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Sample id (as in the corpus file).
        #[arg(long)]
        sample: String,
    },
    /// Layer sweep or ablation table: one train+eval per grid point.
    Sweep {
        #[arg(long)]
        data: PathBuf,
        /// Inclusive layer range "1..7" or comma list "1,3,5".
        #[arg(long)]
        layers: Option<String>,
        /// Run the five-row ablation grid.
        #[arg(long)]
        ablations: bool,
        #[command(flatten)]
        model: SweepModelFlags,
    },
}

fn exit_code_for(err: &SailError) -> u8 {
    match err {
        SailError::Config(_) | SailError::InvalidInput { .. } | SailError::Shape { .. } => 2,
        SailError::Io(_) => 3,
        SailError::Corpus(_) | SailError::Checkpoint(_) | SailError::Json(_) => 4,
        SailError::NonFinite { .. } => 5,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

fn load_json_config<T: serde::de::DeserializeOwned + Default>(path: &Option<PathBuf>) -> Result<T, SailError> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            serde_json::from_str(&text)
                .map_err(|e| SailError::Config(format!("{}: {e}", p.display())))
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), SailError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn split_samples(samples: &[VideoSample], split: SplitName) -> Vec<VideoSample> {
    samples.iter().filter(|s| s.split == split).cloned().collect()
}

fn parse_split(name: &str) -> Result<SplitName, SailError> {
    name.parse()
}

fn resolve_model_config(
    config_path: &Option<PathBuf>,
    seed: Option<u64>,
    flags: &ModelFlags,
) -> Result<SailConfig, SailError> {
    let mut cfg: SailConfig = load_json_config(config_path)?;
    flags.apply(&mut cfg);
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), SailError> {
    std::fs::create_dir_all(&cli.out)?;
    let opts = TrainOptions { threads: cli.threads.max(1), max_steps: None };
    match &cli.command {
        Command::Synth { classes, videos_per_class } => {
            let mut gen: GenConfig = load_json_config(&cli.config)?;
            if let Some(c) = classes {
                gen.classes = *c;
            }
            if let Some(v) = videos_per_class {
                gen.videos_per_class = *v;
            }
            if let Some(s) = cli.seed {
                gen.seed = s;
            }
            gen.validate()?;
            let corpus = databench::synthesize(&gen, gen.seed)?;
            let corpus_path = cli.out.join("corpus.jsonl");
            corpus_io::write_corpus(&corpus_path, &corpus.samples)?;
            corpus_io::write_manifest(&cli.out.join("manifest.json"), &corpus.manifest)?;
            write_json(&cli.out.join("synth.resolved.json"), &gen)?;
            for s in &corpus.manifest.splits {
                eprintln!(
                    "{}: {} samples, {} classes, mean video {:.1} frames, mean target {:.1}",
                    s.split.as_str(),
                    s.samples,
                    s.classes.len(),
                    s.mean_video_len,
                    s.mean_target_len
                );
            }
            println!("{}", corpus_path.display());
            Ok(())
        }
        Command::Train { data, model } => {
            let cfg = resolve_model_config(&cli.config, cli.seed, model)?;
            let samples = corpus_io::read_corpus(data)?;
            let train_set = split_samples(&samples, SplitName::Train);
            let valid_set = split_samples(&samples, SplitName::Valid);
            eprintln!(
                "training on {} samples, validating on {} (seed {})",
                train_set.len(),
                valid_set.len(),
                cfg.seed
            );
            let (model_out, log) = train(&train_set, &valid_set, &cfg, opts)?;
            for e in &log.epochs {
                match e.valid_miou {
                    Some(m) => eprintln!(
                        "epoch {:>3}: loss {:.4}, valid mIoU {:.4} ({} ms)",
                        e.epoch, e.train_loss, m, e.wall_ms
                    ),
                    None => eprintln!("epoch {:>3}: loss {:.4} ({} ms)", e.epoch, e.train_loss, e.wall_ms),
                }
            }
            let ckpt_path = cli.out.join("checkpoint.ckpt");
            save_checkpoint(&ckpt_path, &model_out.store, &model_out.cfg)?;
            write_json(&cli.out.join("trainlog.json"), &log)?;
            write_json(&cli.out.join("train.resolved.json"), &cfg)?;
            println!("{}", ckpt_path.display());
            Ok(())
        }
        Command::Eval { data, split, checkpoint, baseline, model } => {
            let samples = corpus_io::read_corpus(data)?;
            let split_name = parse_split(split)?;
            let eval_set = split_samples(&samples, split_name);
            if eval_set.is_empty() {
                return Err(SailError::invalid("eval", format!("no samples in split {split}")));
            }
            let seed = cli.seed.unwrap_or(7);
            let (label, report) = match (baseline, checkpoint) {
                (Some(BaselineKind::Random), _) => {
                    let items: Vec<(usize, sail_core::eval::Segment)> =
                        eval_set.iter().map(|s| (s.frame_count(), s.target)).collect();
                    ("random".to_string(), random_baseline(&items, seed, &DEFAULT_THRESHOLDS)?)
                }
                (Some(BaselineKind::Flp), _) => {
                    let train_set = split_samples(&samples, SplitName::Train);
                    if train_set.is_empty() {
                        return Err(SailError::invalid("eval", "FLP baseline needs a train split"));
                    }
                    let to_flp = |xs: &[VideoSample]| -> Vec<(Tensor, Tensor, sail_core::eval::Segment)> {
                        xs.iter()
                            .map(|s| ((*s.frames).clone(), s.query.global.clone(), s.target))
                            .collect()
                    };
                    let train_owned = to_flp(&train_set);
                    let eval_owned = to_flp(&eval_set);
                    fn as_views(
                        xs: &[(Tensor, Tensor, sail_core::eval::Segment)],
                    ) -> Vec<FlpSample<'_>> {
                        xs.iter()
                            .map(|(f, g, t)| FlpSample { frames: f, global: g, target: *t })
                            .collect()
                    }
                    let flp_cfg = FlpConfig { seed, ..FlpConfig::default() };
                    (
                        "flp".to_string(),
                        flp_baseline(&as_views(&train_owned), &as_views(&eval_owned), flp_cfg, &DEFAULT_THRESHOLDS)?,
                    )
                }
                (None, Some(ckpt)) => {
                    let mut loaded = load_checkpoint(ckpt)?;
                    if let Some(s) = cli.seed {
                        loaded.config.seed = s;
                    }
                    model.apply(&mut loaded.config);
                    let m = SailModel::from_parts(loaded.config, loaded.params)?;
                    let refs: Vec<&VideoSample> = eval_set.iter().collect();
                    ("sail".to_string(), evaluate_model(&m, &refs)?)
                }
                (None, None) => {
                    return Err(SailError::invalid("eval", "need --checkpoint or --baseline"));
                }
            };
            eprintln!("{}", report.table_header());
            eprintln!("{}", report.render_row(&label));
            let report_path = cli.out.join(format!("eval.{label}.{split}.json"));
            write_json(&report_path, &report)?;
            write_json(
                &cli.out.join(format!("eval.{label}.{split}.resolved.json")),
                &serde_json::json!({
                    "method": label,
                    "split": split,
                    "seed": seed,
                    "data": data.display().to_string(),
                    "checkpoint": checkpoint.as_ref().map(|p| p.display().to_string()),
                }),
            )?;
            println!("{}", report_path.display());
            Ok(())
        }
        Command::Gradcheck => {
            let seed = cli.seed.unwrap_or(7);
            let report = run_micro_gradcheck(seed)?;
            let path = cli.out.join("gradcheck.json");
            write_json(
                &path,
                &serde_json::json!({
                    "seed": seed,
                    "max_rel_err": report.max_rel_err,
                    "tol": report.tol,
                    "passed": report.passed,
                    "params_checked": report.per_param.len(),
                    "failures": report.failures,
                }),
            )?;
            eprintln!(
                "gradcheck: max relative error {:.3e} over {} parameters (tol {:.0e}): {}",
                report.max_rel_err,
                report.per_param.len(),
                report.tol,
                if report.passed { "PASS" } else { "FAIL" }
            );
            println!("{}", path.display());
            if report.passed {
                Ok(())
            } else {
                Err(SailError::non_finite("gradient audit exceeded tolerance"))
            }
        }
        Command::Predict { checkpoint, data, sample } => {
            let samples = corpus_io::read_corpus(data)?;
            let found = samples
                .iter()
                .find(|s| &s.id == sample)
                .ok_or_else(|| SailError::invalid("predict", format!("no sample with id {sample}")))?;
            let m = load_checkpoint(checkpoint)?.into_model()?;
            let pred = m.predict(&found.frames, &found.query)?;
            let path = cli.out.join(format!("predict.{sample}.json"));
            write_json(
                &path,
                &serde_json::json!({
                    "id": found.id,
                    "s": pred.segment.s,
                    "e": pred.segment.e,
                    "n": pred.n_original,
                    "model_s": pred.boundary.s_hat,
                    "model_e": pred.boundary.e_hat,
                    "p_s": pred.boundary.p_s,
                    "p_e": pred.boundary.p_e,
                }),
            )?;
            write_json(
                &cli.out.join(format!("predict.{sample}.resolved.json")),
                &serde_json::json!({
                    "checkpoint": checkpoint.display().to_string(),
                    "data": data.display().to_string(),
                    "sample": sample,
                    "decode": format!("{:?}", m.cfg.decode).to_lowercase(),
                }),
            )?;
            eprintln!("sample {}: predicted ({}, {})", found.id, pred.segment.s, pred.segment.e);
            println!("{}", path.display());
            Ok(())
        }
        Command::Sweep { data, layers, ablations, model } => {
            let cfg = resolve_model_config(&cli.config, cli.seed, &model.as_model_flags())?;
            let grid = match (layers, ablations) {
                (Some(spec), false) => ExperimentGrid::Layers(parse_layer_grid(spec)?),
                (None, true) => ExperimentGrid::Ablations,
                _ => {
                    return Err(SailError::invalid("sweep", "pass exactly one of --layers or --ablations"));
                }
            };
            let samples = corpus_io::read_corpus(data)?;
            let train_set = split_samples(&samples, SplitName::Train);
            let valid_set = split_samples(&samples, SplitName::Valid);
            let test_set = split_samples(&samples, SplitName::Test);
            let report = run_experiment(&grid, &cfg, &train_set, &valid_set, &test_set, opts)?;
            eprint!("{}", report.render_table());
            let json_path = cli.out.join("sweep.json");
            write_json(&json_path, &report)?;
            std::fs::write(cli.out.join("sweep.txt"), report.render_table())?;
            write_json(&cli.out.join("sweep.resolved.json"), &cfg)?;
            println!("{}", json_path.display());
            Ok(())
        }
    }
}

fn parse_layer_grid(spec: &str) -> Result<Vec<usize>, SailError> {
    let bad = || SailError::invalid("sweep", format!("cannot parse layer grid {spec:?}"));
    if let Some((a, b)) = spec.split_once("..") {
        let lo: usize = a.trim().parse().map_err(|_| bad())?;
        let hi: usize = b.trim().parse().map_err(|_| bad())?;
        if lo == 0 || hi < lo {
            return Err(bad());
        }
        return Ok((lo..=hi).collect());
    }
    let list: Vec<usize> = spec
        .split(',')
        .map(|x| x.trim().parse::<usize>().map_err(|_| bad()))
        .collect::<Result<_, _>>()?;
    if list.is_empty() || list.contains(&0) {
        return Err(bad());
    }
    Ok(list)
}


/// The micro-configuration gradient audit: full model loss on one sample
/// with n=6, m=3, d=8, H=2, L=1, w=2.
fn run_micro_gradcheck(seed: u64) -> Result<sail_core::gradcheck::GradCheckReport, SailError> {
    let cfg = SailConfig {
        d_f: 8,
        d_r: 8,
        d_global: 8,
        d_model: 8,
        heads: 2,
        layers: 1,
        window: 2,
        d_ff: 16,
        seed,
        ..SailConfig::default()
    };
    let mut rng = RngState::new(seed ^ 0xdead_beef);
    let n = 6;
    let m = 3;
    let frames = Tensor::new(vec![8, n], (0..8 * n).map(|_| rng.normal() * 0.8).collect())
        .map_err(|e| SailError::Config(e.to_string()))?;
    let boxes: Vec<BoundingBox> = (0..m)
        .map(|_| {
            BoundingBox::new(
                rng.uniform_in(0.2, 0.8),
                rng.uniform_in(0.2, 0.8),
                rng.uniform_in(0.1, 0.4),
                rng.uniform_in(0.1, 0.4),
            )
        })
        .collect::<Result<_, _>>()?;
    let query = ImageQuery::new(
        Tensor::new(vec![8, m], (0..8 * m).map(|_| rng.normal() * 0.8).collect())
            .map_err(|e| SailError::Config(e.to_string()))?,
        boxes,
        Tensor::vector((0..8).map(|_| rng.normal()).collect()),
    )?;
    let target = sail_core::eval::Segment::new(2, 5);
    let template = SailModel::new(cfg.clone())?;
    let build = move |s: &ParamStore, t: &mut sail_core::tape::Tape| {
        let m = SailModel::from_parts(cfg.clone(), s.clone())?;
        m.build_loss(t, &frames, &query, target)
    };
    grad_check(&template.store, &build, 1e-5, 1e-4)
}
