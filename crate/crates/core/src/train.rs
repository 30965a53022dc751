//! Unsupervised training loop, periodic evaluation, ablations and resume.
//!
//! Labels never reach the optimizer: training consumes only images, and the
//! optional [`EvalLabels`] are read by evaluation alone.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc::sync_channel;
use std::time::Instant;

use candle_core::Tensor;
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aug::{sample_view_set, AugError, Image, StrongAugSpec, ViewMode, WeakAugSpec};
use crate::checkpoint::{Checkpoint, CheckpointError, CheckpointHeader, RngState, TensorEntry};
use crate::data::{batch_indices, BatchMode, DataError, Dataset, EvalLabels};
use crate::kmeans::{kmeans, KMeansConfig, KMeansError};
use crate::loss::{
    l2_normalize_rows, objective_with_grad, ClusterLossConfig, InstanceLossConfig, LossError, LossReport, Objective,
    ViewOutputs,
};
use crate::metrics::{evaluate, EvalReport, LabelPair, MetricsError};
use crate::model::{images_to_batch, infer, tensor_to_rows, FeatureMap, Mode, ModelConfig, ModelError, Network};
use crate::optim::{Adam, AdamConfig};
use crate::rng::derive_seed;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Aug(#[from] AugError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    KMeans(#[from] KMeansError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("i/o error on {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("non-finite loss at step {step} (epoch {epoch}): {detail}; last good state saved to {saved:?}")]
    NonFiniteLoss {
        step: u64,
        epoch: usize,
        detail: String,
        saved: Option<PathBuf>,
    },
    #[error("checkpoint has {checkpoint} clusters but the dataset has {dataset} classes")]
    ClusterMismatch { checkpoint: usize, dataset: usize },
    #[error("dataset has {0} images; training needs at least one full batch")]
    TooFewImages(usize),
}

fn io_err(path: &Path, e: std::io::Error) -> TrainError {
    TrainError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Which contrastive projectors contribute to the loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectorMode {
    #[default]
    Both,
    /// Instance loss only; clusters come from k-means on instance features.
    InstanceOnly,
    /// Cluster loss only.
    ClusterOnly,
}

/// Training variants compared by the ablation study. `Both` and
/// `WeakWeakStrong` are the full method.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    WeakWeak,
    WeakStrong,
    WeakWeakStrong,
    WithInstanceOnly,
    WithClusterOnly,
    #[default]
    Both,
}

impl AblationMode {
    pub const ALL: [AblationMode; 6] = [
        AblationMode::WeakWeak,
        AblationMode::WeakStrong,
        AblationMode::WeakWeakStrong,
        AblationMode::WithInstanceOnly,
        AblationMode::WithClusterOnly,
        AblationMode::Both,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationMode::WeakWeak => "weak_weak",
            AblationMode::WeakStrong => "weak_strong",
            AblationMode::WeakWeakStrong => "weak_weak_strong",
            AblationMode::WithInstanceOnly => "with_instance_only",
            AblationMode::WithClusterOnly => "with_cluster_only",
            AblationMode::Both => "both",
        }
    }

    pub fn view_mode(self) -> ViewMode {
        match self {
            AblationMode::WeakWeak => ViewMode::WeakWeak,
            AblationMode::WeakStrong => ViewMode::WeakStrong,
            _ => ViewMode::WeakWeakStrong,
        }
    }

    pub fn projector(self) -> ProjectorMode {
        match self {
            AblationMode::WithInstanceOnly => ProjectorMode::InstanceOnly,
            AblationMode::WithClusterOnly => ProjectorMode::ClusterOnly,
            _ => ProjectorMode::Both,
        }
    }

    /// Modes that train identically map to the same value.
    pub fn canonical(self) -> AblationMode {
        match self {
            AblationMode::WeakWeakStrong => AblationMode::Both,
            m => m,
        }
    }

    /// Loss pairs for this variant (views: 1 strong, 2 and 3 weak).
    pub fn objective(self) -> Objective {
        let (instance_pairs, cluster_pairs) = match self.view_mode() {
            ViewMode::WeakWeak => (vec![(2, 3)], vec![(2, 3)]),
            ViewMode::WeakStrong => (vec![(1, 2)], vec![(1, 2)]),
            ViewMode::WeakWeakStrong => {
                let d = Objective::default();
                (d.instance_pairs, d.cluster_pairs)
            }
        };
        match self.projector() {
            ProjectorMode::Both => Objective {
                instance_pairs,
                cluster_pairs,
            },
            ProjectorMode::InstanceOnly => Objective {
                instance_pairs,
                cluster_pairs: vec![],
            },
            ProjectorMode::ClusterOnly => Objective {
                instance_pairs: vec![],
                cluster_pairs,
            },
        }
    }
}

impl std::str::FromStr for AblationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AblationMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown ablation mode `{s}`"))
    }
}

impl std::fmt::Display for AblationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub tau_g: f64,
    pub tau_h: f64,
    /// Keep each anchor's self-similarity in the contrastive denominators.
    pub include_self_term: bool,
    pub optimizer: OptimizerKind,
    pub betas: (f64, f64),
    pub eps: f64,
    pub seed: u64,
    /// Epochs between evaluations; 0 evaluates only at the start and end.
    pub eval_every: usize,
    /// Epochs between checkpoints; 0 writes only the final one.
    pub checkpoint_every: usize,
    /// Batches of views prepared ahead of the optimizer. Does not change results.
    pub prefetch_depth: usize,
    /// Steps between progress lines on the log; 0 disables them.
    pub log_every: usize,
    pub eval_batch_size: usize,
    pub mode: AblationMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-4,
            batch_size: 200,
            epochs: 1000,
            tau_g: 0.5,
            tau_h: 1.0,
            include_self_term: false,
            optimizer: OptimizerKind::Adam,
            betas: (0.9, 0.999),
            eps: 1e-8,
            seed: 0,
            eval_every: 100,
            checkpoint_every: 0,
            prefetch_depth: 2,
            log_every: 0,
            eval_batch_size: 256,
            mode: AblationMode::Both,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugConfig {
    pub weak: WeakAugSpec,
    pub strong: StrongAugSpec,
}

/// Everything that determines a training run apart from the data.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub aug: AugConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let t = &self.train;
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if t.batch_size < 2 {
            return bad("train.batch_size must be at least 2");
        }
        if !(t.learning_rate.is_finite() && t.learning_rate > 0.0) {
            return bad("train.learning_rate must be positive");
        }
        if !(t.tau_g.is_finite() && t.tau_g > 0.0) {
            return bad("train.tau_g must be positive");
        }
        if !(t.tau_h.is_finite() && t.tau_h > 0.0) {
            return bad("train.tau_h must be positive");
        }
        let (b1, b2) = t.betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return bad("train.betas must lie in [0, 1)");
        }
        if !(t.eps.is_finite() && t.eps > 0.0) {
            return bad("train.eps must be positive");
        }
        if t.eval_batch_size == 0 {
            return bad("train.eval_batch_size must be positive");
        }
        self.model.validate().map_err(|e| TrainError::Config(e.to_string()))?;
        self.aug.weak.validate().map_err(|e| TrainError::Config(format!("aug.weak: {e}")))?;
        self.aug.strong.validate().map_err(|e| TrainError::Config(format!("aug.strong: {e}")))?;
        Ok(())
    }

    pub fn input_size(&self) -> usize {
        self.aug.weak.output_size
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.train.learning_rate,
            beta1: self.train.betas.0,
            beta2: self.train.betas.1,
            eps: self.train.eps,
        }
    }

    fn losses(&self) -> (InstanceLossConfig, ClusterLossConfig) {
        (
            InstanceLossConfig {
                tau_g: self.train.tau_g,
                include_self_term: self.train.include_self_term,
            },
            ClusterLossConfig {
                tau_h: self.train.tau_h,
                include_self_term: self.train.include_self_term,
            },
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// 1-based global optimizer step.
    pub step: u64,
    /// 0-based epoch the step belongs to.
    pub epoch: usize,
    pub loss: LossReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalScores {
    pub nmi: f64,
    pub acc: f64,
    pub ari: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    /// Epochs completed when the evaluation ran.
    pub epoch: usize,
    pub step: u64,
    /// Absent when the dataset has no labels.
    pub scores: Option<EvalScores>,
    pub cluster_sizes: Vec<usize>,
}

/// One line of `metrics.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogRecord {
    Step(StepRecord),
    Eval(EvalRecord),
}

/// History of a run. Only `wall_clock_secs` varies between identical runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: RunConfig,
    pub steps: Vec<StepRecord>,
    pub evals: Vec<EvalRecord>,
    pub wall_clock_secs: f64,
    pub rng: RngState,
}

impl RunRecord {
    pub fn final_scores(&self) -> Option<&EvalScores> {
        self.evals.last().and_then(|e| e.scores.as_ref())
    }
}

/// Cluster predictions of a model on un-augmented images.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub predictions: Vec<usize>,
    pub report: Option<EvalReport>,
    /// Raw instance-head features.
    pub features: Array2<f64>,
    pub probabilities: Array2<f64>,
}

impl Evaluation {
    pub fn scores(&self) -> Option<EvalScores> {
        self.report.as_ref().map(|r| EvalScores {
            nmi: r.nmi,
            acc: r.acc,
            ari: r.ari,
        })
    }

    pub fn cluster_sizes(&self, k: usize) -> Vec<usize> {
        let mut sizes = vec![0; k];
        for &p in &self.predictions {
            sizes[p] += 1;
        }
        sizes
    }
}

/// Network, optimizer and counters: the full resumable training state.
#[derive(Debug)]
pub struct Trainer {
    cfg: RunConfig,
    net: Network,
    adam: Adam,
    epoch: usize,
    step: u64,
}

const VIEW_STREAM: u64 = 0x5649_4557;
const KMEANS_STREAM: u64 = 0x4b4d_4541;

struct ViewBatch {
    views: [Option<FeatureMap>; 3],
}

impl Trainer {
    pub fn new(cfg: &RunConfig) -> Result<Self, TrainError> {
        cfg.validate()?;
        let net = Network::new(&cfg.model, cfg.train.seed)?;
        let adam = Adam::new(&net, cfg.adam())?;
        Ok(Self {
            cfg: cfg.clone(),
            net,
            adam,
            epoch: 0,
            step: 0,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    /// Epochs completed.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Changes the number of epochs a resumed run trains for.
    pub fn set_epochs(&mut self, epochs: usize) {
        self.cfg.train.epochs = epochs;
    }

    fn sample_batch(cfg: &RunConfig, images: &[Image], indices: &[usize], epoch: usize) -> Result<ViewBatch, TrainError> {
        let mode = cfg.train.mode.view_mode();
        let used = cfg.train.mode.objective().views_used();
        let mut cols: [Vec<Image>; 3] = Default::default();
        for &i in indices {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.train.seed, &[VIEW_STREAM, epoch as u64, i as u64]));
            let set = sample_view_set(&images[i], &cfg.aug.weak, &cfg.aug.strong, mode, &mut rng)?;
            if let Some(s) = set.strong {
                cols[0].push(s);
            }
            cols[1].push(set.weak_a);
            if let Some(w) = set.weak_b {
                cols[2].push(w);
            }
        }
        let mut views: [Option<FeatureMap>; 3] = Default::default();
        for j in 0..3 {
            if used[j] {
                views[j] = Some(images_to_batch(&cols[j].iter().collect::<Vec<_>>())?);
            }
        }
        Ok(ViewBatch { views })
    }

    /// Forward, loss, backward and one Adam update. On a non-finite loss the
    /// parameters and running statistics are left as they were.
    fn train_step(&mut self, batch: &ViewBatch) -> Result<LossReport, TrainError> {
        let buffers: Vec<Tensor> = self
            .net
            .params()
            .iter()
            .filter(|p| !p.trainable)
            .map(|p| p.var.as_tensor().copy())
            .collect::<Result<_, _>>()
            .map_err(ModelError::from)?;
        let restore = |net: &Network| -> Result<(), TrainError> {
            for (p, b) in net.params().iter().filter(|p| !p.trainable).zip(&buffers) {
                p.var.set(b).map_err(ModelError::from)?;
            }
            Ok(())
        };
        let result = self.forward_loss(batch);
        let (report, outs, grads) = match result {
            Ok(r) => r,
            Err(e) => {
                restore(&self.net)?;
                return Err(e);
            }
        };
        if !report.is_finite() {
            restore(&self.net)?;
            return Err(TrainError::NonFiniteLoss {
                step: self.step + 1,
                epoch: self.epoch,
                detail: format!("{report:?}"),
                saved: None,
            });
        }
        let mut surrogate: Option<Tensor> = None;
        for (out, g) in outs.iter().zip(grads) {
            let (Some(out), Some(g)) = (out, g) else { continue };
            let gy = Tensor::from_vec(g.y.iter().map(|&v| v as f32).collect::<Vec<_>>(), out.y.dims(), out.y.device())
                .map_err(ModelError::from)?;
            let gc = Tensor::from_vec(g.c.iter().map(|&v| v as f32).collect::<Vec<_>>(), out.c.dims(), out.c.device())
                .map_err(ModelError::from)?;
            let term = ((&out.y * gy).map_err(ModelError::from)?.sum_all().map_err(ModelError::from)?
                + (&out.c * gc).map_err(ModelError::from)?.sum_all().map_err(ModelError::from)?)
            .map_err(ModelError::from)?;
            surrogate = Some(match surrogate {
                None => term,
                Some(s) => (s + term).map_err(ModelError::from)?,
            });
        }
        let surrogate = surrogate.expect("objective uses at least one view");
        let grads = surrogate.backward().map_err(ModelError::from)?;
        self.adam.apply(&self.net, &grads)?;
        self.step += 1;
        Ok(report)
    }

    #[allow(clippy::type_complexity)]
    fn forward_loss(
        &self,
        batch: &ViewBatch,
    ) -> Result<(LossReport, [Option<crate::model::Embeddings>; 3], [Option<crate::loss::ViewGradient>; 3]), TrainError> {
        let mut outs: [Option<crate::model::Embeddings>; 3] = Default::default();
        let mut rows: [Option<(Array2<f64>, Array2<f64>)>; 3] = Default::default();
        for j in 0..3 {
            if let Some(x) = &batch.views[j] {
                let e = self.net.forward(x, Mode::Train)?;
                rows[j] = Some((tensor_to_rows(&e.y)?, tensor_to_rows(&e.c)?));
                outs[j] = Some(e);
            }
        }
        let views: [Option<ViewOutputs<'_>>; 3] = std::array::from_fn(|j| {
            rows[j].as_ref().map(|(y, c)| ViewOutputs { y: y.view(), c: c.view() })
        });
        let (inst, clu) = self.cfg.losses();
        let (report, grads) = objective_with_grad(&views, &self.cfg.train.mode.objective(), &inst, &clu)?;
        Ok((report, outs, grads))
    }

    /// Runs one epoch over `images`. `on_step` sees every step record.
    pub fn run_epoch(
        &mut self,
        images: &[Image],
        on_step: &mut dyn FnMut(&StepRecord) -> Result<(), TrainError>,
    ) -> Result<(), TrainError> {
        let epoch = self.epoch;
        let plan = batch_indices(images.len(), self.cfg.train.batch_size, BatchMode::Train, self.cfg.train.seed, epoch as u64)?;
        if plan.is_empty() {
            return Err(TrainError::TooFewImages(images.len()));
        }
        let depth = self.cfg.train.prefetch_depth;
        let cfg = self.cfg.clone();
        if depth == 0 {
            for indices in &plan {
                let batch = Self::sample_batch(&cfg, images, indices, epoch)?;
                self.step_and_report(&batch, on_step)?;
            }
        } else {
            std::thread::scope(|scope| -> Result<(), TrainError> {
                let (tx, rx) = sync_channel::<Result<ViewBatch, TrainError>>(depth);
                let plan = &plan;
                let cfg = &cfg;
                scope.spawn(move || {
                    for indices in plan {
                        if tx.send(Self::sample_batch(cfg, images, indices, epoch)).is_err() {
                            break;
                        }
                    }
                });
                for batch in rx.iter().take(plan.len()) {
                    self.step_and_report(&batch?, on_step)?;
                }
                Ok(())
            })?;
        }
        self.epoch += 1;
        Ok(())
    }

    fn step_and_report(
        &mut self,
        batch: &ViewBatch,
        on_step: &mut dyn FnMut(&StepRecord) -> Result<(), TrainError>,
    ) -> Result<(), TrainError> {
        let loss = self.train_step(batch)?;
        on_step(&StepRecord {
            step: self.step,
            epoch: self.epoch,
            loss,
        })
    }

    /// Predicts a cluster per image on resize-only inputs. With the
    /// instance-only variant, clusters come from k-means on L2-normalised
    /// instance features.
    pub fn evaluate(&self, images: &[Image], labels: Option<&EvalLabels>) -> Result<Evaluation, TrainError> {
        evaluate_network(&self.net, &self.cfg, images, labels)
    }

    pub fn checkpoint(&self) -> Result<Checkpoint, TrainError> {
        let mut tensors = Vec::new();
        let mut data = Vec::new();
        let mut push = |name: String, t: &Tensor| -> Result<(), TrainError> {
            tensors.push(TensorEntry {
                name,
                shape: t.dims().to_vec(),
            });
            data.push(t.flatten_all().and_then(|f| f.to_vec1::<f32>()).map_err(ModelError::from)?);
            Ok(())
        };
        for p in self.net.params() {
            push(format!("param/{}", p.name), p.var.as_tensor())?;
        }
        for (i, p) in self.net.trainable().enumerate() {
            push(format!("adam.m/{}", p.name), &self.adam.m[i])?;
            push(format!("adam.v/{}", p.name), &self.adam.v[i])?;
        }
        Ok(Checkpoint {
            header: CheckpointHeader {
                config: serde_json::to_value(&self.cfg).expect("config serializes"),
                epoch: self.epoch,
                step: self.step,
                rng: RngState {
                    seed: self.cfg.train.seed,
                    next_epoch: self.epoch,
                },
                tensors,
            },
            data,
        })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, TrainError> {
        let cfg: RunConfig = serde_json::from_value(ckpt.header.config.clone())
            .map_err(|e| TrainError::Checkpoint(CheckpointError::Header(e.to_string())))?;
        let mut trainer = Trainer::new(&cfg)?;
        let load = |name: String, target: &Tensor| -> Result<Tensor, TrainError> {
            let (entry, values) = ckpt.tensor(&name)?;
            if entry.shape != target.dims() {
                return Err(CheckpointError::Shape {
                    name,
                    expected: target.dims().to_vec(),
                    found: entry.shape.clone(),
                }
                .into());
            }
            Ok(Tensor::from_vec(values.to_vec(), target.dims(), target.device()).map_err(ModelError::from)?)
        };
        for p in trainer.net.params() {
            let t = load(format!("param/{}", p.name), p.var.as_tensor())?;
            p.var.set(&t).map_err(ModelError::from)?;
        }
        let names: Vec<(usize, String)> = trainer.net.trainable().map(|p| p.name.clone()).enumerate().collect();
        for (i, name) in names {
            trainer.adam.m[i] = load(format!("adam.m/{name}"), &trainer.adam.m[i].clone())?;
            trainer.adam.v[i] = load(format!("adam.v/{name}"), &trainer.adam.v[i].clone())?;
        }
        trainer.adam.step = ckpt.header.step;
        trainer.epoch = ckpt.header.epoch;
        trainer.step = ckpt.header.step;
        Ok(trainer)
    }
}

/// Evaluation shared by training and stand-alone checkpoint scoring.
pub fn evaluate_network(
    net: &Network,
    cfg: &RunConfig,
    images: &[Image],
    labels: Option<&EvalLabels>,
) -> Result<Evaluation, TrainError> {
    let (features, probabilities) = infer(net, images, cfg.input_size(), cfg.train.eval_batch_size)?;
    let predictions = if cfg.train.mode.projector() == ProjectorMode::InstanceOnly {
        let normed = l2_normalize_rows(features.view());
        let mut km = KMeansConfig::new(net.num_clusters(), derive_seed(cfg.train.seed, &[KMEANS_STREAM]));
        km.restarts = 5;
        kmeans(normed.view(), &km)?.labels
    } else {
        probabilities.rows().into_iter().map(crate::loss::argmax).collect()
    };
    let report = match labels {
        Some(l) => Some(evaluate(&LabelPair::new(l.as_slice().to_vec(), predictions.clone())?)?),
        None => None,
    };
    Ok(Evaluation {
        predictions,
        report,
        features,
        probabilities,
    })
}

/// Where and how a run writes its artifacts.
#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Receives `metrics.jsonl`, `run_record.json`, checkpoints and
    /// `embeddings.json`. Nothing is written when absent.
    pub out_dir: Option<PathBuf>,
    /// Continue from this state instead of a fresh initialisation.
    pub resume: Option<Checkpoint>,
}

pub struct TrainOutcome {
    pub record: RunRecord,
    pub trainer: Trainer,
    pub final_eval: Evaluation,
}

struct MetricsLog {
    out: Option<BufWriter<File>>,
    path: PathBuf,
}

impl MetricsLog {
    fn open(dir: Option<&Path>, append: bool) -> Result<Self, TrainError> {
        let Some(dir) = dir else {
            return Ok(Self {
                out: None,
                path: PathBuf::new(),
            });
        };
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let path = dir.join("metrics.jsonl");
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .append(append)
            .truncate(!append)
            .open(&path)
            .map_err(|e| io_err(&path, e))?;
        Ok(Self {
            out: Some(BufWriter::new(file)),
            path,
        })
    }

    fn write(&mut self, rec: &LogRecord) -> Result<(), TrainError> {
        if let Some(w) = &mut self.out {
            let line = serde_json::to_string(rec).expect("record serializes");
            writeln!(w, "{line}").map_err(|e| io_err(&self.path, e))?;
        }
        Ok(())
    }

    fn flush(&mut self) -> Result<(), TrainError> {
        if let Some(w) = &mut self.out {
            w.flush().map_err(|e| io_err(&self.path, e))?;
        }
        Ok(())
    }
}

/// Saved next to a run for plotting.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EmbeddingDump {
    pub features: Vec<Vec<f32>>,
    pub predictions: Vec<usize>,
    pub labels: Option<Vec<usize>>,
}

/// At most this many samples go into `embeddings.json`.
pub const EMBEDDING_DUMP_LIMIT: usize = 5000;

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), TrainError> {
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn evaluate_and_log(
    trainer: &Trainer,
    images: &[Image],
    labels: Option<&EvalLabels>,
    log: &mut MetricsLog,
    evals: &mut Vec<EvalRecord>,
) -> Result<Evaluation, TrainError> {
    let ev = trainer.evaluate(images, labels)?;
    let rec = EvalRecord {
        epoch: trainer.epoch,
        step: trainer.step,
        scores: ev.scores(),
        cluster_sizes: ev.cluster_sizes(trainer.net.num_clusters()),
    };
    if let Some(s) = &rec.scores {
        log::info!(
            "epoch {} step {}: NMI {:.4} ACC {:.4} ARI {:.4}",
            rec.epoch,
            rec.step,
            s.nmi,
            s.acc,
            s.ari
        );
    }
    log.write(&LogRecord::Eval(rec.clone()))?;
    evals.push(rec);
    Ok(ev)
}

/// Trains on `images` for `cfg.train.epochs` epochs (counting epochs already
/// done when resuming). `labels` are used only for the periodic evaluations.
pub fn train(
    cfg: &RunConfig,
    images: &[Image],
    labels: Option<&EvalLabels>,
    opts: &TrainOptions,
) -> Result<TrainOutcome, TrainError> {
    let start = Instant::now();
    let (mut trainer, resumed) = match &opts.resume {
        Some(ckpt) => {
            let mut t = Trainer::from_checkpoint(ckpt)?;
            t.set_epochs(cfg.train.epochs);
            (t, true)
        }
        None => (Trainer::new(cfg)?, false),
    };
    if images.len() < trainer.cfg.train.batch_size {
        return Err(TrainError::TooFewImages(images.len()));
    }
    let dir = opts.out_dir.as_deref();
    let mut log = MetricsLog::open(dir, resumed)?;
    if let Some(d) = dir {
        write_json(&d.join("config.json"), &trainer.cfg)?;
    }
    let mut steps = Vec::new();
    let mut evals = Vec::new();
    let epochs = trainer.cfg.train.epochs;
    let eval_every = trainer.cfg.train.eval_every;
    let ckpt_every = trainer.cfg.train.checkpoint_every;
    let log_every = trainer.cfg.train.log_every;

    let mut last_eval = None;
    if !resumed {
        last_eval = Some(evaluate_and_log(&trainer, images, labels, &mut log, &mut evals)?);
    }
    while trainer.epoch < epochs {
        let mut on_step = |rec: &StepRecord| -> Result<(), TrainError> {
            if log_every > 0 && rec.step % log_every as u64 == 0 {
                log::info!("epoch {} step {} loss {:.5}", rec.epoch, rec.step, rec.loss.total);
            }
            log.write(&LogRecord::Step(rec.clone()))?;
            steps.push(rec.clone());
            Ok(())
        };
        if let Err(e) = trainer.run_epoch(images, &mut on_step) {
            log.flush()?;
            return Err(match (e, dir) {
                (TrainError::NonFiniteLoss { step, epoch, detail, .. }, Some(d)) => {
                    let path = d.join("last_good.ckpt");
                    trainer.checkpoint()?.save(&path)?;
                    TrainError::NonFiniteLoss {
                        step,
                        epoch,
                        detail,
                        saved: Some(path),
                    }
                }
                (TrainError::Model(ModelError::NonFinite { index, layer, stats }), Some(d)) => {
                    let path = d.join("last_good.ckpt");
                    trainer.checkpoint()?.save(&path)?;
                    TrainError::NonFiniteLoss {
                        step: trainer.step + 1,
                        epoch: trainer.epoch,
                        detail: format!("layer {index} ({layer}): {stats}"),
                        saved: Some(path),
                    }
                }
                (e, _) => e,
            });
        }
        let e = trainer.epoch;
        last_eval = None;
        if e == epochs || (eval_every > 0 && e % eval_every == 0) {
            last_eval = Some(evaluate_and_log(&trainer, images, labels, &mut log, &mut evals)?);
        }
        if let Some(d) = dir {
            if ckpt_every > 0 && e % ckpt_every == 0 && e != epochs {
                trainer.checkpoint()?.save(&d.join(format!("epoch_{e:05}.ckpt")))?;
            }
        }
        log.flush()?;
    }
    let final_eval = match last_eval {
        Some(ev) => ev,
        None => evaluate_and_log(&trainer, images, labels, &mut log, &mut evals)?,
    };
    log.flush()?;
    let record = RunRecord {
        config: trainer.cfg.clone(),
        steps,
        evals,
        wall_clock_secs: start.elapsed().as_secs_f64(),
        rng: RngState {
            seed: trainer.cfg.train.seed,
            next_epoch: trainer.epoch,
        },
    };
    if let Some(d) = dir {
        trainer.checkpoint()?.save(&d.join("final.ckpt"))?;
        write_json(&d.join("run_record.json"), &record)?;
        let limit = images.len().min(EMBEDDING_DUMP_LIMIT);
        let dump = EmbeddingDump {
            features: final_eval
                .features
                .rows()
                .into_iter()
                .take(limit)
                .map(|r| r.iter().map(|&v| v as f32).collect())
                .collect(),
            predictions: final_eval.predictions[..limit].to_vec(),
            labels: labels.map(|l| l.as_slice()[..limit].to_vec()),
        };
        write_json(&d.join("embeddings.json"), &dump)?;
    }
    Ok(TrainOutcome {
        record,
        trainer,
        final_eval,
    })
}

/// Trains on a dataset, passing its labels to evaluation only.
pub fn train_dataset(cfg: &RunConfig, data: &Dataset, opts: &TrainOptions) -> Result<TrainOutcome, TrainError> {
    train(cfg, data.images(), data.labels(), opts)
}

/// Scores a checkpoint on a labelled dataset.
pub fn evaluate_checkpoint(ckpt: &Checkpoint, data: &Dataset) -> Result<Evaluation, TrainError> {
    let trainer = Trainer::from_checkpoint(ckpt)?;
    let k = trainer.net.num_clusters();
    if k != data.num_classes() {
        return Err(TrainError::ClusterMismatch {
            checkpoint: k,
            dataset: data.num_classes(),
        });
    }
    trainer.evaluate(data.images(), data.labels())
}

/// One row of an ablation table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub mode: AblationMode,
    pub seed: u64,
    pub scores: EvalScores,
}

/// Trains each requested variant once per seed. Variants that train
/// identically share one run.
pub fn ablate(
    base: &RunConfig,
    data: &Dataset,
    modes: &[AblationMode],
    seeds: &[u64],
) -> Result<Vec<AblationRow>, TrainError> {
    if data.labels().is_none() {
        return Err(TrainError::Config("ablation needs a labelled dataset".into()));
    }
    let mut cache: Vec<((AblationMode, u64), EvalScores)> = Vec::new();
    let mut rows = Vec::new();
    for &seed in seeds {
        for &mode in modes {
            let key = (mode.canonical(), seed);
            let scores = match cache.iter().find(|(k, _)| *k == key) {
                Some((_, s)) => s.clone(),
                None => {
                    let mut cfg = base.clone();
                    cfg.train.mode = mode;
                    cfg.train.seed = seed;
                    let out = train_dataset(&cfg, data, &TrainOptions::default())?;
                    let s = out.final_eval.scores().expect("labelled dataset");
                    cache.push((key, s.clone()));
                    s
                }
            };
            rows.push(AblationRow { mode, seed, scores });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_synthetic, SyntheticSpec};

    fn tiny() -> (RunConfig, Dataset) {
        let data = make_synthetic(&SyntheticSpec {
            num_classes: 2,
            per_class: 8,
            image_size: (16, 16),
            ..SyntheticSpec::default()
        })
        .unwrap();
        let mut cfg = RunConfig::default();
        cfg.model = ModelConfig::small(2);
        cfg.aug.weak.output_size = 16;
        cfg.train.batch_size = 8;
        cfg.train.epochs = 2;
        cfg.train.eval_every = 1;
        (cfg, data)
    }

    #[test]
    fn objectives_per_mode() {
        assert_eq!(AblationMode::WeakWeak.objective().views_used(), [false, true, true]);
        assert_eq!(AblationMode::WeakStrong.objective().views_used(), [true, true, false]);
        assert_eq!(AblationMode::Both.objective(), Objective::default());
        assert_eq!(AblationMode::Both.objective(), AblationMode::WeakWeakStrong.objective());
        assert!(AblationMode::WithClusterOnly.objective().instance_pairs.is_empty());
        assert!(AblationMode::WithInstanceOnly.objective().cluster_pairs.is_empty());
        assert_eq!("with_cluster_only".parse::<AblationMode>().unwrap(), AblationMode::WithClusterOnly);
        assert!("bogus".parse::<AblationMode>().is_err());
    }

    #[test]
    fn zero_epochs_records_only_initial_eval() {
        let (mut cfg, data) = tiny();
        cfg.train.epochs = 0;
        let out = train_dataset(&cfg, &data, &TrainOptions::default()).unwrap();
        assert!(out.record.steps.is_empty());
        assert_eq!(out.record.evals.len(), 1);
        assert_eq!(out.record.evals[0].epoch, 0);
    }

    #[test]
    fn eval_schedule_and_step_count() {
        let (cfg, data) = tiny();
        let out = train_dataset(&cfg, &data, &TrainOptions::default()).unwrap();
        assert_eq!(out.record.steps.len(), 4);
        assert_eq!(out.record.evals.iter().map(|e| e.epoch).collect::<Vec<_>>(), vec![0, 1, 2]);
        let steps: Vec<u64> = out.record.steps.iter().map(|s| s.step).collect();
        assert_eq!(steps, vec![1, 2, 3, 4]);
    }

    #[test]
    fn prefetch_depth_does_not_change_results() {
        let (mut cfg, data) = tiny();
        cfg.train.prefetch_depth = 0;
        let a = train_dataset(&cfg, &data, &TrainOptions::default()).unwrap();
        cfg.train.prefetch_depth = 3;
        let b = train_dataset(&cfg, &data, &TrainOptions::default()).unwrap();
        assert_eq!(a.record.steps, b.record.steps);
    }

    #[test]
    fn batch_larger_than_dataset_is_rejected() {
        let (mut cfg, data) = tiny();
        cfg.train.batch_size = 64;
        assert!(matches!(
            train_dataset(&cfg, &data, &TrainOptions::default()),
            Err(TrainError::TooFewImages(16))
        ));
    }

    #[test]
    fn checkpoint_round_trip_preserves_evaluation() {
        let (cfg, data) = tiny();
        let out = train_dataset(&cfg, &data, &TrainOptions::default()).unwrap();
        let ckpt = out.trainer.checkpoint().unwrap();
        let bytes = ckpt.to_bytes();
        let restored = Trainer::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
        let a = out.trainer.evaluate(data.images(), data.labels()).unwrap();
        let b = restored.evaluate(data.images(), data.labels()).unwrap();
        assert_eq!(a.predictions, b.predictions);
        assert_eq!(a.probabilities, b.probabilities);
        assert_eq!(restored.checkpoint().unwrap().to_bytes(), bytes);
    }

    #[test]
    fn cluster_mismatch_is_reported() {
        let (cfg, data) = tiny();
        let ckpt = Trainer::new(&cfg).unwrap().checkpoint().unwrap();
        let other = make_synthetic(&SyntheticSpec {
            num_classes: 3,
            per_class: 8,
            image_size: (16, 16),
            ..SyntheticSpec::default()
        })
        .unwrap();
        assert!(matches!(
            evaluate_checkpoint(&ckpt, &other),
            Err(TrainError::ClusterMismatch { checkpoint: 2, dataset: 3 })
        ));
        assert!(evaluate_checkpoint(&ckpt, &data).is_ok());
    }

    #[test]
    fn huge_learning_rate_halts_with_last_good_checkpoint() {
        let (mut cfg, data) = tiny();
        cfg.train.learning_rate = 1e30;
        cfg.train.epochs = 3;
        let dir = tempfile::tempdir().unwrap();
        let opts = TrainOptions {
            out_dir: Some(dir.path().to_path_buf()),
            resume: None,
        };
        match train_dataset(&cfg, &data, &opts) {
            Err(TrainError::NonFiniteLoss { saved: Some(p), step, .. }) => {
                assert!(step >= 2);
                let ckpt = Checkpoint::load(&p).unwrap();
                assert_eq!(ckpt.header.step, step - 1);
                assert!(ckpt.data.iter().flatten().all(|v| v.is_finite()));
            }
            Err(e) => panic!("unexpected error {e}"),
            Ok(_) => panic!("training with lr 1e30 should diverge"),
        }
    }

    #[test]
    fn invalid_config_names_the_key() {
        let (mut cfg, _) = tiny();
        cfg.train.batch_size = 1;
        let err = Trainer::new(&cfg).unwrap_err().to_string();
        assert!(err.contains("train.batch_size"), "{err}");
    }
}
