//! Per-point MLP trained under the adaptive robust loss, with learning-curve
//! monitoring and label refurbishment between epochs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corrector::{refurbish_sample, CorrectionReport, CorrectorConfig, CorrectorError};
use crate::curvefit::{detect_correction, FitError, LearningCurve};
use crate::eval::{confusion, miou};
use crate::geometry::{cluster_non_ground, fit_ground, ClusterParams, ClusterSet, GroundModel, SpatialGrid};
use crate::history::{HistoryError, PredictionHistory};
use crate::loss::{arl, softmax, softmax_ce, LogitsBatch, LossConfig, LossError, Phase};
use crate::scene::{self, SampleScene, UNLABELED};

/// Feature channels per point.
///
/// | index | feature                                             |
/// |-------|-----------------------------------------------------|
/// | 0-2   | x, y, z (meters)                                    |
/// | 3     | height above the fitted ground plane (meters)       |
/// | 4     | ln(neighbors within 0.6 m, self included)           |
/// | 5     | cluster-size bucket: `floor(log2 size) + 1`, 0 for  |
/// |       | ground and noise points                             |
pub const FEATURE_DIM: usize = 6;
pub const NEIGHBOR_RADIUS: f64 = 0.6;
pub const GROUND_ITERATIONS: usize = 200;
pub const GROUND_TOL: f64 = 0.2;
const GROUND_SEED: u64 = 0;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("sample {sample}: {reason}")]
    InvalidSample { sample: String, reason: String },
    #[error("feature dimension {found} does not match model input {expected}")]
    FeatureDim { expected: usize, found: usize },
    #[error("training diverged at epoch {epoch} on sample {sample}: loss = {loss}")]
    Diverged { epoch: usize, sample: String, loss: f64 },
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    History(#[from] HistoryError),
    #[error(transparent)]
    Corrector(#[from] CorrectorError),
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Which objective and correction loop to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Warmup loss, curve-triggered refurbishment, then the robust loss.
    #[default]
    Adaco,
    /// Plain cross-entropy on the given labels, never corrected.
    CeBaseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub hidden: usize,
    pub seed: u64,
    /// Untracked warmup passes before epoch 1.
    pub burn_in_epochs: usize,
    /// Cosine annealing restarted every `epochs / 4` epochs; constant lr
    /// otherwise.
    pub cosine_restarts: bool,
    pub method: Method,
    pub corrector: CorrectorConfig,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            lr: 0.05,
            batch_size: 256,
            momentum: 0.9,
            weight_decay: 0.0,
            hidden: 64,
            seed: 0,
            burn_in_epochs: 1,
            cosine_restarts: true,
            method: Method::Adaco,
            corrector: CorrectorConfig::default(),
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if self.epochs < 1 {
            return bad("epochs must be at least 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr = {} must be positive", self.lr));
        }
        if self.batch_size < 1 {
            return bad("batch_size must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum = {} not in [0, 1)", self.momentum));
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!("weight_decay = {} is negative", self.weight_decay));
        }
        if self.hidden < 1 {
            return bad("hidden must be at least 1".into());
        }
        if self.loss.use_feature_mse {
            return bad("feature MSE needs camera features, which training does not take".into());
        }
        self.corrector.validate()?;
        Ok(())
    }

    pub fn cluster_params(&self) -> ClusterParams {
        ClusterParams {
            eps: self.corrector.eps,
            min_pts: self.corrector.min_pts,
            block: self.corrector.block,
        }
    }

    /// Learning rate for 1-based `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if !self.cosine_restarts {
            return self.lr;
        }
        let period = (self.epochs / 4).max(1);
        let phase = ((epoch - 1) % period) as f64 / period as f64;
        0.5 * self.lr * (1.0 + (std::f64::consts::PI * phase).cos())
    }
}

/// A training sample. Carries only what training may read: no clean labels.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub id: String,
    pub points: Vec<[f64; 3]>,
    pub labels: Vec<u16>,
    pub num_classes: usize,
}

impl TrainSample {
    pub fn from_scene(scene: &SampleScene) -> Self {
        Self {
            id: scene.id.clone(),
            points: scene.points_f64(),
            labels: scene.noisy_labels.clone(),
            num_classes: scene.num_classes,
        }
    }
}

/// Geometry shared by featurization and refurbishment.
#[derive(Debug, Clone)]
pub struct SceneGeometry {
    pub ground: GroundModel,
    pub ground_mask: Vec<bool>,
    pub clusters: ClusterSet,
}

impl SceneGeometry {
    pub fn compute(points: &[[f64; 3]], params: ClusterParams) -> Result<Self, TrainError> {
        let (ground, ground_mask) = match fit_ground(points, GROUND_ITERATIONS, GROUND_TOL, GROUND_SEED) {
            Ok(fit) => fit,
            Err(_) => {
                let flat = GroundModel::flat(GROUND_TOL);
                let mask = points.iter().map(|&p| flat.height(p).abs() <= GROUND_TOL).collect();
                (flat, mask)
            }
        };
        let clusters = cluster_non_ground(points, &ground_mask, params)?;
        Ok(Self {
            ground,
            ground_mask,
            clusters,
        })
    }
}

/// Row-major `N x FEATURE_DIM` features.
pub fn featurize(points: &[[f64; 3]], geometry: &SceneGeometry) -> Vec<f64> {
    let grid = SpatialGrid::new(points, NEIGHBOR_RADIUS);
    let sizes = geometry.clusters.sizes();
    let mut out = Vec::with_capacity(points.len() * FEATURE_DIM);
    for (i, &p) in points.iter().enumerate() {
        let neighbors = grid.count_within(p, NEIGHBOR_RADIUS).max(1);
        let c = geometry.clusters.assignment[i];
        let bucket = if c >= 0 {
            (sizes[c as usize] as f64).log2().floor() + 1.0
        } else {
            0.0
        };
        out.extend_from_slice(&[
            p[0],
            p[1],
            p[2],
            geometry.ground.height(p),
            (neighbors as f64).ln(),
            bucket,
        ]);
    }
    out
}

/// One-hidden-layer ReLU network, `F -> H -> K`, on standardized inputs
/// `(x - shift) * scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub input: usize,
    pub hidden: usize,
    pub classes: usize,
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
    /// `H x F`, row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// `K x H`, row-major.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"ADACOMLP";
const CHECKPOINT_VERSION: u32 = 1;

impl ModelParams {
    pub fn zeros(input: usize, hidden: usize, classes: usize) -> Self {
        Self {
            input,
            hidden,
            classes,
            shift: vec![0.0; input],
            scale: vec![1.0; input],
            w1: vec![0.0; hidden * input],
            b1: vec![0.0; hidden],
            w2: vec![0.0; classes * hidden],
            b2: vec![0.0; classes],
        }
    }

    /// He-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(input: usize, hidden: usize, classes: usize, rng: &mut R) -> Self {
        let mut m = Self::zeros(input, hidden, classes);
        let l1 = (6.0 / input as f64).sqrt();
        let l2 = (6.0 / hidden as f64).sqrt();
        m.w1.iter_mut().for_each(|w| *w = rng.random_range(-l1..l1));
        m.w2.iter_mut().for_each(|w| *w = rng.random_range(-l2..l2));
        m
    }

    /// Set the input standardization from row-major features.
    pub fn fit_standardization(&mut self, features: &[&[f64]]) {
        let f = self.input;
        let mut sum = vec![0.0; f];
        let mut sq = vec![0.0; f];
        let mut n = 0usize;
        for block in features {
            for row in block.chunks_exact(f) {
                for (j, &v) in row.iter().enumerate() {
                    sum[j] += v;
                    sq[j] += v * v;
                }
                n += 1;
            }
        }
        if n == 0 {
            return;
        }
        for j in 0..f {
            let mean = sum[j] / n as f64;
            let var = (sq[j] / n as f64 - mean * mean).max(0.0);
            self.shift[j] = mean;
            self.scale[j] = if var > 1e-12 { 1.0 / var.sqrt() } else { 1.0 };
        }
    }

    fn standardize(&self, x: &[f64], out: &mut [f64]) {
        for ((o, v), (s, c)) in out.iter_mut().zip(x).zip(self.shift.iter().zip(&self.scale)) {
            *o = (v - s) * c;
        }
    }

    pub fn is_finite(&self) -> bool {
        [&self.shift, &self.scale, &self.w1, &self.b1, &self.w2, &self.b2]
            .iter()
            .all(|v| v.iter().all(|x| x.is_finite()))
    }

    /// `x` must already be standardized.
    fn hidden_of(&self, x: &[f64], h: &mut [f64]) {
        for (j, hj) in h.iter_mut().enumerate() {
            let row = &self.w1[j * self.input..(j + 1) * self.input];
            let z: f64 = self.b1[j] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
            *hj = z.max(0.0);
        }
    }

    fn logits_of(&self, h: &[f64], out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            let row = &self.w2[k * self.hidden..(k + 1) * self.hidden];
            *o = self.b2[k] + row.iter().zip(h).map(|(w, v)| w * v).sum::<f64>();
        }
    }

    /// Row-major `N x K` logits for row-major `N x F` features.
    pub fn logits(&self, features: &[f64]) -> Result<Vec<f64>, TrainError> {
        if features.len() % self.input != 0 {
            return Err(TrainError::FeatureDim {
                expected: self.input,
                found: features.len(),
            });
        }
        let n = features.len() / self.input;
        let mut out = vec![0.0; n * self.classes];
        let mut h = vec![0.0; self.hidden];
        let mut xs = vec![0.0; self.input];
        for (x, o) in features.chunks_exact(self.input).zip(out.chunks_exact_mut(self.classes)) {
            self.standardize(x, &mut xs);
            self.hidden_of(&xs, &mut h);
            self.logits_of(&h, o);
        }
        Ok(out)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        for v in [CHECKPOINT_VERSION, self.input as u32, self.hidden as u32, self.classes as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for blob in [&self.shift, &self.scale, &self.w1, &self.b1, &self.w2, &self.b2] {
            for &x in blob.iter() {
                out.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        out
    }

    /// Parse a checkpoint: `ADACOMLP`, then u32 version, F, H, K, then
    /// little-endian f32 blobs `shift (F)`, `scale (F)`, `w1 (HxF)`, `b1 (H)`,
    /// `w2 (KxH)`, `b2 (K)`.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TrainError> {
        let bad = |m: &str| TrainError::Checkpoint(m.to_string());
        if bytes.len() < 24 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(bad("missing magic"));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap());
        if word(0) != CHECKPOINT_VERSION {
            return Err(bad("unsupported version"));
        }
        let (f, h, k) = (word(1) as usize, word(2) as usize, word(3) as usize);
        if f == 0 || h == 0 || k < 2 {
            return Err(bad("degenerate shape"));
        }
        let count = 2 * f + h * f + h + k * h + k;
        let body = &bytes[24..];
        if body.len() != 4 * count {
            return Err(bad("weight blob length does not match shape"));
        }
        let vals: Vec<f64> = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        let (shift, rest) = vals.split_at(f);
        let (scale, rest) = rest.split_at(f);
        let (w1, rest) = rest.split_at(h * f);
        let (b1, rest) = rest.split_at(h);
        let (w2, b2) = rest.split_at(k * h);
        let m = Self {
            input: f,
            hidden: h,
            classes: k,
            shift: shift.to_vec(),
            scale: scale.to_vec(),
            w1: w1.to_vec(),
            b1: b1.to_vec(),
            w2: w2.to_vec(),
            b2: b2.to_vec(),
        };
        if !m.is_finite() {
            return Err(bad("non-finite weights"));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        fs::write(path, self.to_bytes()).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        Self::from_bytes(&fs::read(path).map_err(io_err(path))?)
    }
}

/// Hard labels (lowest index on ties) and row-major `N x K` probabilities.
pub fn predict(model: &ModelParams, features: &[f64]) -> Result<(Vec<u16>, Vec<f64>), TrainError> {
    let logits = model.logits(features)?;
    let k = model.classes;
    let mut labels = Vec::with_capacity(logits.len() / k);
    let mut probs = Vec::with_capacity(logits.len());
    for row in logits.chunks_exact(k) {
        let p = softmax(row);
        labels.push(crate::history::argmax_lowest(&p) as u16);
        probs.extend(p);
    }
    Ok((labels, probs))
}

/// Featurize a scene and predict its labels.
pub fn predict_scene(
    model: &ModelParams,
    scene: &SampleScene,
    params: ClusterParams,
) -> Result<Vec<u16>, TrainError> {
    let pts = scene.points_f64();
    let geometry = SceneGeometry::compute(&pts, params)?;
    Ok(predict(model, &featurize(&pts, &geometry))?.0)
}

/// Gradient buffers mirroring [`ModelParams`].
struct Grads(ModelParams);

impl Grads {
    fn zero(&mut self) {
        for v in [&mut self.0.w1, &mut self.0.b1, &mut self.0.w2, &mut self.0.b2] {
            v.iter_mut().for_each(|x| *x = 0.0);
        }
    }
}

/// Per-epoch summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub mean_loss: f64,
    pub mean_train_miou: f64,
    pub corrected_samples: usize,
    pub corrections: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: ModelParams,
    pub curves: Vec<LearningCurve>,
    pub reports: Vec<CorrectionReport>,
    /// Final (possibly refurbished) labels per sample.
    pub labels: Vec<Vec<u16>>,
    pub epochs: Vec<EpochStats>,
}

struct SampleState {
    features: Vec<f64>,
    geometry: SceneGeometry,
    labels: Vec<u16>,
    history: PredictionHistory,
    curve: LearningCurve,
}

fn check_dataset(dataset: &[TrainSample]) -> Result<usize, TrainError> {
    let first = dataset.first().ok_or(TrainError::EmptyDataset)?;
    let k = first.num_classes;
    for s in dataset {
        let bad = |reason: String| TrainError::InvalidSample {
            sample: s.id.clone(),
            reason,
        };
        if s.num_classes != k {
            return Err(bad(format!("{} classes, expected {k}", s.num_classes)));
        }
        if s.labels.len() != s.points.len() {
            return Err(bad(format!("{} labels for {} points", s.labels.len(), s.points.len())));
        }
        scene::validate_labels(&s.labels, k).map_err(|e| bad(e.to_string()))?;
    }
    if k < 2 {
        return Err(TrainError::InvalidConfig("need at least 2 classes".into()));
    }
    Ok(k)
}

/// Training mIoU against the current labels; 0 when undefined.
fn train_miou(labels: &[u16], preds: &[u16], k: usize) -> f64 {
    confusion(labels, preds, k)
        .ok()
        .and_then(|cm| miou(&cm).ok())
        .map_or(0.0, |(m, _)| m)
}

/// Train on `dataset` with refurbishment between epochs.
pub fn train(dataset: &[TrainSample], cfg: &TrainConfig) -> Result<TrainOutput, TrainError> {
    cfg.validate()?;
    let k = check_dataset(dataset)?;
    let params = cfg.cluster_params();
    let mut states: Vec<SampleState> = dataset
        .par_iter()
        .map(|s| {
            let geometry = SceneGeometry::compute(&s.points, params)?;
            Ok(SampleState {
                features: featurize(&s.points, &geometry),
                geometry,
                labels: s.labels.clone(),
                history: PredictionHistory::new(s.points.len(), k, cfg.corrector.t_m)?,
                curve: LearningCurve::new(s.id.clone()),
            })
        })
        .collect::<Result<_, TrainError>>()?;

    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(1);
    let mut opt = Optimizer {
        model: {
            let mut m = ModelParams::init(FEATURE_DIM, cfg.hidden, k, &mut init_rng);
            let blocks: Vec<&[f64]> = states.iter().map(|s| s.features.as_slice()).collect();
            m.fit_standardization(&blocks);
            m
        },
        grads: Grads(ModelParams::zeros(FEATURE_DIM, cfg.hidden, k)),
        velocity: Grads(ModelParams::zeros(FEATURE_DIM, cfg.hidden, k)),
    };
    for _ in 0..cfg.burn_in_epochs {
        sgd_pass(&mut opt, &states, &mut shuffle_rng, cfg.lr, cfg, 0)?;
    }
    let correcting = cfg.method == Method::Adaco;
    let schedule = cfg.corrector.schedule();
    let mut reports = Vec::new();
    let mut epochs = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let preds: Vec<Vec<u16>> = states
            .par_iter()
            .map(|s| predict(&opt.model, &s.features).map(|(l, _)| l))
            .collect::<Result<_, _>>()?;
        let mut corrections = 0;
        for (idx, (state, pred)) in states.iter_mut().zip(&preds).enumerate() {
            state.history.record(pred)?;
            state.curve.push(train_miou(&state.labels, pred, k));
            if let Err(e) = state.curve.refit() {
                log::warn!("{}: curve fit failed at epoch {epoch}: {e}", state.curve.sample_id);
            }
            if !correcting {
                continue;
            }
            let fired = match detect_correction(&state.curve, cfg.corrector.r, schedule) {
                Ok(f) => f,
                Err(FitError::FlatCurve) => None,
                Err(e) => {
                    log::warn!("{}: trigger check failed: {e}", state.curve.sample_id);
                    None
                }
            };
            let Some(t_c) = fired else { continue };
            let reliable = state.history.reliable_set(cfg.corrector.gamma)?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ cfg.corrector.rng_seed);
            rng.set_stream(((idx as u64) << 20) | epoch as u64);
            let (labels, report) = refurbish_sample(
                &state.curve.sample_id,
                t_c,
                &state.labels,
                k,
                &state.geometry.clusters,
                &reliable,
                &cfg.corrector,
                &mut rng,
            )?;
            log::info!(
                "{}: corrected at epoch {t_c}, {} points relabeled",
                report.sample_id,
                report.n_points_relabeled
            );
            state.labels = labels;
            state.curve.mark_corrected(t_c);
            reports.push(report);
            corrections += 1;
        }

        let lr = cfg.lr_at(epoch);
        let (loss_sum, n_batches) = sgd_pass(&mut opt, &states, &mut shuffle_rng, lr, cfg, epoch)?;
        let stats = EpochStats {
            epoch,
            lr,
            mean_loss: if n_batches == 0 { 0.0 } else { loss_sum / n_batches as f64 },
            mean_train_miou: states
                .iter()
                .map(|s| *s.curve.miou_series.last().unwrap())
                .sum::<f64>()
                / states.len() as f64,
            corrected_samples: states.iter().filter(|s| s.curve.corrected).count(),
            corrections,
        };
        log::debug!("epoch {epoch}: {stats:?}");
        epochs.push(stats);
    }

    Ok(TrainOutput {
        model: opt.model,
        curves: states.iter().map(|s| s.curve.clone()).collect(),
        reports,
        labels: states.into_iter().map(|s| s.labels).collect(),
        epochs,
    })
}

struct Optimizer {
    model: ModelParams,
    grads: Grads,
    velocity: Grads,
}

/// One shuffled pass over all labeled points. Returns the loss sum and the
/// batch count.
fn sgd_pass(
    opt: &mut Optimizer,
    states: &[SampleState],
    rng: &mut ChaCha8Rng,
    lr: f64,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<(f64, usize), TrainError> {
    let mut batches: Vec<(usize, Vec<usize>)> = Vec::new();
    for (idx, state) in states.iter().enumerate() {
        let mut order: Vec<usize> = (0..state.labels.len())
            .filter(|&i| state.labels[i] != UNLABELED)
            .collect();
        order.shuffle(rng);
        for chunk in order.chunks(cfg.batch_size) {
            batches.push((idx, chunk.to_vec()));
        }
    }
    batches.shuffle(rng);
    let mut loss_sum = 0.0;
    for (idx, rows) in &batches {
        let state = &states[*idx];
        let phase = if state.curve.corrected {
            Phase::Correction
        } else {
            Phase::Warmup
        };
        let loss = sgd_step(opt, state, rows, phase, lr, cfg)?;
        if !loss.is_finite() {
            return Err(TrainError::Diverged {
                epoch,
                sample: state.curve.sample_id.clone(),
                loss,
            });
        }
        loss_sum += loss;
    }
    Ok((loss_sum, batches.len()))
}

fn sgd_step(
    opt: &mut Optimizer,
    state: &SampleState,
    rows: &[usize],
    phase: Phase,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<f64, TrainError> {
    let Optimizer {
        model,
        grads,
        velocity,
    } = opt;
    let (f, hdim, k) = (model.input, model.hidden, model.classes);
    let mut inputs = vec![0.0; rows.len() * f];
    let mut hidden = vec![0.0; rows.len() * hdim];
    let mut logits = vec![0.0; rows.len() * k];
    let mut targets = Vec::with_capacity(rows.len());
    for (r, &i) in rows.iter().enumerate() {
        let x = &mut inputs[r * f..(r + 1) * f];
        model.standardize(&state.features[i * f..(i + 1) * f], x);
        model.hidden_of(x, &mut hidden[r * hdim..(r + 1) * hdim]);
        model.logits_of(&hidden[r * hdim..(r + 1) * hdim], &mut logits[r * k..(r + 1) * k]);
        targets.push(state.labels[i]);
    }
    let batch = LogitsBatch::new(&logits, &targets, k)?;
    let (value, dlogits) = match cfg.method {
        Method::CeBaseline => {
            let ce = softmax_ce(&batch)?;
            (ce.value, ce.grad)
        }
        Method::Adaco => {
            let out = arl(&batch, None, &cfg.loss, phase)?;
            (out.value, out.grad_logits)
        }
    };
    grads.zero();
    let g = &mut grads.0;
    let mut dh = vec![0.0; hdim];
    for r in 0..rows.len() {
        let x = &inputs[r * f..(r + 1) * f];
        let h = &hidden[r * hdim..(r + 1) * hdim];
        let dl = &dlogits[r * k..(r + 1) * k];
        dh.iter_mut().for_each(|v| *v = 0.0);
        for c in 0..k {
            if dl[c] == 0.0 {
                continue;
            }
            g.b2[c] += dl[c];
            let wrow = &model.w2[c * hdim..(c + 1) * hdim];
            let grow = &mut g.w2[c * hdim..(c + 1) * hdim];
            for j in 0..hdim {
                grow[j] += dl[c] * h[j];
                dh[j] += dl[c] * wrow[j];
            }
        }
        for j in 0..hdim {
            if h[j] <= 0.0 {
                continue;
            }
            g.b1[j] += dh[j];
            let grow = &mut g.w1[j * f..(j + 1) * f];
            for (gw, xv) in grow.iter_mut().zip(x) {
                *gw += dh[j] * xv;
            }
        }
    }
    let params = [&mut model.w1, &mut model.b1, &mut model.w2, &mut model.b2];
    let gs = [&g.w1, &g.b1, &g.w2, &g.b2];
    let vs = [
        &mut velocity.0.w1,
        &mut velocity.0.b1,
        &mut velocity.0.w2,
        &mut velocity.0.b2,
    ];
    for ((p, gv), v) in params.into_iter().zip(gs).zip(vs) {
        for ((w, gr), vel) in p.iter_mut().zip(gv.iter()).zip(v.iter_mut()) {
            *vel = cfg.momentum * *vel + gr + cfg.weight_decay * *w;
            *w -= lr * *vel;
        }
    }
    Ok(value)
}

/// Write a finished run into `out`:
///
/// - `model.bin`: checkpoint, see [`ModelParams::from_bytes`]
/// - `metrics.csv`: one row per epoch
/// - `corrections.jsonl`: one [`CorrectionReport`] per line
/// - `curves.json`: all learning curves
/// - `curves/<id>.csv`: `epoch,miou` per sample
/// - `labels/<id>.labels`: final labels per sample
pub fn write_run(out: &Path, result: &TrainOutput) -> Result<(), TrainError> {
    let curves_dir = out.join("curves");
    let labels_dir = out.join("labels");
    for d in [out, &curves_dir, &labels_dir] {
        fs::create_dir_all(d).map_err(io_err(d))?;
    }
    result.model.save(&out.join("model.bin"))?;

    let mut csv = String::from("epoch,lr,mean_loss,mean_train_miou,corrected_samples,corrections\n");
    for e in &result.epochs {
        let _ = writeln!(
            csv,
            "{},{:.6},{:.6},{:.6},{},{}",
            e.epoch, e.lr, e.mean_loss, e.mean_train_miou, e.corrected_samples, e.corrections
        );
    }
    let write = |path: PathBuf, text: String| fs::write(&path, text).map_err(io_err(&path));
    write(out.join("metrics.csv"), csv)?;

    let mut jsonl = String::new();
    for r in &result.reports {
        jsonl.push_str(&serde_json::to_string(r).expect("report serializes"));
        jsonl.push('\n');
    }
    write(out.join("corrections.jsonl"), jsonl)?;
    write(
        out.join("curves.json"),
        serde_json::to_string_pretty(&result.curves).expect("curves serialize") + "\n",
    )?;

    for (curve, labels) in result.curves.iter().zip(&result.labels) {
        let mut c = String::from("epoch,miou\n");
        for (i, m) in curve.miou_series.iter().enumerate() {
            let _ = writeln!(c, "{},{m:.6}", i + 1);
        }
        write(curves_dir.join(format!("{}.csv", curve.sample_id)), c)?;
        let p = labels_dir.join(format!("{}.labels", curve.sample_id));
        scene::write_labels(&p, labels).map_err(|e| TrainError::Checkpoint(e.to_string()))?;
    }
    Ok(())
}

/// Read `curves.json` from a run directory.
pub fn read_curves(run: &Path) -> Result<Vec<LearningCurve>, TrainError> {
    let p = run.join("curves.json");
    let text = fs::read_to_string(&p).map_err(io_err(&p))?;
    serde_json::from_str(&text).map_err(|e| TrainError::Checkpoint(format!("{}: {e}", p.display())))
}
