//! Per-fold training and five-model ensemble voting.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use image::imageops::{self, FilterType};
use image::GrayImage;
use log::{debug, info, warn};
use ndarray::{Array2, Array4, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ablation::AblationSpec;
use crate::corpus::{LabelTask, SplitManifest, FOLDS};
use crate::item::ItemRef;
use crate::nn::{softmax, softmax_cross_entropy, NetError, Network, Sgd};
use crate::render::RenderedImage;
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("rendered corpus is missing {item}: {reason}")]
    CorpusMissing { item: ItemRef, reason: String },
    #[error("class count mismatch: {0}")]
    ClassCountMismatch(String),
    #[error("models disagree on {0}")]
    ModelTaskMismatch(String),
    #[error("backbone {0} has no trainable implementation here")]
    UnsupportedBackbone(Backbone),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("fold {0} out of range")]
    BadFold(usize),
    #[error("ensemble needs at least one model")]
    EmptyEnsemble,
    #[error(transparent)]
    Net(#[from] NetError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Backbone {
    /// Four conv blocks; small enough for CPU runs on the synthetic corpus.
    #[serde(rename = "tiny")]
    Tiny,
    /// ImageNet-pretrained ResNet-101. Preprocessing is defined; training
    /// requires pretrained weights this crate does not ship.
    #[serde(rename = "resnet101-imagenet")]
    Resnet101Imagenet,
}

impl Backbone {
    pub fn name(&self) -> &'static str {
        match self {
            Backbone::Tiny => "tiny",
            Backbone::Resnet101Imagenet => "resnet101-imagenet",
        }
    }

    pub fn channels(&self) -> usize {
        match self {
            Backbone::Tiny => 1,
            Backbone::Resnet101Imagenet => 3,
        }
    }

    /// Per-channel `(mean, std)` applied to pixel values scaled to `[0, 1]`.
    pub fn normalization(&self) -> &'static [(f64, f64)] {
        match self {
            Backbone::Tiny => &[(0.5, 0.5)],
            Backbone::Resnet101Imagenet => &[(0.485, 0.229), (0.456, 0.224), (0.406, 0.225)],
        }
    }
}

impl fmt::Display for Backbone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Backbone {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tiny" => Ok(Backbone::Tiny),
            "resnet101-imagenet" | "resnet101" => Ok(Backbone::Resnet101Imagenet),
            other => Err(format!("unknown backbone {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResizePolicy {
    /// Stretch to a square, ignoring aspect ratio.
    #[default]
    Stretch,
    /// Fit inside the square and pad with white.
    Pad,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub backbone: Backbone,
    /// Channel widths of the tiny backbone's conv blocks.
    pub tiny_widths: Vec<usize>,
    pub batch_size: usize,
    pub momentum: f64,
    pub initial_lr: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_every: usize,
    pub max_epochs: usize,
    pub input_size: u32,
    pub resize: ResizePolicy,
    /// Evaluate every epoch up to and including this one...
    pub eval_dense_until: usize,
    /// ...and every this many epochs afterwards (plus the final epoch).
    pub eval_every: usize,
    /// Keep the snapshot with the best dev accuracy instead of the final one.
    pub select_on_dev: bool,
    /// Re-render noisy inputs every epoch instead of using the static corpus.
    pub regenerate_noise: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            backbone: Backbone::Resnet101Imagenet,
            tiny_widths: vec![8, 16, 32, 32],
            batch_size: 32,
            momentum: 0.9,
            initial_lr: 0.001,
            lr_decay_factor: 0.1,
            lr_decay_every: 30,
            max_epochs: 100,
            input_size: 224,
            resize: ResizePolicy::Stretch,
            eval_dense_until: 30,
            eval_every: 10,
            select_on_dev: false,
            regenerate_noise: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Desk-scale profile for the synthetic corpus on a CPU. Same optimizer
    /// and schedule shape; smaller inputs, a higher starting rate for a network
    /// trained from scratch, and a compressed epoch budget.
    pub fn tiny() -> Self {
        Self {
            backbone: Backbone::Tiny,
            input_size: 64,
            initial_lr: 0.02,
            max_epochs: 15,
            lr_decay_every: 10,
            eval_dense_until: 15,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ClassifierError> {
        let bad = |m: &str| Err(ClassifierError::InvalidConfig(m.to_string()));
        if self.batch_size == 0 || self.max_epochs == 0 || self.lr_decay_every == 0 || self.eval_every == 0 {
            return bad("batch_size, max_epochs, lr_decay_every and eval_every must be positive");
        }
        if !(self.initial_lr > 0.0 && self.lr_decay_factor > 0.0 && self.momentum >= 0.0) {
            return bad("learning rate and decay factor must be positive, momentum non-negative");
        }
        if self.backbone == Backbone::Tiny {
            if self.tiny_widths.is_empty() || self.tiny_widths.contains(&0) {
                return bad("tiny_widths must be non-empty and positive");
            }
            if (self.input_size >> self.tiny_widths.len()) == 0 {
                return bad("input_size too small for the number of pooling blocks");
            }
        }
        if self.input_size == 0 {
            return bad("input_size must be positive");
        }
        Ok(())
    }

    /// Step schedule, 1-based epochs: `initial_lr * factor^floor((e-1)/every)`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let steps = epoch.saturating_sub(1) / self.lr_decay_every;
        self.initial_lr * self.lr_decay_factor.powi(steps as i32)
    }

    pub fn is_eval_epoch(&self, epoch: usize) -> bool {
        epoch <= self.eval_dense_until || epoch.is_multiple_of(self.eval_every) || epoch == self.max_epochs
    }

    pub fn eval_epochs(&self) -> Vec<usize> {
        (1..=self.max_epochs).filter(|&e| self.is_eval_epoch(e)).collect()
    }

    pub fn input_shape(&self) -> [usize; 3] {
        let s = self.input_size as usize;
        [self.backbone.channels(), s, s]
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }
}

/// Resizes, replicates channels and normalizes one image into a
/// `(channels, size, size)` tensor written into `out`.
fn preprocess_into<F: Scalar>(img: &GrayImage, backbone: Backbone, size: u32, resize: ResizePolicy, out: &mut [F]) {
    let resized = match resize {
        ResizePolicy::Stretch => imageops::resize(img, size, size, FilterType::Triangle),
        ResizePolicy::Pad => {
            let scale = size as f64 / img.width().max(img.height()) as f64;
            let w = ((img.width() as f64 * scale).round() as u32).clamp(1, size);
            let h = ((img.height() as f64 * scale).round() as u32).clamp(1, size);
            let inner = imageops::resize(img, w, h, FilterType::Triangle);
            let mut canvas = GrayImage::from_pixel(size, size, image::Luma([255]));
            imageops::overlay(&mut canvas, &inner, ((size - w) / 2) as i64, ((size - h) / 2) as i64);
            canvas
        }
    };
    let plane = (size * size) as usize;
    for (c, &(mean, std)) in backbone.normalization().iter().enumerate() {
        for (dst, p) in out[c * plane..(c + 1) * plane].iter_mut().zip(resized.as_raw()) {
            *dst = F::from_f64_lossy((*p as f64 / 255.0 - mean) / std);
        }
    }
}

/// Model input for one image: `(1, channels, size, size)`.
pub fn preprocess_input<F: Scalar>(img: &RenderedImage, cfg: &TrainConfig) -> Array4<F> {
    let [c, h, w] = cfg.input_shape();
    let mut out = Array4::zeros((1, c, h, w));
    preprocess_into(&img.pixels, cfg.backbone, cfg.input_size, cfg.resize, out.as_slice_mut().expect("fresh array"));
    out
}

fn preprocess_batch<F: Scalar>(
    images: &[&GrayImage],
    backbone: Backbone,
    size: u32,
    resize: ResizePolicy,
) -> Array4<F> {
    let s = size as usize;
    let c = backbone.channels();
    let mut out = Array4::zeros((images.len(), c, s, s));
    let per = c * s * s;
    let buf = out.as_slice_mut().expect("fresh array");
    for (i, img) in images.iter().enumerate() {
        preprocess_into(img, backbone, size, resize, &mut buf[i * per..(i + 1) * per]);
    }
    out
}

/// Supplier of rendered training images.
pub trait ImageSource {
    fn load(&self, item: &ItemRef) -> Result<GrayImage, String>;

    /// Image for a given training epoch. Sources with static content ignore
    /// the epoch.
    fn load_for_epoch(&self, item: &ItemRef, epoch: usize) -> Result<GrayImage, String> {
        let _ = epoch;
        self.load(item)
    }

    /// Whether `load_for_epoch` actually varies by epoch.
    fn varies_by_epoch(&self) -> bool {
        false
    }
}

impl ImageSource for BTreeMap<ItemRef, GrayImage> {
    fn load(&self, item: &ItemRef) -> Result<GrayImage, String> {
        self.get(item).cloned().ok_or_else(|| "not in the image map".to_string())
    }
}

impl ImageSource for BTreeMap<ItemRef, RenderedImage> {
    fn load(&self, item: &ItemRef) -> Result<GrayImage, String> {
        self.get(item).map(|r| r.pixels.clone()).ok_or_else(|| "not in the image map".to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    /// Accuracy on the training batches as they were seen during the epoch.
    pub train_accuracy: f64,
    /// Accuracy on the held-out cross-validation fold.
    pub val_accuracy: f64,
    /// Accuracy on the dev split, when it is non-empty.
    pub dev_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct FoldModel<F> {
    pub fold: usize,
    pub task: LabelTask,
    pub ablation: AblationSpec,
    pub labels: Vec<String>,
    pub backbone: Backbone,
    pub input_size: u32,
    pub resize: ResizePolicy,
    pub config_hash: String,
    pub seed: u64,
    /// Epoch whose weights are held in `network`.
    pub snapshot_epoch: usize,
    pub curve: Vec<CurvePoint>,
    pub network: Network<F>,
}

impl<F: Scalar> FoldModel<F> {
    pub fn num_classes(&self) -> usize {
        self.labels.len()
    }

    pub fn final_point(&self) -> Option<&CurvePoint> {
        self.curve.last()
    }

    pub fn preprocess(&self, images: &[&GrayImage]) -> Array4<F> {
        preprocess_batch(images, self.backbone, self.input_size, self.resize)
    }

    /// Class probabilities, one row per image.
    pub fn probabilities(&self, images: &[&GrayImage]) -> Result<Array2<F>, ClassifierError> {
        let mut rows = Vec::with_capacity(images.len());
        for chunk in images.chunks(64) {
            let logits = self.network.predict(&self.preprocess(chunk))?;
            rows.push(softmax(logits.view()));
        }
        let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
        Ok(ndarray::concatenate(Axis(0), &views).unwrap_or_else(|_| Array2::zeros((0, self.num_classes()))))
    }
}

fn labelled(manifest: &SplitManifest, items: &[ItemRef]) -> Result<Vec<usize>, ClassifierError> {
    items
        .iter()
        .map(|it| {
            manifest
                .label_of(it)
                .ok_or_else(|| ClassifierError::ClassCountMismatch(format!("{it} has no label in the manifest")))
        })
        .collect()
}

fn load_all(
    source: &dyn ImageSource,
    items: &[ItemRef],
    epoch: Option<usize>,
) -> Result<Vec<GrayImage>, ClassifierError> {
    items
        .iter()
        .map(|it| {
            match epoch {
                Some(e) => source.load_for_epoch(it, e),
                None => source.load(it),
            }
            .map_err(|reason| ClassifierError::CorpusMissing { item: it.clone(), reason })
        })
        .collect()
}

fn accuracy<F: Scalar>(network: &Network<F>, x: &Array4<F>, y: &[usize], batch: usize) -> Result<f64, ClassifierError> {
    if y.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for start in (0..y.len()).step_by(batch.max(1)) {
        let end = (start + batch).min(y.len());
        let xb = x.slice(ndarray::s![start..end, .., .., ..]).to_owned();
        let logits = network.predict(&xb)?;
        correct += argmax_rows(&logits).iter().zip(&y[start..end]).filter(|(p, t)| p == t).count();
    }
    Ok(correct as f64 / y.len() as f64)
}

fn argmax_rows<F: Scalar>(m: &Array2<F>) -> Vec<usize> {
    m.rows().into_iter().map(|r| argmax(r.iter().copied())).collect()
}

/// Index of the largest value; ties go to the lowest index.
fn argmax<F: PartialOrd, I: Iterator<Item = F>>(values: I) -> usize {
    let mut best: Option<(usize, F)> = None;
    for (i, v) in values.enumerate() {
        match &best {
            Some((_, b)) if v.partial_cmp(b) != Some(std::cmp::Ordering::Greater) => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i).unwrap_or(0)
}

fn gather<F: Scalar>(x: &Array4<F>, idx: &[usize]) -> Array4<F> {
    x.select(Axis(0), idx)
}

fn fold_seed(seed: u64, fold: usize, what: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((fold as u64).to_le_bytes());
    h.update(what.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

/// Trains the model for cross-validation fold `fold`: the other four folds are
/// the training data and fold `fold` is the validation set.
pub fn train_fold<F: Scalar>(
    manifest: &SplitManifest,
    fold: usize,
    ablation: &AblationSpec,
    source: &dyn ImageSource,
    cfg: &TrainConfig,
) -> Result<FoldModel<F>, ClassifierError> {
    cfg.validate()?;
    if fold >= FOLDS {
        return Err(ClassifierError::BadFold(fold));
    }
    if cfg.backbone != Backbone::Tiny {
        return Err(ClassifierError::UnsupportedBackbone(cfg.backbone));
    }
    let num_classes = manifest.num_classes();
    if num_classes == 0 {
        return Err(ClassifierError::ClassCountMismatch("manifest has no classes".into()));
    }
    if let Some((title, &id)) = manifest.title_labels.iter().find(|(_, &id)| id >= num_classes) {
        return Err(ClassifierError::ClassCountMismatch(format!(
            "{title} maps to class {id} but the manifest has {num_classes} labels"
        )));
    }

    let train_items = manifest.fold_train(fold);
    let val_items = manifest.fold_validation(fold).to_vec();
    let dev_items = manifest.dev.clone();
    let y_train = labelled(manifest, &train_items)?;
    let y_val = labelled(manifest, &val_items)?;
    let y_dev = labelled(manifest, &dev_items)?;
    if train_items.is_empty() {
        return Err(ClassifierError::InvalidConfig(format!("fold {fold} has no training items")));
    }

    let prep = |imgs: &[GrayImage]| -> Array4<F> {
        let refs: Vec<&GrayImage> = imgs.iter().collect();
        preprocess_batch(&refs, cfg.backbone, cfg.input_size, cfg.resize)
    };
    let regenerate = cfg.regenerate_noise && source.varies_by_epoch();
    if cfg.regenerate_noise && !regenerate {
        warn!("regenerate_noise set but the image source is static; using fixed images");
    }
    let mut x_train = prep(&load_all(source, &train_items, None)?);
    let x_val = prep(&load_all(source, &val_items, None)?);
    let x_dev = prep(&load_all(source, &dev_items, None)?);

    let mut init_rng = fold_seed(cfg.seed, fold, "init");
    let mut network = Network::<F>::tiny(cfg.input_shape(), &cfg.tiny_widths, num_classes, &mut init_rng);
    let mut opt = Sgd::new(&network, F::from_f64_lossy(cfg.momentum));
    let mut shuffle_rng = fold_seed(cfg.seed, fold, "shuffle");
    info!(
        "fold {fold}: {} train / {} val / {} dev items, {} classes, {} parameters",
        train_items.len(),
        val_items.len(),
        dev_items.len(),
        num_classes,
        network.param_count()
    );

    let mut curve = Vec::new();
    let mut best: Option<(f64, usize, Network<F>)> = None;
    let mut order: Vec<usize> = (0..train_items.len()).collect();
    for epoch in 1..=cfg.max_epochs {
        if regenerate && epoch > 1 {
            x_train = prep(&load_all(source, &train_items, Some(epoch))?);
        }
        let lr = F::from_f64_lossy(cfg.lr_at(epoch));
        order.shuffle(&mut shuffle_rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let xb = gather(&x_train, batch);
            let yb: Vec<usize> = batch.iter().map(|&i| y_train[i]).collect();
            let tape = network.forward(&xb)?;
            let logits = tape.logits();
            correct += logits.rows().into_iter().zip(&yb).filter(|(r, &t)| argmax(r.iter().copied()) == t).count();
            let (loss, grad) = softmax_cross_entropy(logits, &yb);
            loss_sum += loss.as_f64() * batch.len() as f64;
            let grads = network.backward(&tape, &grad, None, true);
            opt.step(&mut network, &grads.params, lr);
        }
        let train_loss = loss_sum / train_items.len() as f64;
        if !train_loss.is_finite() {
            warn!("fold {fold} epoch {epoch}: training loss diverged");
        }
        if cfg.is_eval_epoch(epoch) {
            let val_accuracy = accuracy(&network, &x_val, &y_val, 64)?;
            let dev_accuracy = if y_dev.is_empty() { None } else { Some(accuracy(&network, &x_dev, &y_dev, 64)?) };
            let point = CurvePoint {
                epoch,
                lr: cfg.lr_at(epoch),
                train_loss,
                train_accuracy: correct as f64 / train_items.len() as f64,
                val_accuracy,
                dev_accuracy,
            };
            debug!("fold {fold} {point:?}");
            if cfg.select_on_dev {
                let score = dev_accuracy.unwrap_or(val_accuracy);
                if best.as_ref().is_none_or(|(b, _, _)| score > *b) {
                    best = Some((score, epoch, network.clone()));
                }
            }
            curve.push(point);
        }
    }
    let (snapshot_epoch, network) = match best {
        Some((_, epoch, net)) => (epoch, net),
        None => (cfg.max_epochs, network),
    };
    Ok(FoldModel {
        fold,
        task: manifest.task,
        ablation: *ablation,
        labels: manifest.labels.labels().to_vec(),
        backbone: cfg.backbone,
        input_size: cfg.input_size,
        resize: cfg.resize,
        config_hash: cfg.hash(),
        seed: cfg.seed,
        snapshot_epoch,
        curve,
        network,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsemblePrediction {
    /// Argmax class of each model.
    pub votes: Vec<usize>,
    /// Class-probability vector of each model.
    pub probabilities: Vec<Vec<f64>>,
    pub class: usize,
    /// Set when more than one class shared the top vote count.
    pub tie_broken: bool,
}

impl EnsemblePrediction {
    pub fn vote_counts(&self) -> Vec<usize> {
        let classes = self.probabilities.first().map_or(0, Vec::len);
        let mut counts = vec![0; classes.max(self.votes.iter().max().map_or(0, |m| m + 1))];
        for &v in &self.votes {
            counts[v] += 1;
        }
        counts
    }

    /// Fraction of models voting for `class`.
    pub fn vote_share(&self, class: usize) -> f64 {
        if self.votes.is_empty() {
            return 0.0;
        }
        self.votes.iter().filter(|&&v| v == class).count() as f64 / self.votes.len() as f64
    }
}

/// Plurality vote over per-model probability vectors. Ties on vote count go
/// to the larger summed probability, then to the lowest class id.
pub fn vote(probabilities: Vec<Vec<f64>>) -> EnsemblePrediction {
    let votes: Vec<usize> = probabilities.iter().map(|p| argmax(p.iter().copied())).collect();
    let classes = probabilities.iter().map(Vec::len).max().unwrap_or(0);
    let mut counts = vec![0usize; classes];
    for &v in &votes {
        counts[v] += 1;
    }
    let top = counts.iter().copied().max().unwrap_or(0);
    let tied: Vec<usize> = (0..classes).filter(|&c| counts[c] == top).collect();
    let (class, tie_broken) = if tied.len() <= 1 {
        (tied.first().copied().unwrap_or(0), false)
    } else {
        let sum = |c: usize| probabilities.iter().map(|p| p.get(c).copied().unwrap_or(0.0)).sum::<f64>();
        let sums: Vec<f64> = tied.iter().map(|&c| sum(c)).collect();
        (tied[argmax(sums.iter().copied())], true)
    };
    EnsemblePrediction { votes, probabilities, class, tie_broken }
}

fn check_compatible<F: Scalar>(models: &[FoldModel<F>]) -> Result<(), ClassifierError> {
    let first = models.first().ok_or(ClassifierError::EmptyEnsemble)?;
    for m in &models[1..] {
        if m.task != first.task {
            return Err(ClassifierError::ModelTaskMismatch(format!("task: {} vs {}", first.task, m.task)));
        }
        if m.ablation != first.ablation {
            return Err(ClassifierError::ModelTaskMismatch(format!("ablation: {} vs {}", first.ablation, m.ablation)));
        }
        if m.labels != first.labels {
            return Err(ClassifierError::ModelTaskMismatch("label maps".into()));
        }
    }
    if models.len() != FOLDS {
        warn!("ensemble of {} models (expected {FOLDS})", models.len());
    }
    Ok(())
}

pub fn predict_ensemble<F: Scalar>(
    models: &[FoldModel<F>],
    image: &RenderedImage,
) -> Result<EnsemblePrediction, ClassifierError> {
    Ok(predict_ensemble_batch(models, &[&image.pixels])?.remove(0))
}

/// Ensemble predictions for many images at once.
pub fn predict_ensemble_batch<F: Scalar>(
    models: &[FoldModel<F>],
    images: &[&GrayImage],
) -> Result<Vec<EnsemblePrediction>, ClassifierError> {
    check_compatible(models)?;
    let per_model: Vec<Array2<F>> = models.iter().map(|m| m.probabilities(images)).collect::<Result<_, _>>()?;
    Ok((0..images.len())
        .map(|i| vote(per_model.iter().map(|p| p.row(i).iter().map(|v| v.as_f64()).collect()).collect()))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_scale_defaults() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.batch_size, 32);
        assert_eq!(cfg.momentum, 0.9);
        assert_eq!(cfg.initial_lr, 0.001);
        assert_eq!(cfg.max_epochs, 100);
        assert_eq!(cfg.input_size, 224);
        assert_eq!(cfg.backbone, Backbone::Resnet101Imagenet);
        assert!(!cfg.select_on_dev);
        let evals = cfg.eval_epochs();
        assert_eq!(evals.len(), 30 + 7);
        assert_eq!(&evals[28..], &[29, 30, 40, 50, 60, 70, 80, 90, 100]);
    }

    #[test]
    fn schedule_steps() {
        let cfg = TrainConfig::default();
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * b;
        assert!(close(cfg.lr_at(1), 1e-3));
        assert!(close(cfg.lr_at(30), 1e-3));
        assert!(close(cfg.lr_at(31), 1e-4));
        assert!(close(cfg.lr_at(61), 1e-5));
        assert!(close(cfg.lr_at(100), 1e-6));
    }

    #[test]
    fn vote_examples() {
        let one_hot = |c: usize| {
            let mut v = vec![0.0; 3];
            v[c] = 1.0;
            v
        };
        let p = vote((0..5).map(|_| one_hot(2)).collect());
        assert_eq!((p.class, p.tie_broken), (2, false));

        // a a b b c; a sums to 1.9, b to 2.1
        let probs = vec![
            vec![0.95, 0.05, 0.0],
            vec![0.95, 0.05, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.05, 0.95],
        ];
        let p = vote(probs);
        assert_eq!(p.votes, vec![0, 0, 1, 1, 2]);
        assert_eq!((p.class, p.tie_broken), (1, true));

        let p = vote(vec![vec![0.25; 4]; 5]);
        assert_eq!(p.class, 0);
        assert!(!p.tie_broken);
    }

    #[test]
    fn preprocess_shapes_and_constants() {
        let img = RenderedImage {
            pixels: GrayImage::from_pixel(165, 117, image::Luma([255])),
            mode: crate::render::AblationMode::FrameOnly,
            source: ItemRef::new("t", 0),
        };
        let mut cfg = TrainConfig { input_size: 32, ..TrainConfig::default() };
        let x: Array4<f32> = preprocess_input(&img, &cfg);
        assert_eq!(x.shape(), &[1, 3, 32, 32]);
        for c in 0..3 {
            let plane = x.index_axis(Axis(1), c);
            let v0 = plane[[0, 0, 0]];
            assert!(plane.iter().all(|&v| v == v0));
        }
        assert_eq!(x, preprocess_input::<f32>(&img, &cfg));
        cfg.backbone = Backbone::Tiny;
        let x: Array4<f64> = preprocess_input(&img, &cfg);
        assert_eq!(x.shape(), &[1, 1, 32, 32]);
        assert!(x.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn config_hash_changes_with_content() {
        let a = TrainConfig::tiny();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }
}
