//! Experiment configs and run directories.
//!
//! ```text
//! <output_dir>/<id>/fold<k>/model.json
//! <output_dir>/<id>/fold<k>/metadata.json
//! <output_dir>/<id>/predictions.json
//! <output_dir>/<id>/report/{metrics.json, table.csv, table.txt, summary.csv, curves.png, curves.csv, confusion.csv}
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ablation::AblationSpec;
use crate::classifier::{
    predict_ensemble_batch, train_fold, ClassifierError, CurvePoint, EnsemblePrediction, FoldModel, ImageSource,
    TrainConfig,
};
use crate::corpus::{CorpusError, LabelTask, SplitManifest, FOLDS};
use crate::dataset::{load_books, load_page_image, DatasetError};
use crate::eval::{evaluate, plot_curves, render_tables, EvalError, EvalReport, ReportContext, TableKind};
use crate::item::ItemRef;
use crate::render::RenderConfig;
use crate::rendered::{RenderedCorpus, RenderingSource};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("rendered corpus {0} does not exist; run `render` first")]
    CorpusMissing(PathBuf),
    #[error("no trained fold models under {0}")]
    NoModels(PathBuf),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn default_plot_epochs() -> usize {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub id: String,
    pub task: LabelTask,
    pub ablation: AblationSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub render: RenderConfig,
    /// Split manifest JSON.
    pub manifest: PathBuf,
    /// Root of the rendered corpus (`<root>/<mode>/<title>/<page>.png`).
    pub rendered: PathBuf,
    /// Raw dataset root; needed for per-epoch noise and for `explain` on
    /// modes that read page images.
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub precision: Precision,
    /// Curves in the report are truncated at this epoch.
    #[serde(default = "default_plot_epochs")]
    pub plot_max_epoch: usize,
}

impl ExperimentConfig {
    /// Reads a JSON config; relative paths are resolved against the config
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(path).map_err(io(path))?;
        let mut cfg: Self =
            serde_json::from_str(&text).map_err(|source| ExperimentError::Json { path: path.to_path_buf(), source })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut cfg.manifest);
        fix(&mut cfg.rendered);
        fix(&mut cfg.output_dir);
        if let Some(d) = cfg.dataset.as_mut() {
            fix(d);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<(), ExperimentError> {
        let text = serde_json::to_string_pretty(self).expect("config serializes") + "\n";
        fs::write(path, text).map_err(io(path))
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.id.is_empty() || self.id.contains(['/', '\\']) {
            return Err(ExperimentError::Config(format!("experiment id {:?} must be a plain name", self.id)));
        }
        self.ablation.validate().map_err(|e| ExperimentError::Config(e.to_string()))?;
        self.train.validate()?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON form of the whole config.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output_dir.join(&self.id)
    }

    pub fn fold_dir(&self, fold: usize) -> PathBuf {
        self.run_dir().join(format!("fold{fold}"))
    }

    pub fn report_dir(&self) -> PathBuf {
        self.run_dir().join("report")
    }

    pub fn load_manifest(&self) -> Result<SplitManifest, ExperimentError> {
        let manifest = SplitManifest::load(&self.manifest)?;
        if manifest.task != self.task {
            return Err(ExperimentError::Config(format!(
                "manifest is for task {} but the config says {}",
                manifest.task, self.task
            )));
        }
        Ok(manifest)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetadata {
    pub experiment: String,
    pub fold: usize,
    pub config_hash: String,
    pub train_config_hash: String,
    pub seed: u64,
    pub task: LabelTask,
    pub ablation: AblationSpec,
    pub precision: Precision,
    pub snapshot_epoch: usize,
    pub final_metrics: Option<CurvePoint>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ExperimentError> {
    let text =
        serde_json::to_string(value).map_err(|source| ExperimentError::Json { path: path.to_path_buf(), source })?;
    fs::write(path, text + "\n").map_err(io(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, ExperimentError> {
    let text = fs::read_to_string(path).map_err(io(path))?;
    serde_json::from_str(&text).map_err(|source| ExperimentError::Json { path: path.to_path_buf(), source })
}

pub fn save_fold<F: Scalar>(cfg: &ExperimentConfig, model: &FoldModel<F>) -> Result<PathBuf, ExperimentError> {
    let dir = cfg.fold_dir(model.fold);
    fs::create_dir_all(&dir).map_err(io(&dir))?;
    write_json(&dir.join("model.json"), model)?;
    let meta = FoldMetadata {
        experiment: cfg.id.clone(),
        fold: model.fold,
        config_hash: cfg.hash(),
        train_config_hash: model.config_hash.clone(),
        seed: model.seed,
        task: model.task,
        ablation: model.ablation,
        precision: cfg.precision,
        snapshot_epoch: model.snapshot_epoch,
        final_metrics: model.final_point().cloned(),
    };
    let text = serde_json::to_string_pretty(&meta).expect("metadata serializes") + "\n";
    let path = dir.join("metadata.json");
    fs::write(&path, text).map_err(io(&path))?;
    Ok(dir)
}

/// Fold models present under the run directory, in fold order.
pub fn load_folds<F: Scalar>(cfg: &ExperimentConfig) -> Result<Vec<FoldModel<F>>, ExperimentError> {
    let mut models = Vec::new();
    for fold in 0..FOLDS {
        let path = cfg.fold_dir(fold).join("model.json");
        if path.is_file() {
            models.push(read_json(&path)?);
        }
    }
    if models.is_empty() {
        return Err(ExperimentError::NoModels(cfg.run_dir()));
    }
    Ok(models)
}

/// Trains and saves the requested folds (all five when `folds` is empty).
pub fn train_experiment<F: Scalar>(
    cfg: &ExperimentConfig,
    folds: &[usize],
) -> Result<Vec<FoldModel<F>>, ExperimentError> {
    let manifest = cfg.load_manifest()?;
    let folds: Vec<usize> = if folds.is_empty() { (0..FOLDS).collect() } else { folds.to_vec() };
    let mut trained = Vec::new();
    if cfg.train.regenerate_noise && cfg.ablation.noise.is_some() {
        let root = cfg
            .dataset
            .as_ref()
            .ok_or_else(|| ExperimentError::Config("regenerate_noise needs `dataset` in the config".into()))?;
        let books = load_books(root, None)?;
        let loader = |item: &ItemRef| load_page_image(root, item).ok();
        let source = RenderingSource::new(&books, Some(&loader), cfg.ablation, cfg.render);
        for &fold in &folds {
            trained.push(train_and_save(cfg, &manifest, fold, &source)?);
        }
    } else {
        let source = RenderedCorpus::new(&cfg.rendered, &cfg.ablation);
        if !source.exists() {
            return Err(ExperimentError::CorpusMissing(cfg.rendered.join(&source.mode)));
        }
        for &fold in &folds {
            trained.push(train_and_save(cfg, &manifest, fold, &source)?);
        }
    }
    Ok(trained)
}

fn train_and_save<F: Scalar>(
    cfg: &ExperimentConfig,
    manifest: &SplitManifest,
    fold: usize,
    source: &dyn ImageSource,
) -> Result<FoldModel<F>, ExperimentError> {
    let model = train_fold::<F>(manifest, fold, &cfg.ablation, source, &cfg.train)?;
    let dir = save_fold(cfg, &model)?;
    if let Some(p) = model.final_point() {
        info!("fold {fold}: val accuracy {:.4} at epoch {} -> {}", p.val_accuracy, p.epoch, dir.display());
    }
    Ok(model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub item: ItemRef,
    pub truth: usize,
    pub prediction: EnsemblePrediction,
}

/// Which manifest items to predict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    #[default]
    Test,
    Dev,
}

/// Ensemble predictions for a manifest partition, written to
/// `predictions.json` in the run directory.
pub fn predict_experiment<F: Scalar>(
    cfg: &ExperimentConfig,
    partition: Partition,
) -> Result<Vec<PredictionRecord>, ExperimentError> {
    let manifest = cfg.load_manifest()?;
    let models = load_folds::<F>(cfg)?;
    let source = RenderedCorpus::new(&cfg.rendered, &cfg.ablation);
    if !source.exists() {
        return Err(ExperimentError::CorpusMissing(cfg.rendered.join(&source.mode)));
    }
    let items = match partition {
        Partition::Test => &manifest.test,
        Partition::Dev => &manifest.dev,
    };
    let mut records = Vec::with_capacity(items.len());
    for chunk in items.chunks(64) {
        let images = chunk
            .iter()
            .map(|it| source.load(it).map_err(|reason| ClassifierError::CorpusMissing { item: it.clone(), reason }))
            .collect::<Result<Vec<_>, _>>()?;
        let refs: Vec<_> = images.iter().collect();
        for (item, prediction) in chunk.iter().zip(predict_ensemble_batch(&models, &refs)?) {
            let truth = manifest
                .label_of(item)
                .ok_or_else(|| ClassifierError::ClassCountMismatch(format!("{item} has no label")))?;
            records.push(PredictionRecord { item: item.clone(), truth, prediction });
        }
    }
    let dir = cfg.run_dir();
    fs::create_dir_all(&dir).map_err(io(&dir))?;
    write_json(&dir.join("predictions.json"), &records)?;
    Ok(records)
}

/// Evaluates the ensemble on the test partition and writes the report
/// directory.
pub fn evaluate_experiment<F: Scalar>(cfg: &ExperimentConfig) -> Result<EvalReport, ExperimentError> {
    let records = predict_experiment::<F>(cfg, Partition::Test)?;
    let manifest = cfg.load_manifest()?;
    let ctx = ReportContext {
        task: Some(cfg.task),
        ablation: Some(cfg.ablation),
        labels: manifest.labels.labels().to_vec(),
        manifest: Some(cfg.manifest.display().to_string()),
        config_hash: Some(cfg.hash()),
    };
    let pairs: Vec<(usize, EnsemblePrediction)> = records.into_iter().map(|r| (r.truth, r.prediction)).collect();
    let report = evaluate(&pairs, &ctx)?;
    let models = load_folds::<F>(cfg)?;
    write_report(&cfg.report_dir(), &report, &models, Some(cfg.plot_max_epoch))?;
    Ok(report)
}

/// Writes `metrics.json`, `table.csv`/`table.txt` (per-class), `summary.csv`,
/// `confusion.csv` and the curve files.
pub fn write_report<F: Scalar>(
    dir: &Path,
    report: &EvalReport,
    models: &[FoldModel<F>],
    plot_max_epoch: Option<usize>,
) -> Result<(), ExperimentError> {
    fs::create_dir_all(dir).map_err(io(dir))?;
    report.write_json(&dir.join("metrics.json"))?;
    let per_class = render_tables(std::slice::from_ref(report), TableKind::PerClass);
    let summary = render_tables(std::slice::from_ref(report), TableKind::Summary);
    let write = |name: &str, text: String| {
        let path = dir.join(name);
        fs::write(&path, text).map_err(io(&path))
    };
    write("table.csv", per_class.to_csv()?)?;
    write("summary.csv", summary.to_csv()?)?;
    write("table.txt", format!("{}\n{}", summary.to_text(), per_class.to_text()))?;
    write("confusion.csv", report.confusion_csv()?)?;
    if models.iter().any(|m| !m.curve.is_empty()) {
        plot_curves(models, dir, plot_max_epoch)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::AblationMode;

    #[test]
    fn config_paths_resolve_against_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.json");
        fs::write(
            &path,
            r#"{"id": "e1", "task": "title", "ablation": {"mode": "frame_only"},
                "manifest": "split.json", "rendered": "rendered", "train": {"backbone": "tiny"}}"#,
        )
        .unwrap();
        let cfg = ExperimentConfig::load(&path).unwrap();
        assert_eq!(cfg.manifest, dir.path().join("split.json"));
        assert_eq!(cfg.fold_dir(2), dir.path().join("runs/e1/fold2"));
        assert_eq!(cfg.ablation, AblationSpec::clean(AblationMode::FrameOnly));
        assert_eq!(cfg.train.batch_size, 32);
        assert_eq!(cfg.precision, Precision::F32);
    }

    #[test]
    fn unknown_keys_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.json");
        fs::write(
            &path,
            r#"{"id": "e1", "task": "title", "ablation": {"mode": "frame_only"},
                "manifest": "m", "rendered": "r", "train": {"lr": 0.1}}"#,
        )
        .unwrap();
        assert!(ExperimentConfig::load(&path).is_err());
    }
}
