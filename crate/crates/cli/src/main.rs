use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use log::info;
use serde::Serialize;

use panel_layout::ablation::AblationSpec;
use panel_layout::classifier::ImageSource;
use panel_layout::classifier::{predict_ensemble, FoldModel, TrainConfig};
use panel_layout::corpus::{
    build_split, default_styles, exclude_single_work_classes, generate_synthetic_corpus, LabelTask, Protocol,
};
use panel_layout::dataset::{load_books, validate_dataset, write_dataset};
use panel_layout::eval::{render_tables, EvalReport, TableKind};
use panel_layout::experiment::{
    evaluate_experiment, load_folds, predict_experiment, train_experiment, ExperimentConfig, Partition, Precision,
};
use panel_layout::explain::{grad_cam, overlay, stroke_attention, weighted_mean, StrokeAttention};
use panel_layout::item::ItemRef;
use panel_layout::perturb::{NoiseFamily, NoiseSpec};
use panel_layout::render::{AblationMode, RenderConfig, RenderedImage};
use panel_layout::rendered::{render_corpus, RenderedCorpus};
use panel_layout::scalar::Scalar;

#[derive(Parser)]
#[command(name = "panel-layout", version, about = "Panel-layout ablation experiments on manga pages")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Family {
    Rectangular,
    Quadrilateral,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// The full-scale recipe (ResNet-101, 224 px, 100 epochs).
    FullScale,
    /// The tiny CPU profile used with the synthetic corpus.
    Synthetic,
}

#[derive(clap::Args)]
struct Overrides {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Replace the ablation, e.g. `masked` or `frame_only-rectangular-10`.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    task: Option<LabelTask>,
    /// Replace the split manifest path.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Check every annotation document of a dataset; one line per problem.
    Validate { dataset: PathBuf },
    /// Write the synthetic layout corpus in the dataset layout.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        pages: u32,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Build a split manifest.
    Split {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        task: LabelTask,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        metadata: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render every page with frames under one ablation.
    Render {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        mode: AblationMode,
        #[arg(long, requires = "noise_range")]
        noise_family: Option<Family>,
        #[arg(long, requires = "noise_family")]
        noise_range: Option<u32>,
        #[arg(long, default_value_t = 0)]
        noise_seed: u64,
        #[arg(long)]
        stroke_width: Option<u32>,
        /// Label the index entries with this manifest's class ids.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train fold models (all five unless --fold is given).
    Train {
        #[command(flatten)]
        o: Overrides,
        #[arg(long)]
        fold: Vec<usize>,
    },
    /// Ensemble predictions for the test (or dev) partition.
    Predict {
        #[command(flatten)]
        o: Overrides,
        #[arg(long, value_enum, default_value = "test")]
        partition: PartitionArg,
    },
    /// Predict the test partition and write the report directory.
    Evaluate {
        #[command(flatten)]
        o: Overrides,
    },
    /// Grad-CAM overlays for one page.
    Explain {
        #[command(flatten)]
        o: Overrides,
        /// `title/page_index`.
        #[arg(long)]
        image_ref: ItemRef,
        /// Class to explain; defaults to the ensemble prediction.
        #[arg(long)]
        class: Option<usize>,
        /// Only this fold; defaults to all folds.
        #[arg(long)]
        fold: Option<usize>,
        #[arg(long)]
        layer: Option<String>,
        #[arg(long, default_value_t = 0.4)]
        alpha: f64,
        /// Output directory; defaults to `<run>/explain/<title>_<page>`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Combine several `metrics.json` files into one table.
    Tables {
        #[arg(long, value_enum, default_value = "summary")]
        kind: KindArg,
        /// Write `<prefix>.csv` and `<prefix>.txt`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(required = true)]
        reports: Vec<PathBuf>,
    },
    /// Print an example experiment config.
    InitConfig {
        #[arg(long, value_enum, default_value = "synthetic")]
        preset: Preset,
        #[arg(long, default_value = "example")]
        id: String,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum PartitionArg {
    Test,
    Dev,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Summary,
    Noise,
    PerClass,
}

fn load_config(o: &Overrides) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&o.config).with_context(|| format!("loading {}", o.config.display()))?;
    let mut suffix = Vec::new();
    if let Some(mode) = &o.mode {
        let mut spec: AblationSpec = mode.parse()?;
        if let (Some(new), Some(old)) = (spec.noise.as_mut(), cfg.ablation.noise) {
            new.seed = old.seed;
        }
        cfg.ablation = spec;
        suffix.push(spec.dir_name());
    }
    if let Some(task) = o.task {
        cfg.task = task;
        suffix.push(task.to_string());
    }
    if let Some(m) = &o.manifest {
        cfg.manifest = m.clone();
    }
    // overridden runs get their own directory
    if !suffix.is_empty() {
        cfg.id = format!("{}--{}", cfg.id, suffix.join("--"));
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_pretty<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn run_train<F: Scalar>(cfg: &ExperimentConfig, folds: &[usize]) -> Result<()> {
    let models = train_experiment::<F>(cfg, folds)?;
    for m in &models {
        if let Some(p) = m.final_point() {
            println!(
                "fold {}\tepoch {}\tval_accuracy {:.4}\ttrain_loss {:.4}",
                m.fold, p.epoch, p.val_accuracy, p.train_loss
            );
        }
    }
    Ok(())
}

fn run_predict<F: Scalar>(cfg: &ExperimentConfig, partition: Partition) -> Result<()> {
    let records = predict_experiment::<F>(cfg, partition)?;
    let correct = records.iter().filter(|r| r.truth == r.prediction.class).count();
    for r in &records {
        println!(
            "{}\ttruth {}\tpredicted {}\ttie_broken {}",
            r.item, r.truth, r.prediction.class, r.prediction.tie_broken
        );
    }
    println!("accuracy {:.4} ({correct}/{})", correct as f64 / records.len().max(1) as f64, records.len());
    println!("predictions written to {}", cfg.run_dir().join("predictions.json").display());
    Ok(())
}

fn run_evaluate<F: Scalar>(cfg: &ExperimentConfig) -> Result<()> {
    let report = evaluate_experiment::<F>(cfg)?;
    print!("{}", fs::read_to_string(cfg.report_dir().join("table.txt"))?);
    println!("accuracy {:.4}; report in {}", report.accuracy, cfg.report_dir().display());
    Ok(())
}

#[derive(Serialize)]
struct OverlayStats {
    fold: Option<usize>,
    target_class: usize,
    target_label: String,
    predicted_class: Option<usize>,
    target_probability: Option<f64>,
    degenerate: bool,
    mean: f64,
    stroke_attention: Option<StrokeAttention>,
    file: String,
}

#[derive(Serialize)]
struct ExplainStats {
    item: ItemRef,
    layer: Option<String>,
    ensemble_class: usize,
    ensemble_label: String,
    tie_broken: bool,
    overlays: Vec<OverlayStats>,
}

#[allow(clippy::too_many_arguments)]
fn run_explain<F: Scalar>(
    cfg: &ExperimentConfig,
    item: &ItemRef,
    class: Option<usize>,
    fold: Option<usize>,
    layer: Option<&str>,
    alpha: f64,
    out: Option<PathBuf>,
) -> Result<()> {
    let mut models: Vec<FoldModel<F>> = load_folds(cfg)?;
    let source = RenderedCorpus::new(&cfg.rendered, &cfg.ablation);
    let pixels = source.load(item).map_err(|e| anyhow::anyhow!(e))?;
    let image = RenderedImage { pixels, mode: cfg.ablation.mode, source: item.clone() };
    let ensemble = predict_ensemble(&models, &image)?;
    let voters: Vec<usize> = models.iter().map(|m| m.fold).collect();
    if let Some(k) = fold {
        models.retain(|m| m.fold == k);
        if models.is_empty() {
            bail!("fold {k} has no trained model");
        }
    }
    let target = class.unwrap_or(ensemble.class);
    let labels = models[0].labels.clone();
    if target >= labels.len() {
        bail!("class {target} out of range for {} classes", labels.len());
    }
    let out = out.unwrap_or_else(|| cfg.run_dir().join("explain").join(format!("{}_{}", item.title, item.page)));
    fs::create_dir_all(&out)?;
    let strokes = cfg.ablation.mode == AblationMode::FrameOnly;
    let describe = |h: &panel_layout::explain::Heatmap<F>| {
        strokes.then(|| stroke_attention(h, &image.pixels, cfg.render.stroke_value, 12))
    };
    let mut overlays = Vec::new();
    let mut maps = Vec::new();
    let mut weights = Vec::new();
    for m in &models {
        let heat = grad_cam(m, &image, Some(target), layer)?;
        let file = format!("fold{}_class{target}.png", m.fold);
        overlay(&heat, &image.pixels, alpha)?.save(out.join(&file))?;
        let vote_idx = voters.iter().position(|&f| f == m.fold);
        let predicted = vote_idx.map(|i| ensemble.votes[i]);
        overlays.push(OverlayStats {
            fold: Some(m.fold),
            target_class: target,
            target_label: labels[target].clone(),
            predicted_class: predicted,
            target_probability: vote_idx.map(|i| ensemble.probabilities[i][target]),
            degenerate: heat.degenerate,
            mean: heat.mean().as_f64(),
            stroke_attention: describe(&heat),
            file,
        });
        weights.push(if predicted == Some(target) { 1.0 } else { 0.0 });
        maps.push(heat);
    }
    if maps.len() > 1 {
        let mean = weighted_mean(&maps, &weights)?;
        let file = format!("vote_weighted_mean_class{target}.png");
        overlay(&mean, &image.pixels, alpha)?.save(out.join(&file))?;
        overlays.push(OverlayStats {
            fold: None,
            target_class: target,
            target_label: labels[target].clone(),
            predicted_class: Some(ensemble.class),
            target_probability: None,
            degenerate: mean.degenerate,
            mean: mean.mean().as_f64(),
            stroke_attention: describe(&mean),
            file,
        });
    }
    let stats = ExplainStats {
        item: item.clone(),
        layer: maps.first().map(|m| m.source.layer.clone()),
        ensemble_class: ensemble.class,
        ensemble_label: labels[ensemble.class].clone(),
        tie_broken: ensemble.tie_broken,
        overlays,
    };
    write_pretty(&out.join("heatmaps.json"), &stats)?;
    println!("{} overlays written to {}", stats.overlays.len(), out.display());
    Ok(())
}

fn example_config(preset: Preset, id: &str) -> ExperimentConfig {
    let (train, ablation) = match preset {
        Preset::FullScale => (TrainConfig::default(), AblationSpec::clean(AblationMode::FrameOnly)),
        Preset::Synthetic => (TrainConfig::tiny(), AblationSpec::clean(AblationMode::FrameOnly)),
    };
    ExperimentConfig {
        id: id.to_string(),
        task: LabelTask::Title,
        ablation,
        train,
        render: RenderConfig::default(),
        manifest: PathBuf::from("split.json"),
        rendered: PathBuf::from("rendered"),
        dataset: Some(PathBuf::from("dataset")),
        output_dir: PathBuf::from("runs"),
        precision: Precision::F32,
        plot_max_epoch: 50,
    }
}

macro_rules! with_precision {
    ($cfg:expr, $f:ident($($arg:expr),*)) => {
        match $cfg.precision {
            Precision::F32 => $f::<f32>($($arg),*),
            Precision::F64 => $f::<f64>($($arg),*),
        }
    };
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Validate { dataset } => {
            let issues = validate_dataset(&dataset)?;
            for (file, issue) in &issues {
                println!("{}\t{issue}", file.display());
            }
            if !issues.is_empty() {
                eprintln!("{} problem(s)", issues.len());
                return Ok(ExitCode::FAILURE);
            }
            eprintln!("no problems found");
        }
        Command::Synth { out, pages, seed } => {
            let corpus = generate_synthetic_corpus(&default_styles(), pages, seed)?;
            write_dataset(&out, &corpus.books, Some(&corpus.rasters))?;
            println!("{} books, {} pages written to {}", corpus.books.len(), corpus.rasters.len(), out.display());
        }
        Command::Split { dataset, task, seed, metadata, out } => {
            let mut books = load_books(&dataset, metadata.as_deref())?;
            if task.default_protocol() == Protocol::LeaveOneWorkOut {
                // a class needs a second work to hold one out
                let (kept, dropped) = exclude_single_work_classes(&books, task)?;
                if !dropped.is_empty() {
                    eprintln!("dropped single-work classes: {}", dropped.join(", "));
                }
                books = kept;
            }
            let manifest = build_split(&books, task, seed)?;
            manifest.save(&out)?;
            let folds: Vec<String> = manifest.folds.iter().map(|f| f.len().to_string()).collect();
            println!(
                "{} classes; folds [{}], dev {}, test {} -> {}",
                manifest.num_classes(),
                folds.join(", "),
                manifest.dev.len(),
                manifest.test.len(),
                out.display()
            );
        }
        Command::Render { dataset, mode, noise_family, noise_range, noise_seed, stroke_width, manifest, out } => {
            let noise = noise_family.zip(noise_range).map(|(f, range)| {
                let family = match f {
                    Family::Rectangular => NoiseFamily::Rectangular,
                    Family::Quadrilateral => NoiseFamily::Quadrilateral,
                };
                NoiseSpec::new(family, range, noise_seed)
            });
            let spec = AblationSpec { mode, noise };
            spec.validate()?;
            let mut cfg = RenderConfig::default();
            if let Some(w) = stroke_width {
                cfg.stroke_width = w;
            }
            cfg.validate()?;
            let books = load_books(&dataset, None)?;
            let manifest = manifest.map(|p| panel_layout::SplitManifest::load(&p)).transpose()?;
            let index = render_corpus(&books, Some(&dataset), &spec, &cfg, manifest.as_ref(), &out)?;
            let n = index.entries.values().filter(|e| e.mode == spec.dir_name()).count();
            println!("{n} pages rendered to {}", out.join(spec.dir_name()).display());
        }
        Command::Train { o, fold } => {
            let cfg = load_config(&o)?;
            info!("training {} ({})", cfg.id, cfg.ablation);
            with_precision!(cfg, run_train(&cfg, &fold))?;
        }
        Command::Predict { o, partition } => {
            let cfg = load_config(&o)?;
            let partition = match partition {
                PartitionArg::Test => Partition::Test,
                PartitionArg::Dev => Partition::Dev,
            };
            with_precision!(cfg, run_predict(&cfg, partition))?;
        }
        Command::Evaluate { o } => {
            let cfg = load_config(&o)?;
            with_precision!(cfg, run_evaluate(&cfg))?;
        }
        Command::Explain { o, image_ref, class, fold, layer, alpha, out } => {
            if !(0.0..=1.0).contains(&alpha) {
                bail!("alpha must be in [0, 1]");
            }
            let cfg = load_config(&o)?;
            with_precision!(cfg, run_explain(&cfg, &image_ref, class, fold, layer.as_deref(), alpha, out))?;
        }
        Command::Tables { kind, out, reports } => {
            let reports = reports
                .iter()
                .map(|p| EvalReport::read_json(p).with_context(|| p.display().to_string()))
                .collect::<Result<Vec<_>>>()?;
            let kind = match kind {
                KindArg::Summary => TableKind::Summary,
                KindArg::Noise => TableKind::Noise,
                KindArg::PerClass => TableKind::PerClass,
            };
            let table = render_tables(&reports, kind);
            print!("{}", table.to_text());
            if let Some(prefix) = out {
                fs::write(prefix.with_extension("csv"), table.to_csv()?)?;
                fs::write(prefix.with_extension("txt"), table.to_text())?;
            }
        }
        Command::InitConfig { preset, id } => {
            println!("{}", serde_json::to_string_pretty(&example_config(preset, &id))?);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
