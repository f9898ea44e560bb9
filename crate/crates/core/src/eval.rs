//! Metrics, tables and training-curve plots.

use std::fs;
use std::io;
use std::path::Path;
use std::sync::OnceLock;

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ablation::AblationSpec;
use crate::classifier::{EnsemblePrediction, FoldModel};
use crate::corpus::LabelTask;
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no predictions to evaluate")]
    EmptyPredictions,
    #[error("class id {id} out of range for {classes} classes (item {index})")]
    IdOutOfRange { id: usize, classes: usize, index: usize },
    #[error("no fold has a recorded training curve")]
    NoCurves,
    #[error("plot: {0}")]
    Plot(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    /// Number of items whose true class this is.
    pub support: usize,
    /// Number of items predicted as this class.
    pub predicted: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// What a report describes, beyond the predictions themselves.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportContext {
    pub task: Option<LabelTask>,
    pub ablation: Option<AblationSpec>,
    pub labels: Vec<String>,
    pub manifest: Option<String>,
    pub config_hash: Option<String>,
}

impl ReportContext {
    pub fn new(labels: Vec<String>) -> Self {
        Self { labels, ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: Option<LabelTask>,
    pub ablation: Option<AblationSpec>,
    pub manifest: Option<String>,
    pub config_hash: Option<String>,
    pub n_items: usize,
    /// Fraction of items predicted correctly (micro average).
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    /// Accuracy of always predicting the most frequent true class.
    pub majority_baseline: f64,
    /// `1 / classes`.
    pub uniform_baseline: f64,
    /// Accuracy of each ensemble member on its own, in model order.
    pub per_model_accuracy: Vec<f64>,
    /// Number of items whose ensemble vote needed a tie-break.
    pub ties_broken: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Metrics from `(true id, predicted id)` pairs.
pub fn evaluate_ids(pairs: &[(usize, usize)], ctx: &ReportContext) -> Result<EvalReport, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::EmptyPredictions);
    }
    let classes = ctx.labels.len();
    let mut confusion = vec![vec![0usize; classes]; classes];
    for (index, &(t, p)) in pairs.iter().enumerate() {
        for id in [t, p] {
            if id >= classes {
                return Err(EvalError::IdOutOfRange { id, classes, index });
            }
        }
        confusion[t][p] += 1;
    }
    let n = pairs.len();
    let correct: usize = (0..classes).map(|c| confusion[c][c]).sum();
    let per_class: Vec<ClassMetrics> = (0..classes)
        .map(|c| {
            let support: usize = confusion[c].iter().sum();
            let predicted: usize = confusion.iter().map(|row| row[c]).sum();
            let tp = confusion[c][c];
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
            ClassMetrics { label: ctx.labels[c].clone(), support, predicted, precision, recall, f1 }
        })
        .collect();
    let mean = |f: fn(&ClassMetrics) -> f64| {
        if classes == 0 {
            0.0
        } else {
            per_class.iter().map(f).sum::<f64>() / classes as f64
        }
    };
    let majority = per_class.iter().map(|c| c.support).max().unwrap_or(0);
    Ok(EvalReport {
        task: ctx.task,
        ablation: ctx.ablation,
        manifest: ctx.manifest.clone(),
        config_hash: ctx.config_hash.clone(),
        n_items: n,
        accuracy: ratio(correct, n),
        macro_precision: mean(|c| c.precision),
        macro_recall: mean(|c| c.recall),
        macro_f1: mean(|c| c.f1),
        per_class,
        confusion,
        majority_baseline: ratio(majority, n),
        uniform_baseline: ratio(1, classes),
        per_model_accuracy: Vec::new(),
        ties_broken: 0,
    })
}

/// Metrics of ensemble predictions, including each member's own accuracy.
pub fn evaluate(predictions: &[(usize, EnsemblePrediction)], ctx: &ReportContext) -> Result<EvalReport, EvalError> {
    let pairs: Vec<(usize, usize)> = predictions.iter().map(|(t, p)| (*t, p.class)).collect();
    let mut report = evaluate_ids(&pairs, ctx)?;
    let models = predictions.iter().map(|(_, p)| p.votes.len()).min().unwrap_or(0);
    report.per_model_accuracy = (0..models)
        .map(|k| ratio(predictions.iter().filter(|(t, p)| p.votes[k] == *t).count(), predictions.len()))
        .collect();
    report.ties_broken = predictions.iter().filter(|(_, p)| p.tie_broken).count();
    Ok(report)
}

impl EvalReport {
    pub fn write_json(&self, path: &Path) -> Result<(), EvalError> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self, EvalError> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    /// Confusion matrix as CSV: header `true\predicted,<labels...>`, one row
    /// per true class.
    pub fn confusion_csv(&self) -> Result<String, EvalError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let labels: Vec<&str> = self.per_class.iter().map(|c| c.label.as_str()).collect();
        let mut header = vec!["true\\predicted"];
        header.extend(&labels);
        w.write_record(&header)?;
        for (label, row) in labels.iter().zip(&self.confusion) {
            let mut rec = vec![label.to_string()];
            rec.extend(row.iter().map(usize::to_string));
            w.write_record(&rec)?;
        }
        Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("utf8 csv"))
    }

    fn mode_label(&self) -> String {
        self.ablation.map(|a| a.dir_name()).unwrap_or_else(|| "-".into())
    }

    fn task_label(&self) -> String {
        self.task.map(|t| t.to_string()).unwrap_or_else(|| "-".into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableKind {
    /// One row per report: task, mode, accuracy, macro scores.
    Summary,
    /// One row per noisy frame-only report, grouped by family and range.
    Noise,
    /// Precision / recall / F1 per class of the first report.
    PerClass,
}

/// A table whose numeric cells keep their full `f64` value; formatting
/// happens on output.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Text(String),
    Count(usize),
    /// Fraction shown with two decimals.
    Score(f64),
    /// Fraction shown as a percentage with one decimal.
    Percent(f64),
}

impl Cell {
    /// CSV form: shortest representation that parses back to the same value.
    fn csv(&self) -> String {
        match self {
            Cell::Text(s) => s.clone(),
            Cell::Count(n) => n.to_string(),
            Cell::Score(v) | Cell::Percent(v) => format!("{v:?}"),
        }
    }

    fn text(&self) -> String {
        match self {
            Cell::Text(s) => s.clone(),
            Cell::Count(n) => n.to_string(),
            Cell::Score(v) => format!("{v:.2}"),
            Cell::Percent(v) => format!("{:.1}%", v * 100.0),
        }
    }

    fn is_numeric(&self) -> bool {
        !matches!(self, Cell::Text(_))
    }
}

impl Table {
    pub fn to_csv(&self) -> Result<String, EvalError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.headers)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::csv))?;
        }
        Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("utf8 csv"))
    }

    /// Column-aligned plain text; numbers right-aligned.
    pub fn to_text(&self) -> String {
        let cells: Vec<Vec<String>> = self.rows.iter().map(|r| r.iter().map(Cell::text).collect()).collect();
        let widths: Vec<usize> = (0..self.headers.len())
            .map(|c| {
                cells.iter().map(|r| r[c].chars().count()).chain([self.headers[c].chars().count()]).max().unwrap_or(0)
            })
            .collect();
        let mut out = String::new();
        let line = |parts: Vec<String>| parts.join("  ").trim_end().to_string() + "\n";
        out += &line(self.headers.iter().zip(&widths).map(|(h, w)| format!("{h:<w$}")).collect());
        out += &line(widths.iter().map(|w| "-".repeat(*w)).collect());
        for (row, raw) in cells.iter().zip(&self.rows) {
            out += &line(
                row.iter()
                    .zip(raw)
                    .zip(&widths)
                    .map(|((s, c), w)| if c.is_numeric() { format!("{s:>w$}") } else { format!("{s:<w$}") })
                    .collect(),
            );
        }
        out
    }
}

pub fn render_tables(reports: &[EvalReport], kind: TableKind) -> Table {
    let s = |v: &str| v.to_string();
    match kind {
        TableKind::Summary => Table {
            headers: [
                "Task",
                "Mode",
                "Items",
                "Accuracy",
                "Macro Precision",
                "Macro Recall",
                "Macro F1",
                "Majority Baseline",
                "Random Baseline",
            ]
            .map(s)
            .to_vec(),
            rows: reports
                .iter()
                .map(|r| {
                    vec![
                        Cell::Text(r.task_label()),
                        Cell::Text(r.mode_label()),
                        Cell::Count(r.n_items),
                        Cell::Percent(r.accuracy),
                        Cell::Score(r.macro_precision),
                        Cell::Score(r.macro_recall),
                        Cell::Score(r.macro_f1),
                        Cell::Percent(r.majority_baseline),
                        Cell::Percent(r.uniform_baseline),
                    ]
                })
                .collect(),
        },
        TableKind::Noise => {
            let mut noisy: Vec<_> = reports.iter().filter_map(|r| Some((r.ablation?.noise?, r))).collect();
            noisy.sort_by_key(|(n, _)| (n.family.label(), n.range));
            Table {
                headers: ["Noise Type", "Noise Range", "Accuracy"].map(s).to_vec(),
                rows: noisy
                    .into_iter()
                    .map(|(n, r)| {
                        vec![
                            Cell::Text(n.family.label().to_string()),
                            Cell::Text(format!("(-{0}, {0})", n.range)),
                            Cell::Percent(r.accuracy),
                        ]
                    })
                    .collect(),
            }
        }
        TableKind::PerClass => Table {
            headers: ["Class", "Precision", "Recall", "F1-score", "Support"].map(s).to_vec(),
            rows: reports
                .first()
                .map(|r| {
                    r.per_class
                        .iter()
                        .map(|c| {
                            vec![
                                Cell::Text(c.label.clone()),
                                Cell::Score(c.precision),
                                Cell::Score(c.recall),
                                Cell::Score(c.f1),
                                Cell::Count(c.support),
                            ]
                        })
                        .collect()
                })
                .unwrap_or_default(),
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveStat {
    pub epoch: usize,
    pub folds: usize,
    pub train_mean: f64,
    pub train_std: f64,
    pub val_mean: f64,
    pub val_std: f64,
    pub dev_mean: Option<f64>,
    pub dev_std: Option<f64>,
}

/// Mean and population standard deviation.
fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Mean ± std of the fold curves at every evaluated epoch up to `max_epoch`.
pub fn curve_stats<F: Scalar>(models: &[FoldModel<F>], max_epoch: Option<usize>) -> Result<Vec<CurveStat>, EvalError> {
    let mut epochs: Vec<usize> = models.iter().flat_map(|m| m.curve.iter().map(|p| p.epoch)).collect();
    epochs.sort_unstable();
    epochs.dedup();
    epochs.retain(|&e| max_epoch.is_none_or(|m| e <= m));
    if epochs.is_empty() {
        return Err(EvalError::NoCurves);
    }
    Ok(epochs
        .into_iter()
        .map(|epoch| {
            let points: Vec<_> = models.iter().filter_map(|m| m.curve.iter().find(|p| p.epoch == epoch)).collect();
            let (train_mean, train_std) = mean_std(&points.iter().map(|p| p.train_accuracy).collect::<Vec<_>>());
            let (val_mean, val_std) = mean_std(&points.iter().map(|p| p.val_accuracy).collect::<Vec<_>>());
            let dev: Vec<f64> = points.iter().filter_map(|p| p.dev_accuracy).collect();
            let (dev_mean, dev_std) = if dev.is_empty() {
                (None, None)
            } else {
                let (m, s) = mean_std(&dev);
                (Some(m), Some(s))
            };
            CurveStat { epoch, folds: points.len(), train_mean, train_std, val_mean, val_std, dev_mean, dev_std }
        })
        .collect())
}

pub fn curves_csv(stats: &[CurveStat]) -> Result<String, EvalError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for s in stats {
        w.serialize(s)?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("utf8 csv"))
}

const FONT_CANDIDATES: &[&str] = &[
    "/usr/share/fonts/truetype/dejavu/DejaVuSans.ttf",
    "/usr/share/fonts/dejavu/DejaVuSans.ttf",
    "/usr/share/fonts/TTF/DejaVuSans.ttf",
    "/usr/share/fonts/truetype/liberation/LiberationSans-Regular.ttf",
    "/Library/Fonts/Arial.ttf",
    "C:\\Windows\\Fonts\\arial.ttf",
];

/// Registers a system font for plot labels once. `PANEL_LAYOUT_FONT`
/// overrides the search. Returns false when no font could be loaded.
fn ensure_font() -> bool {
    static LOADED: OnceLock<bool> = OnceLock::new();
    *LOADED.get_or_init(|| {
        let env = std::env::var("PANEL_LAYOUT_FONT").ok();
        for path in env.iter().map(String::as_str).chain(FONT_CANDIDATES.iter().copied()) {
            if let Ok(bytes) = fs::read(path) {
                let leaked: &'static [u8] = Box::leak(bytes.into_boxed_slice());
                if plotters::style::register_font("sans-serif", plotters::style::FontStyle::Normal, leaked).is_ok() {
                    return true;
                }
            }
        }
        warn!("no TrueType font found; plots will have no text");
        false
    })
}

/// Draws mean accuracy curves with ±1 std error bars to a PNG.
pub fn plot_curves_png(stats: &[CurveStat], path: &Path) -> Result<(), EvalError> {
    use plotters::prelude::*;
    let err = |e: &dyn std::fmt::Display| EvalError::Plot(e.to_string());
    let labels = ensure_font();
    let max_epoch = stats.iter().map(|s| s.epoch).max().unwrap_or(1).max(2) as f64;
    let root = BitMapBackend::new(path, (900, 560)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| err(&e))?;
    let mut builder = ChartBuilder::on(&root);
    builder.margin(20);
    if labels {
        builder
            .caption("Mean accuracy across folds (error bars: 1 std)", ("sans-serif", 22))
            .x_label_area_size(40)
            .y_label_area_size(50);
    }
    let mut chart = builder.build_cartesian_2d(0.5f64..max_epoch + 0.5, 0f64..1.05f64).map_err(|e| err(&e))?;
    if labels {
        chart.configure_mesh().x_desc("epoch").y_desc("accuracy").draw().map_err(|e| err(&e))?;
    } else {
        chart.configure_mesh().disable_x_mesh().disable_y_mesh().x_labels(0).y_labels(0).draw().map_err(|e| err(&e))?;
    }
    type Getter = fn(&CurveStat) -> Option<(f64, f64)>;
    let series: [(&str, RGBColor, Getter); 3] = [
        ("train", RGBColor(31, 119, 180), |s| Some((s.train_mean, s.train_std))),
        ("fold validation", RGBColor(255, 127, 14), |s| Some((s.val_mean, s.val_std))),
        ("dev", RGBColor(44, 160, 44), |s| s.dev_mean.zip(s.dev_std)),
    ];
    for (name, color, get) in series {
        let pts: Vec<(f64, f64, f64)> =
            stats.iter().filter_map(|s| get(s).map(|(m, sd)| (s.epoch as f64, m, sd))).collect();
        if pts.is_empty() {
            continue;
        }
        let drawn = chart
            .draw_series(LineSeries::new(pts.iter().map(|&(x, m, _)| (x, m)), color.stroke_width(2)))
            .map_err(|e| err(&e))?;
        if labels {
            drawn.label(name).legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
        }
        chart
            .draw_series(pts.iter().map(|&(x, m, sd)| {
                ErrorBar::new_vertical(x, (m - sd).max(0.0), m, (m + sd).min(1.05), color.filled(), 6)
            }))
            .map_err(|e| err(&e))?;
    }
    if labels {
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .position(SeriesLabelPosition::LowerRight)
            .draw()
            .map_err(|e| err(&e))?;
    }
    root.present().map_err(|e| err(&e))?;
    Ok(())
}

/// Writes `curves.png` and `curves.csv` for the fold models into `dir`,
/// truncated at `max_epoch` (50 by default).
pub fn plot_curves<F: Scalar>(
    models: &[FoldModel<F>],
    dir: &Path,
    max_epoch: Option<usize>,
) -> Result<Vec<CurveStat>, EvalError> {
    let stats = curve_stats(models, max_epoch)?;
    fs::create_dir_all(dir)?;
    fs::write(dir.join("curves.csv"), curves_csv(&stats)?)?;
    plot_curves_png(&stats, &dir.join("curves.png"))?;
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx(n: usize) -> ReportContext {
        ReportContext::new((0..n).map(|i| format!("c{i}")).collect())
    }

    #[test]
    fn toy_three_class() {
        let r = evaluate_ids(&[(0, 0), (0, 1), (1, 1), (2, 2)], &ctx(3)).unwrap();
        assert_eq!(r.accuracy, 0.75);
        assert_eq!(r.per_class[0].precision, 1.0);
        assert_eq!(r.per_class[0].recall, 0.5);
        assert_eq!(r.per_class[1].precision, 0.5);
        assert_eq!(r.confusion, vec![vec![1, 1, 0], vec![0, 1, 0], vec![0, 0, 1]]);
        assert_eq!(r.majority_baseline, 0.5);
    }

    #[test]
    fn degenerate_class_scores_zero() {
        let r = evaluate_ids(&[(0, 0), (1, 1)], &ctx(3)).unwrap();
        let c = &r.per_class[2];
        assert_eq!((c.precision, c.recall, c.f1), (0.0, 0.0, 0.0));
        assert_eq!(r.accuracy, 1.0);
    }

    #[test]
    fn errors() {
        assert!(matches!(evaluate_ids(&[], &ctx(2)), Err(EvalError::EmptyPredictions)));
        assert!(matches!(evaluate_ids(&[(0, 2)], &ctx(2)), Err(EvalError::IdOutOfRange { id: 2, .. })));
    }

    #[test]
    fn text_table_formats() {
        let r = evaluate_ids(&[(0, 0), (0, 1), (1, 1)], &ctx(2)).unwrap();
        let t = render_tables(&[r], TableKind::PerClass);
        let text = t.to_text();
        assert!(text.contains("0.67"), "{text}");
        assert!(text.lines().next().unwrap().starts_with("Class"));
        assert_eq!(text.lines().count(), 4);
    }

    #[test]
    fn population_std() {
        let (m, s) = mean_std(&[0.5, 0.7]);
        assert!((m - 0.6).abs() < 1e-12 && (s - 0.1).abs() < 1e-12);
        assert_eq!(mean_std(&[0.3]).1, 0.0);
    }
}
