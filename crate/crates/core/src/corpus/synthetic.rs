//! Synthetic facing-page layouts for desk-scale experiments.
//!
//! Each style describes a distribution over panel grids. A spread is two
//! half-pages laid out independently (reading order right half first, rows
//! top to bottom, panels right to left). Styles differ either in grid shape
//! or only in spacing (gutters, margins), the latter being the hard cases.

use std::collections::BTreeSet;

use image::{GrayImage, Luma};
use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::CorpusError;
use crate::annotation::{BookAnnotation, Genre, PageAnnotation, Region, RegionKind};
use crate::geometry::BBox;

/// A pixel quantity drawn as `mean + U[-jitter, jitter]`, rounded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Jittered {
    pub mean: f64,
    pub jitter: f64,
}

impl Jittered {
    pub const fn new(mean: f64, jitter: f64) -> Self {
        Self { mean, jitter }
    }

    fn sample<R: Rng>(&self, rng: &mut R, min: i64) -> i64 {
        let v = if self.jitter > 0.0 { self.mean + rng.random_range(-self.jitter..=self.jitter) } else { self.mean };
        (v.round() as i64).max(min)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticStyle {
    pub id: String,
    /// Candidate row counts per half-page with relative weights.
    pub rows: Vec<(u32, f64)>,
    /// Candidate panel counts per row with relative weights.
    pub cols: Vec<(u32, f64)>,
    pub gutter: Jittered,
    pub margin: Jittered,
    /// Probability that two neighbouring panels in a row are merged.
    pub merge_prob: f64,
    /// Single column of four equal panels per half-page.
    pub four_panel: bool,
    /// Relative jitter of row heights and panel widths.
    pub size_jitter: f64,
    pub page_width: u32,
    pub page_height: u32,
    pub genre: Genre,
    pub publisher: String,
}

impl SyntheticStyle {
    /// Grid style with defaults for everything but the shape and spacing.
    pub fn grid(id: &str, rows: &[(u32, f64)], cols: &[(u32, f64)], gutter: f64, margin: f64, merge_prob: f64) -> Self {
        Self {
            id: id.into(),
            rows: rows.to_vec(),
            cols: cols.to_vec(),
            gutter: Jittered::new(gutter, 1.0),
            margin: Jittered::new(margin, 2.0),
            merge_prob,
            four_panel: false,
            size_jitter: 0.3,
            page_width: 320,
            page_height: 224,
            genre: Genre::Fantasy,
            publisher: "synthetic".into(),
        }
    }

    pub fn four_panel(id: &str, gutter: f64, margin: f64) -> Self {
        Self {
            rows: vec![(4, 1.0)],
            cols: vec![(1, 1.0)],
            four_panel: true,
            size_jitter: 0.0,
            genre: Genre::FourPanel,
            ..Self::grid(id, &[(4, 1.0)], &[(1, 1.0)], gutter, margin, 0.0)
        }
    }

    /// Everything that shapes the layouts, for duplicate detection.
    fn parameter_key(&self) -> String {
        format!(
            "{:?}|{:?}|{:?}|{:?}|{}|{}|{}|{}x{}",
            self.rows,
            self.cols,
            self.gutter,
            self.margin,
            self.merge_prob,
            self.four_panel,
            self.size_jitter,
            self.page_width,
            self.page_height
        )
    }

    fn validate(&self) -> Result<(), CorpusError> {
        let bad = |msg: String| Err(CorpusError::Synthetic(format!("style {}: {msg}", self.id)));
        if self.id.is_empty() {
            return bad("empty id".into());
        }
        if self.page_width < 40 || self.page_height < 40 || !self.page_width.is_multiple_of(2) {
            return bad(format!("page {}x{} too small or odd width", self.page_width, self.page_height));
        }
        if self.rows.is_empty()
            || self.cols.is_empty()
            || self.rows.iter().chain(&self.cols).any(|&(n, w)| n == 0 || w <= 0.0)
        {
            return bad("row/col distributions need positive counts and weights".into());
        }
        if !(0.0..=1.0).contains(&self.merge_prob) || !(0.0..0.9).contains(&self.size_jitter) {
            return bad("merge_prob must be in [0,1] and size_jitter in [0,0.9)".into());
        }
        Ok(())
    }
}

/// Twelve styles: six pairwise-distinct grids plus pairs that share a grid
/// and differ only in gutter or margin width.
pub fn default_styles() -> Vec<SyntheticStyle> {
    let genres = Genre::ALL;
    let mut styles = vec![
        SyntheticStyle::four_panel("yonkoma_tight", 5.0, 12.0),
        SyntheticStyle::four_panel("yonkoma_airy", 13.0, 12.0),
        SyntheticStyle::grid("grid3x2_tight", &[(3, 1.0)], &[(2, 1.0)], 5.0, 12.0, 0.2),
        SyntheticStyle::grid("grid3x2_wide", &[(3, 1.0)], &[(2, 1.0)], 15.0, 12.0, 0.2),
        SyntheticStyle::grid("grid3x2_margin", &[(3, 1.0)], &[(2, 1.0)], 5.0, 26.0, 0.2),
        SyntheticStyle::grid("grid4x2", &[(4, 1.0)], &[(2, 1.0)], 7.0, 10.0, 0.3),
        SyntheticStyle::grid("grid2x2", &[(2, 1.0)], &[(2, 1.0)], 10.0, 16.0, 0.1),
        SyntheticStyle::grid("grid_3col", &[(3, 1.0), (4, 1.0)], &[(3, 1.0)], 6.0, 10.0, 0.4),
        SyntheticStyle::grid("grid5x2", &[(5, 1.0)], &[(2, 1.0)], 6.0, 8.0, 0.5),
        SyntheticStyle::grid("strips", &[(2, 1.0), (3, 1.0)], &[(1, 1.0)], 12.0, 16.0, 0.0),
        SyntheticStyle::grid("dense4x3", &[(4, 1.0)], &[(3, 1.0)], 4.0, 6.0, 0.3),
        SyntheticStyle::grid("irregular", &[(3, 1.0), (4, 1.0), (5, 1.0)], &[(2, 1.0), (3, 1.0)], 9.0, 12.0, 0.5),
    ];
    for (i, s) in styles.iter_mut().enumerate() {
        if !s.four_panel {
            s.genre = genres[i % genres.len()];
        }
        s.publisher = format!("synthetic-{}", i % 4);
    }
    styles
}

fn style_rng(seed: u64, style_id: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(b"panel-layout/synthetic/v1");
    h.update(seed.to_le_bytes());
    h.update(style_id.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

fn pick<R: Rng>(rng: &mut R, choices: &[(u32, f64)]) -> u32 {
    let total: f64 = choices.iter().map(|c| c.1).sum();
    let mut x = rng.random_range(0.0..total);
    for &(n, w) in choices {
        if x < w {
            return n;
        }
        x -= w;
    }
    choices.last().expect("non-empty").0
}

/// Splits `total` pixels into `n` jittered sizes separated by `gap`.
fn split_span<R: Rng>(rng: &mut R, total: i64, n: usize, gap: i64, jitter: f64) -> Vec<i64> {
    let avail = total - gap * (n as i64 - 1);
    let weights: Vec<f64> =
        (0..n).map(|_| if jitter > 0.0 { 1.0 + rng.random_range(-jitter..=jitter) } else { 1.0 }).collect();
    let sum: f64 = weights.iter().sum();
    let mut sizes: Vec<i64> = weights.iter().map(|w| ((w / sum) * avail as f64).floor() as i64).collect();
    if jitter > 0.0 {
        let used: i64 = sizes.iter().sum();
        *sizes.last_mut().expect("n > 0") += avail - used;
    }
    sizes
}

fn half_page_boxes<R: Rng>(
    rng: &mut R,
    style: &SyntheticStyle,
    x0: i64,
    (margin_out, margin_in, margin_top, margin_bottom): (i64, i64, i64, i64),
    gutter: i64,
    right_half: bool,
) -> Vec<(i64, i64, i64, i64)> {
    let half = style.page_width as i64 / 2;
    let (left, right) = if right_half { (margin_in, margin_out) } else { (margin_out, margin_in) };
    let (ix0, ix1) = (x0 + left, x0 + half - right);
    let (iy0, iy1) = (margin_top, style.page_height as i64 - margin_bottom);
    let mut boxes = Vec::new();
    if style.four_panel {
        let h = (iy1 - iy0 - 3 * gutter) / 4;
        for r in 0..4 {
            let y = iy0 + r * (h + gutter);
            boxes.push((ix0, y, ix1, y + h));
        }
        return boxes;
    }
    let n_rows = pick(rng, &style.rows) as usize;
    let heights = split_span(rng, iy1 - iy0, n_rows, gutter, style.size_jitter);
    let mut y = iy0;
    for h in heights {
        let n_cols = pick(rng, &style.cols) as usize;
        let widths = split_span(rng, ix1 - ix0, n_cols, gutter, style.size_jitter);
        // spans as (start, end) left to right, then merged
        let mut spans: Vec<(i64, i64)> = Vec::new();
        let mut x = ix0;
        for w in widths {
            spans.push((x, x + w));
            x += w + gutter;
        }
        let mut merged: Vec<(i64, i64)> = Vec::new();
        for span in spans {
            match merged.last_mut() {
                Some(last) if rng.random_bool(style.merge_prob) => last.1 = span.1,
                _ => merged.push(span),
            }
        }
        for &(sx, ex) in merged.iter().rev() {
            boxes.push((sx, y, ex, y + h));
        }
        y += h + gutter;
    }
    boxes
}

fn generate_page<R: Rng>(rng: &mut R, style: &SyntheticStyle, index: u32) -> Result<PageAnnotation, CorpusError> {
    let half = style.page_width as i64 / 2;
    let margins = (
        style.margin.sample(rng, 1),
        style.margin.sample(rng, 1) / 2 + 1,
        style.margin.sample(rng, 1),
        style.margin.sample(rng, 1),
    );
    let gutter = style.gutter.sample(rng, 1);
    let mut boxes = half_page_boxes(rng, style, half, margins, gutter, true);
    boxes.extend(half_page_boxes(rng, style, 0, margins, gutter, false));
    let regions = boxes
        .into_iter()
        .enumerate()
        .map(|(i, (x0, y0, x1, y1))| {
            if x0 < 0 || y0 < 0 || x1 - x0 < 4 || y1 - y0 < 4 {
                return Err(CorpusError::Synthetic(format!(
                    "style {}: panel ({x0},{y0},{x1},{y1}) too small",
                    style.id
                )));
            }
            let bbox = BBox::new(x0 as u32, y0 as u32, x1 as u32, y1 as u32)
                .map_err(|e| CorpusError::Synthetic(e.to_string()))?;
            Ok(Region { id: format!("f{i:02}"), kind: RegionKind::Frame, bbox })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(PageAnnotation { index, width: style.page_width, height: style.page_height, regions })
}

/// Generated books (one per style, titled by style id) and a blank raster
/// for every page, in book then page order.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub books: Vec<BookAnnotation>,
    pub rasters: Vec<GrayImage>,
}

pub fn generate_synthetic_corpus(
    styles: &[SyntheticStyle],
    pages_per_style: u32,
    seed: u64,
) -> Result<SyntheticCorpus, CorpusError> {
    if pages_per_style < 10 {
        return Err(CorpusError::Synthetic(format!("pages_per_style must be at least 10, got {pages_per_style}")));
    }
    let mut ids = BTreeSet::new();
    let mut keys = BTreeSet::new();
    for style in styles {
        style.validate()?;
        if !ids.insert(style.id.as_str()) {
            return Err(CorpusError::Synthetic(format!("duplicate style id {:?}", style.id)));
        }
        if !keys.insert(style.parameter_key()) {
            warn!("style {} has the same parameters as an earlier style", style.id);
        }
    }
    let mut books = Vec::with_capacity(styles.len());
    let mut rasters = Vec::new();
    for style in styles {
        let mut rng = style_rng(seed, &style.id);
        let pages = (0..pages_per_style).map(|i| generate_page(&mut rng, style, i)).collect::<Result<Vec<_>, _>>()?;
        rasters.extend(pages.iter().map(|p| GrayImage::from_pixel(p.width, p.height, Luma([255]))));
        books.push(BookAnnotation {
            title: style.id.clone(),
            genre: Some(style.genre),
            publisher: Some(style.publisher.clone()),
            pages,
        });
    }
    Ok(SyntheticCorpus { books, rasters })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_style_ten_pages() {
        let c = generate_synthetic_corpus(&default_styles()[2..3], 10, 1).unwrap();
        assert_eq!(c.books.len(), 1);
        assert_eq!(c.books[0].pages.len(), 10);
        assert_eq!(c.rasters.len(), 10);
        assert!(c.books[0].pages.iter().all(|p| p.has_frames()));
    }

    #[test]
    fn four_panel_pages_have_eight_equal_width_frames() {
        let c = generate_synthetic_corpus(&default_styles()[..2], 20, 7).unwrap();
        for book in &c.books {
            for page in &book.pages {
                let frames: Vec<_> = page.frames().collect();
                assert_eq!(frames.len(), 8);
                let w = frames[0].bbox.width();
                let h = frames[0].bbox.height();
                assert!(frames.iter().all(|f| f.bbox.width() == w && f.bbox.height() == h));
                // four per half spread
                let right = frames.iter().filter(|f| f.bbox.xmin() >= page.width / 2).count();
                assert_eq!(right, 4);
            }
        }
    }

    #[test]
    fn frames_do_not_overlap_and_respect_margins() {
        let c = generate_synthetic_corpus(&default_styles(), 30, 11).unwrap();
        for book in &c.books {
            for page in &book.pages {
                let frames: Vec<_> = page.frames().collect();
                for (i, a) in frames.iter().enumerate() {
                    assert!(a.bbox.xmin() >= 1 && a.bbox.ymin() >= 1);
                    assert!(a.bbox.xmax() < page.width && a.bbox.ymax() < page.height);
                    for b in &frames[i + 1..] {
                        assert!(!a.bbox.intersects(&b.bbox), "{} page {}", book.title, page.index);
                    }
                }
            }
        }
    }

    #[test]
    fn twelve_styles_hundred_pages() {
        let c = generate_synthetic_corpus(&default_styles(), 100, 0).unwrap();
        assert_eq!(c.books.iter().map(|b| b.pages.len()).sum::<usize>(), 1200);
        let labels = crate::corpus::LabelMap::for_books(&c.books, crate::corpus::LabelTask::Title).unwrap();
        assert_eq!(labels.len(), 12);
    }

    #[test]
    fn generation_is_deterministic_per_seed() {
        let a = generate_synthetic_corpus(&default_styles(), 10, 5).unwrap();
        let b = generate_synthetic_corpus(&default_styles(), 10, 5).unwrap();
        let c = generate_synthetic_corpus(&default_styles(), 10, 6).unwrap();
        assert_eq!(a.books, b.books);
        assert_ne!(a.books, c.books);
    }

    #[test]
    fn bad_inputs() {
        let styles = default_styles();
        assert!(generate_synthetic_corpus(&styles, 9, 0).is_err());
        let dup = vec![styles[0].clone(), styles[0].clone()];
        assert!(generate_synthetic_corpus(&dup, 10, 0).is_err());
        // identical parameters under different ids only warn
        let mut twin = styles[3].clone();
        twin.id = "twin".into();
        assert!(generate_synthetic_corpus(&[styles[3].clone(), twin], 10, 0).is_ok());
    }
}
