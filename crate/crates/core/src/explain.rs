//! Grad-CAM heatmaps and overlays.
//!
//! For a target class `c` and a spatial activation `A` (channels `k`), the
//! channel weights are the spatial mean of `d y_c / d A_k`, and the map is
//! `ReLU(sum_k w_k A_k)`. Maps are min-max normalized per image at feature
//! resolution, bilinearly upsampled to the source image, and normalized again
//! so the upsampled maximum is exactly 1.

use image::{GrayImage, Rgb, RgbImage};
use ndarray::{Array2, Array4, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{ClassifierError, FoldModel};
use crate::item::ItemRef;
use crate::nn::{LayerKind, NetError, Network};
use crate::render::RenderedImage;
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error("layer {0:?} not found")]
    LayerNotFound(String),
    #[error("layer {0:?} is not a convolutional activation")]
    NotSpatial(String),
    #[error("Grad-CAM needs a single class score per image: {0}")]
    NonScalarTarget(String),
    #[error("class {class} out of range for {classes} classes")]
    ClassOutOfRange { class: usize, classes: usize },
    #[error("heatmap is {heat_w}x{heat_h} but image is {image_w}x{image_h}")]
    DimensionMismatch { heat_w: usize, heat_h: usize, image_w: u32, image_h: u32 },
    #[error("nothing to average")]
    Empty,
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Net(NetError),
}

impl From<NetError> for ExplainError {
    fn from(e: NetError) -> Self {
        match e {
            NetError::LayerNotFound(l) => ExplainError::LayerNotFound(l),
            other => ExplainError::Net(other),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeatmapSource {
    pub item: ItemRef,
    /// Fold of the model, `None` for ensemble means.
    pub fold: Option<usize>,
    pub layer: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct Heatmap<F> {
    /// `(height, width)`, values in `[0, 1]`.
    pub values: Array2<F>,
    pub target_class: usize,
    pub source: HeatmapSource,
    /// The rectified map was identically zero; `values` is all zeros.
    pub degenerate: bool,
}

impl<F: Scalar> Heatmap<F> {
    pub fn height(&self) -> usize {
        self.values.nrows()
    }

    pub fn width(&self) -> usize {
        self.values.ncols()
    }

    pub fn max(&self) -> F {
        self.values.fold(F::zero(), |m, &v| m.max(v))
    }

    pub fn mean(&self) -> F {
        self.values.mean().unwrap_or_else(F::zero)
    }
}

/// Min-max normalization. Returns `None` when every value is `<= 0` (the
/// rectified map is empty); a constant positive map becomes all ones.
pub fn min_max_normalize<F: Scalar>(map: &Array2<F>) -> Option<Array2<F>> {
    let max = map.fold(F::neg_infinity(), |m, &v| m.max(v));
    if max.partial_cmp(&F::zero()) != Some(std::cmp::Ordering::Greater) {
        return None;
    }
    let min = map.fold(F::infinity(), |m, &v| m.min(v));
    let span = max - min;
    if span <= F::zero() {
        return Some(Array2::from_elem(map.raw_dim(), F::one()));
    }
    Some(map.mapv(|v| (v - min) / span))
}

/// Bilinear resize with pixel-center alignment and edge clamping.
pub fn bilinear_resize<F: Scalar>(map: &Array2<F>, out_h: usize, out_w: usize) -> Array2<F> {
    let (h, w) = map.dim();
    if (h, w) == (out_h, out_w) {
        return map.clone();
    }
    let axis = |n_in: usize, n_out: usize| -> Vec<(usize, usize, F)> {
        let scale = n_in as f64 / n_out as f64;
        (0..n_out)
            .map(|o| {
                let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
                let i0 = src.floor() as usize;
                let i1 = (i0 + 1).min(n_in - 1);
                (i0, i1, F::from_f64_lossy(src - i0 as f64))
            })
            .collect()
    };
    let ys = axis(h, out_h);
    let xs = axis(w, out_w);
    Array2::from_shape_fn((out_h, out_w), |(oy, ox)| {
        let (y0, y1, fy) = ys[oy];
        let (x0, x1, fx) = xs[ox];
        let top = map[[y0, x0]] * (F::one() - fx) + map[[y0, x1]] * fx;
        let bottom = map[[y1, x0]] * (F::one() - fx) + map[[y1, x1]] * fx;
        top * (F::one() - fy) + bottom * fy
    })
}

/// Rectified Grad-CAM map at the resolution of layer `layer` for a single
/// input `x` of shape `(1, C, H, W)`. Not normalized.
pub fn grad_cam_raw<F: Scalar>(
    network: &Network<F>,
    x: &Array4<F>,
    class: usize,
    layer: usize,
) -> Result<Array2<F>, ExplainError> {
    if x.shape()[0] != 1 {
        return Err(ExplainError::NonScalarTarget(format!("batch of {} images", x.shape()[0])));
    }
    let name = &network.layers[layer].name;
    if matches!(network.layers[layer].kind, LayerKind::Linear(_) | LayerKind::GlobalAvgPool)
        || !network.layers[..=layer].iter().any(|l| matches!(l.kind, LayerKind::Conv(_)))
    {
        return Err(ExplainError::NotSpatial(name.clone()));
    }
    let tape = network.forward(x)?;
    let logits = tape.logits();
    if logits.nrows() != 1 {
        return Err(ExplainError::NonScalarTarget(format!("output has shape {:?}", logits.shape())));
    }
    let classes = logits.ncols();
    if class >= classes {
        return Err(ExplainError::ClassOutOfRange { class, classes });
    }
    let mut seed = Array2::zeros((1, classes));
    seed[[0, class]] = F::one();
    let grads = network.backward(&tape, &seed, Some(layer), false);
    let g = grads.captured.expect("captured layer gradient");
    let a = tape.output(layer);
    let (_, k, h, w) = a.dim();
    let area = F::from_count(h * w);
    let mut cam = Array2::<F>::zeros((h, w));
    for ch in 0..k {
        let alpha = g.index_axis(Axis(0), 0).index_axis(Axis(0), ch).sum() / area;
        cam.scaled_add(alpha, &a.index_axis(Axis(0), 0).index_axis(Axis(0), ch));
    }
    Ok(cam.mapv(|v| if v > F::zero() { v } else { F::zero() }))
}

/// Normalizes a raw map and upsamples it to `(out_h, out_w)`.
pub fn finish_heatmap<F: Scalar>(raw: &Array2<F>, out_h: usize, out_w: usize) -> (Array2<F>, bool) {
    match min_max_normalize(raw) {
        None => (Array2::zeros((out_h, out_w)), true),
        Some(norm) => {
            let up = bilinear_resize(&norm, out_h, out_w);
            // a positive map stays positive under interpolation, so this is Some
            (min_max_normalize(&up).unwrap_or(up), false)
        }
    }
}

/// Grad-CAM of one fold model on one image. `target_class` defaults to the
/// model's prediction and `target_layer` to the activation after the last
/// convolution.
pub fn grad_cam<F: Scalar>(
    model: &FoldModel<F>,
    image: &RenderedImage,
    target_class: Option<usize>,
    target_layer: Option<&str>,
) -> Result<Heatmap<F>, ExplainError> {
    let layer_name = match target_layer {
        Some(l) => l.to_string(),
        None => model
            .network
            .last_conv_activation()
            .ok_or_else(|| ExplainError::NotSpatial("network has no convolution".into()))?
            .to_string(),
    };
    let layer = model.network.layer_index(&layer_name)?;
    let x = model.preprocess(&[&image.pixels]);
    let class = match target_class {
        Some(c) => c,
        None => {
            let logits = model.network.predict(&x)?;
            let row = logits.row(0);
            (0..row.len()).fold(0, |best, i| if row[i] > row[best] { i } else { best })
        }
    };
    let raw = grad_cam_raw(&model.network, &x, class, layer)?;
    let (values, degenerate) = finish_heatmap(&raw, image.height() as usize, image.width() as usize);
    Ok(Heatmap {
        values,
        target_class: class,
        source: HeatmapSource { item: image.source.clone(), fold: Some(model.fold), layer: layer_name },
        degenerate,
    })
}

/// Weighted mean of heatmaps of the same size, re-normalized to max 1.
/// All-zero weights fall back to a plain mean.
pub fn weighted_mean<F: Scalar>(maps: &[Heatmap<F>], weights: &[f64]) -> Result<Heatmap<F>, ExplainError> {
    let first = maps.first().ok_or(ExplainError::Empty)?;
    let total: f64 = weights.iter().sum();
    let uniform = vec![1.0; maps.len()];
    let (weights, total) = if total > 0.0 { (weights, total) } else { (&uniform[..], maps.len() as f64) };
    let mut acc = Array2::<F>::zeros(first.values.raw_dim());
    for (m, &w) in maps.iter().zip(weights) {
        if m.values.dim() != acc.dim() {
            return Err(ExplainError::DimensionMismatch {
                heat_w: m.width(),
                heat_h: m.height(),
                image_w: first.width() as u32,
                image_h: first.height() as u32,
            });
        }
        acc.scaled_add(F::from_f64_lossy(w / total), &m.values);
    }
    let (values, degenerate) = match min_max_normalize(&acc) {
        Some(v) => (v, false),
        None => (acc, true),
    };
    Ok(Heatmap {
        values,
        target_class: first.target_class,
        source: HeatmapSource { item: first.source.item.clone(), fold: None, layer: first.source.layer.clone() },
        degenerate,
    })
}

/// Color of heatmap value `h` under the overlay colormap (viridis).
pub fn colormap(h: f64) -> [u8; 3] {
    let c = colorous::VIRIDIS.eval_continuous(h.clamp(0.0, 1.0));
    [c.r, c.g, c.b]
}

/// Blends the colormapped heatmap over the grayscale image:
/// `out = (1 - alpha) * gray + alpha * colormap(h)`, rounded per channel.
pub fn overlay<F: Scalar>(heatmap: &Heatmap<F>, image: &GrayImage, alpha: f64) -> Result<RgbImage, ExplainError> {
    if (heatmap.width(), heatmap.height()) != (image.width() as usize, image.height() as usize) {
        return Err(ExplainError::DimensionMismatch {
            heat_w: heatmap.width(),
            heat_h: heatmap.height(),
            image_w: image.width(),
            image_h: image.height(),
        });
    }
    let alpha = alpha.clamp(0.0, 1.0);
    Ok(RgbImage::from_fn(image.width(), image.height(), |x, y| {
        let g = image.get_pixel(x, y).0[0] as f64;
        let c = colormap(heatmap.values[[y as usize, x as usize]].as_f64());
        Rgb(c.map(|v| ((1.0 - alpha) * g + alpha * v as f64).round() as u8))
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrokeAttention {
    /// Mean heatmap value within `radius` (Chebyshev) of a stroke pixel.
    pub near_mean: f64,
    /// Mean heatmap value everywhere else.
    pub far_mean: f64,
    pub near_pixels: usize,
    pub far_pixels: usize,
}

/// Pixels within Chebyshev distance `radius` of a pixel equal to `value`.
pub fn dilated_mask(image: &GrayImage, value: u8, radius: usize) -> Array2<bool> {
    let (w, h) = (image.width() as usize, image.height() as usize);
    let hits = Array2::from_shape_fn((h, w), |(y, x)| image.get_pixel(x as u32, y as u32).0[0] == value);
    // separable: a horizontal pass then a vertical pass, each a windowed OR
    let window = |line: &[bool]| -> Vec<bool> {
        let n = line.len();
        let mut prefix = vec![0usize; n + 1];
        for i in 0..n {
            prefix[i + 1] = prefix[i] + line[i] as usize;
        }
        (0..n).map(|i| prefix[(i + radius + 1).min(n)] > prefix[i.saturating_sub(radius)]).collect()
    };
    let mut rows = Array2::from_elem((h, w), false);
    for y in 0..h {
        let line: Vec<bool> = hits.row(y).to_vec();
        for (x, v) in window(&line).into_iter().enumerate() {
            rows[[y, x]] = v;
        }
    }
    let mut out = Array2::from_elem((h, w), false);
    for x in 0..w {
        let line: Vec<bool> = rows.column(x).to_vec();
        for (y, v) in window(&line).into_iter().enumerate() {
            out[[y, x]] = v;
        }
    }
    out
}

/// Heatmap mass near frame strokes versus elsewhere.
pub fn stroke_attention<F: Scalar>(
    heatmap: &Heatmap<F>,
    image: &GrayImage,
    stroke_value: u8,
    radius: usize,
) -> StrokeAttention {
    let mask = dilated_mask(image, stroke_value, radius);
    let (mut near, mut far, mut n_near, mut n_far) = (0.0, 0.0, 0usize, 0usize);
    for (v, &m) in heatmap.values.iter().zip(mask.iter()) {
        if m {
            near += v.as_f64();
            n_near += 1;
        } else {
            far += v.as_f64();
            n_far += 1;
        }
    }
    let mean = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
    StrokeAttention {
        near_mean: mean(near, n_near),
        far_mean: mean(far, n_far),
        near_pixels: n_near,
        far_pixels: n_far,
    }
}
