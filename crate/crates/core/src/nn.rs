//! Minimal convolutional network with reverse-mode gradients.
//!
//! Activations are `(batch, channels, height, width)` arrays throughout; a
//! linear layer flattens its input and produces `(batch, out, 1, 1)`.
//! Convolutions are stride 1 with "same" zero padding and run as im2col
//! followed by a matrix product.

use ndarray::{Array1, Array2, Array4, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum NetError {
    #[error("expected input of shape {expected:?}, got {got:?}")]
    InputShape { expected: [usize; 3], got: [usize; 3] },
    #[error("layer {0:?} not found")]
    LayerNotFound(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct Conv2d<F> {
    /// `(out_channels, in_channels * kernel * kernel)`.
    pub weight: Array2<F>,
    pub bias: Array1<F>,
    pub in_channels: usize,
    pub kernel: usize,
}

impl<F: Scalar> Conv2d<F> {
    pub fn he_init<R: Rng>(in_channels: usize, out_channels: usize, kernel: usize, rng: &mut R) -> Self {
        assert!(kernel % 2 == 1, "kernel size must be odd");
        let fan_in = in_channels * kernel * kernel;
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("valid std");
        let weight = Array2::from_shape_fn((out_channels, fan_in), |_| F::from_f64_lossy(normal.sample(rng)));
        Self { weight, bias: Array1::zeros(out_channels), in_channels, kernel }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.nrows()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct Linear<F> {
    /// `(out_features, in_features)`.
    pub weight: Array2<F>,
    pub bias: Array1<F>,
}

impl<F: Scalar> Linear<F> {
    pub fn xavier_init<R: Rng>(in_features: usize, out_features: usize, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, (1.0 / in_features as f64).sqrt()).expect("valid std");
        let weight = Array2::from_shape_fn((out_features, in_features), |_| F::from_f64_lossy(normal.sample(rng)));
        Self { weight, bias: Array1::zeros(out_features) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar", tag = "type", rename_all = "snake_case")]
pub enum LayerKind<F> {
    Conv(Conv2d<F>),
    Relu,
    /// 2×2 max pooling with stride 2 (odd edges dropped).
    MaxPool2,
    GlobalAvgPool,
    Linear(Linear<F>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct Layer<F> {
    pub name: String,
    pub kind: LayerKind<F>,
}

impl<F: Scalar> Layer<F> {
    pub fn new(name: impl Into<String>, kind: LayerKind<F>) -> Self {
        Self { name: name.into(), kind }
    }

    fn has_params(&self) -> bool {
        matches!(self.kind, LayerKind::Conv(_) | LayerKind::Linear(_))
    }
}

/// Gradient of a layer's weight and bias.
pub type ParamGrad<F> = (Array2<F>, Array1<F>);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct Network<F> {
    /// `(channels, height, width)` of one input.
    pub input_shape: [usize; 3],
    pub layers: Vec<Layer<F>>,
}

enum Saved<F> {
    /// im2col matrix of the conv input.
    Cols(Array2<F>),
    /// Flat argmax index into the pool input for every output element.
    Argmax(Vec<usize>),
    None,
}

/// Forward-pass record needed for backpropagation.
pub struct Tape<F> {
    inputs: Vec<Array4<F>>,
    saved: Vec<Saved<F>>,
    /// Output of every layer; the last entry is the logits.
    outputs: Vec<Array4<F>>,
}

impl<F: Scalar> Tape<F> {
    pub fn output(&self, layer: usize) -> &Array4<F> {
        &self.outputs[layer]
    }

    pub fn logits(&self) -> ArrayView2<'_, F> {
        let last = self.outputs.last().expect("network has layers");
        let n = last.shape()[0];
        last.view().into_shape_with_order((n, last.len() / n)).expect("contiguous logits")
    }
}

/// Result of a backward pass.
pub struct Gradients<F> {
    /// One entry per layer, `None` for parameter-free layers.
    pub params: Vec<Option<ParamGrad<F>>>,
    /// Gradient with respect to the output of the captured layer.
    pub captured: Option<Array4<F>>,
}

fn im2col<F: Scalar>(x: &Array4<F>, k: usize) -> Array2<F> {
    let (n, c, h, w) = x.dim();
    let pad = (k / 2) as isize;
    let hw = h * w;
    let mut cols = Array2::<F>::zeros((c * k * k, n * hw));
    let xs = x.as_slice().expect("standard layout");
    let cs = cols.as_slice_mut().expect("standard layout");
    let row_len = n * hw;
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst_row = &mut cs[row * row_len..(row + 1) * row_len];
                let (dy, dx) = (ky as isize - pad, kx as isize - pad);
                for ni in 0..n {
                    let src = &xs[(ni * c + ci) * hw..(ni * c + ci + 1) * hw];
                    let dst = &mut dst_row[ni * hw..(ni + 1) * hw];
                    for y in 0..h {
                        let sy = y as isize + dy;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let src_row = &src[sy as usize * w..(sy as usize + 1) * w];
                        let dst_row = &mut dst[y * w..(y + 1) * w];
                        let x0 = (-dx).max(0) as usize;
                        let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
                        if x0 < x1 {
                            let s0 = (x0 as isize + dx) as usize;
                            dst_row[x0..x1].copy_from_slice(&src_row[s0..s0 + (x1 - x0)]);
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im<F: Scalar>(cols: &Array2<F>, shape: (usize, usize, usize, usize), k: usize) -> Array4<F> {
    let (n, c, h, w) = shape;
    let pad = (k / 2) as isize;
    let hw = h * w;
    let mut x = Array4::<F>::zeros(shape);
    let xs = x.as_slice_mut().expect("standard layout");
    let cs = cols.as_slice().expect("standard layout");
    let row_len = n * hw;
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src_row = &cs[row * row_len..(row + 1) * row_len];
                let (dy, dx) = (ky as isize - pad, kx as isize - pad);
                for ni in 0..n {
                    let dst = &mut xs[(ni * c + ci) * hw..(ni * c + ci + 1) * hw];
                    let src = &src_row[ni * hw..(ni + 1) * hw];
                    for y in 0..h {
                        let sy = y as isize + dy;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let x0 = (-dx).max(0) as usize;
                        let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
                        for xx in x0..x1 {
                            let sx = (xx as isize + dx) as usize;
                            dst[sy as usize * w + sx] += src[y * w + xx];
                        }
                    }
                }
            }
        }
    }
    x
}

/// `(Cout, N*H*W)` matrix to `(N, Cout, H, W)` activations.
fn unfold_channels<F: Scalar>(mat: Array2<F>, n: usize, h: usize, w: usize) -> Array4<F> {
    let cout = mat.nrows();
    mat.into_shape_with_order((cout, n, h, w))
        .expect("conv output shape")
        .permuted_axes([1, 0, 2, 3])
        .as_standard_layout()
        .into_owned()
}

fn fold_channels<F: Scalar>(x: &Array4<F>) -> Array2<F> {
    let (n, c, h, w) = x.dim();
    x.view()
        .permuted_axes([1, 0, 2, 3])
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((c, n * h * w))
        .expect("contiguous")
}

fn flatten<F: Scalar>(x: &Array4<F>) -> ArrayView2<'_, F> {
    let n = x.shape()[0];
    x.view().into_shape_with_order((n, x.len() / n)).expect("standard layout activations")
}

impl<F: Scalar> Network<F> {
    pub fn new(input_shape: [usize; 3], layers: Vec<Layer<F>>) -> Self {
        Self { input_shape, layers }
    }

    /// Four conv blocks (3×3 conv, ReLU, 2×2 max pool) and a linear head.
    pub fn tiny<R: Rng>(input_shape: [usize; 3], widths: &[usize], num_classes: usize, rng: &mut R) -> Self {
        let mut layers = Vec::new();
        let mut in_ch = input_shape[0];
        let (mut h, mut w) = (input_shape[1], input_shape[2]);
        for (i, &width) in widths.iter().enumerate() {
            let block = format!("block{}", i + 1);
            layers.push(Layer::new(format!("{block}.conv"), LayerKind::Conv(Conv2d::he_init(in_ch, width, 3, rng))));
            layers.push(Layer::new(format!("{block}.relu"), LayerKind::Relu));
            layers.push(Layer::new(format!("{block}.pool"), LayerKind::MaxPool2));
            in_ch = width;
            h /= 2;
            w /= 2;
        }
        layers.push(Layer::new("head.fc", LayerKind::Linear(Linear::xavier_init(in_ch * h * w, num_classes, rng))));
        Self { input_shape, layers }
    }

    pub fn num_classes(&self) -> usize {
        match self.layers.last().map(|l| &l.kind) {
            Some(LayerKind::Linear(l)) => l.weight.nrows(),
            Some(LayerKind::Conv(c)) => c.out_channels(),
            _ => 0,
        }
    }

    pub fn layer_index(&self, name: &str) -> Result<usize, NetError> {
        self.layers.iter().position(|l| l.name == name).ok_or_else(|| NetError::LayerNotFound(name.to_string()))
    }

    /// Name of the activation after the last convolution (the ReLU that
    /// follows it, when present).
    pub fn last_conv_activation(&self) -> Option<&str> {
        let conv = self.layers.iter().rposition(|l| matches!(l.kind, LayerKind::Conv(_)))?;
        let idx = match self.layers.get(conv + 1).map(|l| &l.kind) {
            Some(LayerKind::Relu) => conv + 1,
            _ => conv,
        };
        Some(&self.layers[idx].name)
    }

    fn check_input(&self, x: &Array4<F>) -> Result<(), NetError> {
        let got = [x.shape()[1], x.shape()[2], x.shape()[3]];
        if got != self.input_shape {
            return Err(NetError::InputShape { expected: self.input_shape, got });
        }
        Ok(())
    }

    /// Logits `(batch, classes)` without recording a tape.
    pub fn predict(&self, x: &Array4<F>) -> Result<Array2<F>, NetError> {
        self.check_input(x)?;
        let mut cur = x.clone();
        for layer in &self.layers {
            cur = self.layer_forward(layer, &cur, None);
        }
        Ok(flatten(&cur).to_owned())
    }

    pub fn forward(&self, x: &Array4<F>) -> Result<Tape<F>, NetError> {
        self.check_input(x)?;
        let mut tape = Tape { inputs: Vec::new(), saved: Vec::new(), outputs: Vec::new() };
        let mut cur = x.clone();
        for layer in &self.layers {
            let mut saved = Saved::None;
            let out = self.layer_forward(layer, &cur, Some(&mut saved));
            tape.inputs.push(cur);
            tape.saved.push(saved);
            tape.outputs.push(out.clone());
            cur = out;
        }
        Ok(tape)
    }

    fn layer_forward(&self, layer: &Layer<F>, x: &Array4<F>, saved: Option<&mut Saved<F>>) -> Array4<F> {
        let (n, c, h, w) = x.dim();
        match &layer.kind {
            LayerKind::Conv(conv) => {
                let cols = im2col(x, conv.kernel);
                let mut out = conv.weight.dot(&cols);
                out += &conv.bias.view().insert_axis(Axis(1));
                if let Some(s) = saved {
                    *s = Saved::Cols(cols);
                }
                unfold_channels(out, n, h, w)
            }
            LayerKind::Relu => x.mapv(|v| if v > F::zero() { v } else { F::zero() }),
            LayerKind::MaxPool2 => {
                let (oh, ow) = (h / 2, w / 2);
                let mut out = Array4::<F>::zeros((n, c, oh, ow));
                let mut argmax = Vec::with_capacity(n * c * oh * ow);
                let xs = x.as_slice().expect("standard layout");
                let os = out.as_slice_mut().expect("standard layout");
                let mut o = 0;
                for plane in 0..n * c {
                    let base = plane * h * w;
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut best = base + 2 * oy * w + 2 * ox;
                            for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                                let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                                if xs[idx] > xs[best] {
                                    best = idx;
                                }
                            }
                            os[o] = xs[best];
                            argmax.push(best);
                            o += 1;
                        }
                    }
                }
                if let Some(s) = saved {
                    *s = Saved::Argmax(argmax);
                }
                out
            }
            LayerKind::GlobalAvgPool => {
                let area = F::from_count(h * w);
                x.sum_axis(Axis(3))
                    .sum_axis(Axis(2))
                    .mapv(|v| v / area)
                    .into_shape_with_order((n, c, 1, 1))
                    .expect("shape")
            }
            LayerKind::Linear(lin) => {
                let flat = flatten(x);
                let mut out = flat.dot(&lin.weight.t());
                out += &lin.bias;
                let k = out.ncols();
                out.into_shape_with_order((n, k, 1, 1)).expect("shape")
            }
        }
    }

    /// Backpropagates `grad_logits` (`(batch, classes)`), optionally
    /// capturing the gradient at the output of layer `capture`.
    pub fn backward(
        &self,
        tape: &Tape<F>,
        grad_logits: &Array2<F>,
        capture: Option<usize>,
        need_params: bool,
    ) -> Gradients<F> {
        let last = tape.outputs.last().expect("tape has layers");
        let mut grad = grad_logits.clone().into_shape_with_order(last.dim()).expect("logit gradient shape");
        let mut params: Vec<Option<ParamGrad<F>>> = vec![None; self.layers.len()];
        let mut captured = None;
        for (i, layer) in self.layers.iter().enumerate().rev() {
            if capture == Some(i) {
                captured = Some(grad.clone());
                if !need_params {
                    break;
                }
            }
            let input = &tape.inputs[i];
            // the network input never needs a gradient
            let (pg, gx) = self.layer_backward(layer, input, &tape.saved[i], &grad, need_params, i > 0);
            if need_params && layer.has_params() {
                params[i] = pg;
            }
            match gx {
                Some(g) => grad = g,
                None => break,
            }
        }
        Gradients { params, captured }
    }

    fn layer_backward(
        &self,
        layer: &Layer<F>,
        input: &Array4<F>,
        saved: &Saved<F>,
        grad: &Array4<F>,
        need_params: bool,
        need_input: bool,
    ) -> (Option<ParamGrad<F>>, Option<Array4<F>>) {
        let (n, c, h, w) = input.dim();
        match &layer.kind {
            LayerKind::Conv(conv) => {
                let Saved::Cols(cols) = saved else { unreachable!("conv saves its columns") };
                let gmat = fold_channels(grad);
                let pg = need_params.then(|| (gmat.dot(&cols.t()), gmat.sum_axis(Axis(1))));
                let gx = need_input.then(|| col2im(&conv.weight.t().dot(&gmat), (n, c, h, w), conv.kernel));
                (pg, gx)
            }
            LayerKind::Relu => {
                let mut gx = grad.clone();
                Zip::from(&mut gx).and(input).for_each(|g, &x| {
                    if x <= F::zero() {
                        *g = F::zero();
                    }
                });
                (None, Some(gx))
            }
            LayerKind::MaxPool2 => {
                let Saved::Argmax(argmax) = saved else { unreachable!("pool saves argmax") };
                let mut gx = Array4::<F>::zeros((n, c, h, w));
                let gs = gx.as_slice_mut().expect("standard layout");
                for (g, &idx) in grad.iter().zip(argmax) {
                    gs[idx] += *g;
                }
                (None, Some(gx))
            }
            LayerKind::GlobalAvgPool => {
                let area = F::from_count(h * w);
                let mut gx = Array4::<F>::zeros((n, c, h, w));
                for ((ni, ci, _, _), &g) in grad.indexed_iter() {
                    gx.slice_mut(ndarray::s![ni, ci, .., ..]).fill(g / area);
                }
                (None, Some(gx))
            }
            LayerKind::Linear(lin) => {
                let k = lin.weight.nrows();
                let g2 = grad.view().into_shape_with_order((n, k)).expect("linear grad shape");
                let flat = flatten(input);
                let pg = need_params.then(|| (g2.t().dot(&flat), g2.sum_axis(Axis(0))));
                let gx = need_input.then(|| g2.dot(&lin.weight).into_shape_with_order((n, c, h, w)).expect("shape"));
                (pg, gx)
            }
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match &l.kind {
                LayerKind::Conv(c) => c.weight.len() + c.bias.len(),
                LayerKind::Linear(li) => li.weight.len() + li.bias.len(),
                _ => 0,
            })
            .sum()
    }

    fn params_mut(&mut self) -> impl Iterator<Item = (usize, &mut Array2<F>, &mut Array1<F>)> {
        self.layers.iter_mut().enumerate().filter_map(|(i, l)| match &mut l.kind {
            LayerKind::Conv(c) => Some((i, &mut c.weight, &mut c.bias)),
            LayerKind::Linear(li) => Some((i, &mut li.weight, &mut li.bias)),
            _ => None,
        })
    }
}

/// Mean softmax cross-entropy over the batch and its gradient w.r.t. the
/// logits.
pub fn softmax_cross_entropy<F: Scalar>(logits: ArrayView2<'_, F>, targets: &[usize]) -> (F, Array2<F>) {
    let n = logits.nrows();
    let mut probs = softmax(logits);
    let mut loss = F::zero();
    for (i, &t) in targets.iter().enumerate() {
        loss -= probs[[i, t]].max(F::min_positive_value()).ln();
        probs[[i, t]] -= F::one();
    }
    let scale = F::from_count(n);
    (loss / scale, probs.mapv(|v| v / scale))
}

pub fn softmax<F: Scalar>(logits: ArrayView2<'_, F>) -> Array2<F> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let max = row.fold(F::neg_infinity(), |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Stochastic gradient descent with classical momentum:
/// `v <- momentum * v + g`, `p <- p - lr * v`.
#[derive(Debug, Clone)]
pub struct Sgd<F> {
    pub momentum: F,
    velocity: Vec<Option<ParamGrad<F>>>,
}

impl<F: Scalar> Sgd<F> {
    pub fn new(network: &Network<F>, momentum: F) -> Self {
        let velocity = network
            .layers
            .iter()
            .map(|l| match &l.kind {
                LayerKind::Conv(c) => Some((Array2::zeros(c.weight.raw_dim()), Array1::zeros(c.bias.raw_dim()))),
                LayerKind::Linear(li) => Some((Array2::zeros(li.weight.raw_dim()), Array1::zeros(li.bias.raw_dim()))),
                _ => None,
            })
            .collect();
        Self { momentum, velocity }
    }

    pub fn step(&mut self, network: &mut Network<F>, grads: &[Option<ParamGrad<F>>], lr: F) {
        let momentum = self.momentum;
        for (i, weight, bias) in network.params_mut() {
            let (Some((gw, gb)), Some((vw, vb))) = (&grads[i], &mut self.velocity[i]) else { continue };
            Zip::from(&mut *vw).and(gw).for_each(|v, &g| *v = momentum * *v + g);
            Zip::from(&mut *vb).and(gb).for_each(|v, &g| *v = momentum * *v + g);
            Zip::from(weight).and(&*vw).for_each(|p, &v| *p -= lr * v);
            Zip::from(bias).and(&*vb).for_each(|p, &v| *p -= lr * v);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_net(rng: &mut ChaCha8Rng) -> Network<f64> {
        Network::new(
            [2, 6, 6],
            vec![
                Layer::new("c1", LayerKind::Conv(Conv2d::he_init(2, 3, 3, rng))),
                Layer::new("r1", LayerKind::Relu),
                Layer::new("p1", LayerKind::MaxPool2),
                Layer::new("c2", LayerKind::Conv(Conv2d::he_init(3, 2, 1, rng))),
                Layer::new("r2", LayerKind::Relu),
                Layer::new("fc", LayerKind::Linear(Linear::xavier_init(2 * 3 * 3, 4, rng))),
            ],
        )
    }

    fn loss_of(net: &Network<f64>, x: &Array4<f64>, t: &[usize]) -> f64 {
        softmax_cross_entropy(net.predict(x).unwrap().view(), t).0
    }

    /// Central finite differences against the analytic parameter gradient.
    #[test]
    fn parameter_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = small_net(&mut rng);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let x = Array4::from_shape_fn((3, 2, 6, 6), |_| normal.sample(&mut rng));
        let targets = [0, 3, 1];
        let tape = net.forward(&x).unwrap();
        let (_, g) = softmax_cross_entropy(tape.logits(), &targets);
        let grads = net.backward(&tape, &g, None, true);
        let eps = 1e-6;
        for layer_idx in [0usize, 3, 5] {
            let (gw, gb) = grads.params[layer_idx].as_ref().unwrap();
            let n_w = gw.len();
            for probe in [0usize, n_w / 2, n_w - 1] {
                let mut plus = net.clone();
                let mut minus = net.clone();
                let get = |n: &mut Network<f64>| -> *mut f64 {
                    match &mut n.layers[layer_idx].kind {
                        LayerKind::Conv(c) => c.weight.as_slice_mut().unwrap().as_mut_ptr(),
                        LayerKind::Linear(l) => l.weight.as_slice_mut().unwrap().as_mut_ptr(),
                        _ => unreachable!(),
                    }
                };
                unsafe {
                    *get(&mut plus).add(probe) += eps;
                    *get(&mut minus).add(probe) -= eps;
                }
                let numeric = (loss_of(&plus, &x, &targets) - loss_of(&minus, &x, &targets)) / (2.0 * eps);
                let analytic = gw.as_slice().unwrap()[probe];
                assert!((numeric - analytic).abs() < 1e-6, "layer {layer_idx} w[{probe}]: {numeric} vs {analytic}");
            }
            let mut plus = net.clone();
            let mut minus = net.clone();
            for (n, d) in [(&mut plus, eps), (&mut minus, -eps)] {
                match &mut n.layers[layer_idx].kind {
                    LayerKind::Conv(c) => c.bias[0] += d,
                    LayerKind::Linear(l) => l.bias[0] += d,
                    _ => unreachable!(),
                }
            }
            let numeric = (loss_of(&plus, &x, &targets) - loss_of(&minus, &x, &targets)) / (2.0 * eps);
            assert!((numeric - gb[0]).abs() < 1e-6, "layer {layer_idx} bias");
        }
    }

    #[test]
    fn captured_activation_gradient_matches_finite_differences() {
        // gradient of a class score w.r.t. the c2 activation, checked by
        // perturbing the activation and replaying the tail of the network
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = small_net(&mut rng);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let x = Array4::from_shape_fn((1, 2, 6, 6), |_| normal.sample(&mut rng));
        let tape = net.forward(&x).unwrap();
        let mut seed = Array2::zeros((1, 4));
        seed[[0, 2]] = 1.0;
        let grads = net.backward(&tape, &seed, Some(3), false);
        let g = grads.captured.unwrap();
        let act = tape.output(3).clone();
        let tail = |a: &Array4<f64>| {
            let mut cur = a.clone();
            for layer in &net.layers[4..] {
                cur = net.layer_forward(layer, &cur, None);
            }
            cur[[0, 2, 0, 0]]
        };
        let eps = 1e-6;
        for idx in [(0, 0, 0, 0), (0, 1, 2, 1), (0, 0, 1, 2)] {
            let mut p = act.clone();
            let mut m = act.clone();
            p[idx] += eps;
            m[idx] -= eps;
            let numeric = (tail(&p) - tail(&m)) / (2.0 * eps);
            assert!((numeric - g[idx]).abs() < 1e-6);
        }
    }

    #[test]
    fn im2col_round_trip_counts_overlaps() {
        // col2im(im2col(ones)) counts how many windows cover each pixel
        let x = Array4::<f64>::ones((1, 1, 3, 3));
        let back = col2im(&im2col(&x, 3), (1, 1, 3, 3), 3);
        assert_eq!(back[[0, 0, 1, 1]], 9.0);
        assert_eq!(back[[0, 0, 0, 0]], 4.0);
        assert_eq!(back[[0, 0, 0, 1]], 6.0);
    }

    #[test]
    fn training_reduces_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net: Network<f32> = Network::tiny([1, 16, 16], &[4, 8], 2, &mut rng);
        // class 0: bright left half, class 1: bright right half
        let x = Array4::from_shape_fn((8, 1, 16, 16), |(n, _, _, w)| if (w < 8) == (n % 2 == 0) { 1.0 } else { -1.0 });
        let t: Vec<usize> = (0..8).map(|n| n % 2).collect();
        let mut opt = Sgd::new(&net, 0.9);
        let first = softmax_cross_entropy(net.predict(&x).unwrap().view(), &t).0;
        for _ in 0..30 {
            let tape = net.forward(&x).unwrap();
            let (_, g) = softmax_cross_entropy(tape.logits(), &t);
            let grads = net.backward(&tape, &g, None, true);
            opt.step(&mut net, &grads.params, 0.05);
        }
        let last = softmax_cross_entropy(net.predict(&x).unwrap().view(), &t).0;
        assert!(last < first * 0.5, "{first} -> {last}");
    }

    #[test]
    fn wrong_input_shape_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net: Network<f32> = Network::tiny([1, 16, 16], &[4], 2, &mut rng);
        assert!(matches!(net.predict(&Array4::zeros((1, 1, 8, 8))), Err(NetError::InputShape { .. })));
        assert_eq!(net.last_conv_activation(), Some("block1.relu"));
        assert_eq!(net.num_classes(), 2);
    }

    #[test]
    fn network_serializes() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net: Network<f32> = Network::tiny([1, 8, 8], &[2], 3, &mut rng);
        let json = serde_json::to_string(&net).unwrap();
        let back: Network<f32> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, net);
    }
}
