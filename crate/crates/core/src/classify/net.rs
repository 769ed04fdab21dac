//! ToyNet: a standard 3x3 stem, depthwise-separable blocks, global average
//! pooling and a dense softmax head, trained with plain minibatch SGD.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::ops::{conv2d, depthwise_conv2d, pointwise_conv2d, softmax, ConvSpec, Tensor, PROB_FLOOR};
use super::{ClassLabel, ClassifyError};
use crate::imgcore::{QuadFrame, GrayImage};
use crate::pipeline::Label;
use crate::roi::RoiConfig;

pub const DEFAULT_LABELS: [&str; 5] = ["pedestrian", "bicycle", "shopping_cart", "vehicle", "empty"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    Depthwise,
    Pointwise,
    Dense,
}

impl LayerKind {
    fn tag(self) -> u8 {
        match self {
            LayerKind::Conv => 1,
            LayerKind::Depthwise => 2,
            LayerKind::Pointwise => 3,
            LayerKind::Dense => 4,
        }
    }

    fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            1 => LayerKind::Conv,
            2 => LayerKind::Depthwise,
            3 => LayerKind::Pointwise,
            4 => LayerKind::Dense,
            _ => return None,
        })
    }
}

/// One parametrised layer. Weight layouts: conv (out, in, k, k), depthwise
/// (ch, k, k), pointwise (out, in), dense (classes, features).
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub kind: LayerKind,
    pub weight: Tensor,
    pub bias: Vec<f64>,
    pub stride: usize,
    pub padding: usize,
}

impl Layer {
    fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    fn spec(&self, input: &Tensor) -> Result<ConvSpec, ClassifyError> {
        let (c, d, _) = input.dims3()?;
        let k = match self.kind {
            LayerKind::Conv => self.weight.shape()[2],
            LayerKind::Depthwise => self.weight.shape()[1],
            _ => 1,
        };
        Ok(ConvSpec::for_input(d, k, c, self.out_channels(), self.stride, self.padding))
    }

    fn apply(&self, input: &Tensor) -> Result<Tensor, ClassifyError> {
        match self.kind {
            LayerKind::Conv => conv2d(input, &self.weight, &self.bias, &self.spec(input)?),
            LayerKind::Depthwise => depthwise_conv2d(input, &self.weight, &self.bias, &self.spec(input)?),
            LayerKind::Pointwise => pointwise_conv2d(input, &self.weight, &self.bias),
            LayerKind::Dense => Err(ClassifyError::Shape("dense layer applied to a feature map".into())),
        }
    }

    /// Gradients of a spatial layer given its input and the gradient at its
    /// pre-activation output. Returns (dW, db, d_input).
    fn backward(&self, input: &Tensor, dout: &Tensor, want_input: bool) -> (Vec<f64>, Vec<f64>, Option<Vec<f64>>) {
        let (c_in, d_in, _) = input.dims3().expect("3-d input");
        let (c_out, d_f, _) = dout.dims3().expect("3-d gradient");
        let x = input.data();
        let g = dout.data();
        let w = self.weight.data();
        let mut dw = vec![0.0; w.len()];
        let mut db = vec![0.0; self.bias.len()];
        let mut dx = want_input.then(|| vec![0.0; x.len()]);
        let (s, p) = (self.stride as isize, self.padding as isize);
        let inside = |v: isize| v >= 0 && v < d_in as isize;
        match self.kind {
            LayerKind::Conv => {
                let k = self.weight.shape()[2];
                for o in 0..c_out {
                    for oy in 0..d_f {
                        for ox in 0..d_f {
                            let gv = g[(o * d_f + oy) * d_f + ox];
                            db[o] += gv;
                            if gv == 0.0 {
                                continue;
                            }
                            for c in 0..c_in {
                                for ky in 0..k {
                                    let iy = oy as isize * s + ky as isize - p;
                                    if !inside(iy) {
                                        continue;
                                    }
                                    for kx in 0..k {
                                        let ix = ox as isize * s + kx as isize - p;
                                        if !inside(ix) {
                                            continue;
                                        }
                                        let xi = (c * d_in + iy as usize) * d_in + ix as usize;
                                        let wi = ((o * c_in + c) * k + ky) * k + kx;
                                        dw[wi] += gv * x[xi];
                                        if let Some(dx) = dx.as_mut() {
                                            dx[xi] += gv * w[wi];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            LayerKind::Depthwise => {
                let k = self.weight.shape()[1];
                for c in 0..c_out {
                    for oy in 0..d_f {
                        for ox in 0..d_f {
                            let gv = g[(c * d_f + oy) * d_f + ox];
                            db[c] += gv;
                            if gv == 0.0 {
                                continue;
                            }
                            for ky in 0..k {
                                let iy = oy as isize * s + ky as isize - p;
                                if !inside(iy) {
                                    continue;
                                }
                                for kx in 0..k {
                                    let ix = ox as isize * s + kx as isize - p;
                                    if !inside(ix) {
                                        continue;
                                    }
                                    let xi = (c * d_in + iy as usize) * d_in + ix as usize;
                                    let wi = (c * k + ky) * k + kx;
                                    dw[wi] += gv * x[xi];
                                    if let Some(dx) = dx.as_mut() {
                                        dx[xi] += gv * w[wi];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            LayerKind::Pointwise => {
                let plane = d_in * d_in;
                for o in 0..c_out {
                    let go = &g[o * plane..(o + 1) * plane];
                    db[o] = go.iter().sum();
                    for c in 0..c_in {
                        let xc = &x[c * plane..(c + 1) * plane];
                        dw[o * c_in + c] = go.iter().zip(xc).map(|(a, b)| a * b).sum();
                        if let Some(dx) = dx.as_mut() {
                            let wv = w[o * c_in + c];
                            for (d, a) in dx[c * plane..(c + 1) * plane].iter_mut().zip(go) {
                                *d += wv * a;
                            }
                        }
                    }
                }
            }
            LayerKind::Dense => unreachable!("dense backward is handled by the head"),
        }
        (dw, db, dx)
    }
}

/// Layer widths of a ToyNet.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetConfig {
    /// 1 for grayscale, 3 for grayscale replicated to three channels.
    pub in_channels: usize,
    pub input_side: usize,
    pub stem_width: usize,
    /// Output widths of the depthwise-separable blocks, each with stride 2.
    pub block_widths: Vec<usize>,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            in_channels: 1,
            input_side: 32,
            stem_width: 8,
            block_widths: vec![16, 32, 64],
        }
    }
}

/// Per-layer gradients, same layout as the layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Gradients {
    fn add(&mut self, other: &Gradients) {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            w.iter_mut().zip(ow).for_each(|(a, b)| *a += b);
            b.iter_mut().zip(ob).for_each(|(a, b)| *a += b);
        }
    }

    fn scale(&mut self, k: f64) {
        for (w, b) in &mut self.layers {
            w.iter_mut().chain(b.iter_mut()).for_each(|v| *v *= k);
        }
    }

    fn norm(&self) -> f64 {
        self.layers.iter().flat_map(|(w, b)| w.iter().chain(b)).map(|g| g * g).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyNet {
    config: NetConfig,
    labels: Vec<String>,
    layers: Vec<Layer>,
}

struct Forward {
    /// Input followed by each spatial layer's post-ReLU output.
    acts: Vec<Tensor>,
    features: Vec<f64>,
    probs: Vec<f64>,
}

impl ToyNet {
    /// He-initialised network; hidden biases start slightly positive.
    pub fn new(config: NetConfig, labels: Vec<String>, seed: u64) -> Result<Self, ClassifyError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = Self::zeros(config, labels)?;
        for layer in &mut net.layers {
            let fan_in: usize = match layer.kind {
                LayerKind::Conv => layer.weight.shape()[1..].iter().product(),
                LayerKind::Depthwise => layer.weight.shape()[1..].iter().product(),
                LayerKind::Pointwise | LayerKind::Dense => layer.weight.shape()[1],
            };
            let gain = if layer.kind == LayerKind::Dense { 1.0 } else { 2.0 };
            let normal = Normal::new(0.0, (gain / fan_in as f64).sqrt()).expect("finite std");
            for v in layer.weight.data_mut() {
                *v = normal.sample(&mut rng);
            }
            if layer.kind != LayerKind::Dense {
                layer.bias.fill(0.01);
            }
        }
        Ok(net)
    }

    /// All weights and biases zero.
    pub fn zeros(config: NetConfig, labels: Vec<String>) -> Result<Self, ClassifyError> {
        if labels.len() < 2 || labels.len() > 255 {
            return Err(ClassifyError::Shape(format!("need 2..=255 classes, got {}", labels.len())));
        }
        if config.in_channels == 0 || config.stem_width == 0 || config.input_side < 2 {
            return Err(ClassifyError::Shape("degenerate net config".into()));
        }
        let mut layers = vec![Layer {
            kind: LayerKind::Conv,
            weight: Tensor::zeros(vec![config.stem_width, config.in_channels, 3, 3]),
            bias: vec![0.0; config.stem_width],
            stride: 1,
            padding: 1,
        }];
        let mut ch = config.stem_width;
        for &w in &config.block_widths {
            layers.push(Layer {
                kind: LayerKind::Depthwise,
                weight: Tensor::zeros(vec![ch, 3, 3]),
                bias: vec![0.0; ch],
                stride: 2,
                padding: 1,
            });
            layers.push(Layer {
                kind: LayerKind::Pointwise,
                weight: Tensor::zeros(vec![w, ch]),
                bias: vec![0.0; w],
                stride: 1,
                padding: 0,
            });
            ch = w;
        }
        layers.push(Layer {
            kind: LayerKind::Dense,
            weight: Tensor::zeros(vec![labels.len(), ch]),
            bias: vec![0.0; labels.len()],
            stride: 1,
            padding: 0,
        });
        Ok(Self { config, labels, layers })
    }

    pub fn default_labels() -> Vec<String> {
        DEFAULT_LABELS.iter().map(|s| s.to_string()).collect()
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, id: usize) -> Option<ClassLabel> {
        self.labels.get(id).map(|n| ClassLabel {
            id,
            name: n.clone(),
        })
    }

    pub fn num_classes(&self) -> usize {
        self.labels.len()
    }

    /// Width of the pooled feature fed to the dense head.
    pub fn feature_width(&self) -> usize {
        self.layers.last().unwrap().weight.shape()[1]
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Resizes a grayscale image to the input side (bilinear) and scales to [0, 1].
    pub fn preprocess(&self, img: &GrayImage) -> Tensor {
        let s = self.config.input_side;
        let (w, h) = (img.width(), img.height());
        let (sx, sy) = (w as f64 / s as f64, h as f64 / s as f64);
        let mut plane = Vec::with_capacity(s * s);
        for y in 0..s {
            let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
            let (y0, ty) = (fy.floor() as usize, fy - fy.floor());
            let y1 = (y0 + 1).min(h - 1);
            for x in 0..s {
                let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
                let (x0, tx) = (fx.floor() as usize, fx - fx.floor());
                let x1 = (x0 + 1).min(w - 1);
                let p = |x, y| img.get(x, y) as f64;
                let v = (p(x0, y0) * (1.0 - tx) + p(x1, y0) * tx) * (1.0 - ty) + (p(x0, y1) * (1.0 - tx) + p(x1, y1) * tx) * ty;
                plane.push(v / 255.0);
            }
        }
        // per-crop standardisation
        let n = plane.len() as f64;
        let mean = plane.iter().sum::<f64>() / n;
        let std = (plane.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt().max(1e-2);
        plane.iter_mut().for_each(|v| *v = (*v - mean) / std);
        let c = self.config.in_channels;
        let data = plane.iter().copied().cycle().take(c * s * s).collect();
        Tensor::new(vec![c, s, s], data).expect("finite input")
    }

    fn run(&self, input: &Tensor) -> Result<Forward, ClassifyError> {
        let want = [self.config.in_channels, self.config.input_side, self.config.input_side];
        if input.shape() != want {
            return Err(ClassifyError::Shape(format!("input {:?}, net expects {want:?}", input.shape())));
        }
        let (head, body) = self.layers.split_last().unwrap();
        let mut acts = vec![input.clone()];
        for layer in body {
            let mut out = layer.apply(acts.last().unwrap())?;
            out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
            acts.push(out);
        }
        let last = acts.last().unwrap();
        let (c, h, w) = last.dims3()?;
        let area = (h * w) as f64;
        let features: Vec<f64> = last.data().chunks(h * w).map(|ch| ch.iter().sum::<f64>() / area).collect();
        debug_assert_eq!(features.len(), c);
        let hw = head.weight.data();
        let logits: Vec<f64> = (0..self.labels.len())
            .map(|k| head.bias[k] + hw[k * c..(k + 1) * c].iter().zip(&features).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        let probs = softmax(&logits)?;
        Ok(Forward { acts, features, probs })
    }

    /// Class probabilities for a preprocessed input.
    pub fn forward(&self, input: &Tensor) -> Result<Vec<f64>, ClassifyError> {
        Ok(self.run(input)?.probs)
    }

    /// Class probabilities for an image of any size.
    pub fn forward_image(&self, img: &GrayImage) -> Result<Vec<f64>, ClassifyError> {
        self.forward(&self.preprocess(img))
    }

    /// Cross-entropy loss of one sample.
    pub fn loss(&self, input: &Tensor, target: usize) -> Result<f64, ClassifyError> {
        let f = self.run(input)?;
        Ok(-f.probs.get(target).ok_or(ClassifyError::Label(target))?.max(PROB_FLOOR).ln())
    }

    /// Loss and exact parameter gradients for one sample.
    pub fn gradients(&self, input: &Tensor, target: usize) -> Result<(f64, Gradients), ClassifyError> {
        if target >= self.labels.len() {
            return Err(ClassifyError::Label(target));
        }
        let f = self.run(input)?;
        let p = f.probs[target];
        let loss = -p.max(PROB_FLOOR).ln();
        // the floor is flat, so its gradient vanishes
        let mut dlogits = f.probs.clone();
        if p > PROB_FLOOR {
            dlogits[target] -= 1.0;
        } else {
            dlogits.iter_mut().for_each(|v| *v = 0.0);
        }
        let (head, body) = self.layers.split_last().unwrap();
        let c = f.features.len();
        let mut dhead_w = vec![0.0; head.weight.len()];
        let mut dfeat = vec![0.0; c];
        for (k, &g) in dlogits.iter().enumerate() {
            for j in 0..c {
                dhead_w[k * c + j] = g * f.features[j];
                dfeat[j] += head.weight.data()[k * c + j] * g;
            }
        }
        let mut grads = vec![(Vec::new(), Vec::new()); self.layers.len()];
        *grads.last_mut().unwrap() = (dhead_w, dlogits);

        let last = f.acts.last().unwrap();
        let (_, h, w) = last.dims3()?;
        let area = (h * w) as f64;
        let mut dact: Vec<f64> = dfeat.iter().flat_map(|&g| std::iter::repeat(g / area).take(h * w)).collect();
        for (i, layer) in body.iter().enumerate().rev() {
            let out = &f.acts[i + 1];
            for (d, &o) in dact.iter_mut().zip(out.data()) {
                if o <= 0.0 {
                    *d = 0.0;
                }
            }
            let dout = Tensor::new(out.shape().to_vec(), dact)?;
            let (dw, db, dx) = layer.backward(&f.acts[i], &dout, i > 0);
            grads[i] = (dw, db);
            dact = dx.unwrap_or_default();
        }
        Ok((loss, Gradients { layers: grads }))
    }

    /// One SGD step on the batch mean loss. Returns the loss before the step.
    pub fn backward_and_step(&mut self, batch: &[(Tensor, usize)], learning_rate: f64) -> Result<f64, ClassifyError> {
        self.step_clipped(batch, learning_rate, f64::INFINITY)
    }

    /// [`Self::backward_and_step`] with the mean gradient rescaled to at most
    /// `max_norm` (L2 over all parameters).
    pub fn step_clipped(&mut self, batch: &[(Tensor, usize)], learning_rate: f64, max_norm: f64) -> Result<f64, ClassifyError> {
        let (loss, g) = self.batch_gradients(batch, max_norm)?;
        if learning_rate != 0.0 {
            self.apply(&g, learning_rate);
        }
        Ok(loss)
    }

    /// Mean loss and mean gradient over a batch, the gradient rescaled to an
    /// L2 norm of at most `max_norm`.
    pub fn batch_gradients(&self, batch: &[(Tensor, usize)], max_norm: f64) -> Result<(f64, Gradients), ClassifyError> {
        if batch.is_empty() {
            return Err(ClassifyError::Shape("empty batch".into()));
        }
        let per_sample: Vec<(f64, Gradients)> = batch
            .par_iter()
            .map(|(x, t)| self.gradients(x, *t))
            .collect::<Result<_, _>>()?;
        let mut iter = per_sample.into_iter();
        let (mut loss, mut total) = iter.next().unwrap();
        for (l, g) in iter {
            loss += l;
            total.add(&g);
        }
        let n = batch.len() as f64;
        let loss = loss / n;
        if !loss.is_finite() {
            return Err(ClassifyError::NonFinite("training loss"));
        }
        if total.layers.iter().any(|(w, b)| w.iter().chain(b).any(|v| !v.is_finite())) {
            return Err(ClassifyError::NonFinite("gradient"));
        }
        let norm = total.norm() / n;
        let scale = if norm > max_norm { max_norm / norm } else { 1.0 } / n;
        total.scale(scale);
        Ok((loss, total))
    }

    fn apply(&mut self, g: &Gradients, learning_rate: f64) {
        for (layer, (dw, db)) in self.layers.iter_mut().zip(&g.layers) {
            layer.weight.data_mut().iter_mut().zip(dw).for_each(|(w, g)| *w -= learning_rate * g);
            layer.bias.iter_mut().zip(db).for_each(|(b, g)| *b -= learning_rate * g);
        }
    }

    /// Index and probability of the most likely class (lowest id on ties).
    pub fn predict(&self, input: &Tensor) -> Result<(usize, f64), ClassifyError> {
        let p = self.forward(input)?;
        Ok(argmax(&p))
    }

    pub fn accuracy(&self, data: &[(Tensor, usize)]) -> Result<f64, ClassifyError> {
        let hits: Vec<bool> = data
            .par_iter()
            .map(|(x, t)| self.predict(x).map(|(k, _)| k == *t))
            .collect::<Result<_, _>>()?;
        Ok(hits.iter().filter(|h| **h).count() as f64 / data.len().max(1) as f64)
    }
}

fn argmax(p: &[f64]) -> (usize, f64) {
    p.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Learning rate of the last epoch as a fraction of the first; the rate
    /// falls linearly in between.
    pub final_lr_fraction: f64,
    /// Upper bound on the L2 norm of each batch gradient.
    pub max_grad_norm: f64,
    /// Heavy-ball momentum coefficient; 0 is plain SGD.
    pub momentum: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            learning_rate: 0.02,
            batch_size: 8,
            seed: 0,
            final_lr_fraction: 0.1,
            max_grad_norm: 4.0,
            momentum: 0.9,
        }
    }
}

/// Minibatch SGD over shuffled data; returns the mean loss of each epoch.
/// `on_epoch` sees the epoch number and its mean loss.
pub fn train(
    net: &mut ToyNet,
    data: &[(Tensor, usize)],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<Vec<f64>, ClassifyError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut velocity: Option<Gradients> = None;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let t = if cfg.epochs > 1 { epoch as f64 / (cfg.epochs - 1) as f64 } else { 0.0 };
        let lr = cfg.learning_rate * (1.0 - t * (1.0 - cfg.final_lr_fraction));
        let mut sum = 0.0;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let batch: Vec<(Tensor, usize)> = chunk.iter().map(|&i| data[i].clone()).collect();
            let (loss, g) = net.batch_gradients(&batch, cfg.max_grad_norm)?;
            match velocity.as_mut() {
                None => velocity = Some(g),
                Some(v) => {
                    v.scale(cfg.momentum);
                    v.add(&g);
                }
            }
            net.apply(velocity.as_ref().unwrap(), lr);
            sum += loss * chunk.len() as f64;
        }
        let mean = sum / data.len().max(1) as f64;
        on_epoch(epoch, mean);
        history.push(mean);
    }
    Ok(history)
}

/// Crops, resizes and classifies the selected ROIs.
pub fn classify_rois(
    net: &ToyNet,
    frame: &QuadFrame,
    config: &RoiConfig,
    selected: &BTreeSet<usize>,
) -> Result<BTreeMap<usize, Label>, ClassifyError> {
    let ids: Vec<usize> = selected.iter().copied().collect();
    if let Some(&bad) = ids.iter().find(|&&i| i >= config.rois().len()) {
        return Err(ClassifyError::Shape(format!("roi index {bad} out of range")));
    }
    let out: Vec<(usize, Label)> = ids
        .par_iter()
        .map(|&i| {
            let r = config.roi(i).rect();
            let crop = frame.image.crop(r.x, r.y, r.w, r.h);
            let (k, p) = argmax(&net.forward_image(&crop)?);
            Ok((
                i,
                Label {
                    class_id: k as u8,
                    confidence: p as f32,
                },
            ))
        })
        .collect::<Result<_, ClassifyError>>()?;
    Ok(out.into_iter().collect())
}

const MAGIC: &[u8; 4] = b"TNW1";

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

/// Serialises the net: magic `TNW1`, input channels and side, class names,
/// then per layer a type tag, stride, padding, weight dims, bias length and
/// raw little-endian f64 values.
pub fn encode_weights(net: &ToyNet) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    put_u32(&mut out, net.config.in_channels);
    put_u32(&mut out, net.config.input_side);
    put_u32(&mut out, net.labels.len());
    for name in &net.labels {
        put_u32(&mut out, name.len());
        out.extend_from_slice(name.as_bytes());
    }
    put_u32(&mut out, net.layers.len());
    for l in &net.layers {
        out.push(l.kind.tag());
        put_u32(&mut out, l.stride);
        put_u32(&mut out, l.padding);
        put_u32(&mut out, l.weight.shape().len());
        for &d in l.weight.shape() {
            put_u32(&mut out, d);
        }
        put_u32(&mut out, l.bias.len());
        for v in l.weight.data().iter().chain(&l.bias) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ClassifyError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or(ClassifyError::Weights {
            offset: self.pos,
            reason: "truncated",
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize, ClassifyError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, ClassifyError> {
        let bytes = self.take(n.checked_mul(8).ok_or(ClassifyError::Weights {
            offset: self.pos,
            reason: "size overflow",
        })?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn fail(&self, reason: &'static str) -> ClassifyError {
        ClassifyError::Weights { offset: self.pos, reason }
    }
}

pub fn decode_weights(buf: &[u8]) -> Result<ToyNet, ClassifyError> {
    let mut c = Cursor { buf, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(ClassifyError::Weights {
            offset: 0,
            reason: "bad magic",
        });
    }
    let in_channels = c.u32()?;
    let input_side = c.u32()?;
    let n_labels = c.u32()?;
    if n_labels > 255 {
        return Err(c.fail("too many classes"));
    }
    let mut labels = Vec::with_capacity(n_labels);
    for _ in 0..n_labels {
        let n = c.u32()?;
        let s = std::str::from_utf8(c.take(n)?).map_err(|_| c.fail("label is not utf-8"))?;
        labels.push(s.to_string());
    }
    let n_layers = c.u32()?;
    if n_layers < 2 {
        return Err(c.fail("need at least a stem and a head"));
    }
    let mut layers = Vec::new();
    for _ in 0..n_layers {
        let kind = LayerKind::from_tag(c.take(1)?[0]).ok_or_else(|| c.fail("unknown layer tag"))?;
        let stride = c.u32()?;
        let padding = c.u32()?;
        let ndim = c.u32()?;
        if ndim > 4 {
            return Err(c.fail("too many weight dims"));
        }
        let dims = (0..ndim).map(|_| c.u32()).collect::<Result<Vec<_>, _>>()?;
        let nb = c.u32()?;
        let n: usize = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| c.fail("size overflow"))?;
        let weight = Tensor::new(dims, c.f64s(n)?).map_err(|_| c.fail("non-finite weights"))?;
        let bias = c.f64s(nb)?;
        layers.push(Layer {
            kind,
            weight,
            bias,
            stride,
            padding,
        });
    }
    if c.pos != buf.len() {
        return Err(c.fail("trailing bytes"));
    }
    // rebuild the config and check the chain against it
    let stem = &layers[0];
    if stem.kind != LayerKind::Conv || stem.weight.shape().len() != 4 {
        return Err(ClassifyError::Weights {
            offset: 0,
            reason: "first layer must be a conv",
        });
    }
    let mut block_widths = Vec::new();
    for pair in layers[1..layers.len() - 1].chunks(2) {
        match pair {
            [d, p] if d.kind == LayerKind::Depthwise && p.kind == LayerKind::Pointwise && p.weight.shape().len() == 2 => {
                block_widths.push(p.weight.shape()[0])
            }
            _ => {
                return Err(ClassifyError::Weights {
                    offset: 0,
                    reason: "layers are not depthwise/pointwise pairs",
                })
            }
        }
    }
    let config = NetConfig {
        in_channels,
        input_side,
        stem_width: stem.weight.shape()[0],
        block_widths,
    };
    let template = ToyNet::zeros(config.clone(), labels.clone())?;
    for (a, b) in template.layers.iter().zip(&layers) {
        if a.kind != b.kind || a.weight.shape() != b.weight.shape() || a.bias.len() != b.bias.len() || a.stride != b.stride || a.padding != b.padding {
            return Err(ClassifyError::Weights {
                offset: 0,
                reason: "layer shapes do not chain",
            });
        }
    }
    if template.layers.len() != layers.len() {
        return Err(ClassifyError::Weights {
            offset: 0,
            reason: "missing dense head",
        });
    }
    Ok(ToyNet { config, labels, layers })
}

pub fn save_weights(net: &ToyNet, path: impl AsRef<Path>) -> Result<(), ClassifyError> {
    let path = path.as_ref();
    let mut f = std::fs::File::create(path).map_err(|e| ClassifyError::io(path, e))?;
    f.write_all(&encode_weights(net)).map_err(|e| ClassifyError::io(path, e))
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<ToyNet, ClassifyError> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| ClassifyError::io(path, e))?;
    decode_weights(&buf)
}
