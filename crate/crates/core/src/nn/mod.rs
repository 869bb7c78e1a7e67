//! A small feed-forward inference engine over `[H, W, C]` images.
//!
//! Spatial activations are row-major `[H, W, C]`; after `Flatten` or
//! `GlobalAvgPool` they are flat vectors. A trailing `Softmax` is optional:
//! [`Model::forward`] always applies softmax exactly once to the logits.

mod grad;
mod manifest;

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::{Image, Tensor};

pub use grad::{Gradients, Objective, ParamGrad};
pub use manifest::{load_model, save_model, ManifestFile};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Valid,
    Same,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: Padding,
    /// `[out, in, kh, kw]` row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    /// `[out, in]` row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv2d(Conv2d),
    Dense(Dense),
    Relu,
    MaxPool2d { size: usize, stride: usize },
    Flatten,
    GlobalAvgPool,
    Softmax,
    /// Identity at inference; the rate is kept as metadata.
    Dropout { rate: f64 },
}

impl Layer {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Layer::Conv2d(_) => "conv2d",
            Layer::Dense(_) => "dense",
            Layer::Relu => "relu",
            Layer::MaxPool2d { .. } => "maxpool2d",
            Layer::Flatten => "flatten",
            Layer::GlobalAvgPool => "global_avg_pool",
            Layer::Softmax => "softmax",
            Layer::Dropout { .. } => "dropout",
        }
    }

    /// Trainable tensors as (weight, bias).
    pub fn params(&self) -> Option<(&[f64], &[f64])> {
        match self {
            Layer::Conv2d(c) => Some((&c.weight, &c.bias)),
            Layer::Dense(d) => Some((&d.weight, &d.bias)),
            _ => None,
        }
    }

    pub(crate) fn params_mut(&mut self) -> Option<(&mut Vec<f64>, &mut Vec<f64>)> {
        match self {
            Layer::Conv2d(c) => Some((&mut c.weight, &mut c.bias)),
            Layer::Dense(d) => Some((&mut d.weight, &mut d.bias)),
            _ => None,
        }
    }
}

/// Activation shape between layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Spatial { h: usize, w: usize, c: usize },
    Flat(usize),
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Spatial { h, w, c } => h * w * c,
            Shape::Flat(n) => n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn checked_len(&self) -> Option<usize> {
        match *self {
            Shape::Spatial { h, w, c } => h.checked_mul(w)?.checked_mul(c),
            Shape::Flat(n) => Some(n),
        }
    }
}

/// Upper bound on any activation's element count.
const MAX_ACTIVATION: usize = 1 << 26;

pub(crate) fn conv_geometry(input: usize, k: usize, stride: usize, pad: Padding) -> Option<(usize, usize)> {
    match pad {
        Padding::Valid => (input >= k).then(|| ((input - k) / stride + 1, 0)),
        Padding::Same => {
            let out = input.div_ceil(stride);
            let total = ((out - 1) * stride + k).saturating_sub(input);
            Some((out, total / 2))
        }
    }
}

fn output_shape(index: usize, layer: &Layer, input: Shape) -> Result<Shape> {
    let bad = |msg: String| Error::InvalidModel(format!("layer {index} ({}): {msg}", layer.kind_name()));
    match (layer, input) {
        (Layer::Conv2d(cv), Shape::Spatial { h, w, c }) => {
            if cv.in_channels != c {
                return Err(bad(format!("expects {} input channels, got {c}", cv.in_channels)));
            }
            if cv.stride == 0 || cv.kernel_h == 0 || cv.kernel_w == 0 || cv.out_channels == 0 {
                return Err(bad("kernel, stride and channel counts must be positive".into()));
            }
            let n_w = cv
                .out_channels
                .checked_mul(cv.in_channels)
                .and_then(|n| n.checked_mul(cv.kernel_h))
                .and_then(|n| n.checked_mul(cv.kernel_w))
                .ok_or_else(|| bad("weight count overflows".into()))?;
            if cv.weight.len() != n_w || cv.bias.len() != cv.out_channels {
                return Err(bad(format!(
                    "weight/bias lengths {}/{} do not match {n_w}/{}",
                    cv.weight.len(),
                    cv.bias.len(),
                    cv.out_channels
                )));
            }
            let (oh, _) = conv_geometry(h, cv.kernel_h, cv.stride, cv.padding)
                .ok_or_else(|| bad(format!("kernel taller than input {h}")))?;
            let (ow, _) = conv_geometry(w, cv.kernel_w, cv.stride, cv.padding)
                .ok_or_else(|| bad(format!("kernel wider than input {w}")))?;
            Ok(Shape::Spatial { h: oh, w: ow, c: cv.out_channels })
        }
        (Layer::Dense(d), Shape::Flat(n)) => {
            if d.inputs != n {
                return Err(bad(format!("expects {} inputs, got {n}", d.inputs)));
            }
            if d.outputs == 0 {
                return Err(bad("zero outputs".into()));
            }
            let n_w = d
                .inputs
                .checked_mul(d.outputs)
                .ok_or_else(|| bad("weight count overflows".into()))?;
            if d.weight.len() != n_w || d.bias.len() != d.outputs {
                return Err(bad(format!(
                    "weight/bias lengths {}/{} do not match {n_w}/{}",
                    d.weight.len(),
                    d.bias.len(),
                    d.outputs
                )));
            }
            Ok(Shape::Flat(d.outputs))
        }
        (Layer::Dense(_), Shape::Spatial { .. }) => {
            Err(bad("needs a flat input; insert flatten or global_avg_pool".into()))
        }
        (Layer::MaxPool2d { size, stride }, Shape::Spatial { h, w, c }) => {
            if *size == 0 || *stride == 0 {
                return Err(bad("size and stride must be positive".into()));
            }
            if h < *size || w < *size {
                return Err(bad(format!("window {size} larger than input {h}x{w}")));
            }
            Ok(Shape::Spatial {
                h: (h - size) / stride + 1,
                w: (w - size) / stride + 1,
                c,
            })
        }
        (Layer::GlobalAvgPool, Shape::Spatial { c, .. }) => Ok(Shape::Flat(c)),
        (Layer::Flatten, s) => Ok(Shape::Flat(s.len())),
        (Layer::Relu | Layer::Softmax, s) => Ok(s),
        (Layer::Dropout { rate }, s) => {
            if !(0.0..1.0).contains(rate) {
                return Err(bad(format!("rate {rate} outside [0, 1)")));
            }
            Ok(s)
        }
        (_, Shape::Flat(_)) => Err(bad("needs a spatial input".into())),
    }
}

/// Class probabilities; nonnegative and summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() || p.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidConfig("probabilities must be finite and nonnegative".into()));
        }
        let s: f64 = p.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!("probabilities sum to {s}, not 1")));
        }
        Ok(Self(p))
    }

    /// Numerically stable softmax.
    pub fn softmax(logits: &[f64]) -> Self {
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        Self(exps.into_iter().map(|e| e / sum).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, k: usize) -> f64 {
        self.0[k]
    }

    /// Index of the largest probability; ties go to the lower index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.0.iter().enumerate().skip(1) {
            if p > self.0[best] {
                best = i;
            }
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessing {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Preprocessing {
    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    input_shape: [usize; 3],
    num_classes: usize,
    preprocessing: Preprocessing,
    layers: Vec<Layer>,
    logit_scale: f64,
    metadata: BTreeMap<String, String>,
    /// shapes[i] is the input shape of layers[i]; the last entry is the output.
    shapes: Vec<Shape>,
}

impl Model {
    pub fn new(
        input_shape: [usize; 3],
        num_classes: usize,
        preprocessing: Preprocessing,
        layers: Vec<Layer>,
    ) -> Result<Self> {
        let [h, w, c] = input_shape;
        if h == 0 || w == 0 || !(c == 1 || c == 3) {
            return Err(Error::InvalidModel(format!("bad input shape {input_shape:?}")));
        }
        if num_classes < 2 {
            return Err(Error::InvalidModel(format!("need at least 2 classes, got {num_classes}")));
        }
        if preprocessing.mean.len() != c || preprocessing.std.len() != c {
            return Err(Error::InvalidModel(format!(
                "preprocessing needs {c} mean/std values, got {}/{}",
                preprocessing.mean.len(),
                preprocessing.std.len()
            )));
        }
        if preprocessing.mean.iter().any(|m| !m.is_finite())
            || preprocessing.std.iter().any(|s| !(s.is_finite() && *s > 0.0))
        {
            return Err(Error::InvalidModel("std must be positive and all values finite".into()));
        }
        let mut shapes = vec![Shape::Spatial { h, w, c }];
        if shapes[0].checked_len().is_none_or(|n| n > MAX_ACTIVATION) {
            return Err(Error::InvalidModel(format!("input shape {input_shape:?} too large")));
        }
        for (i, layer) in layers.iter().enumerate() {
            if matches!(layer, Layer::Softmax) && i + 1 != layers.len() {
                return Err(Error::InvalidModel(format!(
                    "layer {i}: softmax is only allowed as the final layer"
                )));
            }
            if let Some((wt, b)) = layer.params() {
                if wt.iter().chain(b).any(|v| !v.is_finite()) {
                    return Err(Error::InvalidModel(format!(
                        "layer {i} ({}): non-finite weight",
                        layer.kind_name()
                    )));
                }
            }
            let next = output_shape(i, layer, *shapes.last().unwrap())?;
            if next.checked_len().is_none_or(|n| n > MAX_ACTIVATION) {
                return Err(Error::InvalidModel(format!("layer {i}: activation {next:?} too large")));
            }
            shapes.push(next);
        }
        match shapes.last() {
            Some(Shape::Flat(n)) if *n == num_classes => {}
            Some(s) => {
                return Err(Error::InvalidModel(format!(
                    "final output {s:?} does not match {num_classes} classes"
                )))
            }
            None => unreachable!(),
        }
        Ok(Self {
            input_shape,
            num_classes,
            preprocessing,
            layers,
            logit_scale: 1.0,
            metadata: BTreeMap::new(),
            shapes,
        })
    }

    /// Multiplies logits by `scale > 0` before the softmax.
    pub fn with_logit_scale(mut self, scale: f64) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::InvalidModel(format!("logit scale {scale} must be positive")));
        }
        self.logit_scale = scale;
        Ok(self)
    }

    pub fn with_metadata(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.metadata.insert(key.into(), value.into());
        self
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn preprocessing(&self) -> &Preprocessing {
        &self.preprocessing
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn logit_scale(&self) -> f64 {
        self.logit_scale
    }

    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }

    pub(crate) fn metadata_mut(&mut self) -> &mut BTreeMap<String, String> {
        &mut self.metadata
    }

    pub(crate) fn shapes(&self) -> &[Shape] {
        &self.shapes
    }

    /// Layers that produce logits, i.e. everything but a trailing softmax.
    pub(crate) fn logit_layers(&self) -> &[Layer] {
        match self.layers.last() {
            Some(Layer::Softmax) => &self.layers[..self.layers.len() - 1],
            _ => &self.layers,
        }
    }

    fn check_image(&self, img: &Image) -> Result<()> {
        if img.shape() != self.input_shape {
            return Err(Error::InvalidImage(format!(
                "image shape {:?} does not match model input {:?}",
                img.shape(),
                self.input_shape
            )));
        }
        Ok(())
    }

    /// `(img[.., c] - mean[c]) / std[c]` as an `[H, W, C]` tensor.
    pub fn preprocess(&self, img: &Image) -> Result<Tensor> {
        self.check_image(img)?;
        Ok(Tensor::from_raw(img.shape().to_vec(), self.preprocess_raw(img)))
    }

    fn preprocess_raw(&self, img: &Image) -> Vec<f64> {
        let c = img.channels();
        let Preprocessing { mean, std } = &self.preprocessing;
        img.data()
            .iter()
            .enumerate()
            .map(|(i, v)| (v - mean[i % c]) / std[i % c])
            .collect()
    }

    /// Pre-softmax outputs, already multiplied by the logit scale.
    pub fn logits(&self, img: &Image) -> Result<Vec<f64>> {
        self.check_image(img)?;
        let mut act = self.preprocess_raw(img);
        for (i, layer) in self.logit_layers().iter().enumerate() {
            act = layer_forward(layer, self.shapes[i], &act);
            if act.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteActivation { layer: i });
            }
        }
        if self.logit_scale != 1.0 {
            for z in &mut act {
                *z *= self.logit_scale;
            }
        }
        Ok(act)
    }

    pub fn forward(&self, img: &Image) -> Result<ProbVector> {
        Ok(ProbVector::softmax(&self.logits(img)?))
    }

    /// Number of trainable scalars, in blob order (per layer: weight then bias).
    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .filter_map(|l| l.params())
            .map(|(w, b)| w.len() + b.len())
            .sum()
    }

    /// All trainable scalars in blob order.
    pub fn parameters(&self) -> Vec<f64> {
        self.layers
            .iter()
            .filter_map(|l| l.params())
            .flat_map(|(w, b)| w.iter().chain(b).copied())
            .collect()
    }

    /// Replaces every trainable scalar, in blob order.
    pub fn set_parameters(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.parameter_count() {
            return Err(Error::InvalidModel(format!(
                "expected {} parameters, got {}",
                self.parameter_count(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidModel("non-finite parameter".into()));
        }
        let mut it = values.iter();
        for layer in &mut self.layers {
            if let Some((w, b)) = layer.params_mut() {
                for v in w.iter_mut().chain(b.iter_mut()) {
                    *v = *it.next().unwrap();
                }
            }
        }
        Ok(())
    }

    /// Rounds every weight to the nearest `f32`, so the model survives a save/load unchanged.
    pub fn round_to_f32(&mut self) {
        for layer in &mut self.layers {
            if let Some((w, b)) = layer.params_mut() {
                for v in w.iter_mut().chain(b.iter_mut()) {
                    *v = *v as f32 as f64;
                }
            }
        }
    }
}

pub(crate) fn layer_forward(layer: &Layer, input: Shape, x: &[f64]) -> Vec<f64> {
    match layer {
        Layer::Conv2d(cv) => conv_forward(cv, input, x),
        Layer::Dense(d) => {
            let mut out = d.bias.clone();
            for (o, row) in out.iter_mut().zip(d.weight.chunks_exact(d.inputs)) {
                *o += row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
            }
            out
        }
        Layer::Relu => x.iter().map(|v| v.max(0.0)).collect(),
        Layer::MaxPool2d { size, stride } => {
            let Shape::Spatial { h, w, c } = input else { unreachable!() };
            let (oh, ow) = ((h - size) / stride + 1, (w - size) / stride + 1);
            let mut out = Vec::with_capacity(oh * ow * c);
            for oy in 0..oh {
                for ox in 0..ow {
                    for k in 0..c {
                        let idx = pool_argmax(x, w, c, oy * stride, ox * stride, *size, k);
                        out.push(x[idx]);
                    }
                }
            }
            out
        }
        Layer::GlobalAvgPool => {
            let Shape::Spatial { h, w, c } = input else { unreachable!() };
            let mut sums = vec![0.0; c];
            for p in x.chunks_exact(c) {
                for (s, v) in sums.iter_mut().zip(p) {
                    *s += v;
                }
            }
            let n = (h * w) as f64;
            sums.into_iter().map(|s| s / n).collect()
        }
        Layer::Flatten | Layer::Dropout { .. } => x.to_vec(),
        Layer::Softmax => ProbVector::softmax(x).0,
    }
}

/// Flat index of the first maximal element of a pooling window, in scan order.
pub(crate) fn pool_argmax(
    x: &[f64],
    w: usize,
    c: usize,
    y0: usize,
    x0: usize,
    size: usize,
    k: usize,
) -> usize {
    let mut best = (y0 * w + x0) * c + k;
    for dy in 0..size {
        for dx in 0..size {
            let idx = ((y0 + dy) * w + x0 + dx) * c + k;
            if x[idx] > x[best] {
                best = idx;
            }
        }
    }
    best
}

fn conv_forward(cv: &Conv2d, input: Shape, x: &[f64]) -> Vec<f64> {
    let Shape::Spatial { h, w, c } = input else { unreachable!() };
    let (oh, pad_t) = conv_geometry(h, cv.kernel_h, cv.stride, cv.padding).unwrap();
    let (ow, pad_l) = conv_geometry(w, cv.kernel_w, cv.stride, cv.padding).unwrap();
    let (kh, kw, oc_n) = (cv.kernel_h, cv.kernel_w, cv.out_channels);
    let mut out = vec![0.0; oh * ow * oc_n];
    for oy in 0..oh {
        for ox in 0..ow {
            let o_base = (oy * ow + ox) * oc_n;
            for oc in 0..oc_n {
                let mut acc = cv.bias[oc];
                for ky in 0..kh {
                    let iy = (oy * cv.stride + ky) as isize - pad_t as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..kw {
                        let ix = (ox * cv.stride + kx) as isize - pad_l as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let i_base = (iy as usize * w + ix as usize) * c;
                        for ic in 0..c {
                            acc += cv.weight[((oc * c + ic) * kh + ky) * kw + kx] * x[i_base + ic];
                        }
                    }
                }
                out[o_base + oc] = acc;
            }
        }
    }
    out
}
