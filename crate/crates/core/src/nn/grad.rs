//! Reverse-mode differentiation through the layer stack.
//!
//! The forward pass records every layer input; the backward pass walks the
//! layers in reverse, turning an output cotangent into an input cotangent and,
//! when asked, per-layer parameter gradients.

use super::{conv_geometry, layer_forward, pool_argmax, Conv2d, Layer, Model, ProbVector, Shape};
use crate::error::{Error, Result};
use crate::tensor::{Image, Tensor};

/// Scalar objective differentiated by [`Model::input_gradient`].
#[derive(Debug, Clone, PartialEq)]
pub enum Objective {
    /// `log P(k | x)`.
    LogProb(usize),
    /// `KL(q || P(. | x))` against a fixed distribution `q`.
    KlFrom(ProbVector),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrad {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Parameter gradients, one slot per layer (`None` for parameterless layers).
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Option<ParamGrad>>,
}

impl Gradients {
    /// Flattened in blob order, matching [`Model::parameters`].
    pub fn flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flatten()
            .flat_map(|g| g.weight.iter().chain(&g.bias).copied())
            .collect()
    }
}

impl Model {
    /// Layer inputs followed by the unscaled logits.
    fn trace(&self, input: Vec<f64>) -> Result<Vec<Vec<f64>>> {
        let layers = self.logit_layers();
        let mut acts = Vec::with_capacity(layers.len() + 1);
        acts.push(input);
        for (i, layer) in layers.iter().enumerate() {
            let next = layer_forward(layer, self.shapes()[i], acts.last().unwrap());
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteActivation { layer: i });
            }
            acts.push(next);
        }
        Ok(acts)
    }

    fn preprocessed(&self, img: &Image) -> Result<Vec<f64>> {
        Ok(self.preprocess(img)?.into_data())
    }

    /// Backpropagates `grad_out` (w.r.t. the unscaled logits) to the
    /// preprocessed input, accumulating parameter gradients into `params` when given.
    fn backward(
        &self,
        acts: &[Vec<f64>],
        grad_out: Vec<f64>,
        mut params: Option<&mut [Option<ParamGrad>]>,
    ) -> Vec<f64> {
        let mut g = grad_out;
        for (i, layer) in self.logit_layers().iter().enumerate().rev() {
            let x = &acts[i];
            let shape = self.shapes()[i];
            let slot = params.as_deref_mut().and_then(|p| p[i].as_mut());
            g = layer_backward(layer, shape, x, &g, slot);
        }
        g
    }

    /// Gradient of `objective` w.r.t. the raw `[0, 1]` pixels, chained through preprocessing.
    pub fn input_gradient(&self, img: &Image, objective: &Objective) -> Result<Tensor> {
        let acts = self.trace(self.preprocessed(img)?)?;
        let scale = self.logit_scale();
        let scaled: Vec<f64> = acts.last().unwrap().iter().map(|z| z * scale).collect();
        let p = ProbVector::softmax(&scaled);
        let mut dz: Vec<f64> = match objective {
            Objective::LogProb(k) => {
                if *k >= p.len() {
                    return Err(Error::InvalidConfig(format!("class {k} out of range")));
                }
                p.as_slice()
                    .iter()
                    .enumerate()
                    .map(|(i, pi)| f64::from(u8::from(i == *k)) - pi)
                    .collect()
            }
            Objective::KlFrom(q) => {
                if q.len() != p.len() {
                    return Err(Error::InvalidConfig(format!(
                        "reference distribution has {} classes, model has {}",
                        q.len(),
                        p.len()
                    )));
                }
                // d/ds sum_i q_i (log q_i - log p_i) = p - q when sum q = 1
                p.as_slice().iter().zip(q.as_slice()).map(|(pi, qi)| pi - qi).collect()
            }
        };
        for d in &mut dz {
            *d *= scale;
        }
        let mut g = self.backward(&acts, dz, None);
        let c = img.channels();
        let std = &self.preprocessing().std;
        for (i, v) in g.iter_mut().enumerate() {
            *v /= std[i % c];
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient);
        }
        Ok(Tensor::from_raw(img.shape().to_vec(), g))
    }

    /// Gradients of the mean cross-entropy over `batch` w.r.t. every trainable tensor.
    pub fn weight_gradients(&self, batch: &[(&Image, usize)]) -> Result<Gradients> {
        Ok(self.loss_and_gradients(batch)?.1)
    }

    /// Mean cross-entropy over `batch` and its parameter gradients.
    pub fn loss_and_gradients(&self, batch: &[(&Image, usize)]) -> Result<(f64, Gradients)> {
        if batch.is_empty() {
            return Err(Error::InvalidDataset("empty batch".into()));
        }
        let mut grads: Vec<Option<ParamGrad>> = self
            .layers()
            .iter()
            .map(|l| {
                l.params().map(|(w, b)| ParamGrad {
                    weight: vec![0.0; w.len()],
                    bias: vec![0.0; b.len()],
                })
            })
            .collect();
        let n = batch.len() as f64;
        let scale = self.logit_scale();
        let mut loss = 0.0;
        for (img, label) in batch {
            if *label >= self.num_classes() {
                return Err(Error::InvalidDataset(format!(
                    "label {label} not below {} classes",
                    self.num_classes()
                )));
            }
            let acts = self.trace(self.preprocessed(img)?)?;
            let scaled: Vec<f64> = acts.last().unwrap().iter().map(|z| z * scale).collect();
            let p = ProbVector::softmax(&scaled);
            loss -= p.get(*label).max(f64::MIN_POSITIVE).ln() / n;
            let dz = p
                .as_slice()
                .iter()
                .enumerate()
                .map(|(i, pi)| scale * (pi - f64::from(u8::from(i == *label))) / n)
                .collect();
            self.backward(&acts, dz, Some(&mut grads));
        }
        let out = Gradients { layers: grads };
        if !loss.is_finite() || out.flat().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient);
        }
        Ok((loss, out))
    }

    /// Plain SGD step: `theta -= lr * grad`.
    pub fn apply_gradients(&mut self, grads: &Gradients, lr: f64) -> Result<()> {
        if grads.layers.len() != self.layers().len() {
            return Err(Error::InvalidModel("gradient layout does not match model".into()));
        }
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            if let (Some((w, b)), Some(g)) = (layer.params_mut(), g) {
                for (v, d) in w.iter_mut().zip(&g.weight).chain(b.iter_mut().zip(&g.bias)) {
                    *v -= lr * d;
                }
            }
        }
        Ok(())
    }
}

fn layer_backward(
    layer: &Layer,
    shape: Shape,
    x: &[f64],
    g: &[f64],
    params: Option<&mut ParamGrad>,
) -> Vec<f64> {
    match layer {
        Layer::Conv2d(cv) => conv_backward(cv, shape, x, g, params),
        Layer::Dense(d) => {
            let mut gx = vec![0.0; d.inputs];
            for (o, row) in d.weight.chunks_exact(d.inputs).enumerate() {
                for (gi, w) in gx.iter_mut().zip(row) {
                    *gi += w * g[o];
                }
            }
            if let Some(pg) = params {
                for (o, grow) in pg.weight.chunks_exact_mut(d.inputs).enumerate() {
                    for (gw, xi) in grow.iter_mut().zip(x) {
                        *gw += g[o] * xi;
                    }
                    pg.bias[o] += g[o];
                }
            }
            gx
        }
        Layer::Relu => x.iter().zip(g).map(|(v, gi)| if *v > 0.0 { *gi } else { 0.0 }).collect(),
        Layer::MaxPool2d { size, stride } => {
            let Shape::Spatial { h, w, c } = shape else { unreachable!() };
            let (oh, ow) = ((h - size) / stride + 1, (w - size) / stride + 1);
            let mut gx = vec![0.0; x.len()];
            let mut o = 0;
            for oy in 0..oh {
                for ox in 0..ow {
                    for k in 0..c {
                        gx[pool_argmax(x, w, c, oy * stride, ox * stride, *size, k)] += g[o];
                        o += 1;
                    }
                }
            }
            gx
        }
        Layer::GlobalAvgPool => {
            let Shape::Spatial { h, w, c } = shape else { unreachable!() };
            let n = (h * w) as f64;
            (0..x.len()).map(|i| g[i % c] / n).collect()
        }
        Layer::Flatten | Layer::Dropout { .. } => g.to_vec(),
        Layer::Softmax => unreachable!("softmax is excluded from the logit layers"),
    }
}

fn conv_backward(
    cv: &Conv2d,
    shape: Shape,
    x: &[f64],
    g: &[f64],
    mut params: Option<&mut ParamGrad>,
) -> Vec<f64> {
    let Shape::Spatial { h, w, c } = shape else { unreachable!() };
    let (oh, pad_t) = conv_geometry(h, cv.kernel_h, cv.stride, cv.padding).unwrap();
    let (ow, pad_l) = conv_geometry(w, cv.kernel_w, cv.stride, cv.padding).unwrap();
    let (kh, kw, oc_n) = (cv.kernel_h, cv.kernel_w, cv.out_channels);
    let mut gx = vec![0.0; x.len()];
    for oy in 0..oh {
        for ox in 0..ow {
            let o_base = (oy * ow + ox) * oc_n;
            for oc in 0..oc_n {
                let go = g[o_base + oc];
                if let Some(pg) = params.as_deref_mut() {
                    pg.bias[oc] += go;
                }
                if go == 0.0 {
                    continue;
                }
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
                            let wi = ((oc * c + ic) * kh + ky) * kw + kx;
                            gx[i_base + ic] += cv.weight[wi] * go;
                            if let Some(pg) = params.as_deref_mut() {
                                pg.weight[wi] += x[i_base + ic] * go;
                            }
                        }
                    }
                }
            }
        }
    }
    gx
}
