//! Desk-scale minibatch SGD for the synthetic zoo.

use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use crate::augment::{mix, RngStream};
use crate::error::{Error, Result};
use crate::nn::{Conv2d, Dense, Layer, Model, Padding, Preprocessing};

/// Layer widths for [`build_model`]: each conv block is a 3x3 `same` conv,
/// ReLU and (while the map is at least 2x2) a 2x2 max-pool; then dense layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    #[serde(default)]
    pub conv_channels: Vec<usize>,
    #[serde(default)]
    pub hidden: Vec<usize>,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            conv_channels: vec![8],
            hidden: vec![32],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Recorded as a dropout layer; inference and this trainer treat it as identity.
    #[serde(default)]
    pub dropout_rate: f64,
    #[serde(default)]
    pub architecture: Architecture,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.epochs >= 1
            && self.batch_size >= 1
            && self.learning_rate.is_finite()
            && self.learning_rate >= 0.0
            && (0.0..1.0).contains(&self.dropout_rate)
            && self.architecture.conv_channels.iter().chain(&self.architecture.hidden).all(|&w| w > 0);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("bad training config {self:?}")))
        }
    }
}

/// Fresh model with weights uniform in `+-1/sqrt(fan_in)` and zero biases.
pub fn build_model(
    arch: &Architecture,
    input_shape: [usize; 3],
    num_classes: usize,
    dropout_rate: f64,
    seed: u64,
) -> Result<Model> {
    let mut rng = RngStream::new(mix(seed, 0x1417, 0));
    let mut init = |fan_in: usize, n: usize| -> Vec<f64> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        (0..n).map(|_| rng.uniform(-bound, bound) as f32 as f64).collect()
    };
    let [mut h, mut w, mut c] = input_shape;
    let mut layers = Vec::new();
    for &oc in &arch.conv_channels {
        let fan_in = c * 9;
        layers.push(Layer::Conv2d(Conv2d {
            in_channels: c,
            out_channels: oc,
            kernel_h: 3,
            kernel_w: 3,
            stride: 1,
            padding: Padding::Same,
            weight: init(fan_in, oc * fan_in),
            bias: vec![0.0; oc],
        }));
        layers.push(Layer::Relu);
        if h >= 2 && w >= 2 {
            layers.push(Layer::MaxPool2d { size: 2, stride: 2 });
            h /= 2;
            w /= 2;
        }
        c = oc;
    }
    layers.push(Layer::Flatten);
    let mut width = h * w * c;
    for &hd in &arch.hidden {
        layers.push(Layer::Dense(Dense {
            inputs: width,
            outputs: hd,
            weight: init(width, hd * width),
            bias: vec![0.0; hd],
        }));
        layers.push(Layer::Relu);
        if dropout_rate > 0.0 {
            layers.push(Layer::Dropout { rate: dropout_rate });
        }
        width = hd;
    }
    layers.push(Layer::Dense(Dense {
        inputs: width,
        outputs: num_classes,
        weight: init(width, num_classes * width),
        bias: vec![0.0; num_classes],
    }));
    layers.push(Layer::Softmax);
    let pre = Preprocessing {
        mean: vec![0.5; input_shape[2]],
        std: vec![0.25; input_shape[2]],
    };
    Ok(Model::new(input_shape, num_classes, pre, layers)?
        .with_metadata("init", "uniform(+-1/sqrt(fan_in)), zero bias")
        .with_metadata("init_seed", seed.to_string()))
}

/// Fraction of samples whose argmax prediction equals the label.
pub fn accuracy(model: &Model, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InvalidDataset("accuracy of an empty dataset".into()));
    }
    let mut correct = 0usize;
    for (img, label) in data.iter() {
        if model.forward(img)?.argmax() == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Mean cross-entropy over the whole dataset.
pub fn dataset_loss(model: &Model, data: &Dataset) -> Result<f64> {
    let mut total = 0.0;
    for (img, label) in data.iter() {
        total -= model.forward(img)?.get(label).max(f64::MIN_POSITIVE).ln();
    }
    Ok(total / data.len() as f64)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    /// Full training-set loss before training and after each epoch.
    pub losses: Vec<f64>,
}

/// Trains `initial` with plain SGD on mean cross-entropy.
pub fn train_model(initial: Model, cfg: &TrainConfig, train: &Dataset) -> Result<(Model, Vec<f64>)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidDataset("empty training set".into()));
    }
    let mut model = initial;
    let mut losses = vec![dataset_loss(&model, train)?];
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.epochs {
        RngStream::new(mix(cfg.seed, epoch as u64, 0x5eed)).shuffle(&mut order);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<_> = chunk
                .iter()
                .map(|&i| (&train.images()[i], train.labels()[i]))
                .collect();
            let (loss, grads) = model.loss_and_gradients(&batch).map_err(|e| match e {
                Error::NonFiniteGradient | Error::NonFiniteActivation { .. } => Error::Diverged { epoch },
                other => other,
            })?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            model.apply_gradients(&grads, cfg.learning_rate)?;
        }
        let loss = dataset_loss(&model, train).map_err(|_| Error::Diverged { epoch })?;
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        losses.push(loss);
    }
    Ok((model, losses))
}

/// Builds, trains and measures a model. Final weights are rounded to `f32`
/// before accuracies are measured, so a saved copy behaves identically.
pub fn train_tiny(cfg: &TrainConfig, train: &Dataset, test: &Dataset) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.shape() != test.shape() || train.num_classes() != test.num_classes() {
        return Err(Error::InvalidDataset("train and test sets disagree on shape or classes".into()));
    }
    let initial = build_model(
        &cfg.architecture,
        train.shape(),
        train.num_classes(),
        cfg.dropout_rate,
        cfg.seed,
    )?;
    let (mut model, losses) = train_model(initial, cfg, train)?;
    model.round_to_f32();
    let meta = [
        ("epochs", cfg.epochs.to_string()),
        ("batch_size", cfg.batch_size.to_string()),
        ("learning_rate", cfg.learning_rate.to_string()),
        ("dropout_rate", cfg.dropout_rate.to_string()),
    ];
    for (k, v) in meta {
        model = model.with_metadata(k, v);
    }
    Ok(TrainOutcome {
        train_accuracy: accuracy(&model, train)?,
        test_accuracy: accuracy(&model, test)?,
        model,
        losses,
    })
}
