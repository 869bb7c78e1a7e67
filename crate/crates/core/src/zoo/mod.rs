//! Datasets, model collections and the synthetic zoo generator.

mod cifar;
mod dataset;
mod synth;
mod train;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::augment::mix;
use crate::error::{read_file, write_file, Error, Result};
use crate::nn::save_model;

pub use cifar::{
    encode_cifar10_batch, load_cifar10, parse_cifar10_batch, CIFAR_CLASSES, CIFAR_RECORD,
};
pub use dataset::{decode_dataset, encode_dataset, load_dataset, save_dataset, Dataset, Split};
pub use synth::{corrupt_labels, texture_shape_dataset, SYNTH_CLASSES, SYNTH_SIDE};
pub use train::{
    accuracy, build_model, dataset_loss, train_model, train_tiny, Architecture, TrainConfig,
    TrainOutcome,
};

pub const ZOO_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZooManifestEntry {
    pub model_id: String,
    /// Model manifest path, relative to the zoo manifest's directory.
    pub path: String,
    pub hparams: BTreeMap<String, Value>,
    pub train_acc: f64,
    pub test_acc: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZooManifest {
    #[serde(default = "zoo_version")]
    pub format_version: u32,
    pub axes: Vec<String>,
    pub entries: Vec<ZooManifestEntry>,
}

fn zoo_version() -> u32 {
    ZOO_FORMAT_VERSION
}

/// Canonical string for a hyperparameter value; strings lose their quotes.
pub fn hparam_key(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

impl ZooManifest {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidZoo(m));
        if self.format_version != ZOO_FORMAT_VERSION {
            return bad(format!("unsupported format_version {}", self.format_version));
        }
        let axes: BTreeSet<&str> = self.axes.iter().map(String::as_str).collect();
        if axes.len() != self.axes.len() {
            return bad("duplicate axis name".into());
        }
        let mut ids = BTreeSet::new();
        for e in &self.entries {
            if !ids.insert(e.model_id.as_str()) {
                return bad(format!("duplicate model_id {:?}", e.model_id));
            }
            let keys: BTreeSet<&str> = e.hparams.keys().map(String::as_str).collect();
            if keys != axes {
                return bad(format!(
                    "model {:?} has hyperparameters {keys:?}, expected exactly {axes:?}",
                    e.model_id
                ));
            }
            for (name, acc) in [("train_acc", e.train_acc), ("test_acc", e.test_acc)] {
                if !(0.0..=1.0).contains(&acc) {
                    return bad(format!("model {:?}: {name} {acc} outside [0, 1]", e.model_id));
                }
            }
        }
        Ok(())
    }

    pub fn from_json_slice(bytes: &[u8]) -> Result<Self> {
        let m: Self = serde_json::from_slice(bytes).map_err(|e| Error::InvalidZoo(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_json_string(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

/// Reads and validates a zoo manifest, checking that every model path exists.
pub fn load_zoo_manifest(path: impl AsRef<Path>) -> Result<ZooManifest> {
    let path = path.as_ref();
    let m = ZooManifest::from_json_slice(&read_file(path)?)?;
    for e in &m.entries {
        let p = resolve_model_path(path, e);
        if !p.is_file() {
            return Err(Error::InvalidZoo(format!(
                "model {:?}: {} does not exist",
                e.model_id,
                p.display()
            )));
        }
    }
    Ok(m)
}

pub fn save_zoo_manifest(path: impl AsRef<Path>, manifest: &ZooManifest) -> Result<()> {
    manifest.validate()?;
    write_file(path.as_ref(), manifest.to_json_string()?.as_bytes())
}

pub fn resolve_model_path(manifest_path: &Path, entry: &ZooManifestEntry) -> PathBuf {
    manifest_path.parent().unwrap_or(Path::new(".")).join(&entry.path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridAxis {
    pub name: String,
    pub values: Vec<f64>,
}

/// Hyperparameter grid for the synthetic zoo. Axis names: `learning_rate`,
/// `batch_size`, `label_noise`, `dropout`, `epochs`, `width`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ZooGrid {
    pub axes: Vec<GridAxis>,
    /// Independently seeded models per grid cell.
    pub replicates: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub label_noise: f64,
    pub dropout: f64,
    pub architecture: Architecture,
    pub train_size: usize,
    pub test_size: usize,
}

const KNOWN_AXES: [&str; 6] = ["learning_rate", "batch_size", "label_noise", "dropout", "epochs", "width"];
const INTEGER_AXES: [&str; 3] = ["batch_size", "epochs", "width"];

impl Default for ZooGrid {
    fn default() -> Self {
        let axis = |name: &str, values: &[f64]| GridAxis { name: name.into(), values: values.to_vec() };
        Self {
            axes: vec![
                axis("learning_rate", &[0.1, 0.01]),
                axis("batch_size", &[8.0, 32.0]),
                axis("label_noise", &[0.0, 0.4]),
            ],
            replicates: 2,
            epochs: 40,
            batch_size: 16,
            learning_rate: 0.05,
            label_noise: 0.0,
            dropout: 0.0,
            architecture: Architecture::default(),
            train_size: 160,
            test_size: 400,
        }
    }
}

/// One trainable grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub hparams: BTreeMap<String, Value>,
    pub train: TrainConfig,
    pub label_noise: f64,
}

impl ZooGrid {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(format!("zoo grid: {m}")));
        if self.axes.len() < 2 {
            return bad("need at least 2 axes".into());
        }
        let mut seen = BTreeSet::new();
        for a in &self.axes {
            if !KNOWN_AXES.contains(&a.name.as_str()) {
                return bad(format!("unknown axis {:?}; expected one of {KNOWN_AXES:?}", a.name));
            }
            if !seen.insert(a.name.as_str()) {
                return bad(format!("duplicate axis {:?}", a.name));
            }
            if a.values.len() < 2 {
                return bad(format!("axis {:?} needs at least 2 values", a.name));
            }
            let integer = INTEGER_AXES.contains(&a.name.as_str());
            if a.values.iter().any(|v| !v.is_finite() || *v < 0.0 || (integer && (v.fract() != 0.0 || *v < 1.0))) {
                return bad(format!("axis {:?} has invalid values {:?}", a.name, a.values));
            }
        }
        if self.replicates == 0 || self.train_size == 0 || self.test_size == 0 {
            return bad("replicates, train_size and test_size must be positive".into());
        }
        Ok(())
    }

    /// Cartesian product of the axes, first axis outermost.
    pub fn cells(&self, base_seed: u64) -> Result<Vec<GridCell>> {
        self.validate()?;
        let mut combos: Vec<Vec<f64>> = vec![vec![]];
        for a in &self.axes {
            combos = combos
                .into_iter()
                .flat_map(|prefix| {
                    a.values.iter().map(move |&v| {
                        let mut p = prefix.clone();
                        p.push(v);
                        p
                    })
                })
                .collect();
        }
        let mut cells = Vec::new();
        for (ci, combo) in combos.iter().enumerate() {
            for rep in 0..self.replicates {
                let mut train = TrainConfig {
                    epochs: self.epochs,
                    batch_size: self.batch_size,
                    learning_rate: self.learning_rate,
                    dropout_rate: self.dropout,
                    architecture: self.architecture.clone(),
                    seed: mix(base_seed, ci as u64, rep as u64),
                };
                let mut label_noise = self.label_noise;
                let mut hparams = BTreeMap::new();
                for (a, &v) in self.axes.iter().zip(combo) {
                    match a.name.as_str() {
                        "learning_rate" => train.learning_rate = v,
                        "batch_size" => train.batch_size = v as usize,
                        "label_noise" => label_noise = v,
                        "dropout" => train.dropout_rate = v,
                        "epochs" => train.epochs = v as usize,
                        "width" => {
                            let w = v as usize;
                            match train.architecture.hidden.first_mut() {
                                Some(h) => *h = w,
                                None => train.architecture.hidden.push(w),
                            }
                        }
                        _ => unreachable!("validated"),
                    }
                    let value = if INTEGER_AXES.contains(&a.name.as_str()) {
                        Value::from(v as u64)
                    } else {
                        Value::from(v)
                    };
                    hparams.insert(a.name.clone(), value);
                }
                train.validate()?;
                cells.push(GridCell { hparams, train, label_noise });
            }
        }
        Ok(cells)
    }
}

/// Trains every grid cell on (label-corrupted copies of) `train`, writes
/// `models/<id>.json` + blob under `out_dir`, and writes `zoo.json`.
pub fn generate_synthetic_zoo(
    grid: &ZooGrid,
    base_seed: u64,
    train: &Dataset,
    test: &Dataset,
    out_dir: impl AsRef<Path>,
) -> Result<ZooManifest> {
    let out_dir = out_dir.as_ref();
    let cells = grid.cells(base_seed)?;
    let models_dir = out_dir.join("models");
    std::fs::create_dir_all(&models_dir).map_err(|e| Error::io(&models_dir, e))?;

    let entries = cells
        .par_iter()
        .enumerate()
        .map(|(i, cell)| {
            let model_id = format!("m{i:03}");
            let noisy = corrupt_labels(train, cell.label_noise, cell.train.seed)?;
            let outcome = train_tiny(&cell.train, &noisy, test)?;
            let mut model = outcome.model;
            for (k, v) in &cell.hparams {
                model = model.with_metadata(format!("hparam.{k}"), hparam_key(v));
            }
            let rel = format!("models/{model_id}.json");
            save_model(&model, out_dir.join(&rel))?;
            Ok(ZooManifestEntry {
                model_id,
                path: rel,
                hparams: cell.hparams.clone(),
                train_acc: outcome.train_accuracy,
                test_acc: outcome.test_accuracy,
                seed: Some(cell.train.seed),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let manifest = ZooManifest {
        format_version: ZOO_FORMAT_VERSION,
        axes: grid.axes.iter().map(|a| a.name.clone()).collect(),
        entries,
    };
    save_zoo_manifest(out_dir.join("zoo.json"), &manifest)?;
    Ok(manifest)
}
