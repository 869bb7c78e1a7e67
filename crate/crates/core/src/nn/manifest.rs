//! Model manifest (JSON) plus raw little-endian `f32` weight blob.
//!
//! The blob holds, for each parametric layer in manifest order, the weight
//! tensor (conv `[out, in, kh, kw]`, dense `[out, in]`) followed by the bias.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Conv2d, Dense, Layer, Model, Padding, Preprocessing};
use crate::error::{read_file, write_file, Error, Result};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestFile {
    #[serde(default = "default_version")]
    pub format_version: u32,
    pub input_shape: [usize; 3],
    pub num_classes: usize,
    pub preprocessing: PreprocessingFile,
    pub layers: Vec<LayerFile>,
    pub weights_file: String,
    pub weight_dtype: String,
    #[serde(default = "default_scale")]
    pub logit_scale: f64,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

fn default_version() -> u32 {
    MODEL_FORMAT_VERSION
}

fn default_scale() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessingFile {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PaddingFile {
    Valid,
    Same,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerFile {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: [usize; 2],
        #[serde(default = "default_stride")]
        stride: usize,
        padding: PaddingFile,
    },
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Relu,
    #[serde(rename = "maxpool2d")]
    MaxPool2d {
        size: usize,
        stride: usize,
    },
    Flatten,
    GlobalAvgPool,
    Softmax,
    Dropout {
        rate: f64,
    },
}

fn default_stride() -> usize {
    1
}

impl LayerFile {
    /// (weight, bias) element counts, or `None` on overflow.
    fn param_counts(&self) -> Option<(usize, usize)> {
        match *self {
            LayerFile::Conv2d { in_channels, out_channels, kernel: [kh, kw], .. } => Some((
                out_channels.checked_mul(in_channels)?.checked_mul(kh)?.checked_mul(kw)?,
                out_channels,
            )),
            LayerFile::Dense { inputs, outputs } => Some((inputs.checked_mul(outputs)?, outputs)),
            _ => Some((0, 0)),
        }
    }

    fn name(&self) -> &'static str {
        match self {
            LayerFile::Conv2d { .. } => "conv2d",
            LayerFile::Dense { .. } => "dense",
            LayerFile::Relu => "relu",
            LayerFile::MaxPool2d { .. } => "maxpool2d",
            LayerFile::Flatten => "flatten",
            LayerFile::GlobalAvgPool => "global_avg_pool",
            LayerFile::Softmax => "softmax",
            LayerFile::Dropout { .. } => "dropout",
        }
    }
}

struct BlobReader<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl BlobReader<'_> {
    fn take(&mut self, count: usize, layer: usize, name: &str, what: &str) -> Result<Vec<f64>> {
        let remaining = self.bytes.len() - self.offset;
        let need = count.checked_mul(4).filter(|n| *n <= remaining).ok_or_else(|| {
            Error::WeightBlob(format!(
                "layer {layer} ({name}) {what}: needs {count} values at byte offset {}, only {} bytes remain",
                self.offset, remaining
            ))
        })?;
        let chunk = &self.bytes[self.offset..self.offset + need];
        let mut out = Vec::with_capacity(count);
        for (i, b) in chunk.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
            if !v.is_finite() {
                return Err(Error::WeightBlob(format!(
                    "layer {layer} ({name}) {what}: non-finite value at index {i}"
                )));
            }
            out.push(f64::from(v));
        }
        self.offset += need;
        Ok(out)
    }
}

impl Model {
    /// Builds a model from a parsed manifest and its weight blob.
    pub fn from_manifest(manifest: &ManifestFile, blob: &[u8]) -> Result<Self> {
        if manifest.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::InvalidModel(format!(
                "unsupported format_version {}",
                manifest.format_version
            )));
        }
        if manifest.weight_dtype != "f32le" {
            return Err(Error::InvalidModel(format!(
                "unsupported weight_dtype {:?}, expected \"f32le\"",
                manifest.weight_dtype
            )));
        }
        let mut reader = BlobReader { bytes: blob, offset: 0 };
        let mut layers = Vec::with_capacity(manifest.layers.len());
        for (i, lf) in manifest.layers.iter().enumerate() {
            let (nw, nb) = lf.param_counts().ok_or_else(|| {
                Error::InvalidModel(format!("layer {i} ({}): parameter count overflows", lf.name()))
            })?;
            let layer = match *lf {
                LayerFile::Conv2d { in_channels, out_channels, kernel: [kh, kw], stride, padding } => {
                    let weight = reader.take(nw, i, lf.name(), "weight")?;
                    let bias = reader.take(nb, i, lf.name(), "bias")?;
                    Layer::Conv2d(Conv2d {
                        in_channels,
                        out_channels,
                        kernel_h: kh,
                        kernel_w: kw,
                        stride,
                        padding: match padding {
                            PaddingFile::Valid => Padding::Valid,
                            PaddingFile::Same => Padding::Same,
                        },
                        weight,
                        bias,
                    })
                }
                LayerFile::Dense { inputs, outputs } => {
                    let weight = reader.take(nw, i, lf.name(), "weight")?;
                    let bias = reader.take(nb, i, lf.name(), "bias")?;
                    Layer::Dense(Dense { inputs, outputs, weight, bias })
                }
                LayerFile::Relu => Layer::Relu,
                LayerFile::MaxPool2d { size, stride } => Layer::MaxPool2d { size, stride },
                LayerFile::Flatten => Layer::Flatten,
                LayerFile::GlobalAvgPool => Layer::GlobalAvgPool,
                LayerFile::Softmax => Layer::Softmax,
                LayerFile::Dropout { rate } => Layer::Dropout { rate },
            };
            layers.push(layer);
        }
        if reader.offset != blob.len() {
            return Err(Error::WeightBlob(format!(
                "{} trailing bytes after the last layer (blob is {} bytes, manifest accounts for {})",
                blob.len() - reader.offset,
                blob.len(),
                reader.offset
            )));
        }
        let pre = Preprocessing {
            mean: manifest.preprocessing.mean.clone(),
            std: manifest.preprocessing.std.clone(),
        };
        let mut model = Model::new(manifest.input_shape, manifest.num_classes, pre, layers)?
            .with_logit_scale(manifest.logit_scale)?;
        *model.metadata_mut() = manifest.metadata.clone();
        Ok(model)
    }

    /// Parses manifest JSON bytes together with the blob.
    pub fn from_manifest_bytes(manifest_json: &[u8], blob: &[u8]) -> Result<Self> {
        let manifest: ManifestFile = serde_json::from_slice(manifest_json)?;
        Self::from_manifest(&manifest, blob)
    }

    /// Manifest and blob describing this model; fails if a weight overflows `f32`.
    pub fn to_manifest(&self, weights_file: &str) -> Result<(ManifestFile, Vec<u8>)> {
        let mut blob = Vec::with_capacity(self.parameter_count() * 4);
        let mut layers = Vec::with_capacity(self.layers().len());
        for (i, layer) in self.layers().iter().enumerate() {
            if let Some((w, b)) = layer.params() {
                for &v in w.iter().chain(b) {
                    let f = v as f32;
                    if !f.is_finite() {
                        return Err(Error::WeightBlob(format!(
                            "layer {i} ({}): value {v} does not fit in f32",
                            layer.kind_name()
                        )));
                    }
                    blob.extend_from_slice(&f.to_le_bytes());
                }
            }
            layers.push(match layer {
                Layer::Conv2d(c) => LayerFile::Conv2d {
                    in_channels: c.in_channels,
                    out_channels: c.out_channels,
                    kernel: [c.kernel_h, c.kernel_w],
                    stride: c.stride,
                    padding: match c.padding {
                        Padding::Valid => PaddingFile::Valid,
                        Padding::Same => PaddingFile::Same,
                    },
                },
                Layer::Dense(d) => LayerFile::Dense { inputs: d.inputs, outputs: d.outputs },
                Layer::Relu => LayerFile::Relu,
                Layer::MaxPool2d { size, stride } => LayerFile::MaxPool2d { size: *size, stride: *stride },
                Layer::Flatten => LayerFile::Flatten,
                Layer::GlobalAvgPool => LayerFile::GlobalAvgPool,
                Layer::Softmax => LayerFile::Softmax,
                Layer::Dropout { rate } => LayerFile::Dropout { rate: *rate },
            });
        }
        let manifest = ManifestFile {
            format_version: MODEL_FORMAT_VERSION,
            input_shape: self.input_shape(),
            num_classes: self.num_classes(),
            preprocessing: PreprocessingFile {
                mean: self.preprocessing().mean.clone(),
                std: self.preprocessing().std.clone(),
            },
            layers,
            weights_file: weights_file.to_string(),
            weight_dtype: "f32le".into(),
            logit_scale: self.logit_scale(),
            metadata: self.metadata().clone(),
        };
        Ok((manifest, blob))
    }
}

/// Reads a manifest and the weight blob it names (relative to the manifest's directory).
pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let manifest: ManifestFile = serde_json::from_slice(&read_file(path)?)
        .map_err(|e| Error::InvalidModel(format!("{}: {e}", path.display())))?;
    let blob_path = path.parent().unwrap_or(Path::new(".")).join(&manifest.weights_file);
    let blob = read_file(&blob_path)?;
    Model::from_manifest(&manifest, &blob)
}

/// Writes `path` (manifest) and a sibling `<stem>.bin` weight blob.
pub fn save_model(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::InvalidModel(format!("bad manifest path {}", path.display())))?;
    let weights_file = format!("{stem}.bin");
    let (manifest, blob) = model.to_manifest(&weights_file)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    write_file(&dir.join(&weights_file), &blob)?;
    let mut json = serde_json::to_vec_pretty(&manifest)?;
    json.push(b'\n');
    write_file(path, &json)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mlp_manifest() -> ManifestFile {
        serde_json::from_str(
            r#"{
                "input_shape": [2, 2, 3],
                "num_classes": 4,
                "preprocessing": {"mean": [0.5, 0.5, 0.5], "std": [0.25, 0.25, 0.25]},
                "layers": [
                    {"type": "flatten"},
                    {"type": "dense", "inputs": 12, "outputs": 4},
                    {"type": "relu"},
                    {"type": "dense", "inputs": 4, "outputs": 4},
                    {"type": "softmax"}
                ],
                "weights_file": "mlp.bin",
                "weight_dtype": "f32le"
            }"#,
        )
        .unwrap()
    }

    fn blob(n: usize) -> Vec<u8> {
        (0..n).flat_map(|i| ((i as f32) * 0.01 - 0.3).to_le_bytes()).collect()
    }

    #[test]
    fn mlp_loads_from_exact_blob() {
        // 12*4 + 4 + 4*4 + 4 = 72 values
        let m = Model::from_manifest(&mlp_manifest(), &blob(72)).unwrap();
        assert_eq!(m.parameter_count(), 72);
        assert_eq!(m.num_classes(), 4);
    }

    #[test]
    fn short_blob_names_the_layer() {
        let err = Model::from_manifest(&mlp_manifest(), &blob(71)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("layer 3 (dense)"), "{msg}");
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut b = blob(72);
        b.push(0);
        assert!(Model::from_manifest(&mlp_manifest(), &b).is_err());
    }

    #[test]
    fn non_finite_weight_rejected() {
        let mut b = blob(72);
        b[8..12].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(Model::from_manifest(&mlp_manifest(), &b).is_err());
    }

    #[test]
    fn unknown_layer_type_rejected() {
        let json = r#"{"input_shape":[1,1,1],"num_classes":2,"preprocessing":{"mean":[0],"std":[1]},
            "layers":[{"type":"batchnorm"}],"weights_file":"x","weight_dtype":"f32le"}"#;
        assert!(Model::from_manifest_bytes(json.as_bytes(), &[]).is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let m = Model::from_manifest(&mlp_manifest(), &blob(72)).unwrap();
        let (mf, b) = m.to_manifest("mlp.bin").unwrap();
        assert_eq!(b, blob(72));
        assert_eq!(Model::from_manifest(&mf, &b).unwrap(), m);
    }
}
