//! In-memory labelled image sets and the native container format.
//!
//! Container layout: one JSON header line terminated by `\n`, then
//! `n * h * w * c` little-endian `f32` pixels (row-major `[H, W, C]` per
//! image), then `n` label bytes. Nothing may follow the labels.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{read_file, write_file, Error, Result};
use crate::tensor::Image;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    shape: [usize; 3],
    images: Vec<Image>,
    labels: Vec<usize>,
    num_classes: usize,
    split: Split,
}

impl Dataset {
    pub fn new(
        shape: [usize; 3],
        images: Vec<Image>,
        labels: Vec<usize>,
        num_classes: usize,
        split: Split,
    ) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::InvalidDataset(format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        if num_classes == 0 {
            return Err(Error::InvalidDataset("num_classes must be positive".into()));
        }
        if let Some(i) = images.iter().position(|im| im.shape() != shape) {
            return Err(Error::InvalidDataset(format!(
                "image {i} has shape {:?}, expected {shape:?}",
                images[i].shape()
            )));
        }
        if let Some(i) = labels.iter().position(|&l| l >= num_classes) {
            return Err(Error::InvalidDataset(format!(
                "label {} of sample {i} not below {num_classes}",
                labels[i]
            )));
        }
        Ok(Self { shape, images, labels, num_classes, split })
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn images(&self) -> &[Image] {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Same images with replaced labels.
    pub fn with_labels(&self, labels: Vec<usize>) -> Result<Self> {
        Self::new(self.shape, self.images.clone(), labels, self.num_classes, self.split)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Image, usize)> {
        self.images.iter().zip(self.labels.iter().copied())
    }
}

pub const DATASET_FORMAT: &str = "genaug-dataset";
const MAX_HEADER: usize = 4096;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    format_version: u32,
    h: usize,
    w: usize,
    c: usize,
    n: usize,
    num_classes: usize,
    split: Split,
}

/// Serializes `data` into the native container. Pixels are stored as `f32`.
pub fn encode_dataset(data: &Dataset) -> Result<Vec<u8>> {
    if data.num_classes() > 256 {
        return Err(Error::InvalidDataset(format!(
            "{} classes do not fit in label bytes",
            data.num_classes()
        )));
    }
    let [h, w, c] = data.shape();
    let header = Header {
        format: DATASET_FORMAT.into(),
        format_version: 1,
        h,
        w,
        c,
        n: data.len(),
        num_classes: data.num_classes(),
        split: data.split(),
    };
    let mut out = serde_json::to_vec(&header)?;
    out.push(b'\n');
    out.reserve(data.len() * (h * w * c * 4 + 1));
    for img in data.images() {
        for &v in img.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out.extend(data.labels().iter().map(|&l| l as u8));
    Ok(out)
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    let bad = |m: String| Error::InvalidDataset(m);
    let nl = bytes
        .iter()
        .take(MAX_HEADER)
        .position(|&b| b == b'\n')
        .ok_or_else(|| bad("missing header line".into()))?;
    let header: Header = serde_json::from_slice(&bytes[..nl])
        .map_err(|e| bad(format!("header: {e}")))?;
    if header.format != DATASET_FORMAT || header.format_version != 1 {
        return Err(bad(format!(
            "unsupported container {:?} v{}",
            header.format, header.format_version
        )));
    }
    if !(header.c == 1 || header.c == 3) || header.h == 0 || header.w == 0 {
        return Err(bad(format!("bad image shape {}x{}x{}", header.h, header.w, header.c)));
    }
    if header.num_classes == 0 || header.num_classes > 256 {
        return Err(bad(format!("num_classes {} outside 1..=256", header.num_classes)));
    }
    let per_image = header
        .h
        .checked_mul(header.w)
        .and_then(|v| v.checked_mul(header.c))
        .ok_or_else(|| bad("image size overflows".into()))?;
    let body = &bytes[nl + 1..];
    let pixel_bytes = per_image
        .checked_mul(4)
        .and_then(|v| v.checked_mul(header.n))
        .ok_or_else(|| bad("pixel blob size overflows".into()))?;
    let expected = pixel_bytes
        .checked_add(header.n)
        .ok_or_else(|| bad("blob size overflows".into()))?;
    if body.len() != expected {
        return Err(bad(format!(
            "header promises {} images ({expected} bytes) but body has {} bytes",
            header.n,
            body.len()
        )));
    }
    let (pixels, labels) = body.split_at(pixel_bytes);
    let mut images = Vec::with_capacity(header.n);
    for (k, chunk) in pixels.chunks_exact(per_image * 4).enumerate() {
        let data: Vec<f64> = chunk
            .chunks_exact(4)
            .map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
            .collect();
        let img = Image::new(header.h, header.w, header.c, data)
            .map_err(|e| bad(format!("image {k}: {e}")))?;
        images.push(img);
    }
    let labels = labels.iter().map(|&l| usize::from(l)).collect();
    Dataset::new([header.h, header.w, header.c], images, labels, header.num_classes, header.split)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    decode_dataset(&read_file(path.as_ref())?)
}

pub fn save_dataset(path: impl AsRef<Path>, data: &Dataset) -> Result<()> {
    write_file(path.as_ref(), &encode_dataset(data)?)
}
