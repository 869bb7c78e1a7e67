//! CIFAR-10 binary batches: 3073-byte records of one label byte followed by
//! the red, green and blue planes, each 32x32 row-major bytes.

use std::path::Path;

use super::dataset::{Dataset, Split};
use crate::error::{read_file, Error, Result};
use crate::tensor::Image;

pub const CIFAR_SIDE: usize = 32;
pub const CIFAR_PLANE: usize = CIFAR_SIDE * CIFAR_SIDE;
pub const CIFAR_RECORD: usize = 1 + 3 * CIFAR_PLANE;
pub const CIFAR_CLASSES: usize = 10;

/// Decodes one batch file's bytes.
pub fn parse_cifar10_batch(bytes: &[u8], split: Split) -> Result<Dataset> {
    let whole = bytes.len() / CIFAR_RECORD * CIFAR_RECORD;
    if whole != bytes.len() {
        return Err(Error::InvalidDataset(format!(
            "length {} is not a multiple of {CIFAR_RECORD}; record at byte offset {whole} is truncated",
            bytes.len()
        )));
    }
    let n = bytes.len() / CIFAR_RECORD;
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for (k, rec) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
        let label = usize::from(rec[0]);
        if label >= CIFAR_CLASSES {
            return Err(Error::InvalidDataset(format!(
                "label {label} at byte offset {} is not below {CIFAR_CLASSES}",
                k * CIFAR_RECORD
            )));
        }
        let planes = &rec[1..];
        let mut data = Vec::with_capacity(3 * CIFAR_PLANE);
        for p in 0..CIFAR_PLANE {
            for c in 0..3 {
                data.push(f64::from(planes[c * CIFAR_PLANE + p]) / 255.0);
            }
        }
        images.push(Image::new(CIFAR_SIDE, CIFAR_SIDE, 3, data)?);
        labels.push(label);
    }
    Dataset::new([CIFAR_SIDE, CIFAR_SIDE, 3], images, labels, CIFAR_CLASSES, split)
}

/// Re-encodes a 32x32x3, 10-class dataset as a batch file, quantizing to bytes.
pub fn encode_cifar10_batch(data: &Dataset) -> Result<Vec<u8>> {
    if data.shape() != [CIFAR_SIDE, CIFAR_SIDE, 3] || data.num_classes() != CIFAR_CLASSES {
        return Err(Error::InvalidDataset(format!(
            "CIFAR-10 needs 32x32x3 images and 10 classes, got {:?} / {}",
            data.shape(),
            data.num_classes()
        )));
    }
    let mut out = Vec::with_capacity(data.len() * CIFAR_RECORD);
    for (img, label) in data.iter() {
        out.push(label as u8);
        for c in 0..3 {
            out.extend(
                img.data()
                    .iter()
                    .skip(c)
                    .step_by(3)
                    .map(|v| (v * 255.0).round() as u8),
            );
        }
    }
    Ok(out)
}

/// Reads the training batches (`data_batch_1.bin` .. `data_batch_5.bin`, those
/// present, in order) or `test_batch.bin`.
pub fn load_cifar10(dir: impl AsRef<Path>, split: Split) -> Result<Dataset> {
    let dir = dir.as_ref();
    let names: Vec<String> = match split {
        Split::Train => (1..=5).map(|i| format!("data_batch_{i}.bin")).collect(),
        Split::Test => vec!["test_batch.bin".into()],
    };
    let mut images = Vec::new();
    let mut labels = Vec::new();
    let mut found = 0;
    for name in names {
        let path = dir.join(&name);
        if !path.exists() {
            continue;
        }
        found += 1;
        let batch = parse_cifar10_batch(&read_file(&path)?, split)
            .map_err(|e| Error::InvalidDataset(format!("{}: {e}", path.display())))?;
        images.extend_from_slice(batch.images());
        labels.extend_from_slice(batch.labels());
    }
    if found == 0 {
        return Err(Error::InvalidDataset(format!(
            "no CIFAR-10 {split:?} batch files in {}",
            dir.display()
        )));
    }
    Dataset::new([CIFAR_SIDE, CIFAR_SIDE, 3], images, labels, CIFAR_CLASSES, split)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_record_is_black_class_zero() {
        let d = parse_cifar10_batch(&vec![0u8; CIFAR_RECORD], Split::Test).unwrap();
        assert_eq!(d.labels(), &[0]);
        assert!(d.images()[0].data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn truncated_reports_offset() {
        let err = parse_cifar10_batch(&vec![0u8; CIFAR_RECORD + 10], Split::Train).unwrap_err();
        assert!(err.to_string().contains("offset 3073"), "{err}");
    }

    #[test]
    fn bad_label() {
        let mut rec = vec![0u8; CIFAR_RECORD];
        rec[0] = 10;
        assert!(parse_cifar10_batch(&rec, Split::Train).is_err());
    }

    #[test]
    fn plane_order() {
        let mut rec = vec![0u8; CIFAR_RECORD];
        rec[0] = 3;
        rec[1] = 255; // R of pixel 0
        rec[1 + CIFAR_PLANE + 1] = 51; // G of pixel 1
        rec[1 + 2 * CIFAR_PLANE + CIFAR_SIDE] = 102; // B of pixel (1, 0)
        let d = parse_cifar10_batch(&rec, Split::Train).unwrap();
        let img = &d.images()[0];
        assert_eq!(img.get(0, 0, 0), 1.0);
        assert_eq!(img.get(0, 1, 1), 51.0 / 255.0);
        assert_eq!(img.get(1, 0, 2), 102.0 / 255.0);
        assert_eq!(encode_cifar10_batch(&d).unwrap(), rec);
    }
}
