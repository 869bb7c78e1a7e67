//! Toy shape-vs-texture classification data.
//!
//! The class is carried by a low-frequency mask (block, horizontal bar,
//! vertical bar, frame), all left-right symmetric up to a one-pixel jitter.
//! Each sample adds a random high-frequency texture on top that carries no
//! label information.

use super::dataset::{Dataset, Split};
use crate::augment::{mix, RngStream};
use crate::error::{Error, Result};
use crate::tensor::Image;

pub const SYNTH_SIDE: usize = 8;
pub const SYNTH_CLASSES: usize = 4;

fn mask(class: usize, i: isize, j: isize) -> bool {
    let s = SYNTH_SIDE as isize;
    match class {
        0 => (2..6).contains(&i) && (2..6).contains(&j),
        1 => (3..5).contains(&i) && (1..s - 1).contains(&j),
        2 => (1..s - 1).contains(&i) && (3..5).contains(&j),
        _ => {
            let inside = (1..s - 1).contains(&i) && (1..s - 1).contains(&j);
            let core = (2..s - 2).contains(&i) && (2..s - 2).contains(&j);
            inside && !core
        }
    }
}

fn sample(class: usize, rng: &mut RngStream) -> Image {
    let di = rng.below(3) as isize - 1;
    let dj = rng.below(3) as isize - 1;
    let fg: Vec<f64> = (0..3).map(|_| rng.uniform(0.55, 0.95)).collect();
    let bg: Vec<f64> = (0..3).map(|_| rng.uniform(0.05, 0.45)).collect();
    let amp = rng.uniform(0.05, 0.2);
    let period = 1 + rng.below(2);
    let phase = rng.below(2);
    let noise: Vec<f64> = (0..SYNTH_SIDE * SYNTH_SIDE * 3).map(|_| rng.uniform(-1.0, 1.0)).collect();
    Image::from_fn(SYNTH_SIDE, SYNTH_SIDE, 3, |i, j, c| {
        let on = mask(class, i as isize - di, j as isize - dj);
        let base = if on { fg[c] } else { bg[c] };
        let checker = if ((i / period) + (j / period) + phase).is_multiple_of(2) { 1.0 } else { -1.0 };
        let tex = amp * (0.6 * checker + 0.4 * noise[(i * SYNTH_SIDE + j) * 3 + c]);
        ((base + tex).clamp(0.0, 1.0) as f32) as f64
    })
    .expect("values clamped into range")
}

/// `n` samples with balanced classes in a seeded random order.
pub fn texture_shape_dataset(n: usize, seed: u64, split: Split) -> Result<Dataset> {
    let mut rng = RngStream::new(mix(seed, 0xda7a, split as u64));
    let mut labels: Vec<usize> = (0..n).map(|i| i % SYNTH_CLASSES).collect();
    rng.shuffle(&mut labels);
    let images = labels.iter().map(|&l| sample(l, &mut rng)).collect();
    Dataset::new([SYNTH_SIDE, SYNTH_SIDE, 3], images, labels, SYNTH_CLASSES, split)
}

/// Reassigns a `fraction` of labels (chosen by seeded shuffle) to a different, uniformly drawn class.
pub fn corrupt_labels(data: &Dataset, fraction: f64, seed: u64) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidConfig(format!("label noise {fraction} outside [0, 1]")));
    }
    if fraction == 0.0 {
        return Ok(data.clone());
    }
    let k = data.num_classes();
    if k < 2 {
        return Err(Error::InvalidDataset("label noise needs at least 2 classes".into()));
    }
    let mut rng = RngStream::new(mix(seed, 0x4015e, 0));
    let mut idx: Vec<usize> = (0..data.len()).collect();
    rng.shuffle(&mut idx);
    let flips = (fraction * data.len() as f64).round() as usize;
    let mut labels = data.labels().to_vec();
    for &i in &idx[..flips] {
        let shift = 1 + rng.below(k - 1);
        labels[i] = (labels[i] + shift) % k;
    }
    data.with_labels(labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_and_deterministic() {
        let a = texture_shape_dataset(40, 1, Split::Train).unwrap();
        let b = texture_shape_dataset(40, 1, Split::Train).unwrap();
        assert_eq!(a, b);
        for k in 0..SYNTH_CLASSES {
            assert_eq!(a.labels().iter().filter(|&&l| l == k).count(), 10);
        }
        assert_ne!(a, texture_shape_dataset(40, 1, Split::Test).unwrap());
    }

    #[test]
    fn corruption_rate() {
        let d = texture_shape_dataset(100, 2, Split::Train).unwrap();
        let noisy = corrupt_labels(&d, 0.4, 9).unwrap();
        let changed = d.labels().iter().zip(noisy.labels()).filter(|(a, b)| a != b).count();
        assert_eq!(changed, 40);
        assert_eq!(corrupt_labels(&d, 0.0, 9).unwrap(), d);
        assert!(corrupt_labels(&d, 1.5, 9).is_err());
    }
}
