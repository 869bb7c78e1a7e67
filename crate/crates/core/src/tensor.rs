//! Dense row-major arrays and the `[H, W, C]` image type built on them.

use crate::error::{Error, Result};

/// A dense row-major array of finite `f64` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected = shape_len(&shape)?;
        if expected != data.len() {
            return Err(Error::ShapeMismatch {
                shape,
                expected,
                got: data.len(),
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let len = shape_len(&shape)?;
        Ok(Self {
            shape,
            data: vec![0.0; len],
        })
    }

    /// Builds a tensor without the finiteness scan. Callers guarantee the invariants.
    pub(crate) fn from_raw(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Global L2 norm.
    pub fn norm(&self) -> f64 {
        l2_norm(&self.data)
    }
}

fn shape_len(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::ShapeMismatch {
            shape: shape.to_vec(),
            expected: 0,
            got: 0,
        });
    }
    shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::ShapeMismatch {
            shape: shape.to_vec(),
            expected: usize::MAX,
            got: 0,
        })
}

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// An `[H, W, C]` image with `C` in {1, 3} and every value in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidImage(format!(
                "channels must be 1 or 3, got {channels}"
            )));
        }
        if height == 0 || width == 0 {
            return Err(Error::InvalidImage(format!(
                "empty image {height}x{width}"
            )));
        }
        let expected = height * width * channels;
        if data.len() != expected {
            return Err(Error::ShapeMismatch {
                shape: vec![height, width, channels],
                expected,
                got: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidImage(format!(
                "value {} at flat index {i} outside [0, 1]",
                data[i]
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn from_tensor(t: Tensor) -> Result<Self> {
        match *t.shape() {
            [h, w, c] => Self::new(h, w, c, t.into_data()),
            _ => Err(Error::InvalidImage(format!(
                "expected [H, W, C] tensor, got shape {:?}",
                t.shape()
            ))),
        }
    }

    /// Constant-valued image.
    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(
            height,
            width,
            channels,
            vec![value; height * width * channels],
        )
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for i in 0..height {
            for j in 0..width {
                for c in 0..channels {
                    data.push(f(i, j, c));
                }
            }
        }
        Self::new(height, width, channels, data)
    }

    /// Internal constructor for kernels whose output is in range by construction.
    pub(crate) fn from_raw(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), height * width * channels);
        debug_assert!(data.iter().all(|v| (0.0..=1.0).contains(v)));
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.height, self.width, self.channels]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, c: usize) -> f64 {
        self.data[(i * self.width + j) * self.channels + c]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_raw(self.shape().to_vec(), self.data.clone())
    }
}

/// Clamps every value of an `[H, W, C]` tensor into `[0, 1]`.
pub fn clamp01(t: &Tensor) -> Result<Image> {
    let clamped = t.data().iter().map(|v| v.clamp(0.0, 1.0)).collect();
    Image::from_tensor(Tensor::from_raw(t.shape().to_vec(), clamped))
}

pub(crate) fn clamp_vec(h: usize, w: usize, c: usize, mut data: Vec<f64>) -> Image {
    for v in &mut data {
        *v = v.clamp(0.0, 1.0);
    }
    Image::from_raw(h, w, c, data)
}

pub const LUMA_R: f64 = 0.299;
pub const LUMA_G: f64 = 0.587;
pub const LUMA_B: f64 = 0.114;

/// Rec.601 luma of one RGB pixel.
///
/// Evaluated as `g + 0.299 (r - g) + 0.114 (b - g)`, which equals the usual
/// weighted sum but returns gray pixels (r == g == b) unchanged in floating point.
#[inline]
pub fn luma(r: f64, g: f64, b: f64) -> f64 {
    (g + LUMA_R * (r - g) + LUMA_B * (b - g)).clamp(0.0, 1.0)
}

pub fn to_grayscale(img: &Image) -> Result<Image> {
    if img.channels() != 3 {
        return Err(Error::InvalidImage(format!(
            "grayscale conversion needs 3 channels, got {}",
            img.channels()
        )));
    }
    let data = img
        .data()
        .chunks_exact(3)
        .map(|p| luma(p[0], p[1], p[2]))
        .collect();
    Ok(Image::from_raw(img.height(), img.width(), 1, data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tensor_constructor() {
        let t = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(t.shape(), &[2, 2]);
        assert_eq!(t.data(), &[1.0, 2.0, 3.0, 4.0]);
        let z = Tensor::new(vec![3], vec![0.0; 3]).unwrap();
        assert_eq!(z, Tensor::zeros(vec![3]).unwrap());
        assert!(matches!(
            Tensor::new(vec![2], vec![1.0, 2.0, 3.0]),
            Err(Error::ShapeMismatch { .. })
        ));
        assert!(matches!(
            Tensor::new(vec![2], vec![1.0, f64::NAN]),
            Err(Error::NonFinite { index: 1 })
        ));
    }

    #[test]
    fn clamp_values() {
        let t = Tensor::new(vec![1, 3, 1], vec![1.3, -0.2, 0.5]).unwrap();
        assert_eq!(clamp01(&t).unwrap().data(), &[1.0, 0.0, 0.5]);
        assert!(clamp01(&Tensor::new(vec![3], vec![0.0; 3]).unwrap()).is_err());
    }

    #[test]
    fn grayscale_values() {
        let white = Image::filled(1, 1, 3, 1.0).unwrap();
        assert_eq!(to_grayscale(&white).unwrap().data(), &[1.0]);
        let black = Image::filled(1, 1, 3, 0.0).unwrap();
        assert_eq!(to_grayscale(&black).unwrap().data(), &[0.0]);
        let red = Image::new(1, 1, 3, vec![1.0, 0.0, 0.0]).unwrap();
        let y = to_grayscale(&red).unwrap().data()[0];
        assert!((y - 0.299).abs() < 1e-15);
        assert!(to_grayscale(&Image::filled(2, 2, 1, 0.5).unwrap()).is_err());
    }

    #[test]
    fn image_rejects_bad_input() {
        assert!(Image::new(1, 1, 2, vec![0.0; 2]).is_err());
        assert!(Image::new(1, 1, 1, vec![1.5]).is_err());
        assert!(Image::new(2, 1, 1, vec![0.5]).is_err());
    }

    proptest! {
        #[test]
        fn clamp_idempotent(v in proptest::collection::vec(-3.0f64..3.0, 12)) {
            let t = Tensor::new(vec![2, 2, 3], v).unwrap();
            let once = clamp01(&t).unwrap();
            let twice = clamp01(&once.to_tensor()).unwrap();
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn grayscale_bounded(v in proptest::collection::vec(0.0f64..=1.0, 12)) {
            let img = Image::new(2, 2, 3, v).unwrap();
            let g = to_grayscale(&img).unwrap();
            for (p, y) in img.data().chunks(3).zip(g.data()) {
                let lo = p.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = p.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(*y >= lo - 1e-15 && *y <= hi + 1e-15);
            }
        }
    }
}
