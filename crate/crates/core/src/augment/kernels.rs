//! Per-pixel and stencil kernels behind each augmentation kind.

use super::rng::RngStream;
use crate::error::{Error, Result};
use crate::tensor::{clamp_vec, luma, to_grayscale, Image};

/// Mirror about the vertical axis: `out(i, j, c) = in(i, W-1-j, c)`.
pub fn flip_lr(img: &Image) -> Image {
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let src = img.data();
    let mut out = Vec::with_capacity(src.len());
    for i in 0..h {
        for j in 0..w {
            let base = (i * w + (w - 1 - j)) * c;
            out.extend_from_slice(&src[base..base + c]);
        }
    }
    Image::from_raw(h, w, c, out)
}

pub fn draw_saturation_factor(rng: &mut RngStream, lo: f64, hi: f64) -> f64 {
    rng.uniform(lo, hi)
}

/// Luma-blend saturation with factor `s`; `s > 1` pushes each pixel away from its gray value.
pub fn saturate(img: &Image, s: f64) -> Result<Image> {
    if img.channels() != 3 {
        return Err(Error::InvalidAugmentation(format!(
            "saturation needs a 3-channel image, got {} channel(s)",
            img.channels()
        )));
    }
    if !(s.is_finite() && s >= 0.0) {
        return Err(Error::InvalidAugmentation(format!(
            "saturation factor {s} must be finite and nonnegative"
        )));
    }
    let k = s - 1.0;
    let mut out = Vec::with_capacity(img.data().len());
    for p in img.data().chunks_exact(3) {
        let gray = luma(p[0], p[1], p[2]);
        // in + (s-1)(in - gray) == gray + s(in - gray), exact at s == 1 and on gray pixels
        out.extend(p.iter().map(|&v| v + k * (v - gray)));
    }
    Ok(clamp_vec(img.height(), img.width(), 3, out))
}

pub fn random_saturation(img: &Image, rng: &mut RngStream) -> Result<Image> {
    let s = draw_saturation_factor(rng, 1.0, 2.0);
    saturate(img, s)
}

/// Central crop of `floor(fraction * side)` per axis, resized back with
/// half-pixel-centre (align-corners = false) bilinear sampling.
pub fn crop_resize(img: &Image, fraction: f64) -> Result<Image> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidAugmentation(format!(
            "crop fraction {fraction} outside (0, 1]"
        )));
    }
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let ch = (fraction * h as f64).floor() as usize;
    let cw = (fraction * w as f64).floor() as usize;
    if ch < 1 || cw < 1 {
        return Err(Error::InvalidAugmentation(format!(
            "crop of {fraction} leaves {ch}x{cw} pixels of a {h}x{w} image"
        )));
    }
    let top = (h - ch) / 2;
    let left = (w - cw) / 2;
    let rows: Vec<(usize, usize, f64)> = (0..h).map(|o| sample_coord(o, h, ch)).collect();
    let cols: Vec<(usize, usize, f64)> = (0..w).map(|o| sample_coord(o, w, cw)).collect();
    let at = |i: usize, j: usize, k: usize| img.get(top + i, left + j, k);

    let mut out = Vec::with_capacity(h * w * c);
    for &(y0, y1, ty) in &rows {
        for &(x0, x1, tx) in &cols {
            for k in 0..c {
                let a = at(y0, x0, k);
                let b = at(y0, x1, k);
                let upper = a + tx * (b - a);
                let d = at(y1, x0, k);
                let e = at(y1, x1, k);
                let lower = d + tx * (e - d);
                out.push(upper + ty * (lower - upper));
            }
        }
    }
    Ok(clamp_vec(h, w, c, out))
}

/// Source neighbours and weight for output coordinate `o` when resampling
/// `src_len` pixels onto `out_len`.
fn sample_coord(o: usize, out_len: usize, src_len: usize) -> (usize, usize, f64) {
    let scale = src_len as f64 / out_len as f64;
    let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
    let i0 = (src.floor() as usize).min(src_len - 1);
    let i1 = (i0 + 1).min(src_len - 1);
    let t = if i1 == i0 { 0.0 } else { src - i0 as f64 };
    (i0, i1, t)
}

pub fn brightness(img: &Image, delta: f64) -> Result<Image> {
    if !(delta.is_finite() && delta >= 0.0) {
        return Err(Error::InvalidAugmentation(format!(
            "brightness delta {delta} must be finite and nonnegative"
        )));
    }
    let out = img.data().iter().map(|v| v + delta).collect();
    Ok(clamp_vec(img.height(), img.width(), img.channels(), out))
}

/// Parameter ranges for random erasing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EraseParams {
    pub area_lo: f64,
    pub area_hi: f64,
    pub aspect_lo: f64,
    pub aspect_hi: f64,
}

impl Default for EraseParams {
    fn default() -> Self {
        Self {
            area_lo: 0.10,
            area_hi: 0.25,
            aspect_lo: 0.5,
            aspect_hi: 2.0,
        }
    }
}

impl EraseParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.area_lo > 0.0
            && self.area_lo <= self.area_hi
            && self.area_hi <= 1.0
            && self.aspect_lo > 0.0
            && self.aspect_lo <= self.aspect_hi
            && self.aspect_hi.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidAugmentation(format!(
                "bad erase ranges {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EraseRect {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

/// Draws area fraction, aspect ratio, then row and column offsets, in that order.
pub fn draw_erase_rect(
    rng: &mut RngStream,
    h: usize,
    w: usize,
    params: &EraseParams,
) -> Result<EraseRect> {
    params.validate()?;
    if h < 4 || w < 4 {
        return Err(Error::InvalidAugmentation(format!(
            "random erase needs at least 4x4 pixels, got {h}x{w}"
        )));
    }
    let area = rng.uniform(params.area_lo, params.area_hi);
    let aspect = rng.uniform(params.aspect_lo, params.aspect_hi);
    let target = area * (h * w) as f64;
    let eh = ((target * aspect).sqrt().ceil() as usize).clamp(1, h);
    let ew = ((target / aspect).sqrt().ceil() as usize).clamp(1, w);
    let top = rng.below(h - eh + 1);
    let left = rng.below(w - ew + 1);
    Ok(EraseRect {
        top,
        left,
        height: eh,
        width: ew,
    })
}

/// Per-channel mean of the whole image, accumulated as offsets from the
/// first pixel so a constant channel yields its value exactly.
pub fn channel_means(img: &Image) -> Vec<f64> {
    let c = img.channels();
    let first = &img.data()[..c];
    let mut sums = vec![0.0; c];
    for p in img.data().chunks_exact(c) {
        for ((s, v), r) in sums.iter_mut().zip(p).zip(first) {
            *s += v - r;
        }
    }
    let n = (img.height() * img.width()) as f64;
    sums.iter()
        .zip(first)
        .map(|(s, r)| (r + s / n).clamp(0.0, 1.0))
        .collect()
}

/// Fills `rect` with the per-channel mean of `img`.
pub fn erase(img: &Image, rect: EraseRect) -> Image {
    let (w, c) = (img.width(), img.channels());
    let fill = channel_means(img);
    let mut out = img.data().to_vec();
    for i in rect.top..rect.top + rect.height {
        for j in rect.left..rect.left + rect.width {
            let base = (i * w + j) * c;
            out[base..base + c].copy_from_slice(&fill);
        }
    }
    Image::from_raw(img.height(), w, c, out)
}

pub fn random_erase(img: &Image, rng: &mut RngStream) -> Result<Image> {
    let rect = draw_erase_rect(rng, img.height(), img.width(), &EraseParams::default())?;
    Ok(erase(img, rect))
}

/// Max-normalized Sobel gradient magnitude with replicate padding,
/// replicated back to the input's channel count.
///
/// `Gx = [[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]]` and `Gy = Gx^T`, evaluated as
/// weighted differences so flat regions give exactly zero.
pub fn sobel(img: &Image) -> Image {
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let gray = if c == 3 {
        to_grayscale(img).expect("3-channel input")
    } else {
        img.clone()
    };
    let g = gray.data();
    let px = |i: isize, j: isize| {
        let ii = i.clamp(0, h as isize - 1) as usize;
        let jj = j.clamp(0, w as isize - 1) as usize;
        g[ii * w + jj]
    };
    let mut mag = Vec::with_capacity(h * w);
    for i in 0..h as isize {
        for j in 0..w as isize {
            let gx = (px(i - 1, j + 1) - px(i - 1, j - 1))
                + 2.0 * (px(i, j + 1) - px(i, j - 1))
                + (px(i + 1, j + 1) - px(i + 1, j - 1));
            let gy = (px(i + 1, j - 1) - px(i - 1, j - 1))
                + 2.0 * (px(i + 1, j) - px(i - 1, j))
                + (px(i + 1, j + 1) - px(i - 1, j + 1));
            mag.push((gx * gx + gy * gy).sqrt());
        }
    }
    let max = mag.iter().cloned().fold(0.0, f64::max);
    if max > 0.0 {
        for m in &mut mag {
            *m /= max;
        }
    }
    let out = mag
        .iter()
        .flat_map(|&m| std::iter::repeat_n(m.min(1.0), c))
        .collect();
    Image::from_raw(h, w, c, out)
}
