//! Reference implementations shared by the integration and acceptance tests.
#![allow(dead_code, clippy::needless_range_loop)]

use genaug::augment::RngStream;
use genaug::nn::{Conv2d, Dense, Layer, Model, Objective, Padding, Preprocessing};
use genaug::perturb::kl_divergence;
use genaug::tensor::Image;

/// Separable resampling matrix for half-pixel-centre bilinear interpolation.
pub fn resample_matrix(out: usize, src: usize) -> Vec<Vec<f64>> {
    let mut m = vec![vec![0.0; src]; out];
    for (o, row) in m.iter_mut().enumerate() {
        let mut x = (o as f64 + 0.5) * (src as f64 / out as f64) - 0.5;
        if x < 0.0 {
            x = 0.0;
        }
        let x0 = (x.floor() as usize).min(src - 1);
        let x1 = (x0 + 1).min(src - 1);
        let f = if x1 == x0 { 0.0 } else { x - x0 as f64 };
        row[x0] += 1.0 - f;
        row[x1] += f;
    }
    m
}

pub fn crop_resize_reference(img: &Image, fraction: f64) -> Vec<f64> {
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let ch = (fraction * h as f64).floor() as usize;
    let cw = (fraction * w as f64).floor() as usize;
    let (top, left) = ((h - ch) / 2, (w - cw) / 2);
    let rh = resample_matrix(h, ch);
    let rw = resample_matrix(w, cw);
    let mut out = vec![0.0; h * w * c];
    for i in 0..h {
        for j in 0..w {
            for k in 0..c {
                let mut acc = 0.0;
                for (a, wa) in rh[i].iter().enumerate() {
                    for (b, wb) in rw[j].iter().enumerate() {
                        acc += wa * wb * img.get(top + a, left + b, k);
                    }
                }
                out[(i * w + j) * c + k] = acc.clamp(0.0, 1.0);
            }
        }
    }
    out
}

pub fn sobel_reference(img: &Image) -> Vec<f64> {
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let gray: Vec<f64> = (0..h * w)
        .map(|p| {
            let (i, j) = (p / w, p % w);
            if c == 3 {
                0.299 * img.get(i, j, 0) + 0.587 * img.get(i, j, 1) + 0.114 * img.get(i, j, 2)
            } else {
                img.get(i, j, 0)
            }
        })
        .collect();
    let kx = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
    let mut mag = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            let (mut gx, mut gy) = (0.0, 0.0);
            for di in 0..3 {
                for dj in 0..3 {
                    let ii = (i as isize + di as isize - 1).clamp(0, h as isize - 1) as usize;
                    let jj = (j as isize + dj as isize - 1).clamp(0, w as isize - 1) as usize;
                    let v = gray[ii * w + jj];
                    gx += kx[di][dj] * v;
                    gy += kx[dj][di] * v;
                }
            }
            mag[i * w + j] = (gx * gx + gy * gy).sqrt();
        }
    }
    let max = mag.iter().cloned().fold(0.0, f64::max);
    mag.iter()
        .flat_map(|m| std::iter::repeat_n(if max > 0.0 { m / max } else { 0.0 }, c))
        .collect()
}

pub fn uniform_vec(rng: &mut RngStream, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.uniform(-scale, scale)).collect()
}

pub fn conv(rng: &mut RngStream, cin: usize, cout: usize, k: usize, stride: usize, padding: Padding) -> Layer {
    let scale = 1.0 / ((cin * k * k) as f64).sqrt();
    Layer::Conv2d(Conv2d {
        in_channels: cin,
        out_channels: cout,
        kernel_h: k,
        kernel_w: k,
        stride,
        padding,
        weight: uniform_vec(rng, cout * cin * k * k, scale),
        bias: uniform_vec(rng, cout, 0.1),
    })
}

pub fn dense(rng: &mut RngStream, inputs: usize, outputs: usize) -> Layer {
    Layer::Dense(Dense {
        inputs,
        outputs,
        weight: uniform_vec(rng, inputs * outputs, 1.0 / (inputs as f64).sqrt()),
        bias: uniform_vec(rng, outputs, 0.1),
    })
}

/// Five structurally different small CNNs on 6x6x3 input.
pub fn tiny_cnn(seed: u64) -> Model {
    let mut rng = RngStream::new(seed);
    let layers = match seed % 5 {
        0 => vec![
            conv(&mut rng, 3, 4, 3, 1, Padding::Same),
            Layer::Relu,
            Layer::MaxPool2d { size: 2, stride: 2 },
            Layer::Flatten,
            dense(&mut rng, 36, 3),
            Layer::Softmax,
        ],
        1 => vec![
            conv(&mut rng, 3, 5, 3, 1, Padding::Valid),
            Layer::Relu,
            conv(&mut rng, 5, 4, 3, 2, Padding::Same),
            Layer::Relu,
            Layer::GlobalAvgPool,
            dense(&mut rng, 4, 3),
        ],
        2 => vec![
            conv(&mut rng, 3, 3, 1, 1, Padding::Valid),
            Layer::Relu,
            Layer::Flatten,
            dense(&mut rng, 108, 6),
            Layer::Relu,
            Layer::Dropout { rate: 0.5 },
            dense(&mut rng, 6, 4),
            Layer::Softmax,
        ],
        3 => vec![
            conv(&mut rng, 3, 4, 2, 2, Padding::Valid),
            Layer::Relu,
            Layer::MaxPool2d { size: 3, stride: 1 },
            Layer::Flatten,
            dense(&mut rng, 4, 3),
        ],
        _ => vec![
            conv(&mut rng, 3, 2, 3, 1, Padding::Same),
            Layer::Relu,
            conv(&mut rng, 2, 3, 3, 1, Padding::Same),
            Layer::GlobalAvgPool,
            dense(&mut rng, 3, 5),
            Layer::Softmax,
        ],
    };
    let pre = Preprocessing {
        mean: vec![0.4, 0.5, 0.45],
        std: vec![0.3, 0.25, 0.2],
    };
    Model::new([6, 6, 3], layers_classes(&layers), pre, layers).unwrap()
}

pub fn layers_classes(layers: &[Layer]) -> usize {
    layers
        .iter()
        .rev()
        .find_map(|l| match l {
            Layer::Dense(d) => Some(d.outputs),
            _ => None,
        })
        .unwrap()
}

pub fn interior_image(rng: &mut RngStream, h: usize, w: usize, c: usize) -> Image {
    Image::from_fn(h, w, c, |_, _, _| rng.uniform(0.05, 0.95)).unwrap()
}

pub fn objective_value(model: &Model, img: &Image, obj: &Objective) -> f64 {
    let p = model.forward(img).unwrap();
    match obj {
        Objective::LogProb(k) => p.get(*k).ln(),
        Objective::KlFrom(q) => kl_divergence(q, &p).unwrap(),
    }
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-7 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

pub fn mean_ce(model: &Model, batch: &[(&Image, usize)]) -> f64 {
    batch
        .iter()
        .map(|(img, y)| -model.forward(img).unwrap().get(*y).ln())
        .sum::<f64>()
        / batch.len() as f64
}

pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in p.iter().enumerate() {
        if *v > p[best] {
            best = i;
        }
    }
    best
}

/// Predicts class 0 when the left half is brighter, class 1 otherwise.
pub fn mirror_model(side: usize) -> Model {
    let n = side * side;
    let mut weight = vec![0.0; 2 * n];
    for i in 0..side {
        for j in 0..side {
            let s = if j < side / 2 { 1.0 } else { -1.0 };
            weight[i * side + j] = s;
            weight[n + i * side + j] = -s;
        }
    }
    Model::new(
        [side, side, 1],
        2,
        Preprocessing::identity(1),
        vec![Layer::Flatten, Layer::Dense(Dense { inputs: n, outputs: 2, weight, bias: vec![0.0; 2] }), Layer::Softmax],
    )
    .unwrap()
}
