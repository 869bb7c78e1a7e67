mod oracles;

use genaug::augment::RngStream;
use genaug::nn::{load_model, save_model, Conv2d, Dense, Layer, Model, Objective, Padding, Preprocessing, ProbVector};
use genaug::tensor::Image;
use oracles::*;

#[test]
fn input_gradient_matches_finite_differences() {
    let h = 1e-5;
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    for seed in 0..5 {
        let model = tiny_cnn(seed);
        let mut rng = RngStream::new(100 + seed);
        for trial in 0..4 {
            let img = interior_image(&mut rng, 6, 6, 3);
            let obj = if trial % 2 == 0 {
                Objective::LogProb(rng.below(model.num_classes()))
            } else {
                let q: Vec<f64> = (0..model.num_classes()).map(|_| rng.uniform(0.1, 1.0)).collect();
                let s: f64 = q.iter().sum();
                Objective::KlFrom(ProbVector::new(q.iter().map(|v| v / s).collect()).unwrap())
            };
            let grad = model.input_gradient(&img, &obj).unwrap();
            for _ in 0..6 {
                let idx = rng.below(img.data().len());
                let mut plus = img.data().to_vec();
                let mut minus = img.data().to_vec();
                plus[idx] += h;
                minus[idx] -= h;
                let fp = objective_value(&model, &Image::new(6, 6, 3, plus).unwrap(), &obj);
                let fm = objective_value(&model, &Image::new(6, 6, 3, minus).unwrap(), &obj);
                let numeric = (fp - fm) / (2.0 * h);
                let e = rel_err(grad.data()[idx], numeric);
                worst = worst.max(e);
                assert!(e <= 1e-3, "seed {seed} idx {idx}: {} vs {numeric}", grad.data()[idx]);
                checked += 1;
            }
        }
    }
    assert!(checked >= 100, "{checked}");
    assert!(worst <= 1e-3);
}

#[test]
fn weight_gradients_match_finite_differences() {
    let h = 1e-5;
    let mut checked = 0;
    for seed in 0..5 {
        let model = tiny_cnn(seed);
        let mut rng = RngStream::new(200 + seed);
        let images: Vec<Image> = (0..3).map(|_| interior_image(&mut rng, 6, 6, 3)).collect();
        let batch: Vec<(&Image, usize)> = images
            .iter()
            .map(|im| (im, rng.below(model.num_classes())))
            .collect();
        let grads = model.weight_gradients(&batch).unwrap().flat();
        let params = model.parameters();
        assert_eq!(grads.len(), params.len());
        for _ in 0..12 {
            let idx = rng.below(params.len());
            let mut probe = model.clone();
            let mut p = params.clone();
            p[idx] += h;
            probe.set_parameters(&p).unwrap();
            let fp = mean_ce(&probe, &batch);
            p[idx] -= 2.0 * h;
            probe.set_parameters(&p).unwrap();
            let fm = mean_ce(&probe, &batch);
            let numeric = (fp - fm) / (2.0 * h);
            assert!(
                rel_err(grads[idx], numeric) <= 1e-3,
                "seed {seed} param {idx}: {} vs {numeric}",
                grads[idx]
            );
            checked += 1;
        }
    }
    assert!(checked >= 50);
}

#[test]
fn linear_softmax_gradient_closed_form() {
    let mut rng = RngStream::new(7);
    let (n, k) = (12, 4);
    let w = uniform_vec(&mut rng, n * k, 1.0);
    let b = uniform_vec(&mut rng, k, 0.5);
    let model = Model::new(
        [2, 2, 3],
        k,
        Preprocessing { mean: vec![0.5; 3], std: vec![0.5; 3] },
        vec![
            Layer::Flatten,
            Layer::Dense(Dense { inputs: n, outputs: k, weight: w.clone(), bias: b.clone() }),
        ],
    )
    .unwrap();
    let img = interior_image(&mut rng, 2, 2, 3);
    let x: Vec<f64> = img.data().iter().map(|v| (v - 0.5) / 0.5).collect();
    let z: Vec<f64> = (0..k).map(|r| b[r] + (0..n).map(|c| w[r * n + c] * x[c]).sum::<f64>()).collect();
    let zmax = z.iter().cloned().fold(f64::MIN, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - zmax).exp()).collect();
    let s: f64 = e.iter().sum();
    let p: Vec<f64> = e.iter().map(|v| v / s).collect();

    // d log p_t / dx = (W_t - sum_r p_r W_r) / std
    let t = 2;
    let grad = model.input_gradient(&img, &Objective::LogProb(t)).unwrap();
    for c in 0..n {
        let want = (w[t * n + c] - (0..k).map(|r| p[r] * w[r * n + c]).sum::<f64>()) / 0.5;
        assert!((grad.data()[c] - want).abs() < 1e-12);
    }

    // d KL(q || p) / dx = W^T (p - q) / std
    let q = ProbVector::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
    let grad = model.input_gradient(&img, &Objective::KlFrom(q.clone())).unwrap();
    for c in 0..n {
        let want = (0..k).map(|r| (p[r] - q.get(r)) * w[r * n + c]).sum::<f64>() / 0.5;
        assert!((grad.data()[c] - want).abs() < 1e-12);
    }
}

/// Straight-line forward for conv(3x3 valid, 1->3) + relu + flatten + dense.
#[test]
fn forward_matches_straight_line_reference() {
    let mut rng = RngStream::new(11);
    let wc = uniform_vec(&mut rng, 3 * 9, 0.5);
    let bc = uniform_vec(&mut rng, 3, 0.1);
    let wd = uniform_vec(&mut rng, 2 * 12, 0.5);
    let bd = uniform_vec(&mut rng, 2, 0.1);
    let model = Model::new(
        [4, 4, 1],
        2,
        Preprocessing::identity(1),
        vec![
            Layer::Conv2d(Conv2d {
                in_channels: 1,
                out_channels: 3,
                kernel_h: 3,
                kernel_w: 3,
                stride: 1,
                padding: Padding::Valid,
                weight: wc.clone(),
                bias: bc.clone(),
            }),
            Layer::Relu,
            Layer::Flatten,
            Layer::Dense(Dense { inputs: 12, outputs: 2, weight: wd.clone(), bias: bd.clone() }),
            Layer::Softmax,
        ],
    )
    .unwrap();
    let img = interior_image(&mut rng, 4, 4, 1);
    let x = |i: usize, j: usize| img.get(i, j, 0);
    let mut act = Vec::new();
    for i in 0..2 {
        for j in 0..2 {
            for o in 0..3 {
                let mut s = bc[o];
                for a in 0..3 {
                    for b in 0..3 {
                        s += wc[o * 9 + a * 3 + b] * x(i + a, j + b);
                    }
                }
                act.push(s.max(0.0));
            }
        }
    }
    let z: Vec<f64> = (0..2).map(|r| bd[r] + (0..12).map(|c| wd[r * 12 + c] * act[c]).sum::<f64>()).collect();
    let p0 = 1.0 / (1.0 + (z[1] - z[0]).exp());
    let p = model.forward(&img).unwrap();
    assert!((p.get(0) - p0).abs() <= 1e-9);
    assert!((p.get(1) - (1.0 - p0)).abs() <= 1e-9);
}

#[test]
fn dropout_is_exact_identity() {
    let with = tiny_cnn(2);
    let layers: Vec<Layer> = with
        .layers()
        .iter()
        .filter(|l| !matches!(l, Layer::Dropout { .. }))
        .cloned()
        .collect();
    let without = Model::new([6, 6, 3], 4, with.preprocessing().clone(), layers).unwrap();
    let mut rng = RngStream::new(3);
    for _ in 0..10 {
        let img = interior_image(&mut rng, 6, 6, 3);
        assert_eq!(with.forward(&img).unwrap(), without.forward(&img).unwrap());
    }
}

#[test]
fn forward_is_a_distribution() {
    let mut rng = RngStream::new(4);
    for seed in 0..5 {
        let m = tiny_cnn(seed);
        let p = m.forward(&interior_image(&mut rng, 6, 6, 3)).unwrap();
        assert!((p.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

const MLP_MANIFEST: &str = r#"{
  "input_shape": [2, 2, 1],
  "num_classes": 8,
  "preprocessing": {"mean": [0.0], "std": [1.0]},
  "layers": [
    {"type": "flatten"},
    {"type": "dense", "inputs": 4, "outputs": 4},
    {"type": "relu"},
    {"type": "dense", "inputs": 4, "outputs": 8},
    {"type": "softmax"}
  ],
  "weights_file": "mlp.bin",
  "weight_dtype": "f32le"
}"#;

fn blob(n: usize) -> Vec<u8> {
    (0..n).flat_map(|i| (i as f32 * 0.01 - 0.3).to_le_bytes()).collect()
}

#[test]
fn mlp_manifest_loads_and_rejects_short_blob() {
    let m = Model::from_manifest_bytes(MLP_MANIFEST.as_bytes(), &blob(60)).unwrap();
    assert_eq!(m.parameter_count(), 60);
    let err = Model::from_manifest_bytes(MLP_MANIFEST.as_bytes(), &blob(59)).unwrap_err();
    assert!(err.to_string().contains("layer 3 (dense)"), "{err}");
    assert!(Model::from_manifest_bytes(MLP_MANIFEST.as_bytes(), &blob(61)).is_err());
}

#[test]
fn save_load_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    for seed in 0..5 {
        let mut m = tiny_cnn(seed).with_logit_scale(1.5).unwrap();
        m.round_to_f32();
        let path = dir.path().join(format!("m{seed}.json"));
        save_model(&m, &path).unwrap();
        let back = load_model(&path).unwrap();
        let a: Vec<u64> = m.parameters().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = back.parameters().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
        assert_eq!(back, m);
    }
}
