use std::collections::BTreeMap;

use genaug::augment::RngStream;
use genaug::eval::{cmi_score, evaluate_zoo, generalization_gap, join_reports, kendall_tau, pair_signs, ZooEntry};
use genaug::metric::MetricReport;
use genaug::zoo::{ZooManifest, ZooManifestEntry};
use serde_json::Value;

fn entry(id: &str, hp: &[(&str, &str)], train: f64, test: f64, phi: f64) -> ZooEntry {
    ZooEntry {
        model_id: id.into(),
        hyperparameters: hp.iter().map(|(a, v)| (a.to_string(), v.to_string())).collect(),
        train_accuracy: train,
        test_accuracy: test,
        metric_value: phi,
    }
}

/// Values from tests/oracles/cmi_fixture.py.
fn fixture() -> Vec<ZooEntry> {
    vec![
        entry("m0", &[("a", "0"), ("b", "0")], 1.00, 0.90, -1.0),
        entry("m1", &[("a", "0"), ("b", "1")], 1.00, 0.70, -2.5),
        entry("m2", &[("a", "1"), ("b", "0")], 0.95, 0.80, -1.2),
        entry("m3", &[("a", "1"), ("b", "1")], 0.90, 0.55, -3.0),
        entry("m4", &[("a", "0"), ("b", "0")], 0.98, 0.75, -0.8),
        entry("m5", &[("a", "1"), ("b", "1")], 0.99, 0.85, -2.0),
    ]
}

#[test]
fn six_model_fixture_matches_contingency_oracle() {
    let s = cmi_score(&fixture(), 1).unwrap();
    assert!((s.per_subset["a"] - 0.22574643220836701).abs() <= 1e-12);
    assert!((s.per_subset["b"] - 0.25199197668859546).abs() <= 1e-12);
    assert!((s.score - 0.22574643220836701).abs() <= 1e-12);
    assert_eq!(s.groups_dropped.values().sum::<usize>(), 0);
    assert_eq!(pair_signs(&fixture()).pairs.len(), 15);
}

/// 3 binary axes x `reps` replicates with random accuracies.
fn random_zoo(seed: u64, reps: usize) -> Vec<ZooEntry> {
    let mut rng = RngStream::new(seed);
    let mut zoo = Vec::new();
    for cell in 0..8 {
        for r in 0..reps {
            let hp = [
                ("lr", if cell & 1 == 0 { "0.1" } else { "0.01" }),
                ("bs", if cell & 2 == 0 { "8" } else { "32" }),
                ("noise", if cell & 4 == 0 { "0" } else { "0.4" }),
            ];
            let train = rng.uniform(0.7, 1.0);
            let test = rng.uniform(0.3, 0.7);
            zoo.push(entry(&format!("c{cell}r{r}"), &hp, train, test, 0.0));
        }
    }
    for e in &mut zoo {
        e.metric_value = -generalization_gap(e);
    }
    zoo
}

#[test]
fn metric_equal_to_negated_gap_scores_one() {
    for k in 0..3 {
        let s = cmi_score(&random_zoo(1, 2), k).unwrap();
        assert!((s.score - 1.0).abs() <= 1e-9, "k {k}: {}", s.score);
        assert!(s.per_subset.values().all(|v| (v - 1.0).abs() <= 1e-9));
    }
}

#[test]
fn permuted_metric_scores_near_zero() {
    for seed in 0..5 {
        let mut zoo = random_zoo(10 + seed, 12);
        let mut phi: Vec<f64> = zoo.iter().map(|e| e.metric_value).collect();
        RngStream::new(seed).shuffle(&mut phi);
        for (e, p) in zoo.iter_mut().zip(phi) {
            e.metric_value = p;
        }
        let s = cmi_score(&zoo, 1).unwrap();
        assert!(s.score <= 0.05, "seed {seed}: {}", s.score);
    }
}

#[test]
fn independent_signs_give_zero() {
    // each of the four sign combinations occurs in exactly 7 of the 28 pairs
    let gaps = [4, 3, 2, 1, 6, 7, 0, 5];
    let phis = [7, 3, 5, 0, 1, 2, 4, 6];
    let zoo: Vec<ZooEntry> = (0..8)
        .map(|i| entry(&format!("m{i}"), &[("x", "0")], 1.0, 1.0 - 0.1 * gaps[i] as f64, phis[i] as f64))
        .collect();
    let mut table = BTreeMap::new();
    for &(_, _, a, b) in &pair_signs(&zoo).pairs {
        *table.entry((a, b)).or_insert(0) += 1;
    }
    assert_eq!(table.len(), 4);
    assert!(table.values().all(|&c| c == 7));
    assert_eq!(cmi_score(&zoo, 0).unwrap().score, 0.0);
}

#[test]
fn monotone_transform_invariance_is_exact() {
    let mut rng = RngStream::new(3);
    for seed in 0..5 {
        let mut zoo = random_zoo(20 + seed, 3);
        for e in &mut zoo {
            e.metric_value = rng.uniform(-10.0, 0.0);
        }
        let base = cmi_score(&zoo, 2).unwrap();
        let transforms: [fn(f64) -> f64; 3] = [|v| v.exp(), |v| 3.0 * v * v * v + v - 7.0, |v| (v - 20.0).atan()];
        for t in transforms {
            let mapped: Vec<ZooEntry> = zoo
                .iter()
                .map(|e| ZooEntry { metric_value: t(e.metric_value), ..e.clone() })
                .collect();
            assert_eq!(cmi_score(&mapped, 2).unwrap(), base);
        }
    }
}

#[test]
fn independent_of_entry_order() {
    let zoo = random_zoo(4, 3);
    let mut zoo_b: Vec<ZooEntry> = zoo.clone();
    for e in &mut zoo_b {
        e.metric_value += (e.train_accuracy * 13.0).sin() * 0.05;
    }
    let base = cmi_score(&zoo_b, 1).unwrap();
    let mut shuffled = zoo_b.clone();
    RngStream::new(1).shuffle(&mut shuffled);
    let other = cmi_score(&shuffled, 1).unwrap();
    assert!((base.score - other.score).abs() <= 1e-12);
    for (k, v) in &base.per_subset {
        assert!((v - other.per_subset[k]).abs() <= 1e-12);
    }
}

#[test]
fn breakdown_has_one_entry_per_subset() {
    let zoo = random_zoo(5, 2);
    assert_eq!(cmi_score(&zoo, 1).unwrap().per_subset.len(), 3);
    let s = cmi_score(&zoo, 2).unwrap();
    assert_eq!(s.per_subset.keys().cloned().collect::<Vec<_>>(), ["bs,noise", "lr,bs", "lr,noise"]);
    assert_eq!(s.score, s.per_subset.values().cloned().fold(f64::INFINITY, f64::min));
    assert!(cmi_score(&zoo, 3).is_err());
}

#[test]
fn sparse_groups_are_dropped_and_reported() {
    let mut zoo = fixture();
    zoo.push(entry("m6", &[("a", "2"), ("b", "0")], 0.97, 0.60, -2.2));
    let s = cmi_score(&zoo, 1).unwrap();
    // a = 2 appears once, so the (2, 2) group never forms; (0, 2) and (1, 2) have 3 pairs each
    assert_eq!(s.groups_dropped["a"], 0);
    let lone = vec![
        entry("x", &[("a", "0"), ("b", "0")], 1.0, 0.9, -1.0),
        entry("y", &[("a", "1"), ("b", "1")], 1.0, 0.8, -2.0),
    ];
    assert!(cmi_score(&lone, 1).is_err());
}

fn pair_oracle(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    let (mut con, mut dis, mut tx, mut ty) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let dx = x[i] - x[j];
            let dy = y[i] - y[j];
            if dx == 0.0 && dy == 0.0 {
                tx += 1;
                ty += 1;
            } else if dx == 0.0 {
                tx += 1;
            } else if dy == 0.0 {
                ty += 1;
            } else if (dx > 0.0) == (dy > 0.0) {
                con += 1;
            } else {
                dis += 1;
            }
        }
    }
    let n0 = (n * (n - 1) / 2) as i64;
    (con - dis) as f64 / (((n0 - tx) as f64) * ((n0 - ty) as f64)).sqrt()
}

#[test]
fn kendall_matches_pair_oracle() {
    let mut rng = RngStream::new(6);
    for trial in 0..200 {
        let n = 2 + rng.below(30);
        let levels = if trial % 2 == 0 { 4 } else { 1000 };
        let x: Vec<f64> = (0..n).map(|_| rng.below(levels) as f64).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.below(levels) as f64 * 0.5).collect();
        match kendall_tau(&x, &y) {
            Ok(t) => assert_eq!(t, pair_oracle(&x, &y), "{x:?} {y:?}"),
            Err(_) => assert!(x.iter().all(|v| *v == x[0]) || y.iter().all(|v| *v == y[0])),
        }
    }
    let x: Vec<f64> = (0..10).map(|i| (i * 7 % 10) as f64).collect();
    assert_eq!(kendall_tau(&x, &x).unwrap(), 1.0);
    let neg: Vec<f64> = x.iter().map(|v| -v).collect();
    let y: Vec<f64> = (0..10).map(|i| (i * 3 % 10) as f64).collect();
    assert_eq!(kendall_tau(&neg, &y).unwrap(), -kendall_tau(&x, &y).unwrap());
}

fn manifest_and_reports(zoo: &[ZooEntry]) -> (ZooManifest, Vec<MetricReport>) {
    let axes: Vec<String> = zoo[0].hyperparameters.iter().map(|(a, _)| a.clone()).collect();
    let entries = zoo
        .iter()
        .map(|e| ZooManifestEntry {
            model_id: e.model_id.clone(),
            path: format!("models/{}.json", e.model_id),
            hparams: e.hyperparameters.iter().map(|(a, v)| (a.clone(), Value::String(v.clone()))).collect(),
            train_acc: e.train_accuracy,
            test_acc: e.test_accuracy,
            seed: None,
        })
        .collect();
    let reports = zoo
        .iter()
        .map(|e| MetricReport {
            format_version: 1,
            model_id: Some(e.model_id.clone()),
            seed: 0,
            samples_requested: 10,
            samples_scored: 10,
            truncated: false,
            phi_total: e.metric_value * 10.0,
            phi_per_sample: e.metric_value,
            per_augmentation: vec![],
        })
        .collect();
    (ZooManifest { format_version: 1, axes, entries }, reports)
}

#[test]
fn evaluate_matches_manual_composition() {
    let mut zoo = random_zoo(7, 1);
    zoo.extend(random_zoo(8, 1).into_iter().take(4).map(|mut e| {
        e.model_id.push('b');
        e
    }));
    assert_eq!(zoo.len(), 12);
    let (manifest, reports) = manifest_and_reports(&zoo);
    let report = evaluate_zoo(&manifest, &reports, 1).unwrap();
    let joined = join_reports(&manifest, &reports).unwrap();
    assert_eq!(joined, zoo);
    assert_eq!(report.cmi.as_ref(), Some(&cmi_score(&zoo, 1).unwrap()));
    let phi: Vec<f64> = zoo.iter().map(|e| e.metric_value).collect();
    let gaps: Vec<f64> = zoo.iter().map(generalization_gap).collect();
    assert_eq!(report.kendall_tau, Some(kendall_tau(&phi, &gaps).unwrap()));
    let signs = pair_signs(&zoo);
    assert_eq!(report.n_pairs_used, signs.pairs.len());
    assert_eq!(report.ties_discarded, signs.ties_discarded);
    assert_eq!(report.n_models, 12);
    for (row, e) in report.gap_table.iter().zip(&zoo) {
        assert_eq!(row.gap, generalization_gap(e));
        assert_eq!(row.phi, e.metric_value);
    }
}

#[test]
fn two_model_zoo_has_one_pair() {
    let zoo = vec![
        entry("x", &[("a", "0"), ("b", "0")], 1.0, 0.9, -1.0),
        entry("y", &[("a", "1"), ("b", "1")], 1.0, 0.8, -2.0),
    ];
    let (manifest, reports) = manifest_and_reports(&zoo);
    let report = evaluate_zoo(&manifest, &reports, 0).unwrap();
    assert_eq!(report.n_pairs_used, 1);
    assert!(report.cmi.is_none() && report.cmi_unavailable.is_some());
}

#[test]
fn missing_and_duplicate_reports() {
    let zoo = fixture();
    let (manifest, mut reports) = manifest_and_reports(&zoo);
    let dropped = reports.remove(3);
    let err = evaluate_zoo(&manifest, &reports, 1).unwrap_err();
    assert!(err.to_string().contains("m3"), "{err}");
    reports.push(dropped.clone());
    reports.push(dropped);
    assert!(evaluate_zoo(&manifest, &reports, 1).is_err());
}

#[test]
fn gap_examples() {
    assert!((generalization_gap(&entry("a", &[], 1.0, 0.8, 0.0)) - 0.2).abs() < 1e-15);
    let zoo = fixture();
    let want = [0.1, 0.3, 0.15, 0.35, 0.23, 0.14];
    for (e, w) in zoo.iter().zip(want) {
        assert!((generalization_gap(e) - w).abs() < 1e-12);
    }
}
