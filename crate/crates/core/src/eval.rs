//! Zoo-level evaluation of a complexity measure: generalization gaps, Kendall's
//! tau and the conditional mutual information score.
//!
//! For every unordered model pair the sign of the difference in the measure and
//! the sign of the difference in the gap are compared. Pairs are grouped by
//! the hyperparameter values both models take on a subset of axes, the mutual
//! information between the two signs is estimated within each group and
//! normalized by the entropy of the gap sign. The score is the minimum over all
//! axis subsets of the requested size.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::metric::MetricReport;
use crate::zoo::{hparam_key, ZooManifest};

pub const EVAL_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_K: usize = 2;
pub const SIGN_CONVENTION: &str =
    "phi <= 0; a more negative phi predicts a larger gap (train_acc - test_acc)";

#[derive(Debug, Clone, PartialEq)]
pub struct ZooEntry {
    pub model_id: String,
    /// Axis name and value, in axis order.
    pub hyperparameters: Vec<(String, String)>,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub metric_value: f64,
}

impl ZooEntry {
    pub fn validate(&self) -> Result<()> {
        for (name, acc) in [("train", self.train_accuracy), ("test", self.test_accuracy)] {
            if !(0.0..=1.0).contains(&acc) {
                return Err(Error::Evaluation(format!(
                    "{}: {name} accuracy {acc} outside [0, 1]",
                    self.model_id
                )));
            }
        }
        if !self.metric_value.is_finite() {
            return Err(Error::Evaluation(format!("{}: metric value is not finite", self.model_id)));
        }
        Ok(())
    }
}

pub fn generalization_gap(entry: &ZooEntry) -> f64 {
    entry.train_accuracy - entry.test_accuracy
}

/// Kendall's tau-b in O(n log n). Errors when either sequence is constant.
pub fn kendall_tau(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Evaluation(format!(
            "kendall_tau: lengths {} and {} differ",
            x.len(),
            y.len()
        )));
    }
    let n = x.len();
    if n < 2 {
        return Err(Error::Evaluation("kendall_tau needs at least 2 values".into()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Evaluation("kendall_tau: non-finite value".into()));
    }
    let cmp = |a: f64, b: f64| a.partial_cmp(&b).expect("finite");
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| cmp(x[a], x[b]).then(cmp(y[a], y[b])));

    let pairs = |t: i64| t * (t - 1) / 2;
    let n0 = pairs(n as i64);
    let (mut n1, mut n3) = (0i64, 0i64);
    let (mut run_x, mut run_xy) = (1i64, 1i64);
    for w in idx.windows(2) {
        let (a, b) = (w[0], w[1]);
        if x[a] == x[b] {
            run_x += 1;
            if y[a] == y[b] {
                run_xy += 1;
            } else {
                n3 += pairs(run_xy);
                run_xy = 1;
            }
        } else {
            n1 += pairs(run_x);
            n3 += pairs(run_xy);
            run_x = 1;
            run_xy = 1;
        }
    }
    n1 += pairs(run_x);
    n3 += pairs(run_xy);

    let mut ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
    let swaps = merge_count(&mut ys) as i64;
    let mut n2 = 0i64;
    let mut run_y = 1i64;
    for w in ys.windows(2) {
        if w[0] == w[1] {
            run_y += 1;
        } else {
            n2 += pairs(run_y);
            run_y = 1;
        }
    }
    n2 += pairs(run_y);

    let denom = ((n0 - n1) as f64) * ((n0 - n2) as f64);
    if denom == 0.0 {
        return Err(Error::Evaluation("kendall_tau undefined for a constant sequence".into()));
    }
    let s = n0 - n1 - n2 + n3 - 2 * swaps;
    Ok((s as f64 / denom.sqrt()).clamp(-1.0, 1.0))
}

/// Sorts ascending and returns the number of strict inversions.
fn merge_count(v: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut count = merge_count(&mut v[..mid]) + merge_count(&mut v[mid..]);
    let mut merged = Vec::with_capacity(n);
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[j] < v[i] {
            merged.push(v[j]);
            count += (mid - i) as u64;
            j += 1;
        } else {
            merged.push(v[i]);
            i += 1;
        }
    }
    merged.extend_from_slice(&v[i..mid]);
    merged.extend_from_slice(&v[j..]);
    v.copy_from_slice(&merged);
    count
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmiScore {
    pub score: f64,
    pub k: usize,
    /// Normalized conditional MI per axis subset; keys are comma-joined axis
    /// names, or `unconditional` for k = 0.
    pub per_subset: BTreeMap<String, f64>,
    /// Groups with fewer than 2 usable pairs, per subset.
    pub groups_dropped: BTreeMap<String, usize>,
}

/// Usable pair signs plus the number of pairs discarded for a zero difference.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSigns {
    /// `(i, j, sign of metric difference, sign of gap difference)` with `i < j`.
    pub pairs: Vec<(usize, usize, i8, i8)>,
    pub ties_discarded: usize,
}

fn sign(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

pub fn pair_signs(zoo: &[ZooEntry]) -> PairSigns {
    let gaps: Vec<f64> = zoo.iter().map(generalization_gap).collect();
    let mut pairs = Vec::new();
    let mut ties_discarded = 0;
    for i in 0..zoo.len() {
        for j in i + 1..zoo.len() {
            let sm = sign(zoo[i].metric_value - zoo[j].metric_value);
            let sg = sign(gaps[i] - gaps[j]);
            if sm == 0 || sg == 0 {
                ties_discarded += 1;
            } else {
                pairs.push((i, j, sm, sg));
            }
        }
    }
    PairSigns { pairs, ties_discarded }
}

/// All size-`k` index subsets of `0..n`, lexicographic.
fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}

fn entropy(counts: &[f64], total: f64) -> f64 {
    counts
        .iter()
        .filter(|&&c| c > 0.0)
        .map(|&c| {
            let p = c / total;
            -p * p.log2()
        })
        .sum()
}

/// Conditional MI and conditional entropy of the gap sign for one subset.
/// Sorted pair of hyperparameter value tuples.
type GroupKey<'a> = (Vec<&'a str>, Vec<&'a str>);

fn subset_cmi(zoo: &[ZooEntry], signs: &PairSigns, subset: &[usize]) -> (Option<(f64, f64)>, usize) {
    let tuple = |m: usize| -> Vec<&str> {
        subset.iter().map(|&a| zoo[m].hyperparameters[a].1.as_str()).collect()
    };
    // joint counts indexed [metric sign][gap sign], 0 = negative; every pair adds 2
    let mut groups: HashMap<GroupKey, [[u64; 2]; 2]> = HashMap::new();
    for &(i, j, sm, sg) in &signs.pairs {
        let (ti, tj) = (tuple(i), tuple(j));
        let (m, g) = (usize::from(sm > 0), usize::from(sg > 0));
        match ti.cmp(&tj) {
            Ordering::Less => groups.entry((ti, tj)).or_default()[m][g] += 2,
            Ordering::Greater => groups.entry((tj, ti)).or_default()[1 - m][1 - g] += 2,
            Ordering::Equal => {
                let c = groups.entry((ti, tj)).or_default();
                c[m][g] += 1;
                c[1 - m][1 - g] += 1;
            }
        }
    }
    let mut kept: Vec<_> = groups.into_iter().collect();
    kept.sort_by(|a, b| a.0.cmp(&b.0));
    let before = kept.len();
    kept.retain(|(_, c)| c.iter().flatten().sum::<u64>() >= 4);
    let dropped = before - kept.len();
    let total: u64 = kept.iter().map(|(_, c)| c.iter().flatten().sum::<u64>()).sum();
    if total == 0 {
        return (None, dropped);
    }
    let (mut mi, mut h) = (0.0, 0.0);
    for (_, c) in &kept {
        let n = c.iter().flatten().sum::<u64>() as f64;
        let pm = [(c[0][0] + c[0][1]) as f64, (c[1][0] + c[1][1]) as f64];
        let pg = [(c[0][0] + c[1][0]) as f64, (c[0][1] + c[1][1]) as f64];
        let joint: Vec<f64> = c.iter().flatten().map(|&v| v as f64).collect();
        let group_mi = entropy(&pm, n) + entropy(&pg, n) - entropy(&joint, n);
        let weight = n / total as f64;
        mi += weight * group_mi;
        h += weight * entropy(&pg, n);
    }
    (Some((mi, h)), dropped)
}

pub fn cmi_score(zoo: &[ZooEntry], k: usize) -> Result<CmiScore> {
    if zoo.len() < 2 {
        return Err(Error::Evaluation("CMI needs at least 2 models".into()));
    }
    let axes: Vec<&str> = zoo[0].hyperparameters.iter().map(|(a, _)| a.as_str()).collect();
    let mut ids = BTreeSet::new();
    for e in zoo {
        e.validate()?;
        if !ids.insert(e.model_id.as_str()) {
            return Err(Error::Evaluation(format!("duplicate model_id {:?}", e.model_id)));
        }
        if !e.hyperparameters.iter().map(|(a, _)| a.as_str()).eq(axes.iter().copied()) {
            return Err(Error::Evaluation(format!(
                "{}: hyperparameter axes differ from {axes:?}",
                e.model_id
            )));
        }
    }
    if k >= axes.len() {
        return Err(Error::Evaluation(format!(
            "conditioning size {k} must be below the number of axes ({})",
            axes.len()
        )));
    }
    let signs = pair_signs(zoo);
    if signs.pairs.is_empty() {
        return Err(Error::InsufficientPairs("every model pair is tied".into()));
    }
    let subsets = combinations(axes.len(), k);
    let results: Vec<_> = subsets
        .par_iter()
        .map(|s| subset_cmi(zoo, &signs, s))
        .collect();

    let mut per_subset = BTreeMap::new();
    let mut groups_dropped = BTreeMap::new();
    let mut score = f64::INFINITY;
    for (subset, (est, dropped)) in subsets.iter().zip(results) {
        let name = if subset.is_empty() {
            "unconditional".to_string()
        } else {
            subset.iter().map(|&a| axes[a]).collect::<Vec<_>>().join(",")
        };
        let (mi, h) = est.ok_or_else(|| {
            Error::InsufficientPairs(format!(
                "conditioning on {name}, every group has fewer than 2"
            ))
        })?;
        let value = if h > 0.0 { (mi / h).clamp(0.0, 1.0) } else { 1.0 };
        score = score.min(value);
        per_subset.insert(name.clone(), value);
        groups_dropped.insert(name, dropped);
    }
    Ok(CmiScore { score, k, per_subset, groups_dropped })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub model_id: String,
    pub hparams: BTreeMap<String, Value>,
    pub train_acc: f64,
    pub test_acc: f64,
    pub gap: f64,
    pub phi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub format_version: u32,
    /// Null when too few untied pairs survive grouping; see `cmi_unavailable`.
    pub cmi: Option<CmiScore>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cmi_unavailable: Option<String>,
    /// Between phi and gap; null when either is constant.
    pub kendall_tau: Option<f64>,
    pub n_models: usize,
    pub n_pairs_used: usize,
    pub ties_discarded: usize,
    pub sign_convention: String,
    pub gap_table: Vec<GapRow>,
}

impl EvalReport {
    pub fn to_json_string(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

/// Builds evaluation entries by joining `reports` (matched on `model_id`) to the
/// manifest. The metric value is `phi_per_sample`.
pub fn join_reports(manifest: &ZooManifest, reports: &[MetricReport]) -> Result<Vec<ZooEntry>> {
    let mut by_id: BTreeMap<&str, &MetricReport> = BTreeMap::new();
    for r in reports {
        let id = r
            .model_id
            .as_deref()
            .ok_or_else(|| Error::Evaluation("metric report without model_id".into()))?;
        if by_id.insert(id, r).is_some() {
            return Err(Error::Evaluation(format!("duplicate report for model_id {id:?}")));
        }
    }
    let mut seen = BTreeSet::new();
    let mut entries = Vec::with_capacity(manifest.entries.len());
    for e in &manifest.entries {
        if !seen.insert(e.model_id.as_str()) {
            return Err(Error::Evaluation(format!("duplicate model_id {:?}", e.model_id)));
        }
        let report = by_id
            .remove(e.model_id.as_str())
            .ok_or_else(|| Error::Evaluation(format!("missing metric report for model_id {:?}", e.model_id)))?;
        let hyperparameters = manifest
            .axes
            .iter()
            .map(|a| {
                let v = e.hparams.get(a).ok_or_else(|| {
                    Error::Evaluation(format!("{}: no value for axis {a:?}", e.model_id))
                })?;
                Ok((a.clone(), hparam_key(v)))
            })
            .collect::<Result<Vec<_>>>()?;
        entries.push(ZooEntry {
            model_id: e.model_id.clone(),
            hyperparameters,
            train_accuracy: e.train_acc,
            test_accuracy: e.test_acc,
            metric_value: report.phi_per_sample,
        });
    }
    if let Some(extra) = by_id.keys().next() {
        return Err(Error::Evaluation(format!("report for model_id {extra:?} not in the zoo")));
    }
    Ok(entries)
}

pub fn evaluate_zoo(manifest: &ZooManifest, reports: &[MetricReport], k: usize) -> Result<EvalReport> {
    let entries = join_reports(manifest, reports)?;
    if k >= manifest.axes.len() {
        return Err(Error::Evaluation(format!(
            "conditioning size {k} must be below the number of axes ({})",
            manifest.axes.len()
        )));
    }
    let (cmi, cmi_unavailable) = match cmi_score(&entries, k) {
        Ok(c) => (Some(c), None),
        Err(Error::InsufficientPairs(why)) => (None, Some(why)),
        Err(e) => return Err(e),
    };
    let signs = pair_signs(&entries);
    let phi: Vec<f64> = entries.iter().map(|e| e.metric_value).collect();
    let gaps: Vec<f64> = entries.iter().map(generalization_gap).collect();
    let gap_table = manifest
        .entries
        .iter()
        .zip(&entries)
        .map(|(m, e)| GapRow {
            model_id: e.model_id.clone(),
            hparams: m.hparams.clone(),
            train_acc: e.train_accuracy,
            test_acc: e.test_accuracy,
            gap: generalization_gap(e),
            phi: e.metric_value,
        })
        .collect();
    Ok(EvalReport {
        format_version: EVAL_FORMAT_VERSION,
        cmi,
        cmi_unavailable,
        kendall_tau: kendall_tau(&phi, &gaps).ok(),
        n_models: entries.len(),
        n_pairs_used: signs.pairs.len(),
        ties_discarded: signs.ties_discarded,
        sign_convention: SIGN_CONVENTION.into(),
        gap_table,
    })
}
