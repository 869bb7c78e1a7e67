//! The augmentation-robustness score.
//!
//! For every selected training sample and every active augmentation the model's
//! predicted class on the original and augmented input are compared. A changed
//! class costs the augmentation's penalty; an unchanged class costs the absolute
//! change in probability of that class. The score is the negated sum.

mod config;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{apply, mix, Augmentation, RngStream};
use crate::error::{Error, Result};
use crate::nn::{Model, ProbVector};
use crate::tensor::Image;
use crate::zoo::Dataset;

pub use config::{
    load_penalty_config, save_penalty_config, PenaltyConfig, PenaltyEntry, DEFAULT_SAMPLE_COUNT,
    PRESETS,
};

pub const REPORT_FORMAT_VERSION: u32 = 1;

/// Result of comparing one sample against its augmented copy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SampleOutcome {
    /// Same predicted class; holds `|P(y|x) - P(y|x')|`.
    Matched(f64),
    Mismatched,
}

impl SampleOutcome {
    pub fn penalty(&self, lambda: f64) -> f64 {
        match self {
            SampleOutcome::Matched(d) => -d,
            SampleOutcome::Mismatched => -lambda,
        }
    }
}

fn compare(model: &Model, original: &ProbVector, augmented: &Image) -> Result<SampleOutcome> {
    let predicted = original.argmax();
    let after = model.forward(augmented)?;
    Ok(if after.argmax() == predicted {
        SampleOutcome::Matched((original.get(predicted) - after.get(predicted)).abs())
    } else {
        SampleOutcome::Mismatched
    })
}

pub fn sample_outcome(model: &Model, x: &Image, aug: &Augmentation, rng: &mut RngStream) -> Result<SampleOutcome> {
    let original = model.forward(x)?;
    let augmented = apply(aug, x, Some(model), rng)?;
    compare(model, &original, &augmented)
}

/// Penalty (at most zero) one sample contributes for one augmentation.
pub fn score_sample(model: &Model, x: &Image, aug: &Augmentation, lambda: f64, rng: &mut RngStream) -> Result<f64> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::InvalidConfig(format!("penalty {lambda} must be nonnegative")));
    }
    Ok(sample_outcome(model, x, aug, rng)?.penalty(lambda))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationScore {
    pub name: String,
    pub lambda: f64,
    pub skipped: bool,
    pub phi: f64,
    pub mismatches: usize,
    pub confidence_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub format_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_id: Option<String>,
    pub seed: u64,
    pub samples_requested: usize,
    pub samples_scored: usize,
    pub truncated: bool,
    pub phi_total: f64,
    pub phi_per_sample: f64,
    pub per_augmentation: Vec<AugmentationScore>,
}

impl MetricReport {
    pub fn active_augmentations(&self) -> usize {
        self.per_augmentation.iter().filter(|a| !a.skipped).count()
    }

    pub fn to_json_string(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

/// Dataset indices scored under `config`: a seeded shuffle, truncated, then sorted.
pub fn select_samples(n: usize, config: &PenaltyConfig) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    RngStream::new(mix(config.seed, u64::MAX, u64::MAX)).shuffle(&mut idx);
    idx.truncate(config.sample_count.min(n));
    idx.sort_unstable();
    idx
}

pub fn score_model(model: &Model, data: &Dataset, config: &PenaltyConfig) -> Result<MetricReport> {
    score_images(model, data.images(), config)
}

/// Scores `model` over a seeded subset of `images`.
pub fn score_images(model: &Model, images: &[Image], config: &PenaltyConfig) -> Result<MetricReport> {
    config.validate()?;
    if images.is_empty() {
        return Err(Error::InvalidDataset("nothing to score: empty dataset".into()));
    }
    let active: Vec<(usize, &PenaltyEntry)> = config.active_entries().collect();
    if active.is_empty() {
        return Err(Error::InvalidConfig(
            "nothing to score: every entry has zero penalty".into(),
        ));
    }
    let selected = select_samples(images.len(), config);

    let outcomes: Vec<Vec<SampleOutcome>> = selected
        .par_iter()
        .map(|&s| {
            let x = &images[s];
            let original = model.forward(x)?;
            active
                .iter()
                .map(|&(a, entry)| {
                    let mut rng = RngStream::substream(config.seed, s as u64, a as u64);
                    let augmented = apply(&entry.augmentation, x, Some(model), &mut rng)?;
                    compare(model, &original, &augmented)
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let mut per_augmentation: Vec<AugmentationScore> = config
        .entries
        .iter()
        .map(|e| AugmentationScore {
            name: e.augmentation.name(),
            lambda: e.lambda,
            skipped: !e.is_active(),
            phi: 0.0,
            mismatches: 0,
            confidence_loss: 0.0,
        })
        .collect();
    for row in &outcomes {
        for (&(a, entry), outcome) in active.iter().zip(row) {
            let score = &mut per_augmentation[a];
            score.phi += outcome.penalty(entry.lambda);
            match outcome {
                SampleOutcome::Matched(d) => score.confidence_loss += d,
                SampleOutcome::Mismatched => score.mismatches += 1,
            }
        }
    }
    let phi_total: f64 = per_augmentation.iter().map(|a| a.phi).sum();
    let scored = selected.len();
    Ok(MetricReport {
        format_version: REPORT_FORMAT_VERSION,
        model_id: None,
        seed: config.seed,
        samples_requested: config.sample_count,
        samples_scored: scored,
        truncated: scored < config.sample_count,
        phi_total,
        phi_per_sample: phi_total / scored as f64,
        per_augmentation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Dense, Layer, Preprocessing};

    fn images(n: usize) -> Vec<Image> {
        (0..n)
            .map(|k| Image::from_fn(4, 4, 3, |i, j, c| ((i * 7 + j * 3 + c + k) % 11) as f64 / 10.0).unwrap())
            .collect()
    }

    #[test]
    fn outcome_penalties() {
        assert!((SampleOutcome::Matched((0.9f64 - 0.7).abs()).penalty(6.0) - -0.2).abs() < 1e-15);
        assert_eq!(SampleOutcome::Mismatched.penalty(6.0), -6.0);
    }

    #[test]
    fn constant_model_scores_zero() {
        let dense = Layer::Dense(Dense { inputs: 48, outputs: 3, weight: vec![0.0; 144], bias: vec![0.2, 0.1, 0.0] });
        let m = Model::new([4, 4, 3], 3, Preprocessing::identity(3), vec![Layer::Flatten, dense]).unwrap();
        let mut cfg = PenaltyConfig::preset("with_vap").unwrap();
        cfg.sample_count = 5;
        let r = score_images(&m, &images(8), &cfg).unwrap();
        assert_eq!(r.phi_total, 0.0);
        assert_eq!(r.samples_scored, 5);
        assert_eq!(r.active_augmentations(), 7);
    }

    #[test]
    fn errors() {
        let dense = Layer::Dense(Dense { inputs: 48, outputs: 2, weight: vec![0.0; 96], bias: vec![0.0; 2] });
        let m = Model::new([4, 4, 3], 2, Preprocessing::identity(3), vec![Layer::Flatten, dense]).unwrap();
        let cfg = PenaltyConfig::preset("with_erase").unwrap();
        assert!(score_images(&m, &[], &cfg).is_err());
        let mut zero = cfg.clone();
        for e in &mut zero.entries {
            e.lambda = 0.0;
        }
        assert!(score_images(&m, &images(3), &zero).is_err());
        assert!(score_sample(&m, &images(1)[0], &Augmentation::Flip, -1.0, &mut RngStream::new(0)).is_err());
    }

    #[test]
    fn selection_truncates_and_is_sorted() {
        let mut cfg = PenaltyConfig::preset("with_erase").unwrap();
        cfg.sample_count = 4;
        let s = select_samples(10, &cfg);
        assert_eq!(s.len(), 4);
        assert!(s.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(select_samples(3, &cfg), vec![0, 1, 2]);
    }
}
