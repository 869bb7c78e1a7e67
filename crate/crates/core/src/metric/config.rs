use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::augment::{Augmentation, ChildSpec};
use crate::error::{read_file, write_file, Error, Result};

pub const DEFAULT_SAMPLE_COUNT: usize = 1000;

/// An augmentation with its misclassification penalty.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyEntry {
    pub augmentation: Augmentation,
    pub lambda: f64,
}

impl PenaltyEntry {
    pub fn new(augmentation: Augmentation, lambda: f64) -> Self {
        Self { augmentation, lambda }
    }

    /// Entries with zero penalty are listed in reports but never evaluated.
    pub fn is_active(&self) -> bool {
        self.lambda > 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyConfig {
    pub seed: u64,
    pub sample_count: usize,
    pub entries: Vec<PenaltyEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EntryFile {
    kind: String,
    lambda: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    params: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    children: Option<Vec<ChildSpec>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    format_version: Option<u32>,
    seed: u64,
    sample_count: usize,
    entries: Vec<EntryFile>,
}

/// Names accepted by [`PenaltyConfig::preset`].
pub const PRESETS: [&str; 3] = ["with_vap", "basic", "with_erase"];

impl PenaltyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sample_count == 0 {
            return Err(Error::InvalidConfig("sample_count must be at least 1".into()));
        }
        if self.entries.is_empty() {
            return Err(Error::InvalidConfig("no entries".into()));
        }
        for (i, e) in self.entries.iter().enumerate() {
            if !(e.lambda.is_finite() && e.lambda >= 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "entry {i} ({}): penalty {} must be finite and nonnegative",
                    e.augmentation.name(),
                    e.lambda
                )));
            }
            e.augmentation.validate()?;
        }
        Ok(())
    }

    pub fn active_entries(&self) -> impl Iterator<Item = (usize, &PenaltyEntry)> {
        self.entries.iter().enumerate().filter(|(_, e)| e.is_active())
    }

    /// One of the three penalty rows of the original submissions, in the
    /// order flip, saturation, crop_resize, sobel, brightness,
    /// flip+saturation, cutout, vap.
    pub fn preset(name: &str) -> Result<Self> {
        let lambdas: [f64; 8] = match name {
            "with_vap" => [6.0, 1.0, 3.0, 2.0, 1.0, 12.0, 0.0, 3.0],
            "basic" => [6.0, 1.0, 2.0, 3.0, 1.0, 9.0, 0.0, 0.0],
            "with_erase" => [6.0, 1.0, 2.0, 3.0, 1.0, 12.0, 2.0, 0.0],
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown preset {other:?}; expected one of {PRESETS:?}"
                )))
            }
        };
        let kinds = ["flip", "saturation", "crop_resize", "sobel", "brightness"];
        let mut augs: Vec<Augmentation> = kinds
            .iter()
            .map(|k| Augmentation::from_kind(k).expect("known kind"))
            .collect();
        augs.push(Augmentation::Compose(vec![
            Augmentation::Flip,
            Augmentation::from_kind("saturation")?,
        ]));
        augs.push(Augmentation::from_kind("random_erase")?);
        augs.push(Augmentation::from_kind("vap")?);
        Ok(Self {
            seed: 0,
            sample_count: DEFAULT_SAMPLE_COUNT,
            entries: augs
                .into_iter()
                .zip(lambdas)
                .map(|(a, l)| PenaltyEntry::new(a, l))
                .collect(),
        })
    }

    pub fn from_json_slice(bytes: &[u8]) -> Result<Self> {
        let file: ConfigFile = serde_json::from_slice(bytes)
            .map_err(|e| Error::InvalidConfig(format!("penalty config: {e}")))?;
        if let Some(v) = file.format_version {
            if v != 1 {
                return Err(Error::InvalidConfig(format!("unsupported format_version {v}")));
            }
        }
        let entries = file
            .entries
            .iter()
            .map(|e| {
                let aug = Augmentation::from_parts(&e.kind, e.params.as_ref(), e.children.as_deref())?;
                Ok(PenaltyEntry::new(aug, e.lambda))
            })
            .collect::<Result<Vec<_>>>()?;
        let cfg = Self {
            seed: file.seed,
            sample_count: file.sample_count,
            entries,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json_string(&self) -> Result<String> {
        let entries = self
            .entries
            .iter()
            .map(|e| {
                let aug = &e.augmentation;
                let children = match aug {
                    Augmentation::Compose(ch) => Some(
                        ch.iter()
                            .map(|c| ChildSpec::Full {
                                kind: c.kind().to_string(),
                                params: c.params_json(),
                                children: None,
                            })
                            .collect(),
                    ),
                    _ => None,
                };
                EntryFile {
                    kind: aug.kind().to_string(),
                    lambda: e.lambda,
                    params: aug.params_json(),
                    children,
                }
            })
            .collect();
        let file = ConfigFile {
            format_version: Some(1),
            seed: self.seed,
            sample_count: self.sample_count,
            entries,
        };
        let mut s = serde_json::to_string_pretty(&file)?;
        s.push('\n');
        Ok(s)
    }
}

/// Loads a config file, or a built-in preset given as `preset:<name>`.
pub fn load_penalty_config(path: impl AsRef<Path>) -> Result<PenaltyConfig> {
    let path = path.as_ref();
    if let Some(name) = path.to_str().and_then(|s| s.strip_prefix("preset:")) {
        return PenaltyConfig::preset(name);
    }
    PenaltyConfig::from_json_slice(&read_file(path)?)
}

pub fn save_penalty_config(path: impl AsRef<Path>, config: &PenaltyConfig) -> Result<()> {
    config.validate()?;
    write_file(path.as_ref(), config.to_json_string()?.as_bytes())
}
