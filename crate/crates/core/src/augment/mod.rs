//! Seeded image augmentations and their JSON description.

mod kernels;
mod rng;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::nn::Model;
use crate::perturb::{vap, VapParams};
use crate::tensor::Image;

pub use kernels::{
    brightness, channel_means, crop_resize, draw_erase_rect, draw_saturation_factor, erase, flip_lr,
    random_erase, random_saturation, saturate, sobel, EraseParams, EraseRect,
};
pub use rng::{mix, RngStream};

pub const DEFAULT_CROP_FRACTION: f64 = 0.75;
pub const DEFAULT_BRIGHTNESS_DELTA: f64 = 0.2;

/// One augmentation with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum Augmentation {
    Flip,
    RandomSaturation { lo: f64, hi: f64 },
    CropResize { fraction: f64 },
    Brightness { delta: f64 },
    RandomErase(EraseParams),
    Sobel,
    Vap(VapParams),
    /// Children applied left to right; one level deep.
    Compose(Vec<Augmentation>),
}

/// A random quantity drawn while augmenting, for reporting.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DrawnParam {
    pub name: String,
    pub value: f64,
}

impl Augmentation {
    /// Parses a kind name with default parameters.
    pub fn from_kind(kind: &str) -> Result<Self> {
        Ok(match kind {
            "flip" | "flip_lr" => Augmentation::Flip,
            "saturation" | "random_saturation" => Augmentation::RandomSaturation { lo: 1.0, hi: 2.0 },
            "crop_resize" => Augmentation::CropResize { fraction: DEFAULT_CROP_FRACTION },
            "brightness" => Augmentation::Brightness { delta: DEFAULT_BRIGHTNESS_DELTA },
            "random_erase" | "cutout" => Augmentation::RandomErase(EraseParams::default()),
            "sobel" => Augmentation::Sobel,
            "vap" => Augmentation::Vap(VapParams::default()),
            "compose" => {
                return Err(Error::InvalidAugmentation(
                    "compose needs explicit children".into(),
                ))
            }
            other => {
                return Err(Error::InvalidAugmentation(format!(
                    "unknown augmentation kind {other:?}"
                )))
            }
        })
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Augmentation::Flip => "flip",
            Augmentation::RandomSaturation { .. } => "saturation",
            Augmentation::CropResize { .. } => "crop_resize",
            Augmentation::Brightness { .. } => "brightness",
            Augmentation::RandomErase(_) => "random_erase",
            Augmentation::Sobel => "sobel",
            Augmentation::Vap(_) => "vap",
            Augmentation::Compose(_) => "compose",
        }
    }

    /// Display name; compositions join their children with `+`.
    pub fn name(&self) -> String {
        match self {
            Augmentation::Compose(children) => {
                children.iter().map(|c| c.name()).collect::<Vec<_>>().join("+")
            }
            other => other.kind().to_string(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidAugmentation(m));
        match self {
            Augmentation::RandomSaturation { lo, hi } => {
                if !(*lo >= 0.0 && lo <= hi && hi.is_finite()) {
                    return bad(format!("saturation range [{lo}, {hi}] invalid"));
                }
            }
            Augmentation::CropResize { fraction } => {
                if !(*fraction > 0.0 && *fraction <= 1.0) {
                    return bad(format!("crop fraction {fraction} outside (0, 1]"));
                }
            }
            Augmentation::Brightness { delta } => {
                if !(delta.is_finite() && *delta >= 0.0) {
                    return bad(format!("brightness delta {delta} must be nonnegative"));
                }
            }
            Augmentation::RandomErase(p) => p.validate()?,
            Augmentation::Vap(p) => p.validate()?,
            Augmentation::Compose(children) => {
                if children.len() < 2 {
                    return bad("compose needs at least 2 children".into());
                }
                for c in children {
                    if matches!(c, Augmentation::Compose(_)) {
                        return bad("nested compose is not supported".into());
                    }
                    c.validate()?;
                }
            }
            Augmentation::Flip | Augmentation::Sobel => {}
        }
        Ok(())
    }

    /// Whether applying this augmentation needs a model (VAP).
    pub fn needs_model(&self) -> bool {
        match self {
            Augmentation::Vap(_) => true,
            Augmentation::Compose(c) => c.iter().any(Augmentation::needs_model),
            _ => false,
        }
    }

    pub fn params_json(&self) -> Option<Value> {
        match self {
            Augmentation::RandomSaturation { lo, hi } => Some(json!({"lo": lo, "hi": hi})),
            Augmentation::CropResize { fraction } => Some(json!({"fraction": fraction})),
            Augmentation::Brightness { delta } => Some(json!({"delta": delta})),
            Augmentation::RandomErase(p) => Some(json!({
                "area_lo": p.area_lo, "area_hi": p.area_hi,
                "aspect_lo": p.aspect_lo, "aspect_hi": p.aspect_hi,
            })),
            Augmentation::Vap(p) => Some(serde_json::to_value(p).expect("plain struct")),
            _ => None,
        }
    }

    /// JSON object `{kind, params?, children?}`.
    pub fn to_json(&self) -> Value {
        let mut obj = serde_json::Map::new();
        obj.insert("kind".into(), json!(self.kind()));
        if let Some(p) = self.params_json() {
            obj.insert("params".into(), p);
        }
        if let Augmentation::Compose(children) = self {
            obj.insert(
                "children".into(),
                Value::Array(children.iter().map(Augmentation::to_json).collect()),
            );
        }
        Value::Object(obj)
    }

    /// Builds from a kind plus optional params and children, validating everything.
    pub fn from_parts(kind: &str, params: Option<&Value>, children: Option<&[ChildSpec]>) -> Result<Self> {
        if kind != "compose" && children.is_some() {
            return Err(Error::InvalidAugmentation(format!("{kind} takes no children")));
        }
        let mut aug = match kind {
            "compose" => {
                if params.is_some() {
                    return Err(Error::InvalidAugmentation("compose takes no params".into()));
                }
                let children = children
                    .ok_or_else(|| Error::InvalidAugmentation("compose needs children".into()))?;
                let parsed = children.iter().map(ChildSpec::build).collect::<Result<Vec<_>>>()?;
                Augmentation::Compose(parsed)
            }
            k => Augmentation::from_kind(k)?,
        };
        if let Some(p) = params {
            aug.merge_params(p)?;
        }
        aug.validate()?;
        Ok(aug)
    }

    fn merge_params(&mut self, p: &Value) -> Result<()> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Sat {
            lo: Option<f64>,
            hi: Option<f64>,
        }
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Crop {
            fraction: f64,
        }
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Bright {
            delta: f64,
        }
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Erase {
            area_lo: Option<f64>,
            area_hi: Option<f64>,
            aspect_lo: Option<f64>,
            aspect_hi: Option<f64>,
        }
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct VapP {
            epsilon: Option<f64>,
            xi: Option<f64>,
            iterations: Option<u32>,
        }
        let kind = self.kind();
        let err = |e: serde_json::Error| Error::InvalidAugmentation(format!("{kind} params: {e}"));
        match self {
            Augmentation::RandomSaturation { lo, hi } => {
                let s: Sat = serde_json::from_value(p.clone()).map_err(err)?;
                *lo = s.lo.unwrap_or(*lo);
                *hi = s.hi.unwrap_or(*hi);
            }
            Augmentation::CropResize { fraction } => {
                *fraction = serde_json::from_value::<Crop>(p.clone()).map_err(err)?.fraction;
            }
            Augmentation::Brightness { delta } => {
                *delta = serde_json::from_value::<Bright>(p.clone()).map_err(err)?.delta;
            }
            Augmentation::RandomErase(e) => {
                let s: Erase = serde_json::from_value(p.clone()).map_err(err)?;
                e.area_lo = s.area_lo.unwrap_or(e.area_lo);
                e.area_hi = s.area_hi.unwrap_or(e.area_hi);
                e.aspect_lo = s.aspect_lo.unwrap_or(e.aspect_lo);
                e.aspect_hi = s.aspect_hi.unwrap_or(e.aspect_hi);
            }
            Augmentation::Vap(v) => {
                let s: VapP = serde_json::from_value(p.clone()).map_err(err)?;
                v.epsilon = s.epsilon.unwrap_or(v.epsilon);
                v.xi = s.xi.unwrap_or(v.xi);
                v.iterations = s.iterations.unwrap_or(v.iterations);
            }
            Augmentation::Flip | Augmentation::Sobel => {
                let empty = p.as_object().is_some_and(|o| o.is_empty());
                if !empty {
                    return Err(Error::InvalidAugmentation(format!("{kind} takes no params")));
                }
            }
            Augmentation::Compose(_) => unreachable!(),
        }
        Ok(())
    }
}

/// A compose child in JSON: a bare kind name or a `{kind, params}` object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ChildSpec {
    Name(String),
    Full {
        kind: String,
        #[serde(default)]
        params: Option<Value>,
        #[serde(default)]
        children: Option<Vec<ChildSpec>>,
    },
}

impl ChildSpec {
    fn build(&self) -> Result<Augmentation> {
        match self {
            ChildSpec::Name(kind) => Augmentation::from_kind(kind),
            ChildSpec::Full { kind, params, children } => {
                if kind == "compose" {
                    return Err(Error::InvalidAugmentation(
                        "nested compose is not supported".into(),
                    ));
                }
                Augmentation::from_parts(kind, params.as_ref(), children.as_deref())
            }
        }
    }
}

/// Applies `aug` to `img`. VAP needs `model`; draws come from `rng` in order.
pub fn apply(aug: &Augmentation, img: &Image, model: Option<&Model>, rng: &mut RngStream) -> Result<Image> {
    apply_logged(aug, img, model, rng, None)
}

/// Like [`apply`], also recording every random draw into `log`.
pub fn apply_logged(
    aug: &Augmentation,
    img: &Image,
    model: Option<&Model>,
    rng: &mut RngStream,
    mut log: Option<&mut Vec<DrawnParam>>,
) -> Result<Image> {
    let mut record = |name: &str, value: f64| {
        if let Some(l) = log.as_deref_mut() {
            l.push(DrawnParam { name: name.to_string(), value });
        }
    };
    match aug {
        Augmentation::Flip => Ok(flip_lr(img)),
        Augmentation::RandomSaturation { lo, hi } => {
            let s = draw_saturation_factor(rng, *lo, *hi);
            record("saturation_factor", s);
            saturate(img, s)
        }
        Augmentation::CropResize { fraction } => crop_resize(img, *fraction),
        Augmentation::Brightness { delta } => brightness(img, *delta),
        Augmentation::RandomErase(p) => {
            let rect = draw_erase_rect(rng, img.height(), img.width(), p)?;
            record("erase_top", rect.top as f64);
            record("erase_left", rect.left as f64);
            record("erase_height", rect.height as f64);
            record("erase_width", rect.width as f64);
            Ok(erase(img, rect))
        }
        Augmentation::Sobel => Ok(sobel(img)),
        Augmentation::Vap(p) => {
            let model = model.ok_or_else(|| {
                Error::InvalidAugmentation("vap needs a model to perturb against".into())
            })?;
            vap(model, img, p, rng)
        }
        Augmentation::Compose(children) => {
            aug.validate()?;
            let mut cur = img.clone();
            for child in children {
                cur = apply_logged(child, &cur, model, rng, log.as_deref_mut())?;
            }
            Ok(cur)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Image {
        Image::from_fn(4, 4, 3, |i, j, c| ((i * 4 + j) * 3 + c) as f64 / 48.0).unwrap()
    }

    #[test]
    fn dispatch_flip() {
        let img = sample();
        let out = apply(&Augmentation::Flip, &img, None, &mut RngStream::new(0)).unwrap();
        assert_eq!(out, flip_lr(&img));
    }

    #[test]
    fn compose_flip_flip_is_identity() {
        let img = sample();
        let aug = Augmentation::Compose(vec![Augmentation::Flip, Augmentation::Flip]);
        assert_eq!(apply(&aug, &img, None, &mut RngStream::new(0)).unwrap(), img);
    }

    #[test]
    fn compose_rejects_nesting_and_singletons() {
        let inner = Augmentation::Compose(vec![Augmentation::Flip, Augmentation::Sobel]);
        let nested = Augmentation::Compose(vec![inner, Augmentation::Flip]);
        assert!(apply(&nested, &sample(), None, &mut RngStream::new(0)).is_err());
        assert!(Augmentation::Compose(vec![Augmentation::Flip]).validate().is_err());
    }

    #[test]
    fn compose_is_deterministic() {
        let aug = Augmentation::Compose(vec![Augmentation::Flip, Augmentation::from_kind("saturation").unwrap()]);
        let a = apply(&aug, &sample(), None, &mut RngStream::new(7)).unwrap();
        let b = apply(&aug, &sample(), None, &mut RngStream::new(7)).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn vap_without_model_is_an_error() {
        let aug = Augmentation::from_kind("vap").unwrap();
        assert!(apply(&aug, &sample(), None, &mut RngStream::new(0)).is_err());
    }

    #[test]
    fn unknown_kind_rejected() {
        assert!(Augmentation::from_kind("style_transfer").is_err());
        assert!(Augmentation::from_parts("flip", Some(&json!({"x": 1})), None).is_err());
        assert!(Augmentation::from_parts("crop_resize", Some(&json!({"fraction": 1.5})), None).is_err());
    }

    #[test]
    fn names() {
        let aug = Augmentation::Compose(vec![Augmentation::Flip, Augmentation::from_kind("saturation").unwrap()]);
        assert_eq!(aug.name(), "flip+saturation");
    }

    #[test]
    fn logging_records_draws() {
        let mut log = Vec::new();
        let aug = Augmentation::from_kind("cutout").unwrap();
        apply_logged(&aug, &sample(), None, &mut RngStream::new(1), Some(&mut log)).unwrap();
        assert_eq!(log.len(), 4);
    }
}
