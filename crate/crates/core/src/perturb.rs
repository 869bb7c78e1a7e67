//! Virtual adversarial perturbation: the input direction that most changes the
//! model's output distribution, found by power iteration on KL gradients.

use serde::{Deserialize, Serialize};

use crate::augment::RngStream;
use crate::error::{Error, Result};
use crate::nn::{Model, Objective, ProbVector};
use crate::tensor::{clamp_vec, l2_norm, Image};

const Q_FLOOR: f64 = 1e-12;
const NORM_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VapParams {
    /// Global L2 radius of the perturbation, in pixel units.
    pub epsilon: f64,
    /// Finite step used to probe the KL curvature.
    pub xi: f64,
    pub iterations: u32,
}

impl Default for VapParams {
    fn default() -> Self {
        Self {
            epsilon: 0.05,
            xi: 1e-3,
            iterations: 1,
        }
    }
}

impl VapParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.epsilon.is_finite()
            && self.epsilon > 0.0
            && self.xi.is_finite()
            && self.xi > 0.0
            && self.iterations >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidAugmentation(format!("bad vap params {self:?}")))
        }
    }
}

/// `sum p_i (ln p_i - ln q_i)` with `0 ln 0 = 0` and `q` floored at 1e-12.
pub fn kl_divergence(p: &ProbVector, q: &ProbVector) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::InvalidConfig(format!(
            "KL between {} and {} classes",
            p.len(),
            q.len()
        )));
    }
    let kl: f64 = p
        .as_slice()
        .iter()
        .zip(q.as_slice())
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi.ln() - qi.max(Q_FLOOR).ln()))
        .sum();
    Ok(kl.max(0.0))
}

fn random_unit(rng: &mut RngStream, n: usize) -> Option<Vec<f64>> {
    let d: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
    normalized(d)
}

fn normalized(mut v: Vec<f64>) -> Option<Vec<f64>> {
    let n = l2_norm(&v);
    if !(n.is_finite() && n >= NORM_FLOOR) {
        return None;
    }
    for x in &mut v {
        *x /= n;
    }
    Some(v)
}

fn offset(img: &Image, dir: &[f64], scale: f64) -> Image {
    let data = img.data().iter().zip(dir).map(|(x, d)| x + scale * d).collect();
    clamp_vec(img.height(), img.width(), img.channels(), data)
}

/// Returns `clamp01(img + epsilon * r_adv)`, or `img` itself when the
/// model's KL gradient vanishes for two independent random starts.
pub fn vap(model: &Model, img: &Image, params: &VapParams, rng: &mut RngStream) -> Result<Image> {
    params.validate()?;
    let reference = model.forward(img)?;
    let objective = Objective::KlFrom(reference);
    let n = img.data().len();

    let mut redrawn = false;
    let mut d = match random_unit(rng, n) {
        Some(d) => d,
        None => {
            redrawn = true;
            match random_unit(rng, n) {
                Some(d) => d,
                None => return Ok(img.clone()),
            }
        }
    };
    let mut step = 0;
    while step < params.iterations {
        let probe = offset(img, &d, params.xi);
        let g = model.input_gradient(&probe, &objective)?.into_data();
        match normalized(g) {
            Some(next) => {
                d = next;
                step += 1;
            }
            None if !redrawn => {
                redrawn = true;
                d = match random_unit(rng, n) {
                    Some(d) => d,
                    None => return Ok(img.clone()),
                };
            }
            None => return Ok(img.clone()),
        }
    }
    Ok(offset(img, &d, params.epsilon))
}
