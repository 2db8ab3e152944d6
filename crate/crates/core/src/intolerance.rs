//! Jitter-state moments, the jitter intolerance probability and its Gaussian
//! closed form built from per-branch Laplace approximations.

use crate::link::{BranchPartials, EventProbs, LinkError, LinkParams, SensitivityForm, StressorPoint};
use crate::special::{half_erfc_neg, norm_cdf};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IntoleranceError {
    #[error("curvature must be positive, got {0}")]
    Curvature(f64),
    #[error(transparent)]
    Link(#[from] LinkError),
}

/// Mean and variance of the interference and distance increments of one
/// transition.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StressorMoments {
    pub interference_mean: f64,
    pub interference_var: f64,
    pub distance_mean: f64,
    pub distance_var: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JitterMoments {
    pub mean: f64,
    pub variance: f64,
}

/// Delta-method moments of the next jitter state given event indicators.
pub fn jitter_moments(
    sens_d: f64,
    sens_i: f64,
    m: &StressorMoments,
    eps_i: bool,
    eps_d: bool,
    tau_prev: f64,
) -> JitterMoments {
    let (mut mean, mut variance) = (tau_prev, 0.0);
    if eps_i {
        mean += sens_i * m.interference_mean;
        variance += sens_i * sens_i * m.interference_var;
    }
    if eps_d {
        mean += sens_d * m.distance_mean;
        variance += sens_d * sens_d * m.distance_var;
    }
    JitterMoments { mean, variance }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Branch {
    Joint,
    DistanceOnly,
    InterferenceOnly,
}

impl Branch {
    pub const ALL: [Branch; 3] = [Branch::Joint, Branch::DistanceOnly, Branch::InterferenceOnly];

    fn indicators(self) -> (bool, bool) {
        match self {
            Branch::Joint => (true, true),
            Branch::DistanceOnly => (false, true),
            Branch::InterferenceOnly => (true, false),
        }
    }

    pub fn weight(self, probs: EventProbs) -> f64 {
        probs.branch_weights()[self as usize]
    }
}

/// `mean / sqrt(2 var)` with the step limit for a vanishing variance.
fn erf_argument(mean: f64, variance: f64) -> f64 {
    if variance > 0.0 && variance.is_finite() {
        mean / (2.0 * variance).sqrt()
    } else if mean > 0.0 {
        f64::INFINITY
    } else {
        f64::NEG_INFINITY
    }
}

/// Erf arguments of the joint, distance-only and interference-only branches.
pub fn branch_arguments(sens_d: f64, sens_i: f64, m: &StressorMoments) -> [f64; 3] {
    Branch::ALL.map(|b| {
        let (ei, ed) = b.indicators();
        let jm = jitter_moments(sens_d, sens_i, m, ei, ed, 0.0);
        erf_argument(jm.mean, jm.variance)
    })
}

pub fn intolerance_probability(sens_d: f64, sens_i: f64, m: &StressorMoments, probs: EventProbs) -> f64 {
    let x = branch_arguments(sens_d, sens_i, m);
    probs
        .branch_weights()
        .iter()
        .zip(x)
        .filter(|(w, _)| **w > 0.0)
        .map(|(w, x)| w * half_erfc_neg(x))
        .sum()
}

/// Laplace approximation of one branch term: mean and standard deviation.
pub fn component_laplace(mode: f64, curvature: f64, weight: f64) -> Result<(f64, f64), IntoleranceError> {
    if !(curvature > 0.0) {
        return Err(IntoleranceError::Curvature(curvature));
    }
    let mean = weight * half_erfc_neg(mode);
    let var = if mode.is_finite() { weight * weight * (-2.0 * mode * mode).exp() / (curvature * PI) } else { 0.0 };
    Ok((mean, var.sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaplaceComponent {
    pub branch: Branch,
    pub mode: f64,
    pub curvature: f64,
    pub weight: f64,
    pub mean: f64,
    pub std: f64,
}

/// Gaussian approximation of the next-state intolerance probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntoleranceGaussian {
    pub mean: f64,
    pub std: f64,
    pub support_lo: f64,
    pub support_hi: f64,
    pub components: [LaplaceComponent; 3],
}

impl IntoleranceGaussian {
    pub fn mean_outside_support(&self) -> bool {
        self.mean < self.support_lo || self.mean > self.support_hi
    }

    pub fn pdf(&self, y: f64) -> f64 {
        let z = (y - self.mean) / self.std;
        (-0.5 * z * z).exp() / (self.std * (2.0 * PI).sqrt())
    }

    /// Gaussian mass on `[lo, hi]`; a zero-width Gaussian is a point mass.
    pub fn mass(&self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            return 0.0;
        }
        if self.std > 0.0 {
            norm_cdf((hi - self.mean) / self.std) - norm_cdf((lo - self.mean) / self.std)
        } else if (lo..=hi).contains(&self.mean) {
            1.0
        } else {
            0.0
        }
    }
}

pub fn intolerance_pdf(
    sens_d: f64,
    sens_i: f64,
    m: &StressorMoments,
    probs: EventProbs,
    curvature: f64,
) -> Result<IntoleranceGaussian, IntoleranceError> {
    let x = branch_arguments(sens_d, sens_i, m);
    let weights = probs.branch_weights();
    let mut components = [LaplaceComponent { branch: Branch::Joint, mode: 0.0, curvature, weight: 0.0, mean: 0.0, std: 0.0 }; 3];
    for (i, b) in Branch::ALL.into_iter().enumerate() {
        let (mean, std) = if weights[i] > 0.0 { component_laplace(x[i], curvature, weights[i])? } else { (0.0, 0.0) };
        components[i] = LaplaceComponent { branch: b, mode: x[i], curvature, weight: weights[i], mean, std };
    }
    Ok(IntoleranceGaussian {
        mean: components.iter().map(|c| c.mean).sum(),
        std: components.iter().map(|c| c.std * c.std).sum::<f64>().sqrt(),
        support_lo: 0.0,
        support_hi: probs.support(),
        components,
    })
}

/// Probability that the limit state stays positive next slot.
pub fn exceedance_probability(pdf: &IntoleranceGaussian, p_ji_minus: f64) -> f64 {
    let a = 1.0 - p_ji_minus;
    if a >= pdf.support_hi {
        return 1.0;
    }
    1.0 - pdf.mass(a, pdf.support_hi)
}

/// Everything needed to evaluate intolerance at one slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotContext {
    pub link: LinkParams,
    pub point: StressorPoint,
    pub moments: StressorMoments,
    pub probs: EventProbs,
    pub form: SensitivityForm,
    pub curvature: f64,
}

impl SlotContext {
    /// Combined distance and interference sensitivities.
    pub fn sensitivities(&self) -> Result<(f64, f64), LinkError> {
        let partials = BranchPartials::evaluate(&self.link, &self.point, self.form)?;
        Ok((partials.sensitivity_distance(self.probs), partials.sensitivity_interference(self.probs)))
    }

    pub fn probability(&self) -> Result<f64, LinkError> {
        let (sd, si) = self.sensitivities()?;
        Ok(intolerance_probability(sd, si, &self.moments, self.probs))
    }

    pub fn gaussian(&self) -> Result<IntoleranceGaussian, IntoleranceError> {
        let (sd, si) = self.sensitivities()?;
        intolerance_pdf(sd, si, &self.moments, self.probs, self.curvature)
    }
}
