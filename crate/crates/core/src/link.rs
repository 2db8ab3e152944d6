//! SINR, transmission delay, delay sensitivities and the jitter-state recursion.

use rand::Rng;
use rand_distr::{Bernoulli, Distribution, Geometric};
use serde::{Deserialize, Serialize};
use std::f64::consts::{LN_2, PI};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinkError {
    #[error("distance must be positive, got {0}")]
    NonPositiveDistance(f64),
    #[error("SINR must be positive, got {0}")]
    NonPositiveSinr(f64),
    #[error("antenna gain list is empty")]
    EmptyGains,
    #[error("expected {expected} antenna gains, got {got}")]
    GainCount { expected: usize, got: usize },
    #[error("sojourn rate must lie in (0, 1], got {0}")]
    SojournRate(f64),
}

/// Desired-link parameters. `noise_power` is total noise over the band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkParams {
    pub tx_power: f64,
    pub wavelength: f64,
    pub noise_power: f64,
    pub bandwidth: f64,
    pub packet_bits: f64,
    pub gain_sq: f64,
    pub n_antennas: usize,
}

impl LinkParams {
    fn path_gain(&self, distance: f64) -> f64 {
        let r = self.wavelength / (4.0 * PI * distance);
        r * r
    }

    /// Copy with `gain_sq` set to the antenna-averaged gain of `gains`.
    pub fn with_gains(&self, gains: &[f64]) -> Result<Self, LinkError> {
        if gains.is_empty() {
            return Err(LinkError::EmptyGains);
        }
        Ok(Self {
            gain_sq: gains.iter().sum::<f64>() / gains.len() as f64,
            n_antennas: gains.len(),
            ..*self
        })
    }
}

pub fn sinr(link: &LinkParams, interference: f64, distance: f64) -> Result<f64, LinkError> {
    if !(distance > 0.0) {
        return Err(LinkError::NonPositiveDistance(distance));
    }
    Ok(link.tx_power * link.gain_sq * link.path_gain(distance) / (link.noise_power + interference))
}

/// SINR with the desired-link gain replaced by the mean of `gains`.
pub fn sinr_miso(
    link: &LinkParams,
    interference: f64,
    distance: f64,
    gains: &[f64],
) -> Result<f64, LinkError> {
    if gains.len() != link.n_antennas {
        if gains.is_empty() {
            return Err(LinkError::EmptyGains);
        }
        return Err(LinkError::GainCount { expected: link.n_antennas, got: gains.len() });
    }
    sinr(&link.with_gains(gains)?, interference, distance)
}

pub fn transmission_delay(link: &LinkParams, sinr_value: f64) -> Result<f64, LinkError> {
    if !(sinr_value > 0.0) {
        return Err(LinkError::NonPositiveSinr(sinr_value));
    }
    Ok(link.packet_bits / (link.bandwidth * sinr_value.ln_1p() / LN_2))
}

/// Delay at a stressor state.
pub fn delay_at(link: &LinkParams, interference: f64, distance: f64) -> Result<f64, LinkError> {
    transmission_delay(link, sinr(link, interference, distance)?)
}

pub fn jitter_increment(delay_prev: f64, delay_next: f64) -> f64 {
    delay_next - delay_prev
}

/// `-d(delay)/d(sinr)`.
fn delay_slope(link: &LinkParams, g: f64) -> f64 {
    let l2 = g.ln_1p() / LN_2;
    link.packet_bits / (link.bandwidth * LN_2 * (1.0 + g) * l2 * l2)
}

/// Which form of the interference partial to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SensitivityForm {
    /// Derivative of the delay map.
    #[default]
    Corrected,
    /// Closed form with the extra `-1` in the numerator.
    Literal,
}

/// Partial derivative of delay with respect to distance.
pub fn delay_partial_distance(link: &LinkParams, interference: f64, distance: f64) -> Result<f64, LinkError> {
    let g = sinr(link, interference, distance)?;
    Ok(delay_slope(link, g) * 2.0 * g / distance)
}

/// Partial derivative of delay with respect to interference power.
pub fn delay_partial_interference(
    link: &LinkParams,
    interference: f64,
    distance: f64,
    form: SensitivityForm,
) -> Result<f64, LinkError> {
    let g = sinr(link, interference, distance)?;
    let numerator = g / (link.noise_power + interference);
    let numerator = match form {
        SensitivityForm::Corrected => numerator,
        SensitivityForm::Literal => numerator - 1.0,
    };
    Ok(delay_slope(link, g) * numerator)
}

/// Stressor values at which the four branch partials are evaluated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StressorPoint {
    pub interference: f64,
    pub interference_prev: f64,
    pub distance: f64,
    pub mean_distance_prev: f64,
}

impl StressorPoint {
    /// A point whose previous-slot values equal the current ones.
    pub fn at(interference: f64, distance: f64) -> Self {
        Self { interference, interference_prev: interference, distance, mean_distance_prev: distance }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventProbs {
    pub interference: f64,
    pub distance: f64,
}

impl EventProbs {
    /// Weights of the joint, distance-only and interference-only branches.
    pub fn branch_weights(&self) -> [f64; 3] {
        let (pi, pd) = (self.interference, self.distance);
        [pi * pd, (1.0 - pi) * pd, (1.0 - pd) * pi]
    }

    pub fn support(&self) -> f64 {
        self.branch_weights().iter().sum()
    }
}

/// Per-branch partials: joint and distance-only distance partials, joint and
/// interference-only interference partials.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchPartials {
    pub joint_distance: f64,
    pub distance_only: f64,
    pub joint_interference: f64,
    pub interference_only: f64,
}

impl BranchPartials {
    pub fn evaluate(link: &LinkParams, at: &StressorPoint, form: SensitivityForm) -> Result<Self, LinkError> {
        Ok(Self {
            joint_distance: delay_partial_distance(link, at.interference, at.distance)?,
            distance_only: delay_partial_distance(link, at.interference_prev, at.distance)?,
            joint_interference: delay_partial_interference(link, at.interference, at.distance, form)?,
            interference_only: delay_partial_interference(link, at.interference, at.mean_distance_prev, form)?,
        })
    }

    pub fn sensitivity_distance(&self, probs: EventProbs) -> f64 {
        let [joint, dist_only, _] = probs.branch_weights();
        joint * self.joint_distance + dist_only * self.distance_only
    }

    pub fn sensitivity_interference(&self, probs: EventProbs) -> f64 {
        let [joint, _, int_only] = probs.branch_weights();
        joint * self.joint_interference + int_only * self.interference_only
    }
}

pub fn sensitivity_distance(link: &LinkParams, at: &StressorPoint, probs: EventProbs) -> Result<f64, LinkError> {
    Ok(BranchPartials::evaluate(link, at, SensitivityForm::Corrected)?.sensitivity_distance(probs))
}

pub fn sensitivity_interference(
    link: &LinkParams,
    at: &StressorPoint,
    probs: EventProbs,
    form: SensitivityForm,
) -> Result<f64, LinkError> {
    Ok(BranchPartials::evaluate(link, at, form)?.sensitivity_interference(probs))
}

/// Probability-weighted explicit jitter between the previous mean state
/// `(interference_prev, mean_distance_prev)` and the current state.
pub fn explicit_jitter(link: &LinkParams, at: &StressorPoint, probs: EventProbs) -> Result<f64, LinkError> {
    let [joint, dist_only, int_only] = probs.branch_weights();
    let base = delay_at(link, at.interference_prev, at.mean_distance_prev)?;
    let both = delay_at(link, at.interference, at.distance)? - base;
    let int = delay_at(link, at.interference, at.mean_distance_prev)? - base;
    let dist = delay_at(link, at.interference_prev, at.distance)? - base;
    Ok(joint * both + int_only * int + dist_only * dist)
}

/// How event probabilities enter the state recursion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Recursion {
    /// Indicator-selected branch only.
    #[default]
    Indicator,
    /// Branch increment additionally scaled by its probability weight.
    Weighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JitterState {
    pub delay_prev: f64,
    pub jitter: f64,
    pub sens_distance: f64,
    pub sens_interference: f64,
    pub event_interference: bool,
    pub event_distance: bool,
    pub probs: EventProbs,
    pub sojourn_left: u32,
}

impl JitterState {
    pub fn new(delay: f64, probs: EventProbs) -> Self {
        Self {
            delay_prev: delay,
            jitter: 0.0,
            sens_distance: 0.0,
            sens_interference: 0.0,
            event_interference: false,
            event_distance: false,
            probs,
            sojourn_left: 0,
        }
    }
}

/// Inputs of one jitter transition: the pre-transition stressor state and
/// the increments applied to it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub interference: f64,
    pub distance: f64,
    pub d_interference: f64,
    pub d_distance: f64,
}

/// Advances the jitter state by one slot.
///
/// A state whose sojourn has not expired is held. Otherwise both event
/// indicators are drawn; the selected branch adds the exact delay change of
/// its increments to the jitter, and a fresh sojourn is drawn whenever an
/// event fired.
pub fn step_jitter_state<R: Rng + ?Sized>(
    state: &JitterState,
    link: &LinkParams,
    step: &Transition,
    sojourn_rate: f64,
    recursion: Recursion,
    rng: &mut R,
) -> Result<JitterState, LinkError> {
    if state.sojourn_left > 0 {
        return Ok(JitterState { sojourn_left: state.sojourn_left - 1, ..*state });
    }
    let ev_i = Bernoulli::new(state.probs.interference.clamp(0.0, 1.0))
        .expect("probability clamped")
        .sample(rng);
    let ev_d = Bernoulli::new(state.probs.distance.clamp(0.0, 1.0))
        .expect("probability clamped")
        .sample(rng);
    if !ev_i && !ev_d {
        return Ok(*state);
    }
    let d_int = if ev_i { step.d_interference } else { 0.0 };
    let d_dist = if ev_d { step.d_distance } else { 0.0 };
    let before = delay_at(link, step.interference, step.distance)?;
    let after = delay_at(link, step.interference + d_int, step.distance + d_dist)?;
    let weight = match recursion {
        Recursion::Indicator => 1.0,
        Recursion::Weighted => {
            let [joint, dist_only, int_only] = state.probs.branch_weights();
            match (ev_i, ev_d) {
                (true, true) => joint,
                (false, true) => dist_only,
                _ => int_only,
            }
        }
    };
    let increment = weight * jitter_increment(before, after);
    Ok(JitterState {
        delay_prev: after,
        jitter: state.jitter + increment,
        event_interference: ev_i,
        event_distance: ev_d,
        sojourn_left: sample_sojourn(sojourn_rate, rng)? - 1,
        ..*state
    })
}

/// Geometric sojourn length on `{1, 2, ...}` with success probability `rate`.
pub fn sample_sojourn<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> Result<u32, LinkError> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(LinkError::SojournRate(rate));
    }
    let failures = Geometric::new(rate).map_err(|_| LinkError::SojournRate(rate))?.sample(rng);
    Ok(u32::try_from(failures.saturating_add(1)).unwrap_or(u32::MAX))
}
