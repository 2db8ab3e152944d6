//! Interference population growth and inter-vehicular distance drift.

use rand::Rng;
use rand_distr::{Distribution, Exp1, Poisson, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StressorError {
    #[error("interference growth is undefined at slot {0}; arrivals start at slot 1")]
    NonPositiveSlot(u32),
    #[error("beta list is empty")]
    EmptyBetas,
    #[error("beta values must be positive, got {0}")]
    NonPositiveBeta(f64),
    #[error("betas {0} and {1} coincide within relative 1e-9")]
    DegenerateRates(usize, usize),
}

/// Exponential-rate convention of the aggregate-interference density.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RateConvention {
    /// Rates `1/(2 beta)`.
    #[default]
    Halved,
    /// Rates `1/beta`, consistent with unit-mean sampled gains.
    Sampled,
}

impl RateConvention {
    pub fn rate(self, beta: f64) -> f64 {
        match self {
            RateConvention::Halved => 1.0 / (2.0 * beta),
            RateConvention::Sampled => 1.0 / beta,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MomentMode {
    /// Moments of the independent-exponential sum.
    #[default]
    Exact,
    /// Weighted sums exactly as the closed forms are written.
    #[serde(rename = "paper-literal", alias = "literal")]
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterfererRecord {
    pub tx_power: f64,
    pub gain_sq: f64,
    pub distance: f64,
    pub beta: f64,
}

impl InterfererRecord {
    pub fn power(&self) -> f64 {
        self.beta * self.gain_sq
    }
}

/// Static parameters of the interferer arrival process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrivalParams {
    pub tx_power: f64,
    pub distance_min: f64,
    pub distance_max: f64,
    pub path_loss_exp: f64,
    pub initial_count: u32,
    pub arrival_rate0: f64,
    pub growth_linear: f64,
    pub growth_exponent: f64,
}

impl ArrivalParams {
    /// Expected number of arrivals during the transition that ends at `slot`.
    pub fn arrival_mean(&self, slot: u32) -> f64 {
        self.growth_linear * self.arrival_rate0 * f64::from(slot).powf(self.growth_exponent)
    }

    /// `E[d^(-k alpha)]` for a distance uniform on the configured range.
    pub fn inverse_distance_moment(&self, k: f64) -> f64 {
        let (a, b) = (self.distance_min, self.distance_max);
        let e = 1.0 - k * self.path_loss_exp;
        if b <= a {
            return a.powf(-k * self.path_loss_exp);
        }
        if e.abs() < 1e-12 {
            (b / a).ln() / (b - a)
        } else {
            (b.powf(e) - a.powf(e)) / (e * (b - a))
        }
    }

    /// Mean and second moment of one arrival's received power with
    /// unit-mean exponential gain.
    pub fn arrival_power_moments(&self) -> (f64, f64) {
        let p = self.tx_power;
        (p * self.inverse_distance_moment(1.0), 2.0 * p * p * self.inverse_distance_moment(2.0))
    }

    /// Mean and variance of the interference added while moving into `slot`.
    pub fn increment_moments(&self, slot: u32) -> (f64, f64) {
        let m = self.arrival_mean(slot.max(1));
        let (e1, e2) = self.arrival_power_moments();
        (m * e1, m * e2)
    }

    /// One arrival with a uniform distance and unit-mean exponential gain.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> InterfererRecord {
        let gain_sq: f64 = Exp1.sample(rng);
        let distance = if self.distance_max > self.distance_min {
            Uniform::new(self.distance_min, self.distance_max).expect("valid range").sample(rng)
        } else {
            self.distance_min
        };
        InterfererRecord {
            tx_power: self.tx_power,
            gain_sq,
            distance,
            beta: self.tx_power * distance.powf(-self.path_loss_exp),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterferencePopulation {
    pub params: ArrivalParams,
    pub records: Vec<InterfererRecord>,
    pub total_power: f64,
}

impl InterferencePopulation {
    /// Population at slot 0 holding the initial interferers.
    pub fn initial<R: Rng + ?Sized>(params: ArrivalParams, rng: &mut R) -> Self {
        let records: Vec<_> = (0..params.initial_count).map(|_| params.draw(rng)).collect();
        let total_power = records.iter().map(InterfererRecord::power).sum();
        Self { params, records, total_power }
    }

    pub fn betas(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.beta).collect()
    }

    pub fn initial_count(&self) -> u32 {
        self.params.initial_count
    }
}

/// Appends the arrivals of the transition into `slot`.
pub fn step_interference<R: Rng + ?Sized>(
    pop: &InterferencePopulation,
    slot: u32,
    rng: &mut R,
) -> Result<InterferencePopulation, StressorError> {
    if slot == 0 {
        return Err(StressorError::NonPositiveSlot(slot));
    }
    let mean = pop.params.arrival_mean(slot);
    let n_add = if mean > 0.0 {
        Poisson::new(mean).expect("positive mean").sample(rng) as usize
    } else {
        0
    };
    let mut next = pop.clone();
    next.records.reserve(n_add);
    for _ in 0..n_add {
        let rec = pop.params.draw(rng);
        next.total_power += rec.power();
        next.records.push(rec);
    }
    Ok(next)
}

fn checked_rates(betas: &[f64], conv: RateConvention) -> Result<Vec<f64>, StressorError> {
    if betas.is_empty() {
        return Err(StressorError::EmptyBetas);
    }
    if let Some(&b) = betas.iter().find(|&&b| !(b > 0.0)) {
        return Err(StressorError::NonPositiveBeta(b));
    }
    Ok(betas.iter().map(|&b| conv.rate(b)).collect())
}

fn find_degenerate(rates: &[f64]) -> Option<(usize, usize)> {
    for i in 0..rates.len() {
        for j in i + 1..rates.len() {
            if (rates[i] - rates[j]).abs() <= 1e-9 * rates[i].max(rates[j]) {
                return Some((i, j));
            }
        }
    }
    None
}

/// Partial-fraction coefficients `prod(r) / prod_{k != j}(r_k - r_j)`.
fn partial_fraction_weights(rates: &[f64]) -> Vec<f64> {
    (0..rates.len())
        .map(|j| {
            rates
                .iter()
                .enumerate()
                .filter(|&(k, _)| k != j)
                .map(|(_, &rk)| rk / (rk - rates[j]))
                .product::<f64>()
                * rates[j]
        })
        .collect()
}

/// Hypoexponential density of aggregate interference at `l`.
pub fn interference_pdf(betas: &[f64], l: f64, conv: RateConvention) -> Result<f64, StressorError> {
    let rates = checked_rates(betas, conv)?;
    if let Some((i, j)) = find_degenerate(&rates) {
        return Err(StressorError::DegenerateRates(i, j));
    }
    if l < 0.0 {
        return Ok(0.0);
    }
    let w = partial_fraction_weights(&rates);
    let density: f64 = w.iter().zip(&rates).map(|(wj, rj)| wj * (-rj * l).exp()).sum();
    Ok(density.max(0.0))
}

/// Aggregate-interference density that switches to a numerical convolution
/// when rates coincide.
#[derive(Debug, Clone)]
pub enum InterferenceDensity {
    PartialFraction { rates: Vec<f64>, weights: Vec<f64> },
    Grid { step: f64, values: Vec<f64> },
}

impl InterferenceDensity {
    pub fn new(betas: &[f64], conv: RateConvention, grid_points: usize) -> Result<Self, StressorError> {
        let rates = checked_rates(betas, conv)?;
        if find_degenerate(&rates).is_none() {
            let weights = partial_fraction_weights(&rates);
            return Ok(Self::PartialFraction { rates, weights });
        }
        let mean: f64 = rates.iter().map(|r| 1.0 / r).sum();
        let sd = rates.iter().map(|r| 1.0 / (r * r)).sum::<f64>().sqrt();
        let max_scale = rates.iter().map(|r| 1.0 / r).fold(0.0, f64::max);
        let upper = mean + 12.0 * sd + 30.0 * max_scale;
        let n = grid_points.max(16);
        let step = upper / (n - 1) as f64;
        let mut values: Vec<f64> = (0..n).map(|i| rates[0] * (-rates[0] * i as f64 * step).exp()).collect();
        for &r in &rates[1..] {
            let decay = (-r * step).exp();
            let mut next = vec![0.0; n];
            for i in 1..n {
                next[i] = decay * next[i - 1] + 0.5 * r * step * (decay * values[i - 1] + values[i]);
            }
            values = next;
        }
        Ok(Self::Grid { step, values })
    }

    pub fn pdf(&self, l: f64) -> f64 {
        if l < 0.0 {
            return 0.0;
        }
        match self {
            Self::PartialFraction { rates, weights } => {
                let v: f64 = weights.iter().zip(rates).map(|(w, r)| w * (-r * l).exp()).sum();
                v.max(0.0)
            }
            Self::Grid { step, values } => {
                let x = l / step;
                let i = x.floor() as usize;
                if i + 1 >= values.len() {
                    return 0.0;
                }
                let frac = x - i as f64;
                values[i] * (1.0 - frac) + values[i + 1] * frac
            }
        }
    }

    pub fn is_fallback(&self) -> bool {
        matches!(self, Self::Grid { .. })
    }
}

/// Mean and variance of the aggregate interference for `betas`.
pub fn interference_moments(
    betas: &[f64],
    mode: MomentMode,
    conv: RateConvention,
) -> Result<(f64, f64), StressorError> {
    let rates = checked_rates(betas, conv)?;
    match mode {
        MomentMode::Exact => {
            let mean = rates.iter().map(|r| 1.0 / r).sum();
            let var = rates.iter().map(|r| 1.0 / (r * r)).sum();
            Ok((mean, var))
        }
        MomentMode::Literal => {
            if let Some((i, j)) = find_degenerate(&rates) {
                return Err(StressorError::DegenerateRates(i, j));
            }
            let w = partial_fraction_weights(&rates);
            let scale: Vec<f64> = rates.iter().map(|r| 1.0 / r).collect();
            let mean: f64 = w.iter().zip(&scale).map(|(w, s)| w * s).sum();
            let second: f64 = w.iter().zip(&scale).map(|(w, s)| 2.0 * w * s * s).sum();
            Ok((mean, second - mean * mean))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceProcess {
    pub initial_distance: f64,
    pub drift: f64,
    pub variance0: f64,
    pub variance_growth: f64,
    pub variance_volatility: f64,
    pub slot: u32,
    pub current_distance: f64,
    pub mean_path: f64,
    pub variance_envelope: f64,
}

impl DistanceProcess {
    pub fn new(initial_distance: f64, drift: f64, variance0: f64, variance_growth: f64, variance_volatility: f64) -> Self {
        Self {
            initial_distance,
            drift,
            variance0,
            variance_growth,
            variance_volatility,
            slot: 0,
            current_distance: initial_distance,
            mean_path: initial_distance,
            variance_envelope: 0.0,
        }
    }

    pub fn mean_path_at(&self, slot: f64) -> f64 {
        self.initial_distance + self.drift * slot
    }

    /// Integrated expected variance `(v0/eta)(e^(eta t) - 1)`.
    pub fn envelope_at(&self, slot: f64) -> f64 {
        let eta = self.variance_growth;
        if eta.abs() < 1e-12 {
            self.variance0 * slot
        } else {
            self.variance0 / eta * (eta * slot).exp_m1()
        }
    }

    /// Mean and variance of the distance change from the mean path at
    /// `slot` to the distance at `slot + 1`.
    pub fn increment_moments(&self, slot: u32) -> (f64, f64) {
        let s2 = self.envelope_at(f64::from(slot) + 1.0);
        (self.drift + (2.0 * s2 / PI).sqrt(), s2 * (1.0 - 2.0 / PI))
    }
}

/// Distance state at `slot`: mean path plus a half-normal fluctuation.
pub fn step_distance<R: Rng + ?Sized>(proc: &DistanceProcess, slot: u32, rng: &mut R) -> DistanceProcess {
    let t = f64::from(slot);
    let mean_path = proc.mean_path_at(t);
    let envelope = proc.envelope_at(t);
    let z: f64 = StandardNormal.sample(rng);
    DistanceProcess {
        slot,
        current_distance: mean_path + envelope.sqrt() * z.abs(),
        mean_path,
        variance_envelope: envelope,
        ..*proc
    }
}

/// Shifted half-normal density of the distance at `slot`.
pub fn distance_pdf(proc: &DistanceProcess, d: f64, slot: u32) -> f64 {
    let t = f64::from(slot);
    let shift = proc.mean_path_at(t);
    let s2 = proc.envelope_at(t);
    if d <= shift || !(s2 > 0.0) {
        return 0.0;
    }
    let u = d - shift;
    (2.0 / (PI * s2)).sqrt() * (-u * u / (2.0 * s2)).exp()
}

pub fn distance_moments(proc: &DistanceProcess, slot: u32) -> (f64, f64) {
    let t = f64::from(slot);
    let s2 = proc.envelope_at(t);
    (proc.mean_path_at(t) + (2.0 * s2 / PI).sqrt(), s2 * (1.0 - 2.0 / PI))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::integrate;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn table_arrivals() -> ArrivalParams {
        ArrivalParams {
            tx_power: 10f64.powf(0.5) * 1e-3,
            distance_min: 20.0,
            distance_max: 100.0,
            path_loss_exp: 3.5,
            initial_count: 5,
            arrival_rate0: 0.2,
            growth_linear: 0.8,
            growth_exponent: 0.7,
        }
    }

    fn table_distance() -> DistanceProcess {
        DistanceProcess::new(10.0, 0.2, 0.25, 0.4, 0.35)
    }

    #[test]
    fn zero_growth_keeps_population() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = ArrivalParams { growth_linear: 0.0, ..table_arrivals() };
        let pop = InterferencePopulation::initial(params, &mut rng);
        let next = step_interference(&pop, 7, &mut rng).unwrap();
        assert_eq!(next, pop);
        assert_eq!(step_interference(&pop, 0, &mut rng), Err(StressorError::NonPositiveSlot(0)));
    }

    #[test]
    fn arrivals_at_slot_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = table_arrivals();
        assert!((params.arrival_mean(1) - 0.16).abs() < 1e-15);
        let pop = InterferencePopulation::initial(params, &mut rng);
        let n = 100_000;
        let added: usize = (0..n)
            .map(|_| step_interference(&pop, 1, &mut rng).unwrap().records.len() - pop.records.len())
            .sum();
        assert!((added as f64 / n as f64 - 0.16).abs() < 0.01);
    }

    #[test]
    fn total_power_is_record_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut pop = InterferencePopulation::initial(table_arrivals(), &mut rng);
        for slot in 1..60 {
            let next = step_interference(&pop, slot, &mut rng).unwrap();
            let added: f64 = next.records[pop.records.len()..].iter().map(|r| r.tx_power * r.gain_sq * r.distance.powf(-3.5)).sum();
            assert!((next.total_power - (pop.total_power + added)).abs() <= 1e-12 * next.total_power);
            assert!(next.records.len() >= pop.records.len());
            assert!(next.records.iter().all(|r| (20.0..=100.0).contains(&r.distance) && r.beta > 0.0));
            pop = next;
        }
    }

    #[test]
    fn single_beta_density() {
        let beta = 1.7;
        let at0 = interference_pdf(&[beta], 0.0, RateConvention::Halved).unwrap();
        assert!((at0 - 1.0 / (2.0 * beta)).abs() < 1e-15);
        let at = interference_pdf(&[beta], 2.0, RateConvention::Halved).unwrap();
        assert!((at - (-2.0 / (2.0 * beta)).exp() / (2.0 * beta)).abs() < 1e-15);
    }

    #[test]
    fn two_beta_density_normalizes() {
        let (v, _) = integrate(|l| interference_pdf(&[1.0, 2.0], l, RateConvention::Halved).unwrap(), 0.0, 200.0, 1e-10);
        assert!((v - 1.0).abs() < 1e-6);
    }

    #[test]
    fn degenerate_rates_fall_back() {
        let betas = [1.0, 1.0, 2.0];
        assert_eq!(interference_pdf(&betas, 1.0, RateConvention::Halved), Err(StressorError::DegenerateRates(0, 1)));
        let dens = InterferenceDensity::new(&betas, RateConvention::Halved, 8192).unwrap();
        assert!(dens.is_fallback());
        let (v, _) = integrate(|l| dens.pdf(l), 0.0, 400.0, 1e-9);
        assert!((v - 1.0).abs() < 1e-4);
        // Erlang(2, 1/2) convolved with Exp(1/4) has a closed form.
        let exact = |l: f64| {
            let (a, b) = (0.5f64, 0.25f64);
            let c = a * a * b;
            c * ((-b * l).exp() / ((a - b) * (a - b)) - (-a * l).exp() * (1.0 / ((a - b) * (a - b)) + l / (a - b)))
        };
        for l in [0.5, 2.0, 6.0, 15.0] {
            assert!((dens.pdf(l) - exact(l)).abs() < 1e-4, "l = {l}");
        }
    }

    #[test]
    fn exact_moment_examples() {
        assert_eq!(interference_moments(&[3.0], MomentMode::Exact, RateConvention::Halved).unwrap(), (6.0, 36.0));
        assert_eq!(interference_moments(&[1.0, 2.0, 4.0], MomentMode::Exact, RateConvention::Halved).unwrap(), (14.0, 84.0));
        assert_eq!(interference_moments(&[3.0], MomentMode::Exact, RateConvention::Sampled).unwrap(), (3.0, 9.0));
        assert_eq!(interference_moments(&[], MomentMode::Exact, RateConvention::Halved), Err(StressorError::EmptyBetas));
    }

    #[test]
    fn literal_mean_is_one() {
        for betas in [vec![3.0], vec![1.0, 2.0, 4.0], vec![1e-9, 3e-9]] {
            let (m, _) = interference_moments(&betas, MomentMode::Literal, RateConvention::Halved).unwrap();
            assert!((m - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn distance_slot_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = step_distance(&table_distance(), 0, &mut rng);
        assert_eq!(p.variance_envelope, 0.0);
        assert_eq!(p.current_distance, p.mean_path);
        assert_eq!(distance_moments(&table_distance(), 0), (10.0, 0.0));
    }

    #[test]
    fn distance_moment_reference() {
        let proc = table_distance();
        let s2 = 0.625 * (0.4f64.exp() - 1.0);
        assert!((proc.envelope_at(1.0) - 0.30739).abs() < 1e-5);
        let (m, v) = distance_moments(&proc, 1);
        assert!((m - 10.6424).abs() < 1e-4);
        assert!((v - 0.11172).abs() < 5e-5);
        assert!((v - s2 * (1.0 - 2.0 / PI)).abs() < 1e-15);
        for slot in 1..100 {
            let (_, v) = distance_moments(&proc, slot);
            assert!((v / proc.envelope_at(f64::from(slot)) - (1.0 - 2.0 / PI)).abs() < 1e-14);
        }
    }

    #[test]
    fn distance_density_peak_and_support() {
        let proc = table_distance();
        let shift = proc.mean_path_at(3.0);
        let s = proc.envelope_at(3.0).sqrt();
        let peak = distance_pdf(&proc, shift + 1e-9, 3);
        assert!((peak / (2f64.sqrt() / (s * PI.sqrt())) - 1.0).abs() < 1e-12);
        assert_eq!(distance_pdf(&proc, shift - 0.1, 3), 0.0);
    }

    #[test]
    fn ensemble_distance_mean() {
        let proc = table_distance();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for slot in [1, 10, 40] {
            let n = 100_000;
            let mean = (0..n).map(|_| step_distance(&proc, slot, &mut rng).current_distance).sum::<f64>() / n as f64;
            let (want, _) = distance_moments(&proc, slot);
            assert!((mean / want - 1.0).abs() < 0.01);
        }
    }

    #[test]
    fn envelope_small_time() {
        let proc = table_distance();
        let ratio = proc.envelope_at(0.01) / (0.25 * 0.01);
        assert!((ratio - 1.0).abs() < 0.02);
    }
}
