//! Brute-force estimators used to cross-check the closed forms.

use crate::intolerance::{JitterMoments, LaplaceComponent};
use crate::link::{delay_at, LinkError, LinkParams};
use crate::special::{erf_inv, norm_cdf};
use crate::stressors::{ArrivalParams, DistanceProcess};
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use thiserror::Error;

pub const MIN_SAMPLES: usize = 10_000;

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("need at least {MIN_SAMPLES} samples, got {0}")]
    TooFewSamples(usize),
    #[error("bin count must be positive")]
    NoBins,
    #[error("sampler produced a non-finite value")]
    NonFinite,
}

/// Normalized histogram over the sample range.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub edges: Vec<f64>,
    /// Fraction of samples per bin.
    pub mass: Vec<f64>,
}

impl Histogram {
    pub fn width(&self, i: usize) -> f64 {
        self.edges[i + 1] - self.edges[i]
    }

    pub fn density(&self, i: usize) -> f64 {
        let w = self.width(i);
        if w > 0.0 {
            self.mass[i] / w
        } else {
            f64::INFINITY
        }
    }

    pub fn occupied(&self) -> usize {
        self.mass.iter().filter(|&&m| m > 0.0).count()
    }

    /// L1 distance to a density, counting the density's mass outside the
    /// sampled range as error.
    pub fn l1_distance(&self, pdf: impl Fn(f64) -> f64) -> f64 {
        let mut inside = 0.0;
        let mut err = 0.0;
        for (i, &m) in self.mass.iter().enumerate() {
            let (a, b) = (self.edges[i], self.edges[i + 1]);
            let p = (b - a) * (pdf(a) + 4.0 * pdf(0.5 * (a + b)) + pdf(b)) / 6.0;
            inside += p;
            err += (m - p).abs();
        }
        err + (1.0 - inside).max(0.0)
    }
}

pub fn empirical_pdf(mut sampler: impl FnMut() -> f64, n: usize, bins: usize) -> Result<Histogram, OracleError> {
    if n < MIN_SAMPLES {
        return Err(OracleError::TooFewSamples(n));
    }
    if bins == 0 {
        return Err(OracleError::NoBins);
    }
    let xs: Vec<f64> = (0..n).map(|_| sampler()).collect();
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(OracleError::NonFinite);
    }
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi == lo {
        return Ok(Histogram { edges: vec![lo, hi], mass: vec![1.0] });
    }
    let h = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for x in xs {
        let i = (((x - lo) / h) as usize).min(bins - 1);
        counts[i] += 1;
    }
    Ok(Histogram {
        edges: (0..=bins).map(|i| lo + h * i as f64).collect(),
        mass: counts.into_iter().map(|c| c as f64 / n as f64).collect(),
    })
}

/// Mean and variance of `n` streamed samples.
pub fn sample_moments(mut sampler: impl FnMut() -> f64, n: usize) -> (f64, f64) {
    let (mut mean, mut m2) = (0.0, 0.0);
    for k in 1..=n {
        let x = sampler();
        let d = x - mean;
        mean += d / k as f64;
        m2 += d * (x - mean);
    }
    (mean, m2 / (n.max(2) - 1) as f64)
}

/// Aggregate received power of the arrivals in the transition into `slot`.
pub fn sample_arrival_increment<R: Rng + ?Sized>(arrivals: &ArrivalParams, slot: u32, rng: &mut R) -> f64 {
    let mean = arrivals.arrival_mean(slot.max(1));
    if mean <= 0.0 {
        return 0.0;
    }
    let n = Poisson::new(mean).expect("positive mean").sample(rng) as usize;
    (0..n).map(|_| arrivals.draw(rng).power()).sum()
}

/// Distance change from the mean path at `slot` to the state at `slot + 1`.
pub fn sample_distance_increment<R: Rng + ?Sized>(process: &DistanceProcess, slot: u32, rng: &mut R) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    process.drift + process.envelope_at(f64::from(slot) + 1.0).sqrt() * z.abs()
}

/// Which stressors move in a one-step transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Events {
    pub interference: bool,
    pub distance: bool,
}

/// Sample moments of the exact delay change over one transition out of
/// `(interference, distance)` at `slot`.
#[allow(clippy::too_many_arguments)]
pub fn one_step_jitter<R: Rng + ?Sized>(
    link: &LinkParams,
    arrivals: &ArrivalParams,
    process: &DistanceProcess,
    interference: f64,
    distance: f64,
    slot: u32,
    events: Events,
    n: usize,
    rng: &mut R,
) -> Result<JitterMoments, LinkError> {
    let base = delay_at(link, interference, distance)?;
    let mut failure = None;
    let (mean, variance) = sample_moments(
        || {
            let dz = if events.interference { sample_arrival_increment(arrivals, slot + 1, rng) } else { 0.0 };
            let dd = if events.distance { sample_distance_increment(process, slot, rng) } else { 0.0 };
            match delay_at(link, interference + dz, distance + dd) {
                Ok(d) => d - base,
                Err(e) => {
                    failure.get_or_insert(e);
                    0.0
                }
            }
        },
        n,
    );
    match failure {
        Some(e) => Err(e),
        None => Ok(JitterMoments { mean, variance }),
    }
}

/// Mean integrated variance `E[int_0^t v ds]` of the geometric variance
/// process, by Euler–Maruyama with `steps` steps per path.
pub fn euler_maruyama_envelope<R: Rng + ?Sized>(
    process: &DistanceProcess,
    t: f64,
    steps: usize,
    paths: usize,
    rng: &mut R,
) -> f64 {
    let dt = t / steps as f64;
    let sdt = dt.sqrt();
    let (eta, xi) = (process.variance_growth, process.variance_volatility);
    let total: f64 = (0..paths)
        .map(|_| {
            let mut v = process.variance0;
            let mut integral = 0.0;
            for _ in 0..steps {
                let z: f64 = StandardNormal.sample(rng);
                let next = v + eta * v * dt + xi * v * sdt * z;
                integral += 0.5 * (v + next) * dt;
                v = next;
            }
            integral
        })
        .sum();
    total / paths as f64
}

/// CDF of `weight/2 (1 + erf(X))` with `X ~ N(mode, 1/curvature)`.
fn component_cdf(c: &LaplaceComponent, y: f64) -> f64 {
    if y <= 0.0 {
        return 0.0;
    }
    if y >= c.weight {
        return 1.0;
    }
    if c.mode == f64::INFINITY {
        return 0.0;
    }
    if c.mode == f64::NEG_INFINITY {
        return 1.0;
    }
    let x = erf_inv(2.0 * y / c.weight - 1.0);
    norm_cdf((x - c.mode) * c.curvature.sqrt())
}

/// Peak location of the numerically convolved branch densities on a
/// `points`-bin grid over `[0, support_hi]`.
pub fn convolved_peak(components: &[LaplaceComponent], support_hi: f64, points: usize) -> f64 {
    let h = support_hi / points as f64;
    let active: Vec<_> = components.iter().filter(|c| c.weight > 0.0).collect();
    let mut density: Option<Vec<f64>> = None;
    for c in &active {
        let masses: Vec<f64> =
            (0..points).map(|i| component_cdf(c, h * (i + 1) as f64) - component_cdf(c, h * i as f64)).collect();
        density = Some(match density {
            None => masses,
            Some(acc) => (0..points).map(|n| (0..=n).map(|i| acc[i] * masses[n - i]).sum()).collect(),
        });
    }
    let Some(density) = density else { return 0.0 };
    // Each convolution of bin masses shifts the centre by half a bin.
    let offset = 0.5 * active.len() as f64;
    let peak = density
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    (peak as f64 + offset) * h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::intolerance::Branch;
    use crate::rng::{stream, Purpose};
    use rand_distr::Exp;

    #[test]
    fn constant_sampler_single_bin() {
        let h = empirical_pdf(|| 3.5, 20_000, 50).unwrap();
        assert_eq!(h.occupied(), 1);
        assert_eq!((h.edges[0], h.mass[0]), (3.5, 1.0));
        assert_eq!(empirical_pdf(|| 1.0, 100, 10), Err(OracleError::TooFewSamples(100)));
    }

    #[test]
    fn exponential_histogram_distance() {
        let mut rng = stream(11, 0, Purpose::Oracle);
        let exp = Exp::new(0.5).unwrap();
        let h = empirical_pdf(|| exp.sample(&mut rng), 200_000, 200).unwrap();
        let l1 = h.l1_distance(|x| if x < 0.0 { 0.0 } else { 0.5 * (-0.5 * x).exp() });
        assert!(l1 < 0.03, "{l1}");
        let wrong = h.l1_distance(|x| if x < 0.0 { 0.0 } else { (-x).exp() });
        assert!(wrong > 0.2);
    }

    #[test]
    fn envelope_matches_closed_form() {
        let p = DistanceProcess::new(10.0, 0.2, 0.25, 0.4, 0.35);
        let mut rng = stream(3, 0, Purpose::Oracle);
        let em = euler_maruyama_envelope(&p, 1.0, 200, 20_000, &mut rng);
        assert!((em - 0.30739).abs() / 0.30739 < 0.01, "{em}");
    }

    fn comp(mode: f64, curvature: f64, weight: f64) -> LaplaceComponent {
        LaplaceComponent { branch: Branch::Joint, mode, curvature, weight, mean: 0.0, std: 0.0 }
    }

    #[test]
    fn single_component_peak() {
        // With k = 4 the density of w/2(1+erf X) is proportional to exp(-x^2).
        let peak = convolved_peak(&[comp(0.0, 4.0, 0.5)], 0.5, 4096);
        assert!((peak - 0.25).abs() < 2.0 / 4096.0, "{peak}");
        let sat = convolved_peak(&[comp(f64::INFINITY, 2.0, 0.5)], 0.5, 1024);
        assert!((sat - 0.5).abs() < 1e-3);
    }
}
