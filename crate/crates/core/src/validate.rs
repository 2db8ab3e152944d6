//! Oracle checks run by the `validate` command.

use crate::allocator::{reduced_objective, solve_power, AllocationDecision, AllocationState};
use crate::config::{ScenarioConfig, StressorSet};
use crate::intolerance::{jitter_moments, SlotContext};
use crate::link::{delay_at, delay_partial_distance, delay_partial_interference, EventProbs, StressorPoint};
use crate::oracle::{convolved_peak, one_step_jitter, sample_moments, Events};
use crate::quad::integrate;
use crate::rng::{stream, Purpose};
use crate::simulator::{trial_states, SimError};
use crate::stressors::{
    distance_moments, distance_pdf, interference_moments, step_distance, InterferenceDensity, InterferencePopulation,
    MomentMode,
};
use rand::Rng;
use rand_distr::{Distribution, Exp};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckStatus {
    Pass,
    Fail,
    /// Expected divergence, reported but not gating.
    Info,
}

impl fmt::Display for CheckStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CheckStatus::Pass => "PASS",
            CheckStatus::Fail => "FAIL",
            CheckStatus::Info => "INFO",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckRow {
    pub name: String,
    pub measured: f64,
    pub tolerance: f64,
    pub status: CheckStatus,
}

impl CheckRow {
    fn gate(name: &str, measured: f64, tolerance: f64) -> Self {
        let status = if measured <= tolerance { CheckStatus::Pass } else { CheckStatus::Fail };
        Self { name: name.to_owned(), measured, tolerance, status }
    }

    fn info(name: &str, measured: f64, tolerance: f64) -> Self {
        Self { name: name.to_owned(), measured, tolerance, status: CheckStatus::Info }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub rows: Vec<CheckRow>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.status != CheckStatus::Fail)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(5).max(5);
        writeln!(f, "{:<width$}  {:>12}  {:>12}  status", "check", "measured", "tolerance")?;
        for r in &self.rows {
            writeln!(f, "{:<width$}  {:>12.4e}  {:>12.4e}  {}", r.name, r.measured, r.tolerance, r.status)?;
        }
        Ok(())
    }
}

/// Oracle sizes. The defaults match the acceptance tolerances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationSizes {
    pub monte_carlo: usize,
    pub laplace_states: usize,
    pub grid_points: usize,
    pub allocator_scenarios: usize,
}

impl Default for ValidationSizes {
    fn default() -> Self {
        Self { monte_carlo: 1_000_000, laplace_states: 20, grid_points: 10_000, allocator_scenarios: 8 }
    }
}

fn relative(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

pub fn run_validation(cfg: &ScenarioConfig, sizes: ValidationSizes) -> Result<ValidationReport, SimError> {
    cfg.validate()?;
    let mut rows = Vec::new();
    let mut rng = stream(cfg.seed, 0, Purpose::Oracle);
    let arrivals = cfg.arrivals();
    let process = cfg.distance_process();
    let n = sizes.monte_carlo;

    let pop = InterferencePopulation::initial(arrivals, &mut rng);
    let betas = pop.betas();
    let density = InterferenceDensity::new(&betas, cfg.rate_convention, cfg.convolution_grid)?;
    let (mean, var) = interference_moments(&betas, MomentMode::Exact, cfg.rate_convention)?;
    let upper = mean + 40.0 * var.sqrt();
    let (norm, _) = integrate(|l| density.pdf(l), 0.0, upper, 1e-12);
    rows.push(CheckRow::gate("interference density normalization", (norm - 1.0).abs(), 1e-6));

    let (dmean, dvar) = distance_moments(&process, 1);
    let shift = process.mean_path_at(1.0);
    let (dnorm, _) = integrate(|d| distance_pdf(&process, d, 1), shift, dmean + 40.0 * dvar.sqrt(), 1e-12);
    rows.push(CheckRow::gate("distance density normalization", (dnorm - 1.0).abs(), 1e-6));

    let degenerate = vec![betas[0]; 3];
    let fallback = InterferenceDensity::new(&degenerate, cfg.rate_convention, cfg.convolution_grid)?;
    let (fm, fv) = interference_moments(&degenerate, MomentMode::Exact, cfg.rate_convention)?;
    let (fnorm, _) = integrate(|l| fallback.pdf(l), 0.0, fm + 40.0 * fv.sqrt(), 1e-10);
    let fallback_err = if fallback.is_fallback() { (fnorm - 1.0).abs() } else { f64::INFINITY };
    rows.push(CheckRow::gate("degenerate-rate fallback normalization", fallback_err, 1e-3));

    let rates: Vec<f64> = betas.iter().map(|&b| cfg.rate_convention.rate(b)).collect();
    let exps: Vec<Exp<f64>> = rates.iter().map(|&r| Exp::new(r).expect("positive rate")).collect();
    let (smean, svar) = sample_moments(|| exps.iter().map(|e| e.sample(&mut rng)).sum(), n);
    rows.push(CheckRow::gate("interference moments vs Monte Carlo", relative(mean, smean).max(relative(var, svar)), 0.01));

    let (smean, svar) = sample_moments(|| step_distance(&process, 1, &mut rng).current_distance, n);
    rows.push(CheckRow::gate("distance moments vs Monte Carlo", relative(dmean, smean).max(relative(dvar, svar)), 0.01));

    if cfg.moment_mode == MomentMode::Literal {
        let single = [betas[0]];
        let (exact, _) = interference_moments(&single, MomentMode::Exact, cfg.rate_convention)?;
        let (literal, _) = interference_moments(&single, MomentMode::Literal, cfg.rate_convention)?;
        rows.push(CheckRow::info("single-interferer literal mean divergence", relative(literal, exact), 0.01));
    }

    // Delta-method moments at the mean initial state, first transition.
    let link = cfg.link();
    let z0 = f64::from(cfg.initial_interferers) * arrivals.arrival_power_moments().0;
    let d0 = cfg.initial_distance;
    let m = crate::intolerance::StressorMoments {
        interference_mean: arrivals.increment_moments(1).0,
        interference_var: arrivals.increment_moments(1).1,
        distance_mean: process.increment_moments(0).0,
        distance_var: process.increment_moments(0).1,
    };
    let sens_d = delay_partial_distance(&link, z0, d0)?;
    let sens_i = delay_partial_interference(&link, z0, d0, cfg.sensitivity_form)?;
    let events = Events { interference: cfg.stressors.interference(), distance: cfg.stressors.distance() };
    let delta = jitter_moments(sens_d, sens_i, &m, events.interference, events.distance, 0.0);
    let brute = one_step_jitter(&link, &arrivals, &process, z0, d0, 0, events, n, &mut rng)?;
    let err = relative(delta.mean, brute.mean).max(relative(delta.variance, brute.variance));
    rows.push(CheckRow::gate("delta-method jitter moments vs one-step oracle", err, 0.05));

    let states = sampled_states(cfg, sizes.laplace_states.max(sizes.allocator_scenarios))?;
    let mut laplace_err: f64 = 0.0;
    for (ctx, _, _) in states.iter().take(sizes.laplace_states) {
        let g = ctx.gaussian()?;
        let peak = convolved_peak(&g.components, g.support_hi, 4096);
        laplace_err = laplace_err.max((peak - g.mean).abs() / g.support_hi);
    }
    rows.push(CheckRow::gate("Laplace peak vs grid convolution (support fraction)", laplace_err, 0.02));

    let mut fd_err: f64 = 0.0;
    for (ctx, _, _) in &states {
        let (z, d) = (ctx.point.interference, ctx.point.distance);
        let (hz, hd) = (z * 1e-4, d * 1e-5);
        let fd_i = (delay_at(&ctx.link, z + hz, d)? - delay_at(&ctx.link, z - hz, d)?) / (2.0 * hz);
        let fd_d = (delay_at(&ctx.link, z, d + hd)? - delay_at(&ctx.link, z, d - hd)?) / (2.0 * hd);
        fd_err = fd_err
            .max(relative(delay_partial_interference(&ctx.link, z, d, cfg.sensitivity_form)?, fd_i))
            .max(relative(delay_partial_distance(&ctx.link, z, d)?, fd_d));
    }
    rows.push(CheckRow::gate("sensitivities vs central differences", fd_err, 1e-5));

    let constraints = cfg.constraints();
    let (mut grid_steps, mut chance, mut slack): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for state in regression_states(cfg, sizes.allocator_scenarios)? {
        let d = solve_power(&state, &constraints)?;
        grid_steps = grid_steps.max(grid_offset(&state, &d, constraints.alpha, sizes.grid_points)?);
        chance = chance.max((1.0 - constraints.alpha - d.chance_confidence(state.p_ji_minus)).max(0.0));
        slack = slack.max(d.slackness_residual());
    }
    rows.push(CheckRow::gate("bisection optimum vs grid argmin (grid steps)", grid_steps, 2.0));
    rows.push(CheckRow::gate("chance constraint shortfall at optimum", chance, 1e-9));
    rows.push(CheckRow::gate("complementary slackness residual", slack, 1e-9));
    Ok(ValidationReport { rows })
}

/// Distance in grid steps from the solver's optimum to the nearest grid
/// point whose objective is within rounding of the grid minimum.
pub fn grid_offset(state: &AllocationState, d: &AllocationDecision, alpha: f64, points: usize) -> Result<f64, SimError> {
    if d.upper_bound == 0.0 {
        return Ok(0.0);
    }
    let step = d.upper_bound / (points - 1) as f64;
    let values = (0..points)
        .map(|i| {
            let p = step * i as f64;
            reduced_objective(p, state.antennas, state, alpha).map(|f| (p, f))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let f_min = values.iter().map(|v| v.1).fold(f64::INFINITY, f64::min);
    let tie = 1e-12 * f_min.abs().max(1.0);
    Ok(values
        .iter()
        .filter(|v| v.1 <= f_min + tie)
        .map(|v| (d.power - v.0).abs() / step)
        .fold(f64::INFINITY, f64::min))
}

/// Allocator scenarios: simulated slot states at several budget levels plus
/// hand-built states whose optimum sits at zero, at the cap, or inside.
pub fn regression_states(cfg: &ScenarioConfig, simulated: usize) -> Result<Vec<AllocationState>, SimError> {
    let mut out: Vec<AllocationState> = sampled_states(cfg, simulated)?
        .into_iter()
        .enumerate()
        .map(|(k, (ctx, gains, sample))| AllocationState {
            context: ctx,
            gains,
            base_power: ctx.link.tx_power,
            antennas: ctx.link.n_antennas,
            budget_used: [0.0, 4.0, 9.0][k % 3],
            p_ji_minus: sample.p_ji_minus,
        })
        .collect();
    let probs = EventProbs { interference: cfg.p_interference.max(0.5), distance: cfg.p_distance.max(0.5) };
    let built = [
        (8e-8, 3e-8, 14.0, 12.0, 5),
        (1e-9, 1e-12, 10.0, 10.0, 1),
        (1e-6, 1e-9, 30.0, 10.0, 20),
        (1e-12, 1e-7, 10.0, 40.0, 3),
        (1e-10, 1e-8, 50.0, 10.0, 10),
        (5e-11, 1e-9, 10.5, 10.0, 2),
    ];
    let full = ScenarioConfig { stressors: StressorSet::Both, ..cfg.clone() };
    for (interference, interference_prev, distance, mean_distance_prev, slot) in built {
        let context = SlotContext {
            link: cfg.link(),
            point: StressorPoint { interference, interference_prev, distance, mean_distance_prev },
            moments: full.increment_moments(slot),
            probs,
            form: cfg.sensitivity_form,
            curvature: cfg.laplace_curvature,
        };
        out.push(AllocationState {
            context,
            gains: vec![1.0; cfg.n_max.max(1)],
            base_power: cfg.tx_power,
            antennas: 1,
            budget_used: 0.0,
            p_ji_minus: 0.5,
        });
    }
    Ok(out)
}

/// Slot states spread over the horizon across a few trials, used by the
/// Laplace, sensitivity and allocator checks.
pub fn sampled_states(
    cfg: &ScenarioConfig,
    count: usize,
) -> Result<Vec<(SlotContext, Vec<f64>, crate::resilience::ResilienceSample)>, SimError> {
    let run = ScenarioConfig { stressors: StressorSet::Both, ..cfg.clone() };
    let per_trial = 5usize;
    let mut out = Vec::with_capacity(count);
    let mut pick = stream(cfg.seed, 1, Purpose::Oracle);
    let mut trial = 0;
    while out.len() < count {
        let states = trial_states(&run, trial)?;
        for _ in 0..per_trial.min(count - out.len()) {
            let i = pick.random_range(0..states.len());
            out.push(states[i].clone());
        }
        trial += 1;
    }
    Ok(out)
}
