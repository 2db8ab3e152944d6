//! Chance-constrained power and antenna allocation for restoring the limit
//! state after failure.

use crate::intolerance::{IntoleranceError, IntoleranceGaussian, SlotContext};
use crate::special::{norm_cdf, norm_ppf};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AllocError {
    #[error("invalid allocation constraints: {0}")]
    Constraints(&'static str),
    #[error("stationarity bisection did not converge in {0} iterations")]
    NonConvergence(u32),
    #[error("gain list holds {have} antennas, {need} requested")]
    MissingGains { have: usize, need: usize },
    #[error(transparent)]
    Intolerance(#[from] IntoleranceError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AllocationConstraints {
    pub p_max_per_level: f64,
    pub p_total: f64,
    pub n_max: usize,
    pub alpha: f64,
    pub tol: f64,
    pub levels: u32,
    pub steps_per_level: u32,
}

impl Default for AllocationConstraints {
    fn default() -> Self {
        Self { p_max_per_level: 2.0, p_total: 10.0, n_max: 30, alpha: 0.05, tol: 1e-9, levels: 10, steps_per_level: 1 }
    }
}

impl AllocationConstraints {
    pub fn validate(&self) -> Result<(), AllocError> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(AllocError::Constraints("alpha must lie in (0, 1)"));
        }
        if !(self.tol > 0.0) {
            return Err(AllocError::Constraints("tol must be positive"));
        }
        if self.n_max < 1 {
            return Err(AllocError::Constraints("n_max must be at least 1"));
        }
        if !(self.p_max_per_level > 0.0 && self.p_total >= self.p_max_per_level) {
            return Err(AllocError::Constraints("need p_total >= p_max_per_level > 0"));
        }
        if self.levels < 1 || self.steps_per_level < 1 {
            return Err(AllocError::Constraints("levels and steps_per_level must be at least 1"));
        }
        Ok(())
    }

    /// Quantile multiplier with `alpha` clamped away from zero.
    pub fn quantile(&self) -> f64 {
        norm_ppf(1.0 - self.alpha.clamp(1e-6, 1.0 - 1e-6))
    }
}

/// Slot state seen by the solver. `base_power` is the transmit power
/// already committed; a decision adds a level increment on top of it.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationState {
    pub context: SlotContext,
    pub gains: Vec<f64>,
    pub base_power: f64,
    pub antennas: usize,
    pub budget_used: f64,
    pub p_ji_minus: f64,
}

impl AllocationState {
    pub fn gaussian(&self, power: f64, antennas: usize) -> Result<IntoleranceGaussian, AllocError> {
        if antennas == 0 || antennas > self.gains.len() {
            return Err(AllocError::MissingGains { have: self.gains.len(), need: antennas });
        }
        let link = self.context.link.with_gains(&self.gains[..antennas]).expect("non-empty gains");
        let ctx = SlotContext { link: crate::link::LinkParams { tx_power: self.base_power + power, ..link }, ..self.context };
        Ok(ctx.gaussian()?)
    }
}

/// `f + z g` at a level increment `power` and antenna count.
pub fn reduced_objective(power: f64, antennas: usize, state: &AllocationState, alpha: f64) -> Result<f64, AllocError> {
    let g = state.gaussian(power, antennas)?;
    let z = norm_ppf(1.0 - alpha.clamp(1e-6, 1.0 - 1e-6));
    Ok(g.mean + z * g.std)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActiveConstraint {
    Interior,
    AtZero,
    AtPmax,
    AtBudget,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Multipliers {
    pub lower: f64,
    pub upper: f64,
    pub budget: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AllocationDecision {
    /// Level increment on top of the committed power.
    pub power: f64,
    pub total_power: f64,
    pub antennas: usize,
    pub margin: f64,
    pub objective: f64,
    pub mean: f64,
    pub std: f64,
    pub kkt_residual: f64,
    pub active_constraint: ActiveConstraint,
    pub multipliers: Multipliers,
    pub upper_bound: f64,
    pub budget_used: f64,
    pub p_total: f64,
    pub flat: bool,
}

impl AllocationDecision {
    /// `Phi((margin + 1 - P- - f) / g)`, the confidence the chance
    /// constraint holds with.
    pub fn chance_confidence(&self, p_ji_minus: f64) -> f64 {
        if self.std > 0.0 {
            norm_cdf((self.margin + 1.0 - p_ji_minus - self.mean) / self.std)
        } else if self.margin + 1.0 - p_ji_minus - self.mean >= 0.0 {
            1.0
        } else {
            0.0
        }
    }

    /// Largest complementary-slackness product.
    pub fn slackness_residual(&self) -> f64 {
        let m = self.multipliers;
        let spent = self.budget_used + self.power;
        (m.lower * self.power)
            .abs()
            .max((m.upper * (self.power - self.upper_bound)).abs())
            .max((m.budget * (spent - self.p_total)).abs())
    }
}

fn decide(
    state: &AllocationState,
    constraints: &AllocationConstraints,
    power: f64,
    antennas: usize,
    upper: f64,
) -> Result<AllocationDecision, AllocError> {
    let g = state.gaussian(power, antennas)?;
    let z = constraints.quantile();
    let objective = g.mean + z * g.std;
    Ok(AllocationDecision {
        power,
        total_power: state.base_power + power,
        antennas,
        margin: objective + state.p_ji_minus - 1.0,
        objective,
        mean: g.mean,
        std: g.std,
        kkt_residual: 0.0,
        active_constraint: ActiveConstraint::Interior,
        multipliers: Multipliers::default(),
        upper_bound: upper,
        budget_used: state.budget_used,
        p_total: constraints.p_total,
        flat: false,
    })
}

/// Optimal level increment with the antenna count held fixed.
pub fn solve_power(state: &AllocationState, constraints: &AllocationConstraints) -> Result<AllocationDecision, AllocError> {
    constraints.validate()?;
    let budget_left = (constraints.p_total - state.budget_used).max(0.0);
    let upper = constraints.p_max_per_level.min(budget_left);
    let budget_binds = budget_left < constraints.p_max_per_level;
    let n = state.antennas;
    let objective = |p: f64| reduced_objective(p, n, state, constraints.alpha);
    if upper <= 0.0 {
        let mut d = decide(state, constraints, 0.0, n, 0.0)?;
        d.active_constraint = ActiveConstraint::AtBudget;
        return Ok(d);
    }

    let h = 1e-3 * constraints.p_max_per_level;
    let derivative = |p: f64| -> Result<f64, AllocError> {
        let (lo, hi) = ((p - h).max(0.0), (p + h).min(upper));
        Ok((objective(hi)? - objective(lo)?) / (hi - lo))
    };

    let restarts = 8;
    let grid: Vec<f64> = (0..=restarts).map(|i| upper * i as f64 / restarts as f64).collect();
    let slopes = grid.iter().map(|&p| derivative(p)).collect::<Result<Vec<_>, _>>()?;
    let values = grid.iter().map(|&p| objective(p)).collect::<Result<Vec<_>, _>>()?;
    let spread = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - values.iter().cloned().fold(f64::INFINITY, f64::min);
    if spread <= 1e-14 * values[0].abs().max(1.0) {
        let mut d = decide(state, constraints, 0.0, n, upper)?;
        d.active_constraint = ActiveConstraint::AtZero;
        d.multipliers.lower = slopes[0].max(0.0);
        d.kkt_residual = slopes[0].abs();
        d.flat = true;
        return Ok(d);
    }

    let max_iter = ((upper / constraints.tol).log2().ceil().max(0.0) as u32) + 8;
    let mut candidates = vec![0.0, upper];
    for w in 0..restarts {
        let (mut a, mut b) = (grid[w], grid[w + 1]);
        if !(slopes[w] < 0.0 && slopes[w + 1] > 0.0) {
            continue;
        }
        let mut iter = 0;
        while b - a > constraints.tol {
            iter += 1;
            if iter > max_iter {
                return Err(AllocError::NonConvergence(max_iter));
            }
            let mid = 0.5 * (a + b);
            if derivative(mid)? < 0.0 {
                a = mid;
            } else {
                b = mid;
            }
        }
        candidates.push(0.5 * (a + b));
    }

    let mut best = (f64::INFINITY, 0.0);
    for &p in &candidates {
        let f = objective(p)?;
        if f < best.0 {
            best = (f, p);
        }
    }
    let p_star = best.1;
    let mut d = decide(state, constraints, p_star, n, upper)?;
    let slope = derivative(p_star)?;
    if p_star == 0.0 {
        d.active_constraint = ActiveConstraint::AtZero;
        d.multipliers.lower = slope.max(0.0);
        d.kkt_residual = (-slope).max(0.0);
    } else if p_star == upper {
        d.active_constraint = if budget_binds { ActiveConstraint::AtBudget } else { ActiveConstraint::AtPmax };
        let mult = (-slope).max(0.0);
        if budget_binds {
            d.multipliers.budget = mult;
        } else {
            d.multipliers.upper = mult;
        }
        d.kkt_residual = slope.max(0.0);
    } else {
        d.kkt_residual = slope.abs();
    }
    Ok(d)
}

/// Antenna count minimising the objective with the level power held fixed.
pub fn solve_antennas(
    state: &AllocationState,
    constraints: &AllocationConstraints,
    power: f64,
) -> Result<AllocationDecision, AllocError> {
    constraints.validate()?;
    let n_max = constraints.n_max.min(state.gains.len());
    if n_max == 0 {
        return Err(AllocError::MissingGains { have: state.gains.len(), need: constraints.n_max });
    }
    let mut best: Option<(f64, usize)> = None;
    for n in 1..=n_max {
        let f = reduced_objective(power, n, state, constraints.alpha)?;
        if best.is_none_or(|(bf, _)| f < bf) {
            best = Some((f, n));
        }
    }
    let (_, n) = best.expect("n_max >= 1");
    decide(state, constraints, power, n, power)
}

/// Exhaustive grid minimiser of the objective over `[0, upper]`.
pub fn grid_argmin(state: &AllocationState, alpha: f64, upper: f64, points: usize) -> Result<f64, AllocError> {
    let mut best = (f64::INFINITY, 0.0);
    for i in 0..points {
        let p = upper * i as f64 / (points - 1) as f64;
        let f = reduced_objective(p, state.antennas, state, alpha)?;
        if f < best.0 {
            best = (f, p);
        }
    }
    Ok(best.1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AllocatorMode {
    Off,
    Power,
    Antennas,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RestorationStatus {
    Active,
    Restored,
    BudgetExhausted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum StepOutcome {
    Adjust { level: u32, decision: AllocationDecision },
    Hold,
    Restored,
    Exhausted,
}

/// Per-episode controller: holds while the risk exposure rate improves and
/// re-solves at the next level when it worsens.
#[derive(Debug, Clone, PartialEq)]
pub struct Restorer {
    pub mode: AllocatorMode,
    pub constraints: AllocationConstraints,
    pub target: f64,
    pub level: u32,
    pub steps_in_level: u32,
    pub extra_power: f64,
    pub antennas: usize,
    pub status: RestorationStatus,
}

impl Restorer {
    pub fn new(mode: AllocatorMode, constraints: AllocationConstraints, target: f64, antennas: usize) -> Self {
        Self {
            mode,
            constraints,
            target,
            level: 0,
            steps_in_level: 0,
            extra_power: 0.0,
            antennas,
            status: RestorationStatus::Active,
        }
    }

    /// Limit-state target of the current level.
    pub fn level_target(&self) -> f64 {
        f64::from(self.level) / f64::from(self.constraints.levels)
    }

    fn advance(&mut self, state: &AllocationState) -> Result<StepOutcome, AllocError> {
        if self.level >= self.constraints.levels {
            self.status = RestorationStatus::BudgetExhausted;
            return Ok(StepOutcome::Exhausted);
        }
        self.level += 1;
        self.steps_in_level = 0;
        let decision = match self.mode {
            AllocatorMode::Power | AllocatorMode::Off => solve_power(state, &self.constraints)?,
            AllocatorMode::Antennas => solve_antennas(state, &self.constraints, 0.0)?,
        };
        self.extra_power += decision.power;
        self.antennas = decision.antennas;
        Ok(StepOutcome::Adjust { level: self.level, decision })
    }

    /// First decision at the failure slot.
    pub fn activate(&mut self, state: &AllocationState) -> Result<StepOutcome, AllocError> {
        self.advance(state)
    }

    /// One restoration slot given the current limit state and the risk
    /// exposure rates of this and the previous transition.
    pub fn step(&mut self, g: f64, arer_now: f64, arer_prev: f64, state: &AllocationState) -> Result<StepOutcome, AllocError> {
        if self.status != RestorationStatus::Active {
            return Ok(StepOutcome::Hold);
        }
        if g >= self.target {
            self.status = RestorationStatus::Restored;
            return Ok(StepOutcome::Restored);
        }
        if arer_now <= arer_prev {
            return Ok(StepOutcome::Hold);
        }
        self.steps_in_level += 1;
        if self.steps_in_level < self.constraints.steps_per_level {
            return Ok(StepOutcome::Hold);
        }
        self.advance(state)
    }
}
