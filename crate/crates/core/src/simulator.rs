//! Per-trial trajectories and Monte Carlo ensembles over the resilience cycle.

use crate::allocator::{AllocError, AllocationDecision, AllocationState, AllocatorMode, Restorer, RestorationStatus, StepOutcome};
use crate::config::{ConfigError, ScenarioConfig};
use crate::intolerance::SlotContext;
use crate::link::{delay_at, step_jitter_state, EventProbs, JitterState, LinkError, StressorPoint, Transition};
use crate::resilience::{Phase, PhaseTracker, ResilienceSample};
use crate::rng::TrialStreams;
use crate::stressors::{step_distance, step_interference, InterferencePopulation, StressorError};
use rand::Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Link(#[from] LinkError),
    #[error(transparent)]
    Stressor(#[from] StressorError),
    #[error(transparent)]
    Alloc(#[from] AllocError),
    #[error(transparent)]
    Intolerance(#[from] crate::intolerance::IntoleranceError),
    #[error("thread pool: {0}")]
    Pool(String),
    #[error("no trial reached G <= 0 within the horizon")]
    NoCrossing,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlotTrace {
    pub interference: f64,
    pub distance: f64,
    pub interferers: usize,
    pub power: f64,
    pub antennas: usize,
    pub jitter: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub slot: u32,
    pub outcome: StepOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub seed: u64,
    pub trial: u64,
    pub samples: Vec<ResilienceSample>,
    pub trace: Vec<SlotTrace>,
    pub decisions: Vec<DecisionRecord>,
    pub failure_slot: Option<u32>,
    pub restored_slot: Option<u32>,
    pub restoration_status: Option<RestorationStatus>,
}

impl Trajectory {
    /// Slots from failure until capacity first reaches `level`.
    pub fn slots_to_capacity(&self, level: f64) -> Option<u32> {
        let tf = self.failure_slot?;
        self.samples.iter().skip(tf as usize + 1).find(|s| s.capacity >= level).map(|s| s.slot - tf)
    }

    pub fn final_decision(&self) -> Option<&AllocationDecision> {
        self.decisions.iter().rev().find_map(|d| match &d.outcome {
            StepOutcome::Adjust { decision, .. } => Some(decision),
            _ => None,
        })
    }
}

fn draw_gains<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(Exp1)).collect()
}

/// Per-slot inputs handed to a trial observer.
#[derive(Debug, Clone, Copy)]
pub struct SlotView<'a> {
    pub context: &'a SlotContext,
    pub gains: &'a [f64],
    pub sample: &'a ResilienceSample,
}

/// Runs trial `trial` of the scenario. Deterministic in `(config, trial)`.
pub fn run_trial(cfg: &ScenarioConfig, trial: u64) -> Result<Trajectory, SimError> {
    run_trial_observed(cfg, trial, |_| {})
}

/// Slot contexts and samples of one trial, for offline checks.
pub fn trial_states(cfg: &ScenarioConfig, trial: u64) -> Result<Vec<(SlotContext, Vec<f64>, ResilienceSample)>, SimError> {
    let mut out = Vec::new();
    run_trial_observed(cfg, trial, |v| out.push((*v.context, v.gains.to_vec(), *v.sample)))?;
    Ok(out)
}

pub fn run_trial_observed(
    cfg: &ScenarioConfig,
    trial: u64,
    mut observe: impl FnMut(SlotView<'_>),
) -> Result<Trajectory, SimError> {
    cfg.validate()?;
    let mut streams = TrialStreams::new(cfg.seed, trial);
    let base_link = cfg.link();
    let restoration = cfg.allocator != AllocatorMode::Off;
    let n_gains = cfg.n_max.max(cfg.antennas);
    let probs = EventProbs {
        interference: if cfg.stressors.interference() { cfg.p_interference } else { 0.0 },
        distance: if cfg.stressors.distance() { cfg.p_distance } else { 0.0 },
    };

    let mut pop = InterferencePopulation::initial(cfg.arrivals(), &mut streams.interference);
    let start = cfg.distance_process();
    let mut dist = step_distance(&start, 0, &mut streams.distance);
    let mut tracker = PhaseTracker::new(cfg.thresholds(), restoration);
    let mut restorer = Restorer::new(cfg.allocator, cfg.constraints(), cfg.restoration_target, cfg.antennas);
    let mut jitter: Option<JitterState> = None;

    let capacity = cfg.horizon as usize + 1;
    let mut samples: Vec<ResilienceSample> = Vec::with_capacity(capacity);
    let mut trace = Vec::with_capacity(capacity);
    let mut decisions = Vec::new();
    let (mut prev_interference, mut prev_distance) = (pop.total_power, dist.current_distance);
    let mut prev_plus: Option<f64> = None;

    for slot in 0..=cfg.horizon {
        if slot > 0 {
            if cfg.stressors.interference() {
                pop = step_interference(&pop, slot, &mut streams.interference)?;
            }
            if cfg.stressors.distance() {
                dist = step_distance(&start, slot, &mut streams.distance);
            }
        }
        let gains = draw_gains(n_gains, &mut streams.fading);
        let antennas = restorer.antennas;
        let power = cfg.tx_power + restorer.extra_power;
        let link = crate::link::LinkParams { tx_power: power, ..base_link.with_gains(&gains[..antennas])? };

        let mean_distance_prev = if cfg.stressors.distance() { start.mean_path_at(f64::from(slot.max(1) - 1)) } else { start.initial_distance };
        let point = StressorPoint {
            interference: pop.total_power,
            interference_prev: prev_interference,
            distance: dist.current_distance,
            mean_distance_prev,
        };
        let ctx = SlotContext {
            link,
            point,
            moments: cfg.increment_moments(slot),
            probs,
            form: cfg.sensitivity_form,
            curvature: cfg.laplace_curvature,
        };
        let (sens_d, sens_i) = ctx.sensitivities()?;
        let p_plus = crate::intolerance::intolerance_probability(sens_d, sens_i, &ctx.moments, probs);
        let p_minus = prev_plus.unwrap_or(p_plus);
        let g = crate::resilience::limit_state(p_plus, p_minus);
        let phase = tracker.observe(slot, g);
        let sample = ResilienceSample::new(slot, p_minus, p_plus, cfg.arer_delta, phase);
        observe(SlotView { context: &ctx, gains: &gains, sample: &sample });

        if restoration {
            let state = || AllocationState {
                context: ctx,
                gains: gains.clone(),
                base_power: power,
                antennas,
                budget_used: restorer.extra_power,
                p_ji_minus: p_minus,
            };
            let outcome = if tracker.failure_slot() == Some(slot) {
                Some(restorer.activate(&state())?)
            } else if tracker.failure_slot().is_some_and(|tf| slot > tf) && restorer.status == RestorationStatus::Active {
                let arer_prev = samples.last().map_or(sample.arer, |s| s.arer);
                Some(restorer.step(g, sample.arer, arer_prev, &state())?)
            } else {
                None
            };
            if let Some(outcome) = outcome {
                decisions.push(DecisionRecord { slot, outcome });
            }
        }

        let delay = delay_at(&link, point.interference, point.distance)?;
        let mut js = jitter.unwrap_or_else(|| JitterState::new(delay, probs));
        js.sens_distance = sens_d;
        js.sens_interference = sens_i;
        if slot > 0 {
            let step = Transition {
                interference: prev_interference,
                distance: prev_distance,
                d_interference: point.interference - prev_interference,
                d_distance: point.distance - prev_distance,
            };
            js = step_jitter_state(&js, &link, &step, cfg.sojourn_rate, cfg.recursion, &mut streams.events)?;
        }
        jitter = Some(js);

        debug_assert!((sample.capacity + sample.load - 1.0).abs() <= 1e-15);
        debug_assert!(p_plus <= probs.support() + 1e-12);
        trace.push(SlotTrace {
            interference: point.interference,
            distance: point.distance,
            interferers: pop.records.len(),
            power,
            antennas,
            jitter: js.jitter,
        });
        samples.push(sample);
        prev_plus = Some(p_plus);
        prev_interference = point.interference;
        prev_distance = point.distance;
    }

    Ok(Trajectory {
        seed: cfg.seed,
        trial,
        samples,
        trace,
        decisions,
        failure_slot: tracker.failure_slot(),
        restored_slot: tracker.restored_slot(),
        restoration_status: restoration.then_some(restorer.status).filter(|_| tracker.failure_slot().is_some()),
    })
}

/// Per-slot running sums, accumulated in trial order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct Moments {
    sum: f64,
    sum_sq: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.sum += x;
        self.sum_sq += x * x;
    }

    fn mean(&self, n: f64) -> f64 {
        self.sum / n
    }

    fn stderr(&self, n: f64) -> f64 {
        if n < 2.0 {
            return 0.0;
        }
        let mean = self.sum / n;
        let var = ((self.sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
        (var / n).sqrt()
    }
}

#[derive(Debug, Clone, Default)]
struct SlotAccumulator {
    p_minus: Moments,
    p_plus: Moments,
    capacity: Moments,
    load: Moments,
    limit_state: Moments,
    arer: Moments,
    power: Moments,
    antennas: Moments,
    phases: [u64; 4],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlotStats {
    pub slot: u32,
    pub p_ji_minus: f64,
    pub p_ji_plus: f64,
    pub capacity: f64,
    pub capacity_se: f64,
    pub load: f64,
    pub load_se: f64,
    pub limit_state: f64,
    pub limit_state_se: f64,
    pub arer: f64,
    pub arer_se: f64,
    pub p_ji_plus_se: f64,
    pub power: f64,
    pub antennas: f64,
    pub phase: Phase,
    pub phase_counts: [u64; 4],
}

/// Compact per-trial summary kept by the ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub trial: u64,
    pub failure_slot: Option<u32>,
    pub restored_slot: Option<u32>,
    pub slots_to_capacity_99: Option<u32>,
    pub restoration_status: Option<RestorationStatus>,
    pub adjustments: usize,
    pub final_decision: Option<AllocationDecision>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub trials: u64,
    pub slots: Vec<SlotStats>,
    pub summaries: Vec<TrialSummary>,
    /// Mean risk exposure rate over all (trial, slot) pairs in each phase.
    pub arer_by_phase: Vec<(Phase, Option<f64>)>,
}

impl EnsembleStats {
    pub fn arer_in(&self, phase: Phase) -> Option<f64> {
        self.arer_by_phase.iter().find(|(p, _)| *p == phase).and_then(|(_, v)| *v)
    }
}

#[derive(Debug, Clone)]
pub struct Ensemble {
    pub stats: EnsembleStats,
    pub first: Trajectory,
}

const CHUNK: u64 = 256;

/// Runs `n_trials` trials on `parallelism` threads. Results do not depend on
/// the thread count.
pub fn run_ensemble(cfg: &ScenarioConfig, n_trials: u64, parallelism: usize) -> Result<Ensemble, SimError> {
    cfg.validate()?;
    let n_trials = n_trials.max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| SimError::Pool(e.to_string()))?;
    let slots = cfg.horizon as usize + 1;
    let mut acc = vec![SlotAccumulator::default(); slots];
    let mut phase_arer = [Moments::default(), Moments::default(), Moments::default(), Moments::default()];
    let mut phase_n = [0u64; 4];
    let mut summaries = Vec::with_capacity(n_trials as usize);
    let mut first = None;

    let mut start = 0;
    while start < n_trials {
        let end = (start + CHUNK).min(n_trials);
        let chunk: Vec<Trajectory> =
            pool.install(|| (start..end).into_par_iter().map(|t| run_trial(cfg, t)).collect::<Result<Vec<_>, _>>())?;
        for traj in chunk {
            for (a, (s, tr)) in acc.iter_mut().zip(traj.samples.iter().zip(&traj.trace)) {
                a.p_minus.push(s.p_ji_minus);
                a.p_plus.push(s.p_ji_plus);
                a.capacity.push(s.capacity);
                a.load.push(s.load);
                a.limit_state.push(s.limit_state);
                a.arer.push(s.arer);
                a.power.push(tr.power);
                a.antennas.push(tr.antennas as f64);
                a.phases[s.phase as usize] += 1;
                phase_arer[s.phase as usize].push(s.arer);
                phase_n[s.phase as usize] += 1;
            }
            summaries.push(TrialSummary {
                trial: traj.trial,
                failure_slot: traj.failure_slot,
                restored_slot: traj.restored_slot,
                slots_to_capacity_99: traj.slots_to_capacity(0.99),
                restoration_status: traj.restoration_status,
                adjustments: traj.decisions.iter().filter(|d| matches!(d.outcome, StepOutcome::Adjust { .. })).count(),
                final_decision: traj.final_decision().copied(),
            });
            if first.is_none() {
                first = Some(traj);
            }
        }
        start = end;
    }

    let n = n_trials as f64;
    let slot_stats = acc
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let modal = (0..4).max_by_key(|&k| (a.phases[k], std::cmp::Reverse(k))).expect("four phases");
            SlotStats {
                slot: i as u32,
                p_ji_minus: a.p_minus.mean(n),
                p_ji_plus: a.p_plus.mean(n),
                p_ji_plus_se: a.p_plus.stderr(n),
                capacity: a.capacity.mean(n),
                capacity_se: a.capacity.stderr(n),
                load: a.load.mean(n),
                load_se: a.load.stderr(n),
                limit_state: a.limit_state.mean(n),
                limit_state_se: a.limit_state.stderr(n),
                arer: a.arer.mean(n),
                arer_se: a.arer.stderr(n),
                power: a.power.mean(n),
                antennas: a.antennas.mean(n),
                phase: Phase::ALL[modal],
                phase_counts: a.phases,
            }
        })
        .collect();
    let arer_by_phase = Phase::ALL
        .iter()
        .map(|&p| {
            let k = p as usize;
            (p, (phase_n[k] > 0).then(|| phase_arer[k].mean(phase_n[k] as f64)))
        })
        .collect();
    Ok(Ensemble {
        stats: EnsembleStats { trials: n_trials, slots: slot_stats, summaries, arer_by_phase },
        first: first.expect("at least one trial"),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossingStats {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub iqr: f64,
    pub crossed: u64,
    pub trials: u64,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Median and interquartile range of the per-trial first failure slot.
///
/// Trials that never fail count as failing after the horizon, so the median
/// reflects the whole ensemble.
pub fn estimate_crossing(stats: &EnsembleStats) -> Result<CrossingStats, SimError> {
    let horizon = stats.slots.len() as f64;
    let mut slots: Vec<f64> =
        stats.summaries.iter().map(|s| s.failure_slot.map_or(f64::INFINITY, f64::from)).collect();
    let crossed = slots.iter().filter(|s| s.is_finite()).count() as u64;
    if crossed == 0 {
        return Err(SimError::NoCrossing);
    }
    slots.sort_by(f64::total_cmp);
    let capped: Vec<f64> = slots.iter().map(|&s| if s.is_finite() { s } else { horizon }).collect();
    let (q1, median, q3) = (quantile(&capped, 0.25), quantile(&capped, 0.5), quantile(&capped, 0.75));
    Ok(CrossingStats { median, q1, q3, iqr: q3 - q1, crossed, trials: stats.trials })
}
