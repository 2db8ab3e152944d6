//! End-to-end acceptance checks. Each test prints one PASS/FAIL line with
//! the measured value next to its tolerance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use std::fs;
use v2v_jitter::allocator::{solve_power, ActiveConstraint, AllocatorMode, StepOutcome};
use v2v_jitter::config::{ScenarioConfig, StressorSet};
use v2v_jitter::intolerance::jitter_moments;
use v2v_jitter::link::{delay_at, sensitivity_distance, sensitivity_interference, EventProbs, SensitivityForm, StressorPoint};
use v2v_jitter::oracle::{convolved_peak, one_step_jitter, sample_moments, Events};
use v2v_jitter::output::{write_simulation, DECISIONS_JSON, ENSEMBLE_CSV, TRAJECTORY_CSV};
use v2v_jitter::quad::integrate;
use v2v_jitter::resilience::{capacity, limit_state, load, Phase};
use v2v_jitter::simulator::{estimate_crossing, run_ensemble, run_trial};
use v2v_jitter::stressors::{
    distance_moments, distance_pdf, interference_moments, step_distance, ArrivalParams, DistanceProcess,
    InterferenceDensity, InterferencePopulation, MomentMode, RateConvention,
};
use v2v_jitter::validate::{grid_offset, regression_states, sampled_states};

const ENSEMBLE_TRIALS: u64 = 10_000;

fn threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn report(id: u32, name: &str, pass: bool, detail: &str) {
    println!("criterion {id:>2} {name}: {} | {detail}", if pass { "PASS" } else { "FAIL" });
}

fn relative(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

#[test]
fn criterion_01_metric_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for _ in 0..1_000_000 {
        let (p_plus, p_minus): (f64, f64) = (rng.random(), rng.random());
        let (c, d, g) = (capacity(p_plus, p_minus), load(p_plus, p_minus), limit_state(p_plus, p_minus));
        worst = worst.max((c + d - 1.0).abs()).max((g - (c - d)).abs());
    }
    let mut slot_worst: f64 = 0.0;
    for stressors in [StressorSet::Both, StressorSet::Interference, StressorSet::Distance] {
        for allocator in [AllocatorMode::Off, AllocatorMode::Power] {
            let cfg = ScenarioConfig { stressors, allocator, ..Default::default() };
            for trial in 0..50 {
                for s in run_trial(&cfg, trial).unwrap().samples {
                    slot_worst = slot_worst.max((s.capacity + s.load - 1.0).abs()).max((s.limit_state - (s.capacity - s.load)).abs());
                }
            }
        }
    }
    let pass = worst <= 1e-15 && slot_worst <= 1e-15;
    report(1, "metric identities", pass, &format!("random pairs {worst:.2e}, simulated slots {slot_worst:.2e}, tol 1e-15"));
    assert!(pass);
}

#[test]
fn criterion_02_density_normalization() {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let (mut worst_i, mut worst_d): (f64, f64) = (0.0, 0.0);
    for _ in 0..50 {
        let params = ArrivalParams {
            tx_power: 10f64.powf(rng.random_range(0.0..10.0) / 10.0) * 1e-3,
            distance_min: rng.random_range(10.0..40.0),
            distance_max: rng.random_range(60.0..150.0),
            path_loss_exp: rng.random_range(2.0..4.0),
            initial_count: rng.random_range(1..=10),
            arrival_rate0: 0.2,
            growth_linear: 0.8,
            growth_exponent: 0.7,
        };
        let betas = InterferencePopulation::initial(params, &mut rng).betas();
        let conv = RateConvention::Halved;
        let density = InterferenceDensity::new(&betas, conv, 4096).unwrap();
        let (m, v) = interference_moments(&betas, MomentMode::Exact, conv).unwrap();
        let (norm, _) = integrate(|l| density.pdf(l), 0.0, m + 40.0 * v.sqrt(), 1e-12);
        worst_i = worst_i.max((norm - 1.0).abs());

        let process = DistanceProcess::new(
            rng.random_range(5.0..20.0),
            rng.random_range(0.0..0.5),
            rng.random_range(0.1..0.5),
            rng.random_range(0.1..0.6),
            0.35,
        );
        let slot = rng.random_range(1..=30);
        let (dm, dv) = distance_moments(&process, slot);
        let shift = process.mean_path_at(f64::from(slot));
        let (dnorm, _) = integrate(|d| distance_pdf(&process, d, slot), shift, dm + 40.0 * dv.sqrt(), 1e-12);
        worst_d = worst_d.max((dnorm - 1.0).abs());
    }
    let pass = worst_i <= 1e-6 && worst_d <= 1e-6;
    report(2, "density normalization", pass, &format!("interference {worst_i:.2e}, distance {worst_d:.2e}, tol 1e-6"));
    assert!(pass);
}

#[test]
fn criterion_03_oracle_moment_agreement() {
    let n = 1_000_000;
    let cfg = ScenarioConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut interference_err: f64 = 0.0;
    let sampled = InterferencePopulation::initial(cfg.arrivals(), &mut rng).betas();
    for betas in [vec![1.0, 2.0, 4.0], sampled] {
        let (m, v) = interference_moments(&betas, MomentMode::Exact, cfg.rate_convention).unwrap();
        let exps: Vec<_> = betas.iter().map(|&b| Exp::new(cfg.rate_convention.rate(b)).unwrap()).collect();
        let (sm, sv) = sample_moments(|| exps.iter().map(|e| e.sample(&mut rng)).sum(), n);
        interference_err = interference_err.max(relative(m, sm)).max(relative(v, sv));
    }
    let process = cfg.distance_process();
    let mut distance_err: f64 = 0.0;
    for slot in [1, 10, 30] {
        let (m, v) = distance_moments(&process, slot);
        let (sm, sv) = sample_moments(|| step_distance(&process, slot, &mut rng).current_distance, n);
        distance_err = distance_err.max(relative(m, sm)).max(relative(v, sv));
    }

    // First transition out of the mean initial state, both stressors active.
    let link = cfg.link();
    let arrivals = cfg.arrivals();
    let z0 = f64::from(cfg.initial_interferers) * arrivals.arrival_power_moments().0;
    let d0 = cfg.initial_distance;
    let m = cfg.increment_moments(0);
    let at = StressorPoint::at(z0, d0);
    let joint = EventProbs { interference: 1.0, distance: 1.0 };
    let sd = sensitivity_distance(&link, &at, joint).unwrap();
    let si = sensitivity_interference(&link, &at, joint, cfg.sensitivity_form).unwrap();
    let delta = jitter_moments(sd, si, &m, true, true, 0.0);
    let events = Events { interference: true, distance: true };
    let brute = one_step_jitter(&link, &arrivals, &process, z0, d0, 0, events, n, &mut rng).unwrap();
    let delta_err = relative(delta.mean, brute.mean).max(relative(delta.variance, brute.variance));

    let pass = interference_err <= 0.01 && distance_err <= 0.01 && delta_err <= 0.05;
    report(
        3,
        "oracle moment agreement",
        pass,
        &format!(
            "interference {interference_err:.4} / 0.01, distance {distance_err:.4} / 0.01, delta method {delta_err:.4} / 0.05"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_04_laplace_fidelity() {
    let cfg = ScenarioConfig::default();
    let states = sampled_states(&cfg, 20).unwrap();
    let mut errors = Vec::new();
    for (ctx, _, _) in &states {
        let g = ctx.gaussian().unwrap();
        let peak = convolved_peak(&g.components, g.support_hi, 4096);
        errors.push((peak - g.mean).abs() / g.support_hi);
    }
    let worst = errors.iter().copied().fold(0.0, f64::max);
    let within = errors.iter().filter(|&&e| e <= 0.02).count();
    let pass = worst <= 0.02;
    report(
        4,
        "Laplace fidelity",
        pass,
        &format!("worst peak offset {worst:.4} of support, tol 0.02; {within}/{} states within", errors.len()),
    );
    assert!(pass);
}

#[test]
fn criterion_05_sensitivity_correctness() {
    let cfg = ScenarioConfig::default();
    let link = cfg.link();
    let probs = EventProbs { interference: cfg.p_interference, distance: cfg.p_distance };
    let w = probs.branch_weights();
    let mut worst: f64 = 0.0;
    for i in 0..10 {
        for j in 0..10 {
            let z = 1e-9 * 10f64.powf(0.3 * i as f64);
            let d = 10.0 + 3.0 * j as f64;
            let at = StressorPoint { interference: z, interference_prev: 0.7 * z, distance: d, mean_distance_prev: d - 0.4 };
            let delay = |zz: f64, dd: f64| delay_at(&link, zz, dd).unwrap();
            let central = |f: &dyn Fn(f64) -> f64, x: f64, h: f64| (f(x + h) - f(x - h)) / (2.0 * h);
            let hd = 1e-5 * d;
            let fd_d = w[0] * central(&|x| delay(at.interference, x), d, hd)
                + w[1] * central(&|x| delay(at.interference_prev, x), d, hd);
            let hz = 1e-4 * z;
            let fd_i = w[0] * central(&|x| delay(x, d), z, hz)
                + w[2] * central(&|x| delay(x, at.mean_distance_prev), z, hz);
            let sd = sensitivity_distance(&link, &at, probs).unwrap();
            let si = sensitivity_interference(&link, &at, probs, SensitivityForm::Corrected).unwrap();
            worst = worst.max(relative(sd, fd_d)).max(relative(si, fd_i));
        }
    }
    let pass = worst <= 1e-5;
    report(5, "sensitivity correctness", pass, &format!("worst relative error {worst:.2e}, tol 1e-5"));
    assert!(pass);
}

#[test]
fn criterion_06_failure_crossing() {
    let mut lines = Vec::new();
    let mut pass = true;
    for (stressors, lo, hi) in [(StressorSet::Interference, 28.0, 40.0), (StressorSet::Distance, 45.0, 60.0)] {
        let cfg = ScenarioConfig { stressors, ..Default::default() };
        let e = run_ensemble(&cfg, ENSEMBLE_TRIALS, threads()).unwrap();
        match estimate_crossing(&e.stats) {
            Ok(c) => {
                pass &= (lo..=hi).contains(&c.median);
                lines.push(format!("{stressors:?} median {} in [{lo}, {hi}]", c.median));
            }
            Err(_) => {
                pass = false;
                let g_min = e.stats.slots.iter().map(|s| s.limit_state).fold(f64::INFINITY, f64::min);
                lines.push(format!("{stressors:?} no crossing (min mean G {g_min:.3}), want [{lo}, {hi}]"));
            }
        }
    }
    report(6, "failure-crossing reproduction", pass, &lines.join("; "));
    assert!(pass);
}

#[test]
fn criterion_07_antenna_sweep() {
    let capacity_at = |stressors, antennas, slot: usize| {
        let cfg = ScenarioConfig { stressors, antennas, ..Default::default() };
        run_ensemble(&cfg, ENSEMBLE_TRIALS, threads()).unwrap().stats.slots[slot].capacity
    };
    let distance: Vec<f64> = [1, 10, 20, 30].iter().map(|&n| capacity_at(StressorSet::Distance, n, 60)).collect();
    let distance_target = [0.15, 0.35, 0.43, 0.65];
    let increasing = distance.windows(2).all(|w| w[1] > w[0]);
    let distance_close = distance.iter().zip(distance_target).all(|(c, t)| (c - t).abs() <= 0.10);
    let interference: Vec<f64> = [30, 1].iter().map(|&n| capacity_at(StressorSet::Interference, n, 40)).collect();
    let interference_target = [0.22, 0.49];
    let ordered = interference[0] < interference[1];
    let interference_close = interference.iter().zip(interference_target).all(|(c, t)| (c - t).abs() <= 0.10);
    let pass = increasing && distance_close && ordered && interference_close;
    report(
        7,
        "antenna-sweep reproduction",
        pass,
        &format!(
            "distance C(60) for N=1,10,20,30: {:.4?} want {distance_target:?} increasing; interference C(40) for N=30,1: {:.4?} want {interference_target:?}",
            distance, interference
        ),
    );
    assert!(pass);
}

/// Mean risk exposure rate before and after the first failure, pooled over
/// trials.
fn arer_slopes(cfg: &ScenarioConfig, trials: u64) -> (Option<f64>, Option<f64>, u64) {
    let e = run_ensemble(cfg, trials, threads()).unwrap();
    let (alarming, restoration) = (e.stats.arer_in(Phase::Alarming), e.stats.arer_in(Phase::Restoration));
    let failed = e.stats.summaries.iter().filter(|s| s.failure_slot.is_some()).count() as u64;
    (alarming, restoration, failed)
}

#[test]
fn criterion_08_arer_reversal() {
    let cfg = ScenarioConfig { allocator: AllocatorMode::Power, ..Default::default() };
    let (alarming, recovery, failed) = arer_slopes(&cfg, ENSEMBLE_TRIALS);
    let ratio = match (alarming, recovery) {
        (Some(a), Some(r)) if a != 0.0 => Some(r.abs() / a.abs()),
        _ => None,
    };
    let negative = recovery.is_some_and(|r| r < 0.0);
    let pass = negative && ratio.is_some_and(|r| r >= 2.0);
    let band = ratio.is_some_and(|r| (r - 3.17).abs() <= 0.35 * 3.17);
    report(
        8,
        "ARER reversal",
        pass,
        &format!(
            "{failed} of {ENSEMBLE_TRIALS} trials failed; alarming {alarming:?}, recovery {recovery:?}, ratio {ratio:?} (need recovery < 0 and ratio >= 2; within 3.17 +/- 35%: {band})"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_09_restoration_speed() {
    let cfg = ScenarioConfig { allocator: AllocatorMode::Power, ..Default::default() };
    let e = run_ensemble(&cfg, ENSEMBLE_TRIALS, threads()).unwrap();
    let activated: Vec<_> = e.stats.summaries.iter().filter(|s| s.failure_slot.is_some()).collect();
    let mut slots: Vec<u32> = activated.iter().filter_map(|s| s.slots_to_capacity_99).collect();
    slots.sort_unstable();
    let median = (slots.len() * 2 > activated.len()).then(|| slots[activated.len() / 2]);
    let best_capacity = e.stats.slots.iter().map(|s| s.capacity).fold(0.0, f64::max);
    let pass = !activated.is_empty() && median.is_some_and(|m| m <= 12);
    report(
        9,
        "restoration speed",
        pass,
        &format!(
            "{} activations, {} reached C >= 0.99, median slots {median:?} (need <= 12); best ensemble C {best_capacity:.3}",
            activated.len(),
            slots.len()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_10_allocator_soundness() {
    let (mut chance, mut slack, mut decisions) = (0.0f64, 0.0f64, 0usize);
    for mode in [AllocatorMode::Power, AllocatorMode::Antennas] {
        let cfg = ScenarioConfig { allocator: mode, ..Default::default() };
        let alpha = cfg.alpha;
        for trial in 0..40 {
            let t = run_trial(&cfg, trial).unwrap();
            for d in &t.decisions {
                if let StepOutcome::Adjust { decision, .. } = &d.outcome {
                    let p_minus = t.samples[d.slot as usize].p_ji_minus;
                    chance = chance.max((1.0 - alpha) - decision.chance_confidence(p_minus));
                    slack = slack.max(decision.slackness_residual());
                    decisions += 1;
                }
            }
        }
    }

    let cfg = ScenarioConfig::default();
    let constraints = cfg.constraints();
    let mut worst_steps: f64 = 0.0;
    let states = regression_states(&cfg, 12).unwrap();
    let mut interior = 0;
    for state in &states {
        let d = solve_power(state, &constraints).unwrap();
        interior += usize::from(d.active_constraint == ActiveConstraint::Interior);
        worst_steps = worst_steps.max(grid_offset(state, &d, constraints.alpha, 10_000).unwrap());
        chance = chance.max((1.0 - constraints.alpha) - d.chance_confidence(state.p_ji_minus));
        slack = slack.max(d.slackness_residual());
    }
    let pass = chance <= 1e-9 && slack <= 1e-9 && worst_steps <= 2.0;
    report(
        10,
        "allocator soundness",
        pass,
        &format!(
            "{decisions} simulated decisions + {} regression states ({interior} interior); chance shortfall {chance:.2e}, slackness {slack:.2e} (tol 1e-9), grid offset {worst_steps:.3} steps (tol 2)",
            states.len()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_11_determinism() {
    let cfg = ScenarioConfig { allocator: AllocatorMode::Power, trials: 600, ..Default::default() };
    let root = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for threads in [1, 4, 8] {
        let dir = root.path().join(format!("p{threads}"));
        let e = run_ensemble(&cfg, u64::from(cfg.trials), threads).unwrap();
        write_simulation(&dir, &cfg, &e, 0.0).unwrap();
        let read = |name| fs::read(dir.join(name)).unwrap();
        outputs.push((read(ENSEMBLE_CSV), read(TRAJECTORY_CSV), read(DECISIONS_JSON)));
    }
    let pass = outputs.windows(2).all(|w| w[0] == w[1]);
    report(11, "determinism", pass, &format!("{} trials, parallelism 1/4/8 byte-identical: {pass}", cfg.trials));
    assert!(pass);
}
