use std::fs;
use std::path::Path;
use v2v_jitter::config::{ScenarioConfig, StressorSet};
use v2v_jitter::intolerance::jitter_moments;
use v2v_jitter::link::{delay_partial_distance, delay_partial_interference};
use v2v_jitter::oracle::{one_step_jitter, Events};
use v2v_jitter::output::{write_simulation, ENSEMBLE_CSV, MANIFEST_JSON, TRAJECTORY_CSV};
use v2v_jitter::rng::{stream, Purpose};
use v2v_jitter::simulator::{run_ensemble, trial_states};
use v2v_jitter::stressors::{InterferenceDensity, MomentMode, RateConvention};
use v2v_jitter::validate::{run_validation, CheckStatus, ValidationSizes};

fn relative(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

/// Linearized jitter moments against brute-force one-step sampling at the
/// states a simulated trial actually visits.
#[test]
fn delta_method_early_slots() {
    let cfg = ScenarioConfig { stressors: StressorSet::Both, horizon: 30, ..Default::default() };
    let states = trial_states(&cfg, 0).unwrap();
    let (arrivals, process) = (cfg.arrivals(), cfg.distance_process());
    let mut rng = stream(cfg.seed, 0, Purpose::Oracle);
    let events = Events { interference: true, distance: true };
    let mut worst = (0.0, 0);
    for (ctx, _, sample) in states.iter().filter(|s| (1..=30).contains(&s.2.slot)) {
        let slot = sample.slot;
        let z = ctx.point.interference;
        let d = process.mean_path_at(f64::from(slot));
        let sd = delay_partial_distance(&ctx.link, z, d).unwrap();
        let si = delay_partial_interference(&ctx.link, z, d, cfg.sensitivity_form).unwrap();
        let m = cfg.increment_moments(slot);
        let lin = jitter_moments(sd, si, &m, true, true, 0.0);
        let brute = one_step_jitter(&ctx.link, &arrivals, &process, z, d, slot, events, 100_000, &mut rng).unwrap();
        let err = relative(lin.mean, brute.mean).max(relative(lin.variance, brute.variance));
        if err > worst.0 {
            worst = (err, slot);
        }
    }
    println!("delta method worst relative error {:.4} at slot {}", worst.0, worst.1);
    assert!(worst.0 <= 0.05, "delta method off by {:.1}% at slot {}", 100.0 * worst.0, worst.1);
}

#[test]
fn manifest_reproduces_run() {
    let cfg = ScenarioConfig { horizon: 12, trials: 40, seed: 7, ..Default::default() };
    let first = tempfile::tempdir().unwrap();
    let e = run_ensemble(&cfg, 40, 2).unwrap();
    write_simulation(first.path(), &cfg, &e, 0.0).unwrap();

    let text = fs::read_to_string(first.path().join(MANIFEST_JSON)).unwrap();
    let replay_cfg = ScenarioConfig::from_json_str(&text).unwrap();
    let second = tempfile::tempdir().unwrap();
    let again = run_ensemble(&replay_cfg, u64::from(replay_cfg.trials), 3).unwrap();
    write_simulation(second.path(), &replay_cfg, &again, 0.0).unwrap();
    for name in [ENSEMBLE_CSV, TRAJECTORY_CSV] {
        assert_eq!(fs::read(first.path().join(name)).unwrap(), fs::read(second.path().join(name)).unwrap(), "{name}");
    }
}

#[test]
fn literal_moments_are_reported_not_gated() {
    let sizes = ValidationSizes { monte_carlo: 10_000, laplace_states: 2, grid_points: 200, allocator_scenarios: 2 };
    let literal = ScenarioConfig { moment_mode: MomentMode::Literal, ..Default::default() };
    let report = run_validation(&literal, sizes).unwrap();
    let row = report.rows.iter().find(|r| r.name.contains("literal")).expect("literal row");
    assert_eq!(row.status, CheckStatus::Info);
    assert!(row.measured > row.tolerance, "single-interferer literal mean should diverge");

    let exact = run_validation(&ScenarioConfig::default(), sizes).unwrap();
    assert!(exact.rows.iter().all(|r| r.status != CheckStatus::Info));
}

#[test]
fn equal_rates_fall_back_to_erlang() {
    let beta = 2.5e-9;
    let dens = InterferenceDensity::new(&[beta, beta], RateConvention::Halved, 8192).unwrap();
    assert!(dens.is_fallback());
    let r = RateConvention::Halved.rate(beta);
    for l in [0.2, 1.0, 3.0, 8.0].map(|k| k / r) {
        let erlang = r * r * l * (-r * l).exp();
        assert!(relative(dens.pdf(l), erlang) < 1e-2, "at {l}: {} vs {erlang}", dens.pdf(l));
    }
}

#[test]
fn shipped_scenario_is_the_default() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/default.toml");
    let cfg = v2v_jitter::config::load_config(&path).unwrap();
    let d = ScenarioConfig::default();
    assert!(relative(cfg.tx_power, d.tx_power) < 1e-12);
    assert!(relative(cfg.noise_density, d.noise_density) < 1e-12);
    assert_eq!(ScenarioConfig { tx_power: d.tx_power, noise_density: d.noise_density, interferer_power: d.interferer_power, ..cfg }, d);
}
