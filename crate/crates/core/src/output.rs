//! CSV and JSON artifacts of a run.

use crate::allocator::RestorationStatus;
use crate::config::ScenarioConfig;
use crate::resilience::{Phase, ResilienceSample};
use crate::simulator::{estimate_crossing, CrossingStats, Ensemble, EnsembleStats, SlotStats, Trajectory, TrialSummary};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const ENSEMBLE_CSV: &str = "ensemble.csv";
pub const TRAJECTORY_CSV: &str = "trajectory.csv";
pub const DECISIONS_JSON: &str = "decisions.json";
pub const MANIFEST_JSON: &str = "manifest.json";
pub const SWEEP_CSV: &str = "sweep.csv";

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cannot write {path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("cannot serialize {path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
}

/// One per-slot row; column order is the file schema.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlotRow {
    pub slot: u32,
    pub p_ji_minus: f64,
    pub p_ji_plus: f64,
    #[serde(rename = "C")]
    pub capacity: f64,
    #[serde(rename = "D")]
    pub load: f64,
    #[serde(rename = "G")]
    pub limit_state: f64,
    #[serde(rename = "E_r")]
    pub arer: f64,
    pub phase: Phase,
    pub power: f64,
    pub antennas: f64,
}

impl From<&SlotStats> for SlotRow {
    fn from(s: &SlotStats) -> Self {
        Self {
            slot: s.slot,
            p_ji_minus: s.p_ji_minus,
            p_ji_plus: s.p_ji_plus,
            capacity: s.capacity,
            load: s.load,
            limit_state: s.limit_state,
            arer: s.arer,
            phase: s.phase,
            power: s.power,
            antennas: s.antennas,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub slot: u32,
    pub p_ji_minus: f64,
    pub p_ji_plus: f64,
    #[serde(rename = "C")]
    pub capacity: f64,
    #[serde(rename = "D")]
    pub load: f64,
    #[serde(rename = "G")]
    pub limit_state: f64,
    #[serde(rename = "E_r")]
    pub arer: f64,
    pub phase: Phase,
    pub power: f64,
    pub antennas: usize,
    pub interference: f64,
    pub distance: f64,
    pub interferers: usize,
    pub jitter: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub parameter: String,
    pub value: String,
    pub slot: u32,
    pub p_ji_minus: f64,
    pub p_ji_plus: f64,
    #[serde(rename = "C")]
    pub capacity: f64,
    #[serde(rename = "D")]
    pub load: f64,
    #[serde(rename = "G")]
    pub limit_state: f64,
    #[serde(rename = "E_r")]
    pub arer: f64,
    pub phase: Phase,
    pub power: f64,
    pub antennas: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RestorationSummary {
    pub activated: u64,
    pub restored: u64,
    pub exhausted: u64,
    pub median_slots_to_capacity_99: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub seed: u64,
    pub trials: u64,
    pub config: ScenarioConfig,
    pub crossing: Option<CrossingStats>,
    pub crossing_status: String,
    /// Ensemble mean risk exposure rate in each phase.
    pub arer_by_phase: BTreeMap<String, Option<f64>>,
    pub restoration: Option<RestorationSummary>,
    pub runtime_seconds: f64,
    pub outputs: Vec<String>,
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>, OutputError> {
    csv::Writer::from_path(path).map_err(|source| OutputError::Csv { path: path.to_owned(), source })
}

fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<(), OutputError> {
    let mut w = csv_writer(path)?;
    let err = |source| OutputError::Csv { path: path.to_owned(), source };
    for r in rows {
        w.serialize(r).map_err(err)?;
    }
    w.flush().map_err(|source| OutputError::Io { path: path.to_owned(), source })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), OutputError> {
    let text = serde_json::to_string_pretty(value).map_err(|source| OutputError::Json { path: path.to_owned(), source })?;
    fs::write(path, text + "\n").map_err(|source| OutputError::Io { path: path.to_owned(), source })
}

pub fn ensure_dir(dir: &Path) -> Result<(), OutputError> {
    fs::create_dir_all(dir).map_err(|source| OutputError::Io { path: dir.to_owned(), source })
}

pub fn write_ensemble_csv(path: &Path, stats: &EnsembleStats) -> Result<(), OutputError> {
    write_rows(path, stats.slots.iter().map(SlotRow::from))
}

pub fn trajectory_rows(traj: &Trajectory) -> impl Iterator<Item = TrajectoryRow> + '_ {
    traj.samples.iter().zip(&traj.trace).map(|(s, t): (&ResilienceSample, _)| TrajectoryRow {
        slot: s.slot,
        p_ji_minus: s.p_ji_minus,
        p_ji_plus: s.p_ji_plus,
        capacity: s.capacity,
        load: s.load,
        limit_state: s.limit_state,
        arer: s.arer,
        phase: s.phase,
        power: t.power,
        antennas: t.antennas,
        interference: t.interference,
        distance: t.distance,
        interferers: t.interferers,
        jitter: t.jitter,
    })
}

pub fn write_trajectory_csv(path: &Path, traj: &Trajectory) -> Result<(), OutputError> {
    write_rows(path, trajectory_rows(traj))
}

pub fn write_sweep_csv(path: &Path, runs: &[(String, String, EnsembleStats)]) -> Result<(), OutputError> {
    write_rows(
        path,
        runs.iter().flat_map(|(p, v, stats)| {
            stats.slots.iter().map(move |s| SweepRow {
                parameter: p.clone(),
                value: v.clone(),
                slot: s.slot,
                p_ji_minus: s.p_ji_minus,
                p_ji_plus: s.p_ji_plus,
                capacity: s.capacity,
                load: s.load,
                limit_state: s.limit_state,
                arer: s.arer,
                phase: s.phase,
                power: s.power,
                antennas: s.antennas,
            })
        }),
    )
}

fn restoration_summary(summaries: &[TrialSummary]) -> Option<RestorationSummary> {
    let activated: Vec<_> = summaries.iter().filter(|s| s.restoration_status.is_some()).collect();
    if activated.is_empty() {
        return None;
    }
    let count = |st| activated.iter().filter(|s| s.restoration_status == Some(st)).count() as u64;
    let mut slots: Vec<f64> = activated.iter().filter_map(|s| s.slots_to_capacity_99.map(f64::from)).collect();
    slots.sort_by(f64::total_cmp);
    let median = (!slots.is_empty()).then(|| {
        let n = slots.len();
        if n % 2 == 1 {
            slots[n / 2]
        } else {
            0.5 * (slots[n / 2 - 1] + slots[n / 2])
        }
    });
    Some(RestorationSummary {
        activated: activated.len() as u64,
        restored: count(RestorationStatus::Restored),
        exhausted: count(RestorationStatus::BudgetExhausted),
        median_slots_to_capacity_99: median,
    })
}

pub fn manifest(cfg: &ScenarioConfig, stats: &EnsembleStats, runtime_seconds: f64, outputs: &[&str]) -> Manifest {
    let crossing = estimate_crossing(stats).ok();
    Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        trials: stats.trials,
        config: cfg.clone(),
        crossing,
        crossing_status: if crossing.is_some() { "ok" } else { "no-crossing" }.to_string(),
        arer_by_phase: stats.arer_by_phase.iter().map(|(p, v)| (p.to_string(), *v)).collect(),
        restoration: restoration_summary(&stats.summaries),
        runtime_seconds,
        outputs: outputs.iter().map(|s| s.to_string()).collect(),
    }
}

/// Writes every artifact of a `simulate` run into `dir`.
pub fn write_simulation(
    dir: &Path,
    cfg: &ScenarioConfig,
    ensemble: &Ensemble,
    runtime_seconds: f64,
) -> Result<Manifest, OutputError> {
    ensure_dir(dir)?;
    write_ensemble_csv(&dir.join(ENSEMBLE_CSV), &ensemble.stats)?;
    write_trajectory_csv(&dir.join(TRAJECTORY_CSV), &ensemble.first)?;
    let decisions: Vec<_> = ensemble.stats.summaries.iter().filter(|s| s.restoration_status.is_some()).collect();
    write_json(&dir.join(DECISIONS_JSON), &decisions)?;
    let m = manifest(cfg, &ensemble.stats, runtime_seconds, &[ENSEMBLE_CSV, TRAJECTORY_CSV, DECISIONS_JSON]);
    write_json(&dir.join(MANIFEST_JSON), &m)?;
    Ok(m)
}

pub fn write_manifest(path: &Path, m: &Manifest) -> Result<(), OutputError> {
    write_json(path, m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::run_ensemble;

    #[test]
    fn ensemble_header_is_fixed() {
        let cfg = ScenarioConfig { horizon: 3, ..Default::default() };
        let e = run_ensemble(&cfg, 2, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let m = write_simulation(dir.path(), &cfg, &e, 0.0).unwrap();
        let text = fs::read_to_string(dir.path().join(ENSEMBLE_CSV)).unwrap();
        assert_eq!(text.lines().next().unwrap(), "slot,p_ji_minus,p_ji_plus,C,D,G,E_r,phase,power,antennas");
        assert_eq!(text.lines().count(), 5);
        let traj = fs::read_to_string(dir.path().join(TRAJECTORY_CSV)).unwrap();
        assert!(traj.starts_with("slot,p_ji_minus,p_ji_plus,C,D,G,E_r,phase,power,antennas,interference,distance,interferers,jitter\n"));
        let back = ScenarioConfig::from_json_str(&fs::read_to_string(dir.path().join(MANIFEST_JSON)).unwrap()).unwrap();
        assert_eq!(back, m.config);
    }
}
