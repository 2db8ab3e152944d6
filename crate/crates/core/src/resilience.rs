//! Resilience metrics and phase classification.

use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Normal,
    Alarming,
    Failure,
    Restoration,
}

impl Phase {
    pub const ALL: [Phase; 4] = [Phase::Normal, Phase::Alarming, Phase::Failure, Phase::Restoration];

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Normal => "normal",
            Phase::Alarming => "alarming",
            Phase::Failure => "failure",
            Phase::Restoration => "restoration",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResilienceSample {
    pub slot: u32,
    pub p_ji_minus: f64,
    pub p_ji_plus: f64,
    pub capacity: f64,
    pub load: f64,
    pub limit_state: f64,
    pub arer: f64,
    pub phase: Phase,
    pub delta: f64,
}

impl ResilienceSample {
    pub fn new(slot: u32, p_ji_minus: f64, p_ji_plus: f64, delta: f64, phase: Phase) -> Self {
        Self {
            slot,
            p_ji_minus,
            p_ji_plus,
            capacity: capacity(p_ji_plus, p_ji_minus),
            load: load(p_ji_plus, p_ji_minus),
            limit_state: limit_state(p_ji_plus, p_ji_minus),
            arer: arer(p_ji_plus, p_ji_minus, delta),
            phase,
            delta,
        }
    }
}

/// Average risk exposure rate across one transition.
pub fn arer(p_plus: f64, p_minus: f64, delta: f64) -> f64 {
    (p_plus - p_minus) / (2.0 * delta)
}

pub fn capacity(p_plus: f64, p_minus: f64) -> f64 {
    1.0 - load(p_plus, p_minus)
}

pub fn load(p_plus: f64, p_minus: f64) -> f64 {
    (p_plus + p_minus) / 2.0
}

pub fn limit_state(p_plus: f64, p_minus: f64) -> f64 {
    capacity(p_plus, p_minus) - load(p_plus, p_minus)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseThresholds {
    pub normal: f64,
    pub restoration_target: f64,
}

impl Default for PhaseThresholds {
    fn default() -> Self {
        Self { normal: 0.999, restoration_target: 0.999 }
    }
}

/// Single-cycle phase state machine.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseTracker {
    thresholds: PhaseThresholds,
    restoration_enabled: bool,
    failure_slot: Option<u32>,
    restored_slot: Option<u32>,
}

impl PhaseTracker {
    pub fn new(thresholds: PhaseThresholds, restoration_enabled: bool) -> Self {
        Self { thresholds, restoration_enabled, failure_slot: None, restored_slot: None }
    }

    pub fn failure_slot(&self) -> Option<u32> {
        self.failure_slot
    }

    pub fn restored_slot(&self) -> Option<u32> {
        self.restored_slot
    }

    /// True while the allocator should be driving the link.
    pub fn restoring(&self) -> bool {
        self.restoration_enabled && self.failure_slot.is_some() && self.restored_slot.is_none()
    }

    fn by_level(&self, g: f64) -> Phase {
        if g >= self.thresholds.normal {
            Phase::Normal
        } else if g > 0.0 {
            Phase::Alarming
        } else {
            Phase::Failure
        }
    }

    pub fn observe(&mut self, slot: u32, g: f64) -> Phase {
        let Some(tf) = self.failure_slot else {
            if g <= 0.0 {
                self.failure_slot = Some(slot);
                return Phase::Failure;
            }
            return self.by_level(g);
        };
        if slot == tf || !self.restoring() {
            return self.by_level(g);
        }
        if g >= self.thresholds.restoration_target {
            self.restored_slot = Some(slot);
            return self.by_level(g);
        }
        Phase::Restoration
    }
}

/// Phase of the last entry of a limit-state history.
pub fn classify_phase(history: &[f64], thresholds: PhaseThresholds, restoration_enabled: bool) -> Option<Phase> {
    let mut tracker = PhaseTracker::new(thresholds, restoration_enabled);
    history.iter().enumerate().map(|(t, &g)| tracker.observe(t as u32, g)).last()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_examples() {
        assert_eq!(arer(0.5, 0.5, 0.5), 0.0);
        assert!((arer(0.52, 0.50, 0.5) - 0.02).abs() < 1e-15);
        assert_eq!((capacity(0.0, 0.0), load(0.0, 0.0), limit_state(0.0, 0.0)), (1.0, 0.0, 1.0));
        assert_eq!((capacity(1.0, 1.0), load(1.0, 1.0)), (0.0, 1.0));
        assert_eq!((capacity(0.6, 0.4), load(0.6, 0.4), limit_state(0.6, 0.4)), (0.5, 0.5, 0.0));
        assert_eq!(limit_state(0.5, 0.5), 0.0);
    }

    #[test]
    fn constant_history_is_normal() {
        assert_eq!(classify_phase(&[1.0; 20], PhaseThresholds::default(), true), Some(Phase::Normal));
        assert_eq!(classify_phase(&[], PhaseThresholds::default(), true), None);
    }

    #[test]
    fn failure_at_first_crossing() {
        let g: Vec<f64> = (0..60).map(|t| 0.66 - 0.02 * t as f64).collect();
        let mut tr = PhaseTracker::new(PhaseThresholds::default(), false);
        let phases: Vec<_> = g.iter().enumerate().map(|(t, &x)| tr.observe(t as u32, x)).collect();
        assert_eq!(tr.failure_slot(), Some(33));
        assert_eq!(phases[33], Phase::Failure);
        assert_eq!(phases[32], Phase::Alarming);
    }

    #[test]
    fn restoration_until_target() {
        let mut tr = PhaseTracker::new(PhaseThresholds::default(), true);
        let g = [0.5, -0.1, 0.2, 0.9, 0.998, 0.9995, 0.5, -0.2];
        let phases: Vec<_> = g.iter().enumerate().map(|(t, &x)| tr.observe(t as u32, x)).collect();
        assert_eq!(
            phases,
            [
                Phase::Alarming,
                Phase::Failure,
                Phase::Restoration,
                Phase::Restoration,
                Phase::Restoration,
                Phase::Normal,
                Phase::Alarming,
                Phase::Failure
            ]
        );
        assert_eq!(tr.failure_slot(), Some(1));
        assert_eq!(tr.restored_slot(), Some(5));
    }
}
