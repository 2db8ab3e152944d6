//! Per-trial random streams.
//!
//! Every trial owns one ChaCha8 generator per purpose. The key is the base
//! seed; the 64-bit stream id packs the trial index with the purpose tag, so
//! the draws of trial `i` never depend on how trials are scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Interference = 0,
    Distance = 1,
    Fading = 2,
    Events = 3,
    Oracle = 7,
}

pub fn stream(base_seed: u64, trial: u64, purpose: Purpose) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream((trial << 3) | purpose as u64);
    rng
}

/// Random streams used by one trial.
#[derive(Debug, Clone)]
pub struct TrialStreams {
    pub interference: ChaCha8Rng,
    pub distance: ChaCha8Rng,
    pub fading: ChaCha8Rng,
    pub events: ChaCha8Rng,
}

impl TrialStreams {
    pub fn new(base_seed: u64, trial: u64) -> Self {
        Self {
            interference: stream(base_seed, trial, Purpose::Interference),
            distance: stream(base_seed, trial, Purpose::Distance),
            fading: stream(base_seed, trial, Purpose::Fading),
            events: stream(base_seed, trial, Purpose::Events),
        }
    }
}
