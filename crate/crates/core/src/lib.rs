//! Transmission-delay jitter and resilience of a V2V link under growing
//! interference and inter-vehicular distance.

pub mod link;
pub mod quad;
pub mod rng;
pub mod special;
pub mod stressors;
pub mod allocator;
pub mod intolerance;
pub mod resilience;
pub mod config;
pub mod simulator;
pub mod oracle;
pub mod validate;
pub mod output;
