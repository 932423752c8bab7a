//! Deterministic seed derivation.
//!
//! Every random stream in a run is derived from one root seed plus a path of
//! integer tags (trial, agent, iteration, purpose). Streams are therefore
//! independent of evaluation order and of how many other streams exist, which
//! gives common random numbers across configurations that differ only in λ,
//! the trigger, or the agent count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stream purposes, used as the first tag of a derivation path.
pub mod tag {
    pub const INIT_VALUE: u64 = 0x1;
    pub const TRIAL: u64 = 0x2;
    pub const AGENT_DATA: u64 = 0x3;
    pub const TRIGGER: u64 = 0x4;
    pub const PROBE: u64 = 0x5;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hashes `root` together with `path` into a new 64-bit seed.
pub fn derive_seed(root: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(root), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

pub fn stream(root: u64, path: &[u64]) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(root, path))
}

/// Seed of trial `trial` under a root seed.
pub fn trial_seed(root: u64, trial: u64) -> u64 {
    derive_seed(root, &[tag::TRIAL, trial])
}

/// Data stream of `agent` at iteration `k` within a trial.
pub fn agent_stream(trial_seed: u64, agent: usize, k: usize) -> StreamRng {
    stream(trial_seed, &[tag::AGENT_DATA, agent as u64, k as u64])
}

/// Stream for randomized transmit decisions, disjoint from the data streams.
pub fn trigger_stream(trial_seed: u64, agent: usize, k: usize) -> StreamRng {
    stream(trial_seed, &[tag::TRIGGER, agent as u64, k as u64])
}
