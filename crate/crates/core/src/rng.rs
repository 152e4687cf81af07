//! Seeded, splittable randomness.
//!
//! Every draw in a simulation comes from a sub-stream keyed by
//! `(seed, trial, day, role, entity)`. Two parties never share a stream, so
//! the order in which a generator and a protocol consume randomness cannot
//! change either one's draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Independent sub-stream handed to exactly one consumer.
pub type RngStream = ChaCha8Rng;

/// Who consumes a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    /// Cost generator (adversary).
    Generator,
    /// Coordinator-side protocol randomness (sampled sets, permutations).
    Coordinator,
    /// Server-side protocol randomness; the entity is the server index.
    Server,
    /// Expert selection from a committed distribution.
    Selection,
    /// Meta-level choice between meta-experts.
    Meta,
    /// Experiment-level draws (e.g. case assignment in a reduction).
    Harness,
}

impl Role {
    fn tag(self) -> u64 {
        match self {
            Role::Generator => 1,
            Role::Coordinator => 2,
            Role::Server => 3,
            Role::Selection => 4,
            Role::Meta => 5,
            Role::Harness => 6,
        }
    }
}

// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive the sub-stream for one `(trial, day, role, entity)` tuple.
pub fn derive_stream(seed: u64, trial: u64, day: u64, role: Role, entity: u64) -> RngStream {
    let mut h = mix64(seed ^ 0x6a09_e667_f3bc_c908);
    for part in [trial, day, role.tag(), entity] {
        h = mix64(h ^ mix64(part.wrapping_add(0x9e37_79b9_7f4a_7c15)));
    }
    let mut key = [0u8; 32];
    let mut state = h;
    for chunk in key.chunks_exact_mut(8) {
        state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        chunk.copy_from_slice(&mix64(state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Stream factory for one day of one trial.
#[derive(Debug, Clone, Copy)]
pub struct DayStreams {
    pub seed: u64,
    pub trial: u64,
    pub day: u64,
}

impl DayStreams {
    pub fn new(seed: u64, trial: u64, day: u64) -> Self {
        Self { seed, trial, day }
    }

    pub fn stream(&self, role: Role, entity: u64) -> RngStream {
        derive_stream(self.seed, self.trial, self.day, role, entity)
    }

    /// Stream for a protocol copy running on `lane`; lanes keep meta-expert
    /// children on disjoint streams while lane 0 matches an unwrapped protocol.
    pub fn lane_stream(&self, role: Role, lane: u32, entity: u32) -> RngStream {
        self.stream(role, ((lane as u64) << 32) | entity as u64)
    }
}
