//! Deterministic per-path random streams.
//!
//! Every Monte-Carlo path draws from its own ChaCha stream, selected by
//! `(seed, domain, index)`. Results therefore do not depend on how paths are
//! scheduled across worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Separates the random streams of independent consumers sharing one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    /// One-epoch bundles used by the solver, per initial state.
    Bundle(usize),
    /// Raw `(X, Y, T)` paths driving multi-epoch simulations.
    Raw,
    /// Auxiliary randomisation flags drawn alongside raw paths.
    Flags,
    /// Modulator-only simulation.
    Modulator(usize),
}

impl Domain {
    fn tag(self) -> u64 {
        match self {
            Domain::Bundle(y) => 0x1000_0000 + y as u64,
            Domain::Raw => 0x2000_0000,
            Domain::Flags => 0x3000_0000,
            Domain::Modulator(y) => 0x4000_0000 + y as u64,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn path_rng(seed: u64, domain: Domain, index: u64) -> ChaCha8Rng {
    let key = splitmix64(seed ^ splitmix64(domain.tag()));
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(index);
    rng
}
