//! Counter-based random streams.
//!
//! Every piece of stochastic work (one Monte Carlo draw, one scenario's
//! pre-sampling, one mixture draw) gets its own ChaCha stream addressed by
//! `(master seed, domain, index)`. Results therefore depend only on the
//! index of the work item, never on which worker thread executed it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Which family of work a stream belongs to. Distinct domains never share streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Domain {
    Presample,
    LossDraw,
    MixtureDraw,
    MixturePricing,
    MomentEstimate,
    Reference,
    /// Free-form domain for callers outside the built-in pipeline.
    Custom(u32),
}

impl Domain {
    fn tag(self) -> u64 {
        match self {
            Domain::Presample => 1,
            Domain::LossDraw => 2,
            Domain::MixtureDraw => 3,
            Domain::MomentEstimate => 4,
            Domain::Reference => 5,
            Domain::MixturePricing => 6,
            Domain::Custom(c) => 0x1_0000_0000 | u64::from(c),
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamFactory {
    master_seed: u64,
}

impl StreamFactory {
    pub fn new(master_seed: u64) -> Self {
        Self { master_seed }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    /// The `index`-th stream of `domain`.
    pub fn stream(&self, domain: Domain, index: u64) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        let mut state = self.master_seed ^ splitmix64(domain.tag());
        for chunk in key.chunks_exact_mut(8) {
            state = splitmix64(state);
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(index);
        rng
    }
}
