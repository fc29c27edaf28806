//! Derivation of independent, reproducible RNG streams from one master seed.
//!
//! Child seeds are produced by a splitmix64 chain over (master, domain,
//! index) so that streams keyed by different coordinates never coincide in
//! practice and never depend on execution order.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn mix(master: u64, domain: u64, index: u64) -> u64 {
    let mut state = master;
    let a = splitmix64(&mut state);
    state ^= domain.wrapping_mul(0xa076_1d64_78bd_642f);
    let b = splitmix64(&mut state);
    state ^= index.wrapping_mul(0xe703_7ed1_a0b4_28db);
    let c = splitmix64(&mut state);
    a ^ b.rotate_left(17) ^ c.rotate_left(43)
}

pub fn rng_for(master: u64, domain: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(master, domain, index))
}
