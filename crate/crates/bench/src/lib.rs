//! Shared fixtures for the benchmarks.

use nalgebra::DMatrix;
use xmhash_core::synth::{generate, SynthData, SynthSpec};
use xmhash_core::PackedCodes;

pub fn dataset(n: usize, seed: u64) -> SynthData {
    generate(&SynthSpec {
        n,
        query_fraction: 0.0,
        seed,
        ..SynthSpec::default()
    })
    .expect("valid synthetic spec")
}

/// `count` pseudo-random codes of `bits` bits (xorshift, no RNG crate needed).
pub fn random_codes(bits: usize, count: usize, seed: u64) -> PackedCodes {
    let mut state = seed | 1;
    let signs = DMatrix::from_fn(bits, count, |_, _| {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        if state & 1 == 1 {
            1.0
        } else {
            -1.0
        }
    });
    xmhash_core::codec::pack(&signs).expect("sign matrix")
}
