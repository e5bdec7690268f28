//! Deterministic seed derivation.
//!
//! Every random decision in an experiment flows from a single master seed.
//! Sub-seeds for independent purposes (data generation, partitioning, each
//! client's local training in each round, ...) are derived with a splittable
//! counter scheme so that no two consumers ever share an RNG stream.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Labels for the independent random streams of an experiment.
#[derive(Clone, Copy, Debug)]
pub enum Stream {
    DataGen,
    TestSplit,
    Partition,
    ModelInit,
    AttackerSelection,
    Poison,
    LocalTrain,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::DataGen => 1,
            Stream::TestSplit => 2,
            Stream::Partition => 3,
            Stream::ModelInit => 4,
            Stream::AttackerSelection => 5,
            Stream::Poison => 6,
            Stream::LocalTrain => 7,
        }
    }
}

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives the sub-seed for `(stream, a, b)` from the master seed.
///
/// The two counters disambiguate consumers within a stream; local training
/// uses `(client, round)`, per-client poisoning uses `(client, 0)`.
pub fn derive_seed(master: u64, stream: Stream, a: u64, b: u64) -> u64 {
    let mut s = mix(master.wrapping_add(0x9e37_79b9_7f4a_7c15));
    s = mix(s ^ stream.tag().wrapping_mul(0xa24b_aed4_963e_e407));
    s = mix(s ^ a.wrapping_mul(0x9fb2_1c65_1e98_df25));
    s = mix(s ^ b.wrapping_mul(0xd6e8_feb8_6659_fd93));
    s
}

/// A reproducible generator for the given seed.
pub fn seeded(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}
