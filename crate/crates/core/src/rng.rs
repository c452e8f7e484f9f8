//! Deterministic random streams.
//!
//! Every consumer of randomness gets its own ChaCha stream keyed by the master
//! seed plus a [`StreamKey`], so results never depend on the order in which
//! parties or experiment cells happen to execute.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// What a stream is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Purpose {
    /// Synthetic data generation for one user.
    Data = 1,
    /// Mini-batch index sampling.
    Batch = 2,
    /// Gaussian noise for the DP mechanism.
    Noise = 3,
    /// Shared (not per-user) generator state, e.g. the global separator.
    Global = 4,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StreamKey {
    pub purpose: Purpose,
    pub party: u64,
    pub round: u64,
}

impl StreamKey {
    pub fn new(purpose: Purpose, party: usize, round: usize) -> Self {
        StreamKey {
            purpose,
            party: party as u64,
            round: round as u64,
        }
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Opens the stream identified by `(seed, key)`.
pub fn stream(seed: u64, key: StreamKey) -> StreamRng {
    let mut state = seed;
    let mut mixed = splitmix64(&mut state);
    for word in [key.purpose as u64, key.party, key.round] {
        state ^= word.wrapping_mul(0xD6E8_FEB8_6659_FD93);
        mixed ^= splitmix64(&mut state);
    }
    let mut bytes = [0u8; 32];
    for chunk in bytes.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    let mut rng = StreamRng::from_seed(bytes);
    rng.set_stream(mixed);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::collections::BTreeSet;
    use rand::RngCore;

    #[test]
    fn distinct_keys_give_distinct_streams() {
        let mut firsts = BTreeSet::new();
        for purpose in [Purpose::Data, Purpose::Batch, Purpose::Noise, Purpose::Global] {
            for party in 0..8 {
                for round in 0..32 {
                    let mut rng = stream(7, StreamKey::new(purpose, party, round));
                    assert!(firsts.insert(rng.next_u64()));
                }
            }
        }
    }

    #[test]
    fn same_key_replays() {
        let key = StreamKey::new(Purpose::Noise, 3, 11);
        let a: [u64; 4] = core::array::from_fn({
            let mut r = stream(42, key);
            move |_| r.next_u64()
        });
        let b: [u64; 4] = core::array::from_fn({
            let mut r = stream(42, key);
            move |_| r.next_u64()
        });
        assert_eq!(a, b);
        assert_ne!(stream(43, key).next_u64(), a[0]);
    }
}
