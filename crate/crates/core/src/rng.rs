//! Deterministic random streams.
//!
//! Every random draw in the simulator comes from a [`RngStream`] addressed by
//! `(seed, worker, round)`. The generator is ChaCha8 keyed directly by those
//! three integers, so a stream can be rebuilt anywhere without reference to
//! other streams. This makes parallel and sequential execution produce the
//! same draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// The concrete generator behind every stream.
pub type StreamRng = ChaCha8Rng;

const DOMAIN_TAG: [u8; 8] = *b"l1fedRNG";

/// Address of an independent random stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub worker: u64,
    pub round: u64,
    /// ChaCha stream selector; 0 for the stream itself, non-zero for children.
    #[serde(default)]
    pub lane: u64,
}

impl RngStream {
    pub fn new(seed: u64, worker: u64, round: u64) -> Self {
        Self {
            seed,
            worker,
            round,
            lane: 0,
        }
    }

    /// A fresh generator positioned at the start of this stream.
    pub fn rng(&self) -> StreamRng {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&self.worker.to_le_bytes());
        key[16..24].copy_from_slice(&self.round.to_le_bytes());
        key[24..].copy_from_slice(&DOMAIN_TAG);
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(self.lane);
        rng
    }

    /// Substream `index` of this stream. Children of distinct indices are
    /// disjoint from each other and from the parent. Supports two levels of
    /// nesting with indices below 2^32.
    pub fn child(&self, index: u64) -> Self {
        Self {
            lane: (self.lane << 32) | (index + 1),
            ..*self
        }
    }
}

/// Samples per chunk for Monte Carlo loops. Each chunk draws from its own
/// child stream, so totals do not depend on how chunks are scheduled.
pub const MC_CHUNK: usize = 1 << 14;

/// Runs `body` over `samples` draws split into fixed chunks and returns the
/// per-chunk results in chunk order.
///
/// `body(rng, count)` receives a generator for the chunk and the number of
/// samples it must process.
pub fn map_chunks<T, F>(stream: RngStream, samples: usize, body: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut StreamRng, usize) -> T + Sync,
{
    let chunks = samples.div_ceil(MC_CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|k| {
            let count = MC_CHUNK.min(samples - k * MC_CHUNK);
            let mut rng = stream.child(k as u64).rng();
            body(&mut rng, count)
        })
        .collect()
}
