//! Seed handling. A single master seed is split into named, independent
//! ChaCha streams so that adding a consumer never perturbs another one.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

pub const STREAM_GENERATOR: &str = "generator";
pub const STREAM_DATASET: &str = "dataset";
pub const STREAM_INIT: &str = "init";
pub const STREAM_TRAINING: &str = "training";
pub const STREAM_VERIFICATION: &str = "verification";

/// Derives the 32-byte ChaCha seed for `(master, name)`.
pub fn stream_seed(master: u64, name: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"hiernet-stream-v1");
    h.update(master.to_le_bytes());
    h.update((name.len() as u64).to_le_bytes());
    h.update(name.as_bytes());
    h.finalize().into()
}

pub fn stream(master: u64, name: &str) -> Rng {
    Rng::from_seed(stream_seed(master, name))
}

/// Sub-stream keyed by an index, e.g. one per label or per seed in an ensemble.
pub fn substream(master: u64, name: &str, index: u64) -> Rng {
    stream(master, &format!("{name}/{index}"))
}

/// 64-bit seed for a named stream, for places that take a plain integer seed.
pub fn derive_u64(master: u64, name: &str) -> u64 {
    let s = stream_seed(master, name);
    u64::from_le_bytes(s[..8].try_into().expect("8 bytes"))
}
