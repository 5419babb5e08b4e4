//! Order-independent seed derivation.
//!
//! Seeded components derive a fresh RNG from `(base seed, task id, step, ...)`
//! rather than sharing one stream, so results do not depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

#[derive(Clone, Debug)]
pub struct Fnv(u64);

impl Fnv {
    pub fn new() -> Self {
        Fnv(FNV_OFFSET)
    }

    pub fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(FNV_PRIME);
        }
    }

    pub fn write_u64(&mut self, v: u64) {
        self.write(&v.to_le_bytes());
    }

    pub fn write_str(&mut self, s: &str) {
        self.write_u64(s.len() as u64);
        self.write(s.as_bytes());
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

impl Default for Fnv {
    fn default() -> Self {
        Self::new()
    }
}

pub fn rng_for(seed: u64, label: &str, task_id: &str, extra: &[u64]) -> ChaCha8Rng {
    let mut h = Fnv::new();
    h.write_u64(seed);
    h.write_str(label);
    h.write_str(task_id);
    for &e in extra {
        h.write_u64(e);
    }
    ChaCha8Rng::seed_from_u64(h.finish())
}
