//! Deterministic randomness.
//!
//! Every random decision in this crate flows through a [`SeededRng`]
//! (ChaCha8, a portable counter-based stream cipher RNG) constructed from a
//! 64-bit seed. Identical seeds produce identical streams on every platform.
//!
//! Parallel code never shares a stream: it derives an independent child seed
//! per work item with [`child_seed`], so results do not depend on the thread
//! schedule.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The one pseudorandom generator used everywhere.
pub type SeededRng = ChaCha8Rng;

/// Build the generator from a 64-bit seed.
pub fn seeded(seed: u64) -> SeededRng {
    SeededRng::seed_from_u64(seed)
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// FNV-1a over a byte slice. Stable across runs and platforms, unlike the
/// standard library's SipHash whose keys are randomized per process.
fn fnv1a(state: u64, bytes: &[u8]) -> u64 {
    let mut h = state;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// splitmix64 finalizer; spreads FNV output over all 64 bits.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Incremental stable hasher for seed derivation.
#[derive(Clone, Copy)]
pub struct SeedHasher(u64);

impl SeedHasher {
    pub fn new() -> Self {
        SeedHasher(FNV_OFFSET)
    }

    pub fn write_bytes(mut self, bytes: &[u8]) -> Self {
        self.0 = fnv1a(self.0, bytes);
        // field separator so ("ab","c") and ("a","bc") hash differently
        self.0 = fnv1a(self.0, &[0xff]);
        self
    }

    pub fn write_str(self, s: &str) -> Self {
        self.write_bytes(s.as_bytes())
    }

    pub fn write_u64(self, v: u64) -> Self {
        self.write_bytes(&v.to_le_bytes())
    }

    pub fn finish(self) -> u64 {
        mix(self.0)
    }
}

impl Default for SeedHasher {
    fn default() -> Self {
        Self::new()
    }
}

/// Derive an independent child seed from a base seed, a purpose label, and an
/// index. Used to split one master seed into per-stage and per-item streams.
pub fn child_seed(base: u64, label: &str, index: u64) -> u64 {
    SeedHasher::new()
        .write_u64(base)
        .write_str(label)
        .write_u64(index)
        .finish()
}

/// Child generator; shorthand for `seeded(child_seed(..))`.
pub fn child_rng(base: u64, label: &str, index: u64) -> SeededRng {
    seeded(child_seed(base, label, index))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn child_seed_is_stable() {
        assert_eq!(child_seed(7, "stage", 0), child_seed(7, "stage", 0));
        assert_ne!(child_seed(7, "stage", 0), child_seed(7, "stage", 1));
        assert_ne!(child_seed(7, "stage", 0), child_seed(8, "stage", 0));
        assert_ne!(child_seed(7, "stage", 0), child_seed(7, "other", 0));
    }

    #[test]
    fn separator_prevents_concatenation_ambiguity() {
        let a = SeedHasher::new().write_str("ab").write_str("c").finish();
        let b = SeedHasher::new().write_str("a").write_str("bc").finish();
        assert_ne!(a, b);
    }

    #[test]
    fn identical_seed_identical_stream() {
        let mut a = seeded(123);
        let mut b = seeded(123);
        for _ in 0..32 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    // Frozen values: if these change, every "identical seed => identical
    // output" guarantee across releases is broken.
    #[test]
    fn derivation_is_frozen() {
        assert_eq!(child_seed(0, "", 0), 8833803647338956416);
        assert_eq!(child_seed(42, "simulate", 7), 3089089271240836853);
    }
}
