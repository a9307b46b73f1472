//! Deterministic sub-seed derivation.
//!
//! Every source of randomness in the crate is keyed by a master seed plus a
//! path of components (question id, step index, completion index, ...). The
//! derivation is a splitmix64 chain over the components, so results are
//! independent of worker count and scheduling: two workers asking for the
//! seed of the same (master, path) always get the same answer.

/// One round of the splitmix64 output mixer.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// FNV-1a over a byte string, used to fold opaque identifiers into the chain.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Derive a sub-seed from a master seed and a path of numeric components.
pub fn derive(master: u64, components: &[u64]) -> u64 {
    let mut state = splitmix64(master);
    for &c in components {
        state = splitmix64(state ^ c);
    }
    state
}

/// Derive a sub-seed keyed by a string label plus numeric components.
pub fn derive_labeled(master: u64, label: &str, components: &[u64]) -> u64 {
    let mut state = splitmix64(master ^ fnv1a64(label.as_bytes()));
    for &c in components {
        state = splitmix64(state ^ c);
    }
    state
}
