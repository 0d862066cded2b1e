//! Label-derived RNG seeding. Every randomized component draws from its
//! own stream, seeded by mixing the run's root seed with a stable label
//! such as `"curator"` or `"raas/remote-1"`. Streams therefore stay
//! decoupled: adding or removing one component never shifts the draws any
//! other component sees.

/// Derives a child seed from `root` and a label: FNV-1a over the label
/// bytes folded into the root, then a splitmix64 finalizer so similar
/// labels land far apart.
pub fn derive_seed(root: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ root;
    for &b in label.as_bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = h.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
