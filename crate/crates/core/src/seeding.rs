//! Deterministic seed derivation.

/// One round of the SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for stream `index` under `master`.
pub fn derive(master: u64, index: u64) -> u64 {
    splitmix64(splitmix64(master) ^ index.wrapping_mul(0xd6e8_feb8_6659_fd93))
}

/// Seed depending only on `master` and the set of `items` (order ignored).
pub fn for_set(master: u64, items: &[usize]) -> u64 {
    let mut sorted = items.to_vec();
    sorted.sort_unstable();
    sorted
        .iter()
        .fold(derive(master, sorted.len() as u64), |acc, &i| derive(acc, i as u64 + 1))
}
