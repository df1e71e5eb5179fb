//! Deterministic seed derivation. All randomness in an experiment flows from
//! one master seed; sub-seeds are obtained by hashing a path of labels.

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hashes `master` together with each label in `path`, in order.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(mix(master), |acc, &label| mix(acc.wrapping_mul(0x0000_0100_0000_01B3) ^ mix(label)))
}
