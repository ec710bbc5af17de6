//! Deterministic seed derivation.

/// One round of the SplitMix64 finalizer.
pub fn mix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Folds a sequence of words into a child seed of `root`.
///
/// Used to give every (axis, grid value, fold) job of a sweep its own
/// independent but reproducible stream.
pub fn derive(root: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(mix64(root), |acc, &p| mix64(acc ^ mix64(p)))
}

/// Hashes a short label (e.g. an axis name) into a word for [`derive`].
pub fn label(s: &str) -> u64 {
    // FNV-1a
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3)
    })
}
