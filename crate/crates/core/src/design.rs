//! Space-filling initial designs.

use crate::rng::sobol_seed;

/// `n` points of an Owen-scrambled Sobol' sequence mapped into the box.
///
/// Dimensions beyond the sequence's native 256 reuse the base dimensions
/// under an independent scramble.
pub fn sobol_design(lower: &[f64], upper: &[f64], n: usize, seed: u64) -> Vec<Vec<f64>> {
    let dims = sobol_burley::NUM_DIMENSIONS;
    (0..n as u32)
        .map(|i| {
            lower
                .iter()
                .zip(upper)
                .enumerate()
                .map(|(d, (lo, hi))| {
                    let group = (d as u32) / dims;
                    let scramble = sobol_seed(seed ^ (group as u64).wrapping_mul(0x9E37_79B9));
                    let u = f64::from(sobol_burley::sample(i, d as u32 % dims, scramble));
                    lo + u * (hi - lo)
                })
                .collect()
        })
        .collect()
}
