//! Deterministic seed derivation.
//!
//! Every source of randomness in this workspace flows from one master seed
//! through [`derive_stream_seed`], so that independent work units (sweep
//! realizations, training restarts, bootstrap replicates, sampler shards)
//! get reproducible, de-correlated streams regardless of execution order.

/// SplitMix64 finalizer; full-period bijective mixer on u64.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive the seed for one independent stream from a master seed, a work-unit
/// index, and a salt distinguishing the family of streams (for sweep
/// realizations the salt is the instrument count).
///
/// Deterministic: identical inputs always give identical output.
pub fn derive_stream_seed(master_seed: u64, realization_index: u64, instrument_count: u64) -> u64 {
    let a = splitmix64(master_seed ^ 0x243F_6A88_85A3_08D3);
    let b = splitmix64(a ^ realization_index);
    splitmix64(b ^ instrument_count.rotate_left(17))
}
