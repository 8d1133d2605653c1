//! Deterministic child seeds for reproducible batches.
//!
//! `child_seed(master, [a, b, …])` folds each tag into the state with the
//! SplitMix64 finalizer, so every `(system, goal, control)` triple gets an
//! independent stream regardless of execution order.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn child_seed(master: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(mix(master.wrapping_add(GOLDEN)), |acc, &tag| {
        mix(acc ^ mix(tag.wrapping_add(GOLDEN)).wrapping_add(GOLDEN))
    })
}
