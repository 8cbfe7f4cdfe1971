//! Shared fixtures for the criterion benches.

use ducc_core::Tensor;

/// Deterministic pseudo-random values in `[0, 1)` from a seed.
pub fn pattern(shape: &[usize], seed: u64) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |i| {
        let h = ducc_core::seed::mix(seed, i as u64);
        (h >> 40) as f32 / (1u64 << 24) as f32
    })
    .expect("valid shape")
}

/// Alternating labels, one per sample.
pub fn labels(n: usize) -> Tensor {
    Tensor::from_fn([n, 1], |i| (i % 2) as f32).expect("valid shape")
}
