//! Fixtures shared by the criterion benchmarks.

use dmvfn_core::Tensor;

/// Deterministic pseudo-random tensor with values in `[-1, 1)`.
pub fn noise(dims: &[usize], seed: u64) -> Tensor {
    let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    Tensor::from_fn(dims, |_| {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((state >> 40) as f32 / (1u64 << 24) as f32) * 2.0 - 1.0
    })
}
