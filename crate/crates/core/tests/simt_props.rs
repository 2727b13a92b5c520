mod common;

use common::*;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn random_kernels_match_the_oracle_at_warp_4(seed in any::<u64>()) {
        check_random_kernel(seed, 4).map_err(TestCaseError::fail)?;
    }

    #[test]
    fn random_kernels_match_the_oracle_at_warp_32(seed in any::<u64>()) {
        check_random_kernel(seed, 32).map_err(TestCaseError::fail)?;
    }

    #[test]
    fn barrier_divergence_is_diagnosed(ws in prop::sample::select(vec![4u32, 8, 32]), warps in 1u32..4, t in 0u32..140) {
        let block = ws * warps;
        check_barrier_diagnosis(t.min(block + 3), block, ws).map_err(TestCaseError::fail)?;
    }
}

#[test]
fn generated_kernels_have_divergence_and_loops() {
    let srcs: Vec<String> = (0..50).map(random_kernel).collect();
    assert!(srcs.iter().any(|s| s.contains("while")));
    assert!(srcs.iter().any(|s| s.contains("for j")));
    assert!(srcs.iter().any(|s| s.contains("return")));
    assert!(srcs.iter().filter(|s| s.contains("if ")).count() > 40);
}
