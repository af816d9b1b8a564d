mod common;

use common::batch_vs_sequential;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn batched_rollout_equals_stacked_open_loop(
        structure in 0usize..6,
        seed in 0u64..1_000_000,
        q in 1usize..6,
        m in 1usize..20,
    ) {
        let gap = batch_vs_sequential(structure, seed, q, m);
        prop_assert!(gap < 1e-12, "gap {gap:e}");
    }
}
