mod support;

use proptest::prelude::*;
use support::invariants::*;

fn check(r: Check) -> std::result::Result<(), TestCaseError> {
    r.map_err(TestCaseError::fail)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn projected_codes_are_nonnegative(seed in any::<u64>()) {
        check(projection_is_nonnegative(seed))?;
    }

    #[test]
    fn attention_weights_form_a_permutation_equivariant_distribution(seed in any::<u64>()) {
        check(attention_is_a_distribution(seed))?;
    }

    #[test]
    fn beam_width_one_equals_greedy(seed in any::<u64>()) {
        check(beam_one_is_greedy(seed))?;
    }

    #[test]
    fn beam_search_scores_at_least_greedy(seed in any::<u64>()) {
        check(beam_dominates_greedy(seed))?;
    }

    #[test]
    fn total_loss_is_cross_entropy_plus_modality(seed in any::<u64>()) {
        check(loss_decomposes(seed))?;
    }
}
