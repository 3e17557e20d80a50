mod common;

use common::occ_cases::{cases, run_case};

#[test]
fn scripted_interleavings_match_hand_derived_outcomes() {
    let all = cases();
    assert!(all.len() >= 20);
    let failures: Vec<String> = all.iter().filter_map(|c| run_case(c).err()).collect();
    assert!(failures.is_empty(), "{failures:#?}");
}
