mod support;

use support::forward_oracle_gap;

#[test]
fn tape_and_frozen_forward_match_reference() {
    let gap = forward_oracle_gap(150);
    eprintln!("largest gap {gap:e}");
    assert!(gap <= 1e-10, "largest gap {gap:e}");
}
