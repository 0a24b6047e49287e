mod common;

fn assert_all(outcomes: Vec<common::CheckOutcome>) {
    for o in &outcomes {
        assert!(
            o.passed(),
            "{}: {} of {} entries disagree, first {:?}",
            o.name,
            o.report.mismatches.len(),
            o.report.checked,
            o.report.mismatches.first()
        );
    }
}

#[test]
fn layers_match_finite_differences() {
    assert_all(common::layer_checks());
}

#[test]
fn networks_match_finite_differences() {
    assert_all(common::network_checks());
}
