use pbound::repro::{run_criterion, CRITERIA};

/// Criteria whose literal statement cannot hold; each carries a verified
/// replacement statement instead.
const KNOWN_DEVIATIONS: [usize; 2] = [3, 7];

#[test]
fn acceptance_criteria() {
    let mut failures = vec![];
    for c in CRITERIA {
        let outcome = run_criterion(c.id).expect("listed criterion");
        println!("{}", outcome.line());
        let ok = outcome.pass && outcome.within_budget();
        if KNOWN_DEVIATIONS.contains(&c.id) {
            let confirmed = outcome.deviation.as_ref().is_some_and(|d| d.holds) && outcome.within_budget();
            if !(ok || confirmed) {
                failures.push(c.id);
            }
        } else if !ok {
            failures.push(c.id);
        }
    }
    assert!(failures.is_empty(), "criteria failed: {failures:?}");
}
