//! Feeding U fresh increments instead of X's must break the variance claims.

use cvsim::sim::Coupling;
use cvsim::validation::{run_criterion, Level, ValidationOptions};

#[test]
fn independent_increments_fail_the_variance_criteria() {
    let opts = ValidationOptions {
        coupling: Coupling::Independent,
        ..ValidationOptions::new(Level::Quick)
    };
    for id in [2, 3, 4] {
        let r = run_criterion(id, &opts);
        assert!(!r.passed, "{r}");
    }
}

#[test]
fn shared_increments_pass_the_variance_ratio() {
    let r = run_criterion(4, &ValidationOptions::new(Level::Quick));
    assert!(r.passed, "{r}");
}
