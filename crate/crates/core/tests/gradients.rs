mod common;

use common::gradcheck::{self, OPS, TOL};

#[test]
fn every_operation_matches_central_differences() {
    for (name, check) in OPS {
        let e = check();
        assert!(e < TOL, "{name}: relative error {e:e}");
    }
}

#[test]
fn end_to_end_training_loss() {
    let e = gradcheck::end_to_end_training_loss();
    assert!(e < TOL, "relative error {e:e}");
}
