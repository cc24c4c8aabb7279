mod common;

use common::{gradient_report, instance, rng, FD_TOLERANCE, OPS};

#[test]
fn every_op_matches_central_differences() {
    for (op, worst) in gradient_report(100, 1) {
        assert!(worst < FD_TOLERANCE, "{op}: relative error {worst:e}");
    }
}

#[test]
fn a_second_seed_agrees() {
    let mut rng = rng(99);
    for op in OPS {
        for _ in 0..10 {
            let worst = instance(op, &mut rng).max_relative_error();
            assert!(worst < FD_TOLERANCE, "{op}: relative error {worst:e}");
        }
    }
}
