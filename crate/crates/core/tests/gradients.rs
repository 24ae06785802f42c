//! Analytic gradients against central finite differences.

mod common;

#[test]
fn ffnet_gradients_match_finite_differences() {
    for seed in 0..25 {
        let r = common::ffnet_case(seed);
        assert!(r.checked > 0);
        assert!(r.max_rel_error < 1e-4, "seed {seed}: {r:?}");
    }
}

#[test]
fn bilstm_gradients_match_finite_differences() {
    for seed in 0..25 {
        let r = common::bilstm_case(seed);
        assert!(r.checked > 0);
        assert!(r.max_rel_error < 1e-4, "seed {seed}: {r:?}");
    }
}
