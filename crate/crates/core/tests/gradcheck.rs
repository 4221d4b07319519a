mod common;

use common::{lenet_grad_check, transformer_grad_check};

#[test]
fn lenet_gradients_match_finite_differences() {
    let r = lenet_grad_check(0);
    assert!(r.max_rel_err < 1e-4, "{r:?}");
}

#[test]
fn lenet_with_dense_extras_gradients() {
    let r = lenet_grad_check(2);
    assert!(r.max_rel_err < 1e-4, "{r:?}");
}

#[test]
fn transformer_gradients_match_finite_differences() {
    let r = transformer_grad_check();
    assert!(r.max_rel_err < 1e-4, "{r:?}");
}
