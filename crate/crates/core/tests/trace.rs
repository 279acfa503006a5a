//! Three iterations on the pinned two-state instance, compared bit for bit
//! with values computed outside the crate.

mod common;

use tsac::experiment::{pinned_instance, pinned_trace};

#[test]
fn pinned_trace_is_bit_exact() {
    let mismatches = common::trace_mismatches(&pinned_trace().unwrap());
    assert!(mismatches.is_empty(), "{mismatches:?}");
}

#[test]
fn pinned_instance_consumes_seven_uniforms() {
    assert_eq!(pinned_instance().unwrap().uniforms.len(), 1 + 2 * 3);
}
