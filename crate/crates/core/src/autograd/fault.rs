//! Test hook for deliberately corrupting a backward rule, used to check that
//! the gradient checker reports failures.

use std::sync::atomic::{AtomicBool, Ordering};

static CORRUPT_GELU_BACKWARD: AtomicBool = AtomicBool::new(false);

/// When enabled, the GELU backward rule is scaled by 1.01.
pub fn set_corrupt_gelu_backward(on: bool) {
    CORRUPT_GELU_BACKWARD.store(on, Ordering::SeqCst);
}

pub(crate) fn corrupt_gelu_backward() -> bool {
    CORRUPT_GELU_BACKWARD.load(Ordering::Relaxed)
}
