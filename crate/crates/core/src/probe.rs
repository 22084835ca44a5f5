//! Instrumentation for the online dof-independence contract.
//!
//! Every full-order operation (assembly, residual evaluation, condensed
//! solve, projection/lifting) bumps a global counter. A reduced Newton loop
//! must leave the counter unchanged: its per-iteration work may only touch
//! reduced-size data.

use std::sync::atomic::{AtomicU64, Ordering};

static FULL_ORDER_OPS: AtomicU64 = AtomicU64::new(0);

/// Records one full-order-sized operation.
pub fn record_full_order_op() {
    FULL_ORDER_OPS.fetch_add(1, Ordering::Relaxed);
}

/// Current value of the full-order operation counter.
pub fn full_order_ops() -> u64 {
    FULL_ORDER_OPS.load(Ordering::Relaxed)
}

/// Runs `f` and returns its result together with the number of full-order
/// operations it performed.
pub fn count_full_order_ops<R>(f: impl FnOnce() -> R) -> (R, u64) {
    let before = full_order_ops();
    let out = f();
    (out, full_order_ops() - before)
}
