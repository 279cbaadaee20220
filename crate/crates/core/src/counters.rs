//! Instrumentation counters. Matrix-product ops report the
//! multiply-accumulate work they actually perform; attention score products
//! are additionally tallied on their own counter so analytic cost formulas
//! can be checked against measured work, not just against each other.
//!
//! With the `std` feature the counters are thread-local, so concurrent test
//! threads never see each other's work. Without `std` they are plain globals
//! under the crate's single-threaded contract.

#[cfg(feature = "std")]
mod imp {
    use core::cell::Cell;

    std::thread_local! {
        static MACS: Cell<u64> = const { Cell::new(0) };
        static SCORE_MACS: Cell<u64> = const { Cell::new(0) };
    }

    pub fn add_macs(n: u64) {
        MACS.with(|c| c.set(c.get() + n));
    }

    pub fn add_score_macs(n: u64) {
        SCORE_MACS.with(|c| c.set(c.get() + n));
    }

    pub fn macs() -> u64 {
        MACS.with(Cell::get)
    }

    pub fn attention_score_macs() -> u64 {
        SCORE_MACS.with(Cell::get)
    }

    pub fn reset() {
        MACS.with(|c| c.set(0));
        SCORE_MACS.with(|c| c.set(0));
    }
}

#[cfg(not(feature = "std"))]
mod imp {
    use core::sync::atomic::{AtomicU64, Ordering::Relaxed};

    static MACS: AtomicU64 = AtomicU64::new(0);
    static SCORE_MACS: AtomicU64 = AtomicU64::new(0);

    pub fn add_macs(n: u64) {
        MACS.fetch_add(n, Relaxed);
    }

    pub fn add_score_macs(n: u64) {
        SCORE_MACS.fetch_add(n, Relaxed);
    }

    pub fn macs() -> u64 {
        MACS.load(Relaxed)
    }

    pub fn attention_score_macs() -> u64 {
        SCORE_MACS.load(Relaxed)
    }

    pub fn reset() {
        MACS.store(0, Relaxed);
        SCORE_MACS.store(0, Relaxed);
    }
}

pub(crate) use imp::{add_macs, add_score_macs};

/// Multiply-accumulates performed by matmul ops since the last reset.
pub fn macs() -> u64 {
    imp::macs()
}

/// MACs spent forming attention score matrices since the last reset.
pub fn attention_score_macs() -> u64 {
    imp::attention_score_macs()
}

pub fn reset() {
    imp::reset()
}

/// Run `f` with fresh counters and return its result together with the
/// `(macs, attention_score_macs)` it cost. Restores the previous counts
/// afterwards, so nested measurements and surrounding totals stay intact.
pub fn measure<R>(f: impl FnOnce() -> R) -> (R, u64, u64) {
    let (m0, s0) = (macs(), attention_score_macs());
    reset();
    let out = f();
    let (m, s) = (macs(), attention_score_macs());
    reset();
    add_macs(m0 + m);
    add_score_macs(s0 + s);
    (out, m, s)
}
