//! Thread-local floating-point operation counter.
//!
//! Every counted kernel in [`crate::linalg`] reports its cost here, bucketed by
//! asymptotic class, so tests can assert that a code path never touches a
//! cubic primitive.

use std::cell::Cell;
use std::ops::{Add, Sub};

/// Operation counts split by the asymptotic class of the primitive that
/// produced them.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FlopCount {
    /// Vector and elementwise matrix work (axpy, scale, add).
    pub elementwise: u64,
    /// Matrix-vector products.
    pub matvec: u64,
    /// Matrix-matrix products, factorizations and inverses.
    pub cubic: u64,
    /// Number of cubic primitive calls, regardless of their size.
    pub cubic_calls: u64,
}

impl FlopCount {
    pub fn total(&self) -> u64 {
        self.elementwise + self.matvec + self.cubic
    }
}

impl Add for FlopCount {
    type Output = FlopCount;
    fn add(self, o: FlopCount) -> FlopCount {
        FlopCount {
            elementwise: self.elementwise + o.elementwise,
            matvec: self.matvec + o.matvec,
            cubic: self.cubic + o.cubic,
            cubic_calls: self.cubic_calls + o.cubic_calls,
        }
    }
}

impl Sub for FlopCount {
    type Output = FlopCount;
    fn sub(self, o: FlopCount) -> FlopCount {
        FlopCount {
            elementwise: self.elementwise - o.elementwise,
            matvec: self.matvec - o.matvec,
            cubic: self.cubic - o.cubic,
            cubic_calls: self.cubic_calls - o.cubic_calls,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum Class {
    Elementwise,
    Matvec,
    Cubic,
}

thread_local! {
    static COUNTER: Cell<FlopCount> = const { Cell::new(FlopCount {
        elementwise: 0,
        matvec: 0,
        cubic: 0,
        cubic_calls: 0,
    }) };
}

#[inline]
pub(crate) fn record(class: Class, flops: usize) {
    COUNTER.with(|c| {
        let mut v = c.get();
        let f = flops as u64;
        match class {
            Class::Elementwise => v.elementwise += f,
            Class::Matvec => v.matvec += f,
            Class::Cubic => {
                v.cubic += f;
                v.cubic_calls += 1;
            }
        }
        c.set(v);
    });
}

/// Current counter value for this thread.
pub fn snapshot() -> FlopCount {
    COUNTER.with(|c| c.get())
}

/// Runs `f` and returns its result together with the operations it performed
/// on the calling thread.
pub fn measure<R>(f: impl FnOnce() -> R) -> (R, FlopCount) {
    let before = snapshot();
    let out = f();
    (out, snapshot() - before)
}
