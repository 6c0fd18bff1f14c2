//! Element counters for simulated memory traffic.

use std::ops::{Add, AddAssign, Sub};

/// Scalars loaded per memory class. Counts only ever grow; callers that need
/// per-step figures take the difference of two snapshots.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct IoLedger {
    /// Raw key/value scalars loaded for exact attention.
    pub exact_kv_elements: u64,
    /// Summary scalars (means, variances) loaded for block selection.
    pub summary_elements: u64,
    /// Linear-state scalars read or written.
    pub state_elements: u64,
}

impl IoLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn charge_exact_kv(&mut self, n: u64) {
        self.exact_kv_elements += n;
    }

    pub fn charge_summary(&mut self, n: u64) {
        self.summary_elements += n;
    }

    pub fn charge_state(&mut self, n: u64) {
        self.state_elements += n;
    }

    pub fn total_elements(&self) -> u64 {
        self.exact_kv_elements + self.summary_elements + self.state_elements
    }

    /// Merges a per-thread ledger into this one.
    pub fn merge(&mut self, other: &IoLedger) {
        *self += *other;
    }
}

impl Add for IoLedger {
    type Output = IoLedger;
    fn add(self, rhs: IoLedger) -> IoLedger {
        IoLedger {
            exact_kv_elements: self.exact_kv_elements + rhs.exact_kv_elements,
            summary_elements: self.summary_elements + rhs.summary_elements,
            state_elements: self.state_elements + rhs.state_elements,
        }
    }
}

impl AddAssign for IoLedger {
    fn add_assign(&mut self, rhs: IoLedger) {
        *self = *self + rhs;
    }
}

/// Difference of two snapshots; panics if `rhs` is not an earlier snapshot.
impl Sub for IoLedger {
    type Output = IoLedger;
    fn sub(self, rhs: IoLedger) -> IoLedger {
        IoLedger {
            exact_kv_elements: self.exact_kv_elements - rhs.exact_kv_elements,
            summary_elements: self.summary_elements - rhs.summary_elements,
            state_elements: self.state_elements - rhs.state_elements,
        }
    }
}
