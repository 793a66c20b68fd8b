//! Deterministic compute-cost model for local operations.

use crate::net::Micros;

/// Per-operation compute charges in microseconds of virtual time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostModel {
    pub serialize_us_per_byte: f64,
    pub message_base_us: f64,
    pub handle_base_us: f64,
    pub attach_us: f64,
    pub merge_base_us: f64,
    pub merge_us_per_conflict: f64,
    pub checkout_base_us: f64,
    pub checkout_us_per_object: f64,
    pub commit_base_us: f64,
    pub commit_us_per_entry: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            serialize_us_per_byte: 0.4,
            message_base_us: 50.0,
            handle_base_us: 50.0,
            attach_us: 20.0,
            merge_base_us: 200.0,
            merge_us_per_conflict: 40.0,
            checkout_base_us: 50.0,
            checkout_us_per_object: 20.0,
            commit_base_us: 50.0,
            commit_us_per_entry: 10.0,
        }
    }
}

fn us(x: f64) -> Micros {
    x.round().max(0.0) as Micros
}

impl CostModel {
    /// Encoding or decoding one frame.
    pub fn serialize(&self, bytes: usize) -> Micros {
        us(self.message_base_us + self.serialize_us_per_byte * bytes as f64)
    }

    /// Putting received payloads into graphs.
    pub fn put(&self, payloads: usize, merges: usize, conflicts: usize) -> Micros {
        us(self.attach_us * payloads as f64
            + self.merge_base_us * merges as f64
            + self.merge_us_per_conflict * conflicts as f64)
    }

    /// Answering one request, excluding serialization.
    pub fn handle(&self, merges: usize, conflicts: usize) -> Micros {
        us(self.handle_base_us) + self.put(0, merges, conflicts)
    }

    pub fn checkout(&self, objects_applied: usize) -> Micros {
        us(self.checkout_base_us + self.checkout_us_per_object * objects_applied as f64)
    }

    pub fn commit(&self, entries: usize) -> Micros {
        us(self.commit_base_us + self.commit_us_per_entry * entries as f64)
    }
}
