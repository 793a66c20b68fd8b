//! Latency samples, version census and their CSV renderings.

use std::fmt;

use crate::net::{us_to_ms, Micros};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Role {
    Producer,
    Actor,
    Observer,
}

impl Role {
    pub const ALL: [Role; 3] = [Role::Producer, Role::Actor, Role::Observer];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Producer => "producer",
            Role::Actor => "actor",
            Role::Observer => "observer",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The six measured functions. `Pull` is fetch plus putting the received
/// deltas into the graph (merging if needed); checkout is measured apart.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Operation {
    Push,
    Fetch,
    Pull,
    Receive,
    Commit,
    Checkout,
}

impl Operation {
    pub const ALL: [Operation; 6] = [
        Operation::Push,
        Operation::Fetch,
        Operation::Pull,
        Operation::Receive,
        Operation::Commit,
        Operation::Checkout,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Operation::Push => "push",
            Operation::Fetch => "fetch",
            Operation::Pull => "pull",
            Operation::Receive => "receive",
            Operation::Commit => "commit",
            Operation::Checkout => "checkout",
        }
    }
}

impl fmt::Display for Operation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatencySample {
    pub role: Role,
    pub node: String,
    pub operation: Operation,
    pub elapsed: Micros,
    pub payload_bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CensusSample {
    pub time: Micros,
    pub type_name: String,
    pub vertex_count: usize,
    pub fork_count: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLog {
    pub n_objects: usize,
    pub conflicts: bool,
    pub latencies: Vec<LatencySample>,
    pub census: Vec<CensusSample>,
}

/// Median (mean of the middle pair for even counts) and nearest-rank p95.
fn summarize(mut xs: Vec<Micros>) -> Option<(f64, f64)> {
    if xs.is_empty() {
        return None;
    }
    xs.sort_unstable();
    let n = xs.len();
    let median = if n % 2 == 1 {
        us_to_ms(xs[n / 2])
    } else {
        (us_to_ms(xs[n / 2 - 1]) + us_to_ms(xs[n / 2])) / 2.0
    };
    let rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n);
    Some((median, us_to_ms(xs[rank - 1])))
}

impl MetricsLog {
    pub fn samples(&self, role: Role, op: Operation) -> impl Iterator<Item = &LatencySample> {
        self.latencies
            .iter()
            .filter(move |s| s.role == role && s.operation == op)
    }

    /// Median elapsed milliseconds.
    pub fn median_ms(&self, role: Role, op: Operation) -> Option<f64> {
        summarize(self.samples(role, op).map(|s| s.elapsed).collect()).map(|(m, _)| m)
    }

    pub fn p95_ms(&self, role: Role, op: Operation) -> Option<f64> {
        summarize(self.samples(role, op).map(|s| s.elapsed).collect()).map(|(_, p)| p)
    }

    pub fn census_for<'a>(&'a self, type_name: &'a str) -> impl Iterator<Item = &'a CensusSample> {
        self.census.iter().filter(move |c| c.type_name == type_name)
    }

    /// `role,operation,n_objects,conflicts,median_ms,p95_ms,samples`, six
    /// rows per role. Roles that never ran an operation get empty timings.
    pub fn latency_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["role", "operation", "n_objects", "conflicts", "median_ms", "p95_ms", "samples"])
            .expect("in-memory write");
        for role in Role::ALL {
            for op in Operation::ALL {
                let xs: Vec<Micros> = self.samples(role, op).map(|s| s.elapsed).collect();
                let n = xs.len();
                let (median, p95) = match summarize(xs) {
                    Some((m, p)) => (format!("{m:.3}"), format!("{p:.3}")),
                    None => (String::new(), String::new()),
                };
                w.write_record([
                    role.as_str(),
                    op.as_str(),
                    &self.n_objects.to_string(),
                    if self.conflicts { "1" } else { "0" },
                    &median,
                    &p95,
                    &n.to_string(),
                ])
                .expect("in-memory write");
            }
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii")
    }

    /// `virtual_time_ms,type_name,vertex_count`.
    pub fn census_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["virtual_time_ms", "type_name", "vertex_count"])
            .expect("in-memory write");
        for c in &self.census {
            w.write_record([
                format!("{}.{:03}", c.time / 1000, c.time % 1000),
                c.type_name.clone(),
                c.vertex_count.to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii")
    }
}
