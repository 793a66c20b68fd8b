//! Virtual clock, latency model and an ordered event queue.

use std::collections::BTreeMap;

use got_core::{InProcessNetwork, Repository, Result, Transport};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::{Arc, Mutex};

/// Microseconds of virtual time.
pub type Micros = u64;

pub fn ms_to_us(ms: f64) -> Micros {
    (ms * 1000.0).round().max(0.0) as Micros
}

pub fn us_to_ms(us: Micros) -> f64 {
    us as f64 / 1000.0
}

/// Events fire in time order; ties fire in scheduling order.
#[derive(Debug)]
pub struct SimNet<E> {
    now: Micros,
    one_way: Micros,
    jitter: Micros,
    rng: ChaCha8Rng,
    seq: u64,
    queue: BTreeMap<(Micros, u64), E>,
}

impl<E> SimNet<E> {
    pub fn new(seed: u64, rtt_ms: f64, jitter_ms: f64) -> Self {
        SimNet {
            now: 0,
            one_way: ms_to_us(rtt_ms / 2.0),
            jitter: ms_to_us(jitter_ms),
            rng: ChaCha8Rng::seed_from_u64(seed),
            seq: 0,
            queue: BTreeMap::new(),
        }
    }

    pub fn now(&self) -> Micros {
        self.now
    }

    /// One-way link delay, RTT/2 plus uniform jitter.
    pub fn latency(&mut self) -> Micros {
        if self.jitter == 0 {
            return self.one_way;
        }
        let j = self.rng.gen_range(0..=2 * self.jitter) as i64 - self.jitter as i64;
        (self.one_way as i64 + j).max(0) as Micros
    }

    pub fn schedule(&mut self, at: Micros, event: E) {
        self.queue.insert((at.max(self.now), self.seq), event);
        self.seq += 1;
    }

    /// Schedules delivery of `event` one link delay after `sent_at`.
    pub fn send(&mut self, sent_at: Micros, event: E) -> Micros {
        let at = sent_at + self.latency();
        self.schedule(at, event);
        at
    }

    pub fn pop(&mut self) -> Option<(Micros, E)> {
        let ((at, _), e) = self.queue.pop_first()?;
        self.now = at;
        Some((at, e))
    }

    pub fn is_idle(&self) -> bool {
        self.queue.is_empty()
    }
}

/// A [`Transport`] that routes each frame through a [`SimNet`] and lets
/// virtual time pass for both legs of the round trip.
pub struct SimTransport {
    nodes: InProcessNetwork,
    net: SimNet<Vec<u8>>,
}

impl SimTransport {
    pub fn new(seed: u64, rtt_ms: f64) -> Self {
        SimTransport {
            nodes: InProcessNetwork::new(),
            net: SimNet::new(seed, rtt_ms, 0.0),
        }
    }

    pub fn register(&mut self, address: impl Into<String>, repo: Arc<Mutex<Repository>>) {
        self.nodes.register(address, repo);
    }

    pub fn now(&self) -> Micros {
        self.net.now()
    }
}

impl Transport for SimTransport {
    fn exchange(&mut self, address: &str, frame: &[u8]) -> Result<Vec<u8>> {
        let now = self.net.now();
        self.net.send(now, frame.to_vec());
        let (at, request) = self.net.pop().expect("just scheduled");
        let reply = self.nodes.exchange(address, &request)?;
        self.net.send(at, reply);
        let (_, reply) = self.net.pop().expect("just scheduled");
        Ok(reply)
    }
}
