//! Workload drivers and the event loop running them on virtual time.

use std::sync::Arc;

use got_core::wire::{decode, encode, Message};
use got_core::{
    default_resolver, Dataframe, DataframeConfig, DimValue, ObjectId, ObjectState, Strategy,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cost::CostModel;
use crate::metrics::{CensusSample, LatencySample, MetricsLog, Operation, Role};
use crate::net::{ms_to_us, Micros, SimNet};
use crate::schema::{physics_policy, space_race, ASTEROID, MAX_SPEED, PLAYER, SHIP};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error(transparent)]
    Got(#[from] got_core::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConflictMode {
    None,
    /// The observer commits its own asteroid predictions before each pull.
    CommitPredictions,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Workload {
    pub role: Role,
    pub period_ms: u64,
    pub conflict_mode: ConflictMode,
    /// Chance per tick that an actor changes its ship's velocity.
    pub act_probability: f64,
}

impl Workload {
    pub fn producer() -> Self {
        Workload {
            role: Role::Producer,
            period_ms: 50,
            conflict_mode: ConflictMode::None,
            act_probability: 0.0,
        }
    }

    pub fn actor() -> Self {
        Workload {
            role: Role::Actor,
            period_ms: 300,
            conflict_mode: ConflictMode::None,
            act_probability: 0.1,
        }
    }

    pub fn observer(conflict_mode: ConflictMode) -> Self {
        Workload {
            role: Role::Observer,
            period_ms: 300,
            conflict_mode,
            act_probability: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub seed: u64,
    pub rtt_ms: f64,
    pub jitter_ms: f64,
    pub duration_ms: u64,
    pub asteroids: usize,
    /// Exactly one producer, which also serves every other node.
    pub workloads: Vec<Workload>,
    pub gc: bool,
    pub census: bool,
    pub cost: CostModel,
}

impl Scenario {
    /// One producer, `actors` actors and one observer.
    pub fn new(asteroids: usize, actors: usize, conflicts: bool) -> Self {
        let mode = if conflicts {
            ConflictMode::CommitPredictions
        } else {
            ConflictMode::None
        };
        let mut workloads = vec![Workload::producer()];
        workloads.extend(std::iter::repeat(Workload::actor()).take(actors));
        workloads.push(Workload::observer(mode));
        Scenario {
            seed: 0,
            rtt_ms: 72.0,
            jitter_ms: 0.0,
            duration_ms: 60_000,
            asteroids,
            workloads,
            gc: true,
            census: false,
            cost: CostModel::default(),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let producers = self.workloads.iter().filter(|w| w.role == Role::Producer).count();
        if producers != 1 {
            return Err(SimError::Config(format!("need exactly one producer, got {producers}")));
        }
        if self.workloads.iter().any(|w| w.period_ms == 0) {
            return Err(SimError::Config("loop period must be positive".into()));
        }
        if !(self.rtt_ms.is_finite() && self.rtt_ms >= 0.0) {
            return Err(SimError::Config(format!("bad rtt {}", self.rtt_ms)));
        }
        if !(self.jitter_ms.is_finite() && self.jitter_ms >= 0.0) {
            return Err(SimError::Config(format!("bad jitter {}", self.jitter_ms)));
        }
        if self
            .workloads
            .iter()
            .any(|w| !(0.0..=1.0).contains(&w.act_probability))
        {
            return Err(SimError::Config("act probability outside [0, 1]".into()));
        }
        Ok(())
    }

    pub fn conflicts(&self) -> bool {
        self.workloads
            .iter()
            .any(|w| w.conflict_mode == ConflictMode::CommitPredictions)
    }
}

pub const SERVER: &str = "physics";
const WORLD: f64 = 1000.0;

#[derive(Debug, Clone, Copy)]
enum Step {
    Checkout,
    Simulate,
    Predict,
    Act,
    Commit,
    Fetch,
    Push,
}

fn program(w: &Workload) -> &'static [Step] {
    use Step::*;
    match (w.role, w.conflict_mode) {
        (Role::Producer, _) => &[Checkout, Simulate, Commit],
        (Role::Actor, _) => &[Fetch, Checkout, Act, Commit, Push],
        (Role::Observer, ConflictMode::None) => &[Fetch, Checkout],
        (Role::Observer, ConflictMode::CommitPredictions) => &[Predict, Commit, Fetch, Checkout],
    }
}

enum Pending {
    Fetch { started: Micros },
    Push { started: Micros, request: Message },
}

struct Node {
    name: String,
    workload: Workload,
    df: Dataframe,
    rng: ChaCha8Rng,
    step: usize,
    tick_start: Micros,
    last_predict: Option<Micros>,
    pending: Option<Pending>,
    joined: bool,
    index: usize,
}

enum Event {
    Tick(usize),
    Request { from: usize, frame: Vec<u8> },
    Response { to: usize, frame: Vec<u8> },
}

/// A configured set of nodes on one virtual network.
pub struct Simulation {
    scenario: Scenario,
    nodes: Vec<Node>,
    net: SimNet<Event>,
    metrics: MetricsLog,
}

fn node_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

impl Simulation {
    pub fn new(scenario: Scenario) -> Result<Self, SimError> {
        scenario.validate()?;
        let registry = Arc::new(space_race());
        let mut order: Vec<Workload> = scenario.workloads.clone();
        order.sort_by_key(|w| w.role);
        let mut nodes = Vec::new();
        let (mut actors, mut observers) = (0, 0);
        for (index, w) in order.into_iter().enumerate() {
            let seed = node_seed(scenario.seed, index);
            let (name, config) = match w.role {
                Role::Producer => (
                    SERVER.to_string(),
                    DataframeConfig::default().with_resolver(physics_policy),
                ),
                Role::Actor => {
                    actors += 1;
                    (
                        format!("bot-{}", actors - 1),
                        DataframeConfig::default().with_resolver(default_resolver(Strategy::KeepTheirs)),
                    )
                }
                Role::Observer => {
                    observers += 1;
                    (
                        format!("viewer-{}", observers - 1),
                        DataframeConfig::default().with_resolver(default_resolver(Strategy::KeepTheirs)),
                    )
                }
            };
            let mut df = Dataframe::new(name.clone(), registry.clone(), config.with_seed(seed).with_gc(scenario.gc));
            match w.role {
                Role::Producer => {}
                Role::Actor => {
                    df.add_remote(SERVER, SERVER);
                }
                Role::Observer => {
                    df.subscribe_types(&[SHIP, ASTEROID])?;
                    df.add_remote(SERVER, SERVER);
                }
            }
            nodes.push(Node {
                name,
                workload: w,
                df,
                rng: ChaCha8Rng::seed_from_u64(seed),
                step: 0,
                tick_start: 0,
                last_predict: None,
                pending: None,
                joined: false,
                index,
            });
        }
        let mut net = SimNet::new(scenario.seed, scenario.rtt_ms, scenario.jitter_ms);
        for (i, n) in nodes.iter().enumerate() {
            // stagger first ticks so roles do not start in lockstep
            let offset = match n.workload.role {
                Role::Producer => 0,
                _ => ms_to_us(1.0) * (7 * i as u64 % n.workload.period_ms.max(1)),
            };
            net.schedule(offset, Event::Tick(i));
        }
        let metrics = MetricsLog {
            n_objects: scenario.asteroids,
            conflicts: scenario.conflicts(),
            ..Default::default()
        };
        let mut sim = Simulation {
            scenario,
            nodes,
            net,
            metrics,
        };
        sim.setup_world()?;
        Ok(sim)
    }

    fn setup_world(&mut self) -> Result<(), SimError> {
        let n = self.scenario.asteroids;
        let producer = &mut self.nodes[0];
        for k in 0..n {
            let x = producer.rng.gen_range(0.0..WORLD);
            let y = producer.rng.gen_range(0.0..WORLD);
            let v = producer.rng.gen_range(-50.0..50.0);
            producer.df.create(
                ObjectState::new(ObjectId::new(ASTEROID, k as i64))
                    .with("x", x)
                    .with("y", y)
                    .with("velocity", v),
            )?;
        }
        producer.df.commit()?;
        self.census(0);
        Ok(())
    }

    pub fn node(&self, name: &str) -> Option<&Dataframe> {
        self.nodes.iter().find(|n| n.name == name).map(|n| &n.df)
    }

    pub fn node_names(&self) -> impl Iterator<Item = &str> {
        self.nodes.iter().map(|n| n.name.as_str())
    }

    pub fn metrics(&self) -> &MetricsLog {
        &self.metrics
    }

    pub fn into_metrics(self) -> MetricsLog {
        self.metrics
    }

    /// Runs every event scheduled before the scenario's duration.
    pub fn run(&mut self) -> Result<(), SimError> {
        let end = ms_to_us(self.scenario.duration_ms as f64);
        while let Some((now, event)) = self.net.pop() {
            if now >= end {
                break;
            }
            match event {
                Event::Tick(i) => {
                    self.nodes[i].tick_start = now;
                    self.nodes[i].step = 0;
                    self.advance(i, now)?;
                }
                Event::Request { from, frame } => self.serve(from, now, &frame)?,
                Event::Response { to, frame } => self.receive(to, now, &frame)?,
            }
        }
        Ok(())
    }

    fn record(&mut self, i: usize, op: Operation, elapsed: Micros, payload_bytes: usize) {
        let n = &self.nodes[i];
        self.metrics.latencies.push(LatencySample {
            role: n.workload.role,
            node: n.name.clone(),
            operation: op,
            elapsed,
            payload_bytes,
        });
    }

    fn census(&mut self, now: Micros) {
        if !self.scenario.census {
            return;
        }
        let repo = self.nodes[0].df.lock();
        for g in repo.graphs() {
            self.metrics.census.push(CensusSample {
                time: now,
                type_name: g.type_name().to_string(),
                vertex_count: g.vertex_count(),
                fork_count: g.fork_vertex_count(),
            });
        }
    }

    /// Runs local steps until the tick ends or a request goes out.
    fn advance(&mut self, i: usize, mut now: Micros) -> Result<(), SimError> {
        let steps = program(&self.nodes[i].workload);
        let cost = self.scenario.cost;
        while let Some(step) = steps.get(self.nodes[i].step).copied() {
            self.nodes[i].step += 1;
            match step {
                Step::Checkout => {
                    let report = self.nodes[i].df.checkout()?;
                    let c = cost.checkout(report.objects_applied);
                    self.record(i, Operation::Checkout, c, 0);
                    now += c;
                    if i == 0 {
                        self.census(now);
                    }
                }
                Step::Simulate => {
                    let dt = 0.001 * self.nodes[i].workload.period_ms as f64;
                    simulate(&mut self.nodes[i], dt)?;
                }
                Step::Predict => {
                    let node = &mut self.nodes[i];
                    let dt = node.last_predict.map_or(0.0, |t| (now - t) as f64 / 1e6);
                    node.last_predict = Some(now);
                    if dt > 0.0 {
                        predict(node, dt)?;
                    }
                }
                Step::Act => act(&mut self.nodes[i])?,
                Step::Commit => {
                    let entries: usize = self.nodes[i]
                        .df
                        .subscribed_types()
                        .map(|t| self.nodes[i].df.snapshot(t).map_or(0, |s| s.staged().len()))
                        .sum();
                    self.nodes[i].df.commit()?;
                    let c = cost.commit(entries);
                    self.record(i, Operation::Commit, c, 0);
                    now += c;
                    if i == 0 {
                        self.census(now);
                    }
                }
                Step::Fetch => {
                    let request = self.nodes[i].df.fetch_request(SERVER)?;
                    let frame = encode(&request)?;
                    self.nodes[i].pending = Some(Pending::Fetch { started: now });
                    let sent = now + cost.serialize(frame.len());
                    self.net.send(sent, Event::Request { from: i, frame });
                    return Ok(());
                }
                Step::Push => match self.nodes[i].df.push_request(SERVER)? {
                    None => self.record(i, Operation::Push, 0, 0),
                    Some(request) => {
                        let frame = encode(&request)?;
                        self.nodes[i].pending = Some(Pending::Push { started: now, request });
                        let sent = now + cost.serialize(frame.len());
                        self.net.send(sent, Event::Request { from: i, frame });
                        return Ok(());
                    }
                },
            }
        }
        let node = &self.nodes[i];
        let next = (node.tick_start + ms_to_us(node.workload.period_ms as f64)).max(now);
        self.net.schedule(next, Event::Tick(i));
        Ok(())
    }

    fn serve(&mut self, from: usize, now: Micros, frame: &[u8]) -> Result<(), SimError> {
        let cost = self.scenario.cost;
        let (reply, stats) = {
            let mut repo = self.nodes[0].df.lock();
            let request = decode(frame, repo.registry())?;
            let (response, stats) = repo.handle_with_stats(&request);
            (encode(&response)?, stats)
        };
        let c = cost.serialize(frame.len()) + cost.handle(stats.merges, stats.conflicts) + cost.serialize(reply.len());
        self.record(0, Operation::Receive, c, frame.len() + reply.len());
        self.census(now + c);
        self.net.send(now + c, Event::Response { to: from, frame: reply });
        Ok(())
    }

    fn receive(&mut self, i: usize, now: Micros, frame: &[u8]) -> Result<(), SimError> {
        let cost = self.scenario.cost;
        let response = decode(frame, self.nodes[i].df.registry())?;
        let done = now + cost.serialize(frame.len());
        match self.nodes[i].pending.take() {
            Some(Pending::Fetch { started }) => {
                let report = self.nodes[i].df.complete_fetch(SERVER, &response)?;
                if let Some(t) = report.rejected.first() {
                    return Err(got_core::Error::FetchRejected {
                        remote: SERVER.into(),
                        type_name: t.clone(),
                        version: self.nodes[i].df.remote(SERVER)?.last_known(t),
                    }
                    .into());
                }
                let put = cost.put(report.types_received.len(), report.merges, report.conflicts);
                self.record(i, Operation::Fetch, done - started, frame.len());
                self.record(i, Operation::Pull, done + put - started, frame.len());
                self.advance(i, done + put)
            }
            Some(Pending::Push { started, request }) => {
                let report = self.nodes[i].df.complete_push(SERVER, &request, &response)?;
                if let Some(t) = report.rejected.first() {
                    return Err(got_core::Error::PushRejected {
                        remote: SERVER.into(),
                        type_name: t.clone(),
                        version: self.nodes[i].df.remote(SERVER)?.last_known(t),
                    }
                    .into());
                }
                self.record(i, Operation::Push, done - started, request.delta_bytes());
                self.advance(i, done)
            }
            None => Err(SimError::Config(format!("{} got an unexpected response", self.nodes[i].name))),
        }
    }
}

fn wrap(x: f64) -> f64 {
    x.rem_euclid(WORLD)
}

fn float(obj: &ObjectState, dim: &str) -> f64 {
    obj.get(dim).and_then(DimValue::as_f64).unwrap_or(0.0)
}

/// Physics frame: asteroids drift along x, running ships climb along y.
fn simulate(node: &mut Node, dt: f64) -> Result<(), SimError> {
    for a in node.df.read_all(ASTEROID)? {
        let x = wrap(float(&a, "x") + float(&a, "velocity") * dt);
        node.df.write(&a.id, "x", x)?;
    }
    for s in node.df.read_all(SHIP)? {
        let v = float(&s, "velocity");
        if v == 0.0 {
            continue;
        }
        let y = float(&s, "y") + v * dt;
        if !(0.0..WORLD).contains(&y) {
            let trips = s.get("trips").and_then(DimValue::as_i64).unwrap_or(0);
            node.df.write(&s.id, "trips", trips + 1)?;
        }
        node.df.write(&s.id, "y", wrap(y))?;
    }
    Ok(())
}

/// Viewer-side extrapolation of asteroid positions.
fn predict(node: &mut Node, dt: f64) -> Result<(), SimError> {
    for a in node.df.read_all(ASTEROID)? {
        let x = wrap(float(&a, "x") + float(&a, "velocity") * dt);
        node.df.write(&a.id, "x", x)?;
    }
    Ok(())
}

/// The bot joins once with a player and a ship, then occasionally steers.
fn act(node: &mut Node) -> Result<(), SimError> {
    let key = node.index as i64;
    let ship = ObjectId::new(SHIP, key);
    if !node.joined {
        node.joined = true;
        node.df.create(
            ObjectState::new(ObjectId::new(PLAYER, key))
                .with("player_id", node.name.as_str())
                .with("ready", true)
                .with("winner", false),
        )?;
        node.df.create(
            ObjectState::new(ship)
                .with("player_id", node.name.as_str())
                .with("x", 10.0 * key as f64)
                .with("y", 0.0)
                .with("trips", 0i64)
                .with("velocity", -100.0)
                .with("state", 0i64),
        )?;
        return Ok(());
    }
    let p = node.workload.act_probability;
    if p > 0.0 && node.rng.gen_bool(p) {
        let v = node.rng.gen_range(-MAX_SPEED..=MAX_SPEED);
        node.df.write(&ship, "velocity", v)?;
    }
    Ok(())
}

/// Runs `scenario` to completion.
pub fn run_scenario(scenario: &Scenario) -> Result<MetricsLog, SimError> {
    let mut sim = Simulation::new(scenario.clone())?;
    sim.run()?;
    Ok(sim.into_metrics())
}

/// Producer vertex counts over a run with `actors` actors and one observer.
pub fn run_version_census(
    actors: usize,
    producer_commits: u64,
    gc: bool,
    seed: u64,
) -> Result<MetricsLog, SimError> {
    let mut scenario = Scenario::new(20, actors, false);
    scenario.seed = seed;
    scenario.gc = gc;
    scenario.census = true;
    scenario.duration_ms = producer_commits * Workload::producer().period_ms;
    run_scenario(&scenario)
}
