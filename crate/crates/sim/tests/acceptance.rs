//! Acceptance suite: one PASS/FAIL line per criterion.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use got_core::wire::{decode, encode, Message, MessageKind, Payload, Status};
use got_core::{
    apply, default_resolver, diff_states, ConflictEntry, Dataframe, DataframeConfig, Delta,
    DimValue, Edge, InProcessNetwork, ObjectDelta, ObjectId, ObjectState, PutOutcome, Resolver,
    State, Strategy, TcpTransport, Transport, TypeDescriptor, TypeRegistry, Values, VersionGraph,
    VersionId, VersionIdGen,
};
use got_sim::schema::{physics_policy, space_race, ASTEROID, MAX_SPEED, SHIP};
use got_sim::{
    run_scenario, run_version_census, CensusSample, MetricsLog, Operation, Role, Scenario,
    SimTransport,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! check {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

// ---------------------------------------------------------------- helpers

const DIMS: [&str; 4] = ["a", "b", "c", "d"];

fn test_descriptor() -> TypeDescriptor {
    TypeDescriptor::new("T", DIMS).unwrap()
}

fn test_registry() -> TypeRegistry {
    let mut r = TypeRegistry::new();
    r.register(test_descriptor()).unwrap();
    r.register(TypeDescriptor::new("U", ["p", "q"]).unwrap()).unwrap();
    r
}

fn random_value(rng: &mut ChaCha8Rng) -> DimValue {
    match rng.gen_range(0..5) {
        0 => DimValue::Int(rng.gen_range(-5..5)),
        1 => DimValue::Float(rng.gen_range(-8i32..8) as f64 / 4.0),
        2 => DimValue::Str(format!("s{}", rng.gen_range(0..4))),
        3 => DimValue::Bool(rng.gen()),
        _ => DimValue::Null,
    }
}

fn random_full(rng: &mut ChaCha8Rng, dims: &[&str]) -> Values {
    dims.iter().map(|d| (d.to_string(), random_value(rng))).collect()
}

fn random_partial(rng: &mut ChaCha8Rng, dims: &[&str]) -> Values {
    let mut v = Values::new();
    for d in dims {
        if rng.gen_bool(0.5) {
            v.insert(d.to_string(), random_value(rng));
        }
    }
    if v.is_empty() {
        v.insert(dims[rng.gen_range(0..dims.len())].to_string(), random_value(rng));
    }
    v
}

/// A delta valid against `state` over at most five objects of type `T`.
fn random_delta(rng: &mut ChaCha8Rng, state: &State) -> Delta {
    let mut cur = state.clone();
    let mut d = Delta::new();
    for _ in 0..rng.gen_range(1..=3) {
        let id = ObjectId::new("T", rng.gen_range(0..5i64));
        let entry = if cur.contains_key(&id) {
            if rng.gen_bool(0.2) {
                ObjectDelta::delete()
            } else {
                ObjectDelta::modify(random_partial(rng, &DIMS))
            }
        } else {
            ObjectDelta::new_object(random_full(rng, &DIMS))
        };
        let single: Delta = [(id.clone(), entry.clone())].into_iter().collect();
        cur = apply(&cur, &single);
        d.push(id, entry);
    }
    d
}

fn canonical(state: &State) -> String {
    diff_states(&State::new(), state)
        .to_json()
        .map(|v| v.to_string())
        .unwrap_or_default()
}

/// Resolves every conflict with a random legal choice.
struct RandomResolver(std::sync::Mutex<ChaCha8Rng>);

impl Resolver for RandomResolver {
    fn resolve(&self, conflicts: &[ConflictEntry], _: &State, _: &State, _: &State) -> Result<Delta, String> {
        let mut rng = self.0.lock().unwrap();
        let mut out = Delta::new();
        for c in conflicts {
            match rng.gen_range(0..4) {
                0 => {}
                1 => out.insert(c.id.clone(), ObjectDelta::new_object(random_full(&mut rng, &DIMS))),
                2 => out.insert(c.id.clone(), ObjectDelta::delete()),
                _ if c.mine.is_some() && c.theirs.is_some() => {
                    out.insert(c.id.clone(), ObjectDelta::modify(random_partial(&mut rng, &DIMS)))
                }
                _ => {}
            }
        }
        Ok(out)
    }
}

fn peers_bound(samples: &[&CensusSample], peers: usize, with_forks: bool) -> Result<(), String> {
    for s in samples {
        let bound = peers + 4 + if with_forks { s.fork_count } else { 0 };
        check!(
            s.vertex_count <= bound,
            "{} has {} vertices at {} ms (bound {bound})",
            s.type_name,
            s.vertex_count,
            s.time as f64 / 1000.0
        );
    }
    Ok(())
}

/// Max over the last quarter may not exceed the max over the quarter before.
fn plateau(counts: &[usize]) -> Result<usize, String> {
    let n = counts.len();
    let third = counts[n / 2..3 * n / 4].iter().max().copied().unwrap_or(0);
    let fourth = counts[3 * n / 4..].iter().max().copied().unwrap_or(0);
    check!(fourth <= third, "still growing: {third} then {fourth}");
    Ok(fourth)
}

fn census_by_type(log: &MetricsLog) -> BTreeMap<String, Vec<&CensusSample>> {
    let mut by: BTreeMap<String, Vec<&CensusSample>> = BTreeMap::new();
    for c in &log.census {
        by.entry(c.type_name.clone()).or_default().push(c);
    }
    by
}

// ---------------------------------------------------------------- criteria

fn bounded_version_graph() -> Outcome {
    let one = run_version_census(1, 10_000, true, 1).map_err(|e| e.to_string())?;
    let commits = one
        .census
        .iter()
        .filter(|c| c.type_name == ASTEROID)
        .map(|c| c.time)
        .max()
        .unwrap_or(0);
    check!(commits >= 499_000_000 / 1000, "run too short");
    let mut one_plateau = 0;
    for (t, samples) in census_by_type(&one) {
        peers_bound(&samples, 2, false)?;
        let counts: Vec<usize> = samples.iter().map(|s| s.vertex_count).collect();
        let p = plateau(&counts).map_err(|e| format!("{t}: {e}"))?;
        one_plateau = one_plateau.max(p);
    }

    let ten = run_version_census(10, 10_000, true, 1).map_err(|e| e.to_string())?;
    let mut ten_plateau = 0;
    for (t, samples) in census_by_type(&ten) {
        peers_bound(&samples, 11, true)?;
        let counts: Vec<usize> = samples.iter().map(|s| s.vertex_count).collect();
        let p = plateau(&counts).map_err(|e| format!("{t}: {e}"))?;
        ten_plateau = ten_plateau.max(p);
    }
    check!(ten_plateau > one_plateau, "10 actors plateau {ten_plateau} not above {one_plateau}");

    let off = run_version_census(1, 10_000, false, 1).map_err(|e| e.to_string())?;
    let max_off = off.census.iter().map(|c| c.vertex_count).max().unwrap_or(0);
    check!(max_off >= 9_000, "GC off only reached {max_off} vertices");
    Ok(format!(
        "plateau 1 actor = {one_plateau} (bound 6), 10 actors = {ten_plateau}, GC off = {max_off}"
    ))
}

fn squash_efficiency() -> Outcome {
    let registry = Arc::new(space_race());
    let mut sizes = Vec::new();
    for k in [1usize, 10, 100] {
        let mut net = InProcessNetwork::new();
        let mut server = Dataframe::new("server", registry.clone(), DataframeConfig::default().with_seed(1));
        for i in 0..10 {
            server
                .create(
                    ObjectState::new(ObjectId::new(ASTEROID, i))
                        .with("x", 0.0)
                        .with("y", 0.0)
                        .with("velocity", 1.0),
                )
                .unwrap();
        }
        server.commit().unwrap();
        net.register("server", server.repository());
        let mut client = Dataframe::new("client", registry.clone(), DataframeConfig::default().with_seed(2));
        client.add_remote("server", "server");
        client.pull("server", &mut net).unwrap();
        let temp = ObjectId::new(ASTEROID, 999);
        for j in 0..k {
            let last = j + 1 == k;
            for i in 0..10 {
                let x = if last { 100.0 + i as f64 } else { j as f64 + 0.25 };
                client.write(&ObjectId::new(ASTEROID, i), "x", x).unwrap();
            }
            if k > 1 && j == 0 {
                client
                    .create(ObjectState::new(temp.clone()).with("x", 1.0).with("y", 1.0).with("velocity", 0.0))
                    .unwrap();
            }
            if k > 1 && last {
                client.delete(&temp).unwrap();
            }
            client.commit().unwrap();
        }
        let request = client.push_request("server").unwrap().ok_or("nothing to push")?;
        client.abort_push("server");
        check!(request.payloads.len() == 1, "k={k}: {} payloads", request.payloads.len());
        let report = client.push("server", &mut net).unwrap();
        check!(report.types_sent == [ASTEROID], "k={k}: sent {:?}", report.types_sent);
        sizes.push(report.total_delta_bytes());
    }
    let (lo, hi) = (*sizes.iter().min().unwrap(), *sizes.iter().max().unwrap());
    let spread = (hi - lo) as f64 / lo as f64;
    check!(spread < 0.01, "payload sizes {sizes:?} vary by {:.2}%", spread * 100.0);
    Ok(format!("payload bytes for k=1,10,100: {sizes:?}"))
}

fn quiescent_silence() -> Outcome {
    let registry = Arc::new(space_race());
    let mut net = InProcessNetwork::new();
    let server = Dataframe::new("server", registry.clone(), DataframeConfig::default().with_seed(1));
    net.register("server", server.repository());
    let mut node = Dataframe::new("node", registry, DataframeConfig::default().with_seed(2));
    node.add_remote("server", "server");
    check!(node.push_request("server").unwrap().is_none(), "fresh node built a message");
    let r = node.push("server", &mut net).unwrap();
    check!(r.types_sent.is_empty() && r.frame_bytes == 0 && r.total_delta_bytes() == 0, "fresh node sent {r:?}");

    node.create(ObjectState::new(ObjectId::new(SHIP, 1)).with("velocity", -100.0)).unwrap();
    node.commit().unwrap();
    node.push("server", &mut net).unwrap();
    node.commit().unwrap();
    let r = node.push("server", &mut net).unwrap();
    check!(r.total_delta_bytes() == 0 && r.frame_bytes == 0, "second push sent {r:?}");

    let mut s = Scenario::new(20, 1, false);
    s.rtt_ms = 0.0;
    s.duration_ms = 30_000;
    s.workloads.iter_mut().for_each(|w| w.act_probability = 0.0);
    let log = run_scenario(&s).map_err(|e| e.to_string())?;
    let pushes: Vec<_> = log.samples(Role::Actor, Operation::Push).collect();
    let sent = pushes.iter().filter(|p| p.payload_bytes > 0).count();
    check!(sent == 1, "idle actor sent {sent} push messages");
    check!(pushes[1..].iter().all(|p| p.payload_bytes == 0), "late push carried bytes");
    Ok(format!("0 delta bytes; idle simulated actor: 1 join push then {} silent cycles", pushes.len() - 1))
}

fn latency_shape() -> Outcome {
    let rtt = 72.0;
    let mut runs = BTreeMap::new();
    for n in [20usize, 100, 200] {
        for conflicts in [false, true] {
            let mut s = Scenario::new(n, 1, conflicts);
            s.rtt_ms = rtt;
            s.seed = 4;
            runs.insert((n, conflicts), run_scenario(&s).map_err(|e| e.to_string())?);
        }
    }
    let med = |n: usize, c: bool, role: Role, op: Operation| -> Result<f64, String> {
        runs[&(n, c)]
            .median_ms(role, op)
            .ok_or_else(|| format!("no {role} {op} samples for n={n}"))
    };
    let mut fetches = Vec::new();
    for n in [20, 100, 200] {
        for c in [false, true] {
            for role in [Role::Actor, Role::Observer] {
                let f = med(n, c, role, Operation::Fetch)?;
                check!((72.0..=90.0).contains(&f), "(a) {role} fetch median {f} ms at n={n}");
                if !c {
                    fetches.push(f);
                }
            }
        }
        for role in [Role::Actor, Role::Observer] {
            let gap = med(n, false, role, Operation::Pull)? - med(n, false, role, Operation::Fetch)?;
            check!(gap < 0.05 * rtt, "(c) {role} fetch+merge exceeds fetch by {gap} ms at n={n}");
        }
        let clean = med(n, false, Role::Observer, Operation::Pull)?;
        let conflicted = med(n, true, Role::Observer, Operation::Pull)?;
        check!(conflicted > clean, "(d) n={n}: conflicted {conflicted} <= clean {clean}");
    }
    let mut checkouts = Vec::new();
    for role in [Role::Actor, Role::Observer] {
        let c: Vec<f64> = [20, 100, 200]
            .iter()
            .map(|&n| med(n, false, role, Operation::Checkout))
            .collect::<Result<_, _>>()?;
        check!(c[0] < c[1] && c[1] < c[2], "(b) {role} checkout medians {c:?}");
        checkouts.push(c);
    }
    Ok(format!(
        "fetch medians {:.1}..{:.1} ms, actor checkout {:?} ms",
        fetches.iter().cloned().fold(f64::MAX, f64::min),
        fetches.iter().cloned().fold(0.0, f64::max),
        checkouts[0]
    ))
}

fn merge_convergence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let descriptor = Arc::new(test_descriptor());
    let mut merges = 0;
    for case in 0..1000 {
        let base: Vec<u8> = (0..rng.gen_range(0..3)).map(|_| 0).collect();
        let mine_len = rng.gen_range(1..=6);
        let theirs_len = rng.gen_range(1..=6);
        let case_seed: u64 = rng.gen();
        for which in 0..3 {
            let resolver: Box<dyn Resolver> = match which {
                0 => Box::new(default_resolver(Strategy::KeepMine)),
                1 => Box::new(default_resolver(Strategy::KeepTheirs)),
                _ => Box::new(RandomResolver(std::sync::Mutex::new(ChaCha8Rng::seed_from_u64(case_seed ^ 7)))),
            };
            let mut r = ChaCha8Rng::seed_from_u64(case_seed);
            let mut g = VersionGraph::new(descriptor.clone(), VersionIdGen::seeded(case_seed));
            g.set_gc_enabled(false);
            let mut at = VersionId::ROOT;
            for _ in &base {
                let d = random_delta(&mut r, g.head_state());
                let to = g.fresh_version();
                g.put(at, to, vec![Edge::new(at, to, d)], resolver.as_ref()).unwrap();
                at = to;
            }
            let fork = at;
            let fork_state = g.head_state().clone();
            for _ in 0..mine_len {
                let d = random_delta(&mut r, g.head_state());
                let to = g.fresh_version();
                g.put(at, to, vec![Edge::new(at, to, d)], resolver.as_ref()).unwrap();
                at = to;
            }
            let head = at;
            let mut edges = Vec::new();
            let mut state = fork_state;
            let mut from = fork;
            for i in 0..theirs_len {
                let d = random_delta(&mut r, &state);
                state = apply(&state, &d);
                let to = VersionId::from_u128(u128::MAX - i as u128);
                edges.push(Edge::new(from, to, d));
                from = to;
            }
            let out = g
                .put(fork, from, edges, resolver.as_ref())
                .map_err(|e| format!("case {case}: {e}"))?;
            let PutOutcome::Merged(m) = out else {
                return Err(format!("case {case}: expected a merge"));
            };
            merges += 1;
            let via_h = apply(&g.state_at(head).unwrap(), &m.h_to_m);
            let via_b = apply(&g.state_at(from).unwrap(), &m.b_to_m);
            check!(canonical(&via_h) == canonical(&via_b), "case {case} resolver {which}: diverged");
            check!(via_h == g.state_at(m.merged_version).unwrap(), "case {case}: merged state mismatch");
        }
    }
    Ok(format!("{merges} merges converged"))
}

fn gc_preservation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let descriptor = Arc::new(test_descriptor());
    let resolver = default_resolver(Strategy::KeepMine);
    let mut deleted = 0;
    for case in 0..1000 {
        let mut g = VersionGraph::new(descriptor.clone(), VersionIdGen::seeded(case));
        g.set_gc_enabled(false);
        let mut branch = 1u128 << 100;
        for _ in 0..rng.gen_range(1..30) {
            let versions: Vec<VersionId> = g.versions().collect();
            let v = versions[rng.gen_range(0..versions.len())];
            match rng.gen_range(0..5) {
                0..=2 => {
                    let head = g.head();
                    let d = random_delta(&mut rng, g.head_state());
                    let to = g.fresh_version();
                    g.put(head, to, vec![Edge::new(head, to, d)], &resolver).unwrap();
                }
                3 => {
                    let d = random_delta(&mut rng, &g.state_at(v).unwrap());
                    branch += 1;
                    let to = VersionId::from_u128(branch);
                    g.put(v, to, vec![Edge::new(v, to, d)], &resolver).unwrap();
                    g.record_remote(&format!("p{}", rng.gen_range(0..4)), to).unwrap();
                }
                _ => g.record_remote(&format!("p{}", rng.gen_range(0..4)), v).unwrap(),
            }
        }
        let versions: Vec<VersionId> = g.versions().collect();
        if rng.gen_bool(0.5) {
            g.pin_snapshot(versions[rng.gen_range(0..versions.len())]).unwrap();
        }
        let before: Vec<(VersionId, String)> =
            versions.iter().map(|v| (*v, canonical(&g.state_at(*v).unwrap()))).collect();
        let head = (g.head(), canonical(g.head_state()));
        let report = g.collect();
        deleted += report.versions_deleted;
        g.check_invariants().map_err(|e| format!("case {case}: {e}"))?;
        check!((g.head(), canonical(g.head_state())) == head, "case {case}: head changed");
        for (v, s) in before {
            if g.contains(v) {
                check!(canonical(&g.state_at(v).unwrap()) == s, "case {case}: state at {v} changed");
            }
        }
        for v in g.remote_refs().values() {
            check!(g.contains(*v), "case {case}: referenced {v} collected");
        }
    }
    Ok(format!("1000 graphs, {deleted} versions collected, all retained states identical"))
}

/// Session-guarantee checker over randomized three-node interleavings.
struct Sessions {
    nodes: Vec<Dataframe>,
    net: InProcessNetwork,
    /// Remote each node talks to.
    upstream: Vec<Option<usize>>,
    /// (object, seq) -> minimum seqs the writer had observed.
    deps: BTreeMap<(ObjectId, i64), BTreeMap<ObjectId, i64>>,
    seq: Vec<i64>,
    seen: Vec<BTreeMap<ObjectId, i64>>,
    own_last: Vec<BTreeMap<ObjectId, i64>>,
}

fn seq_of(df: &Dataframe, id: &ObjectId) -> i64 {
    df.read(id, "a").ok().and_then(|v| v.as_i64()).unwrap_or(-1)
}

impl Sessions {
    fn new(topology: usize, seed: u64) -> Self {
        let registry = Arc::new(test_registry());
        let mut net = InProcessNetwork::new();
        let mut nodes = Vec::new();
        for i in 0..3 {
            let config = DataframeConfig::default().with_seed(seed * 10 + i as u64);
            let df = Dataframe::new(format!("n{i}"), registry.clone(), config);
            net.register(format!("n{i}"), df.repository());
            nodes.push(df);
        }
        // star: n1, n2 -> n0; chain: n2 -> n1 -> n0
        let upstream = match topology {
            0 => vec![None, Some(0), Some(0)],
            _ => vec![None, Some(0), Some(1)],
        };
        for (i, up) in upstream.iter().enumerate() {
            if let Some(u) = up {
                nodes[i].add_remote("up", format!("n{u}"));
            }
        }
        Sessions {
            nodes,
            net,
            upstream,
            deps: BTreeMap::new(),
            seq: vec![0; 3],
            seen: vec![BTreeMap::new(); 3],
            own_last: vec![BTreeMap::new(); 3],
        }
    }

    fn objects(&self) -> Vec<ObjectId> {
        (0..3i64)
            .flat_map(|n| (0..2).map(move |k| ObjectId::new("T", n * 10 + k)))
            .collect()
    }

    fn owner(id: &ObjectId) -> usize {
        match id.key {
            got_core::ObjectKey::Int(k) => (k / 10) as usize,
            _ => unreachable!(),
        }
    }

    fn write(&mut self, n: usize, k: i64) -> Result<(), String> {
        let id = ObjectId::new("T", n as i64 * 10 + k);
        self.seq[n] += 1;
        let s = self.seq[n];
        let mut deps = self.seen[n].clone();
        deps.extend(self.own_last[n].iter().map(|(k, v)| (k.clone(), *v)));
        self.deps.insert((id.clone(), s), deps);
        let df = &mut self.nodes[n];
        let exists = df.read_object(&id).is_ok();
        let r = if exists {
            df.write(&id, "a", s)
        } else {
            df.create(
                ObjectState::new(id.clone())
                    .with("a", s)
                    .with("b", 0i64)
                    .with("c", 0i64)
                    .with("d", 0i64),
            )
        };
        r.map_err(|e| e.to_string())?;
        self.own_last[n].insert(id, s);
        Ok(())
    }

    /// Reads everything at `n` and checks all four guarantees.
    fn observe(&mut self, n: usize) -> Result<(), String> {
        let df = &self.nodes[n];
        let mut now: BTreeMap<ObjectId, i64> = BTreeMap::new();
        for id in self.objects() {
            let s = seq_of(df, &id);
            if s >= 0 {
                now.insert(id, s);
            }
        }
        for (id, s) in &self.own_last[n] {
            check!(now.get(id) == Some(s), "read-your-writes: n{n} sees {:?} for {id}, wrote {s}", now.get(id));
        }
        for (id, s) in &self.seen[n] {
            let cur = now.get(id).copied().unwrap_or(-1);
            check!(cur >= *s, "monotonic reads: n{n} saw {id}={s}, now {cur}");
        }
        for (id, s) in &now {
            if let Some(deps) = self.deps.get(&(id.clone(), *s)) {
                for (dep, min) in deps {
                    let cur = now.get(dep).copied().unwrap_or(-1);
                    let kind = if Self::owner(dep) == Self::owner(id) {
                        "monotonic writes"
                    } else {
                        "writes-follow-reads"
                    };
                    check!(cur >= *min, "{kind}: n{n} sees {id}={s} but {dep}={cur} < {min}");
                }
            }
        }
        for (id, s) in now {
            if Self::owner(&id) != n {
                self.seen[n].insert(id, s);
            }
        }
        Ok(())
    }

    fn step(&mut self, rng: &mut ChaCha8Rng) -> Result<(), String> {
        let n = rng.gen_range(0..3);
        match rng.gen_range(0..6) {
            0 => {
                let k = rng.gen_range(0..2);
                self.write(n, k)?;
            }
            1 => {
                let observed: BTreeMap<String, VersionId> = ["T", "U"]
                    .iter()
                    .map(|t| (t.to_string(), self.nodes[n].snapshot_version(t).unwrap()))
                    .collect();
                let info = self.nodes[n].commit().map_err(|e| e.to_string())?;
                for (t, c) in info {
                    check!(
                        c.from == observed[&t],
                        "writes-follow-reads: n{n} committed from {} but observed {}",
                        c.from,
                        observed[&t]
                    );
                }
            }
            2 => {
                self.nodes[n].checkout().map_err(|e| e.to_string())?;
            }
            3 if self.upstream[n].is_some() => {
                self.nodes[n].push("up", &mut self.net).map_err(|e| e.to_string())?;
            }
            4 if self.upstream[n].is_some() => {
                self.nodes[n].fetch("up", &mut self.net).map_err(|e| e.to_string())?;
            }
            _ if self.upstream[n].is_some() => {
                self.nodes[n].pull("up", &mut self.net).map_err(|e| e.to_string())?;
            }
            _ => {}
        }
        self.observe(n)
    }
}

fn session_guarantees() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut steps = 0;
    for case in 0..500u64 {
        let mut s = Sessions::new((case % 2) as usize, case);
        for _ in 0..rng.gen_range(10..60) {
            s.step(&mut rng).map_err(|e| format!("interleaving {case}: {e}"))?;
            steps += 1;
        }
    }
    Ok(format!("500 interleavings, {steps} operations, 0 violations"))
}

fn physics_policy_end_to_end() -> Outcome {
    let registry = Arc::new(space_race());
    let ship = ObjectId::new(SHIP, 1);
    let mut results = Vec::new();
    for (velocity, also_position) in [(80.0, false), (80.0, true), (MAX_SPEED * 2.0, false), (-MAX_SPEED * 2.0, true)] {
        let mut net = InProcessNetwork::new();
        let mut physics = Dataframe::new(
            "physics",
            registry.clone(),
            DataframeConfig::default().with_seed(1).with_resolver(physics_policy),
        );
        physics
            .create(
                ObjectState::new(ship.clone())
                    .with("x", 5.0)
                    .with("y", 500.0)
                    .with("velocity", -100.0)
                    .with("trips", 0i64),
            )
            .unwrap();
        physics.commit().unwrap();
        net.register("physics", physics.repository());

        let mut bot = Dataframe::new(
            "bot",
            registry.clone(),
            DataframeConfig::default().with_seed(2).with_resolver(default_resolver(Strategy::KeepTheirs)),
        );
        bot.add_remote("physics", "physics");
        bot.pull("physics", &mut net).unwrap();

        // physics moves the ship while the bot decides
        physics.write(&ship, "y", 495.0).unwrap();
        physics.commit().unwrap();

        bot.write(&ship, "velocity", velocity).unwrap();
        if also_position {
            bot.write(&ship, "y", 0.0).unwrap();
            bot.write(&ship, "x", 0.0).unwrap();
        }
        bot.commit().unwrap();
        bot.push("physics", &mut net).unwrap();
        physics.checkout().unwrap();

        let want_v = if velocity.abs() <= MAX_SPEED { velocity } else { -100.0 };
        let got_v = physics.read(&ship, "velocity").unwrap();
        let got_y = physics.read(&ship, "y").unwrap();
        let got_x = physics.read(&ship, "x").unwrap();
        check!(got_v == DimValue::Float(want_v), "velocity {velocity}: physics has {got_v:?}, want {want_v}");
        check!(got_y == DimValue::Float(495.0), "velocity {velocity}: y became {got_y:?}");
        check!(got_x == DimValue::Float(5.0), "velocity {velocity}: x became {got_x:?}");

        // the bot converges on the physics decision
        bot.pull("physics", &mut net).unwrap();
        check!(bot.read_object(&ship).unwrap() == physics.read_object(&ship).unwrap(), "bot did not converge");
        results.push(format!("{velocity}->{want_v}"));
    }
    Ok(format!("velocity adopted/discarded as {}, positions kept", results.join(", ")))
}

fn random_message(rng: &mut ChaCha8Rng) -> Message {
    let kinds = [MessageKind::FetchReq, MessageKind::FetchResp, MessageKind::PushReq, MessageKind::PushResp];
    let kind = kinds[rng.gen_range(0..4)];
    let mut msg = Message::new(kind, format!("node-{}", rng.gen_range(0..100)));
    let version = |rng: &mut ChaCha8Rng| {
        if rng.gen_bool(0.2) {
            VersionId::ROOT
        } else {
            VersionId::from_u128(rng.gen())
        }
    };
    for t in ["T", "U"] {
        if rng.gen_bool(0.3) {
            continue;
        }
        let start = version(rng);
        let end = version(rng);
        let delta = if t == "T" {
            random_delta(rng, &State::new())
        } else {
            let mut d = Delta::new();
            for k in 0..rng.gen_range(0..3) {
                d.insert(
                    ObjectId::new("U", format!("k{k}")),
                    ObjectDelta::new_object(random_full(rng, &["p", "q"])),
                );
            }
            d
        };
        let ok = rng.gen_bool(0.7);
        let p = match kind {
            MessageKind::FetchReq => Payload::fetch_request(t, start),
            MessageKind::PushReq => Payload::changes(t, start, end, delta),
            MessageKind::FetchResp if ok => Payload::changes(t, start, end, delta).with_status(Status::Ok),
            MessageKind::FetchResp => Payload::fetch_request(t, start).with_status(Status::UnknownVersion),
            MessageKind::PushResp if ok => {
                let mut p = Payload::fetch_request(t, start).with_status(Status::Ok);
                p.end_version = Some(end);
                p
            }
            MessageKind::PushResp => Payload::fetch_request(t, start).with_status(Status::Rejected),
        };
        msg.payloads.push(p);
    }
    msg
}

/// Three nodes: `a` and `c` push and pull through `b`.
fn scripted_scenario(transport: &mut dyn Transport, nodes: &mut [Dataframe]) -> Result<(), String> {
    let e = |e: got_core::Error| e.to_string();
    let asteroid = |k: i64, x: f64| {
        ObjectState::new(ObjectId::new(ASTEROID, k))
            .with("x", x)
            .with("y", 0.0)
            .with("velocity", 1.0)
    };
    for round in 0..5 {
        let [a, b, c] = nodes else { unreachable!() };
        a.create(asteroid(round, round as f64)).map_err(e)?;
        a.commit().map_err(e)?;
        a.push("b", transport).map_err(e)?;
        b.checkout().map_err(e)?;
        b.write(&ObjectId::new(ASTEROID, round), "y", 10.0 * round as f64).map_err(e)?;
        b.commit().map_err(e)?;
        c.pull("b", transport).map_err(e)?;
        c.write(&ObjectId::new(ASTEROID, round), "x", -1.0).map_err(e)?;
        c.commit().map_err(e)?;
        c.push("b", transport).map_err(e)?;
        a.pull("b", transport).map_err(e)?;
    }
    for df in nodes.iter_mut() {
        df.checkout().map_err(e)?;
    }
    Ok(())
}

fn three_nodes() -> Vec<Dataframe> {
    let registry = Arc::new(space_race());
    ["a", "b", "c"]
        .iter()
        .enumerate()
        .map(|(i, name)| {
            Dataframe::new(
                *name,
                registry.clone(),
                DataframeConfig::default().with_seed(40 + i as u64).with_resolver(physics_policy),
            )
        })
        .collect()
}

fn heads(nodes: &[Dataframe]) -> Vec<(String, String, VersionId, String)> {
    let mut out = Vec::new();
    for df in nodes {
        let repo = df.lock();
        for g in repo.graphs() {
            out.push((df.name().to_string(), g.type_name().to_string(), g.head(), canonical(g.head_state())));
        }
    }
    out
}

fn wire_golden() -> Outcome {
    let registry = test_registry();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for i in 0..1000 {
        let msg = random_message(&mut rng);
        let bytes = encode(&msg).map_err(|e| e.to_string())?;
        let back = decode(&bytes, &registry).map_err(|e| format!("message {i}: {e}"))?;
        check!(back == msg, "message {i}: round trip changed the message");
        check!(encode(&back).unwrap() == bytes, "message {i}: re-encoding changed bytes");
    }

    let golden: [(&str, &[u8]); 3] = [
        ("push_one_object", include_bytes!("../../core/tests/vectors/push_one_object.frame")),
        ("fetch_two_types", include_bytes!("../../core/tests/vectors/fetch_two_types.frame")),
        ("push_resp_mixed", include_bytes!("../../core/tests/vectors/push_resp_mixed.frame")),
    ];
    let mut golden_reg = TypeRegistry::new();
    golden_reg.register(TypeDescriptor::new("Ship", ["x", "y", "velocity"]).unwrap()).unwrap();
    golden_reg.register(TypeDescriptor::new("Asteroid", ["x", "y", "velocity"]).unwrap()).unwrap();
    let v = VersionId::from_u128(0x0123456789abcdef0123456789abcdef);
    let mut push = Message::new(MessageKind::PushReq, "bot-0");
    push.payloads.push(Payload::changes(
        "Ship",
        VersionId::ROOT,
        v,
        Delta::new().create(
            ObjectId::new("Ship", 7),
            ObjectState::new(ObjectId::new("Ship", 7))
                .with("x", 1.5)
                .with("y", -2.0)
                .with("velocity", 100.0)
                .values,
        ),
    ));
    check!(encode(&push).unwrap() == golden[0].1, "push_one_object bytes differ");
    for (name, bytes) in golden {
        let m = decode(bytes, &golden_reg).map_err(|e| format!("{name}: {e}"))?;
        check!(encode(&m).unwrap() == bytes, "{name}: not byte-exact");
    }

    let mut sim_nodes = three_nodes();
    let mut sim = SimTransport::new(1, 72.0);
    sim.register("b", sim_nodes[1].repository());
    for i in [0, 2] {
        sim_nodes[i].add_remote("b", "b");
    }
    scripted_scenario(&mut sim, &mut sim_nodes)?;

    let mut tcp_nodes = three_nodes();
    let server = got_core::serve(tcp_nodes[1].repository(), "127.0.0.1:0").map_err(|e| e.to_string())?;
    for i in [0, 2] {
        tcp_nodes[i].add_remote("b", server.address());
    }
    scripted_scenario(&mut TcpTransport::new(), &mut tcp_nodes)?;
    server.shutdown();

    let (a, b) = (heads(&sim_nodes), heads(&tcp_nodes));
    check!(a == b, "TCP and simulator runs ended in different heads");
    Ok(format!(
        "1000 round trips, 3 golden frames, {} identical heads over TCP and simulator ({:.0} ms virtual)",
        a.len(),
        sim.now() as f64 / 1000.0
    ))
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome, u64); 9] = [
        (1, "bounded version graph", bounded_version_graph, 60),
        (2, "squash network efficiency", squash_efficiency, 10),
        (3, "quiescent silence", quiescent_silence, 60),
        (4, "latency shape", latency_shape, 120),
        (5, "merge convergence", merge_convergence, 30),
        (6, "gc state preservation", gc_preservation, 30),
        (7, "session guarantees", session_guarantees, 60),
        (8, "physics conflict policy", physics_policy_end_to_end, 60),
        (9, "wire golden files and transport equivalence", wire_golden, 60),
    ];
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (n, name, run, limit) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str()) || *f == n.to_string()) {
            continue;
        }
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let elapsed = started.elapsed();
        let outcome = match outcome {
            Ok(_) if elapsed > Duration::from_secs(limit) => {
                Err(format!("took {:.1}s, limit {limit}s", elapsed.as_secs_f64()))
            }
            other => other,
        };
        match outcome {
            Ok(detail) => println!("criterion {n} PASS {name}: {detail} [{:.2}s]", elapsed.as_secs_f64()),
            Err(why) => {
                failed += 1;
                println!("criterion {n} FAIL {name}: {why} [{:.2}s]", elapsed.as_secs_f64());
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
