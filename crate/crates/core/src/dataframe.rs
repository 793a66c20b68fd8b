//! The node-local dataframe: one version graph and one snapshot section per
//! subscribed type, a registry of remotes, and the commit / checkout / push /
//! fetch / pull operations tying them together.
//!
//! The graphs live in a [`Repository`] behind a mutex so a server thread can
//! answer remote requests while the application thread owns the snapshots.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, Mutex, MutexGuard, PoisonError};

use crate::error::{Error, Result};
use crate::graph::{Edge, Holder, PutOutcome, VersionGraph};
use crate::merge::{default_resolver, Resolver, Strategy};
use crate::object::{DimValue, ObjectId, ObjectState, TypeRegistry};
use crate::snapshot::Snapshot;
use crate::transport::Transport;
use crate::version::{VersionId, VersionIdGen};
use crate::wire::{decode, delta_size, encode, Message, MessageKind, Payload, Status};

#[derive(Clone)]
pub struct DataframeConfig {
    pub resolver: Arc<dyn Resolver>,
    pub gc: bool,
    /// On a rejected fetch, retry once from ROOT.
    pub auto_resync: bool,
    /// Seed for version ids; `None` draws from OS entropy.
    pub seed: Option<u64>,
}

impl Default for DataframeConfig {
    fn default() -> Self {
        DataframeConfig {
            resolver: Arc::new(default_resolver(Strategy::KeepMine)),
            gc: true,
            auto_resync: false,
            seed: None,
        }
    }
}

impl DataframeConfig {
    pub fn with_resolver(mut self, resolver: impl Resolver + 'static) -> Self {
        self.resolver = Arc::new(resolver);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn with_gc(mut self, gc: bool) -> Self {
        self.gc = gc;
        self
    }

    pub fn with_auto_resync(mut self, on: bool) -> Self {
        self.auto_resync = on;
        self
    }
}

impl std::fmt::Debug for DataframeConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DataframeConfig")
            .field("gc", &self.gc)
            .field("auto_resync", &self.auto_resync)
            .field("seed", &self.seed)
            .finish_non_exhaustive()
    }
}

/// Work done while answering one request, for cost accounting.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ServeStats {
    pub entries_sent: usize,
    pub entries_received: usize,
    pub merges: usize,
    pub conflicts: usize,
}

/// The part of a dataframe remote peers talk to: per-type graphs, their
/// ledgers and the merge function.
pub struct Repository {
    name: String,
    registry: Arc<TypeRegistry>,
    graphs: BTreeMap<String, VersionGraph>,
    resolver: Arc<dyn Resolver>,
}

impl Repository {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn registry(&self) -> &Arc<TypeRegistry> {
        &self.registry
    }

    pub fn graph(&self, type_name: &str) -> Option<&VersionGraph> {
        self.graphs.get(type_name)
    }

    pub fn graph_mut(&mut self, type_name: &str) -> Option<&mut VersionGraph> {
        self.graphs.get_mut(type_name)
    }

    pub fn graphs(&self) -> impl Iterator<Item = &VersionGraph> {
        self.graphs.values()
    }

    pub fn handle(&mut self, request: &Message) -> Message {
        self.handle_with_stats(request).0
    }

    /// Answers a FETCH_REQ or PUSH_REQ. Any other kind gets an empty
    /// response of the matching family.
    pub fn handle_with_stats(&mut self, request: &Message) -> (Message, ServeStats) {
        let mut stats = ServeStats::default();
        let sender = request.sender.as_str();
        let resolver = self.resolver.clone();
        let kind = match request.kind {
            MessageKind::FetchReq | MessageKind::FetchResp => MessageKind::FetchResp,
            MessageKind::PushReq | MessageKind::PushResp => MessageKind::PushResp,
        };
        let mut response = Message::new(kind, self.name.clone());
        if request.kind.is_response() {
            return (response, stats);
        }
        for p in &request.payloads {
            let start = p.start_version;
            let Some(graph) = self.graphs.get_mut(&p.type_name) else {
                response.payloads.push(
                    Payload::fetch_request(&p.type_name, start).with_status(Status::UnknownVersion),
                );
                continue;
            };
            match request.kind {
                MessageKind::FetchReq => match graph.get_squashed(start) {
                    Err(_) => response.payloads.push(
                        Payload::fetch_request(&p.type_name, start).with_status(Status::UnknownVersion),
                    ),
                    Ok(delta) => {
                        let head = graph.head();
                        graph
                            .record_remote(sender, head)
                            .expect("head is always live");
                        if head != start {
                            stats.entries_sent += delta.len();
                            response.payloads.push(
                                Payload::changes(&p.type_name, start, head, delta).with_status(Status::Ok),
                            );
                        }
                    }
                },
                _ => {
                    let (Some(end), Some(delta)) = (p.end_version, p.delta.clone()) else {
                        response.payloads.push(
                            Payload::fetch_request(&p.type_name, start).with_status(Status::Rejected),
                        );
                        continue;
                    };
                    stats.entries_received += delta.len();
                    let edge = Edge::new(start, end, delta);
                    let status = match graph.put_held(
                        start,
                        end,
                        vec![edge],
                        resolver.as_ref(),
                        Some(Holder::Remote(sender)),
                    ) {
                        Ok(outcome) => {
                            if let PutOutcome::Merged(m) = &outcome {
                                stats.merges += 1;
                                stats.conflicts += m.conflicts;
                            }
                            Status::Ok
                        }
                        Err(Error::UnknownVersion(_)) => Status::UnknownVersion,
                        Err(e) => {
                            log::warn!("{}: rejecting push from {sender}: {e}", self.name);
                            Status::Rejected
                        }
                    };
                    let mut out = Payload::fetch_request(&p.type_name, start).with_status(status);
                    if status == Status::Ok {
                        out.end_version = Some(graph.head());
                    }
                    response.payloads.push(out);
                }
            }
        }
        (response, stats)
    }

    /// Decodes a frame, handles it and encodes the reply.
    pub fn handle_frame(&mut self, frame: &[u8]) -> Result<Vec<u8>> {
        let request = decode(frame, &self.registry)?;
        encode(&self.handle(&request))
    }
}

/// A known peer and the last version of each type it is known to hold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RemoteHandle {
    name: String,
    address: String,
    last_known: BTreeMap<String, VersionId>,
}

impl RemoteHandle {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn address(&self) -> &str {
        &self.address
    }

    /// Defaults to ROOT for types never exchanged.
    pub fn last_known(&self, type_name: &str) -> VersionId {
        self.last_known
            .get(type_name)
            .copied()
            .unwrap_or(VersionId::ROOT)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommitInfo {
    pub from: VersionId,
    pub to: VersionId,
    pub outcome: PutOutcome,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CheckoutReport {
    pub types_advanced: Vec<String>,
    pub objects_applied: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PushReport {
    pub types_sent: Vec<String>,
    pub frame_bytes: usize,
    /// Canonical delta size per type sent.
    pub delta_bytes: BTreeMap<String, usize>,
    /// Remote head per accepted type, which differs from what we sent when
    /// the remote had to merge.
    pub remote_heads: BTreeMap<String, VersionId>,
    pub rejected: Vec<String>,
}

impl PushReport {
    pub fn total_delta_bytes(&self) -> usize {
        self.delta_bytes.values().sum()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FetchReport {
    pub types_received: Vec<String>,
    pub frame_bytes: usize,
    pub entries_received: usize,
    pub merges: usize,
    pub conflicts: usize,
    pub rejected: Vec<String>,
}

pub struct Dataframe {
    name: String,
    registry: Arc<TypeRegistry>,
    repo: Arc<Mutex<Repository>>,
    snapshots: BTreeMap<String, Snapshot>,
    remotes: BTreeMap<String, RemoteHandle>,
    sync_started: bool,
    config: DataframeConfig,
}

fn graph_for(registry: &TypeRegistry, type_name: &str, config: &DataframeConfig) -> VersionGraph {
    let descriptor = registry.get(type_name).expect("registered type").clone();
    let ids = match config.seed {
        Some(seed) => {
            let salt = type_name
                .bytes()
                .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3));
            VersionIdGen::seeded(seed ^ salt)
        }
        None => VersionIdGen::from_entropy(),
    };
    let mut g = VersionGraph::new(descriptor, ids);
    g.set_gc_enabled(config.gc);
    g
}

fn inflight_key(remote: &str) -> String {
    format!("{remote}#inflight")
}

impl Dataframe {
    /// A dataframe subscribed to every registered type.
    pub fn new(name: impl Into<String>, registry: Arc<TypeRegistry>, config: DataframeConfig) -> Self {
        let name = name.into();
        let mut graphs = BTreeMap::new();
        let mut snapshots = BTreeMap::new();
        for t in registry.names() {
            graphs.insert(t.to_string(), graph_for(&registry, t, &config));
            snapshots.insert(t.to_string(), Snapshot::new(registry.get(t).unwrap().clone()));
        }
        let repo = Repository {
            name: name.clone(),
            registry: registry.clone(),
            graphs,
            resolver: config.resolver.clone(),
        };
        Dataframe {
            name,
            registry,
            repo: Arc::new(Mutex::new(repo)),
            snapshots,
            remotes: BTreeMap::new(),
            sync_started: false,
            config,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn registry(&self) -> &Arc<TypeRegistry> {
        &self.registry
    }

    pub fn config(&self) -> &DataframeConfig {
        &self.config
    }

    /// Shared handle for serving remote requests.
    pub fn repository(&self) -> Arc<Mutex<Repository>> {
        self.repo.clone()
    }

    pub fn lock(&self) -> MutexGuard<'_, Repository> {
        self.repo.lock().unwrap_or_else(PoisonError::into_inner)
    }

    pub fn subscribed_types(&self) -> impl Iterator<Item = &str> {
        self.snapshots.keys().map(String::as_str)
    }

    /// Restricts synchronization to `names`. Only allowed before the first
    /// push or fetch.
    pub fn subscribe_types<S: AsRef<str>>(&mut self, names: &[S]) -> Result<()> {
        if self.sync_started {
            return Err(Error::SubscriptionLocked);
        }
        let wanted: BTreeSet<&str> = names.iter().map(AsRef::as_ref).collect();
        for n in &wanted {
            self.registry.require(n)?;
        }
        self.snapshots.retain(|t, _| wanted.contains(t.as_str()));
        let mut repo = self.repo.lock().unwrap_or_else(PoisonError::into_inner);
        repo.graphs.retain(|t, _| wanted.contains(t.as_str()));
        for n in wanted {
            if !self.snapshots.contains_key(n) {
                self.snapshots
                    .insert(n.to_string(), Snapshot::new(self.registry.get(n).unwrap().clone()));
                repo.graphs
                    .insert(n.to_string(), graph_for(&self.registry, n, &self.config));
            }
        }
        Ok(())
    }

    pub fn add_remote(&mut self, name: impl Into<String>, address: impl Into<String>) -> &RemoteHandle {
        let name = name.into();
        let handle = RemoteHandle {
            name: name.clone(),
            address: address.into(),
            last_known: BTreeMap::new(),
        };
        self.remotes.entry(name).or_insert(handle)
    }

    pub fn remote(&self, name: &str) -> Result<&RemoteHandle> {
        self.remotes
            .get(name)
            .ok_or_else(|| Error::UnknownRemote(name.to_string()))
    }

    pub fn remotes(&self) -> impl Iterator<Item = &RemoteHandle> {
        self.remotes.values()
    }

    fn section(&self, type_name: &str) -> Result<&Snapshot> {
        self.snapshots.get(type_name).ok_or_else(|| {
            if self.registry.contains(type_name) {
                Error::NotSubscribed(type_name.to_string())
            } else {
                Error::UnknownType(type_name.to_string())
            }
        })
    }

    fn section_mut(&mut self, type_name: &str) -> Result<&mut Snapshot> {
        self.section(type_name)?;
        Ok(self.snapshots.get_mut(type_name).unwrap())
    }

    pub fn snapshot(&self, type_name: &str) -> Result<&Snapshot> {
        self.section(type_name)
    }

    pub fn snapshot_version(&self, type_name: &str) -> Result<VersionId> {
        Ok(self.section(type_name)?.version())
    }

    pub fn create(&mut self, obj: ObjectState) -> Result<()> {
        let t = obj.id.type_name.clone();
        self.section_mut(&t)?.create(obj)
    }

    pub fn delete(&mut self, id: &ObjectId) -> Result<()> {
        self.section_mut(&id.type_name)?.delete(id)
    }

    pub fn write(&mut self, id: &ObjectId, dim: &str, value: impl Into<DimValue>) -> Result<()> {
        self.section_mut(&id.type_name)?.write(id, dim, value.into())
    }

    pub fn read(&self, id: &ObjectId, dim: &str) -> Result<DimValue> {
        self.section(&id.type_name)?.read(id, dim)
    }

    pub fn read_object(&self, id: &ObjectId) -> Result<ObjectState> {
        self.section(&id.type_name)?.read_object(id)
    }

    pub fn read_all(&self, type_name: &str) -> Result<Vec<ObjectState>> {
        Ok(self.section(type_name)?.read_all())
    }

    /// Moves every type's staged changes into its graph as a fresh version.
    /// Types with nothing staged are left alone.
    pub fn commit(&mut self) -> Result<BTreeMap<String, CommitInfo>> {
        let mut out = BTreeMap::new();
        let mut repo = self.repo.lock().unwrap_or_else(PoisonError::into_inner);
        let resolver = repo.resolver.clone();
        for (t, snap) in self.snapshots.iter_mut() {
            let Some(delta) = snap.staged_for_commit() else { continue };
            let graph = repo.graphs.get_mut(t).expect("graph per subscribed type");
            let from = snap.version();
            let to = graph.fresh_version();
            let edge = Edge::new(from, to, delta.clone());
            let outcome = graph.put_held(from, to, vec![edge], resolver.as_ref(), Some(Holder::Snapshot))?;
            snap.mark_committed(to, &delta);
            out.insert(t.clone(), CommitInfo { from, to, outcome });
        }
        Ok(out)
    }

    /// Brings every snapshot section up to its graph head.
    pub fn checkout(&mut self) -> Result<CheckoutReport> {
        let mut report = CheckoutReport::default();
        let mut repo = self.repo.lock().unwrap_or_else(PoisonError::into_inner);
        for (t, snap) in self.snapshots.iter_mut() {
            let graph = repo.graphs.get_mut(t).expect("graph per subscribed type");
            let head = graph.head();
            if head == snap.version() {
                continue;
            }
            let edges = graph.get(snap.version())?;
            report.objects_applied += snap.apply_checkout(&edges, head)?;
            graph.pin_snapshot(head)?;
            report.types_advanced.push(t.clone());
        }
        Ok(report)
    }

    /// Builds the PUSH_REQ for `remote`, or `None` when it already has
    /// everything. Sent heads are held against collection until
    /// [`complete_push`](Self::complete_push) or
    /// [`abort_push`](Self::abort_push).
    pub fn push_request(&mut self, remote: &str) -> Result<Option<Message>> {
        let handle = self.remote(remote)?.clone();
        self.sync_started = true;
        let mut msg = Message::new(MessageKind::PushReq, self.name.clone());
        let mut repo = self.repo.lock().unwrap_or_else(PoisonError::into_inner);
        for (t, graph) in repo.graphs.iter_mut() {
            let start = handle.last_known(t);
            let head = graph.head();
            if head == start {
                continue;
            }
            let delta = graph.get_squashed(start)?;
            graph.record_remote(&inflight_key(remote), head)?;
            msg.payloads.push(Payload::changes(t, start, head, delta));
        }
        Ok((!msg.payloads.is_empty()).then_some(msg))
    }

    pub fn abort_push(&mut self, remote: &str) {
        let mut repo = self.repo.lock().unwrap_or_else(PoisonError::into_inner);
        for graph in repo.graphs.values_mut() {
            graph.forget_remote(&inflight_key(remote));
        }
    }

    /// Applies the remote's answer to a push.
    pub fn complete_push(&mut self, remote: &str, request: &Message, response: &Message) -> Result<PushReport> {
        let mut report = PushReport::default();
        {
            let mut repo = self.repo.lock().unwrap_or_else(PoisonError::into_inner);
            let handle = self
                .remotes
                .get_mut(remote)
                .ok_or_else(|| Error::UnknownRemote(remote.to_string()))?;
            for sent in &request.payloads {
                let t = &sent.type_name;
                let answer = response.payload(t);
                match answer.and_then(|a| a.status) {
                    Some(Status::Ok) => {
                        let end = sent.end_version.expect("push payload has an end");
                        if let Some(graph) = repo.graphs.get_mut(t) {
                            graph.record_remote(remote, end)?;
                        }
                        handle.last_known.insert(t.clone(), end);
                        report.types_sent.push(t.clone());
                        report
                            .delta_bytes
                            .insert(t.clone(), sent.delta.as_ref().map(delta_size).unwrap_or(0));
                        if let Some(head) = answer.and_then(|a| a.end_version) {
                            report.remote_heads.insert(t.clone(), head);
                        }
                    }
                    _ => report.rejected.push(t.clone()),
                }
            }
        }
        self.abort_push(remote);
        Ok(report)
    }

    /// Pushes every type's changes since `remote`'s last known version as
    /// one squashed delta per type. Sends nothing if nothing changed.
    pub fn push(&mut self, remote: &str, transport: &mut dyn Transport) -> Result<PushReport> {
        let Some(request) = self.push_request(remote)? else {
            return Ok(PushReport::default());
        };
        let address = self.remote(remote)?.address().to_string();
        let exchanged = encode(&request).and_then(|frame| {
            let bytes = transport.exchange(&address, &frame)?;
            Ok((frame.len(), decode(&bytes, &self.registry)?))
        });
        let (frame_bytes, response) = match exchanged {
            Ok(r) => r,
            Err(e) => {
                self.abort_push(remote);
                return Err(e);
            }
        };
        let mut report = self.complete_push(remote, &request, &response)?;
        report.frame_bytes = frame_bytes;
        if let Some(t) = report.rejected.first() {
            return Err(Error::PushRejected {
                remote: remote.to_string(),
                type_name: t.clone(),
                version: self.remote(remote)?.last_known(t),
            });
        }
        Ok(report)
    }

    /// Builds the FETCH_REQ for `remote`.
    pub fn fetch_request(&mut self, remote: &str) -> Result<Message> {
        let handle = self.remote(remote)?;
        let mut msg = Message::new(MessageKind::FetchReq, self.name.clone());
        for t in self.snapshots.keys() {
            msg.payloads.push(Payload::fetch_request(t, handle.last_known(t)));
        }
        self.sync_started = true;
        Ok(msg)
    }

    /// Puts the received deltas into the local graphs, merging where the
    /// local head moved since the last exchange.
    pub fn complete_fetch(&mut self, remote: &str, response: &Message) -> Result<FetchReport> {
        let mut report = FetchReport::default();
        let mut repo = self.repo.lock().unwrap_or_else(PoisonError::into_inner);
        let resolver = repo.resolver.clone();
        let handle = self
            .remotes
            .get_mut(remote)
            .ok_or_else(|| Error::UnknownRemote(remote.to_string()))?;
        for p in &response.payloads {
            let Some(graph) = repo.graphs.get_mut(&p.type_name) else { continue };
            match (p.status, p.end_version, &p.delta) {
                (Some(Status::Ok), Some(end), Some(delta)) => {
                    report.entries_received += delta.len();
                    let edge = Edge::new(p.start_version, end, delta.clone());
                    let outcome = graph.put_held(
                        p.start_version,
                        end,
                        vec![edge],
                        resolver.as_ref(),
                        Some(Holder::Remote(remote)),
                    )?;
                    if let PutOutcome::Merged(m) = outcome {
                        report.merges += 1;
                        report.conflicts += m.conflicts;
                    }
                    handle.last_known.insert(p.type_name.clone(), end);
                    report.types_received.push(p.type_name.clone());
                }
                _ => report.rejected.push(p.type_name.clone()),
            }
        }
        Ok(report)
    }

    /// Fetches changes since the last exchange with `remote` into the local
    /// graphs. The snapshot is not touched.
    pub fn fetch(&mut self, remote: &str, transport: &mut dyn Transport) -> Result<FetchReport> {
        let mut report = self.fetch_once(remote, transport)?;
        if !report.rejected.is_empty() && self.config.auto_resync {
            log::info!("{}: resyncing {:?} from ROOT", self.name, report.rejected);
            let handle = self.remotes.get_mut(remote).unwrap();
            for t in &report.rejected {
                handle.last_known.remove(t);
            }
            let retry = self.fetch_once(remote, transport)?;
            report.types_received.extend(retry.types_received);
            report.frame_bytes += retry.frame_bytes;
            report.entries_received += retry.entries_received;
            report.merges += retry.merges;
            report.conflicts += retry.conflicts;
            report.rejected = retry.rejected;
        }
        if let Some(t) = report.rejected.first() {
            return Err(Error::FetchRejected {
                remote: remote.to_string(),
                type_name: t.clone(),
                version: self.remote(remote)?.last_known(t),
            });
        }
        Ok(report)
    }

    fn fetch_once(&mut self, remote: &str, transport: &mut dyn Transport) -> Result<FetchReport> {
        let request = self.fetch_request(remote)?;
        let address = self.remote(remote)?.address().to_string();
        let frame = encode(&request)?;
        let bytes = transport.exchange(&address, &frame)?;
        let response = decode(&bytes, &self.registry)?;
        let mut report = self.complete_fetch(remote, &response)?;
        report.frame_bytes = bytes.len();
        Ok(report)
    }

    /// `fetch` followed by `checkout`.
    pub fn pull(&mut self, remote: &str, transport: &mut dyn Transport) -> Result<FetchReport> {
        let report = self.fetch(remote, transport)?;
        self.checkout()?;
        Ok(report)
    }

    /// Head of the local graph for `type_name`.
    pub fn head(&self, type_name: &str) -> Result<VersionId> {
        self.section(type_name)?;
        Ok(self.lock().graph(type_name).unwrap().head())
    }
}
