//! Per-type version graph: a DAG of delta edges between version ids.
//!
//! Every vertex except ROOT has a *parent* edge, the edge it was created
//! through, and every vertex except the head has a *next* edge leading
//! towards the head. Folding parent edges from ROOT materializes a version;
//! following next edges from a version yields the changes a peer at that
//! version is missing. Along the main path the two coincide. A merge adds a
//! branch `a -> .. -> b` whose last vertex points at the merged version `m`,
//! while `m`'s parent is the previous head.
//!
//! The graph also keeps the remote ledger: the last version each peer is
//! known to hold. Those versions, ROOT, the head and the local snapshot's
//! version are the roots of the garbage collector, which drops every edge
//! not needed to materialize or advance a root and squashes chains of
//! unreferenced vertices into single composed edges.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::merge::{plan_merge, MergeResult, Resolver};
use crate::object::{apply_in_place, compose, compose_all, Delta, DeltaKind, State, TypeDescriptor};
use crate::version::{VersionId, VersionIdGen};

/// A delta between two versions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Edge {
    pub from: VersionId,
    pub to: VersionId,
    pub delta: Arc<Delta>,
}

impl Edge {
    pub fn new(from: VersionId, to: VersionId, delta: Delta) -> Self {
        Edge {
            from,
            to,
            delta: Arc::new(delta),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PutOutcome {
    FastForward,
    Merged(MergeResult),
    /// The target version was already present; nothing changed.
    AlreadyKnown,
}

impl PutOutcome {
    pub fn head_after(&self, graph: &VersionGraph) -> VersionId {
        match self {
            PutOutcome::Merged(m) => m.merged_version,
            _ => graph.head(),
        }
    }
}

/// Reference to record at the target of a put.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Holder<'a> {
    Remote(&'a str),
    Snapshot,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GcReport {
    pub versions_deleted: usize,
    pub edges_merged: usize,
}

#[derive(Debug, Clone, Default)]
struct Vertex {
    parent: Option<VersionId>,
    next: Option<VersionId>,
    ins: BTreeSet<VersionId>,
    outs: BTreeSet<VersionId>,
}

#[derive(Debug, Clone)]
pub struct VersionGraph {
    descriptor: Arc<TypeDescriptor>,
    head: VersionId,
    head_state: State,
    vertices: BTreeMap<VersionId, Vertex>,
    edges: BTreeMap<(VersionId, VersionId), Arc<Delta>>,
    remote_refs: BTreeMap<String, VersionId>,
    snapshot_pin: Option<VersionId>,
    /// Merged version -> fork version, for merges whose branch is still live.
    merge_joins: BTreeMap<VersionId, VersionId>,
    ids: VersionIdGen,
    gc_enabled: bool,
    /// Recent head states, so merges against a recent fork avoid a fold
    /// from ROOT on long uncollected graphs.
    recent: VecDeque<(VersionId, State)>,
}

const RECENT_STATES: usize = 32;

impl VersionGraph {
    pub fn new(descriptor: Arc<TypeDescriptor>, ids: VersionIdGen) -> Self {
        let mut vertices = BTreeMap::new();
        vertices.insert(VersionId::ROOT, Vertex::default());
        VersionGraph {
            descriptor,
            head: VersionId::ROOT,
            head_state: State::new(),
            vertices,
            edges: BTreeMap::new(),
            remote_refs: BTreeMap::new(),
            snapshot_pin: None,
            merge_joins: BTreeMap::new(),
            ids,
            gc_enabled: true,
            recent: VecDeque::new(),
        }
    }

    pub fn descriptor(&self) -> &Arc<TypeDescriptor> {
        &self.descriptor
    }

    pub fn type_name(&self) -> &str {
        self.descriptor.name()
    }

    pub fn head(&self) -> VersionId {
        self.head
    }

    pub fn head_state(&self) -> &State {
        &self.head_state
    }

    pub fn contains(&self, version: VersionId) -> bool {
        self.vertices.contains_key(&version)
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn versions(&self) -> impl Iterator<Item = VersionId> + '_ {
        self.vertices.keys().copied()
    }

    pub fn edges(&self) -> impl Iterator<Item = Edge> + '_ {
        self.edges.iter().map(|(&(from, to), d)| Edge {
            from,
            to,
            delta: d.clone(),
        })
    }

    pub fn remote_refs(&self) -> &BTreeMap<String, VersionId> {
        &self.remote_refs
    }

    pub fn remote_ref(&self, remote: &str) -> Option<VersionId> {
        self.remote_refs.get(remote).copied()
    }

    pub fn snapshot_pin(&self) -> Option<VersionId> {
        self.snapshot_pin
    }

    pub fn merge_joins(&self) -> &BTreeMap<VersionId, VersionId> {
        &self.merge_joins
    }

    /// Vertices with more than one parent or child.
    pub fn fork_vertex_count(&self) -> usize {
        self.vertices
            .values()
            .filter(|v| v.ins.len() > 1 || v.outs.len() > 1)
            .count()
    }

    pub fn gc_enabled(&self) -> bool {
        self.gc_enabled
    }

    /// With GC disabled, `put`, `record_remote` and `pin_snapshot` no longer
    /// collect. An explicit `collect()` still works.
    pub fn set_gc_enabled(&mut self, enabled: bool) {
        self.gc_enabled = enabled;
    }

    pub fn fresh_version(&mut self) -> VersionId {
        loop {
            let v = self.ids.next_id();
            if !self.vertices.contains_key(&v) {
                return v;
            }
        }
    }

    fn require(&self, version: VersionId) -> Result<&Vertex> {
        self.vertices
            .get(&version)
            .ok_or(Error::UnknownVersion(version))
    }

    fn edge(&self, from: VersionId, to: VersionId) -> Edge {
        Edge {
            from,
            to,
            delta: self.edges[&(from, to)].clone(),
        }
    }

    /// Edges from `since` to the head, in order.
    pub fn get(&self, since: VersionId) -> Result<Vec<Edge>> {
        self.require(since)?;
        let mut out = Vec::new();
        let mut at = since;
        while at != self.head {
            let next = self.vertices[&at]
                .next
                .ok_or(Error::UnknownVersion(since))?;
            out.push(self.edge(at, next));
            at = next;
        }
        Ok(out)
    }

    /// All changes since `since`, squashed into a single delta.
    ///
    /// Objects created and deleted within the range cancel out.
    pub fn get_squashed(&self, since: VersionId) -> Result<Delta> {
        let edges = self.get(since)?;
        let mut out = compose_all(edges.iter().map(|e| e.delta.as_ref()));
        let dels: Vec<_> = out
            .iter()
            .filter(|(_, d)| d.kind == DeltaKind::Del)
            .map(|(id, _)| id.clone())
            .collect();
        if !dels.is_empty() {
            let start = self.state_at(since)?;
            for id in dels.iter().filter(|id| !start.contains_key(*id)) {
                out.remove(id);
            }
        }
        Ok(out)
    }

    /// Materializes the state at `version`.
    pub fn state_at(&self, version: VersionId) -> Result<State> {
        self.require(version)?;
        if version == self.head {
            return Ok(self.head_state.clone());
        }
        let mut chain = Vec::new();
        let mut at = version;
        let mut state = loop {
            if let Some((_, s)) = self.recent.iter().find(|(v, _)| *v == at) {
                break s.clone();
            }
            match self.vertices[&at].parent {
                Some(parent) => {
                    chain.push((parent, at));
                    at = parent;
                }
                None => break State::new(),
            }
        };
        for key in chain.iter().rev() {
            apply_in_place(&mut state, &self.edges[key]);
        }
        Ok(state)
    }

    fn remember_head(&mut self) {
        if self.recent.len() == RECENT_STATES {
            self.recent.pop_front();
        }
        self.recent.push_back((self.head, self.head_state.clone()));
    }

    fn check_type(&self, delta: &Delta) -> Result<()> {
        match delta.ids().find(|id| id.type_name != self.type_name()) {
            Some(id) => Err(Error::MalformedDelta {
                id: id.clone(),
                reason: format!("not of type `{}`", self.type_name()),
            }),
            None => Ok(()),
        }
    }

    fn link(&mut self, from: VersionId, to: VersionId, delta: Arc<Delta>) {
        self.edges.insert((from, to), delta);
        self.vertices.get_mut(&from).expect("edge source").outs.insert(to);
        self.vertices.entry(to).or_default().ins.insert(from);
    }

    /// Receives the chain `edges` taking `from` to `to`.
    ///
    /// Appends when `from` is the head; otherwise merges through `resolver`.
    /// On any error the graph is left unmodified.
    pub fn put(
        &mut self,
        from: VersionId,
        to: VersionId,
        edges: Vec<Edge>,
        resolver: &dyn Resolver,
    ) -> Result<PutOutcome> {
        self.put_held(from, to, edges, resolver, None)
    }

    /// Like [`put`](Self::put), but records `holder` at `to` before the
    /// collector runs, so a merged-in branch survives.
    pub fn put_held(
        &mut self,
        from: VersionId,
        to: VersionId,
        edges: Vec<Edge>,
        resolver: &dyn Resolver,
        holder: Option<Holder<'_>>,
    ) -> Result<PutOutcome> {
        let outcome = self.put_uncollected(from, to, edges, resolver)?;
        match holder {
            Some(Holder::Remote(name)) => {
                self.remote_refs.insert(name.to_string(), to);
            }
            Some(Holder::Snapshot) => self.snapshot_pin = Some(to),
            None => {}
        }
        if self.gc_enabled {
            self.collect();
        }
        Ok(outcome)
    }

    fn put_uncollected(
        &mut self,
        from: VersionId,
        to: VersionId,
        edges: Vec<Edge>,
        resolver: &dyn Resolver,
    ) -> Result<PutOutcome> {
        if self.contains(to) {
            return Ok(PutOutcome::AlreadyKnown);
        }
        self.require(from)?;
        let mut at = from;
        let mut seen = BTreeSet::new();
        for e in &edges {
            if e.from != at || e.from == e.to || self.contains(e.to) || !seen.insert(e.to) {
                return Err(Error::BrokenChain { from, to });
            }
            self.check_type(&e.delta)?;
            at = e.to;
        }
        if at != to || edges.is_empty() {
            return Err(Error::BrokenChain { from, to });
        }

        let outcome = if from == self.head {
            for e in &edges {
                apply_in_place(&mut self.head_state, &e.delta);
                self.link(e.from, e.to, e.delta.clone());
                self.vertices.get_mut(&e.from).unwrap().next = Some(e.to);
                self.vertices.get_mut(&e.to).unwrap().parent = Some(e.from);
            }
            self.head = to;
            self.remember_head();
            PutOutcome::FastForward
        } else {
            PutOutcome::Merged(self.resolve(from, to, edges, resolver)?)
        };
        Ok(outcome)
    }

    fn resolve(
        &mut self,
        fork: VersionId,
        incoming_head: VersionId,
        edges: Vec<Edge>,
        resolver: &dyn Resolver,
    ) -> Result<MergeResult> {
        let delta_a_to_h = self.get_squashed(fork)?;
        let delta_a_to_b = compose_all(edges.iter().map(|e| e.delta.as_ref()));
        let original = self.state_at(fork)?;
        let plan = plan_merge(
            &self.descriptor,
            &original,
            &self.head_state,
            &delta_a_to_h,
            &delta_a_to_b,
            resolver,
        )?;

        let merged = self.fresh_version();
        let previous_head = self.head;
        for e in &edges {
            self.link(e.from, e.to, e.delta.clone());
            self.vertices.get_mut(&e.to).unwrap().parent = Some(e.from);
            if e.from != fork {
                self.vertices.get_mut(&e.from).unwrap().next = Some(e.to);
            }
        }
        self.link(previous_head, merged, Arc::new(plan.h_to_m.clone()));
        self.link(incoming_head, merged, Arc::new(plan.b_to_m.clone()));
        self.vertices.get_mut(&previous_head).unwrap().next = Some(merged);
        self.vertices.get_mut(&incoming_head).unwrap().next = Some(merged);
        self.vertices.get_mut(&merged).unwrap().parent = Some(previous_head);
        self.merge_joins.insert(merged, fork);
        self.head = merged;
        self.head_state = plan.merged_state;
        self.remember_head();

        log::debug!(
            "{}: merged {} into {} at {} ({} conflicts)",
            self.type_name(),
            incoming_head.short(),
            previous_head.short(),
            merged.short(),
            plan.conflicts.len()
        );
        Ok(MergeResult {
            fork,
            incoming_head,
            previous_head,
            merged_version: merged,
            conflicts: plan.conflicts.len(),
            h_to_m: plan.h_to_m,
            b_to_m: plan.b_to_m,
        })
    }

    /// Records that `remote` holds `version`, then collects.
    pub fn record_remote(&mut self, remote: &str, version: VersionId) -> Result<()> {
        self.require(version)?;
        self.remote_refs.insert(remote.to_string(), version);
        if self.gc_enabled {
            self.collect();
        }
        Ok(())
    }

    pub fn forget_remote(&mut self, remote: &str) -> Option<VersionId> {
        let old = self.remote_refs.remove(remote);
        if self.gc_enabled {
            self.collect();
        }
        old
    }

    /// Keeps `version` alive for the local snapshot, then collects.
    pub fn pin_snapshot(&mut self, version: VersionId) -> Result<()> {
        self.require(version)?;
        self.snapshot_pin = Some(version);
        if self.gc_enabled {
            self.collect();
        }
        Ok(())
    }

    fn roots(&self) -> BTreeSet<VersionId> {
        let mut roots: BTreeSet<VersionId> = self.remote_refs.values().copied().collect();
        roots.insert(VersionId::ROOT);
        roots.insert(self.head);
        roots.extend(self.snapshot_pin);
        roots
    }

    /// Drops every version nobody references, squashing the edges around it.
    ///
    /// Folding from ROOT to the head, and to every referenced version, gives
    /// the same state before and after.
    pub fn collect(&mut self) -> GcReport {
        let roots = self.roots();

        let mut needed: BTreeSet<(VersionId, VersionId)> = BTreeSet::new();
        let mut up_done = BTreeSet::new();
        let mut down_done = BTreeSet::new();
        for &root in &roots {
            let mut at = root;
            while up_done.insert(at) {
                let Some(parent) = self.vertices[&at].parent else { break };
                needed.insert((parent, at));
                at = parent;
            }
            let mut at = root;
            while down_done.insert(at) {
                let Some(next) = self.vertices[&at].next else { break };
                needed.insert((at, next));
                at = next;
            }
        }

        let mut report = GcReport::default();
        let unneeded: Vec<_> = self
            .edges
            .keys()
            .filter(|k| !needed.contains(k))
            .copied()
            .collect();
        for (from, to) in unneeded {
            self.unlink(from, to);
        }
        let orphans: Vec<VersionId> = self
            .vertices
            .iter()
            .filter(|(v, x)| !roots.contains(v) && x.ins.is_empty() && x.outs.is_empty())
            .map(|(v, _)| *v)
            .collect();
        for v in orphans {
            self.vertices.remove(&v);
            report.versions_deleted += 1;
        }

        let spliceable = |g: &Self, v: &VersionId| {
            let x = &g.vertices[v];
            !roots.contains(v) && x.ins.len() == 1 && x.outs.len() == 1
        };
        loop {
            let candidates: Vec<VersionId> = self
                .vertices
                .keys()
                .filter(|v| spliceable(self, v))
                .copied()
                .collect();
            if candidates.is_empty() {
                break;
            }
            for v in candidates {
                if self.vertices.contains_key(&v) && spliceable(self, &v) {
                    self.splice(v);
                    report.versions_deleted += 1;
                    report.edges_merged += 1;
                }
            }
        }

        self.merge_joins
            .retain(|m, _| self.vertices.get(m).is_some_and(|x| x.ins.len() > 1));
        report
    }

    fn unlink(&mut self, from: VersionId, to: VersionId) {
        self.edges.remove(&(from, to));
        if let Some(f) = self.vertices.get_mut(&from) {
            f.outs.remove(&to);
            if f.next == Some(to) {
                f.next = None;
            }
        }
        if let Some(t) = self.vertices.get_mut(&to) {
            t.ins.remove(&from);
            if t.parent == Some(from) {
                t.parent = None;
            }
        }
    }

    /// Replaces `u -> v -> w` by one composed edge `u -> w`.
    fn splice(&mut self, v: VersionId) {
        let vertex = self.vertices.remove(&v).expect("splice candidate");
        let u = *vertex.ins.iter().next().unwrap();
        let w = *vertex.outs.iter().next().unwrap();
        let first = self.edges.remove(&(u, v)).unwrap();
        let second = self.edges.remove(&(v, w)).unwrap();
        let delta = Arc::new(compose(&first, &second));

        let uu = self.vertices.get_mut(&u).unwrap();
        uu.outs.remove(&v);
        if uu.next == Some(v) {
            uu.next = Some(w);
        }
        let ww = self.vertices.get_mut(&w).unwrap();
        ww.ins.remove(&v);
        if ww.parent == Some(v) {
            ww.parent = Some(u);
        }
        // A parallel u -> w edge can only exist if both describe the same
        // transition; keep the existing one.
        if !self.edges.contains_key(&(u, w)) {
            self.link(u, w, delta);
        }
    }

    /// Graphviz rendering: ROOT boxed, head bold, referenced versions
    /// labeled with the remotes holding them, edges labeled with their
    /// object count.
    pub fn to_dot(&self) -> String {
        let mut holders: BTreeMap<VersionId, Vec<&str>> = BTreeMap::new();
        for (name, v) in &self.remote_refs {
            holders.entry(*v).or_default().push(name);
        }
        let mut out = String::new();
        let _ = writeln!(out, "digraph \"{}\" {{", self.type_name());
        for v in self.vertices.keys() {
            let mut label = v.short();
            if let Some(names) = holders.get(v) {
                let _ = write!(label, "\\n[{}]", names.join(", "));
            }
            let mut attrs = vec![format!("label=\"{label}\"")];
            if v.is_root() {
                attrs.push("shape=box".into());
            }
            if *v == self.head {
                attrs.push("style=bold".into());
            }
            let _ = writeln!(out, "  \"{}\" [{}];", v, attrs.join(", "));
        }
        for ((from, to), delta) in &self.edges {
            let _ = writeln!(out, "  \"{from}\" -> \"{to}\" [label=\"{}\"];", delta.len());
        }
        out.push_str("}\n");
        out
    }

    /// Checks the structural invariants; used by tests.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        if !self.contains(VersionId::ROOT) || !self.contains(self.head) {
            return Err("ROOT or head missing".into());
        }
        for (name, v) in &self.remote_refs {
            if !self.contains(*v) {
                return Err(format!("remote {name} references deleted {v:?}"));
            }
        }
        if let Some(p) = self.snapshot_pin {
            if !self.contains(p) {
                return Err(format!("snapshot pin {p:?} deleted"));
            }
        }
        for (&(from, to), _) in &self.edges {
            if from == to || !self.contains(from) || !self.contains(to) {
                return Err(format!("dangling edge {from:?} -> {to:?}"));
            }
        }
        for (v, x) in &self.vertices {
            if *v != VersionId::ROOT && x.parent.is_none() {
                return Err(format!("{v:?} has no parent edge"));
            }
            if let Some(p) = x.parent {
                if !self.edges.contains_key(&(p, *v)) {
                    return Err(format!("{v:?} parent edge missing"));
                }
            }
            if let Some(n) = x.next {
                if !self.edges.contains_key(&(*v, n)) {
                    return Err(format!("{v:?} next edge missing"));
                }
            }
        }
        if self.vertices[&self.head].next.is_some() {
            return Err("head has a next edge".into());
        }
        for root in self.roots() {
            self.get(root).map_err(|e| format!("get({root:?}): {e}"))?;
        }
        if self.state_at_uncached(self.head) != self.head_state {
            return Err("cached head state differs from fold".into());
        }
        Ok(())
    }

    fn state_at_uncached(&self, version: VersionId) -> State {
        let mut chain = Vec::new();
        let mut at = version;
        while let Some(parent) = self.vertices[&at].parent {
            chain.push((parent, at));
            at = parent;
        }
        let mut state = State::new();
        for key in chain.iter().rev() {
            apply_in_place(&mut state, &self.edges[key]);
        }
        state
    }
}
