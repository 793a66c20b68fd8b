//! Three-way merge of divergent histories.
//!
//! When a graph receives changes that start at a version `a` other than its
//! head `h`, the incoming delta `a -> b` and the local delta `a -> h` are
//! merged into a new version `m`. The application supplies a [`Resolver`]
//! that sees every object whose changes overlap, together with the full
//! states at `a` (original), `h` (mine) and `b` (theirs), and returns a
//! resolution delta. Two convergence deltas `h -> m` and `b -> m` are then
//! built so that both divergent states land on the same merged state.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};

use crate::error::{Error, Result};
use crate::object::{
    apply, apply_in_place, difference, DeltaKind, Delta, ObjectDelta, ObjectId, State, TypeDescriptor,
    Values,
};
use crate::version::VersionId;

/// An object changed on both sides of a fork.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConflictEntry {
    pub id: ObjectId,
    /// Dimensions written by both sides; empty when the writes are disjoint
    /// or when `structural`.
    pub dimensions: Vec<String>,
    /// Either side created or deleted the whole object.
    pub structural: bool,
    pub original: Option<Values>,
    pub mine: Option<Values>,
    pub theirs: Option<Values>,
}

/// Application-supplied three-way merge.
///
/// The returned delta is applied on top of "mine" merged with every
/// non-overlapping incoming change; whatever it writes wins in the merged
/// version. Overlapping keys the resolver leaves alone keep mine's value,
/// and disjoint incoming writes it leaves alone are adopted.
pub trait Resolver: Send + Sync {
    fn resolve(
        &self,
        conflicts: &[ConflictEntry],
        original: &State,
        mine: &State,
        theirs: &State,
    ) -> std::result::Result<Delta, String>;
}

impl<F> Resolver for F
where
    F: Fn(&[ConflictEntry], &State, &State, &State) -> std::result::Result<Delta, String>
        + Send
        + Sync,
{
    fn resolve(
        &self,
        conflicts: &[ConflictEntry],
        original: &State,
        mine: &State,
        theirs: &State,
    ) -> std::result::Result<Delta, String> {
        self(conflicts, original, mine, theirs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    KeepMine,
    KeepTheirs,
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "keep_mine" | "mine" => Ok(Strategy::KeepMine),
            "keep_theirs" | "theirs" => Ok(Strategy::KeepTheirs),
            other => Err(Error::Config(format!("unknown resolver strategy `{other}`"))),
        }
    }
}

/// Built-in resolver reasserting one side's value for every conflicting key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DefaultResolver(pub Strategy);

pub fn default_resolver(strategy: Strategy) -> DefaultResolver {
    DefaultResolver(strategy)
}

impl Resolver for DefaultResolver {
    fn resolve(
        &self,
        conflicts: &[ConflictEntry],
        _original: &State,
        _mine: &State,
        _theirs: &State,
    ) -> std::result::Result<Delta, String> {
        let mut out = Delta::new();
        for c in conflicts {
            let (winner, loser) = match self.0 {
                Strategy::KeepMine => (&c.mine, &c.theirs),
                Strategy::KeepTheirs => (&c.theirs, &c.mine),
            };
            let entry = match (winner, loser) {
                _ if !c.structural && c.dimensions.is_empty() => continue,
                (None, _) => ObjectDelta::delete(),
                (Some(w), None) => ObjectDelta::new_object(w.clone()),
                (Some(w), Some(_)) if c.structural => ObjectDelta::new_object(w.clone()),
                (Some(w), Some(_)) => {
                    let values: Values = c
                        .dimensions
                        .iter()
                        .filter_map(|d| w.get(d).map(|v| (d.clone(), v.clone())))
                        .collect();
                    if values.is_empty() {
                        continue;
                    }
                    ObjectDelta::modify(values)
                }
            };
            out.insert(c.id.clone(), entry);
        }
        Ok(out)
    }
}

/// Objects present in both deltas, sorted.
pub fn detect_conflicts(delta_a_to_h: &Delta, delta_a_to_b: &Delta) -> Vec<ObjectId> {
    delta_a_to_h
        .ids()
        .filter(|id| delta_a_to_b.contains(id))
        .cloned()
        .collect()
}

/// Keys written by both entries, and whether either is structural.
fn overlap(mine: &ObjectDelta, theirs: &ObjectDelta) -> (Vec<String>, bool) {
    if mine.kind != DeltaKind::Mod || theirs.kind != DeltaKind::Mod {
        return (Vec::new(), true);
    }
    let dims = mine
        .values
        .keys()
        .filter(|d| theirs.values.contains_key(*d))
        .cloned()
        .collect();
    (dims, false)
}

/// Everything computed for a merge, before the graph is touched.
#[derive(Debug, Clone)]
pub struct MergePlan {
    pub conflicts: Vec<ConflictEntry>,
    pub resolution: Delta,
    pub h_to_m: Delta,
    pub b_to_m: Delta,
    pub merged_state: State,
}

/// Outcome of a merge as recorded in the graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergeResult {
    pub fork: VersionId,
    pub incoming_head: VersionId,
    pub previous_head: VersionId,
    pub merged_version: VersionId,
    pub conflicts: usize,
    pub h_to_m: Delta,
    pub b_to_m: Delta,
}

/// Entry taking `from` to `to` for one object, or `None` if they match.
fn transition(from: Option<&Values>, to: Option<&Values>) -> Option<ObjectDelta> {
    match (from, to) {
        (None, None) => None,
        (Some(_), None) => Some(ObjectDelta::delete()),
        (None, Some(t)) => Some(ObjectDelta::new_object(t.clone())),
        (Some(f), Some(t)) => {
            if f.keys().any(|k| !t.contains_key(k)) {
                return Some(ObjectDelta::new_object(t.clone()));
            }
            let changed: Values = t
                .iter()
                .filter(|(k, v)| f.get(*k) != Some(*v))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect();
            (!changed.is_empty()).then(|| ObjectDelta::modify(changed))
        }
    }
}

fn apply_entry(base: Option<&Values>, entry: Option<&ObjectDelta>) -> Option<Values> {
    match entry {
        None => base.cloned(),
        Some(e) => match e.kind {
            DeltaKind::New => Some(e.values.clone()),
            DeltaKind::Del => None,
            DeltaKind::Mod => base.map(|b| {
                let mut out = b.clone();
                out.extend(e.values.iter().map(|(k, v)| (k.clone(), v.clone())));
                out
            }),
        },
    }
}

fn run_resolver(
    resolver: &dyn Resolver,
    conflicts: &[ConflictEntry],
    original: &State,
    mine: &State,
    theirs: &State,
) -> Result<Delta> {
    match catch_unwind(AssertUnwindSafe(|| resolver.resolve(conflicts, original, mine, theirs))) {
        Ok(Ok(delta)) => Ok(delta),
        Ok(Err(msg)) => Err(Error::ResolverFault(msg)),
        Err(_) => Err(Error::ResolverFault("resolver panicked".to_string())),
    }
}

/// Builds the merge of `delta_a_to_b` into a graph whose fork-point state is
/// `original` and whose head state is `mine`, given `delta_a_to_h`.
pub fn plan_merge(
    descriptor: &TypeDescriptor,
    original: &State,
    mine: &State,
    delta_a_to_h: &Delta,
    delta_a_to_b: &Delta,
    resolver: &dyn Resolver,
) -> Result<MergePlan> {
    let theirs = apply(original, delta_a_to_b);

    let mut conflicts = Vec::new();
    for id in detect_conflicts(delta_a_to_h, delta_a_to_b) {
        let (Some(m), Some(t)) = (delta_a_to_h.get(&id), delta_a_to_b.get(&id)) else {
            continue;
        };
        let (dimensions, structural) = overlap(m, t);
        conflicts.push(ConflictEntry {
            original: original.get(&id).cloned(),
            mine: mine.get(&id).cloned(),
            theirs: theirs.get(&id).cloned(),
            id,
            dimensions,
            structural,
        });
    }

    let resolution = run_resolver(resolver, &conflicts, original, mine, &theirs)?;
    for (id, entry) in &resolution {
        if id.type_name != descriptor.name() {
            return Err(Error::ResolverFault(format!(
                "resolution touches {id}, outside type `{}`",
                descriptor.name()
            )));
        }
        entry
            .validate(id, descriptor)
            .map_err(|e| Error::ResolverFault(e.to_string()))?;
    }

    let incoming_only = difference(delta_a_to_b, delta_a_to_h);
    let local_only = difference(delta_a_to_h, delta_a_to_b);

    let mut merged_state = apply(mine, &incoming_only);
    apply_in_place(&mut merged_state, &resolution);

    let mut h_to_m = incoming_only.clone();
    let mut b_to_m = local_only.clone();
    let touched: BTreeSet<&ObjectId> = delta_a_to_h
        .ids()
        .filter(|id| delta_a_to_b.contains(id))
        .chain(resolution.ids())
        .collect();
    for id in touched {
        let target = merged_state.get(id);
        let via_h = apply_entry(mine.get(id), incoming_only.get(id));
        let via_b = apply_entry(theirs.get(id), local_only.get(id));
        if via_h.as_ref() != target {
            match transition(mine.get(id), target) {
                Some(e) => h_to_m.insert(id.clone(), e),
                None => {
                    h_to_m.remove(id);
                }
            }
        }
        if via_b.as_ref() != target {
            match transition(theirs.get(id), target) {
                Some(e) => b_to_m.insert(id.clone(), e),
                None => {
                    b_to_m.remove(id);
                }
            }
        }
    }

    Ok(MergePlan {
        conflicts,
        resolution,
        h_to_m,
        b_to_m,
        merged_state,
    })
}
