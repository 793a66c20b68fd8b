//! The application-facing heap for one type: a materialized state at a known
//! version with locally staged changes on top.
//!
//! Reads consult the staged delta first and the checked-out state second.
//! Nothing outside `apply_checkout` and `mark_committed` changes the state,
//! so reads are stable between those calls.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::graph::Edge;
use crate::object::{
    apply_in_place, compose_all, DeltaKind, Delta, DimValue, ObjectDelta, ObjectId, ObjectState, State,
    TypeDescriptor, Values,
};
use crate::version::VersionId;

#[derive(Debug, Clone)]
pub struct Snapshot {
    descriptor: Arc<TypeDescriptor>,
    version: VersionId,
    state: State,
    staged: Delta,
}

impl Snapshot {
    pub fn new(descriptor: Arc<TypeDescriptor>) -> Self {
        Snapshot {
            descriptor,
            version: VersionId::ROOT,
            state: State::new(),
            staged: Delta::new(),
        }
    }

    pub fn version(&self) -> VersionId {
        self.version
    }

    pub fn state(&self) -> &State {
        &self.state
    }

    pub fn staged(&self) -> &Delta {
        &self.staged
    }

    pub fn descriptor(&self) -> &Arc<TypeDescriptor> {
        &self.descriptor
    }

    fn check_id(&self, id: &ObjectId) -> Result<()> {
        if id.type_name != self.descriptor.name() {
            return Err(Error::UnknownType(id.type_name.clone()));
        }
        Ok(())
    }

    fn check_dimension(&self, dim: &str) -> Result<()> {
        if !self.descriptor.has_dimension(dim) {
            return Err(Error::UnknownDimension {
                type_name: self.descriptor.name().to_string(),
                dimension: dim.to_string(),
            });
        }
        Ok(())
    }

    fn check_value(value: &DimValue) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::InvalidValue(format!("{value} is not a finite float")));
        }
        Ok(())
    }

    pub fn is_visible(&self, id: &ObjectId) -> bool {
        match self.staged.get(id) {
            Some(e) => e.kind != DeltaKind::Del,
            None => self.state.contains_key(id),
        }
    }

    fn require_visible(&self, id: &ObjectId) -> Result<()> {
        self.check_id(id)?;
        if !self.is_visible(id) {
            return Err(Error::UnknownObject(id.clone()));
        }
        Ok(())
    }

    /// Stages a new object. Undeclared dimensions are rejected and missing
    /// ones are filled with `Null`.
    pub fn create(&mut self, obj: ObjectState) -> Result<()> {
        self.check_id(&obj.id)?;
        if self.is_visible(&obj.id) {
            return Err(Error::DuplicateObject(obj.id));
        }
        let mut values = Values::new();
        for (dim, v) in obj.values {
            self.check_dimension(&dim)?;
            Self::check_value(&v)?;
            values.insert(dim, v);
        }
        for dim in self.descriptor.dimensions() {
            values.entry(dim.clone()).or_insert(DimValue::Null);
        }
        self.staged.push(obj.id, ObjectDelta::new_object(values));
        Ok(())
    }

    pub fn delete(&mut self, id: &ObjectId) -> Result<()> {
        self.require_visible(id)?;
        if self.state.contains_key(id) {
            self.staged.push(id.clone(), ObjectDelta::delete());
        } else {
            // created and deleted before any commit: nothing to record
            self.staged.remove(id);
        }
        Ok(())
    }

    pub fn write(&mut self, id: &ObjectId, dim: &str, value: DimValue) -> Result<()> {
        self.require_visible(id)?;
        self.check_dimension(dim)?;
        Self::check_value(&value)?;
        let mut values = Values::new();
        values.insert(dim.to_string(), value);
        self.staged.push(id.clone(), ObjectDelta::modify(values));
        Ok(())
    }

    pub fn read(&self, id: &ObjectId, dim: &str) -> Result<DimValue> {
        self.require_visible(id)?;
        self.check_dimension(dim)?;
        if let Some(v) = self.staged.get(id).and_then(|e| e.values.get(dim)) {
            return Ok(v.clone());
        }
        Ok(self
            .state
            .get(id)
            .and_then(|vals| vals.get(dim))
            .cloned()
            .unwrap_or(DimValue::Null))
    }

    pub fn read_object(&self, id: &ObjectId) -> Result<ObjectState> {
        self.require_visible(id)?;
        Ok(ObjectState {
            id: id.clone(),
            values: self.overlay(id).expect("visible object"),
        })
    }

    fn overlay(&self, id: &ObjectId) -> Option<Values> {
        match self.staged.get(id) {
            None => self.state.get(id).cloned(),
            Some(e) => match e.kind {
                DeltaKind::Del => None,
                DeltaKind::New => Some(e.values.clone()),
                DeltaKind::Mod => {
                    let mut values = self.state.get(id).cloned()?;
                    values.extend(e.values.iter().map(|(k, v)| (k.clone(), v.clone())));
                    Some(values)
                }
            },
        }
    }

    /// Every visible object, ordered by key.
    pub fn read_all(&self) -> Vec<ObjectState> {
        let mut ids: Vec<&ObjectId> = self.state.keys().chain(self.staged.ids()).collect();
        ids.sort();
        ids.dedup();
        ids.into_iter()
            .filter_map(|id| {
                self.overlay(id).map(|values| ObjectState {
                    id: id.clone(),
                    values,
                })
            })
            .collect()
    }

    /// Folds `edges` into the state and moves to `new_version`. Staged
    /// changes are kept and still take precedence on reads.
    ///
    /// Returns the number of object entries applied.
    pub fn apply_checkout(&mut self, edges: &[Edge], new_version: VersionId) -> Result<usize> {
        if let Some(first) = edges.first() {
            if first.from != self.version {
                return Err(Error::VersionMismatch {
                    expected: self.version,
                    found: first.from,
                });
            }
        }
        let squashed = compose_all(edges.iter().map(|e| e.delta.as_ref()));
        apply_in_place(&mut self.state, &squashed);
        self.version = new_version;
        Ok(squashed.len())
    }

    /// Hands out the staged delta for a commit, leaving the snapshot as is.
    pub fn staged_for_commit(&self) -> Option<Delta> {
        (!self.staged.is_empty()).then(|| self.staged.clone())
    }

    /// Records that `delta` was committed as `version`.
    pub fn mark_committed(&mut self, version: VersionId, delta: &Delta) {
        apply_in_place(&mut self.state, delta);
        self.staged = Delta::new();
        self.version = version;
    }
}
