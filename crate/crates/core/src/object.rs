//! Types, objects, dimension values and the delta algebra.
//!
//! A [`Delta`] maps object identities to per-object changes tagged `new`,
//! `mod` or `del`. Every other part of the crate stores, ships and merges
//! state as deltas, so the four operations here ([`apply`], [`compose`],
//! [`difference`], [`union`]) carry most of the semantics:
//!
//! * `apply` is total. Deleting an absent object or modifying one is a no-op,
//!   creating an object that already exists replaces it.
//! * `compose(a, b)` is the single delta with the same effect as applying `a`
//!   and then `b`, on every base state.
//! * `difference(a, b)` keeps the parts of `a` whose keys `b` does not touch.
//! * `union(a, b)` merges two deltas key-wise, with `b` taking priority.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde_json::{Map, Number, Value};

use crate::error::{Error, Result};

/// Declared shape of a shared type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TypeDescriptor {
    name: String,
    dimensions: Vec<String>,
    primary_key: Option<String>,
}

impl TypeDescriptor {
    pub fn new<N, I, D>(name: N, dimensions: I) -> Result<Self>
    where
        N: Into<String>,
        I: IntoIterator<Item = D>,
        D: Into<String>,
    {
        let name = name.into();
        let invalid = |reason: &str| Error::InvalidDescriptor {
            name: name.clone(),
            reason: reason.to_string(),
        };
        if name.is_empty() || name.contains('/') {
            return Err(invalid("type names must be non-empty and must not contain '/'"));
        }
        let dimensions: Vec<String> = dimensions.into_iter().map(Into::into).collect();
        for (i, d) in dimensions.iter().enumerate() {
            if dimensions[..i].contains(d) {
                return Err(invalid(&format!("dimension `{d}` declared twice")));
            }
        }
        Ok(TypeDescriptor {
            name,
            dimensions,
            primary_key: None,
        })
    }

    /// Marks `dimension` as the primary key. It must already be declared.
    pub fn with_primary_key(mut self, dimension: impl Into<String>) -> Result<Self> {
        let dimension = dimension.into();
        if !self.has_dimension(&dimension) {
            return Err(Error::InvalidDescriptor {
                name: self.name,
                reason: format!("primary key `{dimension}` is not a dimension"),
            });
        }
        self.primary_key = Some(dimension);
        Ok(self)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dimensions(&self) -> &[String] {
        &self.dimensions
    }

    pub fn primary_key(&self) -> Option<&str> {
        self.primary_key.as_deref()
    }

    pub fn has_dimension(&self, dimension: &str) -> bool {
        self.dimensions.iter().any(|d| d == dimension)
    }
}

/// Append-only set of type descriptors shared by all nodes of an application.
#[derive(Debug, Clone, Default)]
pub struct TypeRegistry {
    types: BTreeMap<String, Arc<TypeDescriptor>>,
}

impl TypeRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, descriptor: TypeDescriptor) -> Result<&mut Self> {
        if self.types.contains_key(descriptor.name()) {
            return Err(Error::DuplicateType(descriptor.name().to_string()));
        }
        self.types
            .insert(descriptor.name().to_string(), Arc::new(descriptor));
        Ok(self)
    }

    pub fn get(&self, name: &str) -> Option<&Arc<TypeDescriptor>> {
        self.types.get(name)
    }

    pub fn require(&self, name: &str) -> Result<&Arc<TypeDescriptor>> {
        self.get(name)
            .ok_or_else(|| Error::UnknownType(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.types.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.types.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }
}

/// Primary key of an object within its type.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ObjectKey {
    Int(i64),
    Str(String),
}

impl From<i64> for ObjectKey {
    fn from(v: i64) -> Self {
        ObjectKey::Int(v)
    }
}

impl From<&str> for ObjectKey {
    fn from(v: &str) -> Self {
        ObjectKey::Str(v.to_string())
    }
}

impl From<String> for ObjectKey {
    fn from(v: String) -> Self {
        ObjectKey::Str(v)
    }
}

impl fmt::Display for ObjectKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ObjectKey::Int(v) => write!(f, "{v}"),
            // String keys are quoted so that "7" and 7 render differently.
            ObjectKey::Str(s) => write!(f, "{}", Value::String(s.clone())),
        }
    }
}

/// Globally unique object identity: `<type, key>`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ObjectId {
    pub type_name: String,
    pub key: ObjectKey,
}

impl ObjectId {
    pub fn new(type_name: impl Into<String>, key: impl Into<ObjectKey>) -> Self {
        ObjectId {
            type_name: type_name.into(),
            key: key.into(),
        }
    }

    /// Inverse of the `Display` rendering, `type_name/key`.
    pub fn parse(s: &str) -> Option<Self> {
        let (type_name, key) = s.split_once('/')?;
        if type_name.is_empty() {
            return None;
        }
        let key = if key.starts_with('"') {
            ObjectKey::Str(serde_json::from_str::<String>(key).ok()?)
        } else {
            if key.starts_with('+') || (key.len() > 1 && key.starts_with('0')) {
                return None;
            }
            ObjectKey::Int(key.parse().ok()?)
        };
        Some(ObjectId::new(type_name, key))
    }
}

impl fmt::Display for ObjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.type_name, self.key)
    }
}

/// Scalar dimension value. Floats compare bitwise.
#[derive(Debug, Clone)]
pub enum DimValue {
    Null,
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
}

impl DimValue {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            DimValue::Float(v) => Some(*v),
            DimValue::Int(v) => Some(*v as f64),
            _ => None,
        }
    }

    pub fn as_i64(&self) -> Option<i64> {
        match self {
            DimValue::Int(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            DimValue::Str(v) => Some(v),
            _ => None,
        }
    }

    pub fn is_finite(&self) -> bool {
        !matches!(self, DimValue::Float(v) if !v.is_finite())
    }

    fn to_json(&self) -> Option<Value> {
        Some(match self {
            DimValue::Null => Value::Null,
            DimValue::Bool(b) => Value::Bool(*b),
            DimValue::Int(i) => Value::Number((*i).into()),
            DimValue::Float(v) => Value::Number(Number::from_f64(*v)?),
            DimValue::Str(s) => Value::String(s.clone()),
        })
    }

    fn from_json(value: &Value) -> Option<Self> {
        Some(match value {
            Value::Null => DimValue::Null,
            Value::Bool(b) => DimValue::Bool(*b),
            Value::Number(n) if n.is_f64() => DimValue::Float(n.as_f64()?),
            Value::Number(n) => DimValue::Int(n.as_i64()?),
            Value::String(s) => DimValue::Str(s.clone()),
            _ => return None,
        })
    }
}

impl PartialEq for DimValue {
    fn eq(&self, other: &Self) -> bool {
        use DimValue::*;
        match (self, other) {
            (Null, Null) => true,
            (Bool(a), Bool(b)) => a == b,
            (Int(a), Int(b)) => a == b,
            (Float(a), Float(b)) => a.to_bits() == b.to_bits(),
            (Str(a), Str(b)) => a == b,
            _ => false,
        }
    }
}

impl Eq for DimValue {}

impl std::hash::Hash for DimValue {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        std::mem::discriminant(self).hash(state);
        match self {
            DimValue::Null => {}
            DimValue::Bool(b) => b.hash(state),
            DimValue::Int(i) => i.hash(state),
            DimValue::Float(v) => v.to_bits().hash(state),
            DimValue::Str(s) => s.hash(state),
        }
    }
}

impl From<i64> for DimValue {
    fn from(v: i64) -> Self {
        DimValue::Int(v)
    }
}

impl From<f64> for DimValue {
    fn from(v: f64) -> Self {
        DimValue::Float(v)
    }
}

impl From<bool> for DimValue {
    fn from(v: bool) -> Self {
        DimValue::Bool(v)
    }
}

impl From<&str> for DimValue {
    fn from(v: &str) -> Self {
        DimValue::Str(v.to_string())
    }
}

impl From<String> for DimValue {
    fn from(v: String) -> Self {
        DimValue::Str(v)
    }
}

impl fmt::Display for DimValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DimValue::Null => f.write_str("null"),
            DimValue::Bool(b) => write!(f, "{b}"),
            DimValue::Int(i) => write!(f, "{i}"),
            DimValue::Float(v) => write!(f, "{v:?}"),
            DimValue::Str(s) => write!(f, "{s:?}"),
        }
    }
}

/// Dimension name to value.
pub type Values = BTreeMap<String, DimValue>;

/// Materialized object heap contents.
pub type State = BTreeMap<ObjectId, Values>;

/// One object as seen by application code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObjectState {
    pub id: ObjectId,
    pub values: Values,
}

impl ObjectState {
    pub fn new(id: ObjectId) -> Self {
        ObjectState {
            id,
            values: Values::new(),
        }
    }

    pub fn with(mut self, dimension: impl Into<String>, value: impl Into<DimValue>) -> Self {
        self.values.insert(dimension.into(), value.into());
        self
    }

    pub fn get(&self, dimension: &str) -> Option<&DimValue> {
        self.values.get(dimension)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DeltaKind {
    New,
    Mod,
    Del,
}

impl DeltaKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DeltaKind::New => "new",
            DeltaKind::Mod => "mod",
            DeltaKind::Del => "del",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "new" => Some(DeltaKind::New),
            "mod" => Some(DeltaKind::Mod),
            "del" => Some(DeltaKind::Del),
            _ => None,
        }
    }
}

/// Change to a single object.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObjectDelta {
    pub kind: DeltaKind,
    pub values: Values,
}

impl ObjectDelta {
    pub fn new_object(values: Values) -> Self {
        ObjectDelta {
            kind: DeltaKind::New,
            values,
        }
    }

    pub fn modify(values: Values) -> Self {
        ObjectDelta {
            kind: DeltaKind::Mod,
            values,
        }
    }

    pub fn delete() -> Self {
        ObjectDelta {
            kind: DeltaKind::Del,
            values: Values::new(),
        }
    }

    /// `self` followed by `next`.
    fn then(&self, next: &ObjectDelta) -> ObjectDelta {
        match (self.kind, next.kind) {
            (_, DeltaKind::New) | (_, DeltaKind::Del) => next.clone(),
            // mod of an absent object is a no-op, so the tombstone stands.
            (DeltaKind::Del, DeltaKind::Mod) => ObjectDelta::delete(),
            (kind, DeltaKind::Mod) => {
                let mut values = self.values.clone();
                values.extend(next.values.iter().map(|(k, v)| (k.clone(), v.clone())));
                ObjectDelta { kind, values }
            }
        }
    }

    /// Checks the kind invariants against the object's type.
    pub fn validate(&self, id: &ObjectId, descriptor: &TypeDescriptor) -> Result<()> {
        let malformed = |reason: String| Error::MalformedDelta {
            id: id.clone(),
            reason,
        };
        for (dim, value) in &self.values {
            if !descriptor.has_dimension(dim) {
                return Err(Error::UnknownDimension {
                    type_name: descriptor.name().to_string(),
                    dimension: dim.clone(),
                });
            }
            if !value.is_finite() {
                return Err(malformed(format!("non-finite float in `{dim}`")));
            }
        }
        match self.kind {
            DeltaKind::New if self.values.len() != descriptor.dimensions().len() => Err(
                malformed("new entries must carry every dimension".to_string()),
            ),
            DeltaKind::Del if !self.values.is_empty() => {
                Err(malformed("del entries carry no values".to_string()))
            }
            DeltaKind::Mod if self.values.is_empty() => {
                Err(malformed("mod entries must change at least one dimension".to_string()))
            }
            _ => Ok(()),
        }
    }
}

/// Keyed record of object changes.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Delta {
    entries: BTreeMap<ObjectId, ObjectDelta>,
}

impl Delta {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn get(&self, id: &ObjectId) -> Option<&ObjectDelta> {
        self.entries.get(id)
    }

    pub fn contains(&self, id: &ObjectId) -> bool {
        self.entries.contains_key(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ObjectId, &ObjectDelta)> {
        self.entries.iter()
    }

    pub fn ids(&self) -> impl Iterator<Item = &ObjectId> {
        self.entries.keys()
    }

    /// Replaces the entry for `id` outright.
    pub fn insert(&mut self, id: ObjectId, entry: ObjectDelta) {
        self.entries.insert(id, entry);
    }

    pub fn remove(&mut self, id: &ObjectId) -> Option<ObjectDelta> {
        self.entries.remove(id)
    }

    /// Records `entry` as happening after whatever is already staged for `id`.
    pub fn push(&mut self, id: ObjectId, entry: ObjectDelta) {
        let combined = match self.entries.get(&id) {
            Some(prev) => prev.then(&entry),
            None => entry,
        };
        self.entries.insert(id, combined);
    }

    pub fn create(mut self, id: ObjectId, values: Values) -> Self {
        self.push(id, ObjectDelta::new_object(values));
        self
    }

    pub fn modify(mut self, id: ObjectId, values: Values) -> Self {
        self.push(id, ObjectDelta::modify(values));
        self
    }

    pub fn delete(mut self, id: ObjectId) -> Self {
        self.push(id, ObjectDelta::delete());
        self
    }

    /// Restricts the delta to objects of one type.
    pub fn filter_type(&self, type_name: &str) -> Delta {
        Delta {
            entries: self
                .entries
                .iter()
                .filter(|(id, _)| id.type_name == type_name)
                .map(|(id, e)| (id.clone(), e.clone()))
                .collect(),
        }
    }

    /// Checks every entry against `registry`.
    pub fn validate(&self, registry: &TypeRegistry) -> Result<()> {
        for (id, entry) in &self.entries {
            let descriptor = registry.require(&id.type_name)?;
            entry.validate(id, descriptor)?;
        }
        Ok(())
    }

    /// Canonical JSON form: `{"type/key": {"kind": .., "values": {..}}}`.
    ///
    /// Returns `None` if a float value is not finite.
    pub fn to_json(&self) -> Option<Value> {
        let mut out = Map::new();
        for (id, entry) in &self.entries {
            let mut values = Map::new();
            for (dim, v) in &entry.values {
                values.insert(dim.clone(), v.to_json()?);
            }
            let mut obj = Map::new();
            obj.insert("kind".into(), Value::String(entry.kind.as_str().into()));
            obj.insert("values".into(), Value::Object(values));
            out.insert(id.to_string(), Value::Object(obj));
        }
        Some(Value::Object(out))
    }

    /// Parses the canonical JSON form and validates it against `registry`.
    pub fn from_json(value: &Value, registry: &TypeRegistry) -> Result<Delta> {
        let bad = |reason: String| Error::MalformedFrame(reason);
        let map = value
            .as_object()
            .ok_or_else(|| bad("delta must be an object".into()))?;
        let mut delta = Delta::new();
        for (key, entry) in map {
            let id = ObjectId::parse(key).ok_or_else(|| bad(format!("bad object id `{key}`")))?;
            let descriptor = registry
                .get(&id.type_name)
                .ok_or_else(|| bad(format!("unregistered type `{}`", id.type_name)))?;
            let entry = entry
                .as_object()
                .ok_or_else(|| bad(format!("entry `{key}` must be an object")))?;
            if entry.len() != 2 {
                return Err(bad(format!("entry `{key}` must have exactly kind and values")));
            }
            let kind = entry
                .get("kind")
                .and_then(Value::as_str)
                .and_then(DeltaKind::parse)
                .ok_or_else(|| bad(format!("entry `{key}` has a bad kind")))?;
            let raw = entry
                .get("values")
                .and_then(Value::as_object)
                .ok_or_else(|| bad(format!("entry `{key}` has no values object")))?;
            let mut values = Values::new();
            for (dim, v) in raw {
                let v = DimValue::from_json(v)
                    .ok_or_else(|| bad(format!("bad value for `{key}.{dim}`")))?;
                values.insert(dim.clone(), v);
            }
            let entry = ObjectDelta { kind, values };
            entry
                .validate(&id, descriptor)
                .map_err(|e| bad(e.to_string()))?;
            delta.entries.insert(id, entry);
        }
        Ok(delta)
    }
}

impl FromIterator<(ObjectId, ObjectDelta)> for Delta {
    fn from_iter<I: IntoIterator<Item = (ObjectId, ObjectDelta)>>(iter: I) -> Self {
        Delta {
            entries: iter.into_iter().collect(),
        }
    }
}

impl<'a> IntoIterator for &'a Delta {
    type Item = (&'a ObjectId, &'a ObjectDelta);
    type IntoIter = std::collections::btree_map::Iter<'a, ObjectId, ObjectDelta>;

    fn into_iter(self) -> Self::IntoIter {
        self.entries.iter()
    }
}

/// Applies `delta` to `state` in place.
pub fn apply_in_place(state: &mut State, delta: &Delta) {
    for (id, entry) in delta {
        match entry.kind {
            DeltaKind::New => {
                state.insert(id.clone(), entry.values.clone());
            }
            DeltaKind::Del => {
                state.remove(id);
            }
            DeltaKind::Mod => {
                if let Some(values) = state.get_mut(id) {
                    for (dim, v) in &entry.values {
                        values.insert(dim.clone(), v.clone());
                    }
                }
            }
        }
    }
}

pub fn apply(state: &State, delta: &Delta) -> State {
    let mut out = state.clone();
    apply_in_place(&mut out, delta);
    out
}

/// The single delta equivalent to applying `first` and then `second`.
pub fn compose(first: &Delta, second: &Delta) -> Delta {
    let mut out = first.clone();
    for (id, entry) in second {
        out.push(id.clone(), entry.clone());
    }
    out
}

/// Composes a sequence of deltas left to right.
pub fn compose_all<'a, I>(deltas: I) -> Delta
where
    I: IntoIterator<Item = &'a Delta>,
{
    let mut out = Delta::new();
    for d in deltas {
        for (id, entry) in d {
            out.push(id.clone(), entry.clone());
        }
    }
    out
}

/// Entries of `a` restricted to `(object, dimension)` keys that `b` leaves alone.
///
/// A `del` or `new` in `b` covers the whole object. A `del` in `a` cannot be
/// split, so it survives only when `b` does not touch the object. A `new` in
/// `a` that loses some of its fields becomes a `mod` of the rest.
pub fn difference(a: &Delta, b: &Delta) -> Delta {
    let mut out = Delta::new();
    for (id, entry) in a {
        let Some(other) = b.get(id) else {
            out.insert(id.clone(), entry.clone());
            continue;
        };
        if entry.kind == DeltaKind::Del || other.kind != DeltaKind::Mod {
            continue;
        }
        let rest: Values = entry
            .values
            .iter()
            .filter(|(dim, _)| !other.values.contains_key(*dim))
            .map(|(d, v)| (d.clone(), v.clone()))
            .collect();
        if !rest.is_empty() {
            out.insert(id.clone(), ObjectDelta::modify(rest));
        }
    }
    out
}

/// Key-wise union of `a` and `b`; `b` wins on every collision.
///
/// Whole-object entries (`new`, `del`) in `b` replace `a`'s entry, field
/// entries overlay it.
pub fn union(a: &Delta, b: &Delta) -> Delta {
    compose(a, b)
}

/// Smallest delta taking `from` to `to`, per object: untouched objects are
/// omitted, vanished objects are deleted, new objects carry full state and
/// changed objects carry only the differing dimensions.
pub fn diff_states(from: &State, to: &State) -> Delta {
    let mut out = Delta::new();
    for (id, old) in from {
        match to.get(id) {
            None => out.insert(id.clone(), ObjectDelta::delete()),
            Some(new) => {
                if old.keys().any(|k| !new.contains_key(k)) {
                    out.insert(id.clone(), ObjectDelta::new_object(new.clone()));
                    continue;
                }
                let changed: Values = new
                    .iter()
                    .filter(|(k, v)| old.get(*k) != Some(*v))
                    .map(|(k, v)| (k.clone(), v.clone()))
                    .collect();
                if !changed.is_empty() {
                    out.insert(id.clone(), ObjectDelta::modify(changed));
                }
            }
        }
    }
    for (id, new) in to {
        if !from.contains_key(id) {
            out.insert(id.clone(), ObjectDelta::new_object(new.clone()));
        }
    }
    out
}
