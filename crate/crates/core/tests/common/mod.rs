#![allow(dead_code)]

use got_core::{
    apply, Delta, DimValue, ObjectDelta, ObjectId, State, TypeDescriptor, TypeRegistry, Values,
};
use proptest::prelude::*;

pub const DIMS: [&str; 4] = ["a", "b", "c", "d"];

pub fn descriptor() -> TypeDescriptor {
    TypeDescriptor::new("T", DIMS).unwrap()
}

pub fn registry() -> TypeRegistry {
    let mut r = TypeRegistry::new();
    r.register(descriptor()).unwrap();
    r.register(TypeDescriptor::new("U", ["p", "q"]).unwrap()).unwrap();
    r
}

pub fn oid(k: u8) -> ObjectId {
    ObjectId::new("T", k as i64)
}

/// One raw edit: (kind selector, object, dimension mask, value).
pub type RawOp = (u8, u8, u8, i8);

pub fn raw_ops(max_edges: usize) -> impl Strategy<Value = Vec<Vec<RawOp>>> {
    prop::collection::vec(
        prop::collection::vec((0u8..3, 0u8..5, 1u8..16, any::<i8>()), 1..4),
        0..=max_edges,
    )
}

fn value(v: i8, dim: usize) -> DimValue {
    match dim % 3 {
        0 => DimValue::Int(v as i64),
        1 => DimValue::Float(v as f64 / 4.0),
        _ => DimValue::Str(format!("s{v}")),
    }
}

fn full(v: i8) -> Values {
    DIMS.iter()
        .enumerate()
        .map(|(i, d)| (d.to_string(), value(v, i)))
        .collect()
}

/// Turns raw edits into one delta valid against `state`.
pub fn delta_from(state: &State, ops: &[RawOp]) -> Delta {
    let mut d = Delta::new();
    let mut cur = state.clone();
    for &(kind, obj, mask, v) in ops {
        let id = oid(obj);
        let step = if cur.contains_key(&id) {
            match kind {
                0 => ObjectDelta::delete(),
                _ => ObjectDelta::modify(
                    DIMS.iter()
                        .enumerate()
                        .filter(|(i, _)| mask & (1 << i) != 0)
                        .map(|(i, dm)| (dm.to_string(), value(v, i)))
                        .collect(),
                ),
            }
        } else {
            ObjectDelta::new_object(full(v))
        };
        let single: Delta = [(id.clone(), step)].into_iter().collect();
        cur = apply(&cur, &single);
        d.push(id, single.get(&oid(obj)).unwrap().clone());
    }
    d
}

/// A chain of deltas starting at `start`, with the state after each.
pub fn chain(start: &State, raw: &[Vec<RawOp>]) -> (Vec<Delta>, State) {
    let mut state = start.clone();
    let mut out = Vec::new();
    for ops in raw {
        let d = delta_from(&state, ops);
        state = apply(&state, &d);
        out.push(d);
    }
    (out, state)
}
