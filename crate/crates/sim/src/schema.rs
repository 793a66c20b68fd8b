//! The Space Race data model and the physics node's merge policy.

use got_core::{ConflictEntry, Delta, DimValue, ObjectDelta, State, TypeDescriptor, TypeRegistry};

pub const PLAYER: &str = "Player";
pub const SHIP: &str = "Ship";
pub const ASTEROID: &str = "Asteroid";

pub const MAX_SPEED: f64 = 150.0;

pub fn space_race() -> TypeRegistry {
    let mut reg = TypeRegistry::new();
    reg.register(
        TypeDescriptor::new(PLAYER, ["player_id", "ready", "winner"])
            .expect("valid"),
    )
    .expect("fresh registry");
    reg.register(
        TypeDescriptor::new(SHIP, ["player_id", "x", "y", "trips", "velocity", "state"])
            .expect("valid"),
    )
    .expect("fresh registry");
    reg.register(
        TypeDescriptor::new(ASTEROID, ["x", "y", "velocity"])
            .expect("valid"),
    )
    .expect("fresh registry");
    reg
}

/// Ships take the incoming velocity when it is within [`MAX_SPEED`] and keep
/// everything else from the local side; every other type keeps the local
/// side.
pub fn physics_policy(
    conflicts: &[ConflictEntry],
    _original: &State,
    _mine: &State,
    _theirs: &State,
) -> Result<Delta, String> {
    let mut res = Delta::new();
    for c in conflicts {
        let (Some(mine), Some(theirs)) = (&c.mine, &c.theirs) else {
            match (&c.mine, &c.theirs) {
                (Some(mine), None) => res.insert(c.id.clone(), ObjectDelta::new_object(mine.clone())),
                (None, Some(_)) => res.insert(c.id.clone(), ObjectDelta::delete()),
                _ => {}
            }
            continue;
        };
        let mut keep = mine.clone();
        if c.id.type_name == SHIP {
            let v = theirs.get("velocity").and_then(DimValue::as_f64);
            if let Some(v) = v.filter(|v| v.abs() <= MAX_SPEED) {
                keep.insert("velocity".into(), DimValue::Float(v));
            }
        }
        let changed: got_core::Values = keep
            .into_iter()
            .filter(|(k, v)| theirs.get(k) != Some(v))
            .collect();
        if !changed.is_empty() {
            res.insert(c.id.clone(), ObjectDelta::modify(changed));
        }
    }
    Ok(res)
}
