use std::fmt;
use std::str::FromStr;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

/// Opaque 128-bit version identifier. [`VersionId::ROOT`] names the empty
/// initial state shared by every graph.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VersionId(u128);

impl VersionId {
    pub const ROOT: VersionId = VersionId(0);

    pub fn from_u128(raw: u128) -> Self {
        VersionId(raw)
    }

    pub fn as_u128(self) -> u128 {
        self.0
    }

    pub fn is_root(self) -> bool {
        self == Self::ROOT
    }

    /// First eight hex digits, for logs and graph dumps.
    pub fn short(self) -> String {
        if self.is_root() {
            "ROOT".to_string()
        } else {
            format!("{:032x}", self.0)[..8].to_string()
        }
    }
}

impl fmt::Display for VersionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:032x}", self.0)
    }
}

impl fmt::Debug for VersionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "VersionId({})", self.short())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("version ids are 32 lowercase hex digits")]
pub struct ParseVersionError;

impl FromStr for VersionId {
    type Err = ParseVersionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.len() != 32 || !s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f')) {
            return Err(ParseVersionError);
        }
        u128::from_str_radix(s, 16)
            .map(VersionId)
            .map_err(|_| ParseVersionError)
    }
}

/// Source of fresh version identifiers.
///
/// Seeded generators give reproducible runs; [`VersionIdGen::from_entropy`]
/// is the normal choice for live nodes.
#[derive(Debug, Clone)]
pub struct VersionIdGen {
    rng: ChaCha20Rng,
}

impl VersionIdGen {
    pub fn from_entropy() -> Self {
        VersionIdGen {
            rng: ChaCha20Rng::from_entropy(),
        }
    }

    pub fn seeded(seed: u64) -> Self {
        VersionIdGen {
            rng: ChaCha20Rng::seed_from_u64(seed),
        }
    }

    pub fn next_id(&mut self) -> VersionId {
        loop {
            let mut bytes = [0u8; 16];
            self.rng.fill_bytes(&mut bytes);
            let raw = u128::from_be_bytes(bytes);
            if raw != 0 {
                return VersionId(raw);
            }
        }
    }
}
