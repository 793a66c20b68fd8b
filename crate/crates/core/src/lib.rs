//! Replicated object heaps. Each node keeps a versioned copy of the shared
//! objects and exchanges deltas with its peers through per-type version
//! graphs.

pub mod config;
pub mod dataframe;
pub mod error;
pub mod graph;
pub mod merge;
pub mod object;
pub mod snapshot;
pub mod transport;
pub mod version;
pub mod wire;

pub use config::NodeConfig;
pub use dataframe::{
    CheckoutReport, CommitInfo, Dataframe, DataframeConfig, FetchReport, PushReport, RemoteHandle,
    Repository, ServeStats,
};
pub use error::{Error, Result};
pub use graph::{Edge, GcReport, Holder, PutOutcome, VersionGraph};
pub use merge::{default_resolver, ConflictEntry, DefaultResolver, MergeResult, Resolver, Strategy};
pub use object::{
    apply, compose, diff_states, difference, union, Delta, DeltaKind, DimValue, ObjectDelta,
    ObjectId, ObjectKey, ObjectState, State, TypeDescriptor, TypeRegistry, Values,
};
pub use snapshot::Snapshot;
pub use transport::{serve, InProcessNetwork, ServerHandle, TcpTransport, Transport};
pub use version::{VersionId, VersionIdGen};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/objects.md")]
    mod objects {}
    #[doc = include_str!("../../../book/src/versions.md")]
    mod versions {}
    #[doc = include_str!("../../../book/src/merging.md")]
    mod merging {}
    #[doc = include_str!("../../../book/src/dataframes.md")]
    mod dataframes {}
    #[doc = include_str!("../../../book/src/wire.md")]
    mod wire {}
    #[doc = include_str!("../../../book/src/serving.md")]
    mod serving {}
    #[doc = include_str!("../../../book/src/simulator.md")]
    mod simulator {}
}
