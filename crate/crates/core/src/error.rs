use crate::object::ObjectId;
use crate::version::VersionId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("type `{0}` is already registered")]
    DuplicateType(String),
    #[error("type `{0}` is not registered")]
    UnknownType(String),
    #[error("invalid type descriptor for `{name}`: {reason}")]
    InvalidDescriptor { name: String, reason: String },
    #[error("type `{type_name}` has no dimension `{dimension}`")]
    UnknownDimension { type_name: String, dimension: String },
    #[error("object {0} already exists")]
    DuplicateObject(ObjectId),
    #[error("object {0} does not exist")]
    UnknownObject(ObjectId),
    #[error("invalid value: {0}")]
    InvalidValue(String),
    #[error("malformed delta entry for {id}: {reason}")]
    MalformedDelta { id: ObjectId, reason: String },

    #[error("version {0} is not present in the graph")]
    UnknownVersion(VersionId),
    #[error("edges do not form a chain from {from} to {to}")]
    BrokenChain { from: VersionId, to: VersionId },
    #[error("checkout edges start at {found}, snapshot is at {expected}")]
    VersionMismatch { expected: VersionId, found: VersionId },
    #[error("conflict resolver failed: {0}")]
    ResolverFault(String),

    #[error("remote `{0}` is not registered")]
    UnknownRemote(String),
    #[error("push to `{remote}` rejected for type `{type_name}`: unknown start version {version}")]
    PushRejected { remote: String, type_name: String, version: VersionId },
    #[error("fetch from `{remote}` rejected for type `{type_name}`: unknown start version {version}")]
    FetchRejected { remote: String, type_name: String, version: VersionId },
    #[error("subscriptions are fixed once synchronization has started")]
    SubscriptionLocked,
    #[error("type `{0}` is not subscribed on this dataframe")]
    NotSubscribed(String),

    #[error("malformed frame: {0}")]
    MalformedFrame(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("configuration error: {0}")]
    Config(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Transport(err.to_string())
    }
}
