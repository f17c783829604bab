use thiserror::Error;

/// Error type shared by every service module.
#[derive(Debug, Error)]
pub enum CommonsError {
    #[error("malformed alias: {0}")]
    MalformedAlias(String),
    #[error("unsupported digest algorithm: {0}")]
    UnsupportedAlgorithm(String),
    #[error("malformed digest set: {0}")]
    MalformedDigest(String),
    #[error("alias already exists: {0}")]
    AliasExists(String),
    #[error("hash conflict for md5:{md5} size {size}: {detail}")]
    HashConflict {
        md5: String,
        size: u64,
        detail: String,
    },
    #[error("not found: {0}")]
    NotFound(String),
    #[error("access denied: {0}")]
    AccessDenied(String),
    #[error("digest mismatch ({algorithm}): expected {expected}, observed {observed}")]
    HashMismatch {
        algorithm: String,
        expected: String,
        observed: String,
    },
    #[error("schema already registered: {0}")]
    SchemaExists(String),
    #[error("malformed schema: {0}")]
    MalformedSchema(String),
    #[error("validation failed at: {}", paths.join(", "))]
    ValidationFailed { paths: Vec<String> },
    #[error("unknown subject: {0}")]
    UnknownSubject(String),
    #[error("malformed predicate: {0}")]
    MalformedPredicate(String),
    #[error("malformed query: {0}")]
    MalformedQuery(String),
    #[error("bucket does not exist: {0}")]
    BucketMissing(String),
    #[error("allocation exceeded for {actor} ({kind}): cap {cap}, would reach {attempted}")]
    AllocationExceeded {
        actor: String,
        kind: String,
        cap: f64,
        attempted: f64,
    },
    #[error("bundle corrupt: {0}")]
    BundleCorrupt(String),
    #[error("peer unreachable: {0}")]
    PeerUnreachable(String),
    #[error("feed gap: cursor {cursor} is older than peer retention ({oldest})")]
    FeedGap { cursor: u64, oldest: u64 },
    #[error("unknown peer: {0}")]
    UnknownPeer(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CommonsError>;

impl CommonsError {
    /// Stable machine-readable code, used on the wire and for exit-code
    /// classification in clients.
    pub fn code(&self) -> &'static str {
        match self {
            CommonsError::MalformedAlias(_) => "malformed_alias",
            CommonsError::UnsupportedAlgorithm(_) => "unsupported_algorithm",
            CommonsError::MalformedDigest(_) => "malformed_digest",
            CommonsError::AliasExists(_) => "alias_exists",
            CommonsError::HashConflict { .. } => "hash_conflict",
            CommonsError::NotFound(_) => "not_found",
            CommonsError::AccessDenied(_) => "access_denied",
            CommonsError::HashMismatch { .. } => "hash_mismatch",
            CommonsError::SchemaExists(_) => "schema_exists",
            CommonsError::MalformedSchema(_) => "malformed_schema",
            CommonsError::ValidationFailed { .. } => "validation_failed",
            CommonsError::UnknownSubject(_) => "unknown_subject",
            CommonsError::MalformedPredicate(_) => "malformed_predicate",
            CommonsError::MalformedQuery(_) => "malformed_query",
            CommonsError::BucketMissing(_) => "bucket_missing",
            CommonsError::AllocationExceeded { .. } => "allocation_exceeded",
            CommonsError::BundleCorrupt(_) => "bundle_corrupt",
            CommonsError::PeerUnreachable(_) => "peer_unreachable",
            CommonsError::FeedGap { .. } => "feed_gap",
            CommonsError::UnknownPeer(_) => "unknown_peer",
            CommonsError::Io(_) => "io_error",
            CommonsError::Serde(_) => "serde_error",
        }
    }
}
