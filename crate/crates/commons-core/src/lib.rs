//! Data-commons kernel: persistent two-layer digital identifiers, schema-
//! validated metadata, per-ID access control, verified content storage,
//! inter-commons peering and portability, and usage metering.

pub mod accessctl;
pub mod changelog;
pub mod commons;
pub mod error;
pub mod idmodel;
pub mod index;
pub mod metastore;
pub mod metering;
pub mod objectstore;
pub mod peering;

pub use accessctl::{check, Acl, AclEntry, GroupDirectory, PrincipalId, Right, Rights};
pub use changelog::{ChangeBatch, ChangeEntry, ChangeOp};
pub use commons::{Commons, CommonsConfig, State};
pub use error::{CommonsError, Result};
pub use idmodel::{
    canonical_json, compute_rev, digest_bytes, digest_stream, parse_alias, AliasId, Attributes,
    DigestAlgorithm, DigestSet, DigitalIdRecord, HashRecord, Release, Scheme,
};
pub use index::RecordPatch;
pub use metastore::{
    FieldSpec, FieldType, MetadataDocument, MetadataSchema, Predicate,
};
pub use metering::{
    capacity_report, Allocation, CapacityReport, Invoice, InvoiceLine, Meter, Period,
    RecordOutcome, UsageEvent, UsageKind, DEFAULT_CORE_HOUR_PRICE,
};
pub use objectstore::{local_locator, parse_local_locator, verify_bytes, ObjectStore, StoredObject};
pub use peering::{
    BundleEntry, BundleManifest, HttpPeer, ImportReport, InProcessPeer, MigrationStatus,
    MigrationTarget, PeerAgreement, PeerSource, SyncReport,
};
