//! The single-node commons: configuration, in-memory tables, and the
//! write-ahead commit path.
//!
//! All state lives in [`State`], rebuilt at startup by replaying the change
//! log. Every mutation validates against a consistent snapshot, appends its
//! ops to the log, then applies them, so readers only ever see committed
//! records and a restart loses nothing.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, MutexGuard, RwLock};

use serde::{Deserialize, Serialize};

use crate::accessctl::{check, Acl, GroupDirectory, PrincipalId, Right};
use crate::changelog::{ChangeLog, ChangeOp};
use crate::error::{CommonsError, Result};
use crate::idmodel::{Attributes, DigitalIdRecord, HashRecord, Release};
use crate::metastore::{MetadataDocument, MetadataSchema};
use crate::metering::{Meter, UsageEvent, UsageKind, DEFAULT_CORE_HOUR_PRICE};
use crate::objectstore::ObjectStore;
use crate::peering::PeerAgreement;

fn default_core_hour_price() -> f64 {
    DEFAULT_CORE_HOUR_PRICE
}

fn default_egress_byte_price() -> f64 {
    // $0.09 per GB, a common commercial egress rate.
    0.09 / 1_000_000_000.0
}

fn default_compute_target() -> f64 {
    crate::metering::DEFAULT_COMPUTE_TARGET
}

fn default_storage_target() -> f64 {
    crate::metering::DEFAULT_STORAGE_TARGET
}

/// Static configuration for one commons instance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CommonsConfig {
    /// Owning namespace stamped on minted records, e.g. "noaa-commons".
    pub authority: String,
    /// Externally reachable base url of this commons, used to rewrite
    /// `local://` locators when serving the peer feed.
    #[serde(default)]
    pub public_base: Option<String>,
    /// Users allowed to register metadata schemas.
    #[serde(default)]
    pub admins: Vec<String>,
    #[serde(default)]
    pub groups: GroupDirectory,
    #[serde(default)]
    pub peers: Vec<PeerAgreement>,
    #[serde(default = "default_core_hour_price")]
    pub core_hour_price: f64,
    #[serde(default = "default_egress_byte_price")]
    pub egress_byte_price: f64,
    #[serde(default = "default_compute_target")]
    pub compute_target: f64,
    #[serde(default = "default_storage_target")]
    pub storage_target: f64,
}

impl CommonsConfig {
    pub fn new(authority: impl Into<String>) -> CommonsConfig {
        CommonsConfig {
            authority: authority.into(),
            public_base: None,
            admins: Vec::new(),
            groups: GroupDirectory::default(),
            peers: Vec::new(),
            core_hour_price: default_core_hour_price(),
            egress_byte_price: default_egress_byte_price(),
            compute_target: default_compute_target(),
            storage_target: default_storage_target(),
        }
    }

    pub fn peer(&self, name: &str) -> Option<&PeerAgreement> {
        self.peers.iter().find(|p| p.peer_name == name)
    }

    pub fn is_admin(&self, actor: &PrincipalId) -> bool {
        matches!(actor, PrincipalId::User(u) if self.admins.iter().any(|a| a == u))
    }
}

/// ACL table key for a digital ID.
pub(crate) fn alias_acl_key(alias: &str) -> String {
    format!("alias:{alias}")
}

/// The committed tables. Mutated only through [`State::apply`].
#[derive(Debug, Default)]
pub struct State {
    pub aliases: BTreeMap<String, DigitalIdRecord>,
    pub hashes: BTreeMap<(String, u64), HashRecord>,
    pub attrs: BTreeMap<String, Attributes>,
    pub acls: BTreeMap<String, Acl>,
    pub docs: BTreeMap<String, MetadataDocument>,
    /// (subject raw, type_name or "") -> doc_id
    pub doc_index: BTreeMap<(String, String), String>,
    pub schemas: BTreeMap<String, MetadataSchema>,
    pub cursors: BTreeMap<String, u64>,
}

impl State {
    pub fn apply(&mut self, op: &ChangeOp) {
        match op {
            ChangeOp::AliasPut { record } => {
                self.aliases
                    .insert(record.name.raw().to_string(), record.clone());
            }
            ChangeOp::AliasDelete { alias } => {
                self.aliases.remove(alias);
                self.attrs.remove(alias);
                self.acls.remove(&alias_acl_key(alias));
            }
            ChangeOp::HashPut { record } => {
                self.hashes
                    .insert((record.hashes.md5().to_string(), record.size), record.clone());
            }
            ChangeOp::AttrPut { alias, attributes } => {
                self.attrs.insert(alias.clone(), attributes.clone());
            }
            ChangeOp::AclPut { target, acl } => {
                self.acls.insert(target.clone(), acl.clone());
            }
            ChangeOp::DocPut { document } => {
                let type_key = document.type_name.clone().unwrap_or_default();
                self.doc_index.insert(
                    (document.subject.raw().to_string(), type_key),
                    document.doc_id.clone(),
                );
                self.docs.insert(document.doc_id.clone(), document.clone());
            }
            ChangeOp::SchemaPut { schema } => {
                self.schemas.insert(schema.type_name.clone(), schema.clone());
            }
            ChangeOp::CursorSet { peer, cursor } => {
                self.cursors.insert(peer.clone(), *cursor);
            }
        }
    }

    pub fn record_acl(&self, alias: &str) -> Acl {
        self.acls.get(&alias_acl_key(alias)).cloned().unwrap_or_default()
    }
}

/// One data commons instance.
pub struct Commons {
    pub(crate) config: CommonsConfig,
    pub(crate) data_dir: PathBuf,
    pub(crate) state: RwLock<State>,
    pub(crate) log: Mutex<ChangeLog>,
    pub(crate) objects: ObjectStore,
    pub(crate) meter: Mutex<Meter>,
}

impl Commons {
    /// Open (or create) a commons rooted at `data_dir`, replaying any
    /// existing change log.
    pub fn open(data_dir: impl Into<PathBuf>, config: CommonsConfig) -> Result<Commons> {
        let data_dir = data_dir.into();
        std::fs::create_dir_all(&data_dir)?;
        let log = ChangeLog::open(&data_dir.join("changes.ndjson"))?;
        let mut state = State::default();
        for entry in log.entries() {
            state.apply(&entry.op);
        }
        let objects = ObjectStore::open(data_dir.join("objects"))?;
        objects.create_bucket("data")?;
        let no_cost: BTreeSet<String> = config
            .peers
            .iter()
            .filter(|p| p.no_cost)
            .map(|p| p.peer_name.clone())
            .collect();
        let meter = Meter::open(&data_dir.join("usage.ndjson"), no_cost)?;
        Ok(Commons {
            config,
            data_dir,
            state: RwLock::new(state),
            log: Mutex::new(log),
            objects,
            meter: Mutex::new(meter),
        })
    }

    pub fn config(&self) -> &CommonsConfig {
        &self.config
    }

    pub fn data_dir(&self) -> &Path {
        &self.data_dir
    }

    pub fn objects(&self) -> &ObjectStore {
        &self.objects
    }

    pub fn meter(&self) -> MutexGuard<'_, Meter> {
        self.meter.lock().expect("meter lock")
    }

    /// Run a read-only closure against a committed snapshot.
    pub fn read<T>(&self, f: impl FnOnce(&State) -> T) -> T {
        let state = self.state.read().expect("state lock");
        f(&state)
    }

    /// The serialized mutation path: `f` validates against the current state
    /// and returns the ops to commit. Ops are logged (durably) and then
    /// applied. The log mutex serializes all writers, so `f` sees a stable
    /// snapshot.
    pub(crate) fn commit<T>(
        &self,
        f: impl FnOnce(&State) -> Result<(Vec<ChangeOp>, T)>,
    ) -> Result<T> {
        let mut log = self.log.lock().expect("log lock");
        let (ops, out) = {
            let state = self.state.read().expect("state lock");
            f(&state)?
        };
        for op in &ops {
            log.append(op.clone())?;
        }
        let mut state = self.state.write().expect("state lock");
        for op in &ops {
            state.apply(op);
        }
        Ok(out)
    }

    /// Authorization check for a digital ID.
    pub fn check_record_access(
        &self,
        state: &State,
        alias: &str,
        actor: &PrincipalId,
        right: Right,
    ) -> Result<()> {
        let record = state
            .aliases
            .get(alias)
            .ok_or_else(|| CommonsError::NotFound(alias.to_string()))?;
        self.check_access(&state.record_acl(alias), record.release, actor, right)
            .map_err(|_| CommonsError::AccessDenied(format!("{actor} lacks {right:?} on {alias}")))
    }

    pub fn check_access(
        &self,
        acl: &Acl,
        release: Release,
        actor: &PrincipalId,
        right: Right,
    ) -> Result<()> {
        if check(acl, release, &self.config.groups, actor, right) {
            Ok(())
        } else {
            Err(CommonsError::AccessDenied(format!("{actor} lacks {right:?}")))
        }
    }

    /// Record a transfer against the meter. Transfers under a no-cost peer
    /// agreement still produce events, priced at zero by the meter.
    pub fn emit_transfer_event(
        &self,
        actor: &PrincipalId,
        bytes: u64,
        peer_tag: Option<String>,
    ) -> Result<()> {
        self.meter().record_usage(UsageEvent {
            actor: actor.clone(),
            kind: UsageKind::EgressBytes,
            quantity: bytes as f64,
            unit_price: self.config.egress_byte_price,
            timestamp: chrono::Utc::now(),
            peer_tag,
        })?;
        Ok(())
    }
}

// Re-exported views used by servers and tests.
impl Commons {
    pub fn alias_record(&self, alias: &str) -> Option<DigitalIdRecord> {
        self.read(|s| s.aliases.get(alias).cloned())
    }

    pub fn alias_count(&self) -> usize {
        self.read(|s| s.aliases.len())
    }

    pub fn hash_record(&self, md5: &str, size: u64) -> Option<HashRecord> {
        self.read(|s| s.hashes.get(&(md5.to_string(), size)).cloned())
    }

    pub fn acl_of(&self, alias: &str) -> Acl {
        self.read(|s| s.record_acl(alias))
    }

    pub fn document(&self, doc_id: &str) -> Option<MetadataDocument> {
        self.read(|s| s.docs.get(doc_id).cloned())
    }

    pub fn schema(&self, type_name: &str) -> Option<MetadataSchema> {
        self.read(|s| s.schemas.get(type_name).cloned())
    }

    pub fn peer_cursor(&self, peer: &str) -> u64 {
        self.read(|s| s.cursors.get(peer).copied().unwrap_or(0))
    }

    pub fn attributes(&self, alias: &str) -> Attributes {
        self.read(|s| s.attrs.get(alias).cloned().unwrap_or_default())
    }
}
