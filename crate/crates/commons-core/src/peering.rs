//! Inter-commons portability and peering.
//!
//! Portability bundles move records, metadata, and payload objects between
//! commons with identifiers preserved. Peering is a directional pull over an
//! append-only change feed with a monotonic cursor; transfers under a
//! no-cost agreement are metered at zero.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::accessctl::{Acl, PrincipalId};
use crate::changelog::{ChangeBatch, ChangeOp};
use crate::commons::{alias_acl_key, Commons};
use crate::error::{CommonsError, Result};
use crate::idmodel::{
    canonical_json, compute_rev, digest_bytes, Attributes, DigitalIdRecord, HashRecord,
};
use crate::metastore::MetadataDocument;
use crate::objectstore::verify_bytes;

/// A standing agreement with another commons. `no_cost` marks a data-peering
/// relationship: transfers to or from this peer are metered at zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeerAgreement {
    pub peer_name: String,
    pub endpoint: String,
    #[serde(default)]
    pub no_cost: bool,
}

/// One alias worth of manifest: the record verbatim plus its attributes and
/// metadata documents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleEntry {
    pub record: DigitalIdRecord,
    #[serde(default)]
    pub attributes: Attributes,
    #[serde(default)]
    pub documents: Vec<MetadataDocument>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub entries: Vec<BundleEntry>,
}

/// Outcome of importing a bundle.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ImportReport {
    pub created: Vec<String>,
    pub merged: Vec<String>,
    /// (alias, reason) pairs for entries that could not be applied.
    pub skipped: Vec<(String, String)>,
}

/// Summary returned by [`Commons::sync_from_peer`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyncReport {
    pub applied: u64,
    pub cursor: u64,
}

/// A peer's change feed and object fetch surface. Implemented over HTTP for
/// real deployments and in-process for tests.
pub trait PeerSource {
    fn peer_name(&self) -> &str;
    fn changes(&self, since: u64) -> Result<ChangeBatch>;
    fn fetch_object(&self, md5: &str, size: u64) -> Result<Vec<u8>>;
}

/// A migration destination that accepts verified object pushes.
pub trait MigrationTarget {
    fn peer_name(&self) -> &str;
    /// Store the bytes, verify them against the record's identity, and
    /// return a locator valid at the target.
    fn store_object(&self, record: &HashRecord, bytes: &[u8]) -> Result<String>;
}

/// Per-alias staged-migration outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum MigrationStatus {
    /// No local locators to move.
    AlreadyMigrated,
    Completed { target_locator: String },
    /// Stopped cleanly by the step budget; re-running resumes.
    Stopped { after_step: u32 },
    Failed { reason: String },
}

fn object_file_name(md5: &str, size: u64) -> String {
    format!("{md5}-{size}")
}

impl Commons {
    /// Serve a page of this commons's change feed. `local://` locations are
    /// rewritten to this commons's public object endpoint so peers can fetch
    /// them.
    pub fn changes_feed(&self, since: u64, limit: usize) -> Result<ChangeBatch> {
        let mut batch = {
            let log = self.log.lock().expect("log lock");
            log.since(since, limit)?
        };
        if let Some(base) = &self.config.public_base {
            let base = base.trim_end_matches('/');
            for entry in &mut batch.entries {
                match &mut entry.op {
                    ChangeOp::AliasPut { record } => {
                        let (md5, size) = record.hash_key();
                        rewrite_local_urls(&mut record.urls, base, &md5, size);
                    }
                    ChangeOp::HashPut { record } => {
                        let md5 = record.hashes.md5().to_string();
                        let size = record.size;
                        rewrite_local_urls(&mut record.urls, base, &md5, size);
                    }
                    _ => {}
                }
            }
        }
        Ok(batch)
    }

    /// Serve verified object bytes for `GET /peer/object`.
    pub fn peer_object(&self, md5: &str, size: u64) -> Result<Vec<u8>> {
        let record = self
            .hash_record(md5, size)
            .ok_or_else(|| CommonsError::NotFound(format!("md5:{md5} size {size}")))?;
        // A record can carry stale local locators (for example, copied in
        // verbatim by a peer sync); serve from the first one that verifies.
        let mut last_err = CommonsError::NotFound(format!("no local copy of md5:{md5}"));
        for locator in record.urls.iter().filter(|u| u.starts_with("local://")) {
            match self.objects.get_verified(locator, &record.hashes, record.size) {
                Ok(bytes) => return Ok(bytes),
                Err(e) => last_err = e,
            }
        }
        Err(last_err)
    }

    /// Accept a pushed object during staged migration: verify, store, and
    /// register a hash-layer entry. Returns a locator usable from outside
    /// when a public base is configured.
    pub fn receive_object(&self, expected: &HashRecord, bytes: &[u8]) -> Result<String> {
        verify_bytes(bytes, &expected.hashes, expected.size)?;
        let key = object_file_name(expected.hashes.md5(), expected.size);
        let stored = self.objects.put("data", &key, bytes)?;
        self.commit(|state| {
            let mut record = match state
                .hashes
                .get(&(expected.hashes.md5().to_string(), expected.size))
            {
                Some(existing) => existing.clone(),
                None => HashRecord {
                    hashes: expected.hashes.clone(),
                    size: expected.size,
                    urls: Vec::new(),
                },
            };
            if !record.urls.contains(&stored.locator) {
                record.urls.push(stored.locator.clone());
            }
            Ok((vec![ChangeOp::HashPut { record }], ()))
        })?;
        Ok(self.externalize_locator(&stored.locator, expected.hashes.md5(), expected.size))
    }

    /// Rewrite a `local://` locator to this commons's public object url when
    /// a public base is configured.
    pub fn externalize_locator(&self, locator: &str, md5: &str, size: u64) -> String {
        match (&self.config.public_base, locator.starts_with("local://")) {
            (Some(base), true) => public_object_url(base.trim_end_matches('/'), md5, size),
            _ => locator.to_string(),
        }
    }

    /// Pack records, attributes, metadata, and (optionally) payload objects
    /// into a bundle directory.
    pub fn export_bundle(
        &self,
        aliases: &[String],
        include_payload: bool,
        out_dir: &Path,
        actor: &PrincipalId,
    ) -> Result<BundleManifest> {
        let mut entries = Vec::new();
        let mut payload: BTreeMap<String, Vec<u8>> = BTreeMap::new();
        for alias in aliases {
            let record = self.resolve_alias(alias, actor)?;
            let attributes = self.attributes(alias);
            let documents = self.read(|state| {
                state
                    .docs
                    .values()
                    .filter(|d| d.subject.raw() == alias)
                    .cloned()
                    .collect::<Vec<_>>()
            });
            if include_payload {
                let (md5, size) = record.hash_key();
                let file = object_file_name(&md5, size);
                if !payload.contains_key(&file) {
                    let local = record.urls.iter().find(|u| u.starts_with("local://"));
                    if let Some(locator) = local {
                        // Verified before packing; a corrupt object aborts
                        // the export.
                        let bytes =
                            self.objects.get_verified(locator, &record.hashes, record.size)?;
                        payload.insert(file, bytes);
                    }
                }
            }
            entries.push(BundleEntry {
                record,
                attributes,
                documents,
            });
        }
        let manifest = BundleManifest { entries };
        let manifest_bytes = canonical_json(&manifest)?;

        fs::create_dir_all(out_dir.join("objects"))?;
        fs::write(out_dir.join("manifest.json"), manifest_bytes.as_bytes())?;
        let (digest, _) = digest_bytes(manifest_bytes.as_bytes());
        fs::write(
            out_dir.join("bundle.digest"),
            serde_json::to_string(&digest)?,
        )?;
        for (file, bytes) in payload {
            fs::write(out_dir.join("objects").join(file), bytes)?;
        }
        Ok(manifest)
    }

    /// Import a bundle directory. Aliases are created with identical raw
    /// strings; payload objects are stored locally and urls rewritten to the
    /// local locator while hashes/size stay untouched. Identical existing
    /// records are merged (urls unioned); conflicting ones are skipped.
    pub fn import_bundle(
        &self,
        bundle_dir: &Path,
        local_bucket: &str,
        actor: &PrincipalId,
    ) -> Result<ImportReport> {
        let manifest_bytes = fs::read(bundle_dir.join("manifest.json"))
            .map_err(|e| CommonsError::BundleCorrupt(format!("manifest.json: {e}")))?;
        let digest_text = fs::read_to_string(bundle_dir.join("bundle.digest"))
            .map_err(|e| CommonsError::BundleCorrupt(format!("bundle.digest: {e}")))?;
        let expected: crate::idmodel::DigestSet = serde_json::from_str(&digest_text)
            .map_err(|e| CommonsError::BundleCorrupt(format!("bundle.digest: {e}")))?;
        verify_bytes(&manifest_bytes, &expected, manifest_bytes.len() as u64)
            .map_err(|e| CommonsError::BundleCorrupt(e.to_string()))?;
        let manifest: BundleManifest = serde_json::from_slice(&manifest_bytes)
            .map_err(|e| CommonsError::BundleCorrupt(format!("manifest.json: {e}")))?;

        self.objects.create_bucket(local_bucket)?;
        let mut report = ImportReport::default();
        for entry in manifest.entries {
            let alias = entry.record.name.raw().to_string();
            match self.import_entry(&entry, bundle_dir, local_bucket, actor) {
                Ok(true) => report.created.push(alias),
                Ok(false) => report.merged.push(alias),
                Err(err) => report.skipped.push((alias, err.to_string())),
            }
        }
        Ok(report)
    }

    /// Returns Ok(true) if created, Ok(false) if merged with an identical
    /// existing record.
    fn import_entry(
        &self,
        entry: &BundleEntry,
        bundle_dir: &Path,
        local_bucket: &str,
        actor: &PrincipalId,
    ) -> Result<bool> {
        let (md5, size) = entry.record.hash_key();
        let payload_path = bundle_dir.join("objects").join(object_file_name(&md5, size));
        let urls = if payload_path.is_file() {
            let bytes = fs::read(&payload_path)?;
            verify_bytes(&bytes, &entry.record.hashes, entry.record.size)?;
            let key = object_file_name(&md5, size);
            let stored = self.objects.put(local_bucket, &key, bytes.as_slice())?;
            vec![stored.locator]
        } else {
            entry.record.urls.clone()
        };

        self.commit(|state| {
            let mut record = entry.record.clone();
            record.urls = urls.clone();
            record.rev = compute_rev(&record)?;

            let created = match state.aliases.get(record.name.raw()) {
                Some(existing) => {
                    if existing.hash_key() != (md5.clone(), size) {
                        return Err(CommonsError::HashConflict {
                            md5,
                            size,
                            detail: format!(
                                "alias {} already bound to different content",
                                record.name.raw()
                            ),
                        });
                    }
                    // Same identity: merge urls, keep everything else local.
                    record = existing.clone();
                    for url in &urls {
                        if !record.urls.contains(url) {
                            record.urls.push(url.clone());
                        }
                    }
                    record.rev = compute_rev(&record)?;
                    false
                }
                None => true,
            };

            let hash_record = match state.hashes.get(&(md5.clone(), size)) {
                Some(existing) => {
                    if let Some(alg) = existing.hashes.conflicts_with(&entry.record.hashes) {
                        return Err(CommonsError::HashConflict {
                            md5,
                            size,
                            detail: format!("conflicting {alg} digest"),
                        });
                    }
                    let mut merged = existing.clone();
                    merged.hashes = existing.hashes.merged_with(&entry.record.hashes);
                    for url in &urls {
                        if !merged.urls.contains(url) {
                            merged.urls.push(url.clone());
                        }
                    }
                    merged
                }
                None => HashRecord {
                    hashes: entry.record.hashes.clone(),
                    size,
                    urls: urls.clone(),
                },
            };

            let mut ops = vec![
                ChangeOp::HashPut {
                    record: hash_record,
                },
                ChangeOp::AliasPut {
                    record: record.clone(),
                },
            ];
            if created {
                ops.push(ChangeOp::AclPut {
                    target: alias_acl_key(record.name.raw()),
                    acl: Acl::owned_by(actor),
                });
                if !entry.attributes.pairs.is_empty() {
                    ops.push(ChangeOp::AttrPut {
                        alias: record.name.raw().to_string(),
                        attributes: entry.attributes.clone(),
                    });
                }
                for document in &entry.documents {
                    ops.push(ChangeOp::DocPut {
                        document: document.clone(),
                    });
                }
            }
            Ok((ops, created))
        })
    }

    /// Pull and apply a peer's change feed. Record-level last-writer-wins in
    /// feed order; entries identical to local state count as no-ops. The
    /// cursor advances durably, so re-running applies nothing.
    pub fn sync_from_peer(
        &self,
        peer: &dyn PeerSource,
        since: Option<u64>,
        actor: &PrincipalId,
    ) -> Result<SyncReport> {
        if self.config.peer(peer.peer_name()).is_none() {
            return Err(CommonsError::UnknownPeer(peer.peer_name().to_string()));
        }
        let mut cursor = since.unwrap_or_else(|| self.peer_cursor(peer.peer_name()));
        let mut applied: u64 = 0;
        loop {
            let batch = peer.changes(cursor)?;
            if batch.entries.is_empty() {
                break;
            }
            for entry in &batch.entries {
                if self.apply_peer_op(&entry.op)? {
                    applied += 1;
                    if let ChangeOp::AliasPut { record } = &entry.op {
                        self.emit_transfer_event(
                            actor,
                            record.size,
                            Some(peer.peer_name().to_string()),
                        )?;
                    }
                }
            }
            cursor = batch.next_cursor;
        }
        let peer_name = peer.peer_name().to_string();
        self.commit(|_state| {
            Ok((
                vec![ChangeOp::CursorSet {
                    peer: peer_name,
                    cursor,
                }],
                (),
            ))
        })?;
        Ok(SyncReport { applied, cursor })
    }

    /// Apply one feed op, returning whether it changed local state.
    fn apply_peer_op(&self, op: &ChangeOp) -> Result<bool> {
        let op = op.clone();
        self.commit(move |state| {
            let changed = match &op {
                ChangeOp::AliasPut { record } => {
                    state.aliases.get(record.name.raw()) != Some(record)
                }
                ChangeOp::AliasDelete { alias } => state.aliases.contains_key(alias),
                ChangeOp::HashPut { record } => {
                    state.hashes.get(&(record.hashes.md5().to_string(), record.size))
                        != Some(record)
                }
                ChangeOp::AttrPut { alias, attributes } => {
                    state.attrs.get(alias) != Some(attributes)
                }
                ChangeOp::AclPut { target, acl } => state.acls.get(target) != Some(acl),
                ChangeOp::DocPut { document } => {
                    state.docs.get(&document.doc_id) != Some(document)
                }
                ChangeOp::SchemaPut { schema } => {
                    state.schemas.get(&schema.type_name) != Some(schema)
                }
                // Peer-internal bookkeeping does not replicate.
                ChangeOp::CursorSet { .. } => false,
            };
            if changed {
                Ok((vec![op.clone()], true))
            } else {
                Ok((vec![], false))
            }
        })
    }

    /// Move aliases' content to a peer in observable steps: transfer and
    /// verify at the target, append the target locator, then drop the source
    /// locator. At every intermediate point the alias resolves to at least
    /// one valid locator. `step_budget` stops the batch cleanly after that
    /// many steps; re-running resumes where it left off.
    pub fn staged_migration(
        &self,
        aliases: &[String],
        target: &dyn MigrationTarget,
        actor: &PrincipalId,
        mut step_budget: Option<u32>,
    ) -> Vec<(String, MigrationStatus)> {
        let mut out = Vec::new();
        for alias in aliases {
            if step_budget == Some(0) {
                out.push((alias.clone(), MigrationStatus::Stopped { after_step: 0 }));
                continue;
            }
            let status = self.migrate_one(alias, target, actor, &mut step_budget);
            out.push((alias.clone(), status));
        }
        out
    }

    fn migrate_one(
        &self,
        alias: &str,
        target: &dyn MigrationTarget,
        actor: &PrincipalId,
        budget: &mut Option<u32>,
    ) -> MigrationStatus {
        let take_step = |budget: &mut Option<u32>| -> bool {
            match budget {
                Some(0) => false,
                Some(n) => {
                    *n -= 1;
                    true
                }
                None => true,
            }
        };
        let fail = |e: CommonsError| MigrationStatus::Failed {
            reason: e.to_string(),
        };

        let record = match self.resolve_alias(alias, actor) {
            Ok(r) => r,
            Err(e) => return fail(e),
        };
        let local_urls: Vec<String> = record
            .urls
            .iter()
            .filter(|u| u.starts_with("local://"))
            .cloned()
            .collect();
        if local_urls.is_empty() {
            return MigrationStatus::AlreadyMigrated;
        }
        let hash_record = HashRecord {
            hashes: record.hashes.clone(),
            size: record.size,
            urls: record.urls.clone(),
        };

        // Step 1: transfer and verify at the target.
        if !take_step(budget) {
            return MigrationStatus::Stopped { after_step: 0 };
        }
        let bytes = match self
            .objects
            .get_verified(&local_urls[0], &record.hashes, record.size)
        {
            Ok(b) => b,
            Err(e) => return fail(e),
        };
        let target_locator = match target.store_object(&hash_record, &bytes) {
            Ok(l) => l,
            Err(e) => return fail(e),
        };
        let no_cost_tag = Some(target.peer_name().to_string());
        if let Err(e) = self.emit_transfer_event(actor, record.size, no_cost_tag) {
            return fail(e);
        }

        // Step 2: append the target locator; both copies now resolvable.
        if !take_step(budget) {
            return MigrationStatus::Stopped { after_step: 1 };
        }
        let mut urls = record.urls.clone();
        if !urls.contains(&target_locator) {
            urls.push(target_locator.clone());
            if let Err(e) = self.update_record(
                alias,
                crate::index::RecordPatch {
                    urls: Some(urls.clone()),
                    ..Default::default()
                },
                actor,
            ) {
                return fail(e);
            }
        }

        // Step 3: drop the source locators.
        if !take_step(budget) {
            return MigrationStatus::Stopped { after_step: 2 };
        }
        // Never drop the locator just added, even if the target could not
        // externalize it; the record must keep at least one valid copy.
        urls.retain(|u| u == &target_locator || !u.starts_with("local://"));
        if let Err(e) = self.update_record(
            alias,
            crate::index::RecordPatch {
                urls: Some(urls),
                ..Default::default()
            },
            actor,
        ) {
            return fail(e);
        }
        MigrationStatus::Completed { target_locator }
    }
}

fn public_object_url(base: &str, md5: &str, size: u64) -> String {
    format!("{base}/peer/object?hash=md5:{md5}&size={size}")
}

fn rewrite_local_urls(urls: &mut [String], base: &str, md5: &str, size: u64) {
    for url in urls {
        if url.starts_with("local://") {
            *url = public_object_url(base, md5, size);
        }
    }
}

/// In-process peer adapter: lets one commons pull directly from another in
/// the same process. Used by tests and the single-binary deployments.
pub struct InProcessPeer<'a> {
    pub name: String,
    pub commons: &'a Commons,
}

impl PeerSource for InProcessPeer<'_> {
    fn peer_name(&self) -> &str {
        &self.name
    }

    fn changes(&self, since: u64) -> Result<ChangeBatch> {
        self.commons.changes_feed(since, 500)
    }

    fn fetch_object(&self, md5: &str, size: u64) -> Result<Vec<u8>> {
        self.commons.peer_object(md5, size)
    }
}

impl MigrationTarget for InProcessPeer<'_> {
    fn peer_name(&self) -> &str {
        &self.name
    }

    fn store_object(&self, record: &HashRecord, bytes: &[u8]) -> Result<String> {
        self.commons.receive_object(record, bytes)
    }
}

/// HTTP client for a remote peer's feed and object endpoints.
pub struct HttpPeer {
    pub agreement: PeerAgreement,
    client: reqwest::blocking::Client,
}

impl HttpPeer {
    pub fn new(agreement: PeerAgreement) -> HttpPeer {
        HttpPeer {
            agreement,
            client: reqwest::blocking::Client::new(),
        }
    }

    fn base(&self) -> &str {
        self.agreement.endpoint.trim_end_matches('/')
    }
}

impl PeerSource for HttpPeer {
    fn peer_name(&self) -> &str {
        &self.agreement.peer_name
    }

    fn changes(&self, since: u64) -> Result<ChangeBatch> {
        let url = format!("{}/peer/changes?since={since}", self.base());
        let resp = self
            .client
            .get(&url)
            .send()
            .map_err(|e| CommonsError::PeerUnreachable(e.to_string()))?;
        if resp.status() == reqwest::StatusCode::GONE {
            return Err(CommonsError::FeedGap {
                cursor: since,
                oldest: 0,
            });
        }
        if !resp.status().is_success() {
            return Err(CommonsError::PeerUnreachable(format!(
                "{url}: HTTP {}",
                resp.status()
            )));
        }
        resp.json()
            .map_err(|e| CommonsError::PeerUnreachable(e.to_string()))
    }

    fn fetch_object(&self, md5: &str, size: u64) -> Result<Vec<u8>> {
        let url = format!("{}/peer/object?hash=md5:{md5}&size={size}", self.base());
        let resp = self
            .client
            .get(&url)
            .send()
            .map_err(|e| CommonsError::PeerUnreachable(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(CommonsError::NotFound(format!(
                "{url}: HTTP {}",
                resp.status()
            )));
        }
        Ok(resp
            .bytes()
            .map_err(|e| CommonsError::PeerUnreachable(e.to_string()))?
            .to_vec())
    }
}

impl MigrationTarget for HttpPeer {
    fn peer_name(&self) -> &str {
        &self.agreement.peer_name
    }

    fn store_object(&self, record: &HashRecord, bytes: &[u8]) -> Result<String> {
        let url = format!(
            "{}/peer/object?hash=md5:{}&size={}",
            self.base(),
            record.hashes.md5(),
            record.size
        );
        let resp = self
            .client
            .post(&url)
            .body(bytes.to_vec())
            .send()
            .map_err(|e| CommonsError::PeerUnreachable(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(CommonsError::PeerUnreachable(format!(
                "{url}: HTTP {}",
                resp.status()
            )));
        }
        #[derive(Deserialize)]
        struct Stored {
            locator: String,
        }
        let stored: Stored = resp
            .json()
            .map_err(|e| CommonsError::PeerUnreachable(e.to_string()))?;
        Ok(stored.locator)
    }
}
