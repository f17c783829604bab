//! The two-layer index: a mutable alias layer over an immutable hash layer.
//!
//! Alias records may be minted, patched, and deleted; hash-layer entries are
//! keyed by `(md5, size)` and never change identity, only their known
//! locations. Every alias record's hash key is guaranteed to exist in the
//! hash table.

use serde::{Deserialize, Serialize};

use crate::accessctl::{Acl, PrincipalId, Right};
use crate::changelog::ChangeOp;
use crate::commons::{alias_acl_key, Commons, State};
use crate::error::{CommonsError, Result};
use crate::idmodel::{
    compute_rev, AliasId, Attributes, DigestSet, DigitalIdRecord, HashRecord, Release,
};

/// Patch applied by [`Commons::update_record`]. Absent fields are untouched.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RecordPatch {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub urls: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub release: Option<Release>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<Option<String>>,
    /// New content identity; both digests and size move together.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hashes: Option<DigestSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size: Option<u64>,
}

/// Build the hash-layer ops for registering content, merging with any
/// existing entry. Conflicting secondary digests are rejected; urls are
/// unioned preserving first-seen order.
fn register_hash_op(
    state: &State,
    hashes: &DigestSet,
    size: u64,
    urls: &[String],
) -> Result<ChangeOp> {
    let key = (hashes.md5().to_string(), size);
    let record = match state.hashes.get(&key) {
        Some(existing) => {
            if let Some(algorithm) = existing.hashes.conflicts_with(hashes) {
                return Err(CommonsError::HashConflict {
                    md5: key.0,
                    size,
                    detail: format!("conflicting {algorithm} digest for existing entry"),
                });
            }
            let mut merged = existing.clone();
            merged.hashes = existing.hashes.merged_with(hashes);
            for url in urls {
                if !merged.urls.contains(url) {
                    merged.urls.push(url.clone());
                }
            }
            merged
        }
        None => HashRecord {
            hashes: hashes.clone(),
            size,
            urls: urls.to_vec(),
        },
    };
    Ok(ChangeOp::HashPut { record })
}

impl Commons {
    /// Create a digital ID over already-digested content. The hash record is
    /// created or merged; the minting actor becomes the owner.
    pub fn mint(
        &self,
        alias: &AliasId,
        hashes: DigestSet,
        size: u64,
        urls: Vec<String>,
        release: Release,
        actor: &PrincipalId,
    ) -> Result<DigitalIdRecord> {
        if actor.is_anonymous() {
            return Err(CommonsError::AccessDenied(
                "anonymous actors cannot mint".into(),
            ));
        }
        let authority = self.config.authority.clone();
        self.commit(move |state| {
            if state.aliases.contains_key(alias.raw()) {
                return Err(CommonsError::AliasExists(alias.raw().to_string()));
            }
            let hash_op = register_hash_op(state, &hashes, size, &urls)?;
            let mut record = DigitalIdRecord {
                hashes,
                authority,
                metadata: None,
                name: alias.clone(),
                release,
                rev: String::new(),
                size,
                urls,
            };
            record.rev = compute_rev(&record)?;
            let ops = vec![
                hash_op,
                ChangeOp::AliasPut {
                    record: record.clone(),
                },
                ChangeOp::AclPut {
                    target: alias_acl_key(alias.raw()),
                    acl: Acl::owned_by(actor),
                },
            ];
            Ok((ops, record))
        })
    }

    /// Resolve an alias, applying the read check. Public records are
    /// readable anonymously.
    pub fn resolve_alias(&self, alias: &str, actor: &PrincipalId) -> Result<DigitalIdRecord> {
        self.read(|state| {
            self.check_record_access(state, alias, actor, Right::Read)?;
            Ok(state.aliases[alias].clone())
        })
    }

    /// Resolve by content digest. md5 keys directly; other supported
    /// algorithms scan for a matching entry.
    pub fn resolve_hash(&self, algorithm: &str, digest: &str, size: u64) -> Result<HashRecord> {
        crate::idmodel::DigestAlgorithm::parse(algorithm)?;
        self.read(|state| {
            let found = if algorithm == "md5" {
                state.hashes.get(&(digest.to_string(), size)).cloned()
            } else {
                state
                    .hashes
                    .values()
                    .find(|r| r.size == size && r.hashes.get(algorithm) == Some(digest))
                    .cloned()
            };
            found.ok_or_else(|| CommonsError::NotFound(format!("{algorithm}:{digest} size {size}")))
        })
    }

    /// Suffix pass-through: longest-prefix alias match at `/` boundaries,
    /// with the remainder appended to each url.
    pub fn resolve_with_suffix(&self, path: &str, actor: &PrincipalId) -> Result<DigitalIdRecord> {
        let (alias, remainder) = self.read(|state| {
            if state.aliases.contains_key(path) {
                return Ok((path.to_string(), String::new()));
            }
            let mut candidate = path;
            while let Some(idx) = candidate.rfind('/') {
                candidate = &candidate[..idx];
                if state.aliases.contains_key(candidate) {
                    return Ok((candidate.to_string(), path[candidate.len() + 1..].to_string()));
                }
            }
            Err(CommonsError::NotFound(path.to_string()))
        })?;
        let mut record = self.resolve_alias(&alias, actor)?;
        if !remainder.is_empty() {
            for url in &mut record.urls {
                while url.ends_with('/') {
                    url.pop();
                }
                url.push('/');
                url.push_str(&remainder);
            }
        }
        Ok(record)
    }

    /// Patch a record in place. The alias never changes; the rev is
    /// recomputed from the new content, and a changed content identity
    /// registers a new hash entry while the old one stays resolvable.
    pub fn update_record(
        &self,
        alias: &str,
        patch: RecordPatch,
        actor: &PrincipalId,
    ) -> Result<DigitalIdRecord> {
        self.commit(move |state| {
            self.check_record_access(state, alias, actor, Right::Write)?;
            let mut record = state.aliases[alias].clone();
            if let Some(urls) = patch.urls {
                record.urls = urls;
            }
            if let Some(release) = patch.release {
                record.release = release;
            }
            if let Some(metadata) = patch.metadata {
                record.metadata = metadata;
            }
            let mut ops = Vec::new();
            if patch.hashes.is_some() || patch.size.is_some() {
                if let Some(hashes) = patch.hashes {
                    record.hashes = hashes;
                }
                if let Some(size) = patch.size {
                    record.size = size;
                }
                ops.push(register_hash_op(state, &record.hashes, record.size, &record.urls)?);
            }
            record.rev = compute_rev(&record)?;
            ops.push(ChangeOp::AliasPut {
                record: record.clone(),
            });
            Ok((ops, record))
        })
    }

    /// Remove an alias. The hash-layer entry is retained, so the content
    /// stays resolvable by digest.
    pub fn delete_alias(&self, alias: &str, actor: &PrincipalId) -> Result<()> {
        self.commit(move |state| {
            self.check_record_access(state, alias, actor, Right::Write)?;
            Ok((
                vec![ChangeOp::AliasDelete {
                    alias: alias.to_string(),
                }],
                (),
            ))
        })
    }

    /// Every hash record referenced by two or more aliases, with its
    /// referrers. Deterministic order: by (md5, size), referrers sorted.
    pub fn detect_duplicates(&self) -> Vec<(HashRecord, Vec<AliasId>)> {
        self.read(|state| {
            let mut groups: std::collections::BTreeMap<(String, u64), Vec<AliasId>> =
                std::collections::BTreeMap::new();
            for record in state.aliases.values() {
                groups
                    .entry(record.hash_key())
                    .or_default()
                    .push(record.name.clone());
            }
            groups
                .into_iter()
                .filter(|(_, aliases)| aliases.len() >= 2)
                .filter_map(|(key, mut aliases)| {
                    aliases.sort();
                    state.hashes.get(&key).map(|h| (h.clone(), aliases))
                })
                .collect()
        })
    }

    pub fn attributes_get(&self, alias: &str, actor: &PrincipalId) -> Result<Attributes> {
        self.read(|state| {
            self.check_record_access(state, alias, actor, Right::Read)?;
            Ok(state.attrs.get(alias).cloned().unwrap_or_default())
        })
    }

    /// Merge key-value pairs into an alias's attributes, last writer wins
    /// per key.
    pub fn attributes_set(
        &self,
        alias: &str,
        pairs: Attributes,
        actor: &PrincipalId,
    ) -> Result<Attributes> {
        if pairs.pairs.keys().any(|k| k.is_empty()) {
            return Err(CommonsError::MalformedQuery("empty attribute key".into()));
        }
        self.commit(move |state| {
            self.check_record_access(state, alias, actor, Right::Write)?;
            let mut merged = state.attrs.get(alias).cloned().unwrap_or_default();
            merged.merge(&pairs);
            Ok((
                vec![ChangeOp::AttrPut {
                    alias: alias.to_string(),
                    attributes: merged.clone(),
                }],
                merged,
            ))
        })
    }

    /// Grant rights on a digital ID. Requires write on the target.
    pub fn grant(
        &self,
        alias: &str,
        principal: PrincipalId,
        rights: crate::accessctl::Rights,
        actor: &PrincipalId,
    ) -> Result<Acl> {
        self.commit(move |state| {
            self.check_record_access(state, alias, actor, Right::Write)?;
            let mut acl = state.record_acl(alias);
            acl.grant(principal, rights);
            Ok((
                vec![ChangeOp::AclPut {
                    target: alias_acl_key(alias),
                    acl: acl.clone(),
                }],
                acl,
            ))
        })
    }

    /// Revoke rights on a digital ID. Requires write on the target.
    pub fn revoke(
        &self,
        alias: &str,
        principal: &PrincipalId,
        rights: crate::accessctl::Rights,
        actor: &PrincipalId,
    ) -> Result<Acl> {
        self.commit(move |state| {
            self.check_record_access(state, alias, actor, Right::Write)?;
            let mut acl = state.record_acl(alias);
            acl.revoke(principal, rights);
            Ok((
                vec![ChangeOp::AclPut {
                    target: alias_acl_key(alias),
                    acl: acl.clone(),
                }],
                acl,
            ))
        })
    }
}
