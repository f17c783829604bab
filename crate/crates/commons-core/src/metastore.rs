//! Schema-validated, searchable metadata documents keyed by digital ID.
//!
//! Untyped documents are stored unrestricted. Typed documents validate
//! against a registered schema: a minimal structural language of required
//! dotted paths, scalar types, and enums. Queries are conjunctions of
//! exact matches on dotted field paths.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::accessctl::Acl;
use crate::error::{CommonsError, Result};
use crate::idmodel::AliasId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetadataDocument {
    pub doc_id: String,
    pub subject: AliasId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub type_name: Option<String>,
    pub body: Value,
    pub acl: Acl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldType {
    String,
    Integer,
    Number,
    Boolean,
    Array,
    Object,
    Any,
}

impl FieldType {
    fn matches(&self, value: &Value) -> bool {
        match self {
            FieldType::String => value.is_string(),
            FieldType::Integer => value.is_i64() || value.is_u64(),
            FieldType::Number => value.is_number(),
            FieldType::Boolean => value.is_boolean(),
            FieldType::Array => value.is_array(),
            FieldType::Object => value.is_object(),
            FieldType::Any => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    #[serde(rename = "type")]
    pub field_type: FieldType,
    /// Closed set of permitted values, when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub enum_values: Option<Vec<Value>>,
}

/// Structural constraints for one metadata type: required dotted paths plus
/// per-path type/enum specs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetadataSchema {
    pub type_name: String,
    #[serde(default)]
    pub required: Vec<String>,
    #[serde(default)]
    pub fields: BTreeMap<String, FieldSpec>,
}

impl MetadataSchema {
    /// Check the schema itself against the meta-constraints.
    pub fn validate_shape(&self) -> Result<()> {
        let malformed = |detail: String| Err(CommonsError::MalformedSchema(detail));
        if self.type_name.is_empty() {
            return malformed("empty type_name".into());
        }
        let mut seen = std::collections::BTreeSet::new();
        for path in &self.required {
            if !valid_path(path) {
                return malformed(format!("bad required path {path:?}"));
            }
            if !seen.insert(path) {
                return malformed(format!("duplicate required path {path:?}"));
            }
        }
        for (path, spec) in &self.fields {
            if !valid_path(path) {
                return malformed(format!("bad field path {path:?}"));
            }
            if let Some(values) = &spec.enum_values {
                if values.is_empty() {
                    return malformed(format!("empty enum for {path:?}"));
                }
                // An enum whose values can never satisfy the declared type is
                // unsatisfiable.
                if !values.iter().any(|v| spec.field_type.matches(v)) {
                    return malformed(format!(
                        "enum for {path:?} has no value of the declared type"
                    ));
                }
            }
        }
        Ok(())
    }

    /// Validate a document body, returning every violating path.
    pub fn violations(&self, body: &Value) -> Vec<String> {
        let mut out = Vec::new();
        for path in &self.required {
            if lookup_path(body, path).is_none() {
                out.push(path.clone());
            }
        }
        for (path, spec) in &self.fields {
            if let Some(value) = lookup_path(body, path) {
                let type_ok = spec.field_type.matches(value);
                let enum_ok = spec
                    .enum_values
                    .as_ref()
                    .map_or(true, |vs| vs.contains(value));
                if !(type_ok && enum_ok) && !out.contains(path) {
                    out.push(path.clone());
                }
            }
        }
        out
    }
}

fn valid_path(path: &str) -> bool {
    !path.is_empty() && path.split('.').all(|seg| !seg.is_empty())
}

/// Follow a dotted path through nested objects.
pub fn lookup_path<'a>(body: &'a Value, path: &str) -> Option<&'a Value> {
    let mut current = body;
    for seg in path.split('.') {
        current = current.as_object()?.get(seg)?;
    }
    Some(current)
}

/// A conjunction of exact-match conditions on dotted paths.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Predicate {
    pub conjuncts: BTreeMap<String, Value>,
}

impl Predicate {
    pub fn validate(&self) -> Result<()> {
        for path in self.conjuncts.keys() {
            if !valid_path(path) {
                return Err(CommonsError::MalformedPredicate(format!(
                    "bad path {path:?}"
                )));
            }
        }
        Ok(())
    }

    /// Vacuously true when empty.
    pub fn matches(&self, body: &Value) -> bool {
        self.conjuncts
            .iter()
            .all(|(path, want)| lookup_path(body, path) == Some(want))
    }
}

impl crate::commons::Commons {
    /// Register a metadata type schema. Administrators only; a type name can
    /// be registered once.
    pub fn register_schema(
        &self,
        schema: MetadataSchema,
        actor: &crate::accessctl::PrincipalId,
    ) -> Result<()> {
        if !self.config().is_admin(actor) {
            return Err(CommonsError::AccessDenied(format!(
                "{actor} is not an administrator"
            )));
        }
        schema.validate_shape()?;
        self.commit(move |state| {
            if state.schemas.contains_key(&schema.type_name) {
                return Err(CommonsError::SchemaExists(schema.type_name.clone()));
            }
            Ok((vec![crate::changelog::ChangeOp::SchemaPut { schema }], ()))
        })
    }

    /// Create or replace the document for `(subject, type_name)`. Typed
    /// bodies validate against their registered schema; untyped bodies are
    /// accepted unrestricted. The subject record's `metadata` field is
    /// linked to the document id.
    pub fn put_document(
        &self,
        subject: &AliasId,
        type_name: Option<String>,
        body: Value,
        actor: &crate::accessctl::PrincipalId,
    ) -> Result<MetadataDocument> {
        use crate::accessctl::{Acl, Right};
        use crate::changelog::ChangeOp;

        self.commit(move |state| {
            let record = state
                .aliases
                .get(subject.raw())
                .ok_or_else(|| CommonsError::UnknownSubject(subject.raw().to_string()))?;
            if let Some(type_name) = &type_name {
                if let Some(schema) = state.schemas.get(type_name) {
                    let paths = schema.violations(&body);
                    if !paths.is_empty() {
                        return Err(CommonsError::ValidationFailed { paths });
                    }
                }
            }
            let type_key = type_name.clone().unwrap_or_default();
            let existing = state
                .doc_index
                .get(&(subject.raw().to_string(), type_key))
                .and_then(|id| state.docs.get(id));
            let (doc_id, acl) = match existing {
                Some(doc) => {
                    // Modifying an existing document needs write on it.
                    self.check_access(&doc.acl, record.release, actor, Right::Write)?;
                    (doc.doc_id.clone(), doc.acl.clone())
                }
                None => {
                    // Creating one needs write on the subject record.
                    self.check_access(
                        &state.record_acl(subject.raw()),
                        record.release,
                        actor,
                        Right::Write,
                    )?;
                    (uuid::Uuid::new_v4().to_string(), Acl::owned_by(actor))
                }
            };
            let document = MetadataDocument {
                doc_id: doc_id.clone(),
                subject: subject.clone(),
                type_name,
                body,
                acl,
            };
            let mut ops = vec![ChangeOp::DocPut {
                document: document.clone(),
            }];
            if record.metadata.as_deref() != Some(doc_id.as_str()) {
                let mut linked = record.clone();
                linked.metadata = Some(doc_id);
                linked.rev = crate::idmodel::compute_rev(&linked)?;
                ops.push(ChangeOp::AliasPut { record: linked });
            }
            Ok((ops, document))
        })
    }

    /// Fetch a subject's document, applying the read check.
    pub fn get_document(
        &self,
        subject: &str,
        type_name: Option<&str>,
        actor: &crate::accessctl::PrincipalId,
    ) -> Result<MetadataDocument> {
        use crate::accessctl::Right;
        self.read(|state| {
            let record = state
                .aliases
                .get(subject)
                .ok_or_else(|| CommonsError::UnknownSubject(subject.to_string()))?;
            let type_key = type_name.unwrap_or_default().to_string();
            let doc = state
                .doc_index
                .get(&(subject.to_string(), type_key))
                .and_then(|id| state.docs.get(id))
                .ok_or_else(|| CommonsError::NotFound(format!("no document for {subject}")))?;
            self.check_access(&doc.acl, record.release, actor, Right::Read)?;
            Ok(doc.clone())
        })
    }

    /// Subjects of every document matching all conjuncts, filtered to those
    /// the actor may read, deduplicated, sorted by raw alias string.
    pub fn query_metadata(
        &self,
        predicate: &Predicate,
        actor: &crate::accessctl::PrincipalId,
    ) -> Result<Vec<AliasId>> {
        use crate::accessctl::Right;
        predicate.validate()?;
        self.read(|state| {
            let mut out: Vec<AliasId> = state
                .docs
                .values()
                .filter(|doc| predicate.matches(&doc.body))
                .filter(|doc| {
                    let release = state
                        .aliases
                        .get(doc.subject.raw())
                        .map(|r| r.release)
                        .unwrap_or(crate::idmodel::Release::Controlled);
                    self.check_access(&doc.acl, release, actor, Right::Read).is_ok()
                })
                .map(|doc| doc.subject.clone())
                .collect();
            out.sort_by(|a, b| a.raw().cmp(b.raw()));
            out.dedup();
            Ok(out)
        })
    }

    /// Grant or revoke rights on a metadata document. Requires write on the
    /// document.
    pub fn update_document_acl(
        &self,
        doc_id: &str,
        principal: crate::accessctl::PrincipalId,
        rights: crate::accessctl::Rights,
        grant: bool,
        actor: &crate::accessctl::PrincipalId,
    ) -> Result<crate::accessctl::Acl> {
        use crate::accessctl::Right;
        use crate::changelog::ChangeOp;
        self.commit(move |state| {
            let doc = state
                .docs
                .get(doc_id)
                .ok_or_else(|| CommonsError::NotFound(doc_id.to_string()))?;
            let release = state
                .aliases
                .get(doc.subject.raw())
                .map(|r| r.release)
                .unwrap_or(crate::idmodel::Release::Controlled);
            self.check_access(&doc.acl, release, actor, Right::Write)?;
            let mut document = doc.clone();
            if grant {
                document.acl.grant(principal, rights);
            } else {
                document.acl.revoke(&principal, rights);
            }
            let acl = document.acl.clone();
            Ok((vec![ChangeOp::DocPut { document }], acl))
        })
    }

    /// Revalidation audit: re-check every stored typed document against its
    /// schema. Returns the doc ids that no longer validate.
    pub fn revalidate_documents(&self) -> Vec<String> {
        self.read(|state| {
            state
                .docs
                .values()
                .filter(|doc| {
                    doc.type_name
                        .as_ref()
                        .and_then(|t| state.schemas.get(t))
                        .is_some_and(|schema| !schema.violations(&doc.body).is_empty())
                })
                .map(|doc| doc.doc_id.clone())
                .collect()
        })
    }
}
