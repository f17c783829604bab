//! Per-digital-ID and per-document access control.
//!
//! Default-deny: a right is allowed only when the record is public (read) or
//! an ACL entry grants it to the actor directly or through a group.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::idmodel::Release;

/// An authenticated (or anonymous) caller. Actors arrive pre-authenticated,
/// conveyed by the gateway as a request header.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum PrincipalId {
    User(String),
    Group(String),
    Anonymous,
}

impl PrincipalId {
    pub fn user(name: impl Into<String>) -> Self {
        PrincipalId::User(name.into())
    }

    pub fn group(name: impl Into<String>) -> Self {
        PrincipalId::Group(name.into())
    }

    pub fn is_anonymous(&self) -> bool {
        matches!(self, PrincipalId::Anonymous)
    }
}

impl fmt::Display for PrincipalId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PrincipalId::User(name) => write!(f, "user:{name}"),
            PrincipalId::Group(name) => write!(f, "group:{name}"),
            PrincipalId::Anonymous => f.write_str("anonymous"),
        }
    }
}

impl FromStr for PrincipalId {
    type Err = String;

    /// Accepts `user:<name>`, `group:<name>`, `anonymous`, or a bare name
    /// (treated as a user).
    fn from_str(s: &str) -> Result<Self, String> {
        if s.is_empty() || s == "anonymous" {
            return Ok(PrincipalId::Anonymous);
        }
        if let Some(name) = s.strip_prefix("user:") {
            if name.is_empty() {
                return Err("empty user name".into());
            }
            return Ok(PrincipalId::User(name.to_string()));
        }
        if let Some(name) = s.strip_prefix("group:") {
            if name.is_empty() {
                return Err("empty group name".into());
            }
            return Ok(PrincipalId::Group(name.to_string()));
        }
        Ok(PrincipalId::User(s.to_string()))
    }
}

impl TryFrom<String> for PrincipalId {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<PrincipalId> for String {
    fn from(p: PrincipalId) -> String {
        p.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Right {
    Read,
    Write,
}

/// A set of rights. Read and write are independent grants.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<Right>", into = "Vec<Right>")]
pub struct Rights {
    pub read: bool,
    pub write: bool,
}

impl Rights {
    pub const READ: Rights = Rights {
        read: true,
        write: false,
    };
    pub const WRITE: Rights = Rights {
        read: false,
        write: true,
    };
    pub const ALL: Rights = Rights {
        read: true,
        write: true,
    };

    pub fn has(&self, right: Right) -> bool {
        match right {
            Right::Read => self.read,
            Right::Write => self.write,
        }
    }

    pub fn is_empty(&self) -> bool {
        !self.read && !self.write
    }

    pub fn union(&self, other: Rights) -> Rights {
        Rights {
            read: self.read || other.read,
            write: self.write || other.write,
        }
    }

    pub fn minus(&self, other: Rights) -> Rights {
        Rights {
            read: self.read && !other.read,
            write: self.write && !other.write,
        }
    }
}

impl From<Vec<Right>> for Rights {
    fn from(v: Vec<Right>) -> Rights {
        let mut r = Rights::default();
        for right in v {
            match right {
                Right::Read => r.read = true,
                Right::Write => r.write = true,
            }
        }
        r
    }
}

impl From<Rights> for Vec<Right> {
    fn from(r: Rights) -> Vec<Right> {
        let mut v = Vec::new();
        if r.read {
            v.push(Right::Read);
        }
        if r.write {
            v.push(Right::Write);
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AclEntry {
    pub principal: PrincipalId,
    pub rights: Rights,
}

/// Access control list kept by each digital ID and metadata document.
/// At most one entry per principal.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Acl {
    pub entries: Vec<AclEntry>,
}

impl Acl {
    /// Owner bootstrap: the minting actor receives read + write.
    pub fn owned_by(owner: &PrincipalId) -> Acl {
        let mut acl = Acl::default();
        if !owner.is_anonymous() {
            acl.grant(owner.clone(), Rights::ALL);
        }
        acl
    }

    /// Add rights for a principal. Idempotent: granting held rights is a no-op.
    pub fn grant(&mut self, principal: PrincipalId, rights: Rights) {
        if let Some(entry) = self.entries.iter_mut().find(|e| e.principal == principal) {
            entry.rights = entry.rights.union(rights);
        } else if !rights.is_empty() {
            self.entries.push(AclEntry { principal, rights });
        }
    }

    /// Remove rights from a principal; entries left with no rights are dropped.
    pub fn revoke(&mut self, principal: &PrincipalId, rights: Rights) {
        if let Some(entry) = self.entries.iter_mut().find(|e| &e.principal == principal) {
            entry.rights = entry.rights.minus(rights);
        }
        self.entries.retain(|e| !e.rights.is_empty());
    }

    pub fn rights_of(&self, principal: &PrincipalId) -> Rights {
        self.entries
            .iter()
            .find(|e| &e.principal == principal)
            .map(|e| e.rights)
            .unwrap_or_default()
    }
}

/// Flat group membership directory. No nesting.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GroupDirectory {
    pub membership: BTreeMap<String, BTreeSet<String>>,
}

impl GroupDirectory {
    pub fn is_member(&self, group: &str, user: &str) -> bool {
        self.membership
            .get(group)
            .is_some_and(|members| members.contains(user))
    }

    pub fn add_member(&mut self, group: impl Into<String>, user: impl Into<String>) {
        self.membership
            .entry(group.into())
            .or_default()
            .insert(user.into());
    }
}

/// The authorization decision. Pure function of its inputs.
///
/// Allow iff the right is read and the release class is public, or the actor
/// (or any group containing the actor) holds the right in the ACL.
pub fn check(
    acl: &Acl,
    release: Release,
    groups: &GroupDirectory,
    actor: &PrincipalId,
    right: Right,
) -> bool {
    if right == Right::Read && release == Release::Public {
        return true;
    }
    acl.entries.iter().any(|entry| {
        entry.rights.has(right)
            && match (&entry.principal, actor) {
                (p, a) if p == a => true,
                (PrincipalId::Group(g), PrincipalId::User(u)) => groups.is_member(g, u),
                _ => false,
            }
    })
}
