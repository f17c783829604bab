//! Domain types and canonical serialization for digital identifiers.
//!
//! A digital ID has two layers: a mutable, user-facing alias (ARK, DOI, or a
//! plain string) and an immutable content-digest identity keyed on
//! `(md5, size)`. Records serialize as compact JSON with lexicographically
//! sorted keys so that the `rev` token is reproducible everywhere.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;

use md5::Md5;
use serde::{Deserialize, Serialize};
use sha1::Sha1;
use sha2::{Digest, Sha256};

use crate::error::{CommonsError, Result};

/// Identifier scheme, derived from the alias prefix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Ark,
    Doi,
    Plain,
}

/// A user-facing, mutable identifier. The raw string is preserved verbatim;
/// the scheme is classified from its prefix.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct AliasId {
    raw: String,
    scheme: Scheme,
}

impl AliasId {
    pub fn raw(&self) -> &str {
        &self.raw
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    /// The ARK Name Assigning Authority Number, when this is an ARK.
    pub fn naan(&self) -> Option<&str> {
        match self.scheme {
            Scheme::Ark => self.raw.strip_prefix("ark:/")?.split('/').next(),
            _ => None,
        }
    }
}

impl fmt::Display for AliasId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.raw)
    }
}

impl TryFrom<String> for AliasId {
    type Error = CommonsError;

    fn try_from(raw: String) -> Result<Self> {
        parse_alias(&raw)
    }
}

impl From<AliasId> for String {
    fn from(id: AliasId) -> String {
        id.raw
    }
}

impl std::str::FromStr for AliasId {
    type Err = CommonsError;

    fn from_str(s: &str) -> Result<Self> {
        parse_alias(s)
    }
}

/// Classify and validate a raw alias string.
///
/// Any non-empty, whitespace-free string is a valid alias. `ark:/NAAN/name`
/// and `doi:10.<registrant>/<suffix>` shapes get their scheme recognized;
/// everything else is `Plain`. The NAAN is checked syntactically only.
pub fn parse_alias(raw: &str) -> Result<AliasId> {
    if raw.is_empty() {
        return Err(CommonsError::MalformedAlias("empty alias".into()));
    }
    if raw.chars().any(|c| c.is_whitespace()) {
        return Err(CommonsError::MalformedAlias(format!(
            "alias contains whitespace: {raw:?}"
        )));
    }
    let scheme = if is_ark(raw) {
        Scheme::Ark
    } else if is_doi(raw) {
        Scheme::Doi
    } else {
        Scheme::Plain
    };
    Ok(AliasId {
        raw: raw.to_string(),
        scheme,
    })
}

fn is_ark(raw: &str) -> bool {
    let Some(rest) = raw.strip_prefix("ark:/") else {
        return false;
    };
    let Some((naan, name)) = rest.split_once('/') else {
        return false;
    };
    !naan.is_empty() && naan.chars().all(|c| c.is_ascii_digit()) && !name.is_empty()
}

fn is_doi(raw: &str) -> bool {
    let Some(rest) = raw.strip_prefix("doi:") else {
        return false;
    };
    let Some((prefix, suffix)) = rest.split_once('/') else {
        return false;
    };
    // DOI prefixes are directory indicator "10" followed by a numeric
    // registrant code, e.g. "10.5072".
    let Some(registrant) = prefix.strip_prefix("10.") else {
        return false;
    };
    !registrant.is_empty()
        && registrant
            .split('.')
            .all(|part| !part.is_empty() && part.chars().all(|c| c.is_ascii_digit()))
        && !suffix.is_empty()
}

/// Digest algorithms understood by the commons.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DigestAlgorithm {
    Md5,
    Sha1,
    Sha256,
}

impl DigestAlgorithm {
    pub const ALL: [DigestAlgorithm; 3] = [
        DigestAlgorithm::Md5,
        DigestAlgorithm::Sha1,
        DigestAlgorithm::Sha256,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            DigestAlgorithm::Md5 => "md5",
            DigestAlgorithm::Sha1 => "sha1",
            DigestAlgorithm::Sha256 => "sha256",
        }
    }

    /// Length of the lowercase hex form.
    pub fn hex_len(&self) -> usize {
        match self {
            DigestAlgorithm::Md5 => 32,
            DigestAlgorithm::Sha1 => 40,
            DigestAlgorithm::Sha256 => 64,
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "md5" => Ok(DigestAlgorithm::Md5),
            "sha1" => Ok(DigestAlgorithm::Sha1),
            "sha256" => Ok(DigestAlgorithm::Sha256),
            other => Err(CommonsError::UnsupportedAlgorithm(other.to_string())),
        }
    }
}

/// A set of content digests keyed by algorithm name. At least one digest is
/// present and md5 is always among them; resolution keys on md5 + size.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<String, String>", into = "BTreeMap<String, String>")]
pub struct DigestSet {
    digests: BTreeMap<String, String>,
}

impl DigestSet {
    pub fn new(digests: BTreeMap<String, String>) -> Result<Self> {
        if digests.is_empty() {
            return Err(CommonsError::MalformedDigest("empty digest set".into()));
        }
        if !digests.contains_key("md5") {
            return Err(CommonsError::MalformedDigest(
                "digest set is missing md5".into(),
            ));
        }
        for (name, hex) in &digests {
            let alg = DigestAlgorithm::parse(name)?;
            if hex.len() != alg.hex_len()
                || !hex.chars().all(|c| c.is_ascii_hexdigit() && !c.is_ascii_uppercase())
            {
                return Err(CommonsError::MalformedDigest(format!(
                    "bad {name} digest {hex:?}: expected {} lowercase hex chars",
                    alg.hex_len()
                )));
            }
        }
        Ok(DigestSet { digests })
    }

    /// Single-algorithm constructor, mostly for md5-only records.
    pub fn from_md5(md5: &str) -> Result<Self> {
        Self::new(BTreeMap::from([("md5".to_string(), md5.to_string())]))
    }

    pub fn md5(&self) -> &str {
        &self.digests["md5"]
    }

    pub fn get(&self, algorithm: &str) -> Option<&str> {
        self.digests.get(algorithm).map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.digests.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Two digest sets conflict iff they share an algorithm with differing
    /// digests. Disjoint algorithm sets never conflict.
    pub fn conflicts_with(&self, other: &DigestSet) -> Option<String> {
        for (name, hex) in &self.digests {
            if let Some(other_hex) = other.digests.get(name) {
                if other_hex != hex {
                    return Some(name.clone());
                }
            }
        }
        None
    }

    /// Union of two non-conflicting digest sets.
    pub fn merged_with(&self, other: &DigestSet) -> DigestSet {
        let mut digests = self.digests.clone();
        for (k, v) in &other.digests {
            digests.entry(k.clone()).or_insert_with(|| v.clone());
        }
        DigestSet { digests }
    }
}

impl TryFrom<BTreeMap<String, String>> for DigestSet {
    type Error = CommonsError;

    fn try_from(m: BTreeMap<String, String>) -> Result<Self> {
        DigestSet::new(m)
    }
}

impl From<DigestSet> for BTreeMap<String, String> {
    fn from(d: DigestSet) -> Self {
        d.digests
    }
}

/// Release class: public records are openly readable, controlled records
/// require an authorization grant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Release {
    Public,
    Controlled,
}

/// The alias-layer document binding a user-facing ID to content digests,
/// size, metadata link, release class, revision token, and locations.
///
/// Field names are the wire format; do not rename.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DigitalIdRecord {
    pub hashes: DigestSet,
    pub authority: String,
    pub metadata: Option<String>,
    pub name: AliasId,
    pub release: Release,
    pub rev: String,
    pub size: u64,
    pub urls: Vec<String>,
}

impl DigitalIdRecord {
    /// The immutable hash-layer key this record points at.
    pub fn hash_key(&self) -> (String, u64) {
        (self.hashes.md5().to_string(), self.size)
    }
}

/// The immutable hash-layer entry mapping a digest set + size to known
/// storage locations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HashRecord {
    pub hashes: DigestSet,
    pub size: u64,
    pub urls: Vec<String>,
}

/// Key-value attributes attached to a digital ID.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Attributes {
    pub pairs: BTreeMap<String, String>,
}

impl Attributes {
    /// Merge `other` into self, last writer wins per key.
    pub fn merge(&mut self, other: &Attributes) {
        for (k, v) in &other.pairs {
            self.pairs.insert(k.clone(), v.clone());
        }
    }
}

/// Canonical serialization: UTF-8 JSON, object keys sorted lexicographically,
/// arrays in stored order, no insignificant whitespace.
pub fn canonical_json<T: Serialize>(value: &T) -> Result<String> {
    // serde_json's Map is a BTreeMap here, so converting through Value sorts
    // object keys.
    let v = serde_json::to_value(value)?;
    Ok(serde_json::to_string(&v)?)
}

/// Compute the 8-char revision token over a record's canonical serialization
/// with the `rev` field excluded. sha256, truncated to the first 8 hex chars.
pub fn compute_rev(record: &DigitalIdRecord) -> Result<String> {
    let mut v = serde_json::to_value(record)?;
    v.as_object_mut()
        .expect("record serializes to an object")
        .remove("rev");
    let canonical = serde_json::to_string(&v)?;
    let digest = Sha256::digest(canonical.as_bytes());
    Ok(hex::encode(digest)[..8].to_string())
}

/// Digest a byte stream with the given algorithms in a single pass, returning
/// the digest set and the byte count.
pub fn digest_stream<R: Read>(
    mut reader: R,
    algorithms: &[DigestAlgorithm],
) -> Result<(DigestSet, u64)> {
    if !algorithms.contains(&DigestAlgorithm::Md5) {
        return Err(CommonsError::UnsupportedAlgorithm(
            "md5 must be among the requested algorithms".into(),
        ));
    }
    let mut md5 = Md5::new();
    let mut sha1 = Sha1::new();
    let mut sha256 = Sha256::new();
    let mut size: u64 = 0;
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = reader.read(&mut buf)?;
        if n == 0 {
            break;
        }
        size += n as u64;
        for alg in algorithms {
            match alg {
                DigestAlgorithm::Md5 => md5.update(&buf[..n]),
                DigestAlgorithm::Sha1 => sha1.update(&buf[..n]),
                DigestAlgorithm::Sha256 => sha256.update(&buf[..n]),
            }
        }
    }
    let mut digests = BTreeMap::new();
    for alg in algorithms {
        let hex = match alg {
            DigestAlgorithm::Md5 => hex::encode(md5.clone().finalize()),
            DigestAlgorithm::Sha1 => hex::encode(sha1.clone().finalize()),
            DigestAlgorithm::Sha256 => hex::encode(sha256.clone().finalize()),
        };
        digests.insert(alg.name().to_string(), hex);
    }
    Ok((DigestSet::new(digests)?, size))
}

/// Digest an in-memory buffer with all supported algorithms.
pub fn digest_bytes(bytes: &[u8]) -> (DigestSet, u64) {
    digest_stream(bytes, &DigestAlgorithm::ALL).expect("in-memory digest cannot fail")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_nexrad_ark_fixture() {
        let id = parse_alias("ark:/31807/DC0-7b2c1002-e3c4-41ea-8edc-8fcee4ff3f47").unwrap();
        assert_eq!(id.scheme(), Scheme::Ark);
        assert_eq!(id.naan(), Some("31807"));
    }

    #[test]
    fn parse_plain() {
        let id = parse_alias("my-dataset-v1").unwrap();
        assert_eq!(id.scheme(), Scheme::Plain);
        assert_eq!(id.raw(), "my-dataset-v1");
    }

    #[test]
    fn parse_doi() {
        // Checked against DOI syntax rules: "10." + numeric registrant code,
        // then a slash-separated suffix.
        let id = parse_alias("doi:10.5072/FK2TEST").unwrap();
        assert_eq!(id.scheme(), Scheme::Doi);
        // Near-miss prefixes degrade to plain, they are still usable aliases.
        assert_eq!(parse_alias("doi:11.5072/X").unwrap().scheme(), Scheme::Plain);
        assert_eq!(parse_alias("doi:10./X").unwrap().scheme(), Scheme::Plain);
        assert_eq!(parse_alias("doi:10.5072").unwrap().scheme(), Scheme::Plain);
    }

    #[test]
    fn reject_whitespace_and_empty() {
        assert!(matches!(
            parse_alias(""),
            Err(CommonsError::MalformedAlias(_))
        ));
        assert!(matches!(
            parse_alias("has space"),
            Err(CommonsError::MalformedAlias(_))
        ));
    }

    #[test]
    fn malformed_ark_is_plain() {
        assert_eq!(parse_alias("ark:/abc/x").unwrap().scheme(), Scheme::Plain);
        assert_eq!(parse_alias("ark:/31807").unwrap().scheme(), Scheme::Plain);
    }

    #[test]
    fn empty_stream_md5() {
        let (set, size) = digest_stream(&b""[..], &[DigestAlgorithm::Md5]).unwrap();
        assert_eq!(size, 0);
        assert_eq!(set.md5(), "d41d8cd98f00b204e9800998ecf8427e");
    }

    #[test]
    fn abc_digests_match_independent_tool() {
        // Frozen from `printf abc | md5sum` / `... | sha256sum`.
        let (set, size) =
            digest_stream(&b"abc"[..], &[DigestAlgorithm::Md5, DigestAlgorithm::Sha256]).unwrap();
        assert_eq!(size, 3);
        assert_eq!(set.md5(), "900150983cd24fb0d6963f7d28e17f72");
        assert_eq!(
            set.get("sha256").unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn digest_without_md5_rejected() {
        assert!(matches!(
            digest_stream(&b"x"[..], &[DigestAlgorithm::Sha256]),
            Err(CommonsError::UnsupportedAlgorithm(_))
        ));
    }

    #[test]
    fn digest_set_length_validation() {
        assert!(DigestSet::from_md5("deadbeef").is_err());
        assert!(DigestSet::from_md5("D41D8CD98F00B204E9800998ECF8427E").is_err());
        assert!(DigestSet::from_md5("d41d8cd98f00b204e9800998ecf8427e").is_ok());
    }

    fn fixture_record() -> DigitalIdRecord {
        let mut rec = DigitalIdRecord {
            hashes: DigestSet::from_md5("1e24480435408b664b756be0822028a3").unwrap(),
            authority: "noaa-commons".into(),
            metadata: None,
            name: parse_alias("ark:/31807/DC0-7b2c1002-e3c4-41ea-8edc-8fcee4ff3f47").unwrap(),
            release: Release::Public,
            rev: String::new(),
            size: 45893621760,
            urls: vec!["https://osdc.example/noaa-nexrad-l2/a.tar".into()],
        };
        rec.rev = compute_rev(&rec).unwrap();
        rec
    }

    #[test]
    fn rev_is_deterministic_and_order_sensitive() {
        let a = fixture_record();
        let b = fixture_record();
        assert_eq!(compute_rev(&a).unwrap(), compute_rev(&b).unwrap());

        let mut c = fixture_record();
        c.urls.push("https://osdc.example/noaa-nexrad-l2/b.tar".into());
        assert_ne!(compute_rev(&a).unwrap(), compute_rev(&c).unwrap());
        // Reordering the urls list changes the canonical bytes.
        c.urls.reverse();
        let reversed = compute_rev(&c).unwrap();
        c.urls.reverse();
        assert_ne!(compute_rev(&c).unwrap(), reversed);
    }

    #[test]
    fn rev_matches_independent_digest_oracle() {
        // Oracle: build the canonical JSON by hand (sorted keys, no
        // whitespace, rev removed) and run sha256 over it independently.
        let rec = fixture_record();
        let canonical = format!(
            "{{\"authority\":\"noaa-commons\",\"hashes\":{{\"md5\":\"1e24480435408b664b756be0822028a3\"}},\"metadata\":null,\"name\":\"ark:/31807/DC0-7b2c1002-e3c4-41ea-8edc-8fcee4ff3f47\",\"release\":\"public\",\"size\":45893621760,\"urls\":[\"https://osdc.example/noaa-nexrad-l2/a.tar\"]}}"
        );
        let expected = &hex::encode(Sha256::digest(canonical.as_bytes()))[..8];
        assert_eq!(compute_rev(&rec).unwrap(), expected);
    }

    #[test]
    fn record_round_trips_through_json() {
        let rec = fixture_record();
        let text = canonical_json(&rec).unwrap();
        let back: DigitalIdRecord = serde_json::from_str(&text).unwrap();
        assert_eq!(rec, back);
    }

    #[test]
    fn canonical_json_sorts_keys() {
        let rec = fixture_record();
        let text = canonical_json(&rec).unwrap();
        let keys: Vec<&str> = ["authority", "hashes", "metadata", "name", "release", "rev", "size", "urls"]
            .to_vec();
        let mut last = 0;
        for k in keys {
            let pos = text.find(&format!("\"{k}\"")).unwrap();
            assert!(pos >= last, "key {k} out of order");
            last = pos;
        }
        assert!(!text.contains(": "));
    }

    #[test]
    fn digest_set_conflict_semantics() {
        let a = DigestSet::new(BTreeMap::from([
            ("md5".to_string(), "d41d8cd98f00b204e9800998ecf8427e".to_string()),
            (
                "sha256".to_string(),
                "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855".to_string(),
            ),
        ]))
        .unwrap();
        let same_md5 = DigestSet::from_md5("d41d8cd98f00b204e9800998ecf8427e").unwrap();
        assert_eq!(a.conflicts_with(&same_md5), None);
        let merged = same_md5.merged_with(&a);
        assert!(merged.get("sha256").is_some());

        let b = DigestSet::new(BTreeMap::from([
            ("md5".to_string(), "d41d8cd98f00b204e9800998ecf8427e".to_string()),
            (
                "sha256".to_string(),
                "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad".to_string(),
            ),
        ]))
        .unwrap();
        assert_eq!(a.conflicts_with(&b), Some("sha256".to_string()));
    }
}
