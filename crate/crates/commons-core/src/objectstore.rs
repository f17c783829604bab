//! Content storage behind hash-layer urls, with digest verification on
//! retrieval.
//!
//! The local backend is a directory tree: `<root>/<bucket>/<encoded-key>`.
//! Remote http(s) locators are fetched read-only. Every retrieval re-digests
//! the bytes and refuses to hand out anything that does not match.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use percent_encoding::{percent_decode_str, utf8_percent_encode, AsciiSet, NON_ALPHANUMERIC};
use serde::{Deserialize, Serialize};

use crate::error::{CommonsError, Result};
use crate::idmodel::{digest_bytes, digest_stream, DigestAlgorithm, DigestSet};

/// Characters kept verbatim in encoded keys.
const KEY_SAFE: &AsciiSet = &NON_ALPHANUMERIC
    .remove(b'-')
    .remove(b'_')
    .remove(b'.');

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredObject {
    pub locator: String,
    pub size: u64,
    pub hashes: DigestSet,
}

/// Build a `local://bucket/key` locator. The key is percent-encoded so that
/// slashes and other separators cannot escape the bucket directory.
pub fn local_locator(bucket: &str, key: &str) -> String {
    format!("local://{bucket}/{}", utf8_percent_encode(key, KEY_SAFE))
}

/// Split a `local://` locator into (bucket, decoded key).
pub fn parse_local_locator(locator: &str) -> Result<(String, String)> {
    let rest = locator
        .strip_prefix("local://")
        .ok_or_else(|| CommonsError::NotFound(format!("not a local locator: {locator}")))?;
    let (bucket, key) = rest
        .split_once('/')
        .ok_or_else(|| CommonsError::NotFound(format!("malformed locator: {locator}")))?;
    let key = percent_decode_str(key)
        .decode_utf8()
        .map_err(|_| CommonsError::NotFound(format!("malformed locator: {locator}")))?
        .into_owned();
    Ok((bucket.to_string(), key))
}

/// Copies everything read from `inner` into `out`, so a single pass both
/// persists and digests the stream.
struct TeeReader<'a, R: Read, W: std::io::Write> {
    inner: &'a mut R,
    out: &'a mut W,
}

impl<R: Read, W: std::io::Write> Read for TeeReader<'_, R, W> {
    fn read(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.out.write_all(&buf[..n])?;
        Ok(n)
    }
}

pub struct ObjectStore {
    root: PathBuf,
}

impl ObjectStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<ObjectStore> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(ObjectStore { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn create_bucket(&self, bucket: &str) -> Result<()> {
        fs::create_dir_all(self.root.join(bucket))?;
        Ok(())
    }

    pub fn bucket_exists(&self, bucket: &str) -> bool {
        self.root.join(bucket).is_dir()
    }

    fn object_path(&self, bucket: &str, key: &str) -> PathBuf {
        self.root
            .join(bucket)
            .join(utf8_percent_encode(key, KEY_SAFE).to_string())
    }

    /// Store a byte stream under `bucket/key`, digesting during the write.
    /// Replacement of an existing key is atomic via temp-and-rename.
    pub fn put<R: Read>(&self, bucket: &str, key: &str, mut content: R) -> Result<StoredObject> {
        if !self.bucket_exists(bucket) {
            return Err(CommonsError::BucketMissing(bucket.to_string()));
        }
        let final_path = self.object_path(bucket, key);
        let tmp_path = final_path.with_extension(format!("tmp-{}", uuid::Uuid::new_v4()));

        let mut tmp = fs::File::create(&tmp_path)?;
        let (hashes, size) = {
            let mut tee = TeeReader {
                inner: &mut content,
                out: &mut tmp,
            };
            digest_stream(&mut tee, &DigestAlgorithm::ALL)?
        };
        std::io::Write::flush(&mut tmp)?;
        drop(tmp);
        fs::rename(&tmp_path, &final_path)?;
        Ok(StoredObject {
            locator: local_locator(bucket, key),
            size,
            hashes,
        })
    }

    /// Raw read without verification. Prefer [`ObjectStore::get_verified`].
    pub fn get_raw(&self, locator: &str) -> Result<Vec<u8>> {
        if locator.starts_with("local://") {
            let (bucket, key) = parse_local_locator(locator)?;
            let path = self.object_path(&bucket, &key);
            if !path.is_file() {
                return Err(CommonsError::NotFound(locator.to_string()));
            }
            Ok(fs::read(path)?)
        } else if locator.starts_with("http://") || locator.starts_with("https://") {
            let resp = reqwest::blocking::get(locator)
                .map_err(|e| CommonsError::PeerUnreachable(e.to_string()))?;
            if !resp.status().is_success() {
                return Err(CommonsError::NotFound(format!(
                    "{locator}: HTTP {}",
                    resp.status()
                )));
            }
            let bytes = resp
                .bytes()
                .map_err(|e| CommonsError::PeerUnreachable(e.to_string()))?;
            Ok(bytes.to_vec())
        } else {
            Err(CommonsError::NotFound(format!(
                "unsupported locator scheme: {locator}"
            )))
        }
    }

    /// Retrieve and verify. The bytes are returned only if the recomputed
    /// size and digests match `expected`; any mismatch aborts with no data.
    pub fn get_verified(
        &self,
        locator: &str,
        expected: &DigestSet,
        expected_size: u64,
    ) -> Result<Vec<u8>> {
        let bytes = self.get_raw(locator)?;
        verify_bytes(&bytes, expected, expected_size)?;
        Ok(bytes)
    }

    pub fn delete(&self, locator: &str) -> Result<()> {
        let (bucket, key) = parse_local_locator(locator)?;
        let path = self.object_path(&bucket, &key);
        if path.is_file() {
            fs::remove_file(path)?;
        }
        Ok(())
    }
}

/// Check a buffer against an expected digest set and size. Size first, then
/// md5 and every other expected digest we can recompute.
pub fn verify_bytes(bytes: &[u8], expected: &DigestSet, expected_size: u64) -> Result<()> {
    if bytes.len() as u64 != expected_size {
        return Err(CommonsError::HashMismatch {
            algorithm: "size".into(),
            expected: expected_size.to_string(),
            observed: bytes.len().to_string(),
        });
    }
    let (observed, _) = digest_bytes(bytes);
    for (alg, want) in expected.iter() {
        match observed.get(alg) {
            Some(got) if got == want => {}
            Some(got) => {
                return Err(CommonsError::HashMismatch {
                    algorithm: alg.to_string(),
                    expected: want.to_string(),
                    observed: got.to_string(),
                })
            }
            None => {}
        }
    }
    Ok(())
}
