use std::collections::{BTreeMap, BTreeSet};

use ed25519_dalek::{Signature, Signer, SigningKey, Verifier, VerifyingKey};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::NetError;

pub const BYTES_PER_MB: f64 = 1_000_000.0;

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContentClass {
    Safety,
    Traffic,
    Map,
    Infotainment,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContentEntry {
    pub name: String,
    /// SHA-256 of the published (possibly sealed) bytes, lowercase hex.
    pub hash: String,
    pub size_bytes: u64,
    /// Seconds since the Unix epoch.
    pub last_modified: u64,
    pub class: ContentClass,
    pub popularity: u64,
}

impl ContentEntry {
    pub fn for_bytes(name: impl Into<String>, bytes: &[u8], last_modified: u64, class: ContentClass) -> Self {
        Self {
            name: name.into(),
            hash: sha256_hex(bytes),
            size_bytes: bytes.len() as u64,
            last_modified,
            class,
            popularity: 0,
        }
    }

    pub fn matches(&self, bytes: &[u8]) -> bool {
        self.size_bytes == bytes.len() as u64 && self.hash == sha256_hex(bytes)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContentDirectory {
    entries: BTreeMap<String, ContentEntry>,
}

impl ContentDirectory {
    pub fn insert(&mut self, entry: ContentEntry) -> Option<ContentEntry> {
        self.entries.insert(entry.name.clone(), entry)
    }

    pub fn get(&self, name: &str) -> Option<&ContentEntry> {
        self.entries.get(name)
    }

    pub fn entries(&self) -> impl Iterator<Item = &ContentEntry> {
        self.entries.values()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn bump(&mut self, name: &str) -> Result<u64, NetError> {
        let entry = self.entries.get_mut(name).ok_or_else(|| NetError::NotInDirectory(name.to_owned()))?;
        entry.popularity += 1;
        Ok(entry.popularity)
    }

    fn popularity(&self, name: &str) -> Result<u64, NetError> {
        self.get(name).map(|e| e.popularity).ok_or_else(|| NetError::NotInDirectory(name.to_owned()))
    }

    /// Key-sorted compact JSON.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let value = serde_json::to_value(self).expect("directory is always representable as JSON");
        serde_json::to_vec(&value).expect("JSON value serializes")
    }

    pub fn sign(&self, key: &SigningKey) -> SignedDirectory {
        let bytes = self.canonical_bytes();
        SignedDirectory {
            directory: self.clone(),
            public_key: hex::encode(key.verifying_key().as_bytes()),
            signature: hex::encode(key.sign(&bytes).to_bytes()),
        }
    }
}

/// Directory with a detached Ed25519 signature over its canonical bytes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignedDirectory {
    pub directory: ContentDirectory,
    pub public_key: String,
    pub signature: String,
}

impl SignedDirectory {
    pub fn verify(&self, trusted: &VerifyingKey) -> Result<(), NetError> {
        let signature = decode_signature(&self.signature)?;
        verify_serialized(&self.directory.canonical_bytes(), &signature, trusted).map(|_| ())
    }
}

fn decode_signature(hex_sig: &str) -> Result<Signature, NetError> {
    let raw = hex::decode(hex_sig).map_err(|e| NetError::MalformedDirectory(e.to_string()))?;
    Signature::from_slice(&raw).map_err(|_| NetError::BadSignature)
}

/// Verifies `signature` over serialized directory bytes and parses them.
pub fn verify_serialized(
    bytes: &[u8],
    signature: &Signature,
    trusted: &VerifyingKey,
) -> Result<ContentDirectory, NetError> {
    trusted.verify(bytes, signature).map_err(|_| NetError::BadSignature)?;
    serde_json::from_slice(bytes).map_err(|e| NetError::MalformedDirectory(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Admission {
    Inserted,
    AlreadyCached,
    Evicted(String),
    /// The cache is full and the candidate is not more popular than the
    /// least popular cached entry.
    Rejected,
}

/// Least-frequently-used content store of one RSU. Popularity counters live
/// in the RSU's directory and count lookups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RsuCache {
    capacity: usize,
    directory: ContentDirectory,
    cached: BTreeSet<String>,
}

impl RsuCache {
    pub fn new(capacity: usize, directory: ContentDirectory) -> Self {
        Self { capacity, directory, cached: BTreeSet::new() }
    }

    pub fn directory(&self) -> &ContentDirectory {
        &self.directory
    }

    pub fn contains(&self, name: &str) -> bool {
        self.cached.contains(name)
    }

    pub fn len(&self) -> usize {
        self.cached.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cached.is_empty()
    }

    /// Returns whether `name` is cached and bumps its popularity.
    pub fn lookup(&mut self, name: &str) -> Result<bool, NetError> {
        self.directory.bump(name)?;
        Ok(self.cached.contains(name))
    }

    pub fn admit(&mut self, name: &str) -> Result<Admission, NetError> {
        let popularity = self.directory.popularity(name)?;
        if self.cached.contains(name) {
            return Ok(Admission::AlreadyCached);
        }
        if self.capacity == 0 {
            return Ok(Admission::Rejected);
        }
        if self.cached.len() < self.capacity {
            self.cached.insert(name.to_owned());
            return Ok(Admission::Inserted);
        }
        // BTreeSet order makes the lowest name win popularity ties.
        let (victim, victim_pop) = self
            .cached
            .iter()
            .map(|n| (n, self.directory.popularity(n).unwrap_or(0)))
            .min_by_key(|(_, p)| *p)
            .map(|(n, p)| (n.clone(), p))
            .expect("cache is full and capacity is positive");
        if popularity <= victim_pop {
            return Ok(Admission::Rejected);
        }
        self.cached.remove(&victim);
        self.cached.insert(name.to_owned());
        Ok(Admission::Evicted(victim))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub name: String,
    pub index: usize,
    pub hash: String,
    pub data: Vec<u8>,
}

/// Splits `bytes` into `ceil(len / chunk)` named chunks of `chunk_mb`
/// megabytes each. Empty content yields one empty chunk.
pub fn chunk_content(name: &str, bytes: &[u8], chunk_mb: f64) -> Result<Vec<Chunk>, NetError> {
    let size = (chunk_mb * BYTES_PER_MB).round();
    if !size.is_finite() || size < 1.0 {
        return Err(NetError::InvalidChunkSize(chunk_mb));
    }
    let make = |index, data: &[u8]| Chunk { name: name.to_owned(), index, hash: sha256_hex(data), data: data.to_vec() };
    if bytes.is_empty() {
        return Ok(vec![make(0, &[])]);
    }
    Ok(bytes.chunks(size as usize).enumerate().map(|(i, c)| make(i, c)).collect())
}

pub fn verify_chunk(chunk: &Chunk) -> bool {
    chunk.hash == sha256_hex(&chunk.data)
}

/// Concatenates chunks after checking order, naming and hashes.
pub fn reassemble(chunks: &[Chunk]) -> Result<Vec<u8>, NetError> {
    let name = chunks.first().map(|c| c.name.as_str()).unwrap_or_default();
    let mut out = Vec::new();
    for (i, chunk) in chunks.iter().enumerate() {
        if chunk.index != i || chunk.name != name {
            return Err(NetError::ChunkSequence);
        }
        if !verify_chunk(chunk) {
            return Err(NetError::ChunkTampered { name: chunk.name.clone(), index: i });
        }
        out.extend_from_slice(&chunk.data);
    }
    Ok(out)
}
