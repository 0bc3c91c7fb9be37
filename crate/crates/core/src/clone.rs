//! Name- and version-independent content digests and the set of digests
//! belonging to known malware.

use std::collections::HashMap;
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use md5::Md5;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::package::{PackageArtifact, MANIFEST_PATH};

#[derive(Debug, Error)]
pub enum CloneError {
    #[error("hash set io: {0}")]
    Io(#[from] std::io::Error),
    #[error("hash set line {line}: {reason}")]
    Format { line: usize, reason: String },
    #[error("unknown digest algorithm {0:?}")]
    UnknownAlgorithm(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DigestAlgorithm {
    #[default]
    Md5,
    Sha256,
}

impl DigestAlgorithm {
    pub fn tag(self) -> &'static str {
        match self {
            DigestAlgorithm::Md5 => "md5",
            DigestAlgorithm::Sha256 => "sha256",
        }
    }

    fn width(self) -> usize {
        match self {
            DigestAlgorithm::Md5 => 16,
            DigestAlgorithm::Sha256 => 32,
        }
    }
}

impl FromStr for DigestAlgorithm {
    type Err = CloneError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "md5" => Ok(DigestAlgorithm::Md5),
            "sha256" => Ok(DigestAlgorithm::Sha256),
            other => Err(CloneError::UnknownAlgorithm(other.to_owned())),
        }
    }
}

/// Rendered as `algorithm:hex`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ContentDigest {
    pub algorithm: DigestAlgorithm,
    pub bytes: Vec<u8>,
}

impl fmt::Display for ContentDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.algorithm.tag(), hex::encode(&self.bytes))
    }
}

impl FromStr for ContentDigest {
    type Err = CloneError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = |reason: String| CloneError::Format { line: 0, reason };
        let (tag, hex_part) = s.split_once(':').ok_or_else(|| bad(format!("digest {s:?} lacks a tag")))?;
        let algorithm: DigestAlgorithm = tag.parse()?;
        let bytes = hex::decode(hex_part).map_err(|e| bad(format!("digest {s:?}: {e}")))?;
        if bytes.len() != algorithm.width() {
            return Err(bad(format!("digest {s:?} has {} bytes", bytes.len())));
        }
        Ok(Self { algorithm, bytes })
    }
}

impl Serialize for ContentDigest {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ContentDigest {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Manifest bytes with `name` and `version` removed, keys sorted at every
/// level and no whitespace. Unparseable manifests are used verbatim.
pub fn canonical_manifest(bytes: &[u8]) -> Vec<u8> {
    let Ok(Value::Object(mut obj)) = serde_json::from_slice::<Value>(bytes) else {
        return bytes.to_vec();
    };
    obj.remove("name");
    obj.remove("version");
    let mut out = Vec::new();
    write_sorted(&Value::Object(obj), &mut out);
    out
}

fn write_sorted(value: &Value, out: &mut Vec<u8>) {
    match value {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push(b'{');
            for (i, k) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                out.extend(serde_json::to_vec(k).expect("string serializes"));
                out.push(b':');
                write_sorted(&map[k], out);
            }
            out.push(b'}');
        }
        Value::Array(items) => {
            out.push(b'[');
            for (i, v) in items.iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                write_sorted(v, out);
            }
            out.push(b']');
        }
        scalar => out.extend(serde_json::to_vec(scalar).expect("scalar serializes")),
    }
}

/// The canonical file sequence: sorted paths, root manifest canonicalized.
pub fn canonical_files(artifact: &PackageArtifact) -> Vec<(&str, std::borrow::Cow<'_, [u8]>)> {
    artifact
        .files
        .iter()
        .map(|f| {
            let content = if f.path == MANIFEST_PATH {
                std::borrow::Cow::Owned(canonical_manifest(&f.content))
            } else {
                std::borrow::Cow::Borrowed(f.content.as_slice())
            };
            (f.path.as_str(), content)
        })
        .collect()
}

pub fn canonical_digest(artifact: &PackageArtifact) -> ContentDigest {
    canonical_digest_with(artifact, DigestAlgorithm::default())
}

// Each file contributes `path 0x00 len(u64 LE) content`, so boundaries are unambiguous.
pub fn canonical_digest_with(artifact: &PackageArtifact, algorithm: DigestAlgorithm) -> ContentDigest {
    fn run<D: Digest>(artifact: &PackageArtifact) -> Vec<u8> {
        let mut h = D::new();
        for (path, content) in canonical_files(artifact) {
            h.update(path.as_bytes());
            h.update([0u8]);
            h.update((content.len() as u64).to_le_bytes());
            h.update(&content);
        }
        h.finalize().to_vec()
    }
    let bytes = match algorithm {
        DigestAlgorithm::Md5 => run::<Md5>(artifact),
        DigestAlgorithm::Sha256 => run::<Sha256>(artifact),
    };
    ContentDigest { algorithm, bytes }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub package: String,
    pub version: String,
    /// ISO 8601 date the digest was registered.
    pub added: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashRecord {
    pub digest: ContentDigest,
    pub provenance: Provenance,
}

impl HashRecord {
    fn to_line(&self) -> String {
        let p = &self.provenance;
        format!("{}\t{}\t{}\t{}", self.digest, p.package, p.version, p.added)
    }

    fn parse_line(line: &str, number: usize) -> Result<Self, CloneError> {
        let fields: Vec<&str> = line.split('\t').collect();
        let [digest, package, version, added] = fields[..] else {
            return Err(CloneError::Format {
                line: number,
                reason: format!("expected 4 tab-separated fields, got {}", fields.len()),
            });
        };
        let digest = digest.parse().map_err(|e| match e {
            CloneError::Format { reason, .. } => CloneError::Format { line: number, reason },
            other => other,
        })?;
        Ok(Self {
            digest,
            provenance: Provenance {
                package: package.into(),
                version: version.into(),
                added: added.into(),
            },
        })
    }
}

/// Known-malware digests. When backed by a file, every new digest is
/// appended to it; existing lines are never rewritten.
#[derive(Debug, Default)]
pub struct MalwareHashSet {
    algorithm: DigestAlgorithm,
    records: Vec<HashRecord>,
    index: HashMap<ContentDigest, usize>,
    path: Option<PathBuf>,
}

impl MalwareHashSet {
    pub fn new(algorithm: DigestAlgorithm) -> Self {
        Self {
            algorithm,
            ..Self::default()
        }
    }

    /// Loads the file at `path` if it exists and appends to it afterwards.
    pub fn open(path: &Path, algorithm: DigestAlgorithm) -> Result<Self, CloneError> {
        let mut set = Self::new(algorithm);
        if path.exists() {
            for record in read_records(BufReader::new(File::open(path)?))? {
                set.insert(record);
            }
        }
        set.path = Some(path.to_path_buf());
        Ok(set)
    }

    pub fn algorithm(&self) -> DigestAlgorithm {
        self.algorithm
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[HashRecord] {
        &self.records
    }

    pub fn contains(&self, digest: &ContentDigest) -> bool {
        self.index.contains_key(digest)
    }

    fn insert(&mut self, record: HashRecord) -> bool {
        if self.index.contains_key(&record.digest) {
            return false;
        }
        self.index.insert(record.digest.clone(), self.records.len());
        self.records.push(record);
        true
    }

    /// Adds a record. Returns false, without touching the file, for a known digest.
    pub fn add(&mut self, record: HashRecord) -> Result<bool, CloneError> {
        if self.contains(&record.digest) {
            return Ok(false);
        }
        if let Some(path) = &self.path {
            let mut file = OpenOptions::new().create(true).append(true).open(path)?;
            writeln!(file, "{}", record.to_line())?;
        }
        Ok(self.insert(record))
    }

    /// Registers the artifact's digest under its own name and version.
    pub fn register(&mut self, artifact: &PackageArtifact, added: &str) -> Result<ContentDigest, CloneError> {
        let digest = canonical_digest_with(artifact, self.algorithm);
        self.add(HashRecord {
            digest: digest.clone(),
            provenance: Provenance {
                package: artifact.name.clone(),
                version: artifact.version.clone(),
                added: added.to_owned(),
            },
        })?;
        Ok(digest)
    }

    pub fn lookup(&self, digest: &ContentDigest) -> Option<&Provenance> {
        self.index.get(digest).map(|&i| &self.records[i].provenance)
    }

    pub fn find_clone(&self, artifact: &PackageArtifact) -> Option<&Provenance> {
        self.lookup(&canonical_digest_with(artifact, self.algorithm))
    }

    /// Imports records from another hash-list; returns how many were new.
    pub fn import<R: BufRead>(&mut self, input: R) -> Result<usize, CloneError> {
        let mut added = 0;
        for record in read_records(input)? {
            added += usize::from(self.add(record)?);
        }
        Ok(added)
    }

    pub fn export<W: Write>(&self, mut out: W) -> Result<(), CloneError> {
        for r in &self.records {
            writeln!(out, "{}", r.to_line())?;
        }
        Ok(())
    }
}

/// Blank lines and `#` comments are ignored.
pub fn read_records<R: BufRead>(input: R) -> Result<Vec<HashRecord>, CloneError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        out.push(HashRecord::parse_line(line, i + 1)?);
    }
    Ok(out)
}
