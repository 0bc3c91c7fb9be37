//! Package documents and tarballs from an npm-compatible registry, or from
//! a fixture directory laid out as
//!
//! ```text
//! {dir}/{name}.meta              registry document (JSON)
//! {dir}/{name}-{version}.tgz     tarball
//! ```
//!
//! where a scoped name `@scope/pkg` maps to the subdirectory `@scope/`.
//! Fixture mode never touches the transport.

mod document;
mod integrity;
mod transport;

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use document::{PackageDocument, VersionInfo};
pub use integrity::{describe as describe_integrity, verify as verify_integrity, IntegrityCheck};
pub use transport::{HttpTransport, Response, Transport, TransportError};

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("transport: {0}")]
    Transport(String),
    #[error("malformed document: {0}")]
    Malformed(String),
    #[error("integrity mismatch for {package}@{version}: expected {expected}, got {actual}")]
    IntegrityMismatch {
        package: String,
        version: String,
        expected: String,
        actual: String,
    },
    #[error("invalid package name {0:?}")]
    InvalidName(String),
    #[error("window start {since} is after its end {until}")]
    InvalidWindow { since: f64, until: f64 },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "location", rename_all = "lowercase")]
pub enum SourceKind {
    Http(String),
    Fixture(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub attempts: u32,
    /// Doubles after every failed attempt.
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            initial_backoff: Duration::from_millis(500),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistrySource {
    pub kind: SourceKind,
    pub timeout: Duration,
    pub retry: RetryPolicy,
    /// CouchDB-style `_changes` endpoint consulted by [`RegistryClient::list_new_versions`]
    /// in HTTP mode when no name list is given. Off by default.
    pub changes_feed: Option<String>,
}

impl RegistrySource {
    pub fn http(base: impl Into<String>) -> Self {
        Self::with_kind(SourceKind::Http(base.into().trim_end_matches('/').to_owned()))
    }

    pub fn fixture(dir: impl Into<PathBuf>) -> Self {
        Self::with_kind(SourceKind::Fixture(dir.into()))
    }

    fn with_kind(kind: SourceKind) -> Self {
        Self {
            kind,
            timeout: Duration::from_secs(30),
            retry: RetryPolicy::default(),
            changes_feed: None,
        }
    }

    /// URLs (anything with a scheme) are HTTP sources, everything else is a
    /// fixture directory.
    pub fn parse(spec: &str) -> Self {
        if spec.starts_with("http://") || spec.starts_with("https://") {
            Self::http(spec)
        } else {
            Self::fixture(spec)
        }
    }
}

/// Checks the shape of a (possibly scoped) package name.
pub fn validate_name(name: &str) -> Result<(), RegistryError> {
    let bad = || RegistryError::InvalidName(name.to_owned());
    let (scope, base) = match name.strip_prefix('@') {
        Some(rest) => {
            let (s, b) = rest.split_once('/').ok_or_else(bad)?;
            (Some(s), b)
        }
        None => (None, name),
    };
    let part_ok = |p: &str| {
        !p.is_empty()
            && !p.starts_with('.')
            && !p.starts_with('_')
            && p.chars().all(|c| c.is_ascii_alphanumeric() || "-._~".contains(c))
    };
    if name.len() > 214 || !part_ok(base) || scope.is_some_and(|s| !part_ok(s)) {
        return Err(bad());
    }
    Ok(())
}

/// Path segment for a package name: `@s/p` becomes `@s%2Fp`.
pub fn encode_name(name: &str) -> String {
    name.replace('/', "%2F")
}

pub struct RegistryClient {
    source: RegistrySource,
    transport: Box<dyn Transport>,
    cache_dir: Option<PathBuf>,
    documents: Mutex<HashMap<String, PackageDocument>>,
}

impl std::fmt::Debug for RegistryClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RegistryClient")
            .field("source", &self.source)
            .field("cache_dir", &self.cache_dir)
            .finish_non_exhaustive()
    }
}

/// A version published inside a listing window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewVersion {
    pub package: String,
    pub version: String,
    pub published: f64,
}

impl RegistryClient {
    pub fn new(source: RegistrySource) -> Self {
        let transport = HttpTransport::new(source.timeout);
        Self::with_transport(source, Box::new(transport))
    }

    pub fn with_transport(source: RegistrySource, transport: Box<dyn Transport>) -> Self {
        Self {
            source,
            transport,
            cache_dir: None,
            documents: Mutex::new(HashMap::new()),
        }
    }

    /// Stores verified tarballs under `dir` and serves reruns from there.
    pub fn with_cache(mut self, dir: impl Into<PathBuf>) -> Self {
        self.cache_dir = Some(dir.into());
        self
    }

    pub fn source(&self) -> &RegistrySource {
        &self.source
    }

    fn get(&self, url: &str) -> Result<Vec<u8>, RegistryError> {
        let policy = self.source.retry;
        let mut backoff = policy.initial_backoff;
        let mut last = String::new();
        for attempt in 1..=policy.attempts.max(1) {
            match self.transport.get(url, self.source.timeout) {
                Ok(r) if r.status == 404 => return Err(RegistryError::NotFound(url.to_owned())),
                Ok(r) if (200..300).contains(&r.status) => return Ok(r.body),
                Ok(r) if (400..500).contains(&r.status) => {
                    return Err(RegistryError::Transport(format!("{url}: HTTP {}", r.status)))
                }
                Ok(r) => last = format!("{url}: HTTP {}", r.status),
                Err(e) => last = format!("{url}: {e}"),
            }
            if attempt < policy.attempts {
                log::warn!("attempt {attempt} failed ({last}); retrying in {backoff:?}");
                std::thread::sleep(backoff);
                backoff *= 2;
            }
        }
        Err(RegistryError::Transport(last))
    }

    fn fixture_path(dir: &Path, name: &str, suffix: &str) -> PathBuf {
        dir.join(format!("{name}{suffix}"))
    }

    /// Cached per client; a document is fetched at most once.
    pub fn fetch_document(&self, name: &str) -> Result<PackageDocument, RegistryError> {
        validate_name(name)?;
        if let Some(doc) = self.documents.lock().expect("document cache").get(name) {
            return Ok(doc.clone());
        }
        let body = match &self.source.kind {
            SourceKind::Fixture(dir) => {
                let path = Self::fixture_path(dir, name, ".meta");
                fs::read(&path).map_err(|e| match e.kind() {
                    std::io::ErrorKind::NotFound => RegistryError::NotFound(name.to_owned()),
                    _ => RegistryError::Io(e),
                })?
            }
            SourceKind::Http(base) => self.get(&format!("{base}/{}", encode_name(name)))?,
        };
        let doc = PackageDocument::parse(name, &body)?;
        for w in &doc.warnings {
            log::warn!("{w}");
        }
        self.documents
            .lock()
            .expect("document cache")
            .insert(name.to_owned(), doc.clone());
        Ok(doc)
    }

    fn cache_path(&self, name: &str, version: &str) -> Option<PathBuf> {
        self.cache_dir
            .as_ref()
            .map(|d| d.join(encode_name(name)).join(format!("{version}.tgz")))
    }

    /// Tarball bytes, verified against the document's declared digest. A
    /// missing digest is tolerated with a warning.
    pub fn fetch_tarball(&self, name: &str, version: &str) -> Result<Vec<u8>, RegistryError> {
        let doc = self.fetch_document(name)?;
        let info = doc.version(version)?;
        let cached = self.cache_path(name, version);
        if let Some(bytes) = cached.as_ref().and_then(|p| fs::read(p).ok()) {
            if self.check(name, version, info, &bytes).is_ok() {
                return Ok(bytes);
            }
            log::warn!("discarding cached tarball for {name}@{version}");
        }
        let bytes = match &self.source.kind {
            SourceKind::Fixture(dir) => {
                let path = Self::fixture_path(dir, name, &format!("-{version}.tgz"));
                fs::read(&path).map_err(|e| match e.kind() {
                    std::io::ErrorKind::NotFound => RegistryError::NotFound(format!("{name}@{version}")),
                    _ => RegistryError::Io(e),
                })?
            }
            SourceKind::Http(_) => {
                let url = info
                    .tarball
                    .as_deref()
                    .ok_or_else(|| RegistryError::Malformed(format!("{name}@{version} has no tarball URL")))?;
                self.get(url)?
            }
        };
        self.check(name, version, info, &bytes)?;
        if let Some(path) = cached {
            write_atomic(&path, &bytes)?;
        }
        Ok(bytes)
    }

    fn check(&self, name: &str, version: &str, info: &VersionInfo, bytes: &[u8]) -> Result<(), RegistryError> {
        match verify_integrity(bytes, info.integrity.as_deref(), info.shasum.as_deref()) {
            IntegrityCheck::Verified => Ok(()),
            IntegrityCheck::Absent => {
                log::warn!("{name}@{version} declares no integrity digest");
                Ok(())
            }
            IntegrityCheck::Mismatch { expected, actual } => Err(RegistryError::IntegrityMismatch {
                package: name.to_owned(),
                version: version.to_owned(),
                expected,
                actual,
            }),
        }
    }

    /// Fixture documents' names, sorted.
    fn fixture_names(dir: &Path) -> Result<Vec<String>, RegistryError> {
        let mut out = Vec::new();
        for entry in fs::read_dir(dir)? {
            let entry = entry?;
            let file = entry.file_name().to_string_lossy().into_owned();
            if entry.file_type()?.is_dir() && file.starts_with('@') {
                for inner in fs::read_dir(entry.path())? {
                    let inner = inner?.file_name().to_string_lossy().into_owned();
                    if let Some(n) = inner.strip_suffix(".meta") {
                        out.push(format!("{file}/{n}"));
                    }
                }
            } else if let Some(n) = file.strip_suffix(".meta") {
                out.push(n.to_owned());
            }
        }
        out.sort();
        Ok(out)
    }

    fn feed_names(&self, feed: &str) -> Result<Vec<String>, RegistryError> {
        let body = self.get(feed)?;
        let raw: serde_json::Value =
            serde_json::from_slice(&body).map_err(|e| RegistryError::Malformed(format!("changes feed: {e}")))?;
        let names: BTreeSet<String> = raw
            .get("results")
            .and_then(|r| r.as_array())
            .into_iter()
            .flatten()
            .filter_map(|r| r.get("id").and_then(|i| i.as_str()))
            .filter(|id| !id.starts_with("_design/"))
            .map(str::to_owned)
            .collect();
        Ok(names.into_iter().collect())
    }

    /// Versions published in `[since, until)`, sorted by time, then name and version.
    /// `names` restricts the scan; without it, fixture mode scans every
    /// document and HTTP mode reads the configured changes feed.
    pub fn list_new_versions(
        &self,
        since: f64,
        until: f64,
        names: Option<&[String]>,
    ) -> Result<Vec<NewVersion>, RegistryError> {
        if since > until {
            return Err(RegistryError::InvalidWindow { since, until });
        }
        let names: Vec<String> = match (names, &self.source.kind) {
            (Some(n), _) => n.to_vec(),
            (None, SourceKind::Fixture(dir)) => Self::fixture_names(dir)?,
            (None, SourceKind::Http(_)) => match &self.source.changes_feed {
                Some(feed) => self.feed_names(feed)?,
                None => Vec::new(),
            },
        };
        let mut out = Vec::new();
        for name in names {
            let doc = match self.fetch_document(&name) {
                Ok(d) => d,
                Err(RegistryError::NotFound(_)) => {
                    log::warn!("{name} vanished from the registry");
                    continue;
                }
                Err(e) => return Err(e),
            };
            for entry in doc.timeline().entries {
                if entry.published >= since && entry.published < until {
                    out.push(NewVersion {
                        package: doc.name.clone(),
                        version: entry.version,
                        published: entry.published,
                    });
                }
            }
        }
        out.sort_by(|a, b| {
            a.published
                .total_cmp(&b.published)
                .then_with(|| a.package.cmp(&b.package))
                .then_with(|| a.version.cmp(&b.version))
        });
        Ok(out)
    }
}

/// Write to a sibling temp file, then rename over the target.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), RegistryError> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.persist(path).map_err(|e| RegistryError::Io(e.error))?;
    Ok(())
}
