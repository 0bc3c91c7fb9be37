//! Decoding of npm package tarballs into an in-memory artifact.
//!
//! A tarball is a gzip-compressed tar stream whose entries live under a
//! single top-level directory (conventionally `package/`). The first path
//! component of every entry is stripped, paths are normalized to forward
//! slashes and the resulting file list is sorted so that downstream
//! consumers never observe archive entry order.

use std::collections::BTreeMap;
use std::io::Read;

use flate2::read::GzDecoder;
use serde_json::Value;
use thiserror::Error;

/// File extensions treated as JavaScript or TypeScript sources.
pub const DEFAULT_SOURCE_EXTENSIONS: &[&str] = &[".js", ".mjs", ".cjs", ".jsx", ".ts", ".tsx"];

pub const MANIFEST_PATH: &str = "package.json";

#[derive(Debug, Error)]
pub enum PackageError {
    #[error("corrupt archive: {0}")]
    CorruptArchive(String),
    #[error("archive has no root package.json")]
    MissingManifest,
    #[error("package.json is not well-formed: {0}")]
    ManifestParse(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileEntry {
    pub path: String,
    pub content: Vec<u8>,
}

impl FileEntry {
    pub fn new(path: impl Into<String>, content: impl Into<Vec<u8>>) -> Self {
        Self {
            path: path.into(),
            content: content.into(),
        }
    }

    pub fn has_extension(&self, extensions: &[&str]) -> bool {
        extensions.iter().any(|ext| self.path.ends_with(ext))
    }
}

/// The parts of `package.json` the pipeline cares about, plus the raw document.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub name: String,
    pub version: String,
    pub scripts: BTreeMap<String, String>,
    pub repository_url: Option<String>,
    /// Commit the version was built from (`gitHead` in registry manifests).
    pub repository_commit: Option<String>,
    pub dependencies: BTreeMap<String, String>,
    pub raw: Value,
}

impl Manifest {
    pub fn parse(bytes: &[u8]) -> Result<Self, PackageError> {
        let raw: Value =
            serde_json::from_slice(bytes).map_err(|e| PackageError::ManifestParse(e.to_string()))?;
        Self::from_value(raw)
    }

    pub fn from_value(raw: Value) -> Result<Self, PackageError> {
        let obj = raw
            .as_object()
            .ok_or_else(|| PackageError::ManifestParse("top level is not an object".into()))?;
        let text = |key: &str| obj.get(key).and_then(Value::as_str).map(str::to_owned);
        let string_map = |key: &str| -> BTreeMap<String, String> {
            obj.get(key)
                .and_then(Value::as_object)
                .map(|m| {
                    m.iter()
                        .filter_map(|(k, v)| v.as_str().map(|s| (k.clone(), s.to_owned())))
                        .collect()
                })
                .unwrap_or_default()
        };

        let repository_url = match obj.get("repository") {
            Some(Value::String(s)) => Some(s.clone()),
            Some(Value::Object(m)) => m.get("url").and_then(Value::as_str).map(str::to_owned),
            _ => None,
        };
        let repository_commit = text("gitHead").or_else(|| {
            obj.get("repository")
                .and_then(|r| r.get("commit"))
                .and_then(Value::as_str)
                .map(str::to_owned)
        });

        Ok(Self {
            name: text("name").unwrap_or_default(),
            version: text("version").unwrap_or_default(),
            scripts: string_map("scripts"),
            repository_url,
            repository_commit,
            dependencies: string_map("dependencies"),
            raw,
        })
    }

    pub fn script(&self, name: &str) -> Option<&str> {
        self.scripts
            .get(name)
            .map(String::as_str)
            .filter(|s| !s.trim().is_empty())
    }
}

/// A decoded package version. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct PackageArtifact {
    pub name: String,
    pub version: String,
    pub files: Vec<FileEntry>,
    pub manifest: Manifest,
    pub warnings: Vec<String>,
}

impl PackageArtifact {
    /// Builds an artifact from already-normalized parts. Files are sorted.
    pub fn from_parts(manifest: Manifest, mut files: Vec<FileEntry>) -> Self {
        files.sort_by(|a, b| a.path.cmp(&b.path));
        Self {
            name: manifest.name.clone(),
            version: manifest.version.clone(),
            files,
            manifest,
            warnings: Vec::new(),
        }
    }

    pub fn file(&self, path: &str) -> Option<&FileEntry> {
        self.files
            .binary_search_by(|f| f.path.as_str().cmp(path))
            .ok()
            .map(|i| &self.files[i])
    }

    pub fn source_files(&self) -> Vec<&FileEntry> {
        self.source_files_with(DEFAULT_SOURCE_EXTENSIONS)
    }

    pub fn source_files_with<S: AsRef<str>>(&self, extensions: &[S]) -> Vec<&FileEntry> {
        let exts: Vec<&str> = extensions.iter().map(AsRef::as_ref).collect();
        self.files.iter().filter(|f| f.has_extension(&exts)).collect()
    }
}

/// Decodes a gzip-compressed npm tarball.
pub fn load_tarball(bytes: &[u8]) -> Result<PackageArtifact, PackageError> {
    let mut archive = tar::Archive::new(GzDecoder::new(bytes));
    let entries = archive
        .entries()
        .map_err(|e| PackageError::CorruptArchive(e.to_string()))?;

    let mut files: BTreeMap<String, Vec<u8>> = BTreeMap::new();
    let mut warnings = Vec::new();
    for entry in entries {
        let mut entry = entry.map_err(|e| PackageError::CorruptArchive(e.to_string()))?;
        let kind = entry.header().entry_type();
        let raw_path = entry
            .path_bytes()
            .into_owned();
        let raw_path = String::from_utf8_lossy(&raw_path).into_owned();
        use tar::EntryType as T;
        match kind {
            T::Regular | T::Continuous | T::GNUSparse => {}
            T::Directory | T::XGlobalHeader | T::XHeader | T::GNULongName | T::GNULongLink => {
                continue
            }
            T::Symlink | T::Link => {
                return Err(PackageError::CorruptArchive(format!(
                    "link entry not allowed: {raw_path}"
                )))
            }
            other => {
                return Err(PackageError::CorruptArchive(format!(
                    "unsupported entry type {other:?}: {raw_path}"
                )))
            }
        }
        let path = normalize_entry_path(&raw_path)?;
        let mut content = Vec::with_capacity(entry.size() as usize);
        entry
            .read_to_end(&mut content)
            .map_err(|e| PackageError::CorruptArchive(e.to_string()))?;
        if files.insert(path.clone(), content).is_some() {
            warnings.push(format!("duplicate archive entry {path}; last one kept"));
        }
    }

    let manifest_bytes = files.get(MANIFEST_PATH).ok_or(PackageError::MissingManifest)?;
    let manifest = Manifest::parse(manifest_bytes)?;
    let files = files
        .into_iter()
        .map(|(path, content)| FileEntry { path, content })
        .collect();
    let mut artifact = PackageArtifact::from_parts(manifest, files);
    artifact.warnings = warnings;
    Ok(artifact)
}

/// Decodes a tarball fetched under known registry coordinates, recording a
/// warning when the manifest disagrees with them.
pub fn load_tarball_for(
    bytes: &[u8],
    name: &str,
    version: &str,
) -> Result<PackageArtifact, PackageError> {
    let mut artifact = load_tarball(bytes)?;
    if artifact.manifest.name != name || artifact.manifest.version != version {
        artifact.warnings.push(format!(
            "manifest says {}@{} but artifact was fetched as {name}@{version}",
            artifact.manifest.name, artifact.manifest.version
        ));
    }
    Ok(artifact)
}

/// Strips the archive prefix and canonicalizes an entry path.
fn normalize_entry_path(raw: &str) -> Result<String, PackageError> {
    let unified = raw.replace('\\', "/");
    if unified.starts_with('/') || has_drive_prefix(&unified) {
        return Err(PackageError::CorruptArchive(format!("absolute path: {raw}")));
    }
    let mut segments: Vec<&str> = unified
        .split('/')
        .filter(|s| !s.is_empty() && *s != ".")
        .collect();
    if segments.contains(&"..") {
        return Err(PackageError::CorruptArchive(format!("path traversal: {raw}")));
    }
    if segments.len() > 1 {
        segments.remove(0);
    }
    if segments.is_empty() {
        return Err(PackageError::CorruptArchive(format!("empty path: {raw:?}")));
    }
    Ok(segments.join("/"))
}

fn has_drive_prefix(path: &str) -> bool {
    let b = path.as_bytes();
    b.len() >= 2 && b[0].is_ascii_alphabetic() && b[1] == b':'
}
