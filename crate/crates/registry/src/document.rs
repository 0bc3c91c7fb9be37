use std::collections::BTreeMap;

use malscan_core::versioning::{parse_timestamp, VersionTimeline};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::RegistryError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VersionInfo {
    /// The per-version manifest as published.
    pub manifest: Value,
    pub tarball: Option<String>,
    /// Subresource-integrity string, e.g. `sha512-<base64>`.
    pub integrity: Option<String>,
    /// Legacy hex SHA-1.
    pub shasum: Option<String>,
}

/// A registry package document reduced to what the pipeline needs.
/// Timestamps are UTC seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackageDocument {
    pub name: String,
    pub revision: Option<String>,
    pub versions: BTreeMap<String, VersionInfo>,
    pub time: BTreeMap<String, f64>,
    pub warnings: Vec<String>,
}

impl PackageDocument {
    pub fn parse(name: &str, body: &[u8]) -> Result<Self, RegistryError> {
        let raw: Value = serde_json::from_slice(body).map_err(|e| RegistryError::Malformed(format!("{name}: {e}")))?;
        Self::from_value(name, &raw)
    }

    pub fn from_value(name: &str, raw: &Value) -> Result<Self, RegistryError> {
        let malformed = |what: &str| RegistryError::Malformed(format!("{name}: {what}"));
        let obj = raw.as_object().ok_or_else(|| malformed("document is not an object"))?;
        let mut warnings = Vec::new();

        let mut versions = BTreeMap::new();
        if let Some(vs) = obj.get("versions") {
            let vs = vs.as_object().ok_or_else(|| malformed("`versions` is not an object"))?;
            for (v, manifest) in vs {
                let dist = manifest.get("dist");
                let text = |key: &str| dist.and_then(|d| d.get(key)).and_then(Value::as_str).map(str::to_owned);
                versions.insert(
                    v.clone(),
                    VersionInfo {
                        manifest: manifest.clone(),
                        tarball: text("tarball"),
                        integrity: text("integrity"),
                        shasum: text("shasum"),
                    },
                );
            }
        }

        let mut time = BTreeMap::new();
        if let Some(t) = obj.get("time") {
            let t = t.as_object().ok_or_else(|| malformed("`time` is not an object"))?;
            for (k, stamp) in t {
                if k == "created" || k == "modified" {
                    continue;
                }
                let stamp = stamp.as_str().ok_or_else(|| malformed(&format!("time of {k} is not a string")))?;
                let secs = parse_timestamp(stamp).map_err(|e| malformed(&e.to_string()))?;
                time.insert(k.clone(), secs);
            }
        }
        for v in versions.keys() {
            if !time.contains_key(v) {
                warnings.push(format!("{name}@{v} has no publication time"));
            }
        }

        Ok(Self {
            name: obj.get("name").and_then(Value::as_str).unwrap_or(name).to_owned(),
            revision: obj.get("_rev").and_then(Value::as_str).map(str::to_owned),
            versions,
            time,
            warnings,
        })
    }

    /// Chronology of the versions that are both listed and timestamped.
    /// Unpublished versions that only survive in the time map are left out.
    pub fn timeline(&self) -> VersionTimeline {
        VersionTimeline::new(
            self.name.clone(),
            self.time
                .iter()
                .filter(|(v, _)| self.versions.contains_key(*v))
                .map(|(v, t)| (v.clone(), *t)),
        )
    }

    pub fn version(&self, version: &str) -> Result<&VersionInfo, RegistryError> {
        self.versions
            .get(version)
            .ok_or_else(|| RegistryError::NotFound(format!("{}@{version}", self.name)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn parses_versions_and_times() {
        let raw = json!({
            "_rev": "3-abc",
            "name": "mogodb",
            "versions": {
                "3.1.8": {"name": "mogodb", "version": "3.1.8", "dist": {"tarball": "https://r/mogodb-3.1.8.tgz", "shasum": "00"}},
                "3.1.9": {"name": "mogodb", "version": "3.1.9", "dist": {"integrity": "sha512-AA=="}}
            },
            "time": {
                "created": "2019-08-01T10:00:00.000Z",
                "modified": "2019-08-01T10:05:00.000Z",
                "3.1.8": "2019-08-01T10:00:00.100Z",
                "3.1.9": "2019-08-01T10:00:00.100500Z"
            }
        });
        let doc = PackageDocument::from_value("mogodb", &raw).unwrap();
        assert_eq!(doc.versions.len(), 2);
        assert_eq!(doc.time.len(), 2);
        assert!(doc.warnings.is_empty());
        assert_eq!(doc.revision.as_deref(), Some("3-abc"));
        assert_eq!(doc.versions["3.1.8"].shasum.as_deref(), Some("00"));
        let tl = doc.timeline();
        assert_eq!(tl.previous_version("3.1.9").unwrap().unwrap().version, "3.1.8");
    }

    #[test]
    fn missing_time_is_a_warning() {
        let raw = json!({"name": "a", "versions": {"1.0.0": {}}, "time": {"0.9.0": "2020-01-01T00:00:00Z"}});
        let doc = PackageDocument::from_value("a", &raw).unwrap();
        assert_eq!(doc.warnings.len(), 1);
        assert!(doc.timeline().entries.is_empty());
    }

    #[test]
    fn malformed_documents() {
        assert!(matches!(PackageDocument::parse("a", b"not json"), Err(RegistryError::Malformed(_))));
        let raw = json!({"time": {"1.0.0": "yesterday"}});
        assert!(matches!(PackageDocument::from_value("a", &raw), Err(RegistryError::Malformed(_))));
    }
}
