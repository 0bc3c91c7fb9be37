//! Single-version features of a package.
//!
//! Seven capability counts come from token-level pattern matching over the
//! JavaScript/TypeScript sources, one count from the manifest's install
//! hooks, and two numbers summarize the byte entropy of every file in the
//! package (minified or binary content pushes entropy up).

mod entropy;
pub mod lexer;
mod patterns;

use serde::{Deserialize, Serialize};

pub use entropy::{entropy_stats, shannon_entropy};
pub use patterns::{PatternFeature, PatternRule, PatternTable, PatternTableError};

use crate::package::{Manifest, PackageArtifact};
use crate::Scalar;

/// Manifest script hooks run automatically by `npm install`.
pub const INSTALL_HOOKS: [&str; 3] = ["preinstall", "install", "postinstall"];

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct FeatureVector<T> {
    pub pii_access: u64,
    pub fs_access: u64,
    pub process_creation: u64,
    pub network_access: u64,
    pub crypto_api: u64,
    pub data_encoding: u64,
    pub dynamic_code: u64,
    pub install_scripts: u64,
    pub entropy_mean: T,
    pub entropy_std: T,
}

impl<T: Scalar> FeatureVector<T> {
    pub const COUNT_NAMES: [&'static str; 8] = [
        "pii_access",
        "fs_access",
        "process_creation",
        "network_access",
        "crypto_api",
        "data_encoding",
        "dynamic_code",
        "install_scripts",
    ];

    pub fn zero() -> Self {
        Self {
            pii_access: 0,
            fs_access: 0,
            process_creation: 0,
            network_access: 0,
            crypto_api: 0,
            data_encoding: 0,
            dynamic_code: 0,
            install_scripts: 0,
            entropy_mean: T::zero(),
            entropy_std: T::zero(),
        }
    }

    pub fn counts(&self) -> [u64; 8] {
        [
            self.pii_access,
            self.fs_access,
            self.process_creation,
            self.network_access,
            self.crypto_api,
            self.data_encoding,
            self.dynamic_code,
            self.install_scripts,
        ]
    }

    pub fn pattern_count(&self, feature: PatternFeature) -> u64 {
        self.counts()[feature.index()]
    }

    fn set_pattern_counts(&mut self, c: [u64; 7]) {
        self.pii_access = c[0];
        self.fs_access = c[1];
        self.process_creation = c[2];
        self.network_access = c[3];
        self.crypto_api = c[4];
        self.data_encoding = c[5];
        self.dynamic_code = c[6];
    }

    /// The ten features as reals, in column order.
    pub fn to_values(&self) -> [T; 10] {
        let c = self.counts();
        let mut out = [T::zero(); 10];
        for (slot, count) in out.iter_mut().zip(c) {
            *slot = T::of(count as f64);
        }
        out[8] = self.entropy_mean;
        out[9] = self.entropy_std;
        out
    }
}

/// Features plus the non-fatal problems encountered while computing them.
#[derive(Debug, Clone, PartialEq)]
pub struct Extraction<T> {
    pub features: FeatureVector<T>,
    pub warnings: Vec<String>,
}

/// Number of install hooks declared with a non-empty command.
pub fn count_install_scripts(manifest: &Manifest) -> u64 {
    INSTALL_HOOKS
        .iter()
        .filter(|hook| manifest.script(hook).is_some())
        .count() as u64
}

pub fn extract_features<T: Scalar>(
    artifact: &PackageArtifact,
    table: &PatternTable,
) -> FeatureVector<T> {
    extract_features_with_warnings(artifact, table).features
}

pub fn extract_features_with_warnings<T: Scalar>(
    artifact: &PackageArtifact,
    table: &PatternTable,
) -> Extraction<T> {
    let mut warnings = Vec::new();
    let mut counts = [0u64; 7];
    for file in artifact.source_files_with(&table.source_extensions) {
        let Ok(text) = std::str::from_utf8(&file.content) else {
            warnings.push(format!("{}: not valid UTF-8, skipped by the scanner", file.path));
            continue;
        };
        for (total, n) in counts.iter_mut().zip(table.count_matches(text)) {
            *total += n;
        }
    }
    for w in &warnings {
        log::warn!("{}@{}: {w}", artifact.name, artifact.version);
    }

    let mut features = FeatureVector::zero();
    features.set_pattern_counts(counts);
    if !artifact.files.is_empty() {
        features.install_scripts = count_install_scripts(&artifact.manifest);
    }
    let (mean, std) = entropy_stats(artifact);
    features.entropy_mean = mean;
    features.entropy_std = std;
    Extraction { features, warnings }
}
