//! Scanning a batch of versions, recording triage and retraining.

use std::fmt;
use std::str::FromStr;

use malscan_core::classifiers::{corpus_hash, ModelFlags, TrainingMetadata};
use malscan_core::clone::{canonical_digest_with, CloneError, HashRecord};
use malscan_core::versioning::time_between;
use malscan_core::{
    build_change_vector, classify_update, extract_features, load_tarball, make_plan, reproduce, ChangeVectorF64,
    FeatureVectorF64, LabeledDataset, MalwareHashSet, ModelKind, ModelSetF64, PackageArtifact, PatternTable,
    Provenance, ReproduceConfig, ReproduceResult, ReproduceStatus, SemVer, TrainConfig, UpdateType,
};
use malscan_registry::RegistryClient;
use rayon::prelude::*;
use thiserror::Error;

use crate::stores::{CorpusStore, ModelStore, StoreError};
use crate::verdict::{derive_status, Triage, Verdict};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("no trained models; run `train` or `retrain` first")]
    NoModels,
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Clone(#[from] CloneError),
    #[error("too few samples to train any model: {0}")]
    TooFewSamples(String),
    #[error("invalid package spec {0:?} (expected name@version)")]
    InvalidSpec(String),
    #[error("worker pool: {0}")]
    Pool(String),
}

/// One `name@version` to scan.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ScanItem {
    pub package: String,
    pub version: String,
}

impl ScanItem {
    pub fn new(package: impl Into<String>, version: impl Into<String>) -> Self {
        Self {
            package: package.into(),
            version: version.into(),
        }
    }
}

impl fmt::Display for ScanItem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.package, self.version)
    }
}

impl FromStr for ScanItem {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        // the leading @ of a scoped name is not the separator
        match s.rfind('@') {
            Some(i) if i > 0 && i + 1 < s.len() => Ok(Self::new(&s[..i], &s[i + 1..])),
            _ => Err(PipelineError::InvalidSpec(s.to_owned())),
        }
    }
}

/// Everything a scan learned about one version.
#[derive(Debug, Clone)]
pub struct ScanRecord {
    pub verdict: Verdict,
    /// Absent when the item failed before vectorization.
    pub vector: Option<ChangeVectorF64>,
    pub reproduce: Option<ReproduceResult>,
}

pub struct Scanner<'a> {
    pub registry: &'a RegistryClient,
    pub models: &'a ModelSetF64,
    pub hashes: &'a MalwareHashSet,
    pub patterns: &'a PatternTable,
    /// `None` skips the reproducer; flagged versions then stay flagged.
    pub reproduce: Option<&'a ReproduceConfig>,
    pub jobs: usize,
}

impl Scanner<'_> {
    /// Scans the batch in (package, version) order, duplicates removed.
    /// Per-item failures become error verdicts.
    pub fn scan(&self, batch: &[ScanItem]) -> Result<Vec<ScanRecord>, PipelineError> {
        if self.models.is_empty() {
            return Err(PipelineError::NoModels);
        }
        let mut items = batch.to_vec();
        items.sort();
        items.dedup();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs.max(1))
            .build()
            .map_err(|e| PipelineError::Pool(e.to_string()))?;
        Ok(pool.install(|| items.par_iter().map(|item| self.scan_one(item)).collect()))
    }

    fn scan_one(&self, item: &ScanItem) -> ScanRecord {
        let (vector, artifact) = match self.vectorize(item) {
            Ok(v) => v,
            Err(message) => {
                log::warn!("{item}: {message}");
                return ScanRecord {
                    verdict: Verdict::error(&item.package, &item.version, message),
                    vector: None,
                    reproduce: None,
                };
            }
        };
        let flags: ModelFlags = match self.models.flags(&vector) {
            Ok(f) => f,
            Err(e) => {
                return ScanRecord {
                    verdict: Verdict::error(&item.package, &item.version, format!("prediction: {e}")),
                    vector: Some(vector),
                    reproduce: None,
                }
            }
        };
        let digest = canonical_digest_with(&artifact, self.hashes.algorithm());
        let clone_match: Option<Provenance> = self.hashes.lookup(&digest).cloned();

        let model_flagged = flags.values().any(|l| l.is_malicious());
        let repro = match self.reproduce {
            Some(config) if model_flagged => Some(match make_plan(&artifact.manifest, &item.version, config) {
                Some(plan) => reproduce(&plan, &artifact, config),
                None => ReproduceResult {
                    status: ReproduceStatus::NoRepo,
                    resolved_ref: None,
                    diff: Vec::new(),
                    logs: vec!["no usable repository field".into()],
                },
            }),
            _ => None,
        };
        let reproduce_status = repro.as_ref().map(|r| r.status);
        let status = derive_status(&flags, clone_match.as_ref(), reproduce_status, false);
        ScanRecord {
            verdict: Verdict {
                package: item.package.clone(),
                version: item.version.clone(),
                update_type: Some(vector.update_type),
                flags,
                clone_match,
                reproduce: reproduce_status,
                status,
                triage: None,
                digest: Some(digest),
                error: None,
            },
            vector: Some(vector),
            reproduce: repro,
        }
    }

    fn fetch(&self, package: &str, version: &str) -> Result<PackageArtifact, String> {
        let bytes = self
            .registry
            .fetch_tarball(package, version)
            .map_err(|e| format!("fetch {package}@{version}: {e}"))?;
        load_tarball(&bytes).map_err(|e| format!("parse {package}@{version}: {e}"))
    }

    /// Fetches the version and its chronological predecessor and builds the
    /// change vector.
    pub fn vectorize(&self, item: &ScanItem) -> Result<(ChangeVectorF64, PackageArtifact), String> {
        let doc = self.registry.fetch_document(&item.package).map_err(|e| e.to_string())?;
        let timeline = doc.timeline();
        let previous = if timeline.contains(&item.version) {
            timeline.previous_version(&item.version).map_err(|e| e.to_string())?.cloned()
        } else {
            log::warn!("{item}: no publication time, treated as a first version");
            None
        };
        let artifact = self.fetch(&item.package, &item.version)?;
        let current: FeatureVectorF64 = extract_features(&artifact, self.patterns);
        let vector = match previous {
            None => build_change_vector(&item.package, &item.version, None, &current, UpdateType::First, 0.0),
            Some(prev) => {
                let parse = |v: &str| SemVer::parse(v).map_err(|e| e.to_string());
                let update = classify_update(&parse(&prev.version)?, &parse(&item.version)?);
                let published = timeline.published(&item.version).map_err(|e| e.to_string())?;
                let dt = time_between(prev.published, published).map_err(|e| e.to_string())?;
                let prev_features: FeatureVectorF64 =
                    extract_features(&self.fetch(&item.package, &prev.version)?, self.patterns);
                build_change_vector(&item.package, &item.version, Some(&prev_features), &current, update, dt)
            }
        }
        .map_err(|e| e.to_string())?;
        Ok((vector, artifact))
    }
}

/// Stores every vectorized record with its verdict. Returns how many
/// entries changed.
pub fn record_scan(corpus: &mut CorpusStore, records: &[ScanRecord]) -> Result<usize, StoreError> {
    let mut changed = 0;
    for r in records {
        if let Some(v) = &r.vector {
            changed += usize::from(corpus.observe(v.clone(), Some(r.verdict.clone()))?);
        }
    }
    Ok(changed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelOutcome {
    pub previous: Option<Triage>,
    /// Set when a true positive added a new digest to the hash set.
    pub registered: Option<HashRecord>,
}

/// Records a triage decision. A true positive also registers the version's
/// canonical digest as known malware.
pub fn label(
    corpus: &mut CorpusStore,
    hashes: &mut MalwareHashSet,
    item: &ScanItem,
    triage: Triage,
    today: &str,
) -> Result<LabelOutcome, PipelineError> {
    let previous = corpus.label(&item.package, &item.version, triage)?;
    let mut registered = None;
    if triage == Triage::TruePositive {
        let digest = corpus
            .get(&item.package, &item.version)
            .and_then(|e| e.verdict.as_ref())
            .and_then(|v| v.digest.clone());
        match digest {
            Some(digest) => {
                let record = HashRecord {
                    digest,
                    provenance: Provenance {
                        package: item.package.clone(),
                        version: item.version.clone(),
                        added: today.to_owned(),
                    },
                };
                if hashes.add(record.clone())? {
                    registered = Some(record);
                }
            }
            None => log::warn!("{item}: no scanned digest on record, hash set unchanged"),
        }
    }
    Ok(LabelOutcome { previous, registered })
}

#[derive(Debug)]
pub struct RetrainOutcome {
    pub model_version: u64,
    pub trained: Vec<ModelKind>,
    pub skipped: Vec<(ModelKind, String)>,
    pub rows: usize,
    pub corpus_hash: String,
}

/// Trains whichever models the vectors support and persists them as the
/// next model version.
pub fn train_and_save(
    vectors: &[ChangeVectorF64],
    store: &ModelStore,
    config: &TrainConfig,
    seed: u64,
) -> Result<RetrainOutcome, PipelineError> {
    let outcome = ModelSetF64::train(vectors, config);
    let skipped: Vec<(ModelKind, String)> = outcome.failures.iter().map(|(k, e)| (*k, e.to_string())).collect();
    let models = outcome.models.models();
    if models.is_empty() {
        let reasons: Vec<String> = skipped.iter().map(|(k, e)| format!("{k}: {e}")).collect();
        return Err(PipelineError::TooFewSamples(reasons.join("; ")));
    }
    let hash = corpus_hash(&LabeledDataset::full(vectors));
    let rows = vectors.iter().filter(|v| v.label.is_some()).count();
    let metadata = TrainingMetadata {
        model_version: 0,
        corpus_hash: hash.clone(),
        trained_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        training_rows: rows,
        seed,
    };
    let model_version = store.save(&models, metadata)?;
    Ok(RetrainOutcome {
        model_version,
        trained: models.iter().map(|m| m.kind()).collect(),
        skipped,
        rows,
        corpus_hash: hash,
    })
}

pub fn retrain(
    corpus: &CorpusStore,
    store: &ModelStore,
    assume_unflagged_benign: bool,
    config: &TrainConfig,
    seed: u64,
) -> Result<RetrainOutcome, PipelineError> {
    train_and_save(&corpus.training_vectors(assume_unflagged_benign), store, config, seed)
}
