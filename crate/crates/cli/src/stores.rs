//! Plain-file stores: the labelled corpus (an append-only event log) and
//! the directory of persisted models.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use malscan_core::classifiers::{ModelDocument, TrainingMetadata};
use malscan_core::{ChangeVectorF64, Label, Model, ModelKind, ModelSetF64};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::verdict::{FinalStatus, Triage, Verdict};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: {reason}")]
    Format { path: PathBuf, line: usize, reason: String },
    #[error("no scanned or imported record for {0}@{1}")]
    UnknownVersion(String, String),
    #[error("model {path}: {reason}")]
    Model { path: PathBuf, reason: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub const CORPUS_FORMAT: &str = "malscan-corpus";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CorpusHeader {
    format: String,
    version: u32,
}

// observations dominate the log, so boxing them would buy nothing
#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum CorpusEvent {
    /// A change vector entering the corpus, from a scan (with its verdict)
    /// or from an imported dataset (with the vector's own label).
    Observe {
        vector: ChangeVectorF64,
        #[serde(default)]
        verdict: Option<Verdict>,
        at: String,
    },
    Label {
        package: String,
        version: String,
        triage: Triage,
        #[serde(default)]
        previous: Option<Triage>,
        at: String,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusEntry {
    pub vector: ChangeVectorF64,
    pub verdict: Option<Verdict>,
    pub triage: Option<Triage>,
    pub observed_at: String,
    pub labeled_at: Option<String>,
}

impl CorpusEntry {
    /// A triage label overrides the label an imported vector came with.
    pub fn label(&self) -> Option<Label> {
        self.triage.map(Triage::label).or(self.vector.label)
    }

    /// The stored verdict with the current triage applied.
    pub fn current_verdict(&self) -> Option<Verdict> {
        self.verdict.clone().map(|mut v| {
            v.triage = self.triage;
            v
        })
    }
}

/// Entries are unique per (package, version); later events win, and every
/// event stays in the file.
#[derive(Debug, Default)]
pub struct CorpusStore {
    path: Option<PathBuf>,
    entries: BTreeMap<(String, String), CorpusEntry>,
    events: Vec<CorpusEvent>,
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

impl CorpusStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn open(path: &Path) -> Result<Self, StoreError> {
        let mut store = Self {
            path: Some(path.to_path_buf()),
            ..Self::default()
        };
        if !path.exists() {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(io_err(dir))?;
            }
            let header = CorpusHeader {
                format: CORPUS_FORMAT.into(),
                version: 1,
            };
            fs::write(path, format!("{}\n", serde_json::to_string(&header).expect("header"))).map_err(io_err(path))?;
            return Ok(store);
        }
        let file = File::open(path).map_err(io_err(path))?;
        let bad = |line: usize, reason: String| StoreError::Format {
            path: path.to_path_buf(),
            line,
            reason,
        };
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(io_err(path))?;
            if line.trim().is_empty() {
                continue;
            }
            if i == 0 {
                let header: CorpusHeader = serde_json::from_str(&line).map_err(|e| bad(1, e.to_string()))?;
                if header.format != CORPUS_FORMAT || header.version != 1 {
                    return Err(bad(1, format!("unsupported corpus {} v{}", header.format, header.version)));
                }
                continue;
            }
            let event: CorpusEvent = serde_json::from_str(&line).map_err(|e| bad(i + 1, e.to_string()))?;
            store.apply(event);
        }
        Ok(store)
    }

    fn apply(&mut self, event: CorpusEvent) {
        match &event {
            CorpusEvent::Observe { vector, verdict, at } => {
                let key = (vector.package.clone(), vector.version.clone());
                let previous = self.entries.remove(&key);
                self.entries.insert(
                    key,
                    CorpusEntry {
                        vector: vector.clone(),
                        verdict: verdict.clone(),
                        triage: previous.as_ref().and_then(|p| p.triage),
                        observed_at: at.clone(),
                        labeled_at: previous.and_then(|p| p.labeled_at),
                    },
                );
            }
            CorpusEvent::Label {
                package,
                version,
                triage,
                at,
                ..
            } => {
                if let Some(e) = self.entries.get_mut(&(package.clone(), version.clone())) {
                    e.triage = Some(*triage);
                    e.labeled_at = Some(at.clone());
                }
            }
        }
        self.events.push(event);
    }

    fn append(&mut self, event: CorpusEvent) -> Result<(), StoreError> {
        if let Some(path) = &self.path {
            let mut f = OpenOptions::new().append(true).open(path).map_err(io_err(path))?;
            writeln!(f, "{}", serde_json::to_string(&event).expect("event serializes")).map_err(io_err(path))?;
        }
        self.apply(event);
        Ok(())
    }

    /// Records a vector; a repeat of the stored vector and verdict is a no-op.
    pub fn observe(&mut self, vector: ChangeVectorF64, verdict: Option<Verdict>) -> Result<bool, StoreError> {
        if let Some(e) = self.get(&vector.package, &vector.version) {
            let same_verdict = match (&e.verdict, &verdict) {
                (Some(a), Some(b)) => {
                    let mut b = b.clone();
                    b.triage = a.triage;
                    *a == b
                }
                (None, None) => true,
                _ => false,
            };
            if e.vector == vector && same_verdict {
                return Ok(false);
            }
        }
        self.append(CorpusEvent::Observe {
            vector,
            verdict,
            at: now(),
        })?;
        Ok(true)
    }

    /// Returns the label it replaced, if any.
    pub fn label(&mut self, package: &str, version: &str, triage: Triage) -> Result<Option<Triage>, StoreError> {
        let previous = self
            .get(package, version)
            .ok_or_else(|| StoreError::UnknownVersion(package.to_owned(), version.to_owned()))?
            .triage;
        if previous.is_some_and(|p| p != triage) {
            log::warn!("{package}@{version}: relabelled {} -> {triage}", previous.unwrap());
        }
        self.append(CorpusEvent::Label {
            package: package.to_owned(),
            version: version.to_owned(),
            triage,
            previous,
            at: now(),
        })?;
        Ok(previous)
    }

    pub fn get(&self, package: &str, version: &str) -> Option<&CorpusEntry> {
        self.entries.get(&(package.to_owned(), version.to_owned()))
    }

    pub fn entries(&self) -> impl Iterator<Item = &CorpusEntry> {
        self.entries.values()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn events(&self) -> &[CorpusEvent] {
        &self.events
    }

    /// Label events for one version, oldest first.
    pub fn label_history(&self, package: &str, version: &str) -> Vec<&CorpusEvent> {
        self.events
            .iter()
            .filter(|e| matches!(e, CorpusEvent::Label { package: p, version: v, .. } if p == package && v == version))
            .collect()
    }

    /// Labelled vectors in (package, version) order. With
    /// `assume_unflagged_benign`, unlabelled versions whose scan came back
    /// clean are added as benign.
    pub fn training_vectors(&self, assume_unflagged_benign: bool) -> Vec<ChangeVectorF64> {
        self.entries()
            .filter_map(|e| {
                let label = e.label().or_else(|| {
                    let clean = e.verdict.as_ref().is_some_and(|v| v.status == FinalStatus::Clean);
                    (assume_unflagged_benign && clean).then_some(Label::Benign)
                })?;
                Some(e.vector.clone().with_label(label))
            })
            .collect()
    }

    pub fn verdicts(&self) -> Vec<Verdict> {
        self.entries().filter_map(CorpusEntry::current_verdict).collect()
    }
}

/// A directory holding one document per model kind.
#[derive(Debug, Clone)]
pub struct ModelStore {
    dir: PathBuf,
}

impl ModelStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn path_for(&self, kind: ModelKind) -> PathBuf {
        self.dir.join(format!("{}.json", kind.id()))
    }

    pub fn load_documents(&self) -> Result<Vec<ModelDocument<f64>>, StoreError> {
        let mut out = Vec::new();
        for kind in ModelKind::ALL {
            let path = self.path_for(kind);
            if !path.exists() {
                continue;
            }
            let text = fs::read_to_string(&path).map_err(io_err(&path))?;
            let doc = ModelDocument::from_json(&text).map_err(|e| StoreError::Model {
                path: path.clone(),
                reason: e.to_string(),
            })?;
            if doc.model.kind() != kind {
                return Err(StoreError::Model {
                    path,
                    reason: format!("holds a {} model", doc.model.kind()),
                });
            }
            out.push(doc);
        }
        Ok(out)
    }

    pub fn load(&self) -> Result<ModelSetF64, StoreError> {
        let mut set = ModelSetF64::default();
        for doc in self.load_documents()? {
            set.insert(doc.model);
        }
        Ok(set)
    }

    /// Highest model version on disk, 0 when empty.
    pub fn current_version(&self) -> Result<u64, StoreError> {
        Ok(self
            .load_documents()?
            .iter()
            .map(|d| d.metadata.model_version)
            .max()
            .unwrap_or(0))
    }

    /// Writes every model under the next version number and removes stale
    /// documents of kinds that were not retrained.
    pub fn save(&self, models: &[Model<f64>], metadata: TrainingMetadata) -> Result<u64, StoreError> {
        fs::create_dir_all(&self.dir).map_err(io_err(&self.dir))?;
        let version = self.current_version()? + 1;
        for kind in ModelKind::ALL {
            let path = self.path_for(kind);
            match models.iter().find(|m| m.kind() == kind) {
                Some(model) => {
                    let doc = ModelDocument::new(
                        model.clone(),
                        TrainingMetadata {
                            model_version: version,
                            ..metadata.clone()
                        },
                    );
                    let tmp = path.with_extension("json.tmp");
                    fs::write(&tmp, doc.to_json()).map_err(io_err(&tmp))?;
                    fs::rename(&tmp, &path).map_err(io_err(&path))?;
                }
                None if path.exists() => fs::remove_file(&path).map_err(io_err(&path))?,
                None => {}
            }
        }
        Ok(version)
    }
}
