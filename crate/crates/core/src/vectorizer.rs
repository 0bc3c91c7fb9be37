//! Change vectors and their numeric encodings.
//!
//! A change vector is the difference between the features of a version and
//! those of its chronological predecessor, together with the update type and
//! the time that elapsed between the two publications. First versions have
//! no predecessor: they carry their raw features, update type `first` and
//! zero elapsed time.
//!
//! Column order of the full encoding (17 columns):
//!
//! | columns | meaning |
//! |---------|---------|
//! | 0..8    | count deltas: pii, fs, process, network, crypto, encoding, dynamic code, install scripts |
//! | 8, 9    | entropy mean delta, entropy std delta |
//! | 10      | seconds since the previous version |
//! | 11..17  | one-hot update type: major, minor, patch, prerelease, build, first |
//!
//! The boolean encoding keeps columns 0..8 as `delta != 0` bits plus the six
//! update-type indicators (14 columns); entropy and time are dropped.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeatureVector;
use crate::versioning::UpdateType;
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Malicious,
    Benign,
}

impl Label {
    pub fn is_malicious(self) -> bool {
        self == Label::Malicious
    }
}

#[derive(Debug, Error)]
pub enum VectorError {
    #[error("first-version vectors need no predecessor and zero elapsed time; other updates need both")]
    InconsistentFirst,
    #[error("dataset I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("dataset line {line}: {reason}")]
    Format { line: usize, reason: String },
}

pub const DELTA_COLUMNS: [&str; 10] = [
    "pii_access",
    "fs_access",
    "process_creation",
    "network_access",
    "crypto_api",
    "data_encoding",
    "dynamic_code",
    "install_scripts",
    "entropy_mean",
    "entropy_std",
];

pub const TIME_COLUMN: &str = "time_since_prev";

/// Column names of [`encode`].
pub fn full_schema() -> Vec<String> {
    let mut s: Vec<String> = DELTA_COLUMNS.iter().map(|c| c.to_string()).collect();
    s.push(TIME_COLUMN.to_string());
    s.extend(UpdateType::ALL.iter().map(|u| format!("update_{u}")));
    s
}

/// Column names of [`encode_boolean`].
pub fn boolean_schema() -> Vec<String> {
    let mut s: Vec<String> = DELTA_COLUMNS[..8].iter().map(|c| c.to_string()).collect();
    s.extend(UpdateType::ALL.iter().map(|u| format!("update_{u}")));
    s
}

pub const FULL_WIDTH: usize = 17;
pub const BOOLEAN_WIDTH: usize = 14;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ChangeVector<T> {
    pub package: String,
    pub version: String,
    /// `next - prev` for the ten single-version features, in [`DELTA_COLUMNS`] order.
    pub deltas: [T; 10],
    pub update_type: UpdateType,
    pub time_since_prev: T,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
}

impl<T: Scalar> ChangeVector<T> {
    pub fn delta(&self, column: &str) -> Option<T> {
        DELTA_COLUMNS
            .iter()
            .position(|c| *c == column)
            .map(|i| self.deltas[i])
    }

    pub fn with_label(mut self, label: Label) -> Self {
        self.label = Some(label);
        self
    }
}

pub fn build_change_vector<T: Scalar>(
    package: impl Into<String>,
    version: impl Into<String>,
    prev: Option<&FeatureVector<T>>,
    cur: &FeatureVector<T>,
    update_type: UpdateType,
    dt: T,
) -> Result<ChangeVector<T>, VectorError> {
    let is_first = update_type == UpdateType::First;
    if prev.is_none() != is_first || (is_first && dt != T::zero()) || dt < T::zero() {
        return Err(VectorError::InconsistentFirst);
    }
    let cur_values = cur.to_values();
    let deltas = match prev {
        None => cur_values,
        Some(p) => {
            let pv = p.to_values();
            let mut d = [T::zero(); 10];
            for i in 0..10 {
                d[i] = cur_values[i] - pv[i];
            }
            d
        }
    };
    Ok(ChangeVector {
        package: package.into(),
        version: version.into(),
        deltas,
        update_type,
        time_since_prev: dt,
        label: None,
    })
}

/// Which classifier family a row is destined for. Tree and SVM share the
/// full numeric encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncodingTarget {
    Tree,
    Svm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct EncodedRow<T> {
    pub values: Vec<T>,
}

impl<T: Scalar> EncodedRow<T> {
    pub fn new(values: Vec<T>) -> Self {
        Self { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn one_hot<T: Scalar>(update: UpdateType) -> impl Iterator<Item = T> {
    UpdateType::ALL
        .into_iter()
        .map(move |u| if u == update { T::one() } else { T::zero() })
}

pub fn encode<T: Scalar>(vec: &ChangeVector<T>, _target: EncodingTarget) -> EncodedRow<T> {
    let mut values = Vec::with_capacity(FULL_WIDTH);
    values.extend_from_slice(&vec.deltas);
    values.push(vec.time_since_prev);
    values.extend(one_hot::<T>(vec.update_type));
    EncodedRow { values }
}

pub fn encode_boolean<T: Scalar>(vec: &ChangeVector<T>) -> EncodedRow<T> {
    let mut values = Vec::with_capacity(BOOLEAN_WIDTH);
    values.extend(
        vec.deltas[..8]
            .iter()
            .map(|&d| if d != T::zero() { T::one() } else { T::zero() }),
    );
    values.extend(one_hot::<T>(vec.update_type));
    EncodedRow { values }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DatasetHeader {
    format: String,
    version: u32,
    schema: Vec<String>,
}

const DATASET_FORMAT: &str = "change-vectors";

/// Writes change vectors as JSON lines behind a header line carrying the
/// column schema.
pub fn write_dataset<T: Scalar, W: Write>(mut out: W, rows: &[ChangeVector<T>]) -> Result<(), VectorError> {
    let header = DatasetHeader {
        format: DATASET_FORMAT.into(),
        version: 1,
        schema: full_schema(),
    };
    writeln!(out, "{}", serde_json::to_string(&header).expect("header serializes"))?;
    for row in rows {
        writeln!(out, "{}", serde_json::to_string(row).expect("row serializes"))?;
    }
    Ok(())
}

pub fn read_dataset<T: Scalar, R: BufRead>(input: R) -> Result<Vec<ChangeVector<T>>, VectorError> {
    let mut lines = input.lines().enumerate();
    let header_line = match lines.next() {
        Some((_, line)) => line?,
        None => return Ok(Vec::new()),
    };
    let header: DatasetHeader = serde_json::from_str(&header_line).map_err(|e| VectorError::Format {
        line: 1,
        reason: format!("bad header: {e}"),
    })?;
    if header.format != DATASET_FORMAT || header.schema != full_schema() {
        return Err(VectorError::Format {
            line: 1,
            reason: "unexpected format or schema".into(),
        });
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(serde_json::from_str(&line).map_err(|e| VectorError::Format {
            line: i + 1,
            reason: e.to_string(),
        })?);
    }
    Ok(rows)
}
