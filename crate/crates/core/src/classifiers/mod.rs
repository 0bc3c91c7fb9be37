//! The three change-vector classifiers, their persistence format and the
//! evaluation harness.

mod bayes;
mod cv;
mod ensemble;
mod svm;
mod tree;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bayes::{train_nb, train_nb_with, NaiveBayesConfig, NaiveBayesModel};
pub use cv::{calibrate_nu, cross_validate, stratified_folds, CvConfig, CvReport, NuPoint};
pub use ensemble::{ModelFlags, ModelSet, TrainConfig, TrainOutcome};
pub use svm::{train_ocsvm, OneClassSvmModel, SvmConfig, SvmFit};
pub use tree::{information_gain, train_tree, train_tree_with, DecisionTreeModel, TreeConfig, TreeNode};

pub use crate::vectorizer::Label;
use crate::vectorizer::{
    boolean_schema, encode, encode_boolean, full_schema, ChangeVector, EncodedRow, EncodingTarget,
};
use crate::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum ClassifierError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("training data contains a single class")]
    SingleClass,
    #[error("row has {got} columns, model expects {expected}")]
    SchemaMismatch { expected: usize, got: usize },
    #[error("value {value} in column {column} is not boolean")]
    NonBinary { column: usize, value: f64 },
    #[error("too few samples: {0}")]
    TooFewSamples(String),
    #[error("solver did not converge after {iterations} steps (violation {violation:e})")]
    ConvergenceFailure { iterations: usize, violation: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("model document: {0}")]
    Document(String),
}

/// Encoded rows with parallel labels and a shared column schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct LabeledDataset<T> {
    pub schema: Vec<String>,
    pub rows: Vec<EncodedRow<T>>,
    pub labels: Vec<Label>,
}

impl<T: Scalar> LabeledDataset<T> {
    pub fn new(schema: Vec<String>, rows: Vec<EncodedRow<T>>, labels: Vec<Label>) -> Self {
        assert_eq!(rows.len(), labels.len(), "rows and labels must be parallel");
        assert!(
            rows.iter().all(|r| r.len() == schema.len()),
            "every row must match the schema"
        );
        Self { schema, rows, labels }
    }

    /// Full 17-column encoding of the labelled vectors; unlabelled ones are skipped.
    pub fn full(vectors: &[ChangeVector<T>]) -> Self {
        Self::encoded_with(vectors, full_schema(), |v| encode(v, EncodingTarget::Tree))
    }

    /// Boolean encoding of the labelled vectors for Naive Bayes.
    pub fn boolean(vectors: &[ChangeVector<T>]) -> Self {
        Self::encoded_with(vectors, boolean_schema(), encode_boolean)
    }

    fn encoded_with(
        vectors: &[ChangeVector<T>],
        schema: Vec<String>,
        f: impl Fn(&ChangeVector<T>) -> EncodedRow<T>,
    ) -> Self {
        let (rows, labels) = vectors
            .iter()
            .filter_map(|v| v.label.map(|l| (f(v), l)))
            .unzip();
        Self::new(schema, rows, labels)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn width(&self) -> usize {
        self.schema.len()
    }

    pub fn count(&self, label: Label) -> usize {
        self.labels.iter().filter(|l| **l == label).count()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            schema: self.schema.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn rows_with(&self, label: Label) -> Vec<EncodedRow<T>> {
        self.rows
            .iter()
            .zip(&self.labels)
            .filter(|(_, l)| **l == label)
            .map(|(r, _)| r.clone())
            .collect()
    }
}

/// Confusion counts with malicious as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Metrics {
    /// Precision and recall are 1.0 when their denominator is zero.
    pub fn from_counts(tp: usize, fp: usize, tn: usize, fn_: usize) -> Self {
        let ratio = |num: usize, den: usize| if den == 0 { 1.0 } else { num as f64 / den as f64 };
        Self {
            precision: ratio(tp, tp + fp),
            recall: ratio(tp, tp + fn_),
            tp,
            fp,
            tn,
            fn_,
        }
    }

    pub fn from_predictions(truth: &[Label], predicted: &[Label]) -> Self {
        let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
        for (t, p) in truth.iter().zip(predicted) {
            match (t, p) {
                (Label::Malicious, Label::Malicious) => tp += 1,
                (Label::Benign, Label::Malicious) => fp += 1,
                (Label::Benign, Label::Benign) => tn += 1,
                (Label::Malicious, Label::Benign) => fn_ += 1,
            }
        }
        Self::from_counts(tp, fp, tn, fn_)
    }
}

pub(crate) fn check_width<T>(row: &EncodedRow<T>, expected: usize) -> Result<(), ClassifierError> {
    if row.values.len() != expected {
        return Err(ClassifierError::SchemaMismatch {
            expected,
            got: row.values.len(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    DecisionTree,
    NaiveBayes,
    OneClassSvm,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::DecisionTree, ModelKind::NaiveBayes, ModelKind::OneClassSvm];

    pub fn id(self) -> &'static str {
        match self {
            ModelKind::DecisionTree => "decision_tree",
            ModelKind::NaiveBayes => "naive_bayes",
            ModelKind::OneClassSvm => "one_class_svm",
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.id())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
#[serde(bound = "T: Scalar")]
pub enum Model<T> {
    DecisionTree(DecisionTreeModel<T>),
    NaiveBayes(NaiveBayesModel<T>),
    OneClassSvm(OneClassSvmModel<T>),
}

impl<T: Scalar> Model<T> {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::DecisionTree(_) => ModelKind::DecisionTree,
            Model::NaiveBayes(_) => ModelKind::NaiveBayes,
            Model::OneClassSvm(_) => ModelKind::OneClassSvm,
        }
    }

    pub fn schema(&self) -> Vec<String> {
        match self {
            Model::NaiveBayes(_) => boolean_schema(),
            _ => full_schema(),
        }
    }

    pub fn predict(&self, row: &EncodedRow<T>) -> Result<Label, ClassifierError> {
        match self {
            Model::DecisionTree(m) => m.predict(row),
            Model::NaiveBayes(m) => m.predict(row),
            Model::OneClassSvm(m) => m.predict(row),
        }
    }

    /// Encodes the vector the way this model expects and predicts.
    pub fn predict_vector(&self, v: &ChangeVector<T>) -> Result<Label, ClassifierError> {
        match self {
            Model::NaiveBayes(m) => m.predict(&encode_boolean(v)),
            Model::DecisionTree(m) => m.predict(&encode(v, EncodingTarget::Tree)),
            Model::OneClassSvm(m) => m.predict(&encode(v, EncodingTarget::Svm)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingMetadata {
    /// Incremented on every retrain.
    pub model_version: u64,
    /// SHA-256 over the training rows and labels.
    pub corpus_hash: String,
    /// RFC 3339 training time.
    pub trained_at: String,
    pub training_rows: usize,
    #[serde(default)]
    pub seed: u64,
}

pub const MODEL_FORMAT: &str = "malscan-model";
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Self-describing persisted form of a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ModelDocument<T> {
    pub format: String,
    pub format_version: u32,
    pub schema: Vec<String>,
    pub metadata: TrainingMetadata,
    pub model: Model<T>,
}

impl<T: Scalar> ModelDocument<T> {
    pub fn new(model: Model<T>, metadata: TrainingMetadata) -> Self {
        Self {
            format: MODEL_FORMAT.into(),
            format_version: MODEL_FORMAT_VERSION,
            schema: model.schema(),
            metadata,
            model,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ClassifierError> {
        let doc: Self = serde_json::from_str(text).map_err(|e| ClassifierError::Document(e.to_string()))?;
        if doc.format != MODEL_FORMAT || doc.format_version != MODEL_FORMAT_VERSION {
            return Err(ClassifierError::Document(format!(
                "unsupported format {} v{}",
                doc.format, doc.format_version
            )));
        }
        if doc.schema != doc.model.schema() {
            return Err(ClassifierError::Document("schema does not match model kind".into()));
        }
        Ok(doc)
    }
}

/// Stable digest of a labelled dataset, used to tie models to their corpus.
pub fn corpus_hash<T: Scalar>(data: &LabeledDataset<T>) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update(data.schema.join(",").as_bytes());
    for (row, label) in data.rows.iter().zip(&data.labels) {
        for v in &row.values {
            h.update(v.as_f64().to_le_bytes());
        }
        h.update([label.is_malicious() as u8]);
    }
    hex::encode(h.finalize())
}
