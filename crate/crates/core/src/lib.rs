//! Detection of malicious npm package versions from the change between a
//! version and its predecessor.
//!
//! Numeric code is generic over [`Scalar`]; the `*F64` and `*F32` aliases
//! below name the concrete instantiations.

pub mod classifiers;
pub mod clone;
pub mod features;
pub mod package;
pub mod reproducer;
mod scalar;
pub mod vectorizer;
pub mod versioning;

pub use scalar::Scalar;

pub use classifiers::{
    ClassifierError, LabeledDataset, Metrics, Model, ModelDocument, ModelKind, ModelSet, TrainConfig,
};
pub use clone::{canonical_digest, ContentDigest, DigestAlgorithm, MalwareHashSet, Provenance};
pub use features::{extract_features, FeatureVector, PatternTable};
pub use package::{load_tarball, FileEntry, Manifest, PackageArtifact, PackageError};
pub use reproducer::{make_plan, reproduce, ReproduceConfig, ReproducePlan, ReproduceResult, ReproduceStatus};
pub use vectorizer::{build_change_vector, ChangeVector, EncodedRow, Label};
pub use versioning::{classify_update, SemVer, UpdateType, VersionTimeline};

pub type FeatureVectorF64 = FeatureVector<f64>;
pub type FeatureVectorF32 = FeatureVector<f32>;
pub type ChangeVectorF64 = ChangeVector<f64>;
pub type ChangeVectorF32 = ChangeVector<f32>;
pub type EncodedRowF64 = EncodedRow<f64>;
pub type LabeledDatasetF64 = LabeledDataset<f64>;
pub type DecisionTreeF64 = classifiers::DecisionTreeModel<f64>;
pub type DecisionTreeF32 = classifiers::DecisionTreeModel<f32>;
pub type NaiveBayesF64 = classifiers::NaiveBayesModel<f64>;
pub type NaiveBayesF32 = classifiers::NaiveBayesModel<f32>;
pub type OneClassSvmF64 = classifiers::OneClassSvmModel<f64>;
pub type OneClassSvmF32 = classifiers::OneClassSvmModel<f32>;
pub type ModelF64 = Model<f64>;
pub type ModelSetF64 = ModelSet<f64>;
pub type ModelDocumentF64 = ModelDocument<f64>;
