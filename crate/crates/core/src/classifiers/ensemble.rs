use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{
    train_nb_with, train_ocsvm, train_tree_with, ClassifierError, DecisionTreeModel, Label, LabeledDataset,
    Model, ModelKind, NaiveBayesConfig, NaiveBayesModel, OneClassSvmModel, SvmConfig, TreeConfig,
};
use crate::vectorizer::ChangeVector;
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainConfig {
    pub tree: TreeConfig,
    pub nb: NaiveBayesConfig,
    pub svm: SvmConfig,
}

/// Per-model verdicts for one change vector.
pub type ModelFlags = BTreeMap<ModelKind, Label>;

/// Whichever of the three models are available.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelSet<T> {
    pub tree: Option<DecisionTreeModel<T>>,
    pub nb: Option<NaiveBayesModel<T>>,
    pub svm: Option<OneClassSvmModel<T>>,
}

pub struct TrainOutcome<T> {
    pub models: ModelSet<T>,
    /// Models whose preconditions the corpus did not meet.
    pub failures: Vec<(ModelKind, ClassifierError)>,
}

impl<T: Scalar> ModelSet<T> {
    /// Trains every model whose preconditions hold. Unlabelled vectors are
    /// ignored; the SVM sees only benign rows.
    pub fn train(vectors: &[ChangeVector<T>], config: &TrainConfig) -> TrainOutcome<T> {
        let full = LabeledDataset::full(vectors);
        let boolean = LabeledDataset::boolean(vectors);
        let mut failures = Vec::new();

        let two_classes = |d: &LabeledDataset<T>| -> Result<(), ClassifierError> {
            if d.is_empty() {
                Err(ClassifierError::EmptyDataset)
            } else if d.count(Label::Malicious) == 0 || d.count(Label::Benign) == 0 {
                Err(ClassifierError::SingleClass)
            } else {
                Ok(())
            }
        };
        let tree = two_classes(&full)
            .and_then(|_| train_tree_with(&full, config.tree))
            .map_err(|e| failures.push((ModelKind::DecisionTree, e)))
            .ok();
        let nb = train_nb_with(&boolean, config.nb)
            .map_err(|e| failures.push((ModelKind::NaiveBayes, e)))
            .ok();
        let svm = train_ocsvm(&full.rows_with(Label::Benign), config.svm)
            .map(|fit| fit.model)
            .map_err(|e| failures.push((ModelKind::OneClassSvm, e)))
            .ok();
        TrainOutcome {
            models: ModelSet { tree, nb, svm },
            failures,
        }
    }

    pub fn models(&self) -> Vec<Model<T>> {
        let mut out = Vec::new();
        if let Some(m) = &self.tree {
            out.push(Model::DecisionTree(m.clone()));
        }
        if let Some(m) = &self.nb {
            out.push(Model::NaiveBayes(m.clone()));
        }
        if let Some(m) = &self.svm {
            out.push(Model::OneClassSvm(m.clone()));
        }
        out
    }

    pub fn insert(&mut self, model: Model<T>) {
        match model {
            Model::DecisionTree(m) => self.tree = Some(m),
            Model::NaiveBayes(m) => self.nb = Some(m),
            Model::OneClassSvm(m) => self.svm = Some(m),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.tree.is_none() && self.nb.is_none() && self.svm.is_none()
    }

    pub fn flags(&self, v: &ChangeVector<T>) -> Result<ModelFlags, ClassifierError> {
        self.models()
            .iter()
            .map(|m| Ok((m.kind(), m.predict_vector(v)?)))
            .collect()
    }
}
