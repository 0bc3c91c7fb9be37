//! Stratified k-fold cross-validation and the ν sweep for the SVM.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{train_ocsvm, ClassifierError, Label, Metrics, ModelKind, ModelSet, SvmConfig, TrainConfig};
use crate::vectorizer::{encode, ChangeVector, EncodingTarget};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub k: usize,
    pub seed: u64,
    pub train: TrainConfig,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            k: 10,
            seed: 0,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    /// Fold index of every labelled input row.
    pub folds: Vec<usize>,
    /// Precision and recall averaged over folds; confusion counts summed.
    pub metrics: BTreeMap<ModelKind, Metrics>,
    pub per_fold: Vec<BTreeMap<ModelKind, Metrics>>,
}

/// Deals each class's shuffled indices round-robin into `k` folds.
pub fn stratified_folds(labels: &[Label], k: usize, seed: u64) -> Result<Vec<usize>, ClassifierError> {
    if k < 2 {
        return Err(ClassifierError::InvalidParameter("k must be at least 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![0; labels.len()];
    for class in [Label::Malicious, Label::Benign] {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.len() < k {
            return Err(ClassifierError::TooFewSamples(format!(
                "{} {class:?} rows for {k} folds",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        for (pos, i) in members.into_iter().enumerate() {
            folds[i] = pos % k;
        }
    }
    Ok(folds)
}

pub fn cross_validate<T: Scalar>(
    vectors: &[ChangeVector<T>],
    config: &CvConfig,
) -> Result<CvReport, ClassifierError> {
    let labelled: Vec<&ChangeVector<T>> = vectors.iter().filter(|v| v.label.is_some()).collect();
    if labelled.is_empty() {
        return Err(ClassifierError::EmptyDataset);
    }
    let labels: Vec<Label> = labelled.iter().map(|v| v.label.unwrap()).collect();
    let folds = stratified_folds(&labels, config.k, config.seed)?;

    let mut per_fold = Vec::with_capacity(config.k);
    for fold in 0..config.k {
        let train: Vec<ChangeVector<T>> = labelled
            .iter()
            .zip(&folds)
            .filter(|(_, f)| **f != fold)
            .map(|(v, _)| (*v).clone())
            .collect();
        let test: Vec<&ChangeVector<T>> = labelled
            .iter()
            .zip(&folds)
            .filter(|(_, f)| **f == fold)
            .map(|(v, _)| *v)
            .collect();
        let outcome = ModelSet::train(&train, &config.train);
        if let Some((_, err)) = outcome.failures.into_iter().next() {
            return Err(err);
        }
        let truth: Vec<Label> = test.iter().map(|v| v.label.unwrap()).collect();
        let mut metrics = BTreeMap::new();
        for model in outcome.models.models() {
            let predicted = test
                .iter()
                .map(|v| model.predict_vector(v))
                .collect::<Result<Vec<_>, _>>()?;
            metrics.insert(model.kind(), Metrics::from_predictions(&truth, &predicted));
        }
        per_fold.push(metrics);
    }

    let mut metrics = BTreeMap::new();
    for kind in ModelKind::ALL {
        let runs: Vec<&Metrics> = per_fold.iter().filter_map(|m| m.get(&kind)).collect();
        if runs.is_empty() {
            continue;
        }
        let k = runs.len() as f64;
        let sum = |f: fn(&Metrics) -> usize| runs.iter().map(|m| f(m)).sum::<usize>();
        metrics.insert(
            kind,
            Metrics {
                precision: runs.iter().map(|m| m.precision).sum::<f64>() / k,
                recall: runs.iter().map(|m| m.recall).sum::<f64>() / k,
                tp: sum(|m| m.tp),
                fp: sum(|m| m.fp),
                tn: sum(|m| m.tn),
                fn_: sum(|m| m.fn_),
            },
        );
    }
    Ok(CvReport {
        folds,
        metrics,
        per_fold,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NuPoint {
    pub nu: f64,
    pub metrics: Metrics,
}

/// Leave-one-out sweep over candidate ν values. Every benign row is scored
/// by a model trained on the other benign rows; malicious rows are scored
/// by the model trained on all benign rows.
pub fn calibrate_nu<T: Scalar>(
    vectors: &[ChangeVector<T>],
    grid: &[f64],
    base: SvmConfig,
) -> Result<Vec<NuPoint>, ClassifierError> {
    let benign: Vec<_> = vectors
        .iter()
        .filter(|v| v.label == Some(Label::Benign))
        .map(|v| encode(v, EncodingTarget::Svm))
        .collect();
    let malicious: Vec<_> = vectors
        .iter()
        .filter(|v| v.label == Some(Label::Malicious))
        .map(|v| encode(v, EncodingTarget::Svm))
        .collect();
    if benign.len() < 3 {
        return Err(ClassifierError::TooFewSamples(format!(
            "leave-one-out needs at least 3 benign rows, got {}",
            benign.len()
        )));
    }

    let mut out = Vec::with_capacity(grid.len());
    for &nu in grid {
        let config = SvmConfig { nu, ..base };
        let full = train_ocsvm(&benign, config)?.model;
        let (mut tp, mut fn_) = (0, 0);
        for row in &malicious {
            match full.predict(row)? {
                Label::Malicious => tp += 1,
                Label::Benign => fn_ += 1,
            }
        }
        let (mut fp, mut tn) = (0, 0);
        for held_out in 0..benign.len() {
            let rest: Vec<_> = benign
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != held_out)
                .map(|(_, r)| r.clone())
                .collect();
            match train_ocsvm(&rest, config)?.model.predict(&benign[held_out])? {
                Label::Malicious => fp += 1,
                Label::Benign => tn += 1,
            }
        }
        out.push(NuPoint {
            nu,
            metrics: Metrics::from_counts(tp, fp, tn, fn_),
        });
    }
    Ok(out)
}
