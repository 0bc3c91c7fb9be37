//! Bernoulli Naive Bayes over boolean change features.

use serde::{Deserialize, Serialize};

use super::{check_width, ClassifierError, Label, LabeledDataset};
use crate::vectorizer::EncodedRow;
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NaiveBayesConfig {
    /// Additive smoothing; 1.0 is Laplace smoothing.
    pub alpha: f64,
}

impl Default for NaiveBayesConfig {
    fn default() -> Self {
        Self { alpha: 1.0 }
    }
}

/// Class-indexed parameters: index 0 is malicious, 1 is benign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct NaiveBayesModel<T> {
    pub alpha: T,
    pub priors: [T; 2],
    /// `theta[c][j]` = P(column j is set | class c).
    pub theta: [Vec<T>; 2],
}

fn class_index(label: Label) -> usize {
    match label {
        Label::Malicious => 0,
        Label::Benign => 1,
    }
}

fn is_set<T: Scalar>(row: &EncodedRow<T>) -> Result<Vec<bool>, ClassifierError> {
    row.values
        .iter()
        .enumerate()
        .map(|(column, &v)| {
            if v == T::one() {
                Ok(true)
            } else if v == T::zero() {
                Ok(false)
            } else {
                Err(ClassifierError::NonBinary {
                    column,
                    value: v.as_f64(),
                })
            }
        })
        .collect()
}

pub fn train_nb<T: Scalar>(data: &LabeledDataset<T>) -> Result<NaiveBayesModel<T>, ClassifierError> {
    train_nb_with(data, NaiveBayesConfig::default())
}

pub fn train_nb_with<T: Scalar>(
    data: &LabeledDataset<T>,
    config: NaiveBayesConfig,
) -> Result<NaiveBayesModel<T>, ClassifierError> {
    if data.is_empty() {
        return Err(ClassifierError::EmptyDataset);
    }
    if config.alpha.is_nan() || config.alpha <= 0.0 {
        return Err(ClassifierError::InvalidParameter("alpha must be positive".into()));
    }
    let width = data.width();
    let mut class_n = [0usize; 2];
    let mut set_counts = [vec![0usize; width], vec![0usize; width]];
    for (row, &label) in data.rows.iter().zip(&data.labels) {
        let c = class_index(label);
        class_n[c] += 1;
        for (j, bit) in is_set(row)?.into_iter().enumerate() {
            set_counts[c][j] += usize::from(bit);
        }
    }
    if class_n.contains(&0) {
        return Err(ClassifierError::SingleClass);
    }
    let alpha = T::of(config.alpha);
    let n = T::of_usize(data.len());
    let theta = [0, 1].map(|c| {
        let denom = T::of_usize(class_n[c]) + alpha + alpha;
        set_counts[c]
            .iter()
            .map(|&k| (T::of_usize(k) + alpha) / denom)
            .collect()
    });
    Ok(NaiveBayesModel {
        alpha,
        priors: [T::of_usize(class_n[0]) / n, T::of_usize(class_n[1]) / n],
        theta,
    })
}

impl<T: Scalar> NaiveBayesModel<T> {
    /// Unnormalized log posteriors `[malicious, benign]`.
    pub fn log_posteriors(&self, row: &EncodedRow<T>) -> Result<[T; 2], ClassifierError> {
        check_width(row, self.theta[0].len())?;
        let bits = is_set(row)?;
        Ok([0, 1].map(|c| {
            let likelihood: T = bits
                .iter()
                .zip(&self.theta[c])
                .map(|(&b, &t)| if b { t.ln() } else { (T::one() - t).ln() })
                .sum();
            self.priors[c].ln() + likelihood
        }))
    }

    /// Malicious only when its posterior is strictly larger; ties are benign.
    pub fn predict(&self, row: &EncodedRow<T>) -> Result<Label, ClassifierError> {
        let [mal, ben] = self.log_posteriors(row)?;
        Ok(if mal > ben { Label::Malicious } else { Label::Benign })
    }

    pub fn theta(&self, label: Label, column: usize) -> T {
        self.theta[class_index(label)][column]
    }
}
