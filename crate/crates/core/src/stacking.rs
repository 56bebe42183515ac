//! Per-subject stacked generalization.
//!
//! One first-level model per training subject, a second-level dataset of
//! first-level probabilities (column `j` = subject `j`, ascending id), and a
//! logistic combiner on top. A training trial's own-subject column always
//! comes from a fold model that never saw the trial.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;

use crate::data::{complement, fold_assignment, pool, split_kfold, DesignMatrix, MultiSubjectDataset, SubjectDataset, SubjectId};
use crate::error::{Error, Result};
use crate::glm::{predict_proba, sigmoid, FitOptions, LambdaRule, LinearModel};
use crate::rng::{derive_seed, tag};
use crate::shift::{estimate_weights, ImportanceWeights, ShiftOptions, ShiftSpace};

#[derive(Debug, Clone, PartialEq)]
pub struct StackingOptions {
    /// Within-subject folds for out-of-fold first-level predictions.
    pub k: usize,
    pub first_level: LambdaRule,
    pub second_level: LambdaRule,
    pub solver: FitOptions,
}

impl Default for StackingOptions {
    fn default() -> Self {
        StackingOptions {
            k: 6,
            first_level: LambdaRule::Relative(0.01),
            second_level: LambdaRule::Relative(0.01),
            solver: FitOptions::default(),
        }
    }
}

/// A first-level model trained on one subject minus one fold.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldModel {
    pub fold: usize,
    pub model: LinearModel,
    /// Trial indices the model was trained on.
    pub train_indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectModels {
    /// Trained on all of the subject's trials.
    pub full: LinearModel,
    pub folds: Vec<FoldModel>,
    /// Fold index of every trial.
    pub fold_assignment: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FirstLevelBank {
    pub subjects: BTreeMap<SubjectId, SubjectModels>,
    pub k: usize,
    pub seed: u64,
    pub d: usize,
}

impl FirstLevelBank {
    pub fn subject_ids(&self) -> Vec<SubjectId> {
        self.subjects.keys().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn n_fold_models(&self) -> usize {
        self.subjects.values().map(|s| s.folds.len()).sum()
    }
}

fn fit_subject(subject: &SubjectDataset, opts: &StackingOptions, seed: u64) -> Result<SubjectModels> {
    let sid = subject.subject_id();
    let lambda_seed = derive_seed(seed, &[tag::SUBJECT_SEED, sid as u64]);
    let folds = split_kfold(subject, opts.k, seed)?;
    let (x, y) = subject.subset(&(0..subject.len()).collect::<Vec<_>>());
    let full = opts.first_level.fit(&x, &y, &opts.solver, lambda_seed)?;
    let fold_models = (0..folds.len())
        .into_par_iter()
        .map(|f| {
            let train_indices = complement(&folds, f);
            let (xf, yf) = subject.subset(&train_indices);
            let model = opts.first_level.fit(&xf, &yf, &opts.solver, lambda_seed)?;
            Ok(FoldModel {
                fold: f,
                model,
                train_indices,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SubjectModels {
        full,
        folds: fold_models,
        fold_assignment: fold_assignment(&folds, subject.len()),
    })
}

/// Fits one full model and `k` fold models per training subject.
pub fn fit_first_level(train: &MultiSubjectDataset, opts: &StackingOptions, seed: u64) -> Result<FirstLevelBank> {
    let fitted = train
        .subjects()
        .par_iter()
        .map(|s| {
            fit_subject(s, opts, seed)
                .map(|m| (s.subject_id(), m))
                .map_err(|e| match e {
                    Error::Subject { .. } => e,
                    other => other.for_subject(s.subject_id()),
                })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FirstLevelBank {
        subjects: fitted.into_iter().collect(),
        k: opts.k,
        seed,
        d: train.d(),
    })
}

/// Which first-level model produced a second-level cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellSource {
    Full { subject: SubjectId },
    OutOfFold { subject: SubjectId, fold: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SecondLevelDataset {
    /// `n x S` first-level probabilities.
    pub features: DesignMatrix,
    /// Present in train mode only.
    pub labels: Option<Vec<u8>>,
    pub weights: Option<ImportanceWeights>,
    /// Row-major, one entry per cell.
    pub provenance: Vec<CellSource>,
    /// Subject behind each column.
    pub columns: Vec<SubjectId>,
    /// `(subject, trial index)` of each row in train mode.
    pub row_keys: Vec<(SubjectId, usize)>,
}

impl SecondLevelDataset {
    pub fn source(&self, row: usize, col: usize) -> CellSource {
        self.provenance[row * self.columns.len() + col]
    }

    /// Checks that every training row's own-subject cell came from a fold
    /// model whose recorded training set excludes that trial, and every other
    /// cell from a full model of another subject.
    pub fn audit(&self, bank: &FirstLevelBank) -> Result<()> {
        for (row, &(sid, trial)) in self.row_keys.iter().enumerate() {
            for (col, &csid) in self.columns.iter().enumerate() {
                match (self.source(row, col), csid == sid) {
                    (CellSource::OutOfFold { subject, fold }, true) if subject == sid => {
                        let models = bank.subjects.get(&sid).ok_or(Error::UnknownSubject(sid))?;
                        let fm = models
                            .folds
                            .iter()
                            .find(|m| m.fold == fold)
                            .ok_or_else(|| Error::invalid(format!("subject {sid} has no fold {fold}")))?;
                        if fm.train_indices.binary_search(&trial).is_ok() {
                            return Err(Error::invalid(format!(
                                "trial {trial} of subject {sid} predicted by a model trained on it"
                            )));
                        }
                    }
                    (CellSource::Full { subject }, false) if subject == csid => {}
                    (src, _) => {
                        return Err(Error::invalid(format!(
                            "cell ({row}, {col}) has unexpected source {src:?}"
                        )))
                    }
                }
            }
        }
        Ok(())
    }
}

/// Train-mode second-level dataset over all trials of `train`.
pub fn build_second_level_train(bank: &FirstLevelBank, train: &MultiSubjectDataset) -> Result<SecondLevelDataset> {
    let columns = bank.subject_ids();
    let s = columns.len();
    let mut values = Vec::with_capacity(train.n_trials() * s);
    let mut provenance = Vec::with_capacity(train.n_trials() * s);
    let mut labels = Vec::with_capacity(train.n_trials());
    let mut row_keys = Vec::with_capacity(train.n_trials());
    for subject in train.subjects() {
        let sid = subject.subject_id();
        let own = bank.subjects.get(&sid).ok_or(Error::UnknownSubject(sid))?;
        if own.fold_assignment.len() != subject.len() {
            return Err(Error::invalid(format!(
                "subject {sid} has {} trials but the bank recorded {}",
                subject.len(),
                own.fold_assignment.len()
            )));
        }
        for (i, trial) in subject.trials().iter().enumerate() {
            for &csid in &columns {
                let (model, src) = if csid == sid {
                    let fold = own.fold_assignment[i];
                    (&own.folds[fold].model, CellSource::OutOfFold { subject: sid, fold })
                } else {
                    (&bank.subjects[&csid].full, CellSource::Full { subject: csid })
                };
                if trial.features.len() != bank.d {
                    return Err(Error::DimensionMismatch {
                        expected: bank.d,
                        got: trial.features.len(),
                    });
                }
                values.push(sigmoid(model.score(&trial.features)));
                provenance.push(src);
            }
            labels.push(trial.label);
            row_keys.push((sid, i));
        }
    }
    Ok(SecondLevelDataset {
        features: DesignMatrix::new(labels.len(), s, values)?,
        labels: Some(labels),
        weights: None,
        provenance,
        columns,
        row_keys,
    })
}

/// Test-mode second-level dataset: every cell from a full model.
pub fn build_second_level_test(bank: &FirstLevelBank, x: &DesignMatrix) -> Result<SecondLevelDataset> {
    if x.cols() != bank.d {
        return Err(Error::DimensionMismatch {
            expected: bank.d,
            got: x.cols(),
        });
    }
    let columns = bank.subject_ids();
    let s = columns.len();
    let per_model = columns
        .iter()
        .map(|sid| predict_proba(&bank.subjects[sid].full, x))
        .collect::<Result<Vec<_>>>()?;
    let mut values = Vec::with_capacity(x.rows() * s);
    let mut provenance = Vec::with_capacity(x.rows() * s);
    for i in 0..x.rows() {
        for (p, &sid) in per_model.iter().zip(&columns) {
            values.push(p[i]);
            provenance.push(CellSource::Full { subject: sid });
        }
    }
    Ok(SecondLevelDataset {
        features: DesignMatrix::new(x.rows(), s, values)?,
        labels: None,
        weights: None,
        provenance,
        columns,
        row_keys: Vec::new(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StackedModel {
    pub bank: FirstLevelBank,
    pub combiner: LinearModel,
    pub used_weights: bool,
    /// Weights attached to the combiner fit, if any.
    pub weights: Option<ImportanceWeights>,
}

/// Fits the bank and the combiner. With `target` given, the combiner's
/// training rows are weighted by importance weights computed against the
/// unlabeled target trials.
pub fn fit_stacked(
    train: &MultiSubjectDataset,
    target: Option<&DesignMatrix>,
    opts: &StackingOptions,
    shift: &ShiftOptions,
    seed: u64,
) -> Result<StackedModel> {
    let bank = fit_first_level(train, opts, seed)?;
    let second = build_second_level_train(&bank, train)?;
    let labels = second.labels.clone().expect("train mode carries labels");

    let weights = match target {
        None => None,
        Some(target) => {
            // pooled rows follow the same (subject, trial) order as `second`
            let (source, _) = pool(train, &BTreeSet::new())?;
            let w = match shift.space {
                ShiftSpace::SecondLevel => {
                    // Both domains go through the same full-model map; mixing
                    // out-of-fold source features with full-model target
                    // features would make the domains separable by
                    // construction.
                    let s = build_second_level_test(&bank, &source)?;
                    let t = build_second_level_test(&bank, target)?;
                    estimate_weights(&s.features, &t.features, shift)?
                }
                ShiftSpace::Original => estimate_weights(&source, target, shift)?,
            };
            Some(w)
        }
    };

    let x = match &weights {
        Some(w) => second.features.clone().with_weights(w.weights.clone())?,
        None => second.features.clone(),
    };
    let combiner = opts
        .second_level
        .fit(&x, &labels, &opts.solver, derive_seed(seed, &[tag::LAMBDA_CV]))?;
    Ok(StackedModel {
        bank,
        combiner,
        used_weights: weights.is_some(),
        weights,
    })
}

/// Combiner probabilities on the test-mode second-level features of `x`.
pub fn predict_stacked(model: &StackedModel, x: &DesignMatrix) -> Result<Vec<f64>> {
    let second = build_second_level_test(&model.bank, x)?;
    predict_proba(&model.combiner, &second.features)
}
