//! Trial / subject / dataset model and the dense matrix view fed to the solver.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::{keyed_rng, tag};

pub type SubjectId = u32;

/// One labeled feature vector recorded from one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub features: Vec<f64>,
    pub label: u8,
    pub subject_id: SubjectId,
}

impl Trial {
    pub fn new(features: Vec<f64>, label: u8, subject_id: SubjectId) -> Result<Self> {
        check_label(label)?;
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("trial features"));
        }
        Ok(Trial {
            features,
            label,
            subject_id,
        })
    }
}

fn check_label(label: u8) -> Result<()> {
    if label > 1 {
        return Err(Error::invalid(format!("label {label} is not in {{0,1}}")));
    }
    Ok(())
}

/// All trials of one subject (one domain).
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectDataset {
    subject_id: SubjectId,
    d: usize,
    trials: Vec<Trial>,
}

impl SubjectDataset {
    pub fn new(subject_id: SubjectId, trials: Vec<Trial>) -> Result<Self> {
        let d = trials
            .first()
            .map(|t| t.features.len())
            .ok_or_else(|| Error::invalid(format!("subject {subject_id} has no trials")))?;
        let mut counts = [0usize; 2];
        for t in &trials {
            if t.features.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: t.features.len(),
                });
            }
            if t.subject_id != subject_id {
                return Err(Error::invalid(format!(
                    "trial of subject {} inside subject {subject_id}",
                    t.subject_id
                )));
            }
            check_label(t.label)?;
            if t.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("trial features"));
            }
            counts[t.label as usize] += 1;
        }
        for (class, &count) in counts.iter().enumerate() {
            if count == 0 {
                return Err(Error::TooFewTrials {
                    class: class as u8,
                    count,
                    k: 1,
                }
                .for_subject(subject_id));
            }
        }
        Ok(SubjectDataset {
            subject_id,
            d,
            trials,
        })
    }

    /// Builds a subject from parallel feature rows and labels.
    pub fn from_rows(subject_id: SubjectId, rows: Vec<Vec<f64>>, labels: &[u8]) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: rows.len(),
                got: labels.len(),
            });
        }
        let trials = rows
            .into_iter()
            .zip(labels)
            .map(|(features, &label)| Trial {
                features,
                label,
                subject_id,
            })
            .collect();
        SubjectDataset::new(subject_id, trials)
    }

    pub fn subject_id(&self) -> SubjectId {
        self.subject_id
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn trials(&self) -> &[Trial] {
        &self.trials
    }

    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.trials.iter().map(|t| t.label).collect()
    }

    pub fn class_counts(&self) -> [usize; 2] {
        let mut c = [0; 2];
        for t in &self.trials {
            c[t.label as usize] += 1;
        }
        c
    }

    pub fn design_matrix(&self) -> DesignMatrix {
        self.rows_matrix(0..self.trials.len())
    }

    /// Feature matrix and labels restricted to `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> (DesignMatrix, Vec<u8>) {
        let x = self.rows_matrix(indices.iter().copied());
        let y = indices.iter().map(|&i| self.trials[i].label).collect();
        (x, y)
    }

    fn rows_matrix(&self, indices: impl Iterator<Item = usize>) -> DesignMatrix {
        let mut values = Vec::new();
        let mut rows = 0;
        for i in indices {
            values.extend_from_slice(&self.trials[i].features);
            rows += 1;
        }
        DesignMatrix {
            rows,
            cols: self.d,
            values,
            weights: None,
        }
    }

    /// Same trials with labels replaced; used by the permutation harness.
    pub fn with_labels(&self, labels: &[u8]) -> Result<Self> {
        if labels.len() != self.trials.len() {
            return Err(Error::DimensionMismatch {
                expected: self.trials.len(),
                got: labels.len(),
            });
        }
        let trials = self
            .trials
            .iter()
            .zip(labels)
            .map(|(t, &label)| Trial {
                label,
                ..t.clone()
            })
            .collect();
        SubjectDataset::new(self.subject_id, trials)
    }

    /// Same trials with every feature vector passed through `f`.
    pub fn map_features(&self, mut f: impl FnMut(&[f64]) -> Vec<f64>) -> Result<Self> {
        let trials = self
            .trials
            .iter()
            .map(|t| Trial {
                features: f(&t.features),
                ..t.clone()
            })
            .collect();
        SubjectDataset::new(self.subject_id, trials)
    }

    /// A copy of this subject under another id.
    pub fn relabel_subject(&self, subject_id: SubjectId) -> Self {
        let trials = self
            .trials
            .iter()
            .map(|t| Trial {
                subject_id,
                ..t.clone()
            })
            .collect();
        SubjectDataset {
            subject_id,
            d: self.d,
            trials,
        }
    }
}

/// Subjects sharing one feature space, kept in ascending subject id order.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiSubjectDataset {
    subjects: Vec<SubjectDataset>,
    d: usize,
}

impl MultiSubjectDataset {
    pub fn new(mut subjects: Vec<SubjectDataset>) -> Result<Self> {
        let d = subjects
            .first()
            .map(|s| s.d)
            .ok_or_else(|| Error::invalid("dataset has no subjects"))?;
        subjects.sort_by_key(|s| s.subject_id);
        for pair in subjects.windows(2) {
            if pair[0].subject_id == pair[1].subject_id {
                return Err(Error::invalid(format!(
                    "duplicate subject id {}",
                    pair[0].subject_id
                )));
            }
        }
        if let Some(s) = subjects.iter().find(|s| s.d != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: s.d,
            });
        }
        Ok(MultiSubjectDataset { subjects, d })
    }

    pub fn subjects(&self) -> &[SubjectDataset] {
        &self.subjects
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn subject_ids(&self) -> Vec<SubjectId> {
        self.subjects.iter().map(|s| s.subject_id).collect()
    }

    pub fn subject(&self, id: SubjectId) -> Option<&SubjectDataset> {
        self.subjects
            .binary_search_by_key(&id, |s| s.subject_id)
            .ok()
            .map(|i| &self.subjects[i])
    }

    pub fn n_trials(&self) -> usize {
        self.subjects.iter().map(|s| s.len()).sum()
    }

    /// All subjects except `held_out`.
    pub fn without(&self, held_out: SubjectId) -> Result<Self> {
        let rest: Vec<_> = self
            .subjects
            .iter()
            .filter(|s| s.subject_id != held_out)
            .cloned()
            .collect();
        if rest.is_empty() {
            return Err(Error::NoTrainingSubjects);
        }
        MultiSubjectDataset::new(rest)
    }

    /// SHA-256 over a canonical little-endian serialization of the dataset.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(b"xsd-dataset-v1");
        h.update((self.d as u64).to_le_bytes());
        h.update((self.subjects.len() as u64).to_le_bytes());
        for s in &self.subjects {
            h.update((s.subject_id as u64).to_le_bytes());
            h.update((s.trials.len() as u64).to_le_bytes());
            for t in &s.trials {
                h.update([t.label]);
                for v in &t.features {
                    h.update(v.to_le_bytes());
                }
            }
        }
        hex::encode(h.finalize())
    }
}

/// Dense row-major matrix with optional nonnegative row weights.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    weights: Option<Vec<f64>>,
}

impl DesignMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                got: values.len(),
            });
        }
        Ok(DesignMatrix {
            rows,
            cols,
            values,
            weights: None,
        })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R], cols: usize) -> Result<Self> {
        let mut values = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    expected: cols,
                    got: r.len(),
                });
            }
            values.extend_from_slice(r);
        }
        DesignMatrix::new(rows.len(), cols, values)
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.rows {
            return Err(Error::DimensionMismatch {
                expected: self.rows,
                got: weights.len(),
            });
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid("weights must be finite and nonnegative"));
        }
        if !weights.iter().any(|&w| w > 0.0) {
            return Err(Error::invalid("at least one weight must be positive"));
        }
        self.weights = Some(weights);
        Ok(self)
    }

    pub fn without_weights(mut self) -> Self {
        self.weights = None;
        self
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact would yield nothing for cols == 0
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Rows at `indices` (weights carried along).
    pub fn select_rows(&self, indices: &[usize]) -> DesignMatrix {
        let mut values = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        DesignMatrix {
            rows: indices.len(),
            cols: self.cols,
            values,
            weights: self
                .weights
                .as_ref()
                .map(|w| indices.iter().map(|&i| w[i]).collect()),
        }
    }

    /// Vertical concatenation; weights are dropped.
    pub fn vstack(parts: &[&DesignMatrix]) -> Result<DesignMatrix> {
        let cols = parts
            .first()
            .map(|m| m.cols)
            .ok_or_else(|| Error::invalid("nothing to stack"))?;
        let mut values = Vec::new();
        let mut rows = 0;
        for m in parts {
            if m.cols != cols {
                return Err(Error::DimensionMismatch {
                    expected: cols,
                    got: m.cols,
                });
            }
            values.extend_from_slice(&m.values);
            rows += m.rows;
        }
        DesignMatrix::new(rows, cols, values)
    }
}

/// Row-stacks every subject not in `exclude`, ascending subject id then trial order.
pub fn pool(
    dataset: &MultiSubjectDataset,
    exclude: &BTreeSet<SubjectId>,
) -> Result<(DesignMatrix, Vec<u8>)> {
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for s in dataset
        .subjects()
        .iter()
        .filter(|s| !exclude.contains(&s.subject_id))
    {
        for t in &s.trials {
            values.extend_from_slice(&t.features);
            labels.push(t.label);
        }
    }
    if labels.is_empty() {
        return Err(Error::NoTrainingSubjects);
    }
    let x = DesignMatrix::new(labels.len(), dataset.d(), values)?;
    Ok((x, labels))
}

/// Stratified k-fold partition of `labels`.
///
/// Indices of each class are shuffled by `rng` and dealt round-robin; the
/// dealing of class 1 continues where class 0 stopped so fold totals stay
/// within one of each other. Each returned fold is sorted ascending.
pub fn stratified_folds<R: rand::Rng>(
    labels: &[u8],
    k: usize,
    rng: &mut R,
) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::invalid(format!("k must be at least 2, got {k}")));
    }
    let mut by_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, &y) in labels.iter().enumerate() {
        check_label(y)?;
        by_class[y as usize].push(i);
    }
    for (class, idx) in by_class.iter().enumerate() {
        if idx.len() < k {
            return Err(Error::TooFewTrials {
                class: class as u8,
                count: idx.len(),
                k,
            });
        }
    }
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for idx in by_class.iter_mut() {
        idx.shuffle(rng);
        for &i in idx.iter() {
            folds[next].push(i);
            next = (next + 1) % k;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// Stratified, seeded k-fold split of one subject's trials.
pub fn split_kfold(subject: &SubjectDataset, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    let mut rng = keyed_rng(seed, &[tag::FOLDS, subject.subject_id as u64]);
    stratified_folds(&subject.labels(), k, &mut rng)
}

/// Per-index fold number for a partition.
pub fn fold_assignment(folds: &[Vec<usize>], n: usize) -> Vec<usize> {
    let mut a = vec![usize::MAX; n];
    for (f, idx) in folds.iter().enumerate() {
        for &i in idx {
            a[i] = f;
        }
    }
    a
}

/// Indices not in fold `f`, ascending.
pub fn complement(folds: &[Vec<usize>], f: usize) -> Vec<usize> {
    let mut v: Vec<usize> = folds
        .iter()
        .enumerate()
        .filter(|(g, _)| *g != f)
        .flat_map(|(_, idx)| idx.iter().copied())
        .collect();
    v.sort_unstable();
    v
}
