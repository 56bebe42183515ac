//! Leave-one-subject-out and within-subject k-fold harnesses, and the
//! results table they fill.
//!
//! Fits only ever receive training subjects plus the held-out subject's
//! features; held-out labels are read by [`accuracy`] alone.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::data::{split_kfold, MultiSubjectDataset, SubjectDataset, SubjectId};
use crate::decoders::{fit_decoder, predict_decoder, DecoderSpec, Method, Predictions};
use crate::error::{Error, Result};
use crate::rng::{keyed_rng, tag};
use crate::standardize::Standardizer;

/// Fraction of positions where `predicted` and `truth` agree.
pub fn accuracy(predicted: &[u8], truth: &[u8]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            got: predicted.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::invalid("accuracy of an empty prediction"));
    }
    let hits = predicted.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / truth.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    /// Folds for the within-subject "single" column.
    pub k: usize,
    /// Standardize features with training-side statistics.
    pub standardize: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            k: 6,
            standardize: true,
        }
    }
}

/// Fits `spec` on every subject but `held_out` and predicts the held-out
/// subject's trials. Only the held-out features reach the fit.
pub fn predict_held_out(
    dataset: &MultiSubjectDataset,
    held_out: SubjectId,
    spec: &DecoderSpec,
    standardize: bool,
) -> Result<Predictions> {
    let test = dataset.subject(held_out).ok_or(Error::UnknownSubject(held_out))?;
    let train = dataset.without(held_out)?;
    let target = test.design_matrix();
    let (train, target) = if standardize {
        let params = Standardizer::fit(&train)?;
        (params.apply(&train)?, params.apply_matrix(&target)?)
    } else {
        (train, target)
    };
    let decoder = fit_decoder(spec, &train, Some(&target))?;
    predict_decoder(&decoder, &target)
}

/// Accuracy on `held_out` of `spec` trained on every other subject.
pub fn held_out_accuracy(dataset: &MultiSubjectDataset, held_out: SubjectId, spec: &DecoderSpec, standardize: bool) -> Result<f64> {
    let pred = predict_held_out(dataset, held_out, spec, standardize)?;
    let truth = dataset.subject(held_out).ok_or(Error::UnknownSubject(held_out))?.labels();
    accuracy(&pred.labels, &truth)
}

/// Folds for the within-subject protocol: stratified when every class has at
/// least `k` trials, otherwise a seeded unstratified partition (needed for
/// leave-one-out).
fn within_subject_folds(subject: &SubjectDataset, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    let counts = subject.class_counts();
    if counts[0] >= k && counts[1] >= k {
        return split_kfold(subject, k, seed);
    }
    if k < 2 || k > subject.len() {
        return Err(Error::invalid(format!(
            "cannot split {} trials into {k} folds",
            subject.len()
        )));
    }
    let mut idx: Vec<usize> = (0..subject.len()).collect();
    idx.shuffle(&mut keyed_rng(seed, &[tag::FOLDS, subject.subject_id() as u64]));
    let mut folds = vec![Vec::new(); k];
    for (r, i) in idx.into_iter().enumerate() {
        folds[r % k].push(i);
    }
    folds.iter_mut().for_each(|f| f.sort_unstable());
    Ok(folds)
}

/// Mean held-out-fold accuracy of `spec` (fit as a one-subject decoder)
/// under within-subject k-fold cross-validation.
pub fn kfold_single(subject: &SubjectDataset, k: usize, spec: &DecoderSpec, seed: u64, standardize: bool) -> Result<f64> {
    let folds = within_subject_folds(subject, k, seed)?;
    let single = DecoderSpec {
        method: Method::Single,
        ..spec.clone()
    }
    .with_seed(seed);
    let mut total = 0.0;
    for f in 0..folds.len() {
        let train_idx = crate::data::complement(&folds, f);
        let (xt, yt) = subject.subset(&train_idx);
        let (xv, yv) = subject.subset(&folds[f]);
        let (xt, xv) = if standardize {
            let params = Standardizer::fit_matrix(&xt)?;
            (params.apply_matrix(&xt)?, params.apply_matrix(&xv)?)
        } else {
            (xt, xv)
        };
        let rows: Vec<Vec<f64>> = xt.row_iter().map(|r| r.to_vec()).collect();
        let train = MultiSubjectDataset::new(vec![SubjectDataset::from_rows(subject.subject_id(), rows, &yt)?])?;
        let decoder = fit_decoder(&single, &train, None)?;
        let pred = predict_decoder(&decoder, &xv)?;
        total += accuracy(&pred.labels, &yv)?;
    }
    Ok(total / folds.len() as f64)
}

/// A cell is either an accuracy or the error that prevented it.
pub type CellResult = std::result::Result<f64, String>;

#[derive(Debug, Clone, PartialEq)]
pub struct TableMeta {
    pub seed: u64,
    pub fingerprint: String,
    /// Resolved options, in display order.
    pub options: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultsTable {
    pub methods: Vec<Method>,
    pub rows: BTreeMap<SubjectId, BTreeMap<Method, CellResult>>,
    pub meta: TableMeta,
}

impl ResultsTable {
    pub fn cell(&self, subject: SubjectId, method: Method) -> Option<&CellResult> {
        self.rows.get(&subject).and_then(|r| r.get(&method))
    }

    /// Mean over subjects with a successful cell.
    pub fn mean(&self, method: Method) -> Option<f64> {
        let vals: Vec<f64> = self
            .rows
            .values()
            .filter_map(|r| r.get(&method).and_then(|c| c.as_ref().ok()).copied())
            .collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    }

    pub fn failures(&self) -> Vec<(SubjectId, Method, &str)> {
        self.rows
            .iter()
            .flat_map(|(&s, r)| {
                r.iter()
                    .filter_map(move |(&m, c)| c.as_ref().err().map(|e| (s, m, e.as_str())))
            })
            .collect()
    }

    fn csv_cell(&self, cell: Option<&CellResult>) -> String {
        match cell {
            None => String::new(),
            Some(Ok(v)) => format!("{v}"),
            Some(Err(_)) => "NA".to_string(),
        }
    }

    /// `subject,single,pool,sg,sg_cs` rows plus a final `mean` row. Methods
    /// not evaluated are empty; failed cells read `NA`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("subject,single,pool,sg,sg_cs\n");
        for (sid, row) in &self.rows {
            let cells: Vec<String> = Method::ALL.iter().map(|m| self.csv_cell(row.get(m))).collect();
            let _ = writeln!(s, "{sid},{}", cells.join(","));
        }
        let means: Vec<String> = Method::ALL
            .iter()
            .map(|&m| {
                if self.methods.contains(&m) {
                    self.mean(m).map(|v| format!("{v}")).unwrap_or_else(|| "NA".into())
                } else {
                    String::new()
                }
            })
            .collect();
        let _ = writeln!(s, "mean,{}", means.join(","));
        s
    }

    /// Aligned text table with a protocol line per column and the metadata.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = write!(s, "{:>6} |", "Subj.");
        for m in &self.methods {
            let _ = write!(s, " {:>6}", m.title());
        }
        s.push('\n');
        let width = 8 + 7 * self.methods.len();
        s.push_str(&"-".repeat(width));
        s.push('\n');
        for (sid, row) in &self.rows {
            let _ = write!(s, "{sid:>6} |");
            for m in &self.methods {
                match row.get(m) {
                    Some(Ok(v)) => {
                        let _ = write!(s, " {v:>6.2}");
                    }
                    _ => {
                        let _ = write!(s, " {:>6}", "NA");
                    }
                }
            }
            s.push('\n');
        }
        s.push_str(&"=".repeat(width));
        s.push('\n');
        let _ = write!(s, "{:>6} |", "mean");
        for m in &self.methods {
            match self.mean(*m) {
                Some(v) => {
                    let _ = write!(s, " {v:>6.2}");
                }
                None => {
                    let _ = write!(s, " {:>6}", "NA");
                }
            }
        }
        s.push_str("\n\n");
        for m in &self.methods {
            let protocol = match m {
                Method::Single => "within-subject k-fold CV",
                _ => "leave-one-subject-out",
            };
            let _ = writeln!(s, "{:>6}: {protocol}", m.title());
        }
        let _ = writeln!(s, "seed: {}", self.meta.seed);
        let _ = writeln!(s, "dataset: {}", self.meta.fingerprint);
        for (k, v) in &self.meta.options {
            let _ = writeln!(s, "{k}: {v}");
        }
        for (sid, m, e) in self.failures() {
            let _ = writeln!(s, "failed: subject {sid} {m}: {e}");
        }
        s
    }
}

/// Runs every method for every subject: the single column by within-subject
/// k-fold, the others by leave-one-subject-out. Failed cells are recorded
/// with their error.
pub fn loso(dataset: &MultiSubjectDataset, methods: &[DecoderSpec], opts: &EvalOptions, seed: u64) -> Result<ResultsTable> {
    if dataset.subjects().len() < 2 {
        return Err(Error::invalid("leave-one-subject-out needs at least 2 subjects"));
    }
    for spec in methods {
        spec.validate()?;
    }
    let jobs: Vec<(SubjectId, usize)> = dataset
        .subject_ids()
        .into_iter()
        .flat_map(|s| (0..methods.len()).map(move |m| (s, m)))
        .collect();
    let results: Vec<(SubjectId, Method, CellResult)> = jobs
        .par_iter()
        .map(|&(sid, mi)| {
            let spec = methods[mi].clone().with_seed(seed);
            let res = match spec.method {
                Method::Single => {
                    let subject = dataset.subject(sid).expect("listed subject");
                    kfold_single(subject, opts.k, &spec, seed, opts.standardize)
                }
                _ => held_out_accuracy(dataset, sid, &spec, opts.standardize),
            };
            (sid, spec.method, res.map_err(|e| e.to_string()))
        })
        .collect();
    let mut rows: BTreeMap<SubjectId, BTreeMap<Method, CellResult>> = BTreeMap::new();
    for (sid, m, r) in results {
        rows.entry(sid).or_default().insert(m, r);
    }
    let mut ordered: Vec<Method> = methods.iter().map(|s| s.method).collect();
    ordered.sort();
    ordered.dedup();
    Ok(ResultsTable {
        methods: ordered,
        rows,
        meta: TableMeta {
            seed,
            fingerprint: dataset.fingerprint(),
            options: vec![
                ("k".into(), opts.k.to_string()),
                ("standardize".into(), opts.standardize.to_string()),
            ],
        },
    })
}

/// Mean accuracy of `spec` under independent within-subject label
/// permutations of every subject (training and held-out alike), one value
/// per permutation.
pub fn permutation_check(
    dataset: &MultiSubjectDataset,
    spec: &DecoderSpec,
    n_permutations: usize,
    opts: &EvalOptions,
    seed: u64,
) -> Result<Vec<f64>> {
    if n_permutations == 0 {
        return Err(Error::NoPermutations);
    }
    (0..n_permutations)
        .into_par_iter()
        .map(|p| {
            let permuted = permute_labels(dataset, seed, p as u64)?;
            let table = loso(&permuted, std::slice::from_ref(spec), opts, seed)?;
            if let Some((sid, m, e)) = table.failures().first() {
                return Err(Error::invalid(format!("permutation {p}: subject {sid} {m}: {e}")));
            }
            table
                .mean(spec.method)
                .ok_or_else(|| Error::invalid("no accuracies produced"))
        })
        .collect()
}

/// Shuffles labels within each subject with a stream keyed by `(seed, p, subject)`.
pub fn permute_labels(dataset: &MultiSubjectDataset, seed: u64, p: u64) -> Result<MultiSubjectDataset> {
    let subjects = dataset
        .subjects()
        .iter()
        .map(|s| {
            let mut labels = s.labels();
            labels.shuffle(&mut keyed_rng(seed, &[tag::PERMUTATION, p, s.subject_id() as u64]));
            s.with_labels(&labels)
        })
        .collect::<Result<Vec<_>>>()?;
    MultiSubjectDataset::new(subjects)
}
