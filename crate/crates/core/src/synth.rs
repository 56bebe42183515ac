//! Synthetic multi-subject data with controllable covariate shift.
//!
//! Subject `s` draws latent `z = y * mu * e1 + eps`, `eps ~ N(0, sigma^2 I)`,
//! and observes `x = A_s z + b_s` with `A_s = I + gamma * G_s / sqrt(d)` and
//! `b_s ~ N(0, tau^2 I)`. Every random draw comes from a stream keyed by
//! `(seed, subject, trial)`, so output does not depend on scheduling.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};


use crate::data::{stratified_folds, DesignMatrix, MultiSubjectDataset, SubjectDataset, SubjectId};
use crate::error::{Error, Result};
use crate::glm::{FitOptions, LambdaRule};
use crate::rng::{keyed_rng, tag};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_subjects: usize,
    pub trials_per_subject: usize,
    pub d: usize,
    /// Class separation along the shared discriminative axis.
    pub mu: f64,
    /// Within-class noise scale.
    pub sigma: f64,
    /// Scale of the per-subject perturbation of the identity transform.
    pub gamma: f64,
    /// Scale of the per-subject mean shift.
    pub tau: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_subjects: 8,
            trials_per_subject: 200,
            d: 60,
            mu: mu_for_bayes(0.85, 1.0),
            sigma: 1.0,
            gamma: 0.3,
            tau: 0.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let scales = [("mu", self.mu), ("sigma", self.sigma), ("gamma", self.gamma), ("tau", self.tau)];
        for (name, v) in scales {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if self.d == 0 {
            return Err(Error::invalid("d must be at least 1"));
        }
        if self.n_subjects == 0 {
            return Err(Error::invalid("need at least one subject"));
        }
        if self.trials_per_subject < 2 || !self.trials_per_subject.is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "trials_per_subject must be even and >= 2, got {}",
                self.trials_per_subject
            )));
        }
        Ok(())
    }
}

/// Class separation giving Bayes accuracy `accuracy` at noise `sigma`.
pub fn mu_for_bayes(accuracy: f64, sigma: f64) -> f64 {
    let mut z = Normal::standard().inverse_cdf(accuracy);
    // polish to full precision against the erfc-based cdf
    for _ in 0..2 {
        let density = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
        z -= (phi(z) - accuracy) / density;
    }
    2.0 * sigma * z
}

/// Standard normal cdf.
pub fn phi(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Per-subject transform and shift.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectParams {
    pub subject_id: SubjectId,
    pub d: usize,
    /// Row-major `d x d`.
    pub transform: Vec<f64>,
    pub shift: Vec<f64>,
}

impl SubjectParams {
    pub fn draw(cfg: &SynthConfig, subject_id: SubjectId) -> Self {
        let d = cfg.d;
        let mut rng = keyed_rng(cfg.seed, &[tag::SUBJECT_TRANSFORM, subject_id as u64]);
        let scale = cfg.gamma / (d as f64).sqrt();
        let mut transform = vec![0.0; d * d];
        for (idx, a) in transform.iter_mut().enumerate() {
            let g: f64 = StandardNormal.sample(&mut rng);
            *a = scale * g + if idx / d == idx % d { 1.0 } else { 0.0 };
        }
        let mut rng = keyed_rng(cfg.seed, &[tag::SUBJECT_SHIFT, subject_id as u64]);
        let shift = (0..d)
            .map(|_| {
                let g: f64 = StandardNormal.sample(&mut rng);
                cfg.tau * g
            })
            .collect();
        SubjectParams {
            subject_id,
            d,
            transform,
            shift,
        }
    }

    fn apply(&self, z: &[f64]) -> Vec<f64> {
        let d = self.d;
        (0..d)
            .map(|i| {
                let row = &self.transform[i * d..(i + 1) * d];
                row.iter().zip(z).map(|(a, b)| a * b).sum::<f64>() + self.shift[i]
            })
            .collect()
    }

    fn transform_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.d, self.d, &self.transform)
    }
}

fn draw_subject(cfg: &SynthConfig, params: &SubjectParams) -> Result<SubjectDataset> {
    let sid = params.subject_id;
    let rows: Vec<Vec<f64>> = (0..cfg.trials_per_subject)
        .map(|t| {
            let mut rng = keyed_rng(cfg.seed, &[tag::TRIAL_NOISE, sid as u64, t as u64]);
            let mut z: Vec<f64> = (0..cfg.d)
                .map(|_| {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    cfg.sigma * e
                })
                .collect();
            z[0] += label_of(t) as f64 * cfg.mu;
            params.apply(&z)
        })
        .collect();
    let labels: Vec<u8> = (0..cfg.trials_per_subject).map(label_of).collect();
    SubjectDataset::from_rows(sid, rows, &labels)
}

fn label_of(trial: usize) -> u8 {
    (trial % 2) as u8
}

/// Generates the dataset; subject ids are `1..=n_subjects`.
pub fn generate(cfg: &SynthConfig) -> Result<(MultiSubjectDataset, Vec<SubjectParams>)> {
    cfg.validate()?;
    let parts: Vec<(SubjectDataset, SubjectParams)> = (1..=cfg.n_subjects as SubjectId)
        .into_par_iter()
        .map(|sid| {
            let params = SubjectParams::draw(cfg, sid);
            draw_subject(cfg, &params).map(|s| (s, params))
        })
        .collect::<Result<_>>()?;
    let (subjects, params): (Vec<_>, Vec<_>) = parts.into_iter().unzip();
    Ok((MultiSubjectDataset::new(subjects)?, params))
}

/// Largest condition number of `A A'` accepted before declaring it singular.
const MAX_CONDITION: f64 = 1e12;

/// Accuracy of the optimal classifier for one subject:
/// `Phi(sqrt(D' S^-1 D) / 2)` with `D = mu A e1` and `S = sigma^2 A A'`.
pub fn bayes_accuracy(params: &SubjectParams, cfg: &SynthConfig) -> Result<f64> {
    if !(cfg.sigma > 0.0) {
        return Err(Error::invalid("sigma must be positive"));
    }
    if !(cfg.mu >= 0.0) {
        return Err(Error::invalid("mu must be nonnegative"));
    }
    if params.d != cfg.d {
        return Err(Error::DimensionMismatch {
            expected: cfg.d,
            got: params.d,
        });
    }
    let a = params.transform_matrix();
    let sv = a.clone().singular_values();
    let smax = sv.max();
    let smin = sv.min();
    let condition = if smin > 0.0 { (smax / smin).powi(2) } else { f64::INFINITY };
    if !(condition < MAX_CONDITION) {
        return Err(Error::SingularCovariance { condition });
    }
    let cov = (&a * a.transpose()) * (cfg.sigma * cfg.sigma);
    let delta: DVector<f64> = a.column(0) * cfg.mu;
    let chol = cov
        .cholesky()
        .ok_or(Error::SingularCovariance { condition })?;
    let solved = chol.solve(&delta);
    let mahalanobis = delta.dot(&solved).max(0.0);
    Ok(phi(0.5 * mahalanobis.sqrt()))
}

/// Pairwise subject distinguishability.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftProfile {
    pub subject_ids: Vec<SubjectId>,
    /// Out-of-fold accuracy of a classifier separating subjects `i < j`,
    /// stored for every unordered pair in row-major upper-triangle order.
    values: Vec<f64>,
}

impl ShiftProfile {
    fn index(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        let n = self.subject_ids.len();
        i * n - i * (i + 1) / 2 + (j - i - 1)
    }

    /// Value for the pair at positions `i != j`; `None` on the diagonal.
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        if i == j || i >= self.subject_ids.len() || j >= self.subject_ids.len() {
            return None;
        }
        Some(self.values[self.index(i, j)])
    }

    pub fn pairs(&self) -> &[f64] {
        &self.values
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// For each pair of subjects, the 3-fold cross-validated accuracy of an L1
/// logistic domain classifier telling their trials apart (0.5 means
/// indistinguishable, 1 means disjoint).
pub fn shift_profile(dataset: &MultiSubjectDataset, seed: u64) -> Result<ShiftProfile> {
    let subjects = dataset.subjects();
    if subjects.len() < 2 {
        return Err(Error::invalid("shift profile needs at least 2 subjects"));
    }
    let n = subjects.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let values = pairs
        .par_iter()
        .map(|&(i, j)| pair_accuracy(&subjects[i], &subjects[j], seed))
        .collect::<Result<Vec<f64>>>()?;
    Ok(ShiftProfile {
        subject_ids: dataset.subject_ids(),
        values,
    })
}

fn pair_accuracy(a: &SubjectDataset, b: &SubjectDataset, seed: u64) -> Result<f64> {
    let x = DesignMatrix::vstack(&[&a.design_matrix(), &b.design_matrix()])?;
    let labels: Vec<u8> = (0..x.rows()).map(|i| u8::from(i >= a.len())).collect();
    let mut rng = keyed_rng(seed, &[tag::DOMAIN_FOLDS, a.subject_id() as u64, b.subject_id() as u64]);
    let folds = stratified_folds(&labels, 3, &mut rng)?;
    let mut correct = 0usize;
    for (f, held) in folds.iter().enumerate() {
        let train = crate::data::complement(&folds, f);
        let yt: Vec<u8> = train.iter().map(|&i| labels[i]).collect();
        let m = LambdaRule::Relative(0.01).fit(&x.select_rows(&train), &yt, &FitOptions::default(), seed)?;
        correct += held
            .iter()
            .filter(|&&i| u8::from(m.score(x.row(i)) >= 0.0) == labels[i])
            .count();
    }
    Ok(correct as f64 / labels.len() as f64)
}
