//! Per-feature affine standardization fit on training data only.

use crate::data::{DesignMatrix, MultiSubjectDataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    /// Population standard deviation; 1 for constant features.
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit_rows<'a>(rows: impl Iterator<Item = &'a [f64]>, d: usize) -> Result<Self> {
        let mut n = 0usize;
        let mut sum = vec![0.0; d];
        let rows: Vec<&[f64]> = rows.collect();
        for r in &rows {
            if r.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: r.len() });
            }
            for (s, v) in sum.iter_mut().zip(r.iter()) {
                *s += v;
            }
            n += 1;
        }
        if n == 0 {
            return Err(Error::invalid("cannot standardize on zero rows"));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let mut ss = vec![0.0; d];
        for r in &rows {
            for ((acc, v), m) in ss.iter_mut().zip(r.iter()).zip(&mean) {
                *acc += (v - m) * (v - m);
            }
        }
        let scale = ss
            .iter()
            .map(|s| {
                let sd = (s / n as f64).sqrt();
                if sd > 0.0 && sd.is_finite() {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Standardizer { mean, scale })
    }

    /// Statistics over every trial of `train`.
    pub fn fit(train: &MultiSubjectDataset) -> Result<Self> {
        Standardizer::fit_rows(
            train
                .subjects()
                .iter()
                .flat_map(|s| s.trials().iter().map(|t| t.features.as_slice())),
            train.d(),
        )
    }

    pub fn fit_matrix(x: &DesignMatrix) -> Result<Self> {
        Standardizer::fit_rows(x.row_iter(), x.cols())
    }

    pub fn transform_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    pub fn apply(&self, data: &MultiSubjectDataset) -> Result<MultiSubjectDataset> {
        if data.d() != self.mean.len() {
            return Err(Error::DimensionMismatch { expected: self.mean.len(), got: data.d() });
        }
        let subjects = data
            .subjects()
            .iter()
            .map(|s| s.map_features(|r| self.transform_row(r)))
            .collect::<Result<Vec<_>>>()?;
        MultiSubjectDataset::new(subjects)
    }

    /// Transforms the rows of `x`; weights are kept.
    pub fn apply_matrix(&self, x: &DesignMatrix) -> Result<DesignMatrix> {
        if x.cols() != self.mean.len() {
            return Err(Error::DimensionMismatch { expected: self.mean.len(), got: x.cols() });
        }
        let values: Vec<f64> = x.row_iter().flat_map(|r| self.transform_row(r)).collect();
        let out = DesignMatrix::new(x.rows(), x.cols(), values)?;
        match x.weights() {
            Some(w) => out.with_weights(w.to_vec()),
            None => Ok(out),
        }
    }
}

/// Fits on `train` and applies the same map to every dataset in `apply_to`.
pub fn standardize(
    train: &MultiSubjectDataset,
    apply_to: &[&MultiSubjectDataset],
) -> Result<(Vec<MultiSubjectDataset>, Standardizer)> {
    let params = Standardizer::fit(train)?;
    let out = apply_to
        .iter()
        .map(|d| params.apply(d))
        .collect::<Result<Vec<_>>>()?;
    Ok((out, params))
}
