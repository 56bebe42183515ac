//! The four compared methods behind one interface.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use crate::data::{pool, DesignMatrix, MultiSubjectDataset, SubjectId};
use crate::error::{Error, Result};
use crate::glm::{predict_proba, FitOptions, LambdaRule, LinearModel};
use crate::shift::ShiftOptions;
use crate::stacking::{fit_stacked, predict_stacked, StackedModel, StackingOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    /// One subject's own model (within-subject protocol).
    Single,
    /// One model on all training subjects' trials.
    Pool,
    /// Stacked generalization over per-subject models.
    Sg,
    /// Stacked generalization with covariate-shift weighted combiner.
    SgCs,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Single, Method::Pool, Method::Sg, Method::SgCs];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Single => "single",
            Method::Pool => "pool",
            Method::Sg => "sg",
            Method::SgCs => "sg_cs",
        }
    }

    /// Column heading in the rendered results table.
    pub fn title(&self) -> &'static str {
        match self {
            Method::Single => "single",
            Method::Pool => "pool",
            Method::Sg => "SG",
            Method::SgCs => "SG+CS",
        }
    }

    pub fn needs_target(&self) -> bool {
        matches!(self, Method::SgCs)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown method {s:?} (expected one of single, pool, sg, sg_cs)"
                ))
            })
    }
}

/// Everything needed to fit one method.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderSpec {
    pub method: Method,
    pub solver: FitOptions,
    /// L1 rule for single and pool fits.
    pub lambda: LambdaRule,
    pub stacking: StackingOptions,
    pub shift: ShiftOptions,
    pub seed: u64,
}

impl DecoderSpec {
    pub fn new(method: Method) -> Self {
        DecoderSpec {
            method,
            solver: FitOptions::default(),
            lambda: LambdaRule::default(),
            stacking: StackingOptions::default(),
            shift: ShiftOptions::default(),
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.shift.seed = seed;
        self
    }

    /// Validates every option group, relevant to the method or not.
    pub fn validate(&self) -> Result<()> {
        self.shift.validate()?;
        if self.stacking.k < 2 {
            return Err(Error::invalid(format!("stacking k must be >= 2, got {}", self.stacking.k)));
        }
        for rule in [self.lambda, self.stacking.first_level, self.stacking.second_level] {
            match rule {
                LambdaRule::Absolute(v) | LambdaRule::Relative(v) if !(v >= 0.0 && v.is_finite()) => {
                    return Err(Error::invalid(format!("lambda setting must be finite and >= 0, got {v}")))
                }
                _ => {}
            }
        }
        if !(self.solver.tol > 0.0) || self.solver.max_iter == 0 {
            return Err(Error::invalid("solver needs tol > 0 and max_iter >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DecoderModel {
    Linear(LinearModel),
    Stacked(StackedModel),
}

/// Summary of the importance weights used by an SG+CS fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightsSummary {
    pub min: f64,
    pub max: f64,
    pub raw_mean: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderMeta {
    pub subjects: Vec<SubjectId>,
    /// Lambda of the final (pooled, single or combiner) fit.
    pub lambda: f64,
    pub weights: Option<WeightsSummary>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedDecoder {
    pub method: Method,
    pub model: DecoderModel,
    pub meta: DecoderMeta,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Predictions {
    pub labels: Vec<u8>,
    pub probabilities: Vec<f64>,
}

/// Fits `spec.method` on `train`. `target` carries the held-out subject's
/// features only; it is required for SG+CS and ignored otherwise.
pub fn fit_decoder(
    spec: &DecoderSpec,
    train: &MultiSubjectDataset,
    target: Option<&DesignMatrix>,
) -> Result<FittedDecoder> {
    spec.validate()?;
    let subjects = train.subject_ids();
    let (model, lambda, weights) = match spec.method {
        Method::Single | Method::Pool => {
            if spec.method == Method::Single && subjects.len() != 1 {
                return Err(Error::invalid(format!(
                    "single needs exactly one training subject, got {}",
                    subjects.len()
                )));
            }
            let (x, y) = pool(train, &BTreeSet::new())?;
            let m = spec.lambda.fit(&x, &y, &spec.solver, spec.seed)?;
            let lambda = m.lambda;
            (DecoderModel::Linear(m), lambda, None)
        }
        Method::Sg | Method::SgCs => {
            let target = if spec.method == Method::SgCs {
                Some(target.ok_or(Error::MissingTarget)?)
            } else {
                None
            };
            let m = fit_stacked(train, target, &spec.stacking, &spec.shift, spec.seed)?;
            let lambda = m.combiner.lambda;
            let weights = m.weights.as_ref().map(|w| WeightsSummary {
                min: w.min(),
                max: w.max(),
                raw_mean: w.raw_mean,
            });
            (DecoderModel::Stacked(m), lambda, weights)
        }
    };
    Ok(FittedDecoder {
        method: spec.method,
        model,
        meta: DecoderMeta {
            subjects,
            lambda,
            weights,
            seed: spec.seed,
        },
    })
}

/// Probabilities and labels (ties at 0.5 go to class 1).
pub fn predict_decoder(decoder: &FittedDecoder, x: &DesignMatrix) -> Result<Predictions> {
    let probabilities = match &decoder.model {
        DecoderModel::Linear(m) => predict_proba(m, x)?,
        DecoderModel::Stacked(m) => predict_stacked(m, x)?,
    };
    let labels = probabilities.iter().map(|&p| u8::from(p >= 0.5)).collect();
    Ok(Predictions {
        labels,
        probabilities,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::glm::{fit, lambda_max};
    use crate::synth::{generate, SynthConfig};

    fn data() -> MultiSubjectDataset {
        generate(&SynthConfig {
            n_subjects: 3,
            trials_per_subject: 48,
            d: 5,
            mu: 2.0,
            sigma: 1.0,
            gamma: 0.3,
            tau: 0.4,
            seed: 21,
        })
        .unwrap()
        .0
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert!("stacking".parse::<Method>().is_err());
    }

    #[test]
    fn sg_cs_requires_target() {
        let ds = data();
        let err = fit_decoder(&DecoderSpec::new(Method::SgCs), &ds, None).unwrap_err();
        assert_eq!(err.to_string(), "SG+CS requires unlabeled target trials");
    }

    #[test]
    fn single_requires_one_subject() {
        assert!(fit_decoder(&DecoderSpec::new(Method::Single), &data(), None).is_err());
    }

    #[test]
    fn single_is_a_plain_fit() {
        let ds = data();
        let one = MultiSubjectDataset::new(vec![ds.subjects()[0].clone()]).unwrap();
        let dec = fit_decoder(&DecoderSpec::new(Method::Single), &one, None).unwrap();
        let x = one.subjects()[0].design_matrix();
        let y = one.subjects()[0].labels();
        let direct = fit(&x, &y, &FitOptions { lambda: 0.01 * lambda_max(&x, &y).unwrap(), ..Default::default() }).unwrap();
        assert_eq!(dec.model, DecoderModel::Linear(direct));
    }

    #[test]
    fn invalid_irrelevant_options_still_rejected() {
        let mut spec = DecoderSpec::new(Method::Pool);
        spec.shift.clip_lo = -1.0;
        assert!(fit_decoder(&spec, &data(), None).is_err());
    }

    #[test]
    fn empty_input_gives_empty_output() {
        let ds = data();
        let dec = fit_decoder(&DecoderSpec::new(Method::Sg), &ds, None).unwrap();
        let empty = DesignMatrix::new(0, 5, vec![]).unwrap();
        assert_eq!(predict_decoder(&dec, &empty).unwrap(), Predictions::default());
    }

    #[test]
    fn prediction_dispatch() {
        let ds = data();
        let x = ds.subjects()[2].design_matrix();
        let pool_dec = fit_decoder(&DecoderSpec::new(Method::Pool), &ds, None).unwrap();
        let DecoderModel::Linear(m) = &pool_dec.model else { panic!() };
        assert_eq!(predict_decoder(&pool_dec, &x).unwrap().probabilities, predict_proba(m, &x).unwrap());
        let sg = fit_decoder(&DecoderSpec::new(Method::Sg), &ds, None).unwrap();
        let DecoderModel::Stacked(s) = &sg.model else { panic!() };
        assert_eq!(predict_decoder(&sg, &x).unwrap().probabilities, predict_stacked(s, &x).unwrap());
    }
}
