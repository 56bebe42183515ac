//! Importance weights `P_T(x) / P_S(x)` from a source-vs-target domain classifier.
//!
//! The classifier sees features only. Its out-of-fold posterior `p(x)` of
//! "target" gives the raw ratio `(n_S / n_T) * p / (1 - p)`, which is clipped
//! and rescaled to mean one.

use crate::data::DesignMatrix;
use crate::error::{Error, Result};
use crate::glm::{FitOptions, LambdaRule, LinearModel};
use crate::rng::hash_row;

/// Feature space in which the domain classifier runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ShiftSpace {
    /// One first-level probability per training subject.
    SecondLevel,
    /// The raw trial features.
    Original,
}

impl ShiftSpace {
    pub fn as_str(&self) -> &'static str {
        match self {
            ShiftSpace::SecondLevel => "second_level",
            ShiftSpace::Original => "original",
        }
    }
}

impl std::str::FromStr for ShiftSpace {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "second_level" => Ok(ShiftSpace::SecondLevel),
            "original" => Ok(ShiftSpace::Original),
            other => Err(Error::invalid(format!(
                "unknown shift space {other:?} (expected second_level or original)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftOptions {
    pub clip_lo: f64,
    pub clip_hi: f64,
    /// L1 strength of the domain classifier.
    pub domain_lambda: LambdaRule,
    pub space: ShiftSpace,
    /// Folds used to obtain out-of-fold posteriors for source rows.
    pub folds: usize,
    pub seed: u64,
    pub solver: FitOptions,
}

impl Default for ShiftOptions {
    fn default() -> Self {
        ShiftOptions {
            clip_lo: 0.1,
            clip_hi: 10.0,
            domain_lambda: LambdaRule::Relative(0.01),
            space: ShiftSpace::SecondLevel,
            folds: 3,
            seed: 0,
            solver: FitOptions::default(),
        }
    }
}

impl ShiftOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_lo > 0.0 && self.clip_lo <= self.clip_hi && self.clip_hi.is_finite()) {
            return Err(Error::invalid(format!(
                "clip bounds must satisfy 0 < lo <= hi, got [{}, {}]",
                self.clip_lo, self.clip_hi
            )));
        }
        if self.folds < 2 {
            return Err(Error::invalid("domain classifier needs at least 2 folds"));
        }
        Ok(())
    }
}

/// One weight per source row, mean one.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceWeights {
    pub weights: Vec<f64>,
    pub clip_lo: f64,
    pub clip_hi: f64,
    /// Mean of the clipped ratios, i.e. the normalizing divisor.
    pub raw_mean: f64,
}

impl ImportanceWeights {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.weights.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.weights.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `trial_index,weight` CSV.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("trial_index,weight\n");
        for (i, w) in self.weights.iter().enumerate() {
            s.push_str(&format!("{i},{w:?}\n"));
        }
        s
    }
}

/// Raw (unclipped) density-ratio estimates for every source row, together
/// with the domain-classifier log-odds they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioEstimate {
    pub log_odds: Vec<f64>,
    pub ratios: Vec<f64>,
}

/// Domain classifier out-of-fold log-odds of "target" for every source row.
///
/// Fold membership of a row is decided by a seeded hash of its contents, so
/// permuting the source rows permutes the output the same way.
pub fn domain_log_odds(
    source: &DesignMatrix,
    target: &DesignMatrix,
    opts: &ShiftOptions,
) -> Result<Vec<f64>> {
    opts.validate()?;
    if source.rows() == 0 || target.rows() == 0 {
        return Err(Error::invalid("source and target must both be non-empty"));
    }
    if source.cols() != target.cols() {
        return Err(Error::DimensionMismatch {
            expected: source.cols(),
            got: target.cols(),
        });
    }
    if !source.is_finite() || !target.is_finite() {
        return Err(Error::NonFinite("domain features"));
    }
    // Rows are fed to every fit in a canonical content order, so the result
    // does not depend on how the caller ordered them.
    let order_s = content_order(source, opts.seed);
    let order_t = content_order(target, opts.seed);
    let combined = DesignMatrix::vstack(&[&source.select_rows(&order_s), &target.select_rows(&order_t)])?;
    let n_s = source.rows();
    let labels: Vec<u8> = (0..combined.rows()).map(|i| u8::from(i >= n_s)).collect();

    let k = opts.folds;
    let mut out = vec![0.0; n_s];
    if n_s.min(target.rows()) < k {
        // too few rows to hold any out; fall back to an in-sample posterior
        let m = fit_domain(&combined, &labels, opts)?;
        for (i, o) in out.iter_mut().enumerate() {
            *o = m.score(source.row(i));
        }
        return Ok(out);
    }

    // canonical rank r goes to fold r % k, separately within each domain
    let fold_of = |pos: usize| if pos < n_s { pos % k } else { (pos - n_s) % k };
    for f in 0..k {
        let train: Vec<usize> = (0..combined.rows()).filter(|&p| fold_of(p) != f).collect();
        let xt = combined.select_rows(&train);
        let yt: Vec<u8> = train.iter().map(|&p| labels[p]).collect();
        let m = fit_domain(&xt, &yt, opts)?;
        for (pos, &i) in order_s.iter().enumerate() {
            if pos % k == f {
                out[i] = m.score(source.row(i));
            }
        }
    }
    Ok(out)
}

fn fit_domain(x: &DesignMatrix, y: &[u8], opts: &ShiftOptions) -> Result<LinearModel> {
    opts.domain_lambda.fit(x, y, &opts.solver, opts.seed)
}

/// Row indices sorted by a seeded content hash (ties broken by the raw bits).
fn content_order(x: &DesignMatrix, seed: u64) -> Vec<usize> {
    let mut keyed: Vec<(u64, Vec<u64>, usize)> = x
        .row_iter()
        .enumerate()
        .map(|(i, r)| (hash_row(seed, r), r.iter().map(|v| v.to_bits()).collect(), i))
        .collect();
    // identical rows tie on (hash, bits); their relative order cannot matter
    keyed.sort_by(|a, b| (a.0, &a.1).cmp(&(b.0, &b.1)));
    keyed.into_iter().map(|(_, _, i)| i).collect()
}

/// Unclipped ratios `(n_S / n_T) * exp(log_odds)`.
pub fn raw_ratios(
    source: &DesignMatrix,
    target: &DesignMatrix,
    opts: &ShiftOptions,
) -> Result<RatioEstimate> {
    let log_odds = domain_log_odds(source, target, opts)?;
    let prior = (source.rows() as f64 / target.rows() as f64).ln();
    let ratios = log_odds.iter().map(|s| (prior + s).exp()).collect();
    Ok(RatioEstimate { log_odds, ratios })
}

/// Estimates mean-one importance weights for the source rows.
///
/// Only features enter; there is no way to pass target labels.
pub fn estimate_weights(
    source: &DesignMatrix,
    target: &DesignMatrix,
    opts: &ShiftOptions,
) -> Result<ImportanceWeights> {
    let est = raw_ratios(source, target, opts)?;
    normalize(&est.ratios, opts.clip_lo, opts.clip_hi)
}

/// Clips ratios to `[lo, hi]` and divides by their mean.
pub fn normalize(ratios: &[f64], lo: f64, hi: f64) -> Result<ImportanceWeights> {
    if ratios.is_empty() {
        return Err(Error::invalid("no ratios to normalize"));
    }
    let clipped: Vec<f64> = ratios.iter().map(|r| r.clamp(lo, hi)).collect();
    let mean = clipped.iter().sum::<f64>() / clipped.len() as f64;
    let weights = clipped.iter().map(|c| c / mean).collect();
    Ok(ImportanceWeights {
        weights,
        clip_lo: lo,
        clip_hi: hi,
        raw_mean: mean,
    })
}

/// Exact ratio of the `N(mu_t, sigma_t^2)` and `N(mu_s, sigma_s^2)` densities at `x`.
pub fn true_gaussian_ratio(x: f64, mu_s: f64, sigma_s: f64, mu_t: f64, sigma_t: f64) -> f64 {
    let zs = (x - mu_s) / sigma_s;
    let zt = (x - mu_t) / sigma_t;
    (sigma_s / sigma_t) * (0.5 * (zs * zs - zt * zt)).exp()
}

/// Fits a model on source rows with the given weights attached; the shared
/// entry point for covariate-shift-corrected training.
pub fn fit_weighted(
    source: &DesignMatrix,
    labels: &[u8],
    weights: &ImportanceWeights,
    rule: LambdaRule,
    solver: &FitOptions,
    seed: u64,
) -> Result<LinearModel> {
    let x = source.clone().with_weights(weights.weights.clone())?;
    rule.fit(&x, labels, solver, seed)
}
