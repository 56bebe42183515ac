//! Instance-weighted L1-penalized logistic regression.
//!
//! Minimizes
//!
//! ```text
//! F(beta, b) = (1/n) sum_i w_i * [log(1 + exp(s_i)) - y_i * s_i] + lambda * ||beta||_1,
//! s_i = x_i . beta + b
//! ```
//!
//! with weights rescaled to mean one, by accelerated proximal gradient
//! (soft-thresholding prox on `beta`, plain gradient step on `b`) with
//! backtracking on the Lipschitz estimate and function-value restart. Accepted
//! iterates never increase `F`.

use crate::data::DesignMatrix;
use crate::error::{Error, Result};
use crate::rng::{keyed_rng, tag};

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub lambda: f64,
    /// Stop once the relative decrease of the objective falls below this.
    pub tol: f64,
    pub max_iter: usize,
    /// Reserved; the solver itself is deterministic.
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            lambda: 0.0,
            tol: 1e-7,
            max_iter: 2000,
            seed: 0,
        }
    }
}

impl FitOptions {
    fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid(format!(
                "lambda must be finite and nonnegative, got {}",
                self.lambda
            )));
        }
        if !(self.tol > 0.0) {
            return Err(Error::invalid(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::invalid("max_iter must be at least 1"));
        }
        Ok(())
    }
}

/// Fitted logistic regression: `P(y=1|x) = sigmoid(beta . x + intercept)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub beta: Vec<f64>,
    pub intercept: f64,
    pub lambda: f64,
    pub n_iter: usize,
    pub converged: bool,
}

impl LinearModel {
    /// A model ignoring its input: constant probability `sigmoid(intercept)`.
    pub fn constant(d: usize, intercept: f64) -> Self {
        LinearModel {
            beta: vec![0.0; d],
            intercept,
            lambda: 0.0,
            n_iter: 0,
            converged: true,
        }
    }

    pub fn dim(&self) -> usize {
        self.beta.len()
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        dot(&self.beta, x) + self.intercept
    }

    /// `lambda`, `intercept`, then each coefficient, one per line.
    ///
    /// Floats use shortest round-trip formatting, so parsing the text back
    /// yields bitwise-identical values. Fit diagnostics are not stored.
    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity(24 * (self.beta.len() + 2));
        for v in [self.lambda, self.intercept]
            .iter()
            .chain(self.beta.iter())
        {
            s.push_str(&format!("{v:?}\n"));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let values = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(|l| {
                l.parse::<f64>()
                    .map_err(|e| Error::invalid(format!("bad model value {l:?}: {e}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if values.len() < 2 {
            return Err(Error::invalid("model text needs lambda and intercept"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model text"));
        }
        Ok(LinearModel {
            lambda: values[0],
            intercept: values[1],
            beta: values[2..].to_vec(),
            n_iter: 0,
            converged: true,
        })
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(s))` without overflow.
#[inline]
pub fn softplus(s: f64) -> f64 {
    s.max(0.0) + (-s.abs()).exp().ln_1p()
}

#[inline]
fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Validated problem data with weights rescaled to mean one.
struct Problem<'a> {
    x: &'a DesignMatrix,
    y: Vec<f64>,
    w: Vec<f64>,
}

impl<'a> Problem<'a> {
    fn new(x: &'a DesignMatrix, y: &[u8]) -> Result<Self> {
        let n = x.rows();
        if y.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: y.len(),
            });
        }
        if n < 2 {
            return Err(Error::invalid(format!("need at least 2 rows, got {n}")));
        }
        if !x.is_finite() {
            return Err(Error::NonFinite("design matrix"));
        }
        if let Some(l) = y.iter().find(|&&l| l > 1) {
            return Err(Error::invalid(format!("label {l} is not in {{0,1}}")));
        }
        let raw: Vec<f64> = match x.weights() {
            Some(w) => w.to_vec(),
            None => vec![1.0; n],
        };
        let total: f64 = raw.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::invalid("weights must have a positive finite sum"));
        }
        let scale = n as f64 / total;
        let w: Vec<f64> = raw.iter().map(|v| v * scale).collect();
        let mut class_weight = [0.0; 2];
        for (&l, &wi) in y.iter().zip(&w) {
            class_weight[l as usize] += wi;
        }
        if !(class_weight[0] > 0.0 && class_weight[1] > 0.0) {
            return Err(Error::DegenerateLabels);
        }
        Ok(Problem {
            x,
            y: y.iter().map(|&l| f64::from(l)).collect(),
            w,
        })
    }

    fn n(&self) -> usize {
        self.y.len()
    }

    fn d(&self) -> usize {
        self.x.cols()
    }

    /// Weighted fraction of class 1.
    fn prior(&self) -> f64 {
        let num: f64 = self.w.iter().zip(&self.y).map(|(w, y)| w * y).sum();
        num / self.w.iter().sum::<f64>()
    }

    fn prior_intercept(&self) -> f64 {
        let p = self.prior();
        (p / (1.0 - p)).ln()
    }

    fn scores_into(&self, beta: &[f64], b: f64, out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(self.x.row_iter()) {
            *o = dot(beta, row) + b;
        }
    }

    fn loss(&self, scores: &[f64]) -> f64 {
        let total: f64 = scores
            .iter()
            .zip(&self.y)
            .zip(&self.w)
            .map(|((&s, &y), &w)| w * (softplus(s) - y * s))
            .sum();
        total / self.n() as f64
    }

    /// Loss and its gradient at the point whose scores are given.
    fn loss_and_grad(&self, scores: &[f64], g_beta: &mut [f64]) -> (f64, f64) {
        g_beta.iter_mut().for_each(|g| *g = 0.0);
        let mut total = 0.0;
        let mut g_b = 0.0;
        for (i, row) in self.x.row_iter().enumerate() {
            let (s, y, w) = (scores[i], self.y[i], self.w[i]);
            total += w * (softplus(s) - y * s);
            let r = w * (sigmoid(s) - y);
            if r != 0.0 {
                for (g, &xv) in g_beta.iter_mut().zip(row) {
                    *g += r * xv;
                }
            }
            g_b += r;
        }
        let inv_n = 1.0 / self.n() as f64;
        g_beta.iter_mut().for_each(|g| *g *= inv_n);
        (total * inv_n, g_b * inv_n)
    }

    fn lambda_max(&self) -> f64 {
        let p = self.prior();
        let mut g = vec![0.0; self.d()];
        for (i, row) in self.x.row_iter().enumerate() {
            let r = self.w[i] * (p - self.y[i]);
            for (gj, &xv) in g.iter_mut().zip(row) {
                *gj += r * xv;
            }
        }
        let inv_n = 1.0 / self.n() as f64;
        g.iter().fold(0.0_f64, |m, v| m.max((v * inv_n).abs()))
    }

    /// Power-iteration estimate of the largest eigenvalue of the Hessian
    /// bound `(1/4n) X~' W X~`, with `X~` carrying the intercept column.
    fn lipschitz_estimate(&self) -> f64 {
        let d = self.d();
        let mut v = vec![1.0 / ((d + 1) as f64).sqrt(); d + 1];
        let mut mv = vec![0.0; d + 1];
        let mut est = 0.0;
        for _ in 0..30 {
            mv.iter_mut().for_each(|m| *m = 0.0);
            for (i, row) in self.x.row_iter().enumerate() {
                let s = (dot(&v[..d], row) + v[d]) * self.w[i];
                for (m, &xv) in mv[..d].iter_mut().zip(row) {
                    *m += s * xv;
                }
                mv[d] += s;
            }
            let scale = 0.25 / self.n() as f64;
            mv.iter_mut().for_each(|m| *m *= scale);
            let norm = mv.iter().map(|m| m * m).sum::<f64>().sqrt();
            if !(norm > 0.0) {
                break;
            }
            est = norm;
            for (vi, &m) in v.iter_mut().zip(&mv) {
                *vi = m / norm;
            }
        }
        est.max(1e-12)
    }
}

/// Smallest L1 strength at which every coefficient of the fit is zero.
pub fn lambda_max(x: &DesignMatrix, y: &[u8]) -> Result<f64> {
    Ok(Problem::new(x, y)?.lambda_max())
}

/// Value and gradient of the smooth (weighted logistic) part of the objective.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothEval {
    pub value: f64,
    pub grad_beta: Vec<f64>,
    pub grad_intercept: f64,
}

/// Evaluates the weighted logistic loss and its gradient; weights taken from
/// `x` and rescaled to mean one. The L1 term is not included.
pub fn objective_and_gradient(
    beta: &[f64],
    intercept: f64,
    x: &DesignMatrix,
    y: &[u8],
) -> Result<SmoothEval> {
    let p = Problem::new(x, y)?;
    if beta.len() != p.d() {
        return Err(Error::DimensionMismatch {
            expected: p.d(),
            got: beta.len(),
        });
    }
    let mut s = vec![0.0; p.n()];
    p.scores_into(beta, intercept, &mut s);
    let mut g = vec![0.0; p.d()];
    let (value, gb) = p.loss_and_grad(&s, &mut g);
    Ok(SmoothEval {
        value,
        grad_beta: g,
        grad_intercept: gb,
    })
}

/// Full penalized objective at `(beta, intercept)`.
pub fn objective(
    beta: &[f64],
    intercept: f64,
    x: &DesignMatrix,
    y: &[u8],
    lambda: f64,
) -> Result<f64> {
    let smooth = objective_and_gradient(beta, intercept, x, y)?.value;
    Ok(smooth + lambda * l1(beta))
}

fn l1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

const CONVERGENCE_WINDOW: usize = 10;

/// Fits the model. Weights, when present on `x`, enter the loss after being
/// rescaled to mean one, so multiplying all of them by a constant has no effect.
pub fn fit(x: &DesignMatrix, y: &[u8], opts: &FitOptions) -> Result<LinearModel> {
    opts.validate()?;
    let p = Problem::new(x, y)?;
    let (n, d) = (p.n(), p.d());
    let lambda = opts.lambda;

    let b0 = p.prior_intercept();
    // Above lambda_max the prior-only model satisfies the optimality
    // conditions exactly.
    if lambda >= p.lambda_max() {
        return Ok(LinearModel {
            beta: vec![0.0; d],
            intercept: b0,
            lambda,
            n_iter: 0,
            converged: true,
        });
    }

    let mut beta_x = vec![0.0; d];
    let mut b_x = b0;
    let mut s_x = vec![b0; n];
    let mut f_obj_x = p.loss(&s_x);

    let mut beta_y = beta_x.clone();
    let mut b_y = b_x;
    let mut s_y = s_x.clone();

    let mut beta_z = vec![0.0; d];
    let mut s_z = vec![0.0; n];
    let mut g = vec![0.0; d];

    let mut lip = p.lipschitz_estimate();
    let mut theta = 1.0_f64;
    let mut y_is_x = true;
    let mut converged = false;
    let mut n_iter = 0;
    // objective after each accepted iterate, newest last
    let mut history: Vec<f64> = vec![f_obj_x];

    while n_iter < opts.max_iter {
        n_iter += 1;
        let (f_y, g_b) = p.loss_and_grad(&s_y, &mut g);

        // backtracking on the quadratic upper bound
        let (b_z, f_z) = loop {
            let step = 1.0 / lip;
            for j in 0..d {
                beta_z[j] = soft_threshold(beta_y[j] - step * g[j], step * lambda);
            }
            let b_z = b_y - step * g_b;
            p.scores_into(&beta_z, b_z, &mut s_z);
            let f_z = p.loss(&s_z);
            let mut lin = (b_z - b_y) * g_b;
            let mut sq = (b_z - b_y) * (b_z - b_y);
            for j in 0..d {
                let dj = beta_z[j] - beta_y[j];
                lin += dj * g[j];
                sq += dj * dj;
            }
            let bound = f_y + lin + 0.5 * lip * sq;
            if f_z <= bound + 1e-14 * f_y.abs().max(1.0) || !lip.is_finite() {
                break (b_z, f_z);
            }
            lip *= 2.0;
        };

        let obj_z = f_z + lambda * l1(&beta_z);
        if obj_z > f_obj_x {
            if y_is_x {
                // a plain proximal step from the current iterate cannot
                // decrease the objective any further
                converged = true;
                break;
            }
            beta_y.copy_from_slice(&beta_x);
            b_y = b_x;
            s_y.copy_from_slice(&s_x);
            theta = 1.0;
            y_is_x = true;
            continue;
        }

        let theta_next = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
        let momentum = (theta - 1.0) / theta_next;
        for j in 0..d {
            beta_y[j] = beta_z[j] + momentum * (beta_z[j] - beta_x[j]);
        }
        b_y = b_z + momentum * (b_z - b_x);
        for i in 0..n {
            s_y[i] = s_z[i] + momentum * (s_z[i] - s_x[i]);
        }
        y_is_x = momentum == 0.0;
        theta = theta_next;

        beta_x.copy_from_slice(&beta_z);
        b_x = b_z;
        s_x.copy_from_slice(&s_z);
        f_obj_x = obj_z;
        history.push(obj_z);
        // Single steps can stall briefly after a restart, so the relative
        // decrease is averaged over the last few accepted iterates.
        if history.len() > CONVERGENCE_WINDOW {
            let past = history[history.len() - 1 - CONVERGENCE_WINDOW];
            let rel = (past - obj_z) / obj_z.abs().max(f64::MIN_POSITIVE) / CONVERGENCE_WINDOW as f64;
            if rel < opts.tol {
                converged = true;
                break;
            }
        }
    }

    Ok(LinearModel {
        beta: beta_x,
        intercept: b_x,
        lambda,
        n_iter,
        converged,
    })
}

fn check_dim(model: &LinearModel, x: &DesignMatrix) -> Result<()> {
    if x.cols() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            got: x.cols(),
        });
    }
    Ok(())
}

/// `sigmoid(beta . x + intercept)` per row. Saturates to exactly 0 or 1 in
/// floating point once `|score|` exceeds roughly 37.
pub fn predict_proba(model: &LinearModel, x: &DesignMatrix) -> Result<Vec<f64>> {
    check_dim(model, x)?;
    Ok(x.row_iter().map(|r| sigmoid(model.score(r))).collect())
}

/// Label 1 iff probability >= threshold (ties go to class 1).
pub fn predict_label(model: &LinearModel, x: &DesignMatrix, threshold: f64) -> Result<Vec<u8>> {
    Ok(predict_proba(model, x)?
        .into_iter()
        .map(|p| u8::from(p >= threshold))
        .collect())
}

/// How the L1 strength of a fit is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaRule {
    /// A fixed absolute value.
    Absolute(f64),
    /// A multiple of the problem's `lambda_max`.
    Relative(f64),
    /// Stratified 3-fold selection over `{1e-3 .. 1} * lambda_max` (half-decade
    /// grid) by held-out log-loss, on the training data passed in only.
    CrossValidated,
}

impl Default for LambdaRule {
    fn default() -> Self {
        LambdaRule::Relative(0.01)
    }
}

pub const CV_GRID: [f64; 7] = [1e-3, 3.162_277_660_168_379_5e-3, 1e-2, 3.162_277_660_168_379e-2, 0.1, 0.316_227_766_016_837_94, 1.0];
const CV_FOLDS: usize = 3;

impl LambdaRule {
    /// Resolves the rule to an absolute lambda for this training problem.
    pub fn resolve(&self, x: &DesignMatrix, y: &[u8], base: &FitOptions, seed: u64) -> Result<f64> {
        match *self {
            LambdaRule::Absolute(l) => Ok(l),
            LambdaRule::Relative(r) => {
                if !(r >= 0.0) {
                    return Err(Error::invalid(format!("lambda ratio must be >= 0, got {r}")));
                }
                Ok(r * lambda_max(x, y)?)
            }
            LambdaRule::CrossValidated => select_lambda_cv(x, y, base, seed),
        }
    }

    /// Resolves lambda and fits on the same data.
    pub fn fit(&self, x: &DesignMatrix, y: &[u8], base: &FitOptions, seed: u64) -> Result<LinearModel> {
        let lambda = self.resolve(x, y, base, seed)?;
        fit(x, y, &FitOptions { lambda, ..base.clone() })
    }
}

fn select_lambda_cv(x: &DesignMatrix, y: &[u8], base: &FitOptions, seed: u64) -> Result<f64> {
    let lmax = lambda_max(x, y)?;
    if lmax == 0.0 {
        return Ok(0.0);
    }
    let mut rng = keyed_rng(seed, &[tag::LAMBDA_CV]);
    let folds = crate::data::stratified_folds(y, CV_FOLDS, &mut rng)?;
    let mut losses = vec![0.0; CV_GRID.len()];
    for f in 0..folds.len() {
        let train_idx = crate::data::complement(&folds, f);
        let xt = x.select_rows(&train_idx);
        let yt: Vec<u8> = train_idx.iter().map(|&i| y[i]).collect();
        let xv = x.select_rows(&folds[f]);
        let yv: Vec<u8> = folds[f].iter().map(|&i| y[i]).collect();
        let wv: Vec<f64> = match xv.weights() {
            Some(w) => w.to_vec(),
            None => vec![1.0; yv.len()],
        };
        let wsum: f64 = wv.iter().sum::<f64>().max(f64::MIN_POSITIVE);
        for (g, &ratio) in CV_GRID.iter().enumerate() {
            let opts = FitOptions {
                lambda: ratio * lmax,
                ..base.clone()
            };
            let m = fit(&xt, &yt, &opts)?;
            let held_out: f64 = xv
                .row_iter()
                .zip(&yv)
                .zip(&wv)
                .map(|((r, &l), &w)| {
                    let s = m.score(r);
                    w * (softplus(s) - f64::from(l) * s)
                })
                .sum();
            losses[g] += held_out / wsum;
        }
    }
    // ties resolve to the stronger penalty
    let mut best = CV_GRID.len() - 1;
    for g in (0..CV_GRID.len()).rev() {
        if losses[g] < losses[best] {
            best = g;
        }
    }
    Ok(CV_GRID[best] * lmax)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(rows: &[&[f64]]) -> DesignMatrix {
        DesignMatrix::from_rows(rows, rows[0].len()).unwrap()
    }

    fn toy_1d() -> (DesignMatrix, Vec<u8>) {
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for _ in 0..50 {
            rows.push(vec![-1.0]);
            y.push(0);
            rows.push(vec![1.0]);
            y.push(1);
        }
        (DesignMatrix::from_rows(&rows, 1).unwrap(), y)
    }

    #[test]
    fn sigmoid_and_softplus_are_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(800.0) <= 1.0 && sigmoid(-800.0) >= 0.0);
        assert!((softplus(1000.0) - 1000.0).abs() < 1e-12);
        assert!(softplus(-1000.0) >= 0.0 && softplus(-1000.0) < 1e-300);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn huge_lambda_gives_prior_only_model() {
        let (x, y) = toy_1d();
        let lmax = lambda_max(&x, &y).unwrap();
        let m = fit(&x, &y, &FitOptions { lambda: 10.0 * lmax, ..Default::default() }).unwrap();
        assert_eq!(m.beta, vec![0.0]);
        assert_eq!(m.intercept, 0.0);
        assert!(predict_proba(&m, &x).unwrap().iter().all(|&p| p == 0.5));
    }

    #[test]
    fn lambda_max_is_the_zeroing_threshold() {
        let x = matrix(&[&[0.3, -1.0], &[1.2, 0.4], &[-0.7, 0.9], &[2.0, -0.3], &[0.1, 0.2]]);
        let y = [0, 1, 0, 1, 1];
        let lmax = lambda_max(&x, &y).unwrap();
        let at = fit(&x, &y, &FitOptions { lambda: lmax, ..Default::default() }).unwrap();
        assert!(at.beta.iter().all(|&b| b == 0.0));
        let below = fit(&x, &y, &FitOptions { lambda: 0.9 * lmax, tol: 1e-12, ..Default::default() }).unwrap();
        assert!(below.beta.iter().any(|&b| b != 0.0));
    }

    #[test]
    fn unbalanced_prior_sets_intercept() {
        let x = matrix(&[&[1.0], &[1.0], &[1.0], &[1.0]]);
        let y = [1, 1, 1, 0];
        let m = fit(&x, &y, &FitOptions { lambda: 1.0, ..Default::default() }).unwrap();
        assert!((m.intercept - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn degenerate_labels_rejected() {
        let x = matrix(&[&[1.0], &[2.0], &[3.0]]);
        let err = fit(&x, &[1, 1, 1], &FitOptions::default()).unwrap_err();
        assert_eq!(err.to_string(), "degenerate labels: both classes need positive total weight");
        // class 0 present only with zero weight
        let xw = x.with_weights(vec![0.0, 1.0, 1.0]).unwrap();
        assert!(matches!(fit(&xw, &[0, 1, 1], &FitOptions::default()), Err(Error::DegenerateLabels)));
    }

    #[test]
    fn non_finite_rejected() {
        let x = matrix(&[&[1.0], &[f64::INFINITY]]);
        assert!(matches!(fit(&x, &[0, 1], &FitOptions::default()), Err(Error::NonFinite(_))));
    }

    #[test]
    fn options_validated() {
        let (x, y) = toy_1d();
        assert!(fit(&x, &y, &FitOptions { tol: 0.0, ..Default::default() }).is_err());
        assert!(fit(&x, &y, &FitOptions { max_iter: 0, ..Default::default() }).is_err());
        assert!(fit(&x, &y, &FitOptions { lambda: -1.0, ..Default::default() }).is_err());
    }

    #[test]
    fn predict_dimension_mismatch() {
        let m = LinearModel::constant(3, 0.0);
        let x = matrix(&[&[1.0, 2.0]]);
        assert!(matches!(predict_proba(&m, &x), Err(Error::DimensionMismatch { expected: 3, got: 2 })));
    }

    #[test]
    fn threshold_ties_go_to_class_one() {
        let x = matrix(&[&[1.0], &[-4.0]]);
        assert_eq!(predict_label(&LinearModel::constant(1, 0.0), &x, 0.5).unwrap(), vec![1, 1]);
        assert_eq!(predict_label(&LinearModel::constant(1, -1.0), &x, 0.5).unwrap(), vec![0, 0]);
    }

    #[test]
    fn saturated_intercept() {
        let x = matrix(&[&[0.0], &[3.0]]);
        let p = predict_proba(&LinearModel::constant(1, 50.0), &x).unwrap();
        assert!(p.iter().all(|&v| v >= 1.0 - 1e-20));
    }

    #[test]
    fn balanced_zero_point_has_zero_intercept_gradient() {
        let (x, y) = toy_1d();
        let e = objective_and_gradient(&[0.0], 0.0, &x, &y).unwrap();
        assert_eq!(e.grad_intercept, 0.0);
        assert!((e.value - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn gradient_ignores_weight_scale() {
        let x = matrix(&[&[0.5, 1.0], &[-1.0, 0.2], &[0.3, -0.7], &[1.5, 0.1]]);
        let y = [1, 0, 0, 1];
        let w = vec![0.2, 1.3, 0.7, 2.0];
        let a = objective_and_gradient(&[0.4, -0.2], 0.1, &x.clone().with_weights(w.clone()).unwrap(), &y).unwrap();
        let doubled: Vec<f64> = w.iter().map(|v| 2.0 * v).collect();
        let b = objective_and_gradient(&[0.4, -0.2], 0.1, &x.with_weights(doubled).unwrap(), &y).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn separable_unpenalized_stops_at_max_iter() {
        let (x, y) = toy_1d();
        let m = fit(&x, &y, &FitOptions { lambda: 0.0, max_iter: 300, ..Default::default() }).unwrap();
        assert!(!m.converged);
        assert_eq!(m.n_iter, 300);
        assert!(m.beta[0].is_finite() && m.beta[0] > 3.0);
        let longer = fit(&x, &y, &FitOptions { lambda: 0.0, max_iter: 1200, ..Default::default() }).unwrap();
        assert!(longer.beta[0] > m.beta[0]);
        assert!(longer.beta[0].is_finite());
    }

    #[test]
    fn model_text_round_trips_bitwise() {
        let m = LinearModel {
            beta: vec![0.1 + 0.2, -1e-300, 123456.789e10, 0.0, -0.0],
            intercept: std::f64::consts::PI,
            lambda: 1.0 / 3.0,
            n_iter: 5,
            converged: true,
        };
        let back = LinearModel::from_text(&m.to_text()).unwrap();
        assert_eq!(back.lambda.to_bits(), m.lambda.to_bits());
        assert_eq!(back.intercept.to_bits(), m.intercept.to_bits());
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back.beta), bits(&m.beta));
        assert!(LinearModel::from_text("1.0\n").is_err());
        assert!(LinearModel::from_text("1.0\nNaN\n").is_err());
    }

    #[test]
    fn cv_rule_picks_a_grid_value() {
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for i in 0..60 {
            let t = i as f64 / 60.0;
            rows.push(vec![t - 0.5 + 0.3 * ((i * 7 % 11) as f64 / 11.0 - 0.5), (i % 5) as f64]);
            y.push(u8::from(i % 2 == 0));
        }
        let x = DesignMatrix::from_rows(&rows, 2).unwrap();
        let lmax = lambda_max(&x, &y).unwrap();
        let l = LambdaRule::CrossValidated.resolve(&x, &y, &FitOptions::default(), 4).unwrap();
        assert!(CV_GRID.iter().any(|r| (r * lmax - l).abs() <= 1e-15 * lmax));
        assert_eq!(l, LambdaRule::CrossValidated.resolve(&x, &y, &FitOptions::default(), 4).unwrap());
    }
}
