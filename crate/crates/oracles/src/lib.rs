//! Reference computations for tests. Written from the textbook definitions
//! and deliberately sharing no code with `xsd-core`.

/// ln(1 + e^t) without overflow.
pub fn log1pexp(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

fn mean_one(w: Option<&[f64]>, n: usize) -> Vec<f64> {
    match w {
        None => vec![1.0; n],
        Some(w) => {
            let m = w.iter().sum::<f64>() / n as f64;
            w.iter().map(|v| v / m).collect()
        }
    }
}

/// (1/n) Σ wᵢ [ln(1 + e^{sᵢ}) − yᵢ sᵢ] with sᵢ = βᵀxᵢ + b and weights
/// rescaled to mean one.
pub fn weighted_log_loss(rows: &[Vec<f64>], y: &[u8], w: Option<&[f64]>, beta: &[f64], b: f64) -> f64 {
    let n = rows.len();
    let w = mean_one(w, n);
    let mut total = 0.0;
    for i in 0..n {
        let s: f64 = rows[i].iter().zip(beta).map(|(x, c)| x * c).sum::<f64>() + b;
        total += w[i] * (log1pexp(s) - f64::from(y[i]) * s);
    }
    total / n as f64
}

/// Log-loss plus λ‖β‖₁.
pub fn penalized_objective(
    rows: &[Vec<f64>],
    y: &[u8],
    w: Option<&[f64]>,
    beta: &[f64],
    b: f64,
    lambda: f64,
) -> f64 {
    weighted_log_loss(rows, y, w, beta, b) + lambda * beta.iter().map(|c| c.abs()).sum::<f64>()
}

/// Minimizes `f` over the box [lo, hi]^dim: an exhaustive grid at step
/// 0.1, then exhaustive grids at steps 0.01 and 0.001 over ±2 coarser
/// steps around the incumbent. Exact for convex `f` up to the final step.
pub fn grid_minimize(f: impl Fn(&[f64]) -> f64, dim: usize, lo: f64, hi: f64) -> Vec<f64> {
    let coarse = 0.1;
    let n = ((hi - lo) / coarse).round() as i64;
    let axes: Vec<Vec<f64>> = (0..dim)
        .map(|_| (0..=n).map(|i| lo + i as f64 * coarse).collect())
        .collect();
    let mut best = search(&f, &axes);
    for step in [0.01, 0.001] {
        let span = 20;
        let axes: Vec<Vec<f64>> = best
            .iter()
            .map(|&c| {
                (-span..=span)
                    .map(|i| c + i as f64 * step)
                    .filter(|v| *v >= lo - 1e-12 && *v <= hi + 1e-12)
                    .collect()
            })
            .collect();
        best = search(&f, &axes);
    }
    best
}

fn search(f: &impl Fn(&[f64]) -> f64, axes: &[Vec<f64>]) -> Vec<f64> {
    let dim = axes.len();
    let mut idx = vec![0usize; dim];
    let mut point: Vec<f64> = axes.iter().map(|a| a[0]).collect();
    let mut best = point.clone();
    let mut best_val = f64::INFINITY;
    loop {
        for (p, (a, &i)) in point.iter_mut().zip(axes.iter().zip(&idx)) {
            *p = a[i];
        }
        let v = f(&point);
        if v < best_val {
            best_val = v;
            best.copy_from_slice(&point);
        }
        let mut j = 0;
        loop {
            if j == dim {
                return best;
            }
            idx[j] += 1;
            if idx[j] < axes[j].len() {
                break;
            }
            idx[j] = 0;
            j += 1;
        }
    }
}

/// A small L1 logistic problem with known data.
pub struct ToyProblem {
    pub name: &'static str,
    pub rows: Vec<Vec<f64>>,
    pub y: Vec<u8>,
    pub w: Option<Vec<f64>>,
    pub lambda: f64,
}

impl ToyProblem {
    pub fn dim(&self) -> usize {
        self.rows[0].len()
    }

    /// Grid minimizer of the penalized objective over [-10, 10]^(d+1),
    /// returned as (beta, intercept).
    pub fn oracle(&self) -> (Vec<f64>, f64) {
        let d = self.dim();
        let p = grid_minimize(
            |p| penalized_objective(&self.rows, &self.y, self.w.as_deref(), &p[..d], p[d], self.lambda),
            d + 1,
            -10.0,
            10.0,
        );
        (p[..d].to_vec(), p[d])
    }
}

/// 50 copies of (-1, 0) and (1, 1). Symmetry gives b = 0, and the
/// stationarity condition 1/(1+e^beta) = lambda gives beta = ln 9 at lambda 0.1.
pub fn duplicated_pair() -> ToyProblem {
    let mut rows = Vec::new();
    let mut y = Vec::new();
    for _ in 0..50 {
        rows.push(vec![-1.0]);
        y.push(0);
        rows.push(vec![1.0]);
        y.push(1);
    }
    ToyProblem { name: "1-D duplicated pair", rows, y, w: None, lambda: 0.1 }
}

/// Five fixed 1-D and 2-D problems: separable-ish, weighted, above
/// lambda_max, correlated features, and an irrelevant feature.
pub fn toy_problems() -> Vec<ToyProblem> {
    let xs = [-2.0, -1.5, -1.0, -0.5, 0.0, 0.3, 0.5, 1.0, 1.5, 2.0, -0.7, 0.8];
    let ys = [0, 0, 1, 0, 0, 1, 0, 1, 1, 1, 1, 0];
    let ws = [1.0, 2.0, 1.0, 0.5, 1.5, 1.0, 0.25, 1.0, 3.0, 1.0, 0.75, 2.0];
    let x2 = [
        [0.5, 0.3],
        [-1.2, -0.8],
        [0.9, 1.1],
        [-0.3, 0.2],
        [1.4, 0.7],
        [-0.8, -1.3],
        [0.1, -0.4],
        [-1.5, -0.6],
        [0.7, 0.9],
        [-0.2, -0.1],
        [1.1, 1.6],
        [-0.9, 0.4],
    ];
    let y2 = [1, 0, 1, 1, 1, 0, 0, 0, 0, 1, 1, 0];
    let irrelevant = [0.4, -0.3, 0.2, -0.1, 0.5, -0.6, 0.1, 0.3, -0.4, 0.6];
    vec![
        duplicated_pair(),
        ToyProblem {
            name: "1-D weighted overlap",
            rows: xs.iter().map(|&v| vec![v]).collect(),
            y: ys.to_vec(),
            w: Some(ws.to_vec()),
            lambda: 0.05,
        },
        ToyProblem {
            name: "1-D above lambda_max, imbalanced",
            rows: xs[..9].iter().map(|&v| vec![v / 2.0]).collect(),
            y: vec![0, 1, 0, 0, 1, 0, 0, 1, 0],
            w: None,
            lambda: 1.0,
        },
        ToyProblem {
            name: "2-D correlated",
            rows: x2.iter().map(|r| r.to_vec()).collect(),
            y: y2.to_vec(),
            w: None,
            lambda: 0.02,
        },
        ToyProblem {
            name: "2-D with an irrelevant feature",
            rows: (0..10).map(|i| vec![(i as f64 - 4.5) / 3.0, irrelevant[i]]).collect(),
            y: vec![0, 0, 1, 0, 0, 1, 1, 0, 1, 1],
            w: None,
            lambda: 0.1,
        },
    ]
}

/// Central finite differences of `f` at `x`.
pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|j| {
            p[j] = x[j] + h;
            let up = f(&p);
            p[j] = x[j] - h;
            let down = f(&p);
            p[j] = x[j];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    pearson(&ranks(a), &ranks(b))
}

pub fn binomial_se(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

/// Density of N(mu, sigma²) at x.
pub fn normal_pdf(x: f64, mu: f64, sigma: f64) -> f64 {
    let z = (x - mu) / sigma;
    (-0.5 * z * z).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
}

/// Standard normal CDF by composite Simpson integration of the density
/// from −12 to x. Slow; for spot checks only.
pub fn normal_cdf_simpson(x: f64) -> f64 {
    if x <= -12.0 {
        return 0.0;
    }
    let n = 200_000usize;
    let a = -12.0;
    let h = (x - a) / n as f64;
    let mut s = normal_pdf(a, 0.0, 1.0) + normal_pdf(x, 0.0, 1.0);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * normal_pdf(a + i as f64 * h, 0.0, 1.0);
    }
    s * h / 3.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_finds_quadratic_minimum() {
        let m = grid_minimize(|p| (p[0] - 1.2345).powi(2) + 2.0 * (p[1] + 0.5).powi(2), 2, -3.0, 3.0);
        assert!((m[0] - 1.2345).abs() <= 5e-4 + 1e-12);
        assert!((m[1] + 0.5).abs() < 1e-9);
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 35.0]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn simpson_cdf_known_points() {
        assert!((normal_cdf_simpson(0.0) - 0.5).abs() < 1e-13);
        assert!((normal_cdf_simpson(1.0) - 0.841_344_746_068_542_9).abs() < 1e-12);
    }

    #[test]
    fn log1pexp_is_stable() {
        assert_eq!(log1pexp(800.0), 800.0);
        assert!(log1pexp(-800.0) >= 0.0);
        assert!((log1pexp(0.0) - std::f64::consts::LN_2).abs() < 1e-16);
    }
}
