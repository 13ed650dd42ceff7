//! Ensemble orchestration: deterministic parallel path execution, statistics
//! with standard errors, and the shared least-squares conditional-expectation
//! regressor.
//!
//! Determinism contract: path `i` sees exactly the same inputs regardless of
//! worker count (per-path seed substreams), results are collected in path
//! order, and every floating-point reduction uses a fixed pairwise tree.

use rayon::prelude::*;

use crate::error::{invalid, FracmaxError, Result};

/// Pairwise (fixed-tree) summation; worker-count independent by construction.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        2 => xs[0] + xs[1],
        n => {
            let mid = n / 2;
            pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
        }
    }
}

/// Summary statistics of a scalar per-path output.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStats {
    pub mean: f64,
    pub stderr: f64,
    pub count: usize,
    pub min: f64,
    pub max: f64,
}

impl EnsembleStats {
    pub fn from_values(xs: &[f64]) -> Self {
        let count = xs.len();
        if count == 0 {
            return Self {
                mean: f64::NAN,
                stderr: f64::NAN,
                count: 0,
                min: f64::NAN,
                max: f64::NAN,
            };
        }
        let mean = pairwise_sum(xs) / count as f64;
        let sq: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
        let var = if count > 1 {
            pairwise_sum(&sq) / (count as f64 - 1.0)
        } else {
            0.0
        };
        let stderr = (var / count as f64).sqrt();
        let min = xs.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Self {
            mean,
            stderr,
            count,
            min,
            max,
        }
    }
}

/// Jackknife standard error of the mean of `xs` (leave-one-out).
pub fn jackknife_stderr(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let nf = n as f64;
    let total = pairwise_sum(xs);
    let mean = total / nf;
    // leave-one-out means: (total - x_i) / (n-1); jackknife variance formula
    let devs: Vec<f64> = xs
        .iter()
        .map(|&x| {
            let loo = (total - x) / (nf - 1.0);
            (loo - mean) * (loo - mean)
        })
        .collect();
    ((nf - 1.0) / nf * pairwise_sum(&devs)).sqrt()
}

/// Run a pure per-path computation over `path_count` paths.
///
/// `workers = 0` uses the ambient rayon pool; otherwise a dedicated pool of
/// that size is built. Outputs come back in path order. Individual path
/// failures are collected; the run aborts when more than 0.1% fail.
pub fn run_paths<T: Send>(
    path_count: usize,
    workers: usize,
    task: impl Fn(usize) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    let compute = || -> Vec<Result<T>> { (0..path_count).into_par_iter().map(|p| task(p)).collect() };
    let raw = if workers == 0 {
        compute()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| invalid(format!("cannot build thread pool: {e}")))?;
        pool.install(compute)
    };

    let mut out = Vec::with_capacity(path_count);
    let mut failures: Vec<(usize, String)> = Vec::new();
    for (p, r) in raw.into_iter().enumerate() {
        match r {
            Ok(v) => out.push(v),
            Err(e) => failures.push((p, e.to_string())),
        }
    }
    if !failures.is_empty() {
        let budget = (path_count as f64 * 0.001).floor() as usize;
        if failures.len() > budget {
            return Err(FracmaxError::EnsembleFailure {
                failed: failures.len(),
                total: path_count,
                first: format!("path {}: {}", failures[0].0, failures[0].1),
            });
        }
    }
    Ok(out)
}

/// Scalar convenience wrapper: per-path scalar task to summary statistics.
pub fn run_ensemble(
    path_count: usize,
    workers: usize,
    task: impl Fn(usize) -> Result<f64> + Sync,
) -> Result<EnsembleStats> {
    let vals = run_paths(path_count, workers, task)?;
    Ok(EnsembleStats::from_values(&vals))
}

/// Least-squares Monte Carlo regression specification.
#[derive(Debug, Clone)]
pub struct RegressionSpec {
    /// Per-variable polynomial degree (1..=3).
    pub degree: usize,
    /// Append driver values (fBm regime) to the regression variables.
    pub include_driver: bool,
    /// Ridge parameter used when the design is rank deficient or the sample
    /// is too small; 0 requests pure OLS with automatic fallback.
    pub ridge: f64,
}

impl Default for RegressionSpec {
    fn default() -> Self {
        Self {
            degree: 3,
            include_driver: false,
            ridge: 0.0,
        }
    }
}

impl RegressionSpec {
    /// Feature vector: `{1} ∪ {v_i^p, p <= degree} ∪ {v_i v_j, i < j}` over
    /// the regression variables `v` (state, optionally drivers).
    pub fn features(&self, state: &[f64], driver: Option<&[f64]>) -> Vec<f64> {
        let mut vars: Vec<f64> = state.to_vec();
        if self.include_driver {
            if let Some(d) = driver {
                vars.extend_from_slice(d);
            }
        }
        let mut f = Vec::with_capacity(self.feature_count(state.len(), driver.map_or(0, |d| d.len())));
        f.push(1.0);
        for &v in &vars {
            let mut p = v;
            for _ in 0..self.degree {
                f.push(p);
                p *= v;
            }
        }
        for i in 0..vars.len() {
            for j in (i + 1)..vars.len() {
                f.push(vars[i] * vars[j]);
            }
        }
        f
    }

    pub fn feature_count(&self, state_dim: usize, driver_dim: usize) -> usize {
        let nv = state_dim + if self.include_driver { driver_dim } else { 0 };
        1 + nv * self.degree + nv * (nv - 1) / 2
    }
}

/// Fitted cross-sectional regression.
#[derive(Debug, Clone)]
pub struct Fitted {
    /// Fitted value per sample (the conditional-expectation estimate).
    pub values: Vec<f64>,
    pub coefficients: Vec<f64>,
    /// Ridge parameter actually applied (`None` for pure OLS).
    pub ridge_used: Option<f64>,
}

/// Ordinary least squares of `targets` on row-major `design` (k columns),
/// with ridge fallback on degeneracy. Accumulation order is fixed, so the
/// result is identical across worker counts.
pub fn condition_on(targets: &[f64], design: &[f64], k: usize, spec: &RegressionSpec) -> Result<Fitted> {
    let n = targets.len();
    if k == 0 || design.len() != n * k {
        return Err(invalid("design matrix shape mismatch"));
    }
    let mut xtx = vec![0.0f64; k * k];
    let mut xty = vec![0.0f64; k];
    for i in 0..n {
        let row = &design[i * k..(i + 1) * k];
        let y = targets[i];
        for a in 0..k {
            xty[a] += row[a] * y;
            for b in a..k {
                xtx[a * k + b] += row[a] * row[b];
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            xtx[a * k + b] = xtx[b * k + a];
        }
    }

    let small_sample = n < 10 * k;
    let base_ridge = if spec.ridge > 0.0 || small_sample {
        Some(spec.ridge.max(1e-10))
    } else {
        None
    };

    let scale = (0..k)
        .map(|a| xtx[a * k + a])
        .fold(0.0f64, f64::max)
        .max(1e-300);

    let mut attempt_ridge = base_ridge;
    for _ in 0..2 {
        let mut m = xtx.clone();
        if let Some(r) = attempt_ridge {
            for a in 0..k {
                m[a * k + a] += r * scale;
            }
        }
        if let Some(chol) = cholesky_solve(&m, &xty, k) {
            let coefficients = chol;
            let values = (0..n)
                .map(|i| {
                    let row = &design[i * k..(i + 1) * k];
                    row.iter().zip(&coefficients).map(|(a, b)| a * b).sum()
                })
                .collect();
            return Ok(Fitted {
                values,
                coefficients,
                ridge_used: attempt_ridge,
            });
        }
        // degenerate: escalate to a visible ridge
        attempt_ridge = Some(attempt_ridge.map_or(1e-8, |r| r.max(1e-8) * 100.0));
    }
    Err(FracmaxError::DegenerateRegression)
}

/// Dense Cholesky solve of `m x = y` for symmetric positive definite `m`.
fn cholesky_solve(m: &[f64], y: &[f64], k: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0f64; k * k];
    for i in 0..k {
        for j in 0..=i {
            let mut s = m[i * k + j];
            for p in 0..j {
                s -= l[i * k + p] * l[j * k + p];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return None;
                }
                l[i * k + i] = s.sqrt();
            } else {
                l[i * k + j] = s / l[j * k + j];
            }
        }
    }
    // forward then backward substitution
    let mut z = y.to_vec();
    for i in 0..k {
        for p in 0..i {
            z[i] -= l[i * k + p] * z[p];
        }
        z[i] /= l[i * k + i];
    }
    for i in (0..k).rev() {
        for p in (i + 1)..k {
            z[i] -= l[p * k + i] * z[p];
        }
        z[i] /= l[i * k + i];
    }
    Some(z)
}

/// Deterministic per-(seed, ids...) RNG substream.
pub fn substream(seed: u64, ids: &[u64]) -> rand_chacha::ChaCha12Rng {
    use rand::SeedableRng;
    let mut s = splitmix64(seed ^ 0x9e37_79b9_7f4a_7c15);
    for &id in ids {
        s = splitmix64(s ^ splitmix64(id.wrapping_add(0x2545_f491_4f6c_dd1d)));
    }
    rand_chacha::ChaCha12Rng::seed_from_u64(s)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn constant_task_stats() {
        let s = run_ensemble(1000, 0, |_| Ok(1.0)).unwrap();
        assert_eq!(s.mean, 1.0);
        assert_eq!(s.stderr, 0.0);
        assert_eq!(s.count, 1000);
    }

    #[test]
    fn terminal_gaussian_square() {
        // E W(1)^2 = 1 within 4 standard errors at 20000 paths
        let s = run_ensemble(20000, 0, |p| {
            let mut rng = substream(7, &[p as u64]);
            let z: f64 = rng.sample(StandardNormal);
            Ok(z * z)
        })
        .unwrap();
        assert!((s.mean - 1.0).abs() < 4.0 * s.stderr, "{s:?}");
    }

    #[test]
    fn worker_count_invariance() {
        let task = |p: usize| -> Result<f64> {
            let mut rng = substream(99, &[p as u64]);
            let mut acc = 0.0;
            for _ in 0..100 {
                let z: f64 = rng.sample(StandardNormal);
                acc += z;
            }
            Ok(acc)
        };
        let a = run_ensemble(5000, 1, task).unwrap();
        let b = run_ensemble(5000, 2, task).unwrap();
        let c = run_ensemble(5000, 8, task).unwrap();
        assert_eq!(a, b);
        assert_eq!(b, c);
    }

    #[test]
    fn failures_above_budget_abort() {
        let res = run_ensemble(100, 0, |p| {
            if p % 10 == 0 {
                Err(crate::error::invalid("boom"))
            } else {
                Ok(1.0)
            }
        });
        assert!(matches!(res, Err(FracmaxError::EnsembleFailure { .. })));
    }

    #[test]
    fn identity_regression_is_exact() {
        let n = 500;
        let targets: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let mut design = Vec::with_capacity(2 * n);
        for t in &targets {
            design.push(1.0);
            design.push(*t);
        }
        let fit = condition_on(&targets, &design, 2, &RegressionSpec::default()).unwrap();
        for (f, t) in fit.values.iter().zip(&targets) {
            assert!((f - t).abs() < 1e-10);
        }
    }

    #[test]
    fn constant_features_give_sample_mean() {
        let targets = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0];
        let design = vec![1.0; targets.len()];
        let fit = condition_on(&targets, &design, 1, &RegressionSpec::default()).unwrap();
        for f in &fit.values {
            assert!((f - 5.5).abs() < 1e-12);
        }
    }

    #[test]
    fn residual_orthogonality() {
        let n = 4000;
        let spec = RegressionSpec::default();
        let mut design = Vec::new();
        let mut targets = Vec::new();
        for p in 0..n {
            let mut rng = substream(3, &[p as u64]);
            let x: f64 = rng.sample(StandardNormal);
            let eps: f64 = rng.sample(StandardNormal);
            let feats = spec.features(&[x], None);
            design.extend_from_slice(&feats);
            targets.push(1.0 + 2.0 * x - 0.5 * x * x + eps);
        }
        let k = spec.feature_count(1, 0);
        let fit = condition_on(&targets, &design, k, &spec).unwrap();
        // feature^T residual ~ 0 per column
        for a in 0..k {
            let mut dot = 0.0;
            let mut scale = 0.0;
            for i in 0..n {
                let r = targets[i] - fit.values[i];
                let f = design[i * k + a];
                dot += f * r;
                scale += f * f;
            }
            assert!(dot.abs() <= 1e-8 * scale.max(1.0), "col {a}: {dot}");
        }
    }

    #[test]
    fn martingale_regression_brownian() {
        // E[W(1) | W(0.5)] = W(0.5): fitted values track the conditioning state
        let n = 20000;
        let spec = RegressionSpec::default();
        let mut design = Vec::new();
        let mut targets = Vec::new();
        let mut halves = Vec::new();
        for p in 0..n {
            let mut rng = substream(11, &[p as u64]);
            let z1: f64 = rng.sample(StandardNormal);
            let z2: f64 = rng.sample(StandardNormal);
            let w_half = z1 * (0.5f64).sqrt();
            let w_one = w_half + z2 * (0.5f64).sqrt();
            design.extend_from_slice(&spec.features(&[w_half], None));
            targets.push(w_one);
            halves.push(w_half);
        }
        let k = spec.feature_count(1, 0);
        let fit = condition_on(&targets, &design, k, &spec).unwrap();
        let sq: Vec<f64> = fit
            .values
            .iter()
            .zip(&halves)
            .map(|(f, h)| (f - h) * (f - h))
            .collect();
        let l2 = (pairwise_sum(&sq) / n as f64).sqrt();
        // residual L2 against the exact conditional mean: sampling noise only
        assert!(l2 < 0.03, "l2 = {l2}");
    }

    #[test]
    fn tower_property() {
        // conditioning a fitted conditional mean on a coarser set equals
        // direct coarse conditioning (both are projections)
        let n = 8000;
        let fine = RegressionSpec::default();
        let coarse = RegressionSpec {
            degree: 1,
            ..Default::default()
        };
        let mut fine_design = Vec::new();
        let mut coarse_design = Vec::new();
        let mut targets = Vec::new();
        for p in 0..n {
            let mut rng = substream(13, &[p as u64]);
            let x: f64 = rng.sample(StandardNormal);
            let e: f64 = rng.sample(StandardNormal);
            fine_design.extend_from_slice(&fine.features(&[x], None));
            coarse_design.extend_from_slice(&coarse.features(&[x], None));
            targets.push(x * x + 0.3 * x + e);
        }
        let kf = fine.feature_count(1, 0);
        let kc = coarse.feature_count(1, 0);
        let f1 = condition_on(&targets, &fine_design, kf, &fine).unwrap();
        let f2 = condition_on(&f1.values, &coarse_design, kc, &coarse).unwrap();
        let f3 = condition_on(&targets, &coarse_design, kc, &coarse).unwrap();
        for (a, b) in f2.values.iter().zip(&f3.values) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn pairwise_matches_naive_on_benign_data() {
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.37).sin()).collect();
        let naive: f64 = xs.iter().sum();
        assert!((pairwise_sum(&xs) - naive).abs() < 1e-9);
    }
}
