//! Comparison classifiers (k-NN, plug-in) and the empirical margin diagnostic.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::erm::estimate_weights;
use crate::error::{param_err, Error, Result};
use crate::scores::{argmax, OracleScore, ScoreParams};
use crate::sim::{simulate_dataset, LabeledDataset, ModelSpec, Path, SimOptions};
use crate::splines::{DiffusionCoeffs, DriftCoeffs, SplineBasis, MAX_ORDER};

pub const KNN_CANDIDATES: [usize; 5] = [1, 5, 11, 21, 41];
pub const KNN_FOLDS: usize = 5;
pub const PLUGIN_RIDGE: f64 = 1e-8;

fn sq_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum()
}

/// Indices of the `k` nearest of `candidates` to `query`, nearest first;
/// equal distances keep the lower index first.
fn nearest(
    query: &[f64],
    paths: &[Path],
    candidates: impl Iterator<Item = usize>,
    k: usize,
) -> Vec<usize> {
    let mut all: Vec<(f64, usize)> = candidates
        .map(|j| (sq_distance(query, paths[j].values()), j))
        .collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if all.len() > k {
        all.select_nth_unstable_by(k - 1, cmp);
        all.truncate(k);
    }
    all.sort_by(cmp);
    all.into_iter().map(|(_, j)| j).collect()
}

/// Majority label among the first `k` neighbors; ties go to the lowest class.
fn vote(neighbors: &[usize], labels: &[usize], n_classes: usize, k: usize) -> usize {
    let mut counts = vec![0usize; n_classes];
    for &j in &neighbors[..k.min(neighbors.len())] {
        counts[labels[j]] += 1;
    }
    let top = *counts.iter().max().unwrap();
    counts.iter().position(|&c| c == top).unwrap()
}

/// k-nearest-neighbor classifier on path values.
///
/// The distance is the discrete `L²([0,1])` norm `√(Δ Σ_i (x_i − y_i)²)`;
/// the constant `√Δ` does not change neighbor order.
#[derive(Debug, Clone)]
pub struct KnnModel {
    train: LabeledDataset,
    k: usize,
    cv_errors: Vec<(usize, f64)>,
}

impl KnnModel {
    /// Chooses `k` by 5-fold cross-validation (fold of path `j` is `j mod 5`)
    /// over the candidate list capped at the training fold size.
    pub fn fit(data: &LabeledDataset) -> Result<Self> {
        let n = data.len();
        let candidates: Vec<usize> = KNN_CANDIDATES.iter().copied().filter(|&k| k <= n).collect();
        if n < KNN_FOLDS || candidates.len() == 1 {
            return Self::with_k(data, 1);
        }
        let max_k = *candidates.last().unwrap();
        let paths = data.paths();
        let labels = data.labels();
        let k_classes = data.num_classes();
        let mistakes: Vec<Vec<usize>> = (0..n)
            .into_par_iter()
            .map(|j| {
                let fold = j % KNN_FOLDS;
                let train = (0..n).filter(|i| i % KNN_FOLDS != fold);
                let nb = nearest(paths[j].values(), paths, train, max_k);
                candidates
                    .iter()
                    .map(|&k| usize::from(vote(&nb, labels, k_classes, k) != labels[j]))
                    .collect()
            })
            .collect();
        let cv_errors: Vec<(usize, f64)> = candidates
            .iter()
            .enumerate()
            .map(|(c, &k)| {
                let wrong: usize = mistakes.iter().map(|m| m[c]).sum();
                (k, wrong as f64 / n as f64)
            })
            .collect();
        let mut best = cv_errors[0];
        for &(k, e) in &cv_errors[1..] {
            if e < best.1 {
                best = (k, e);
            }
        }
        let mut model = Self::with_k(data, best.0)?;
        model.cv_errors = cv_errors;
        Ok(model)
    }

    pub fn with_k(data: &LabeledDataset, k: usize) -> Result<Self> {
        if k == 0 || k > data.len() {
            return param_err(format!("k must lie in 1..={}, got {k}", data.len()));
        }
        Ok(Self {
            train: data.clone(),
            k,
            cv_errors: Vec::new(),
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// `(k, cross-validated error)` for each candidate tried by [`KnnModel::fit`].
    pub fn cv_errors(&self) -> &[(usize, f64)] {
        &self.cv_errors
    }

    pub fn classify(&self, path: &Path) -> Result<usize> {
        if path.steps() != self.train.steps() {
            return param_err(format!(
                "path has {} steps, training grid has {}",
                path.steps(),
                self.train.steps()
            ));
        }
        let nb = nearest(path.values(), self.train.paths(), 0..self.train.len(), self.k);
        Ok(vote(&nb, self.train.labels(), self.train.num_classes(), self.k))
    }

    /// Scaled path distance `√(Δ Σ (x_i − y_i)²)`.
    pub fn distance(a: &Path, b: &Path) -> f64 {
        (a.delta() * sq_distance(a.values(), b.values())).sqrt()
    }
}

/// Solves `(BᵀB + λI) c = Bᵀy` from accumulated normal equations.
fn ridge_solve(gram: DMatrix<f64>, rhs: DVector<f64>) -> Result<Vec<f64>> {
    let n = gram.nrows();
    let reg = gram + DMatrix::identity(n, n) * PLUGIN_RIDGE;
    let chol = reg
        .cholesky()
        .ok_or_else(|| Error::Fit("least-squares system is not positive definite".into()))?;
    let sol = chol.solve(&rhs);
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(Error::Fit("least-squares solution is not finite".into()));
    }
    Ok(sol.iter().copied().collect())
}

/// Adds `w · B(x) B(x)ᵀ` and `w · y · B(x)` for one observation.
fn accumulate(
    basis: &SplineBasis,
    x: f64,
    y: f64,
    gram: &mut DMatrix<f64>,
    rhs: &mut DVector<f64>,
    buf: &mut [f64],
) {
    let Some(first) = basis.eval_nonzero(x, buf) else {
        return;
    };
    let m = basis.order() + 1;
    for a in 0..m {
        rhs[first + a] += y * buf[a];
        for b in 0..m {
            gram[(first + a, first + b)] += buf[a] * buf[b];
        }
    }
}

/// Plug-in classifier: drifts and squared diffusion are estimated by spline
/// least squares on the increments and substituted into the posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct PluginModel {
    params: ScoreParams,
}

impl PluginModel {
    /// Class-`k` drift: least squares of `ΔX_i / Δ` on the drift basis at
    /// `X_{iΔ}`, class-`k` paths only. `σ²`: least squares of `(ΔX_i)² / Δ`
    /// on the diffusion basis, all paths pooled, then floored at `1/log N`.
    pub fn fit(data: &LabeledDataset, drift_dim: usize, diffusion_dim: usize) -> Result<Self> {
        Self::fit_with_order(data, drift_dim, diffusion_dim, 3)
    }

    pub fn fit_with_order(
        data: &LabeledDataset,
        drift_dim: usize,
        diffusion_dim: usize,
        order: usize,
    ) -> Result<Self> {
        let n = data.len();
        if n < 2 {
            return Err(Error::Fit("at least two training paths are needed".into()));
        }
        let k = data.num_classes();
        let counts = data.class_counts();
        if let Some(missing) = counts.iter().position(|&c| c == 0) {
            return Err(Error::Fit(format!(
                "class {} has no training paths",
                missing + 1
            )));
        }
        let halfwidth = (n as f64).ln();
        let drift_basis = SplineBasis::new(order, drift_dim, halfwidth)?;
        let diffusion_basis = SplineBasis::new(order, diffusion_dim, halfwidth)?;
        let delta = data.delta();
        let l1 = drift_basis.len();
        let l2 = diffusion_basis.len();

        let mut drift_gram = vec![DMatrix::<f64>::zeros(l1, l1); k];
        let mut drift_rhs = vec![DVector::<f64>::zeros(l1); k];
        let mut diff_gram = DMatrix::<f64>::zeros(l2, l2);
        let mut diff_rhs = DVector::<f64>::zeros(l2);
        let mut buf = [0.0; MAX_ORDER + 1];
        for (path, y) in data.iter() {
            for w in path.values().windows(2) {
                let dx = w[1] - w[0];
                accumulate(&drift_basis, w[0], dx / delta, &mut drift_gram[y], &mut drift_rhs[y], &mut buf);
                accumulate(&diffusion_basis, w[0], dx * dx / delta, &mut diff_gram, &mut diff_rhs, &mut buf);
            }
        }
        let drift = drift_gram
            .into_iter()
            .zip(drift_rhs)
            .map(|(g, r)| ridge_solve(g, r).map(DriftCoeffs))
            .collect::<Result<Vec<_>>>()?;
        let alpha = ridge_solve(diff_gram, diff_rhs)?;
        let diffusion = DiffusionCoeffs::new(alpha, DiffusionCoeffs::floor_for(n))?;
        let weights = estimate_weights(data.labels(), k)?;
        let params = ScoreParams::new(drift_basis, diffusion_basis, drift, diffusion, weights)?;
        Ok(Self { params })
    }

    pub fn params(&self) -> &ScoreParams {
        &self.params
    }

    pub fn drift_at(&self, class: usize, x: f64) -> f64 {
        self.params.drift_at(class, x)
    }

    /// Floored `σ̂²(x)`.
    pub fn diffusion_at(&self, x: f64) -> f64 {
        self.params.diffusion_at(x)
    }

    pub fn posterior(&self, path: &Path) -> Vec<f64> {
        self.params.posterior(path)
    }

    pub fn classify(&self, path: &Path) -> usize {
        self.params.classify(path)
    }
}

/// Default ε grid: `0.01, 0.02, …, 0.12`.
pub fn default_epsilons() -> Vec<f64> {
    (1..=12).map(|i| i as f64 / 100.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginReport {
    pub epsilons: Vec<f64>,
    /// Estimated `P(0 < |π*_1(X) − 1/2| ≤ ε)` for each ε.
    pub probabilities: Vec<f64>,
    /// Least-squares slope of probability against ε through the origin.
    pub slope: f64,
    /// `‖p − slope·ε‖ / ‖p‖` (0 when every probability is 0).
    pub relative_residual: f64,
    pub n_paths: usize,
}

/// Monte Carlo estimate of the margin probabilities of a two-class model,
/// using oracle posteriors on a single simulated sample for every ε.
pub fn margin_diagnostic(
    model: &ModelSpec,
    n_paths: usize,
    epsilons: &[f64],
    opts: SimOptions,
    seed: u64,
) -> Result<MarginReport> {
    if model.num_classes() != 2 {
        return param_err(format!(
            "margin diagnostic needs a 2-class model, got K = {}",
            model.num_classes()
        ));
    }
    if n_paths == 0 {
        return param_err("n_paths must be positive");
    }
    if epsilons.is_empty() {
        return param_err("epsilon grid must not be empty");
    }
    if epsilons.iter().any(|&e| !(e > 0.0 && e < 0.125)) {
        return param_err("every epsilon must lie in (0, 1/8)");
    }
    if epsilons.windows(2).any(|w| w[1] <= w[0]) {
        return param_err("epsilon grid must be strictly increasing");
    }
    let data = simulate_dataset(model, n_paths, opts, seed)?;
    let oracle = OracleScore::new(model.clone());
    let gaps = data
        .paths()
        .par_iter()
        .map(|p| oracle.posterior(p).map(|post| (post[0] - 0.5).abs()))
        .collect::<Result<Vec<f64>>>()?;
    let probabilities: Vec<f64> = epsilons
        .iter()
        .map(|&eps| {
            let hits = gaps.iter().filter(|&&g| g > 0.0 && g <= eps).count();
            hits as f64 / n_paths as f64
        })
        .collect();
    let see: f64 = epsilons.iter().map(|e| e * e).sum();
    let sep: f64 = epsilons.iter().zip(&probabilities).map(|(e, p)| e * p).sum();
    let slope = sep / see;
    let pp: f64 = probabilities.iter().map(|p| p * p).sum();
    let rss: f64 = epsilons
        .iter()
        .zip(&probabilities)
        .map(|(e, p)| (p - slope * e).powi(2))
        .sum();
    let relative_residual = if pp > 0.0 { (rss / pp).sqrt() } else { 0.0 };
    Ok(MarginReport {
        epsilons: epsilons.to_vec(),
        probabilities,
        slope,
        relative_residual,
        n_paths,
    })
}

/// Fraction of misclassified paths.
pub fn error_rate(data: &LabeledDataset, classify: impl Fn(&Path) -> Result<usize> + Sync) -> Result<f64> {
    let wrong = data
        .paths()
        .par_iter()
        .zip(data.labels())
        .map(|(p, &y)| classify(p).map(|c| usize::from(c != y)))
        .collect::<Result<Vec<usize>>>()?
        .into_iter()
        .sum::<usize>();
    Ok(wrong as f64 / data.len() as f64)
}

/// Error of the oracle Bayes classifier on `data`.
pub fn bayes_error(model: &ModelSpec, data: &LabeledDataset) -> Result<f64> {
    let oracle = OracleScore::new(model.clone());
    error_rate(data, |p| oracle.posterior(p).map(|post| argmax(&post)))
}
