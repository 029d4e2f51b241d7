//! Empirical L2-risk minimization over spline score functions.
//!
//! Training first fixes class weights `p̂` (empirical label frequencies) and
//! then minimizes
//!
//! ```text
//! R̂₂(h) = (1/N) Σ_j Σ_k (Z_k^j − h^k(X̄^j))²,   Z_k^j = 2·1{Y_j = k} − 1
//! ```
//!
//! over the drift coefficients of every class and the squared-diffusion
//! coefficients, with each coefficient block kept inside its ℓ2 ball. Drift
//! and diffusion supports are `[-log N, log N]` and the diffusion floor is
//! `1 / log N`, with `N` the training-set size.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{param_err, Error, Result};
use crate::optim::{minimize_projected, LbfgsConfig, Objective};
use crate::scores::{softmax_weighted_into, ScoreParams, ScoreParamsDoc};
use crate::sim::LabeledDataset;
use crate::splines::{
    coefficient_radius2, project_ball_in_place, DiffusionCoeffs, DriftCoeffs, SplineBasis,
    MAX_ORDER,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Drift space dimension `D1`.
    pub drift_dim: usize,
    /// Diffusion space dimension `D2`.
    pub diffusion_dim: usize,
    /// Spline degree `M`.
    pub order: usize,
    pub max_iters: usize,
    pub grad_tol: f64,
    /// Relative objective-decrease stopping threshold.
    pub ftol: f64,
    pub n_restarts: usize,
    /// Standard deviation of the Gaussian perturbation applied to restarts
    /// after the first.
    pub init_scale: f64,
    /// Estimate `p̂` from a separate label sample.
    pub split_weights: bool,
    /// Project coefficient blocks onto their ℓ2 balls after every step.
    /// Disabling this is a diagnostic mode only.
    pub project: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            drift_dim: 4,
            diffusion_dim: 4,
            order: 3,
            max_iters: 500,
            grad_tol: 1e-6,
            ftol: 2.2e-9,
            n_restarts: 1,
            init_scale: 0.0,
            split_weights: false,
            project: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn with_dims(mut self, drift_dim: usize, diffusion_dim: usize) -> Self {
        self.drift_dim = drift_dim;
        self.diffusion_dim = diffusion_dim;
        self
    }

    fn check(&self) -> Result<()> {
        if self.max_iters == 0 {
            return param_err("max_iters must be at least 1");
        }
        if !(self.grad_tol > 0.0) {
            return param_err("grad_tol must be positive");
        }
        if self.n_restarts == 0 {
            return param_err("n_restarts must be at least 1");
        }
        if !(self.init_scale >= 0.0) {
            return param_err("init_scale must be nonnegative");
        }
        if self.drift_dim == 0 || self.diffusion_dim == 0 {
            return param_err("spline dimensions must be positive");
        }
        if self.order == 0 || self.order > MAX_ORDER {
            return param_err(format!("spline order must be in 1..={MAX_ORDER}"));
        }
        Ok(())
    }
}

/// Result of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedScore {
    pub params: ScoreParams,
    pub train_risk: f64,
    /// Risk at the deterministic starting point.
    pub initial_risk: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Risk after every accepted step of the retained restart.
    pub risk_trace: Vec<f64>,
    /// Index of the retained restart.
    pub best_restart: usize,
}

impl FittedScore {
    pub fn report(&self) -> TrainReport {
        TrainReport {
            drift_dim: self.params.drift_basis().dim(),
            diffusion_dim: self.params.diffusion_basis().dim(),
            order: self.params.drift_basis().order(),
            train_risk: self.train_risk,
            initial_risk: self.initial_risk,
            iterations: self.iterations,
            converged: self.converged,
            best_restart: self.best_restart,
            risk_trace: self.risk_trace.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = FittedScoreDoc {
            model: ScoreParamsDoc::from(&self.params),
            report: self.report(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: FittedScoreDoc = serde_json::from_str(text)?;
        let params = doc.model.into_params()?;
        let r = doc.report;
        Ok(Self {
            params,
            train_risk: r.train_risk,
            initial_risk: r.initial_risk,
            iterations: r.iterations,
            converged: r.converged,
            risk_trace: r.risk_trace,
            best_restart: r.best_restart,
        })
    }
}

/// Reads score parameters from either a trained-model document or a bare
/// score-params document.
pub fn params_from_json(text: &str) -> Result<ScoreParams> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    if value.get("model").is_some() && value.get("report").is_some() {
        let doc: FittedScoreDoc = serde_json::from_value(value)?;
        doc.model.into_params()
    } else {
        let doc: ScoreParamsDoc = serde_json::from_value(value)?;
        doc.into_params()
    }
}

/// Training diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub drift_dim: usize,
    pub diffusion_dim: usize,
    pub order: usize,
    pub train_risk: f64,
    pub initial_risk: f64,
    pub iterations: usize,
    pub converged: bool,
    pub best_restart: usize,
    pub risk_trace: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct FittedScoreDoc {
    model: ScoreParamsDoc,
    report: TrainReport,
}

/// Empirical class frequencies `p̂_k = #{j : Y_j = k} / N`.
pub fn estimate_weights(labels: &[usize], k: usize) -> Result<Vec<f64>> {
    if labels.is_empty() {
        return param_err("cannot estimate class weights from an empty label set");
    }
    let mut counts = vec![0usize; k];
    for &y in labels {
        if y >= k {
            return param_err(format!("label {} outside 1..={k}", y + 1));
        }
        counts[y] += 1;
    }
    let n = labels.len() as f64;
    Ok(counts.into_iter().map(|c| c as f64 / n).collect())
}

/// `R̂₂` of arbitrary precomputed score vectors.
pub fn risk_from_scores(scores: &[Vec<f64>], labels: &[usize]) -> f64 {
    let total: f64 = scores
        .iter()
        .zip(labels)
        .map(|(h, &y)| {
            h.iter()
                .enumerate()
                .map(|(k, &hk)| {
                    let z = if k == y { 1.0 } else { -1.0 };
                    (z - hk) * (z - hk)
                })
                .sum::<f64>()
        })
        .sum();
    total / scores.len() as f64
}

pub fn empirical_risk(params: &ScoreParams, data: &LabeledDataset) -> Result<f64> {
    if params.num_classes() != data.num_classes() {
        return param_err(format!(
            "score has {} classes, dataset has {}",
            params.num_classes(),
            data.num_classes()
        ));
    }
    let objective = RiskObjective::new(
        data,
        params.drift_basis(),
        params.diffusion_basis(),
        params.weights(),
        params.diffusion().floor,
    )?;
    let theta = objective.pack(params);
    Ok(objective.value(&theta))
}

/// Gradient of `R̂₂` with respect to every spline coefficient.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskGradient {
    /// One block per class, same layout as the drift coefficients.
    pub drift: Vec<Vec<f64>>,
    pub diffusion: Vec<f64>,
}

pub fn risk_gradient(params: &ScoreParams, data: &LabeledDataset) -> Result<RiskGradient> {
    if params.num_classes() != data.num_classes() {
        return param_err(format!(
            "score has {} classes, dataset has {}",
            params.num_classes(),
            data.num_classes()
        ));
    }
    let objective = RiskObjective::new(
        data,
        params.drift_basis(),
        params.diffusion_basis(),
        params.weights(),
        params.diffusion().floor,
    )?;
    let theta = objective.pack(params);
    let mut grad = vec![0.0; objective.dim()];
    objective.value_grad(&theta, &mut grad);
    let l1 = objective.drift_len;
    Ok(RiskGradient {
        drift: grad[..objective.k * l1].chunks(l1).map(<[f64]>::to_vec).collect(),
        diffusion: grad[objective.k * l1..].to_vec(),
    })
}

const CHUNK: usize = 32;

/// `R̂₂` as a function of the packed coefficient vector
/// `[a_1 | a_2 | ... | a_K | α]`, with basis values at every grid point
/// precomputed.
pub(crate) struct RiskObjective {
    k: usize,
    steps: usize,
    delta: f64,
    floor: f64,
    weights: Vec<f64>,
    labels: Vec<usize>,
    drift_order: usize,
    drift_len: usize,
    drift_first: Vec<u32>,
    drift_vals: Vec<f64>,
    diff_order: usize,
    diff_len: usize,
    diff_first: Vec<u32>,
    diff_vals: Vec<f64>,
    dx: Vec<f64>,
}

const OUTSIDE: u32 = u32::MAX;

impl RiskObjective {
    pub(crate) fn new(
        data: &LabeledDataset,
        drift_basis: &SplineBasis,
        diffusion_basis: &SplineBasis,
        weights: &[f64],
        floor: f64,
    ) -> Result<Self> {
        if weights.len() != data.num_classes() {
            return param_err("weight vector length does not match class count");
        }
        let steps = data.steps();
        let total = data.len() * steps;
        let p1 = drift_basis.order();
        let p2 = diffusion_basis.order();
        let mut drift_first = Vec::with_capacity(total);
        let mut drift_vals = vec![0.0; total * (p1 + 1)];
        let mut diff_first = Vec::with_capacity(total);
        let mut diff_vals = vec![0.0; total * (p2 + 1)];
        let mut dx = Vec::with_capacity(total);
        for (j, path) in data.paths().iter().enumerate() {
            for (i, w) in path.values().windows(2).enumerate() {
                let idx = j * steps + i;
                let x = w[0];
                dx.push(w[1] - x);
                let slot = &mut drift_vals[idx * (p1 + 1)..(idx + 1) * (p1 + 1)];
                drift_first.push(drift_basis.eval_nonzero(x, slot).map_or(OUTSIDE, |f| f as u32));
                let slot = &mut diff_vals[idx * (p2 + 1)..(idx + 1) * (p2 + 1)];
                diff_first.push(diffusion_basis.eval_nonzero(x, slot).map_or(OUTSIDE, |f| f as u32));
            }
        }
        Ok(Self {
            k: data.num_classes(),
            steps,
            delta: data.delta(),
            floor,
            weights: weights.to_vec(),
            labels: data.labels().to_vec(),
            drift_order: p1,
            drift_len: drift_basis.len(),
            drift_first,
            drift_vals,
            diff_order: p2,
            diff_len: diffusion_basis.len(),
            diff_first,
            diff_vals,
            dx,
        })
    }

    pub(crate) fn pack(&self, params: &ScoreParams) -> Vec<f64> {
        let mut theta = Vec::with_capacity(self.dim());
        for c in params.drift() {
            theta.extend_from_slice(&c.0);
        }
        theta.extend_from_slice(&params.diffusion().alpha);
        theta
    }

    fn value(&self, theta: &[f64]) -> f64 {
        let mut grad = vec![0.0; self.dim()];
        self.eval(theta, &mut grad, false)
    }

    /// Loss of sample `j`; when `grad` is given, accumulates its gradient.
    fn sample(&self, j: usize, theta: &[f64], scratch: &mut Scratch, grad: Option<&mut [f64]>) -> f64 {
        if self.drift_order == 3 && self.diff_order == 3 {
            self.sample_w::<3, 3>(j, theta, scratch, grad)
        } else {
            self.sample_w::<0, 0>(j, theta, scratch, grad)
        }
    }

    /// `sample` with the spline degrees fixed at compile time (`0` = read
    /// them from `self`).
    #[inline(always)]
    fn sample_w<const P1: usize, const P2: usize>(
        &self,
        j: usize,
        theta: &[f64],
        scratch: &mut Scratch,
        grad: Option<&mut [f64]>,
    ) -> f64 {
        let k_count = self.k;
        let p1 = if P1 == 0 { self.drift_order } else { P1 };
        let p2 = if P2 == 0 { self.diff_order } else { P2 };
        let l1 = self.drift_len;
        let alpha = &theta[k_count * l1..];
        let base = j * self.steps;
        let Scratch { drift, inv_s2, clipped, f, post, u } = scratch;
        f.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..self.steps {
            let idx = base + i;
            let sig2 = match self.diff_first[idx] {
                OUTSIDE => {
                    clipped[i] = true;
                    self.floor
                }
                first => {
                    let first = first as usize;
                    let vals = &self.diff_vals[idx * (p2 + 1)..(idx + 1) * (p2 + 1)];
                    let raw: f64 = vals.iter().zip(&alpha[first..=first + p2]).map(|(b, a)| b * a).sum();
                    if raw >= self.floor {
                        clipped[i] = false;
                        raw
                    } else {
                        clipped[i] = true;
                        self.floor
                    }
                }
            };
            let inv = 1.0 / sig2;
            inv_s2[i] = inv;
            let dx = self.dx[idx];
            let row = &mut drift[i * k_count..(i + 1) * k_count];
            match self.drift_first[idx] {
                OUTSIDE => row.iter_mut().for_each(|b| *b = 0.0),
                first => {
                    let first = first as usize;
                    let vals = &self.drift_vals[idx * (p1 + 1)..(idx + 1) * (p1 + 1)];
                    for (k, b) in row.iter_mut().enumerate() {
                        let coeffs = &theta[k * l1 + first..=k * l1 + first + p1];
                        *b = vals.iter().zip(coeffs).map(|(v, a)| v * a).sum();
                        f[k] += *b * inv * (dx - 0.5 * self.delta * *b);
                    }
                }
            }
        }
        softmax_weighted_into(f, &self.weights, post).expect("weights validated");
        let y = self.labels[j];
        let mut loss = 0.0;
        for (k, &pk) in post.iter().enumerate() {
            let z = if k == y { 1.0 } else { -1.0 };
            let r = z - (2.0 * pk - 1.0);
            loss += r * r;
            // dL/dπ_k = -4 (Z_k - h_k)
            u[k] = -4.0 * r;
        }
        let Some(grad) = grad else {
            return loss;
        };
        // dL/dF_k = π_k (q_k − Σ_i q_i π_i)
        let mean: f64 = u.iter().zip(post.iter()).map(|(q, p)| q * p).sum();
        for (uk, &pk) in u.iter_mut().zip(post.iter()) {
            *uk = pk * (*uk - mean);
        }
        let (drift_grad, diff_grad) = grad.split_at_mut(k_count * l1);
        for i in 0..self.steps {
            let idx = base + i;
            let first = self.drift_first[idx];
            if first == OUTSIDE {
                continue;
            }
            let first = first as usize;
            let inv = inv_s2[i];
            let dx = self.dx[idx];
            let vals = &self.drift_vals[idx * (p1 + 1)..(idx + 1) * (p1 + 1)];
            let row = &drift[i * k_count..(i + 1) * k_count];
            let mut dsig = 0.0;
            for (k, &b) in row.iter().enumerate() {
                let w = u[k] * (dx - self.delta * b) * inv;
                if w != 0.0 {
                    let block = &mut drift_grad[k * l1 + first..=k * l1 + first + p1];
                    block.iter_mut().zip(vals).for_each(|(g, v)| *g += w * v);
                }
                dsig += u[k] * b * (0.5 * self.delta * b - dx);
            }
            if !clipped[i] {
                let dsig = dsig * inv * inv;
                let f2 = self.diff_first[idx] as usize;
                let vals = &self.diff_vals[idx * (p2 + 1)..(idx + 1) * (p2 + 1)];
                diff_grad[f2..=f2 + p2]
                    .iter_mut()
                    .zip(vals)
                    .for_each(|(g, v)| *g += dsig * v);
            }
        }
        loss
    }

    fn eval(&self, theta: &[f64], grad: &mut [f64], with_grad: bool) -> f64 {
        let n = self.labels.len();
        let dim = self.dim();
        // Fixed chunking and an ordered final reduction keep results
        // bitwise identical for any thread count.
        let partials: Vec<(f64, Vec<f64>)> = (0..n.div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| {
                let mut scratch = Scratch::new(self.k, self.steps);
                let mut g = if with_grad { vec![0.0; dim] } else { Vec::new() };
                let mut loss = 0.0;
                for j in c * CHUNK..((c + 1) * CHUNK).min(n) {
                    let gref = if with_grad { Some(g.as_mut_slice()) } else { None };
                    loss += self.sample(j, theta, &mut scratch, gref);
                }
                (loss, g)
            })
            .collect();
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut total = 0.0;
        for (loss, g) in partials {
            total += loss;
            if with_grad {
                grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
            }
        }
        let inv = 1.0 / n as f64;
        grad.iter_mut().for_each(|g| *g *= inv);
        total * inv
    }
}

struct Scratch {
    drift: Vec<f64>,
    /// `1 / σ²` at each step.
    inv_s2: Vec<f64>,
    clipped: Vec<bool>,
    f: Vec<f64>,
    post: Vec<f64>,
    u: Vec<f64>,
}

impl Scratch {
    fn new(k: usize, steps: usize) -> Self {
        Self {
            drift: vec![0.0; k * steps],
            inv_s2: vec![0.0; steps],
            clipped: vec![false; steps],
            f: vec![0.0; k],
            post: vec![0.0; k],
            u: vec![0.0; k],
        }
    }
}

impl Objective for RiskObjective {
    fn dim(&self) -> usize {
        self.k * self.drift_len + self.diff_len
    }

    fn value_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        self.eval(x, grad, true)
    }
}

/// Fits the L2-risk minimizer over spline score functions of dimensions
/// `(config.drift_dim, config.diffusion_dim)`.
///
/// Weights come from `data`'s labels unless `config.split_weights` is set, in
/// which case `weight_labels` must hold an independent label sample.
pub fn train_erm(
    data: &LabeledDataset,
    config: &TrainConfig,
    weight_labels: Option<&[usize]>,
) -> Result<FittedScore> {
    config.check()?;
    let n = data.len();
    if n < 2 {
        return Err(Error::Training(
            "at least two training paths are needed (support halfwidth is log N)".into(),
        ));
    }
    let k = data.num_classes();
    let weights = if config.split_weights {
        let labels = weight_labels.ok_or_else(|| {
            Error::Param("split_weights is set but no weight label sample was given".into())
        })?;
        estimate_weights(labels, k)?
    } else {
        estimate_weights(data.labels(), k)?
    };
    let halfwidth = (n as f64).ln();
    let drift_basis = SplineBasis::new(config.order, config.drift_dim, halfwidth)?;
    let diffusion_basis = SplineBasis::new(config.order, config.diffusion_dim, halfwidth)?;
    let floor = DiffusionCoeffs::floor_for(n);
    let objective = RiskObjective::new(data, &drift_basis, &diffusion_basis, &weights, floor)?;

    let l1 = drift_basis.len();
    let l2 = diffusion_basis.len();
    let drift_r2 = coefficient_radius2(&drift_basis, n);
    let diff_r2 = coefficient_radius2(&diffusion_basis, n);
    let do_project = config.project;
    let project = move |theta: &mut [f64]| {
        if !do_project {
            return;
        }
        let (drift, diff) = theta.split_at_mut(k * l1);
        for block in drift.chunks_mut(l1) {
            project_ball_in_place(block, drift_r2);
        }
        project_ball_in_place(diff, diff_r2);
    };

    // Zero drifts give posterior p̂; all-one diffusion coefficients give σ̃² ≡ 1.
    let mut start = vec![0.0; k * l1];
    start.extend(std::iter::repeat(1.0).take(l2));
    let initial_risk = objective.value(&start);
    if !initial_risk.is_finite() {
        return Err(Error::Training(format!("initial risk is not finite ({initial_risk})")));
    }

    let lbfgs = LbfgsConfig {
        max_iters: config.max_iters,
        grad_tol: config.grad_tol,
        ftol: config.ftol,
        ..LbfgsConfig::default()
    };
    let mut best: Option<(usize, crate::optim::OptimResult)> = None;
    for restart in 0..config.n_restarts {
        let mut x0 = start.clone();
        if restart > 0 {
            if config.init_scale == 0.0 {
                break;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(restart as u64);
            for v in x0.iter_mut() {
                let xi: f64 = rng.sample(StandardNormal);
                *v += config.init_scale * xi;
            }
        }
        let result = minimize_projected(&objective, &x0, &project, &lbfgs).map_err(|e| match e {
            Error::Training(msg) => Error::Training(format!(
                "D1={}, D2={}, restart {restart}: {msg}",
                config.drift_dim, config.diffusion_dim
            )),
            other => other,
        })?;
        if best.as_ref().is_none_or(|(_, b)| result.value < b.value) {
            best = Some((restart, result));
        }
    }
    let (best_restart, result) = best.expect("at least one restart runs");

    let drift = result.x[..k * l1]
        .chunks(l1)
        .map(|c| DriftCoeffs(c.to_vec()))
        .collect();
    let diffusion = DiffusionCoeffs::new(result.x[k * l1..].to_vec(), floor)?;
    let params = ScoreParams::new(drift_basis, diffusion_basis, drift, diffusion, weights)?;
    Ok(FittedScore {
        params,
        train_risk: result.value,
        initial_risk,
        iterations: result.iterations,
        converged: result.converged,
        risk_trace: result.trace,
        best_restart,
    })
}
