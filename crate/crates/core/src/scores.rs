//! Score functions built from drift/diffusion candidates.
//!
//! For candidate drifts `b_1..b_K`, squared diffusion `σ²` and weights `p`,
//! a path `X̄` is mapped to the discretized log-likelihood ratios
//!
//! ```text
//! F̄_k(X̄) = Σ_i (b_k/σ²)(X_i)(X_{i+1} − X_i) − (Δ/2) Σ_i (b_k²/σ²)(X_i)
//! ```
//!
//! then to posteriors `π_k = softmax^p_k(F̄)` and scores `h_k = 2π_k − 1`.
//! The predicted class is the first index attaining `max_k h_k`.

use serde::{Deserialize, Serialize};

use crate::error::{param_err, Error, Result};
use crate::sim::{ModelSpec, Path};
use crate::splines::{DiffusionCoeffs, DriftCoeffs, SplineBasis, MAX_ORDER};

/// `softmax^p_k(x) = p_k e^{x_k} / Σ_i p_i e^{x_i}`, stabilized by subtracting
/// the largest `x_k` among classes with positive weight.
pub fn softmax_weighted(x: &[f64], p: &[f64]) -> Result<Vec<f64>> {
    let mut out = vec![0.0; x.len()];
    softmax_weighted_into(x, p, &mut out)?;
    Ok(out)
}

pub(crate) fn softmax_weighted_into(x: &[f64], p: &[f64], out: &mut [f64]) -> Result<()> {
    if x.len() != p.len() {
        return param_err(format!("{} scores but {} weights", x.len(), p.len()));
    }
    let shift = x
        .iter()
        .zip(p)
        .filter(|(_, &w)| w > 0.0)
        .map(|(&v, _)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    if shift == f64::NEG_INFINITY {
        return param_err("softmax weights must have at least one positive entry");
    }
    let mut total = 0.0;
    for ((o, &v), &w) in out.iter_mut().zip(x).zip(p) {
        *o = if w > 0.0 { w * (v - shift).exp() } else { 0.0 };
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
    Ok(())
}

/// Discretized Girsanov functional of `path` for drift `b` and squared
/// diffusion `sigma2`.
pub fn girsanov_functional(
    path: &Path,
    b: impl Fn(f64) -> f64,
    sigma2: impl Fn(f64) -> f64,
) -> Result<f64> {
    let v = path.values();
    let delta = path.delta();
    let mut ito = 0.0;
    let mut quad = 0.0;
    for (i, w) in v.windows(2).enumerate() {
        let x = w[0];
        let s2 = sigma2(x);
        if !(s2 > 0.0) {
            return Err(Error::Evaluation(format!(
                "squared diffusion {s2} is not positive at grid point {i} (x = {x})"
            )));
        }
        let bx = b(x);
        ito += bx / s2 * (w[1] - x);
        quad += bx * bx / s2;
    }
    Ok(ito - 0.5 * delta * quad)
}

/// `h = 2π − 1`.
pub fn score_from_posterior(posterior: &[f64]) -> Vec<f64> {
    posterior.iter().map(|&p| 2.0 * p - 1.0).collect()
}

/// First index attaining the maximum. NaN entries never win.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] || values[best].is_nan() {
            best = k;
        }
    }
    best
}

/// Bound `(1/√2) √excess` relating excess L2 risk to excess misclassification risk.
pub fn zhang_gap(l2_excess: f64) -> Result<f64> {
    if !(l2_excess >= 0.0) {
        return param_err(format!("excess L2 risk must be nonnegative, got {l2_excess}"));
    }
    Ok((l2_excess / 2.0).sqrt())
}

/// Spline-parameterized score function: `K` drift coefficient vectors on one
/// basis, one floored squared-diffusion on another, and fixed class weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreParams {
    drift_basis: SplineBasis,
    diffusion_basis: SplineBasis,
    drift: Vec<DriftCoeffs>,
    diffusion: DiffusionCoeffs,
    weights: Vec<f64>,
}

impl ScoreParams {
    pub fn new(
        drift_basis: SplineBasis,
        diffusion_basis: SplineBasis,
        drift: Vec<DriftCoeffs>,
        diffusion: DiffusionCoeffs,
        weights: Vec<f64>,
    ) -> Result<Self> {
        if drift.is_empty() {
            return param_err("at least one class is required");
        }
        if drift.len() != weights.len() {
            return param_err(format!(
                "{} drift vectors but {} weights",
                drift.len(),
                weights.len()
            ));
        }
        if let Some(k) = drift.iter().position(|c| c.0.len() != drift_basis.len()) {
            return param_err(format!(
                "drift coefficients of class {} have length {}, basis has {}",
                k + 1,
                drift[k].0.len(),
                drift_basis.len()
            ));
        }
        if diffusion.alpha.len() != diffusion_basis.len() {
            return param_err(format!(
                "diffusion coefficients have length {}, basis has {}",
                diffusion.alpha.len(),
                diffusion_basis.len()
            ));
        }
        if !(diffusion.floor > 0.0) {
            return param_err("diffusion floor must be positive");
        }
        check_weights(&weights)?;
        if drift
            .iter()
            .flat_map(|c| c.0.iter())
            .chain(&diffusion.alpha)
            .any(|v| !v.is_finite())
        {
            return param_err("coefficients must be finite");
        }
        Ok(Self {
            drift_basis,
            diffusion_basis,
            drift,
            diffusion,
            weights,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.drift.len()
    }

    pub fn drift_basis(&self) -> &SplineBasis {
        &self.drift_basis
    }

    pub fn diffusion_basis(&self) -> &SplineBasis {
        &self.diffusion_basis
    }

    pub fn drift(&self) -> &[DriftCoeffs] {
        &self.drift
    }

    pub fn diffusion(&self) -> &DiffusionCoeffs {
        &self.diffusion
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn drift_at(&self, class: usize, x: f64) -> f64 {
        self.drift_basis.combine(&self.drift[class].0, x)
    }

    pub fn diffusion_at(&self, x: f64) -> f64 {
        self.diffusion_basis
            .combine(&self.diffusion.alpha, x)
            .max(self.diffusion.floor)
    }

    /// `F̄_k(path)` for every class.
    pub fn functionals(&self, path: &Path) -> Vec<f64> {
        let k_count = self.num_classes();
        let p = self.drift_basis.order();
        let delta = path.delta();
        let mut local = [0.0f64; MAX_ORDER + 1];
        let mut ito = vec![0.0; k_count];
        let mut quad = vec![0.0; k_count];
        for w in path.values().windows(2) {
            let x = w[0];
            let dx = w[1] - x;
            let Some(first) = self.drift_basis.eval_nonzero(x, &mut local[..=p]) else {
                continue;
            };
            let s2 = self.diffusion_at(x);
            for k in 0..k_count {
                let b: f64 = local[..=p]
                    .iter()
                    .zip(&self.drift[k].0[first..=first + p])
                    .map(|(u, a)| u * a)
                    .sum();
                ito[k] += b / s2 * dx;
                quad[k] += b * b / s2;
            }
        }
        ito.iter()
            .zip(&quad)
            .map(|(i, q)| i - 0.5 * delta * q)
            .collect()
    }

    pub fn posterior(&self, path: &Path) -> Vec<f64> {
        let f = self.functionals(path);
        softmax_weighted(&f, &self.weights).expect("weights validated at construction")
    }

    pub fn score(&self, path: &Path) -> Vec<f64> {
        score_from_posterior(&self.posterior(path))
    }

    /// Predicted 0-based class.
    pub fn classify(&self, path: &Path) -> usize {
        argmax(&self.score(path))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ScoreParamsDoc::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ScoreParamsDoc = serde_json::from_str(text)?;
        doc.into_params()
    }
}

fn check_weights(weights: &[f64]) -> Result<()> {
    if weights.iter().any(|&w| !(w >= 0.0)) {
        return param_err("class weights must be nonnegative");
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-10 {
        return param_err(format!("class weights sum to {total}, expected 1"));
    }
    Ok(())
}

pub const SCORE_PARAMS_FORMAT: &str = "diffclass.score-params";
pub const SCORE_PARAMS_VERSION: u32 = 1;

/// Versioned on-disk form of [`ScoreParams`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreParamsDoc {
    pub format: String,
    pub version: u32,
    pub drift_basis: SplineBasis,
    pub diffusion_basis: SplineBasis,
    pub drift: Vec<DriftCoeffs>,
    pub diffusion: DiffusionCoeffs,
    pub weights: Vec<f64>,
}

impl From<&ScoreParams> for ScoreParamsDoc {
    fn from(p: &ScoreParams) -> Self {
        Self {
            format: SCORE_PARAMS_FORMAT.into(),
            version: SCORE_PARAMS_VERSION,
            drift_basis: p.drift_basis.clone(),
            diffusion_basis: p.diffusion_basis.clone(),
            drift: p.drift.clone(),
            diffusion: p.diffusion.clone(),
            weights: p.weights.clone(),
        }
    }
}

impl ScoreParamsDoc {
    pub fn into_params(self) -> Result<ScoreParams> {
        if self.format != SCORE_PARAMS_FORMAT {
            return Err(Error::Schema(format!(
                "expected format `{SCORE_PARAMS_FORMAT}`, found `{}`",
                self.format
            )));
        }
        if self.version != SCORE_PARAMS_VERSION {
            return Err(Error::Schema(format!(
                "unsupported score-params version {} (expected {SCORE_PARAMS_VERSION})",
                self.version
            )));
        }
        ScoreParams::new(
            self.drift_basis,
            self.diffusion_basis,
            self.drift,
            self.diffusion,
            self.weights,
        )
    }
}

/// Bayes classifier for a known model: the discretized functionals are
/// evaluated with the true `b*_k` and `σ*²`, without spline approximation or
/// support truncation.
#[derive(Debug, Clone)]
pub struct OracleScore {
    model: ModelSpec,
}

impl OracleScore {
    pub fn new(model: ModelSpec) -> Self {
        Self { model }
    }

    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    pub fn functionals(&self, path: &Path) -> Result<Vec<f64>> {
        let k_count = self.model.num_classes();
        let delta = path.delta();
        let mut ito = vec![0.0; k_count];
        let mut quad = vec![0.0; k_count];
        for (i, w) in path.values().windows(2).enumerate() {
            let x = w[0];
            let s = self.model.sigma(x);
            let s2 = s * s;
            if !(s2 > 0.0) || !s2.is_finite() {
                return Err(Error::Evaluation(format!(
                    "true squared diffusion {s2} is not positive at grid point {i} (x = {x})"
                )));
            }
            let dx = w[1] - x;
            for k in 0..k_count {
                let b = self.model.drift(k, x);
                ito[k] += b / s2 * dx;
                quad[k] += b * b / s2;
            }
        }
        Ok(ito
            .iter()
            .zip(&quad)
            .map(|(i, q)| i - 0.5 * delta * q)
            .collect())
    }

    pub fn posterior(&self, path: &Path) -> Result<Vec<f64>> {
        softmax_weighted(&self.functionals(path)?, self.model.class_probs())
    }

    pub fn classify(&self, path: &Path) -> Result<usize> {
        Ok(argmax(&self.posterior(path)?))
    }
}

pub fn oracle_posterior(oracle: &OracleScore, path: &Path) -> Result<Vec<f64>> {
    oracle.posterior(path)
}

pub fn oracle_classify(oracle: &OracleScore, path: &Path) -> Result<usize> {
    oracle.classify(path)
}
