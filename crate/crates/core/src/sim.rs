//! Labeled diffusion-path generation.
//!
//! Paths follow `dX_t = b_Y(X_t) dt + σ(X_t) dW_t` on `[0, 1]` with `X_0 = 0`
//! and are produced by an Euler–Maruyama scheme. Each path draws its label and
//! its Gaussian increments from its own ChaCha stream keyed by
//! `(seed, path index)`, so datasets do not depend on thread scheduling.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{param_err, Error, Result};

/// A scalar coefficient function `x ↦ f(x)`.
pub type CoeffFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// One trajectory observed at `n + 1` equispaced times of `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    values: Vec<f64>,
}

impl Path {
    /// Wraps observed values `X_0, X_Δ, ..., X_1`; requires `X_0 = 0` and at
    /// least one step.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return param_err("a path needs at least two observations");
        }
        if values[0] != 0.0 {
            return param_err(format!("paths must start at 0, got {}", values[0]));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return param_err("path contains non-finite values");
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Number of steps `n`.
    pub fn steps(&self) -> usize {
        self.values.len() - 1
    }

    /// Time step `Δ = 1/n`.
    pub fn delta(&self) -> f64 {
        1.0 / self.steps() as f64
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// `N` labeled paths sharing one observation grid. Labels are 0-based class
/// indices in `0..k`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    paths: Vec<Path>,
    labels: Vec<usize>,
    k: usize,
    steps: usize,
}

impl LabeledDataset {
    pub fn new(paths: Vec<Path>, labels: Vec<usize>, k: usize) -> Result<Self> {
        if paths.is_empty() {
            return param_err("dataset must contain at least one path");
        }
        if paths.len() != labels.len() {
            return param_err(format!(
                "{} paths but {} labels",
                paths.len(),
                labels.len()
            ));
        }
        if k == 0 {
            return param_err("class count K must be positive");
        }
        let steps = paths[0].steps();
        if let Some(j) = paths.iter().position(|p| p.steps() != steps) {
            return param_err(format!(
                "path {j} has {} steps, expected {steps}",
                paths[j].steps()
            ));
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= k) {
            return param_err(format!("label {} outside 1..={k}", y + 1));
        }
        Ok(Self {
            paths,
            labels,
            k,
            steps,
        })
    }

    pub fn paths(&self) -> &[Path] {
        &self.paths
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn delta(&self) -> f64 {
        1.0 / self.steps as f64
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.k];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Path, usize)> {
        self.paths.iter().zip(self.labels.iter().copied())
    }
}

/// Ground-truth diffusion model: one drift per class, a shared diffusion
/// coefficient `σ` (not squared) and class probabilities.
#[derive(Clone)]
pub struct ModelSpec {
    drifts: Vec<CoeffFn>,
    sigma: CoeffFn,
    class_probs: Vec<f64>,
}

impl fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("classes", &self.drifts.len())
            .field("class_probs", &self.class_probs)
            .finish_non_exhaustive()
    }
}

impl ModelSpec {
    pub fn new(drifts: Vec<CoeffFn>, sigma: CoeffFn, class_probs: Vec<f64>) -> Result<Self> {
        if drifts.is_empty() {
            return param_err("a model needs at least one class");
        }
        if class_probs.len() != drifts.len() {
            return param_err(format!(
                "{} drifts but {} class probabilities",
                drifts.len(),
                class_probs.len()
            ));
        }
        if class_probs.iter().any(|&p| !(p >= 0.0)) {
            return param_err("class probabilities must be nonnegative");
        }
        let total: f64 = class_probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return param_err(format!("class probabilities sum to {total}, expected 1"));
        }
        Ok(Self {
            drifts,
            sigma,
            class_probs,
        })
    }

    /// Same drifts and `σ`, uniform class probabilities.
    pub fn uniform(drifts: Vec<CoeffFn>, sigma: CoeffFn) -> Result<Self> {
        let k = drifts.len();
        Self::new(drifts, sigma, vec![1.0 / k as f64; k.max(1)])
    }

    /// Constant drifts `b_k ≡ c_k` with constant `σ`, uniform probabilities.
    pub fn constant_drifts(levels: &[f64], sigma: f64) -> Result<Self> {
        let drifts = levels
            .iter()
            .map(|&c| Arc::new(move |_: f64| c) as CoeffFn)
            .collect();
        Self::uniform(drifts, Arc::new(move |_| sigma))
    }

    /// Keeps only the listed classes (0-based) with renormalized probabilities.
    pub fn restrict(&self, classes: &[usize]) -> Result<Self> {
        if let Some(&c) = classes.iter().find(|&&c| c >= self.num_classes()) {
            return param_err(format!("class {} does not exist", c + 1));
        }
        let mass: f64 = classes.iter().map(|&c| self.class_probs[c]).sum();
        if !(mass > 0.0) {
            return param_err("restricted classes carry no probability");
        }
        let mut probs: Vec<f64> = classes.iter().map(|&c| self.class_probs[c] / mass).collect();
        let total: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= total);
        Self::new(
            classes.iter().map(|&c| self.drifts[c].clone()).collect(),
            self.sigma.clone(),
            probs,
        )
    }

    /// Replaces the class probabilities.
    pub fn with_class_probs(&self, class_probs: Vec<f64>) -> Result<Self> {
        Self::new(self.drifts.clone(), self.sigma.clone(), class_probs)
    }

    pub fn num_classes(&self) -> usize {
        self.drifts.len()
    }

    pub fn drift(&self, class: usize, x: f64) -> f64 {
        (self.drifts[class])(x)
    }

    pub fn sigma(&self, x: f64) -> f64 {
        (self.sigma)(x)
    }

    pub fn class_probs(&self) -> &[f64] {
        &self.class_probs
    }
}

/// The three benchmark models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BuiltinModel {
    Model1,
    Model2,
    Model3,
}

impl BuiltinModel {
    pub const ALL: [BuiltinModel; 3] = [Self::Model1, Self::Model2, Self::Model3];

    pub fn spec(self) -> ModelSpec {
        use std::f64::consts::PI;
        fn f(g: impl Fn(f64) -> f64 + Send + Sync + 'static) -> CoeffFn {
            Arc::new(g)
        }
        let (drifts, sigma) = match self {
            // Mixture of Ornstein–Uhlenbeck processes.
            Self::Model1 => (
                vec![f(|x| -(x - 1.0)), f(|x| -(x + 1.0)), f(|x| -x)],
                f(|_| 1.0),
            ),
            Self::Model2 => (
                vec![
                    f(|x| 0.25 + 0.75 * x.cos()),
                    f(|x| -2.0 * (-x * x).exp() + x.sin()),
                    f(|x| 4.0 / (PI * (x * x + 1.0))),
                ],
                f(|_| 1.0),
            ),
            Self::Model3 => (
                vec![
                    f(|x| -0.5 - 1.5 * x.cos().powi(2)),
                    f(|x| 0.25 + 0.75 * x.cos().powi(2)),
                    f(|x| 0.5 + 1.5 * x.cos().powi(2)),
                    f(|x| x - 1.0),
                    f(|x| -(x - 1.0)),
                    f(|x| -(x - 4.0)),
                ],
                f(|x| 0.1 + 0.9 / (1.0 + x * x).sqrt()),
            ),
        };
        ModelSpec::uniform(drifts, sigma).expect("builtin models are valid")
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Model1 => "model1",
            Self::Model2 => "model2",
            Self::Model3 => "model3",
        }
    }
}

impl fmt::Display for BuiltinModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BuiltinModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "1" | "model1" | "m1" => Ok(Self::Model1),
            "2" | "model2" | "m2" => Ok(Self::Model2),
            "3" | "model3" | "m3" => Ok(Self::Model3),
            other => param_err(format!("unknown model `{other}` (expected model1, model2 or model3)")),
        }
    }
}

pub fn builtin_model(id: BuiltinModel) -> ModelSpec {
    id.spec()
}

/// Simulation grid options.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimOptions {
    /// Number of observation steps `n`.
    pub steps: usize,
    /// Internal Euler substeps per observation step.
    pub refine: usize,
}

impl SimOptions {
    pub fn new(steps: usize) -> Self {
        Self { steps, refine: 1 }
    }

    pub fn with_refine(mut self, refine: usize) -> Self {
        self.refine = refine;
        self
    }

    fn check(&self) -> Result<()> {
        if self.steps == 0 {
            return param_err("number of steps n must be at least 1");
        }
        if self.refine == 0 {
            return param_err("refinement factor must be at least 1");
        }
        Ok(())
    }
}

/// Independent RNG stream for one path of a dataset.
pub fn path_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Simulates one path of class `label` (0-based) with the Euler–Maruyama
/// scheme `X_{t+h} = X_t + b(X_t) h + σ(X_t) √h ξ`.
pub fn simulate_path<R: rand::Rng + ?Sized>(
    model: &ModelSpec,
    label: usize,
    opts: SimOptions,
    rng: &mut R,
) -> Result<Path> {
    simulate_path_indexed(model, label, opts, rng, 0)
}

fn simulate_path_indexed<R: rand::Rng + ?Sized>(
    model: &ModelSpec,
    label: usize,
    opts: SimOptions,
    rng: &mut R,
    path_index: usize,
) -> Result<Path> {
    opts.check()?;
    if label >= model.num_classes() {
        return param_err(format!(
            "label {} outside 1..={}",
            label + 1,
            model.num_classes()
        ));
    }
    let fine_steps = opts.steps * opts.refine;
    let h = 1.0 / fine_steps as f64;
    let sqrt_h = h.sqrt();
    let mut values = Vec::with_capacity(opts.steps + 1);
    values.push(0.0);
    let mut x = 0.0f64;
    for step in 0..fine_steps {
        let b = model.drift(label, x);
        let s = model.sigma(x);
        if !b.is_finite() || !s.is_finite() || s < 0.0 {
            return Err(Error::Simulation {
                path: path_index,
                step,
                reason: format!("invalid coefficients at x = {x}: b = {b}, sigma = {s}"),
            });
        }
        let xi: f64 = StandardNormal.sample(rng);
        x += b * h + s * sqrt_h * xi;
        if !x.is_finite() {
            return Err(Error::Simulation {
                path: path_index,
                step,
                reason: "state diverged".into(),
            });
        }
        if (step + 1) % opts.refine == 0 {
            values.push(x);
        }
    }
    Ok(Path { values })
}

fn draw_label<R: rand::Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = Uniform::new(0.0, 1.0).expect("valid range").sample(rng);
    let mut acc = 0.0;
    for (k, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    // Rounding left u above the cumulative sum: take the last class with mass.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Simulates `n_paths` labeled paths. Path `j` uses [`path_rng`]`(seed, j)`
/// for both its label and its noise.
pub fn simulate_dataset(
    model: &ModelSpec,
    n_paths: usize,
    opts: SimOptions,
    seed: u64,
) -> Result<LabeledDataset> {
    if n_paths == 0 {
        return param_err("dataset size N must be at least 1");
    }
    opts.check()?;
    let rows: Vec<(Path, usize)> = (0..n_paths)
        .into_par_iter()
        .map(|j| {
            let mut rng = path_rng(seed, j as u64);
            let label = draw_label(model.class_probs(), &mut rng);
            let path = simulate_path_indexed(model, label, opts, &mut rng, j)?;
            Ok((path, label))
        })
        .collect::<Result<_>>()?;
    let (paths, labels) = rows.into_iter().unzip();
    LabeledDataset::new(paths, labels, model.num_classes())
}
