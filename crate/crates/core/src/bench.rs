//! Repeated train/test experiments and Bayes-risk estimation.
//!
//! Seeds: repetition `r` of a run with master seed `s` uses
//! `rep_seed = splitmix64(s ^ splitmix64(r))`; its training sample is
//! simulated with `splitmix64(rep_seed)` and its test sample with
//! `splitmix64(rep_seed + 1)`. Repetitions are independent, so they run in
//! parallel and produce the same numbers in any order or thread count.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{bayes_error, error_rate, KnnModel, PluginModel};
use crate::erm::TrainConfig;
use crate::error::{param_err, Error, Result};
use crate::select::{select, SelectionConfig};
use crate::sim::{simulate_dataset, BuiltinModel, LabeledDataset, SimOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Classifier {
    Erm,
    Plugin,
    Knn,
    Bayes,
}

impl Classifier {
    pub const ALL: [Classifier; 4] = [Self::Erm, Self::Plugin, Self::Knn, Self::Bayes];

    pub fn name(self) -> &'static str {
        match self {
            Self::Erm => "erm",
            Self::Plugin => "plugin",
            Self::Knn => "knn",
            Self::Bayes => "bayes",
        }
    }
}

impl fmt::Display for Classifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Classifier {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "erm" => Ok(Self::Erm),
            "plugin" | "plug-in" => Ok(Self::Plugin),
            "knn" | "k-nn" => Ok(Self::Knn),
            "bayes" | "oracle" => Ok(Self::Bayes),
            other => param_err(format!(
                "unknown classifier `{other}` (expected erm, plugin, knn or bayes)"
            )),
        }
    }
}

/// SplitMix64 finalizer.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rep_seed(master: u64, rep: usize) -> u64 {
    splitmix64(master ^ splitmix64(rep as u64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub model: BuiltinModel,
    /// Training sample size `N`.
    #[serde(rename = "N")]
    pub n_train: usize,
    /// Observation steps `n` per path.
    #[serde(rename = "n")]
    pub steps: usize,
    /// Euler sub-steps per observation step.
    pub refine: usize,
    pub reps: usize,
    pub test_size: usize,
    pub classifiers: Vec<Classifier>,
    pub seed: u64,
    /// Fixed `(D1, D2)` of the plug-in classifier.
    pub plugin_dims: (usize, usize),
    pub selection: SelectionConfig,
    pub train: TrainConfig,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            model: BuiltinModel::Model1,
            n_train: 1000,
            steps: 100,
            refine: 1,
            reps: 30,
            test_size: 1000,
            classifiers: vec![Classifier::Erm],
            seed: 0,
            plugin_dims: (4, 4),
            selection: SelectionConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl ExperimentSpec {
    pub fn check(&self) -> Result<()> {
        if self.reps == 0 {
            return param_err("reps must be at least 1");
        }
        if self.test_size == 0 {
            return param_err("test size must be at least 1");
        }
        if self.n_train < 2 {
            return param_err("N must be at least 2");
        }
        if self.steps == 0 || self.refine == 0 {
            return param_err("n and refine must be positive");
        }
        if self.classifiers.is_empty() {
            return param_err("classifier list must not be empty");
        }
        if self.plugin_dims.0 == 0 || self.plugin_dims.1 == 0 {
            return param_err("plug-in dimensions must be positive");
        }
        Ok(())
    }

    fn sim_options(&self) -> SimOptions {
        SimOptions::new(self.steps).with_refine(self.refine)
    }
}

/// Outcome of one classifier on one repetition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub classifier: Classifier,
    pub rep: usize,
    pub error: Option<f64>,
    pub failure: Option<String>,
    /// `(D1, D2)` picked by penalized selection (ERM only).
    pub chosen: Option<(usize, usize)>,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSummary {
    pub classifier: Classifier,
    /// Mean over the repetitions that succeeded (`None` if none did).
    pub mean: Option<f64>,
    /// Sample standard deviation of the per-repetition errors (0 for one rep).
    pub std: Option<f64>,
    /// Errors of successful repetitions, in repetition order.
    pub errors: Vec<f64>,
    pub failed_reps: Vec<usize>,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub config: ExperimentSpec,
    pub summaries: Vec<ClassifierSummary>,
    pub records: Vec<RepRecord>,
    pub wall_seconds: f64,
}

/// `(mean, sample std)` of a nonempty list.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Some((mean, std))
}

fn evaluate(
    classifier: Classifier,
    spec: &ExperimentSpec,
    train: &LabeledDataset,
    test: &LabeledDataset,
) -> Result<(f64, Option<(usize, usize)>)> {
    match classifier {
        Classifier::Erm => {
            let r = select(train, &spec.selection, &spec.train)?;
            let params = &r.fitted.params;
            Ok((error_rate(test, |p| Ok(params.classify(p)))?, Some(r.chosen)))
        }
        Classifier::Plugin => {
            let m = PluginModel::fit(train, spec.plugin_dims.0, spec.plugin_dims.1)?;
            Ok((error_rate(test, |p| Ok(m.classify(p)))?, None))
        }
        Classifier::Knn => {
            let m = KnnModel::fit(train)?;
            Ok((error_rate(test, |p| m.classify(p))?, None))
        }
        Classifier::Bayes => Ok((bayes_error(&spec.model.spec(), test)?, None)),
    }
}

fn run_rep(spec: &ExperimentSpec, rep: usize) -> Result<Vec<RepRecord>> {
    let model = spec.model.spec();
    let seed = rep_seed(spec.seed, rep);
    let opts = spec.sim_options();
    let train = simulate_dataset(&model, spec.n_train, opts, splitmix64(seed))?;
    let test = simulate_dataset(&model, spec.test_size, opts, splitmix64(seed.wrapping_add(1)))?;
    let mut out = Vec::with_capacity(spec.classifiers.len());
    for &c in &spec.classifiers {
        let start = Instant::now();
        let outcome = evaluate(c, spec, &train, &test);
        let wall_seconds = start.elapsed().as_secs_f64();
        let record = match outcome {
            Ok((error, chosen)) => {
                info!("{} {} rep {rep}: error {error:.4}", spec.model, c);
                RepRecord { classifier: c, rep, error: Some(error), failure: None, chosen, wall_seconds }
            }
            Err(e) => {
                warn!("{} {} rep {rep} failed: {e}", spec.model, c);
                RepRecord {
                    classifier: c,
                    rep,
                    error: None,
                    failure: Some(e.to_string()),
                    chosen: None,
                    wall_seconds,
                }
            }
        };
        out.push(record);
    }
    Ok(out)
}

fn summarize(classifiers: &[Classifier], records: &[RepRecord]) -> Vec<ClassifierSummary> {
    classifiers
        .iter()
        .map(|&c| {
            let mine: Vec<&RepRecord> = records.iter().filter(|r| r.classifier == c).collect();
            let errors: Vec<f64> = mine.iter().filter_map(|r| r.error).collect();
            let failed_reps = mine.iter().filter(|r| r.error.is_none()).map(|r| r.rep).collect();
            let ms = mean_std(&errors);
            ClassifierSummary {
                classifier: c,
                mean: ms.map(|m| m.0),
                std: ms.map(|m| m.1),
                errors,
                failed_reps,
                wall_seconds: mine.iter().map(|r| r.wall_seconds).sum(),
            }
        })
        .collect()
}

/// Runs every repetition of `spec`. Classifier failures are recorded per
/// repetition; only simulation failures abort the run.
pub fn run_bench(spec: &ExperimentSpec) -> Result<BenchResult> {
    spec.check()?;
    let mut classifiers = Vec::new();
    for &c in &spec.classifiers {
        if !classifiers.contains(&c) {
            classifiers.push(c);
        }
    }
    let spec = ExperimentSpec { classifiers, ..spec.clone() };
    let start = Instant::now();
    let per_rep = (0..spec.reps)
        .into_par_iter()
        .map(|rep| run_rep(&spec, rep))
        .collect::<Result<Vec<_>>>()?;
    let records: Vec<RepRecord> = per_rep.into_iter().flatten().collect();
    Ok(BenchResult {
        summaries: summarize(&spec.classifiers, &records),
        records,
        wall_seconds: start.elapsed().as_secs_f64(),
        config: spec,
    })
}

/// Oracle Bayes error on `reps` fresh samples of `n_paths` paths each.
pub fn bayes_risk(
    model: BuiltinModel,
    n_paths: usize,
    steps: usize,
    reps: usize,
    seed: u64,
) -> Result<BenchResult> {
    let spec = ExperimentSpec {
        model,
        n_train: n_paths,
        steps,
        reps,
        test_size: n_paths,
        classifiers: vec![Classifier::Bayes],
        seed,
        ..ExperimentSpec::default()
    };
    spec.check()?;
    let start = Instant::now();
    let records = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let t = Instant::now();
            let spec_model = model.spec();
            let data = simulate_dataset(&spec_model, n_paths, spec.sim_options(), splitmix64(rep_seed(seed, rep)))?;
            let error = bayes_error(&spec_model, &data)?;
            Ok(RepRecord {
                classifier: Classifier::Bayes,
                rep,
                error: Some(error),
                failure: None,
                chosen: None,
                wall_seconds: t.elapsed().as_secs_f64(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BenchResult {
        summaries: summarize(&spec.classifiers, &records),
        records,
        wall_seconds: start.elapsed().as_secs_f64(),
        config: spec,
    })
}

impl BenchResult {
    pub fn summary(&self, classifier: Classifier) -> Option<&ClassifierSummary> {
        self.summaries.iter().find(|s| s.classifier == classifier)
    }

    /// Rows `classifier,model,N,n,rep,error` for every successful repetition,
    /// ordered by classifier then repetition.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| Error::Format(e.to_string());
        w.write_record(["classifier", "model", "N", "n", "rep", "error"])
            .map_err(csv_err)?;
        for s in &self.summaries {
            let mut rows: Vec<&RepRecord> = self
                .records
                .iter()
                .filter(|r| r.classifier == s.classifier && r.error.is_some())
                .collect();
            rows.sort_by_key(|r| r.rep);
            for r in rows {
                w.write_record([
                    s.classifier.name().to_string(),
                    self.config.model.name().to_string(),
                    self.config.n_train.to_string(),
                    self.config.steps.to_string(),
                    r.rep.to_string(),
                    r.error.unwrap().to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(classifiers: Vec<Classifier>) -> ExperimentSpec {
        ExperimentSpec {
            n_train: 60,
            steps: 20,
            reps: 3,
            test_size: 50,
            classifiers,
            seed: 9,
            selection: SelectionConfig { grid: vec![2], ..Default::default() },
            train: TrainConfig { max_iters: 30, ..Default::default() },
            ..Default::default()
        }
    }

    #[test]
    fn splitmix_reference_values() {
        // First outputs of the reference SplitMix64 generator seeded with 0.
        assert_eq!(splitmix64(0), 0xE220_A839_7B1D_CDAF);
        assert_eq!(splitmix64(0x9E37_79B9_7F4A_7C15), 0x6E78_9E6A_A1B9_65F4);
        assert_ne!(rep_seed(1, 0), rep_seed(1, 1));
        assert_ne!(rep_seed(1, 0), rep_seed(2, 0));
    }

    #[test]
    fn mean_std_values() {
        assert_eq!(mean_std(&[]), None);
        assert_eq!(mean_std(&[0.3]), Some((0.3, 0.0)));
        let (m, s) = mean_std(&[0.1, 0.2, 0.3, 0.4]).unwrap();
        assert!((m - 0.25).abs() < 1e-15);
        assert!((s - (0.05f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn bench_runs_all_classifiers() {
        let r = run_bench(&small(Classifier::ALL.to_vec())).unwrap();
        assert_eq!(r.records.len(), 12);
        for s in &r.summaries {
            assert_eq!(s.errors.len(), 3);
            assert!(s.errors.iter().all(|e| (0.0..=1.0).contains(e)));
            let (m, sd) = mean_std(&s.errors).unwrap();
            assert_eq!(s.mean, Some(m));
            assert!(sd >= 0.0);
        }
        let erm = r.records.iter().find(|x| x.classifier == Classifier::Erm).unwrap();
        assert_eq!(erm.chosen, Some((2, 2)));
    }

    #[test]
    fn failures_are_recorded_and_run_continues() {
        // N = 3 with three classes: the plug-in fit fails whenever a class is
        // absent from the training sample, ERM and k-NN still run.
        let spec = ExperimentSpec {
            n_train: 3,
            reps: 6,
            ..small(vec![Classifier::Plugin, Classifier::Knn])
        };
        let r = run_bench(&spec).unwrap();
        let plugin = r.summary(Classifier::Plugin).unwrap();
        assert!(!plugin.failed_reps.is_empty());
        assert_eq!(plugin.errors.len() + plugin.failed_reps.len(), 6);
        assert_eq!(r.summary(Classifier::Knn).unwrap().errors.len(), 6);
        let mut csv = Vec::new();
        r.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(text.lines().count(), 1 + 6 + plugin.errors.len());
    }

    #[test]
    fn csv_and_json_agree() {
        let r = run_bench(&small(vec![Classifier::Knn, Classifier::Bayes])).unwrap();
        let mut csv = Vec::new();
        r.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("classifier,model,N,n,rep,error"));
        let mut knn = Vec::new();
        for line in lines {
            let f: Vec<&str> = line.split(',').collect();
            assert_eq!(&f[1..4], &["model1", "60", "20"]);
            if f[0] == "knn" {
                knn.push(f[5].parse::<f64>().unwrap());
            }
        }
        let back = BenchResult::from_json(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
        let mean = back.summary(Classifier::Knn).unwrap().mean.unwrap();
        assert!((mean_std(&knn).unwrap().0 - mean).abs() <= 1e-12);
    }

    #[test]
    fn bench_is_reproducible() {
        let spec = small(vec![Classifier::Erm, Classifier::Knn]);
        let csv = |r: &BenchResult| {
            let mut buf = Vec::new();
            r.write_csv(&mut buf).unwrap();
            buf
        };
        let a = run_bench(&spec).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| run_bench(&spec).unwrap());
        assert_eq!(csv(&a), csv(&b));
    }

    #[test]
    fn bayes_risk_matches_bench_bayes() {
        let a = bayes_risk(BuiltinModel::Model2, 400, 50, 4, 1).unwrap();
        let spec = ExperimentSpec {
            model: BuiltinModel::Model2,
            steps: 50,
            reps: 4,
            test_size: 400,
            classifiers: vec![Classifier::Bayes],
            seed: 2,
            ..small(vec![])
        };
        let b = run_bench(&spec).unwrap();
        let ma = a.summary(Classifier::Bayes).unwrap().mean.unwrap();
        let mb = b.summary(Classifier::Bayes).unwrap().mean.unwrap();
        // Both are means of 1600 Bernoulli draws with p ≈ 0.37.
        assert!((ma - mb).abs() < 4.0 * (2.0 * 0.25 / 1600.0f64).sqrt(), "{ma} vs {mb}");
    }

    #[test]
    fn spec_validation_and_toml() {
        assert!(run_bench(&ExperimentSpec { reps: 0, ..small(vec![Classifier::Knn]) }).is_err());
        assert!(run_bench(&ExperimentSpec { test_size: 0, ..small(vec![Classifier::Knn]) }).is_err());
        assert!(run_bench(&small(vec![])).is_err());
        let spec: ExperimentSpec = toml::from_str(
            "model = \"model2\"\nN = 100\nreps = 10\nclassifiers = [\"erm\", \"knn\"]\n[selection]\nkappa = 2.0\n",
        )
        .unwrap();
        assert_eq!(spec.model, BuiltinModel::Model2);
        assert_eq!(spec.n_train, 100);
        assert_eq!(spec.steps, 100);
        assert_eq!(spec.selection.kappa, 2.0);
        assert_eq!(spec.selection.grid, vec![2, 4, 8]);
        assert!(toml::from_str::<ExperimentSpec>("bogus = 1").is_err());
        assert_eq!("Plug-in".parse::<Classifier>().unwrap(), Classifier::Plugin);
        assert!("svm".parse::<Classifier>().is_err());
    }
}
