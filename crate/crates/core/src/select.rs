//! Data-driven choice of the spline dimensions `(D1, D2)`.
//!
//! Every pair of the grid `Ξ × Ξ` is fitted, and the pair minimizing
//! `R̂₂(ĥ_{D1,D2}) + κ (D1 + D2 [+ M]) log(N) / N` is kept.

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::erm::{train_erm, FittedScore, TrainConfig};
use crate::error::{param_err, Error, Result};
use crate::sim::LabeledDataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionConfig {
    pub grid: Vec<usize>,
    pub kappa: f64,
    /// Add the spline degree `M` to `D1 + D2` in the penalty.
    pub include_order_in_pen: bool,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            grid: vec![2, 4, 8],
            kappa: 1.0,
            include_order_in_pen: true,
        }
    }
}

impl SelectionConfig {
    fn check(&self) -> Result<()> {
        if self.grid.is_empty() {
            return param_err("dimension grid must not be empty");
        }
        if self.grid.contains(&0) {
            return param_err("dimension grid entries must be positive");
        }
        if !(self.kappa > 0.0) || !self.kappa.is_finite() {
            return param_err(format!("kappa must be finite and > 0, got {}", self.kappa));
        }
        Ok(())
    }

    /// Grid entries in their given order, duplicates removed.
    fn dims(&self) -> Vec<usize> {
        let mut seen = Vec::new();
        for &d in &self.grid {
            if !seen.contains(&d) {
                seen.push(d);
            }
        }
        seen
    }
}

/// `κ (D1 + D2 [+ M]) log(N) / N`.
pub fn penalty(
    drift_dim: usize,
    diffusion_dim: usize,
    n_samples: usize,
    order: usize,
    cfg: &SelectionConfig,
) -> Result<f64> {
    if !(cfg.kappa > 0.0) {
        return param_err(format!("kappa must be > 0, got {}", cfg.kappa));
    }
    if drift_dim == 0 || diffusion_dim == 0 || n_samples == 0 {
        return param_err("penalty arguments must be positive");
    }
    let extra = if cfg.include_order_in_pen { order } else { 0 };
    let n = n_samples as f64;
    Ok(cfg.kappa * (drift_dim + diffusion_dim + extra) as f64 * n.ln() / n)
}

/// One row of the criterion table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRow {
    pub drift_dim: usize,
    pub diffusion_dim: usize,
    pub penalty: f64,
    /// `None` when the fit for this cell failed.
    pub train_risk: Option<f64>,
    pub criterion: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct SelectionResult {
    pub chosen: (usize, usize),
    pub table: Vec<SelectionRow>,
    pub fitted: FittedScore,
    pub n_samples: usize,
}

/// Serializable selection summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub chosen: (usize, usize),
    pub n_samples: usize,
    pub kappa: f64,
    pub include_order_in_pen: bool,
    pub table: Vec<SelectionRow>,
}

impl SelectionResult {
    pub fn report(&self, cfg: &SelectionConfig) -> SelectionReport {
        SelectionReport {
            chosen: self.chosen,
            n_samples: self.n_samples,
            kappa: cfg.kappa,
            include_order_in_pen: cfg.include_order_in_pen,
            table: self.table.clone(),
        }
    }
}

/// Ordering used to pick the winner: criterion, then `D1 + D2`, then `D1`.
fn better(a: &SelectionRow, b: &SelectionRow) -> bool {
    let (ca, cb) = (a.criterion.unwrap(), b.criterion.unwrap());
    if ca != cb {
        return ca < cb;
    }
    let (sa, sb) = (a.drift_dim + a.diffusion_dim, b.drift_dim + b.diffusion_dim);
    if sa != sb {
        return sa < sb;
    }
    a.drift_dim < b.drift_dim
}

/// Fits every `(D1, D2)` in the grid and keeps the penalized-risk minimizer.
///
/// Cells are trained in parallel; the table is always in grid order
/// (`D1` outer, `D2` inner). A failed cell is reported in the table and
/// skipped; selection fails only if every cell fails.
pub fn select(
    data: &LabeledDataset,
    cfg: &SelectionConfig,
    train_cfg: &TrainConfig,
) -> Result<SelectionResult> {
    select_with_weights(data, cfg, train_cfg, None)
}

pub fn select_with_weights(
    data: &LabeledDataset,
    cfg: &SelectionConfig,
    train_cfg: &TrainConfig,
    weight_labels: Option<&[usize]>,
) -> Result<SelectionResult> {
    cfg.check()?;
    let dims = cfg.dims();
    let cells: Vec<(usize, usize)> = dims
        .iter()
        .flat_map(|&d1| dims.iter().map(move |&d2| (d1, d2)))
        .collect();
    let n = data.len();
    let fits: Vec<Result<FittedScore>> = cells
        .par_iter()
        .map(|&(d1, d2)| train_erm(data, &train_cfg.clone().with_dims(d1, d2), weight_labels))
        .collect();

    let mut table = Vec::with_capacity(cells.len());
    let mut fitted: Vec<Option<FittedScore>> = Vec::with_capacity(cells.len());
    for (&(d1, d2), fit) in cells.iter().zip(fits) {
        let pen = penalty(d1, d2, n, train_cfg.order, cfg)?;
        match fit {
            Ok(f) => {
                table.push(SelectionRow {
                    drift_dim: d1,
                    diffusion_dim: d2,
                    penalty: pen,
                    train_risk: Some(f.train_risk),
                    criterion: Some(f.train_risk + pen),
                    error: None,
                });
                fitted.push(Some(f));
            }
            Err(e @ Error::Param(_)) => return Err(e),
            Err(e) => {
                warn!("selection cell (D1={d1}, D2={d2}) failed: {e}");
                table.push(SelectionRow {
                    drift_dim: d1,
                    diffusion_dim: d2,
                    penalty: pen,
                    train_risk: None,
                    criterion: None,
                    error: Some(e.to_string()),
                });
                fitted.push(None);
            }
        }
    }

    let mut best: Option<usize> = None;
    for (i, row) in table.iter().enumerate() {
        if row.criterion.is_none() {
            continue;
        }
        if best.is_none_or(|b| better(row, &table[b])) {
            best = Some(i);
        }
    }
    let Some(best) = best else {
        return Err(Error::Training(format!(
            "all {} selection cells failed",
            table.len()
        )));
    };
    let chosen = (table[best].drift_dim, table[best].diffusion_dim);
    let fitted = fitted[best].take().expect("winning cell has a fit");
    Ok(SelectionResult {
        chosen,
        table,
        fitted,
        n_samples: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{simulate_dataset, BuiltinModel, SimOptions};
    use approx::assert_abs_diff_eq;

    fn quick() -> TrainConfig {
        TrainConfig {
            max_iters: 40,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn penalty_examples() {
        let with_m = SelectionConfig::default();
        assert_abs_diff_eq!(
            penalty(2, 2, 1000, 3, &with_m).unwrap(),
            7.0 * 1000f64.ln() / 1000.0,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(penalty(2, 2, 1000, 3, &with_m).unwrap(), 0.04836, epsilon = 1e-5);
        let without = SelectionConfig {
            include_order_in_pen: false,
            ..Default::default()
        };
        assert_abs_diff_eq!(penalty(4, 4, 100, 3, &without).unwrap(), 0.36841, epsilon = 1e-5);
        let zero = SelectionConfig {
            kappa: 0.0,
            ..Default::default()
        };
        assert!(matches!(penalty(2, 2, 100, 3, &zero), Err(Error::Param(_))));
    }

    #[test]
    fn penalty_strictly_increasing() {
        let cfg = SelectionConfig::default();
        let mut last = 0.0;
        for s in 2..30 {
            let p = penalty(1, s - 1, 500, 3, &cfg).unwrap();
            assert!(p > last);
            last = p;
        }
    }

    #[test]
    fn singleton_grid() {
        let data = simulate_dataset(&BuiltinModel::Model1.spec(), 60, SimOptions::new(20), 1).unwrap();
        let cfg = SelectionConfig {
            grid: vec![4],
            ..Default::default()
        };
        let r = select(&data, &cfg, &quick()).unwrap();
        assert_eq!(r.chosen, (4, 4));
        assert_eq!(r.table.len(), 1);
    }

    #[test]
    fn flat_risk_picks_smallest_pair() {
        // One class only: every cell reaches zero risk.
        let model = BuiltinModel::Model1
            .spec()
            .with_class_probs(vec![1.0, 0.0, 0.0])
            .unwrap();
        let data = simulate_dataset(&model, 40, SimOptions::new(20), 2).unwrap();
        let cfg = SelectionConfig {
            grid: vec![8, 2, 4],
            ..Default::default()
        };
        let r = select(&data, &cfg, &quick()).unwrap();
        assert!(r.table.iter().all(|row| row.train_risk == Some(0.0)));
        assert_eq!(r.chosen, (2, 2));
    }

    #[test]
    fn penalty_dominates_small_risk_gains() {
        let data = simulate_dataset(&BuiltinModel::Model1.spec(), 80, SimOptions::new(30), 3).unwrap();
        let cfg = SelectionConfig {
            grid: vec![2, 8],
            kappa: 20.0,
            include_order_in_pen: true,
        };
        let r = select(&data, &cfg, &quick()).unwrap();
        // Independent criterion table oracle.
        let mut best = None;
        for row in &r.table {
            let crit = row.train_risk.unwrap() + penalty(row.drift_dim, row.diffusion_dim, 80, 3, &cfg).unwrap();
            assert_eq!(Some(crit), row.criterion);
            if best.is_none_or(|(c, _)| crit < c) {
                best = Some((crit, (row.drift_dim, row.diffusion_dim)));
            }
        }
        let small = &r.table[0];
        let large = &r.table[3];
        assert!(small.train_risk.unwrap() - large.train_risk.unwrap() < large.penalty - small.penalty);
        assert_eq!(r.chosen, (2, 2));
        assert_eq!(best.unwrap().1, r.chosen);
    }

    #[test]
    fn chosen_attains_table_minimum() {
        let data = simulate_dataset(&BuiltinModel::Model2.spec(), 100, SimOptions::new(30), 4).unwrap();
        let r = select(&data, &SelectionConfig::default(), &quick()).unwrap();
        assert_eq!(r.table.len(), 9);
        let chosen = r
            .table
            .iter()
            .find(|row| (row.drift_dim, row.diffusion_dim) == r.chosen)
            .unwrap();
        let min = r
            .table
            .iter()
            .filter_map(|row| row.criterion)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(chosen.criterion.unwrap(), min);
        assert_eq!(r.fitted.params.drift_basis().dim(), r.chosen.0);
        assert_eq!(r.fitted.params.diffusion_basis().dim(), r.chosen.1);
        let again = select(&data, &SelectionConfig::default(), &quick()).unwrap();
        assert_eq!(again.chosen, r.chosen);
        assert_eq!(again.table, r.table);
        assert_eq!(again.fitted, r.fitted);
    }

    #[test]
    fn invalid_configs() {
        let data = simulate_dataset(&BuiltinModel::Model1.spec(), 20, SimOptions::new(10), 0).unwrap();
        for cfg in [
            SelectionConfig { grid: vec![], ..Default::default() },
            SelectionConfig { grid: vec![0, 2], ..Default::default() },
            SelectionConfig { kappa: -1.0, ..Default::default() },
        ] {
            assert!(matches!(select(&data, &cfg, &quick()), Err(Error::Param(_))));
        }
    }
}
